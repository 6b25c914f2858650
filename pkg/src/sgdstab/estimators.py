"""Measured quantities feeding the stability bounds.

Risk estimates, the stochastic-gradient variance proxy, gradient path sums
and their closed-form ceiling, the per-step expansiveness coefficients,
trajectory-tracked constants (max gradient norm, max Hessian norm, Hessian
drift rate), empirical replace-one stability, and the train/validation
generalization gap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .curvature import MeanSpectralNorm, PowerIterConfig, example_hessian_norm
from .models import Dataset, Example, LossModel
from .sgd import (
    DivergenceError,
    PairedRunRecord,
    SgdConfig,
    StepSchedule,
    Trajectory,
    paired_run,
)

Array = np.ndarray


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    n: int
    stderr: float

    def __post_init__(self):
        if self.mean < 0 or self.stderr < 0:
            raise ValueError("risk mean and stderr must be >= 0")


def _risk_of(values: Array) -> RiskEstimate:
    n = len(values)
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return RiskEstimate(mean=float(values.mean()), n=n, stderr=stderr)


def empirical_risk(model: LossModel, w: Array, dataset: Dataset) -> RiskEstimate:
    """Training-average loss at w."""
    return _risk_of(model.batch_losses(w, dataset))


def risk_estimate(model: LossModel, w: Array, heldout: Dataset) -> RiskEstimate:
    """Monte-Carlo proxy for the population risk at w, on held-out data."""
    return _risk_of(model.batch_losses(w, heldout))


@dataclass(frozen=True)
class VarianceEstimate:
    sigma_sq: float
    evaluation_points: tuple

    def __post_init__(self):
        if self.sigma_sq < 0:
            raise ValueError("sigma_sq must be >= 0")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma_sq)


def sigma_estimate(
    model: LossModel,
    iterates: Sequence[Array],
    sample: Dataset,
    indices: Optional[Sequence[int]] = None,
) -> VarianceEstimate:
    """Gradient-noise proxy: max over the supplied iterates of the mean
    squared deviation of per-example gradients from their sample mean.

    The assumption being instantiated is uniform in the step index, hence
    the max; the evaluation points used are echoed for provenance.
    """
    if len(iterates) == 0:
        raise ValueError("need at least one iterate")
    indices = tuple(indices) if indices is not None else tuple(range(len(iterates)))
    worst = 0.0
    for w in iterates:
        grads = model.batch_grads(np.asarray(w, dtype=float), sample)
        dev = grads - grads.mean(axis=0, keepdims=True)
        worst = max(worst, float((dev * dev).sum(axis=1).mean()))
    return VarianceEstimate(sigma_sq=worst, evaluation_points=indices)


def sigma_evaluation_iterates(traj: Trajectory, n_points: int = 10):
    """Default evaluation set: w1 plus every ceil(T/n_points)-th iterate."""
    if not traj.record_iterates:
        raise ValueError("trajectory has no recorded iterates")
    stride = max(1, math.ceil(traj.T / n_points))
    idx = sorted(set([0]) | set(range(stride, traj.T + 1, stride)))
    return [traj.iterates[k] for k in idx], idx


def gradient_path_sum(traj: Trajectory) -> float:
    """sum_t alpha_t ||grad f(w_t, z_{j_t})|| along one recorded run."""
    return float((traj.schedule.alphas() * traj.step_grad_norms).sum())


def path_bound(R1: float, Rstar: float, sigma: float, beta: float, schedule: StepSchedule) -> float:
    """Closed-form ceiling on the expected gradient path sum.

    2 sqrt( (sum alpha) (R1 - R* + (beta sigma^2 / 2) sum alpha^2) )
    + sigma sum alpha, with both partial sums taken exactly.
    """
    if R1 < Rstar:
        raise ValueError(f"R1={R1} must be >= Rstar={Rstar}")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    s1 = schedule.sum_alpha()
    s2 = schedule.sum_alpha_sq()
    return 2.0 * math.sqrt(s1 * (R1 - Rstar + 0.5 * beta * sigma**2 * s2)) + sigma * s1


@dataclass(frozen=True)
class XiSeries:
    """Per-step expansiveness coefficients of a paired run.

    xi[t-1] = ||H(w1, z_t)||_2 + (rho/2) ||sum_{k<t} alpha_k grad_k(S)||
            + (rho/2) ||sum_{k<t} alpha_k grad_k(S^(i))||, and
    psi = min(xi, beta) is the clipped coefficient the recursion uses.
    """

    xi: Array
    psi: Optional[Array]


def xi_expansiveness(
    record: PairedRunRecord,
    model: LossModel,
    w1: Array,
    rho: float,
    beta: Optional[float] = None,
    cfg: Optional[PowerIterConfig] = None,
) -> XiSeries:
    traj_s, traj_si = record.traj_s, record.traj_si
    if not (traj_s.record_iterates and traj_si.record_iterates):
        raise ValueError("xi_expansiveness needs both trajectories with recorded iterates")
    cfg = cfg or PowerIterConfig()
    S = record.dataset
    Si = record.replaced_dataset
    T = traj_s.T
    w1 = np.asarray(w1, dtype=float)

    curvature = np.empty(T)
    cache = {}
    for t in range(1, T + 1):
        j = int(traj_s.permutation[t - 1])
        if j not in cache:
            cache[j] = example_hessian_norm(
                model, w1, S.example(j),
                PowerIterConfig(tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed + j),
            ).value
        curvature[t - 1] = cache[j]

    xi = np.empty(T)
    sum_s = np.zeros(model.param_dim)
    sum_si = np.zeros(model.param_dim)
    for t in range(1, T + 1):
        xi[t - 1] = curvature[t - 1] + 0.5 * rho * (
            np.linalg.norm(sum_s) + np.linalg.norm(sum_si)
        )
        j = int(traj_s.permutation[t - 1])
        alpha = traj_s.schedule.alpha(t)
        sum_s = sum_s + alpha * model.grad(traj_s.iterate(t), S.example(j))
        sum_si = sum_si + alpha * model.grad(traj_si.iterate(t), Si.example(j))
    psi = np.minimum(xi, beta) if beta is not None else None
    return XiSeries(xi=xi, psi=psi)


@dataclass(frozen=True)
class EmpiricalConstants:
    L_hat: float
    beta_hat: float
    rho_hat: float
    rho_defined: bool  # False when no iterate pair moved, rho reported as 0


@dataclass(frozen=True)
class EmpiricalConstantsConfig:
    """Strides keep the (iterate x example) sweep desk-sized."""

    iterate_stride: int = 1
    sample_stride: int = 1
    rho_probes: int = 5
    seed: int = 0
    power: PowerIterConfig = field(default_factory=PowerIterConfig)


def empirical_constants(
    trajectories: Sequence[Trajectory],
    model: LossModel,
    sample: Dataset,
    cfg: Optional[EmpiricalConstantsConfig] = None,
) -> EmpiricalConstants:
    """Track maximal gradient and Hessian norms over visited iterates.

    L_hat and beta_hat are maxima of per-example gradient norms and Hessian
    spectral norms over (iterate, example) pairs.  rho_hat estimates the
    Hessian drift rate along each trajectory: for consecutive iterates the
    spectral norm of the Hessian difference is lower-bounded by max Rayleigh
    quotients over a few random unit probes (two HVPs per probe), divided by
    the step length.  Stationary pairs are skipped; with no moving pair at
    all, rho_hat is reported as 0 with ``rho_defined=False``.
    """
    cfg = cfg or EmpiricalConstantsConfig()
    if not trajectories:
        raise ValueError("need at least one trajectory")
    for traj in trajectories:
        if not traj.record_iterates:
            raise ValueError("empirical_constants needs recorded iterates")

    sub = sample.subset(range(0, sample.m, cfg.sample_stride))
    rng = np.random.default_rng(cfg.seed)
    probes = rng.standard_normal((cfg.rho_probes, model.param_dim))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)

    L_hat = 0.0
    beta_hat = 0.0
    rho_hat = 0.0
    rho_defined = False
    pw_seeds = iter(np.random.SeedSequence(cfg.seed).generate_state(10**6).tolist())

    for traj in trajectories:
        picked = list(range(0, len(traj.iterates), cfg.iterate_stride))
        if picked[-1] != len(traj.iterates) - 1:
            picked.append(len(traj.iterates) - 1)
        for k in picked:
            w = traj.iterates[k]
            norms = np.linalg.norm(model.batch_grads(w, sub), axis=1)
            L_hat = max(L_hat, float(norms.max()))
            for z in sub.examples():
                est = example_hessian_norm(
                    model, w, z,
                    PowerIterConfig(tol=cfg.power.tol, max_iter=cfg.power.max_iter,
                                    seed=next(pw_seeds)),
                )
                beta_hat = max(beta_hat, est.value)
        for a, b in zip(picked[:-1], picked[1:]):
            w_a, w_b = traj.iterates[a], traj.iterates[b]
            step = float(np.linalg.norm(w_b - w_a))
            if step <= 1e-14:
                continue
            rho_defined = True
            for z in sub.examples():
                for u in probes:
                    dH = abs(float(u @ (model.hvp(w_b, z, u) - model.hvp(w_a, z, u))))
                    rho_hat = max(rho_hat, dH / step)
    return EmpiricalConstants(L_hat=L_hat, beta_hat=beta_hat, rho_hat=rho_hat,
                              rho_defined=rho_defined)


@dataclass
class StabilitySample:
    """Per-replicate loss gaps f(w_S, z) - f(w_S^(i), z) with descriptors."""

    gaps: Array
    seeds: Array
    indices: Array
    taus: Array  # -1 encodes "never encountered"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replicate", "seed", "i", "tau", "gap"])
            for k in range(len(self.gaps)):
                tau = int(self.taus[k])
                writer.writerow(
                    [k, int(self.seeds[k]), int(self.indices[k]),
                     tau if tau >= 0 else "never", repr(float(self.gaps[k]))]
                )


@dataclass
class StabilityResult:
    sample: StabilitySample
    mean: float
    stderr: float
    ci95: tuple
    per_index_means: dict
    sup_of_means: float
    sup_kind: str  # "sweep-sup", "sampled-sup", or "pinned"
    i_policy: str
    n_requested: int
    n_diverged: int
    final_weights: List[Array] = field(default_factory=list)
    datasets: List[Dataset] = field(default_factory=list)
    records: List[PairedRunRecord] = field(default_factory=list)


def empirical_stability(
    model: LossModel,
    draw_dataset: Callable[[np.random.Generator], Dataset],
    draw_example: Callable[[np.random.Generator], Example],
    config: SgdConfig,
    w1: Array,
    n_replicates: int,
    i_policy="sampled",
    master_seed: int = 0,
    sampled_sup_size: int = 10,
    keep_records: bool = False,
) -> StabilityResult:
    """Measure replace-one stability over fresh (S, z, permutation) draws.

    Each replicate draws a training set and a replacement example, runs the
    coupled pair, and records the loss gap at the probe (the replacement).
    The replaced index follows ``i_policy``: "sweep" cycles through all
    indices, "sampled" cycles through ``sampled_sup_size`` uniformly chosen
    ones (the sup is then over a sampled subset and flagged as such), and an
    integer pins the index.  Diverged replicates are excluded and counted.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    ss = np.random.SeedSequence(master_seed)
    policy_rng = np.random.default_rng(ss.spawn(1)[0])
    rep_seeds = ss.spawn(n_replicates)

    gaps, seeds, indices, taus = [], [], [], []
    finals, datasets, records = [], [], []
    n_diverged = 0
    m_seen = None
    pinned = isinstance(i_policy, (int, np.integer))
    sampled_pool = None

    for k in range(n_replicates):
        data_ss, repl_ss, perm_ss = rep_seeds[k].spawn(3)
        S = draw_dataset(np.random.default_rng(data_ss))
        if m_seen is None:
            m_seen = S.m
            if i_policy == "sweep":
                sampled_pool = list(range(m_seen))
            elif i_policy == "sampled":
                size = min(sampled_sup_size, m_seen)
                sampled_pool = sorted(policy_rng.choice(m_seen, size=size, replace=False).tolist())
        elif S.m != m_seen:
            raise ValueError("draw_dataset must produce a fixed m across replicates")
        z = draw_example(np.random.default_rng(repl_ss))
        if pinned:
            i = int(i_policy)
        else:
            i = sampled_pool[k % len(sampled_pool)]
        run_seed = int(perm_ss.generate_state(1)[0])
        try:
            rec = paired_run(model, S, i, z, SgdConfig(config.schedule, run_seed,
                                                       config.record_iterates), w1)
        except DivergenceError:
            n_diverged += 1
            continue
        gaps.append(rec.final_loss_gap_on_probe)
        seeds.append(run_seed)
        indices.append(i)
        taus.append(rec.tau if rec.tau is not None else -1)
        finals.append(rec.traj_s.final)
        datasets.append(S)
        if keep_records:
            records.append(rec)

    if not gaps:
        raise DivergenceError(0, "every replicate diverged")
    gaps_arr = np.array(gaps)
    idx_arr = np.array(indices)
    mean = float(gaps_arr.mean())
    stderr = float(gaps_arr.std(ddof=1) / math.sqrt(len(gaps_arr))) if len(gaps_arr) > 1 else 0.0
    per_index = {int(i): float(gaps_arr[idx_arr == i].mean()) for i in np.unique(idx_arr)}
    sup = max(per_index.values())
    sup_kind = "pinned" if pinned else ("sweep-sup" if i_policy == "sweep" else "sampled-sup")
    return StabilityResult(
        sample=StabilitySample(gaps=gaps_arr, seeds=np.array(seeds), indices=idx_arr,
                               taus=np.array(taus)),
        mean=mean,
        stderr=stderr,
        ci95=(mean - 1.96 * stderr, mean + 1.96 * stderr),
        per_index_means=per_index,
        sup_of_means=float(sup),
        sup_kind=sup_kind,
        i_policy=str(i_policy),
        n_requested=n_replicates,
        n_diverged=n_diverged,
        final_weights=finals,
        datasets=datasets,
        records=records,
    )


@dataclass(frozen=True)
class GapEstimate:
    signed: float
    absolute: float
    train: RiskEstimate
    heldout: RiskEstimate


def generalization_gap(model: LossModel, w: Array, train: Dataset, heldout: Dataset) -> GapEstimate:
    """Held-out minus training average loss at w, signed and absolute."""
    tr = empirical_risk(model, w, train)
    ho = risk_estimate(model, w, heldout)
    signed = ho.mean - tr.mean
    return GapEstimate(signed=signed, absolute=abs(signed), train=tr, heldout=ho)
