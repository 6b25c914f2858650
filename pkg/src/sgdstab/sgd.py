"""SGD with without-replacement sampling, plus coupled replace-one runs.

The sampler draws a uniformly random permutation of the training indices
and walks its first T entries, so a run touches each example at most once
while T <= m.  A paired run advances two weight vectors under the one
permutation: the run on S and the run on S with example i replaced.  Until
the replaced index is drawn both loops execute identical float operations,
so the recorded distances are exactly zero up to that step.

Randomness comes from numpy's PCG64 via ``default_rng(seed)``; replicate
streams are derived with ``SeedSequence.spawn`` so independent experiments
never share a stream.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .models import Dataset, Example, LossModel, SmoothnessConstants

Array = np.ndarray


class DivergenceError(RuntimeError):
    """An SGD iterate went non-finite."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite iterate after step {step}")


class MultiEpochWarning(UserWarning):
    """T exceeds m: the run re-permutes and leaves the theorems' regime."""


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes alpha_t for t = 1..T.

    kind "inv_sqrt" gives c/sqrt(t), "inv_t" gives c/t, "constant" gives c.
    """

    kind: str
    c: float
    T: int

    def __post_init__(self):
        if self.kind not in ("inv_sqrt", "inv_t", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"c must be positive and finite, got {self.c}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")

    def alpha(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ValueError(f"step index {t} outside [1, {self.T}]")
        if self.kind == "inv_sqrt":
            return self.c / math.sqrt(t)
        if self.kind == "inv_t":
            return self.c / t
        return self.c

    def alphas(self) -> Array:
        t = np.arange(1, self.T + 1, dtype=float)
        if self.kind == "inv_sqrt":
            return self.c / np.sqrt(t)
        if self.kind == "inv_t":
            return self.c / t
        return np.full(self.T, self.c)

    def sum_alpha(self, upto: Optional[int] = None) -> float:
        upto = self.T if upto is None else upto
        return float(self.alphas()[:upto].sum())

    def sum_alpha_sq(self, upto: Optional[int] = None) -> float:
        upto = self.T if upto is None else upto
        a = self.alphas()[:upto]
        return float((a * a).sum())


def step_size(schedule: StepSchedule, t: int) -> float:
    return schedule.alpha(t)


@dataclass(frozen=True)
class ScheduleValidity:
    """Step-size conditions of the two main theorems, checked on c alone.

    The flags test the magnitude conditions (would a c/sqrt(t), resp. c/t,
    schedule with this c satisfy the respective hypothesis); whether the
    schedule actually has the matching shape is echoed separately so a
    report can flag a mismatched kind without conflating the two.
    """

    convex_ok: bool
    nonconvex_ok: bool
    convex_threshold: float
    nonconvex_threshold: float
    kind_matches_convex: bool
    kind_matches_nonconvex: bool


def validate_schedule(schedule: StepSchedule, constants: SmoothnessConstants) -> ScheduleValidity:
    """Flags, never a refusal: runs outside the hypotheses are allowed."""
    if constants.beta is None or not math.isfinite(constants.beta) or constants.beta <= 0:
        raise ValueError("validate_schedule needs a finite positive beta")
    beta = constants.beta
    convex_threshold = 1.0 / beta
    lnT = math.log(schedule.T)
    if lnT == 0.0:
        nonconvex_threshold = convex_threshold
    else:
        nonconvex_threshold = min(convex_threshold, 1.0 / (4.0 * (2.0 * beta * lnT) ** 2))
    return ScheduleValidity(
        convex_ok=schedule.c <= convex_threshold,
        nonconvex_ok=schedule.c <= nonconvex_threshold,
        convex_threshold=convex_threshold,
        nonconvex_threshold=nonconvex_threshold,
        kind_matches_convex=schedule.kind == "inv_sqrt",
        kind_matches_nonconvex=schedule.kind == "inv_t",
    )


@dataclass(frozen=True)
class SgdConfig:
    schedule: StepSchedule
    seed: int
    record_iterates: bool = True


def sample_permutation(m: int, seed: int) -> Array:
    """Uniform random permutation of 0..m-1, deterministic in the seed."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return np.random.default_rng(seed).permutation(m)


def _index_stream(m: int, T: int, seed: int) -> Array:
    """First T entries of the permutation; re-permutes beyond one epoch."""
    rng = np.random.default_rng(seed)
    chunks = [rng.permutation(m)]
    while sum(len(c) for c in chunks) < T:
        chunks.append(rng.permutation(m))
    return np.concatenate(chunks)[:T]


@dataclass
class Trajectory:
    """Record of one SGD run: iterates (or endpoints), per-step gradient
    norms, the index stream, and the schedule that produced it."""

    iterates: List[Array]
    step_grad_norms: Array
    permutation: Array
    schedule: StepSchedule
    seed: int
    record_iterates: bool
    within_theory: bool

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def w1(self) -> Array:
        return self.iterates[0]

    @property
    def final(self) -> Array:
        return self.iterates[-1]

    def iterate(self, t: int) -> Array:
        """w_t for t = 1..T+1 (paper indexing); needs recorded iterates."""
        if not self.record_iterates:
            raise ValueError("iterates were not recorded for this trajectory")
        if not 1 <= t <= self.T + 1:
            raise ValueError(f"t={t} outside [1, {self.T + 1}]")
        return self.iterates[t - 1]


@dataclass
class PairedRunRecord:
    """Coupled runs on S and S^(i) under one permutation and start point.

    ``delta_series[k]`` is ||w_{S,t} - w_{S^(i),t}|| for t = k + 1, so the
    array covers t = 1..T+1.  ``tau`` is the 1-based first step whose drawn
    index equals the replaced one, or None when it is never drawn.
    """

    delta_series: Array
    tau: Optional[int]
    replaced_index: int
    final_loss_gap_on_probe: float
    traj_s: Trajectory
    traj_si: Trajectory
    dataset: Dataset
    replacement: Example
    probe: Example

    @property
    def replaced_dataset(self) -> Dataset:
        return self.dataset.replace(self.replaced_index, self.replacement)


def _check_start(model: LossModel, dataset: Dataset, w1: Array) -> Array:
    w1 = np.asarray(w1, dtype=float)
    if w1.shape != (model.param_dim,):
        raise ValueError(f"w1 has shape {w1.shape}, expected ({model.param_dim},)")
    if not np.all(np.isfinite(w1)):
        raise ValueError("w1 must be finite")
    return w1


def _theory_check(schedule: StepSchedule, m: int) -> bool:
    if schedule.T > m:
        warnings.warn(
            f"T={schedule.T} exceeds m={m}: multi-epoch run, outside the theorems' hypotheses",
            MultiEpochWarning,
            stacklevel=3,
        )
        return False
    return True


def run_sgd(model: LossModel, dataset: Dataset, config: SgdConfig, w1: Array) -> Trajectory:
    """w_{t+1} = w_t - alpha_t grad f(w_t, z_{j_t}), bitwise deterministic."""
    w = _check_start(model, dataset, w1)
    schedule = config.schedule
    within = _theory_check(schedule, dataset.m)
    stream = _index_stream(dataset.m, schedule.T, config.seed)
    grad_norms = np.empty(schedule.T)
    iterates = [w.copy()]
    for t in range(1, schedule.T + 1):
        j = int(stream[t - 1])
        g = model.grad(w, dataset.example(j))
        grad_norms[t - 1] = np.linalg.norm(g)
        w = w - schedule.alpha(t) * g
        if not np.all(np.isfinite(w)):
            raise DivergenceError(t)
        if config.record_iterates:
            iterates.append(w.copy())
    if not config.record_iterates:
        iterates.append(w.copy())
    return Trajectory(
        iterates=iterates,
        step_grad_norms=grad_norms,
        permutation=stream,
        schedule=schedule,
        seed=config.seed,
        record_iterates=config.record_iterates,
        within_theory=within,
    )


def paired_run(
    model: LossModel,
    dataset: Dataset,
    i: int,
    z_replacement: Example,
    config: SgdConfig,
    w1: Array,
    probe: Optional[Example] = None,
) -> PairedRunRecord:
    """Run SGD on S and on S with example i replaced, sharing everything.

    The probe defaults to the replacement itself, matching the stability
    definition where the swapped-in example is also the one the loss gap is
    measured at; passing an independent probe is a diagnostic only.
    """
    if not 0 <= i < dataset.m:
        raise ValueError(f"replace index {i} outside [0, {dataset.m})")
    w = _check_start(model, dataset, w1)
    probe = probe if probe is not None else z_replacement
    replaced = dataset.replace(i, z_replacement)
    schedule = config.schedule
    within = _theory_check(schedule, dataset.m)
    stream = _index_stream(dataset.m, schedule.T, config.seed)

    T = schedule.T
    delta = np.empty(T + 1)
    delta[0] = 0.0
    norms_s = np.empty(T)
    norms_si = np.empty(T)
    iters_s = [w.copy()]
    iters_si = [w.copy()]
    w_s = w.copy()
    w_si = w.copy()
    tau = None
    for t in range(1, T + 1):
        j = int(stream[t - 1])
        if tau is None and j == i:
            tau = t
        alpha = schedule.alpha(t)
        g_s = model.grad(w_s, dataset.example(j))
        g_si = model.grad(w_si, replaced.example(j))
        norms_s[t - 1] = np.linalg.norm(g_s)
        norms_si[t - 1] = np.linalg.norm(g_si)
        w_s = w_s - alpha * g_s
        w_si = w_si - alpha * g_si
        if not np.all(np.isfinite(w_s)) or not np.all(np.isfinite(w_si)):
            raise DivergenceError(t)
        delta[t] = np.linalg.norm(w_s - w_si)
        if config.record_iterates:
            iters_s.append(w_s.copy())
            iters_si.append(w_si.copy())
    if not config.record_iterates:
        iters_s.append(w_s.copy())
        iters_si.append(w_si.copy())

    gap = model.loss(w_s, probe) - model.loss(w_si, probe)
    mk = lambda iters, norms: Trajectory(
        iterates=iters,
        step_grad_norms=norms,
        permutation=stream,
        schedule=schedule,
        seed=config.seed,
        record_iterates=config.record_iterates,
        within_theory=within,
    )
    return PairedRunRecord(
        delta_series=delta,
        tau=tau,
        replaced_index=i,
        final_loss_gap_on_probe=float(gap),
        traj_s=mk(iters_s, norms_s),
        traj_si=mk(iters_si, norms_si),
        dataset=dataset,
        replacement=z_replacement,
        probe=probe,
    )


def gradient_update_expansion(model: LossModel, w: Array, v: Array, z: Example, alpha: float) -> float:
    """Measured expansion ratio ||G(w) - G(v)|| / ||w - v|| of one update."""
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    dist = float(np.linalg.norm(w - v))
    if dist == 0.0:
        return 0.0
    gw = model.grad(w, z)
    gv = model.grad(v, z)
    return float(np.linalg.norm((w - alpha * gw) - (v - alpha * gv)) / dist)


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Per-step rows ``t,alpha_t,j_t,grad_norm,delta_t`` (delta left empty)."""
    _write_step_csv(path, traj, delta=None)


def paired_record_to_csv(record: PairedRunRecord, path) -> None:
    """Per-step rows with delta_t = ||w_{S,t} - w_{S^(i),t}||; a trailing
    row carries the final distance delta_{T+1}."""
    _write_step_csv(path, record.traj_s, delta=record.delta_series)


def _write_step_csv(path, traj: Trajectory, delta: Optional[Array]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "alpha_t", "j_t", "grad_norm", "delta_t"])
        for t in range(1, traj.T + 1):
            row = [
                t,
                repr(traj.schedule.alpha(t)),
                int(traj.permutation[t - 1]),
                repr(float(traj.step_grad_norms[t - 1])),
                "" if delta is None else repr(float(delta[t - 1])),
            ]
            writer.writerow(row)
        if delta is not None:
            writer.writerow([traj.T + 1, "", "", "", repr(float(delta[traj.T]))])


def read_step_csv(path):
    """Parse rows written by the step-CSV writers; returns a list of dicts."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            rows.append(
                {
                    "t": int(raw["t"]),
                    "alpha_t": float(raw["alpha_t"]) if raw["alpha_t"] else None,
                    "j_t": int(raw["j_t"]) if raw["j_t"] else None,
                    "grad_norm": float(raw["grad_norm"]) if raw["grad_norm"] else None,
                    "delta_t": float(raw["delta_t"]) if raw["delta_t"] else None,
                }
            )
    return rows
