"""Closed-form stability and generalization bounds, with validity flags.

Every calculator returns a :class:`BoundReport` carrying the value, the
named intermediate terms, and a list of (assumption, pass/fail) flags.  A
failed assumption never suppresses the value; it is only flagged.

Conventions baked in here:

* Explicit proof constants everywhere, never bare asymptotics; logarithms
  are natural and the "1 + ln T" factors appear verbatim.
* The non-convex exponent comes in two variants: the theorem statement
  uses q = c*gamma while the proof's truncation tuning uses q = 2*c*gamma.
  Both are computed; "theorem" is the default.
* The convex theorem's statement drops the Lipschitz factor present in the
  decomposition step; ``include_L_factor=True`` (default) keeps it, which
  is the conservative reading.
* When a loss ceiling B is declared, the non-convex calculators evaluate
  hypotheses in rescaled units (f/B with L/B, beta/B, rho/B, sigma/B,
  risks/B and step constant c*B) and convert the bound back; with B
  unknown the f-in-[0,1] flag simply fails.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence, Tuple

Number = float


@dataclass(frozen=True)
class StabilityInputs:
    """Measured quantities a bound consumes.  Unknown entries stay None."""

    m: int
    T: int
    c: float
    L: Optional[float] = None
    beta: Optional[float] = None
    rho: Optional[float] = None
    sigma: Optional[float] = None
    R1: Optional[float] = None
    Rstar: float = 0.0
    hbar: Optional[float] = None
    r: Optional[float] = None
    Remp: Optional[float] = None
    B: Optional[float] = None

    def __post_init__(self):
        if self.m < 1 or self.T < 1:
            raise ValueError("m and T must be >= 1")
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError("c must be positive and finite")
        for name in ("L", "beta", "rho", "sigma", "R1", "Rstar", "hbar", "r", "Remp", "B"):
            v = getattr(self, name)
            if v is not None and (not math.isfinite(v) or v < 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.R1 is not None and self.R1 < self.Rstar:
            raise ValueError(f"R1={self.R1} must be >= Rstar={self.Rstar}")

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValueError(f"bound needs inputs {missing}, but they are None")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "StabilityInputs":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown StabilityInputs fields: {sorted(unknown)}")
        if "m" not in raw or "T" not in raw or "c" not in raw:
            raise ValueError("StabilityInputs requires at least m, T, and c")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "StabilityInputs":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class BoundReport:
    value: float
    variant: str
    terms: dict
    validity: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("bound value must be >= 0")

    def flag(self, assumption: str, passed: bool) -> None:
        self.validity.append({"assumption": assumption, "passed": bool(passed)})

    @property
    def all_valid(self) -> bool:
        return all(f["passed"] for f in self.validity)

    def to_dict(self) -> dict:
        return {"value": self.value, "variant": self.variant,
                "terms": self.terms, "validity": self.validity}


@dataclass(frozen=True)
class GammaBreakdown:
    value: float
    curvature_term: float
    risk_drift_term: float
    noise_drift_term: float
    clipped_at_beta: bool


def gamma(inputs: StabilityInputs) -> GammaBreakdown:
    """Data-dependent curvature coefficient at the initialization point.

    min{ beta, E||H(w1, z)||_2 + 2 rho sqrt((R1 - R*) c (1 + ln T))
         + rho sigma (sqrt(2 c beta) + c (1 + ln T)) }.
    """
    inputs.require("beta", "rho", "sigma", "R1", "hbar")
    one_ln_T = 1.0 + math.log(inputs.T)
    risk_drift = 2.0 * inputs.rho * math.sqrt((inputs.R1 - inputs.Rstar) * inputs.c * one_ln_T)
    noise_drift = inputs.rho * inputs.sigma * (
        math.sqrt(2.0 * inputs.c * inputs.beta) + inputs.c * one_ln_T
    )
    raw = inputs.hbar + risk_drift + noise_drift
    value = min(inputs.beta, raw)
    return GammaBreakdown(
        value=value,
        curvature_term=inputs.hbar,
        risk_drift_term=risk_drift,
        noise_drift_term=noise_drift,
        clipped_at_beta=value == inputs.beta and raw >= inputs.beta,
    )


def _rescaled_for_unit_loss(inputs: StabilityInputs) -> Tuple[StabilityInputs, float, bool]:
    """Divide the loss by its ceiling B so the f-in-[0,1] hypothesis holds.

    Gradients scale by 1/B, so running SGD on f with step constant c is
    running on f/B with step constant c*B.  Returns (rescaled inputs, B,
    known-flag); with B unknown the inputs pass through untouched.
    """
    if inputs.B is None:
        return inputs, 1.0, False
    B = inputs.B
    if B <= 0:
        raise ValueError("declared loss ceiling B must be > 0")
    if B == 1.0:
        return inputs, 1.0, True
    div = lambda v: None if v is None else v / B
    scaled = StabilityInputs(
        m=inputs.m, T=inputs.T, c=inputs.c * B,
        L=div(inputs.L), beta=div(inputs.beta), rho=div(inputs.rho),
        sigma=div(inputs.sigma), R1=div(inputs.R1), Rstar=inputs.Rstar / B,
        hbar=div(inputs.hbar), r=div(inputs.r), Remp=div(inputs.Remp), B=1.0,
    )
    return scaled, B, True


def _nonconvex_value(m: int, T: int, c: float, L: float, q: float, r: float) -> float:
    """(1 + 1/q)/m * (2 c L^2)^(1/(1+q)) * (r T)^(q/(1+q))."""
    if r == 0.0:
        return 0.0
    return (1.0 + 1.0 / q) / m * (2.0 * c * L**2) ** (1.0 / (1.0 + q)) \
        * (r * T) ** (q / (1.0 + q))


def _nonconvex_step_flag(c: float, beta: float, T: int) -> bool:
    lnT = math.log(T)
    threshold = 1.0 / beta if lnT == 0.0 else min(1.0 / beta, 1.0 / (4.0 * (2.0 * beta * lnT) ** 2))
    return c <= threshold


def nonconvex_stability_bound(inputs: StabilityInputs, variant: str = "theorem") -> BoundReport:
    """Replace-one stability ceiling for smooth losses with Lipschitz Hessians.

    variant "theorem" uses q = c*gamma; variant "proof" uses the q = 2*c*gamma
    exponent the truncation tuning actually optimizes.
    """
    if variant not in ("theorem", "proof"):
        raise ValueError(f"unknown variant {variant!r}")
    inputs.require("L", "r")
    scaled, B, B_known = _rescaled_for_unit_loss(inputs)
    gb = gamma(scaled)
    cg = scaled.c * gb.value
    q = cg if variant == "theorem" else 2.0 * cg
    terms = {
        "gamma": gb.value,
        "gamma_curvature_term": gb.curvature_term,
        "gamma_risk_drift_term": gb.risk_drift_term,
        "gamma_noise_drift_term": gb.noise_drift_term,
        "gamma_clipped_at_beta": gb.clipped_at_beta,
        "c_gamma": cg,
        "q": q,
        "B": B,
        "rescaled_by_B": B_known and B != 1.0,
    }
    if cg == 0.0 and scaled.r != 0.0:
        report = BoundReport(value=math.inf, variant=f"nonconvex-{variant}", terms=terms)
        report.terms["note"] = "c*gamma = 0: the 1 + 1/(c gamma) prefactor diverges"
    else:
        value = B * _nonconvex_value(scaled.m, scaled.T, scaled.c, scaled.L, q, scaled.r)
        report = BoundReport(value=value, variant=f"nonconvex-{variant}", terms=terms)
    report.flag("loss_in_unit_interval", B_known)
    report.flag("step_c_le_nonconvex_threshold",
                _nonconvex_step_flag(scaled.c, scaled.beta, scaled.T))
    report.flag("T_le_m", inputs.T <= inputs.m)
    return report


def uniform_baseline_bound(m: int, T: int, c: float, L: float, beta: float) -> BoundReport:
    """Worst-case counterpart: the non-convex bound at gamma = beta, r = 1."""
    inputs = StabilityInputs(m=m, T=T, c=c, L=L, beta=beta, rho=0.0, sigma=0.0,
                             R1=0.0, Rstar=0.0, hbar=beta, r=1.0, B=1.0)
    report = nonconvex_stability_bound(inputs, variant="theorem")
    return BoundReport(value=report.value, variant="uniform-baseline",
                       terms=report.terms, validity=report.validity)


def convex_stability_bound(inputs: StabilityInputs, include_L_factor: bool = True) -> BoundReport:
    """Stability ceiling for convex losses under alpha_t = c/sqrt(t).

    (2/m) [ 2 sqrt(2c) T^(1/4) sqrt(R1 - R*) +
            2 c sigma (T^(1/4) sqrt(beta/2) + sqrt(T)) ],
    optionally multiplied by L (the factor the decomposition step carries
    but the theorem statement drops).
    """
    inputs.require("beta", "sigma", "R1")
    if include_L_factor:
        inputs.require("L")
    m, T, c = inputs.m, inputs.T, inputs.c
    t_quarter = T ** 0.25
    risk_term = 2.0 * math.sqrt(2.0 * c) * t_quarter * math.sqrt(inputs.R1 - inputs.Rstar)
    noise_term = 2.0 * c * inputs.sigma * (t_quarter * math.sqrt(inputs.beta / 2.0) + math.sqrt(T))
    factor = inputs.L if include_L_factor else 1.0
    value = (2.0 / m) * factor * (risk_term + noise_term)
    report = BoundReport(
        value=value,
        variant="convex" + ("-L" if include_L_factor else ""),
        terms={
            "risk_term": (2.0 / m) * factor * risk_term,
            "noise_term": (2.0 / m) * factor * noise_term,
            "L_factor_applied": bool(include_L_factor),
            "L_factor": factor,
        },
    )
    report.flag("step_c_le_inv_beta", c <= 1.0 / inputs.beta)
    report.flag("T_le_m", T <= m)
    return report


def convex_decomposed_bound(
    path_sum_expectation: float,
    r: float,
    t0: int,
    m: int,
    L: Optional[float] = None,
    include_L_factor: bool = False,
) -> float:
    """(2/m) sum_{t>t0} alpha_t E||grad|| + r t0/m, tail sum caller-supplied."""
    if not 0 <= t0 <= m:
        raise ValueError(f"t0={t0} outside [0, {m}]")
    if path_sum_expectation < 0 or r < 0:
        raise ValueError("path sum and r must be >= 0")
    factor = 1.0
    if include_L_factor:
        if L is None:
            raise ValueError("include_L_factor requires L")
        factor = L
    return (2.0 / m) * factor * path_sum_expectation + r * t0 / m


@dataclass(frozen=True)
class T0Optimum:
    t0_real: float
    t0_int: int
    bound_factor: float  # m-free: divide by m for the tuned bound


def t0_optimum(c: float, L: float, r: float, T: int, gamma_val: float,
               variant: str = "proof", m: Optional[int] = None) -> T0Optimum:
    """Truncation step minimizing (L^2/(gamma m)) (T/t)^q + r t / m.

    q = 2 c gamma for the proof variant (for which the closed form is the
    exact minimizer) and q = c gamma for the theorem-statement variant.
    """
    if variant not in ("theorem", "proof"):
        raise ValueError(f"unknown variant {variant!r}")
    if gamma_val <= 0:
        raise ValueError("gamma_val must be > 0")
    if r < 0:
        raise ValueError("r must be >= 0")
    clamp_hi = m if m is not None else T
    if r == 0.0:
        return T0Optimum(t0_real=0.0, t0_int=0, bound_factor=0.0)
    q = c * gamma_val if variant == "theorem" else 2.0 * c * gamma_val
    t0_real = (2.0 * c * L**2 / r) ** (1.0 / (1.0 + q)) * T ** (q / (1.0 + q))
    t0_int = int(min(max(round(t0_real), 0), clamp_hi))
    factor = (1.0 + 1.0 / q) * (2.0 * c * L**2) ** (1.0 / (1.0 + q)) * (r * T) ** (q / (1.0 + q))
    return T0Optimum(t0_real=t0_real, t0_int=t0_int, bound_factor=factor)


def optimistic_solve(a: float, c_const: float, alpha: float) -> float:
    """Closed-form ceiling on x satisfying x - a x^alpha - c <= 0:
    max{ 2^(alpha/(1-alpha)) a^(1/(1-alpha)), (2c)^alpha a } + c."""
    if a <= 0:
        raise ValueError("a must be > 0")
    if c_const < 0:
        raise ValueError("c must be >= 0")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    branch_a = 2.0 ** (alpha / (1.0 - alpha)) * a ** (1.0 / (1.0 - alpha))
    branch_c = (2.0 * c_const) ** alpha * a
    return max(branch_a, branch_c) + c_const


def optimistic_bound(inputs: StabilityInputs) -> BoundReport:
    """Generalization-gap ceiling that accelerates as the empirical risk
    of the output vanishes:

    max{ (2 + 2/(c gamma))^(1 + c gamma) c L^2 T^(c gamma) / m^(1 + c gamma),
         (1 + 1/(c gamma))/m (2 c L^2)^(1/(1+c gamma))
             (2 Remp T)^(c gamma/(1+c gamma)) }.
    """
    inputs.require("L", "Remp")
    scaled, B, B_known = _rescaled_for_unit_loss(inputs)
    gb = gamma(scaled)
    cg = scaled.c * gb.value
    terms = {"gamma": gb.value, "c_gamma": cg, "B": B,
             "rescaled_by_B": B_known and B != 1.0}
    if cg == 0.0:
        report = BoundReport(value=math.inf, variant="optimistic", terms=terms)
        report.terms["note"] = "c*gamma = 0: prefactors diverge"
    else:
        m, T, c, L = scaled.m, scaled.T, scaled.c, scaled.L
        fast = (2.0 + 2.0 / cg) ** (1.0 + cg) * c * L**2 * T**cg / m ** (1.0 + cg)
        risky = 0.0 if scaled.Remp == 0.0 else (
            (1.0 + 1.0 / cg) / m * (2.0 * c * L**2) ** (1.0 / (1.0 + cg))
            * (2.0 * scaled.Remp * T) ** (cg / (1.0 + cg))
        )
        terms["branch_fast_rate"] = B * fast
        terms["branch_empirical_risk"] = B * risky
        terms["active_branch"] = "fast_rate" if fast >= risky else "empirical_risk"
        report = BoundReport(value=B * max(fast, risky), variant="optimistic", terms=terms)
    report.flag("loss_in_unit_interval", B_known)
    report.flag("step_c_le_nonconvex_threshold",
                _nonconvex_step_flag(scaled.c, scaled.beta, scaled.T))
    report.flag("T_le_m", inputs.T <= inputs.m)
    return report


@dataclass
class TransferSelection:
    selected_index: int
    rows: List[dict]
    K: int
    flags: dict


def transfer_select_convex(candidates: Sequence[Tuple[int, float]], m: int,
                           K: Optional[int] = None) -> TransferSelection:
    """Pick the source hypothesis minimizing R_hat_k + sqrt(log K / m).

    The deviation penalty is identical across candidates, so this is the
    empirical-risk argmin; log(max(K, 2)) stands in for log K so a single
    candidate does not zero the penalty.  Ties break to the lowest index.
    """
    if len(candidates) == 0:
        raise ValueError("need at least one candidate")
    K = K if K is not None else len(candidates)
    penalty = math.sqrt(math.log(max(K, 2)) / m)
    rows = [{"index": int(idx), "risk": float(risk), "score": float(risk) + penalty}
            for idx, risk in candidates]
    best = min(rows, key=lambda row: (row["score"], row["index"]))
    return TransferSelection(
        selected_index=best["index"], rows=rows, K=K,
        flags={"penalty": penalty, "degenerate_K": K < 2},
    )


def transfer_select_nonconvex(
    candidates: Sequence[Tuple[int, float, float]],
    c: float,
    m: int,
    K: Optional[int] = None,
    delta_conf: float = 0.05,
    gamma_floor: float = 1e-6,
) -> TransferSelection:
    """Pick the source minimizing the curvature-aware selection bound.

    Per candidate k with empirical risk R_k and mean Hessian norm h_k:
    gamma_hat = h_k + sqrt(R_k), perturbed by the Hoeffding deviation
    (log(max(K,2)/delta_conf) / m)^(1/4) in both directions; the score is
    (1 + 1/(c gamma^-)) R_k^(c gamma^+/(1+c gamma^+))
    sqrt(log(max(K,2))) / m^(1/(1+c gamma^+)),
    with gamma^- floored at ``gamma_floor`` to keep the prefactor finite.
    """
    if len(candidates) == 0:
        raise ValueError("need at least one candidate")
    if c <= 0:
        raise ValueError("c must be > 0")
    if not 0.0 < delta_conf < 1.0:
        raise ValueError("delta_conf must lie in (0, 1)")
    K = K if K is not None else len(candidates)
    logK = math.log(max(K, 2))
    deviation = (math.log(max(K, 2) / delta_conf) / m) ** 0.25
    rows = []
    for idx, risk, hnorm in candidates:
        if risk < 0 or hnorm < 0:
            raise ValueError("risks and Hessian norms must be >= 0")
        g_hat = hnorm + math.sqrt(risk)
        g_plus = g_hat + deviation
        g_minus = max(g_hat - deviation, gamma_floor)
        expo = c * g_plus / (1.0 + c * g_plus)
        score = (1.0 + 1.0 / (c * g_minus)) * risk**expo \
            * math.sqrt(logK) / m ** (1.0 / (1.0 + c * g_plus))
        rows.append({
            "index": int(idx), "risk": float(risk), "hessian_norm": float(hnorm),
            "gamma_hat": g_hat, "gamma_plus": g_plus, "gamma_minus": g_minus,
            "bound": score,
        })
    best = min(rows, key=lambda row: (row["bound"], row["index"]))
    return TransferSelection(
        selected_index=best["index"], rows=rows, K=K,
        flags={"degenerate_K": K < 2, "deviation": deviation, "delta_conf": delta_conf},
    )


def standard_report_set(inputs: StabilityInputs) -> dict:
    """Every bound variant this module evaluates, keyed by variant name.

    Variants whose required inputs are missing are skipped with a note, so
    a convex-only or nonconvex-only inputs file still yields a report.
    """
    reports = {}
    skipped = {}

    def attempt(name, fn):
        try:
            reports[name] = fn()
        except ValueError as exc:
            skipped[name] = str(exc)

    attempt("convex_L", lambda: convex_stability_bound(inputs, include_L_factor=True))
    attempt("convex_noL", lambda: convex_stability_bound(inputs, include_L_factor=False))
    attempt("nonconvex_theorem", lambda: nonconvex_stability_bound(inputs, variant="theorem"))
    attempt("nonconvex_proof", lambda: nonconvex_stability_bound(inputs, variant="proof"))
    attempt("uniform_baseline", lambda: (
        uniform_baseline_bound(inputs.m, inputs.T, inputs.c, inputs.L, inputs.beta)
        if inputs.L is not None and inputs.beta is not None
        else (_ for _ in ()).throw(ValueError("bound needs inputs ['L', 'beta']"))
    ))
    attempt("optimistic", lambda: optimistic_bound(inputs))
    return {"reports": reports, "skipped": skipped}
