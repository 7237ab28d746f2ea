"""Per-round analysis quantities and Monte Carlo checks of the one-step
contraction inequalities behind the convergence guarantee.

Conventions: X is the n x d matrix of agent iterates, xbar its row mean,
Y = X - 1 xbar^T the consensus deviation, r_sq = ||xbar - x*||^2. The
Lyapunov value couples both errors, V_k = r_sq + eta * (alpha_k/beta_k) *
||Y_k||_F^2. The vector quantization error bound entering the inequality
constants is d * delta_k (coarser than the sqrt(d) * delta_k the codec
actually guarantees, and therefore conservative).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .objective import RegressionObjective, global_value
from .quantizer import QuantizerSchedule
from .schedules import StepSchedule

TRACE_COLUMNS = [
    "k", "f_gap_last", "f_gap_avg_min", "f_gap_avg_max", "consensus_sq",
    "r_sq", "lyapunov", "delta_k", "range_k", "max_coord", "gamma_k",
]

ETA_MODES = ("body", "appendix")


@dataclass(frozen=True)
class TraceRecord:
    k: int
    f_gap_last: float
    f_gap_avg_min: float
    f_gap_avg_max: float
    consensus_sq: float
    r_sq: float
    lyapunov: float
    delta_k: float
    range_k: float
    max_coord: float
    gamma_k: float


@dataclass
class Trace:
    """Ordered per-round diagnostic records with CSV persistence."""

    records: list[TraceRecord] = field(default_factory=list)
    error: str | None = None

    def column(self, name: str) -> np.ndarray:
        return np.asarray([getattr(rec, name) for rec in self.records])

    def final(self) -> TraceRecord:
        return self.records[-1]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for rec in self.records:
                writer.writerow(
                    [rec.k] + [f"{getattr(rec, c):.17g}" for c in TRACE_COLUMNS[1:]])
            if self.error is not None:
                fh.write(f"# error: {self.error}\n")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        records: list[TraceRecord] = []
        error = None
        with Path(path).open(newline="") as fh:
            header = None
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if line.startswith("# error:"):
                        error = line[len("# error:"):].strip()
                    continue
                cells = line.split(",")
                if header is None:
                    header = cells
                    if header != TRACE_COLUMNS:
                        raise ValueError(f"unexpected trace header in {path}")
                    continue
                records.append(TraceRecord(int(cells[0]), *map(float, cells[1:])))
        return cls(records, error)


def consensus_error(x_rows: np.ndarray) -> float:
    """Squared Frobenius deviation of the rows from their mean."""
    x = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    centered = x - x.mean(axis=0, keepdims=True)
    return float(np.sum(centered * centered))


def eta_coupling(mu: float, lipschitz: float, spectral_gap: float,
                 mode: str = "body") -> float:
    """Coupling constant for the Lyapunov consensus term.

    Two published variants exist and they genuinely differ; both are kept:
    'body'     -> 2 (L + 8 L^2 / mu) / (1 - sigma2)
    'appendix' -> 2 (L + L^2 / 8)   / (1 - sigma2)
    """
    if mode == "body":
        return 2.0 * (lipschitz + 8.0 * lipschitz ** 2 / mu) / spectral_gap
    if mode == "appendix":
        return 2.0 * (lipschitz + lipschitz ** 2 / 8.0) / spectral_gap
    raise ValueError(f"unknown eta mode {mode!r}; pick one of {ETA_MODES}")


def lyapunov_value(r_sq: float, consensus_sq: float, k: int,
                   steps: StepSchedule, eta: float) -> float:
    """V_k = r_sq + eta * (alpha_k / beta_k) * consensus_sq."""
    return r_sq + eta * (steps.alpha(k) / steps.beta(k)) * consensus_sq


@dataclass(frozen=True)
class RateBoundInputs:
    """Problem constants feeding the closed-form decay envelope."""

    mu: float
    lipschitz: float
    grad_bound: float
    dims: int
    n: int
    bits: int
    sigma2: float
    v1: float

    def __post_init__(self):
        if min(self.mu, self.lipschitz, self.grad_bound, self.dims,
               self.n, self.bits) <= 0 or self.v1 < 0:
            raise ValueError("all rate-bound constants must be positive")
        if not (0.0 <= self.sigma2 < 1.0):
            raise ValueError("sigma2 must be in [0, 1)")


def gamma_k(inputs: RateBoundInputs, steps: StepSchedule, k: int) -> float:
    """Per-round additive error term of the Lyapunov recursion."""
    if k < 1:
        raise ValueError("gamma is defined for k >= 1")
    mu, lip = inputs.mu, inputs.lipschitz
    gap = 1.0 - inputs.sigma2
    quant = (inputs.grad_bound * inputs.dims / (2 ** inputs.bits - 1)) ** 2 \
        * steps.alpha_sum(k) ** 2
    return (
        (16.0 / mu ** 2) / (k + 1) ** 2
        + (40.0 * lip ** 2 * (lip + 8.0 * lip ** 2 / mu) / mu ** 3) / (k + 1) ** 1.5
        + (4.0 / (gap * (k + 1) ** 1.5)
           + 320.0 * (lip + 8.0 * lip ** 2 / mu) * inputs.n ** 2
           / (gap ** 2 * (k + 1) ** 1.75)) * quant
    )


def rate_bound_terms(inputs: RateBoundInputs, horizon: int) -> tuple[float, ...]:
    """The five summands of the expected-gap envelope at the given horizon."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    mu, lip = inputs.mu, inputs.lipschitz
    gap = 1.0 - inputs.sigma2
    tp1 = horizon + 1.0
    quant = (inputs.grad_bound * inputs.dims / (2 ** inputs.bits - 1)) ** 2
    log_sq = math.log(horizon) ** 2
    return (
        mu * inputs.v1 / (8.0 * tp1 ** 2),
        2.0 / tp1,
        (16.0 / (3.0 * mu * gap)) * quant * log_sq / tp1 ** 0.5,
        (4.0 * inputs.n ** 2 * (lip + 8.0 * lip ** 2) / gap ** 2)
        * quant * log_sq / tp1 ** 0.75,
        (8.0 * lip * (lip + 8.0 * lip ** 2 / mu) / (3.0 * mu ** 3)) / tp1 ** 0.5,
    )


def rate_bound(inputs: RateBoundInputs, horizon: int) -> float:
    """Closed-form bound on the expected averaged-output optimality gap."""
    return sum(rate_bound_terms(inputs, horizon))


def make_record(k: int, x_rows: np.ndarray, z_rows: np.ndarray,
                objective: RegressionObjective, steps: StepSchedule,
                qsched: QuantizerSchedule, eta: float) -> TraceRecord:
    """Snapshot every tracked quantity for one round."""
    xbar = x_rows.mean(axis=0)
    cons = consensus_error(x_rows)
    r_sq = float(np.sum((xbar - objective.optimum) ** 2))
    gaps = [global_value(objective, z) - objective.f_star for z in z_rows]
    inputs = RateBoundInputs(
        mu=objective.mu, lipschitz=objective.lipschitz,
        grad_bound=qsched.gradient_bound, dims=qsched.dims,
        n=objective.n, bits=qsched.bits,
        sigma2=1.0 - steps.spectral_gap, v1=0.0)
    return TraceRecord(
        k=k,
        f_gap_last=global_value(objective, xbar) - objective.f_star,
        f_gap_avg_min=float(min(gaps)),
        f_gap_avg_max=float(max(gaps)),
        consensus_sq=cons,
        r_sq=r_sq,
        lyapunov=lyapunov_value(r_sq, cons, k, steps, eta),
        delta_k=qsched.delta_at(k),
        range_k=qsched.range_at(k),
        max_coord=float(np.abs(x_rows).max()),
        gamma_k=gamma_k(inputs, steps, k) if k >= 1 else float("nan"),
    )


@dataclass
class EnsembleTrace:
    """Replica-by-round statistics collected for the inequality checks.

    Arrays are indexed [replica, round]; `f_worst` holds
    max_i f(x_k^i) so the check uses the agent that stresses the descent
    inequality hardest.
    """

    consensus_sq: np.ndarray
    r_sq: np.ndarray
    f_worst: np.ndarray
    deltas: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    f_star: float
    mu: float
    lipschitz: float
    sigma2: float
    n: int
    dims: int

    @property
    def replicas(self) -> int:
        return self.consensus_sq.shape[0]

    @property
    def rounds(self) -> int:
        return self.consensus_sq.shape[1] - 1


@dataclass(frozen=True)
class InequalityReport:
    name: str
    replicas: int
    rounds: int
    violations: int
    worst_margin: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _mc_violations(name: str, lhs: np.ndarray, rhs: np.ndarray) -> InequalityReport:
    """Paired Monte Carlo test: mean(lhs - rhs) must stay below 3 SE per round."""
    diff = lhs - rhs
    m = diff.shape[0]
    mean = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / math.sqrt(m)
    scale = np.maximum(1.0, np.abs(rhs).mean(axis=0))
    margins = mean - 3.0 * se - 1e-12 * scale
    return InequalityReport(
        name=name,
        replicas=m,
        rounds=diff.shape[1],
        violations=int(np.sum(margins > 0.0)),
        worst_margin=float(margins.max()),
    )


def check_consensus_recursion(ens: EnsembleTrace,
                              sigma2_override: float | None = None
                              ) -> InequalityReport:
    """Verify the expected one-step contraction of the consensus error.

    E[||Y_{k+1}||_F^2] <= (1 - (1-s)b_k)||Y_k||^2
                          + (1 + (1-s)b_0) b_k^2 n^2 Dv_k^2
                          + ((1-s)b_0 + 1)/(1-s) * L^2 a_k^2 / b_k
    with s = sigma2, Dv the d-scaled bin width, checked in Monte Carlo mean
    with a 3-standard-error slack. ``sigma2_override`` mis-sets s for
    sabotage-detection tests.
    """
    if ens.replicas < 100:
        raise ValueError(f"insufficient replicas: {ens.replicas} < 100")
    s = ens.sigma2 if sigma2_override is None else sigma2_override
    gap = 1.0 - s
    a, b = ens.alphas, ens.betas
    dv = ens.dims * ens.deltas[:-1]
    rhs = (1.0 - gap * b) * ens.consensus_sq[:, :-1] \
        + (1.0 + gap * b[0]) * b ** 2 * ens.n ** 2 * dv ** 2 \
        + ((gap * b[0] + 1.0) / gap) * ens.lipschitz ** 2 * a ** 2 / b
    return _mc_violations("consensus_recursion", ens.consensus_sq[:, 1:], rhs)


def check_descent_recursion(ens: EnsembleTrace,
                            sigma2_override: float | None = None
                            ) -> InequalityReport:
    """Verify the expected one-step descent of the mean optimality distance.

    E[r_{k+1}] <= (1 - mu a_k / 2) r_k + a_k^2 L^2 + b_k^2 Dv_k^2
                  + 2 a_k (f* - f(x_k^worst))
                  + a_k (L + 8 L^2 / mu) ||Y_k||_F^2
    checked in Monte Carlo mean with a 3-standard-error slack.
    """
    if ens.replicas < 100:
        raise ValueError(f"insufficient replicas: {ens.replicas} < 100")
    del sigma2_override  # the descent recursion does not involve sigma2
    a, b = ens.alphas, ens.betas
    mu, lip = ens.mu, ens.lipschitz
    dv = ens.dims * ens.deltas[:-1]
    rhs = (1.0 - mu * a / 2.0) * ens.r_sq[:, :-1] \
        + a ** 2 * lip ** 2 + b ** 2 * dv ** 2 \
        + 2.0 * a * (ens.f_star - ens.f_worst[:, :-1]) \
        + a * (lip + 8.0 * lip ** 2 / mu) * ens.consensus_sq[:, :-1]
    return _mc_violations("descent_recursion", ens.r_sq[:, 1:], rhs)


def fit_loglog_slope(ks: np.ndarray, values: np.ndarray,
                     lo: float, hi: float) -> float:
    """Least-squares slope of log(values) against log(k) on [lo, hi]."""
    ks = np.asarray(ks, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    mask = (ks >= lo) & (ks <= hi) & (values > 0.0)
    if mask.sum() < 2:
        raise ValueError("not enough records in the fit window")
    return float(np.polyfit(np.log(ks[mask]), np.log(values[mask]), 1)[0])
