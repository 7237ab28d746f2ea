"""Decomposable least-squares objective split across agents.

Agent i privately holds f_i(x) = (w_i^T x - b_i)^2. The global objective
f = sum_i f_i is strongly convex whenever the feature matrix has full
column rank; its curvature constants and a certified per-agent gradient
bound are derived at construction time and drive the step and range
schedules.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInstanceError

MIN_EIGENVALUE = 1e-10
OPTIMALITY_TOL = 1e-8


@dataclass(frozen=True)
class RegressionObjective:
    """Per-agent data plus derived problem constants.

    mu and lipschitz are the curvature bounds of the global f (twice the
    extreme eigenvalues of sum_i w_i w_i^T). grad_bound certifies
    ||grad f_i(x)|| <= grad_bound for every agent on the coordinate box
    ||x||_inf <= operating_radius.
    """

    features: np.ndarray
    targets: np.ndarray
    optimum: np.ndarray
    f_star: float
    mu: float
    lipschitz: float
    grad_bound: float
    operating_radius: float

    def __post_init__(self):
        self.features.setflags(write=False)
        self.targets.setflags(write=False)
        self.optimum.setflags(write=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]


def build_objective(features, targets, operating_radius: float | None = None
                    ) -> RegressionObjective:
    """Derive constants for given data; raises DegenerateInstanceError on
    rank-deficient features."""
    w = np.asarray(features, dtype=np.float64)
    b = np.asarray(targets, dtype=np.float64)
    n, d = w.shape
    if b.shape != (n,):
        raise ValueError("targets must be one scalar per agent")
    gram = w.T @ w
    evals = np.linalg.eigvalsh(gram)
    if evals[0] < MIN_EIGENVALUE:
        raise DegenerateInstanceError(
            f"degenerate instance: smallest Gram eigenvalue {evals[0]:.3e}")
    xstar = np.linalg.solve(gram, w.T @ b)
    grad_at_opt = 2.0 * w.T @ (w @ xstar - b)
    if np.linalg.norm(grad_at_opt) > OPTIMALITY_TOL:
        raise DegenerateInstanceError("normal-equation solve left a gradient residual")
    fstar = float(np.sum((w @ xstar - b) ** 2))
    radius = operating_radius
    if radius is None:
        radius = 4.0 * float(np.abs(xstar).max()) + 1.0
    # |w^T x| <= ||w||_1 * ||x||_inf on the box, hence the analytic bound
    row_norms = np.linalg.norm(w, axis=1)
    bound = float(np.max(2.0 * row_norms * (np.abs(w).sum(axis=1) * radius + np.abs(b))))
    return RegressionObjective(
        features=w.copy(),
        targets=b.copy(),
        optimum=xstar,
        f_star=fstar,
        mu=2.0 * float(evals[0]),
        lipschitz=2.0 * float(evals[-1]),
        grad_bound=bound,
        operating_radius=float(radius),
    )


def generate_instance(n: int, d: int, seed: int,
                      feature_high: float = 0.65,
                      target_high: float = 0.45,
                      operating_radius: float | None = None,
                      max_retries: int = 100) -> RegressionObjective:
    """Sample agent data uniformly from [0, feature_high]^d x [0, target_high].

    Deterministic per seed; rank-deficient draws are resampled with an
    incremented seed up to ``max_retries`` times.
    """
    if n < d:
        raise ValueError("need at least as many agents as dimensions")
    for attempt in range(max_retries):
        rng = np.random.default_rng(seed + attempt)
        w = rng.uniform(0.0, feature_high, size=(n, d))
        b = rng.uniform(0.0, target_high, size=n)
        try:
            return build_objective(w, b, operating_radius)
        except DegenerateInstanceError:
            continue
    raise DegenerateInstanceError(
        f"degenerate instance: no full-rank draw in {max_retries} attempts")


def well_conditioned_instance(n: int = 4, d: int = 2) -> RegressionObjective:
    """Small hand-built instance with an orthogonal design (mu == lipschitz).

    Cycling scaled basis vectors keeps the Gram matrix isotropic, so the
    harmonic step schedule produces no early overshoot and per-agent
    gradient norms stay below the global smoothness constant along the
    whole trajectory. Used as the default verification benchmark.
    """
    if n < d:
        raise ValueError("need at least as many agents as dimensions")
    w = np.zeros((n, d))
    for i in range(n):
        w[i, i % d] = 0.5
    # agents sharing a feature direction get conflicting targets so the
    # optimal residual (and thus f at the optimum) stays nonzero
    b = np.array([0.05 + 0.05 * ((i // d) % 2) for i in range(n)])
    return build_objective(w, b)


def gradient(objective: RegressionObjective, agent: int, x: np.ndarray) -> np.ndarray:
    """Gradient of agent's private term: 2 w_i (w_i^T x - b_i)."""
    w = objective.features[agent]
    return 2.0 * w * (w @ np.asarray(x) - objective.targets[agent])


def gradient_matrix(objective: RegressionObjective, x_rows: np.ndarray) -> np.ndarray:
    """Each agent's gradient at its own iterate, one row per agent."""
    w = objective.features
    residuals = np.einsum("ij,ij->i", x_rows, w) - objective.targets
    return 2.0 * w * residuals[:, None]


def global_value(objective: RegressionObjective, x: np.ndarray) -> float:
    """f(x) = sum_i (w_i^T x - b_i)^2."""
    return float(np.sum((objective.features @ np.asarray(x) - objective.targets) ** 2))


def save_instance_csv(objective: RegressionObjective, path) -> None:
    """One row per agent, columns w_1..w_d then b; constants are never stored."""
    d = objective.dims
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"w_{j + 1}" for j in range(d)] + ["b"])
        for i in range(objective.n):
            row = [f"{v:.17g}" for v in objective.features[i]]
            row.append(f"{objective.targets[i]:.17g}")
            writer.writerow(row)


def load_instance_csv(path, operating_radius: float | None = None) -> RegressionObjective:
    """Read agent data back and recompute every derived constant."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "b":
            raise ValueError(f"malformed instance file {path}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows)
    return build_objective(data[:, :-1], data[:, -1], operating_radius)
