"""Robust mean estimation under eps-corruption."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import DatasetWithTruth, DistributionSpec, population_moment_tensor
from .poly import Monomial
from .program import build_program, find_pseudoexpectation, verify_indicator_satisfiability
from .sdp import SolverSettings

MAD_SCALE = 1.4826
PRUNE_FACTOR = 10.0
DEFAULT_TAU = 1e-3
DEFAULT_EPS_MAX = 0.2


class InfeasibleRelaxation(RuntimeError):
    """The SDP found no pseudoexpectation; ``diagnostics`` says why."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class RobustEstimate:
    mean: np.ndarray
    pruned: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "pruned": self.pruned.tolist(),
                "diagnostics": self.diagnostics}


def _as_samples(samples) -> np.ndarray:
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("samples must be an n x d array")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples must be finite")
    return X


def prune_radius(samples) -> float:
    """``10 sqrt(d) * 1.4826 * MAD`` with MAD pooled over coordinates."""
    X = _as_samples(samples)
    med = np.median(X, axis=0)
    s = MAD_SCALE * float(np.median(np.abs(X - med)))
    return PRUNE_FACTOR * math.sqrt(X.shape[1]) * s


def naive_prune(samples, eps: float = 0.0, t: int = 4) -> np.ndarray:
    """Indices of points within the prune radius of the coordinate-wise median.

    ``eps`` and ``t`` are accepted for interface symmetry; the radius rule
    does not depend on them.
    """
    if not 0 <= eps < 0.5:
        raise ValueError("eps must lie in [0, 1/2)")
    X = _as_samples(samples)
    if X.shape[0] == 0:
        return np.zeros(0, dtype=int)
    med = np.median(X, axis=0)
    R = prune_radius(X)
    dist = np.linalg.norm(X - med, axis=1)
    return np.flatnonzero(dist <= R * (1 + 1e-12) + 1e-12)


def principal_frame(Y: np.ndarray) -> np.ndarray:
    """Orthogonal ``V`` whose columns are principal axes of centred ``Y``.

    Signs are fixed so that each projection has nonnegative third moment
    (ties broken by the first nonzero coordinate), which makes the frame
    covariant under rotations of the data.
    """
    d = Y.shape[1]
    if Y.shape[0] < 2:
        return np.eye(d)
    lam, V = np.linalg.eigh(Y.T @ Y)
    V = V[:, ::-1]
    P = Y @ V
    skew = np.sum(P ** 3, axis=0)
    scale = np.sum(np.abs(P) ** 3, axis=0) + 1e-300
    for a in range(d):
        s = skew[a] / scale[a]
        if abs(s) < 1e-9:
            nz = np.flatnonzero(np.abs(V[:, a]) > 1e-12)
            s = V[nz[0], a] if nz.size else 1.0
        if s < 0:
            V[:, a] = -V[:, a]
    return V


def estimate_mean(samples, eps: float, t: int = 4, *, tau: float = DEFAULT_TAU,
                  pe_degree: int | None = None, settings: SolverSettings | None = None,
                  eps_max: float = DEFAULT_EPS_MAX, cs_tol: float = 1e-6) -> RobustEstimate:
    """Prune, centre, solve the subset relaxation, read off ``pE[mu]``.

    The kept points are expressed in their principal frame before solving, so
    the estimate is exactly translation and rotation equivariant.

    Raises :class:`InfeasibleRelaxation` when the SDP is infeasible or fails.
    """
    if not 0 <= eps < eps_max:
        raise ValueError(f"eps must lie in [0, {eps_max})")
    X = _as_samples(samples)
    n, d = X.shape
    if n == 0:
        raise ValueError("samples must be nonempty")
    t0 = time.perf_counter()
    kept = naive_prune(X, min(eps, 0.49), t)
    pruned = np.setdiff1d(np.arange(n), kept)
    Xk = X[kept]
    center = Xk.mean(axis=0)
    alpha = min(1.0, (1.0 - eps) * n / kept.size)
    V = principal_frame(Xk - center)
    prog = build_program((Xk - center) @ V, alpha, t, tau)
    pE, sol, msdp = find_pseudoexpectation(prog, pe_degree, settings=settings)
    diag = {
        "status": sol.status, "message": sol.message, "iterations": sol.iterations,
        "phase1_value": sol.phase1_value, "alpha": alpha, "tau": tau, "n_kept": int(kept.size),
        "pe_degree": msdp.relaxation.degree, "center": center.tolist(),
    }
    if pE is None:
        diag["wall_time"] = time.perf_counter() - t0
        raise InfeasibleRelaxation(f"relaxation not solved: {sol.status} ({sol.message})", diag)
    rep = msdp.relaxation.evaluate(pE)
    mu_vars = prog.mu_vars
    pe_mu = np.array([pE[Monomial(((v, 1),))] for v in mu_vars])
    second = sum(pE[Monomial(((v, 2),))] for v in mu_vars)
    # pseudo Cauchy-Schwarz: pE ||mu||^2 >= ||pE mu||^2 (centred coordinates)
    cs_gap = float(second - pe_mu @ pe_mu)
    scale = 1.0 + float(pe_mu @ pe_mu)
    if cs_gap < -cs_tol * scale:
        raise AssertionError(f"pseudo Cauchy-Schwarz violated by {-cs_gap:.3e}")
    diag.update({
        "positivity_margin": rep.min_eigenvalue,
        "equality_residual": rep.max_equality_residual,
        "normalization_residual": rep.normalization_residual,
        "cauchy_schwarz_gap": cs_gap,
        "wall_time": time.perf_counter() - t0,
    })
    return RobustEstimate(V @ pe_mu + center, pruned, diag)


@dataclass
class ConditionsReport:
    """Outcome of the E1-E4 diagnostics; ``None`` marks a vacuous check."""

    e1: bool | None
    e2: bool | None
    e3: bool | None
    e4: bool | None
    details: dict = field(default_factory=dict)

    @property
    def vacuous(self) -> bool:
        return self.e3 is None or self.e4 is None

    @property
    def passed(self) -> bool:
        return all(v is not False for v in (self.e1, self.e2, self.e3, self.e4))

    def as_dict(self) -> dict:
        return {"e1": self.e1, "e2": self.e2, "e3": self.e3, "e4": self.e4,
                "vacuous": self.vacuous, "passed": self.passed, **self.details}


def check_conditions_e(dataset: DatasetWithTruth, t: int = 4, *, spec: DistributionSpec | None = None,
                       eps: float | None = None, tau: float = DEFAULT_TAU, noise_factor: float = 3.0,
                       moment_slack: float = 0.1) -> ConditionsReport:
    """Ground-truth diagnostics for a corrupted single-component dataset.

    E1: pruning keeps every uncorrupted row. E2: the indicator of the
    uncorrupted rows satisfies the subset system. E3: their mean is within
    ``sqrt(t) eps^(1-1/t) + noise_factor sqrt(d/n)`` of the truth. E4: the
    empirical t-th moment tensor of the clean copies is below the population
    tensor plus ``moment_slack * I``.
    """
    X = dataset.samples
    n, d = X.shape
    good = np.flatnonzero(~dataset.corrupted)
    eps_obs = 1.0 - good.size / n if n else 0.0
    eps = eps_obs if eps is None else eps
    mu_star = dataset.true_mean
    details = {"eps": eps, "n_good": int(good.size)}

    kept = naive_prune(X, min(eps, 0.49), t) if n else np.zeros(0, dtype=int)
    e1 = bool(np.all(np.isin(good, kept)))
    if good.size == 0:
        return ConditionsReport(e1, None, None, None, {**details, "reason": "no good points"})

    sat = verify_indicator_satisfiability(X, good, t, tau, alpha=good.size / n)
    e2 = bool(sat.passed)
    details["e2_margin"] = sat.slack_min_eigenvalue

    err = float(np.linalg.norm(X[good].mean(axis=0) - mu_star))
    bound = math.sqrt(t) * eps ** (1 - 1 / t) + noise_factor * math.sqrt(d / good.size)
    e3 = err <= bound
    details.update({"e3_error": err, "e3_bound": bound})

    if spec is None:
        comps = dataset.spec.get("mixture", {}).get("components", [])
        if len(comps) != 1:
            return ConditionsReport(e1, e2, e3, None, {**details, "reason": "no single population spec"})
        spec = DistributionSpec.from_dict(comps[0])
    pop = population_moment_tensor(spec, t)
    Y = dataset.clean_copies - mu_star
    h = t // 2
    V = Y
    for _ in range(h - 1):
        V = np.einsum("ni,nj->nij", V, Y).reshape(len(Y), -1)
    emp = V.T @ V / len(Y)
    lam = float(np.linalg.eigvalsh(pop + moment_slack * np.eye(pop.shape[0]) - emp)[0])
    details["e4_margin"] = lam
    return ConditionsReport(e1, e2, e3, lam >= 0, details)
