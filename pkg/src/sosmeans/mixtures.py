"""Clustering mixtures through pseudoexpectations of ``w w^T``."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .poly import Monomial
from .program import build_program, build_sdp
from .robust import DEFAULT_EPS_MAX, InfeasibleRelaxation, estimate_mean
from .sdp import SolverSettings, solve

GRAM_CLIP = 1e-8
NONUNIFORM_C = 2.0
ROUNDING_E_FACTOR = 8.0


class NoExtractableCluster(ValueError):
    """No row of ``pE w w^T`` is heavy enough to seed a cluster."""


@dataclass
class ClusterAssignment:
    """Cluster ids in ``range(k)``; ids are only meaningful up to permutation."""

    labels: np.ndarray
    k: int
    complete: bool = True
    pivots: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError("labels must lie in range(k)")

    @property
    def clusters(self) -> list:
        return [np.flatnonzero(self.labels == j) for j in range(self.k)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


@dataclass
class MixtureEstimate:
    means: np.ndarray
    assignment: ClusterAssignment
    diagnostics: dict = field(default_factory=dict)
    pseudo_expectation: object = None

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "labels": self.assignment.labels.tolist(),
                "k": self.assignment.k, "diagnostics": self.diagnostics}


# --------------------------------------------------------------------------
# matching helpers


def best_permutation(estimated, truth) -> tuple:
    """Permutation ``p`` minimising ``max_j ||estimated[p[j]] - truth[j]||``.

    Returns ``(p, errors)`` with ``errors[j]`` the distance for truth row j.
    Exhaustive for k <= 8; Hungarian on squared distances otherwise.
    """
    est = np.atleast_2d(np.asarray(estimated, dtype=float))
    tru = np.atleast_2d(np.asarray(truth, dtype=float))
    k = tru.shape[0]
    if est.shape[0] != k:
        raise ValueError("need one estimate per true mean")
    D = np.linalg.norm(est[:, None, :] - tru[None, :, :], axis=2)
    if k <= 8:
        best = None
        for p in itertools.permutations(range(k)):
            errs = D[list(p), range(k)]
            key = (errs.max(), errs.sum())
            if best is None or key < best[0]:
                best = (key, p, errs)
        return list(best[1]), best[2]
    from scipy.optimize import linear_sum_assignment

    r, c = linear_sum_assignment(D ** 2)
    p = [0] * k
    for i, j in zip(r, c):
        p[j] = i
    return p, D[p, range(k)]


def misassigned(labels, truth) -> int:
    """Points off their true cluster under the best label permutation."""
    labels = np.asarray(labels, dtype=int)
    truth = np.asarray(truth, dtype=int)
    ka = int(labels.max(initial=-1)) + 1
    kb = int(truth.max(initial=-1)) + 1
    C = np.zeros((ka, kb), dtype=int)
    np.add.at(C, (labels, truth), 1)
    from scipy.optimize import linear_sum_assignment

    r, c = linear_sum_assignment(-C)
    return int(labels.size - C[r, c].sum())


# --------------------------------------------------------------------------
# preclustering and rounding


def single_linkage_precluster(samples, radius: float) -> list:
    """Connected components of the graph joining points at distance <= radius."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    n = X.shape[0]
    if n == 0:
        return []
    pairs = cKDTree(X).query_pairs(radius, output_type="ndarray")
    G = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) \
        else coo_matrix((n, n))
    ncomp, lab = connected_components(G, directed=False)
    return [np.flatnonzero(lab == c) for c in range(ncomp)]


def round_second_moments(M, m: int, E: float | None = None, rng=None, pivots=None) -> ClusterAssignment:
    """Ball rounding of the rows of ``M``.

    ``m`` times: pick an unassigned row ``i`` (random, or from ``pivots``),
    claim every unassigned row within ``2 sqrt(n / E)`` of it. Rows left over
    join the cluster of the nearest pivot. ``E`` defaults to ``8 m``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    if not np.allclose(M, M.T, atol=1e-8 * max(1.0, float(np.max(np.abs(M), initial=0.0)))):
        raise ValueError("M must be symmetric")
    if m < 1:
        raise ValueError("m must be at least 1")
    E = ROUNDING_E_FACTOR * m if E is None else float(E)
    if not E > 0:
        raise ValueError("E must be positive")
    rng = np.random.default_rng(rng)
    n = M.shape[0]
    radius = 2.0 * math.sqrt(n / E)
    labels = np.full(n, -1)
    used = []
    for ell in range(m):
        free = np.flatnonzero(labels < 0)
        if free.size == 0:
            break
        if pivots is not None and ell < len(pivots):
            i = int(pivots[ell])
            if labels[i] >= 0:
                raise ValueError(f"pivot {i} is already assigned")
        else:
            i = int(rng.choice(free))
        dist = np.linalg.norm(M[free] - M[i], axis=1)
        labels[free[dist <= radius]] = ell
        labels[i] = ell
        used.append(i)
    left = np.flatnonzero(labels < 0)
    if left.size:
        P = M[used]
        d = np.linalg.norm(M[left][:, None, :] - P[None, :, :], axis=2)
        labels[left] = np.argmin(d, axis=1)
    return ClusterAssignment(labels, m, complete=len(used) == m, pivots=used)


def gram_vectors(G) -> np.ndarray:
    """Columns ``v_i`` with ``v_i . v_j = G_ij`` after clipping eigenvalues below 1e-8."""
    G = np.asarray(G, dtype=float)
    lam, U = np.linalg.eigh(0.5 * (G + G.T))
    lam = np.where(lam < GRAM_CLIP, 0.0, lam)
    return np.sqrt(lam)[:, None] * U.T


def round_second_moments_nonuniform(pE_wwT, alpha_prime: float, xi: float, d: int, rng=None,
                                    c: float = NONUNIFORM_C) -> np.ndarray:
    """One cluster from a Gram factorisation of ``pE w w^T``.

    Picks a random ``v_i`` with ``||v_i||^2 >= alpha' / 100`` and returns the
    indices within ``c sqrt(d xi)`` of it.
    """
    V = gram_vectors(pE_wwT)
    norms2 = np.sum(V * V, axis=0)
    heavy = np.flatnonzero(norms2 >= alpha_prime / 100.0)
    if heavy.size == 0:
        raise NoExtractableCluster("no column meets the norm threshold")
    rng = np.random.default_rng(rng)
    i = int(rng.choice(heavy))
    dist = np.linalg.norm(V - V[:, [i]], axis=0)
    return np.flatnonzero(dist <= c * math.sqrt(d * xi))


# --------------------------------------------------------------------------
# pipelines


def mean_step_eps(k: int, t: int, delta: float, C: float = 0.0, cap: float = DEFAULT_EPS_MAX) -> float:
    """``2^{C t} t^{t/2} k^4 / delta^t``, capped just below the estimator's limit."""
    if delta is None or delta <= 0:
        return 0.0
    eps = 2.0 ** (C * t) * t ** (t / 2) * k ** 4 / delta ** t
    return float(min(eps, 0.95 * cap))


def _ww_matrix(pE, n: int) -> np.ndarray:
    W = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            W[i, j] = W[j, i] = pE[Monomial(((i, 1),)) * Monomial(((j, 1),))]
    return W


def _solve_subsets(X, alpha, t, tau, pe_degree, settings, objective):
    """Solve the subset relaxation; returns ``(pE, diagnostics)`` or raises."""
    t0 = time.perf_counter()
    prog = build_program(X, alpha, t, tau)
    msdp = build_sdp(prog, pe_degree, objective=objective)
    sol = solve(msdp.problem, settings)
    diag = {"sdp_status": sol.status, "sdp_iterations": sol.iterations, "sdp_gap": sol.gap,
            "sdp_message": sol.message, "num_moments": msdp.relaxation.num_moments}
    if sol.status == "infeasible":
        diag["wall_time"] = time.perf_counter() - t0
        raise InfeasibleRelaxation("subset relaxation infeasible: " + sol.message, diag)
    pE = msdp.extract(sol)
    rep = msdp.relaxation.evaluate(pE)
    diag.update({"positivity_margin": rep.min_eigenvalue,
                 "equality_residual": rep.max_equality_residual,
                 "pe_valid": bool(rep.passed), "wall_time": time.perf_counter() - t0})
    if sol.status != "optimal" and not rep.passed:
        reason = f"solver ended with {sol.status} and an invalid pseudoexpectation"
        if objective is not None:
            feas = solve(build_sdp(prog, pe_degree).problem, settings)
            diag["phase1_status"] = feas.status
            if feas.status == "infeasible":
                reason = "subset relaxation infeasible: " + feas.message
        diag["wall_time"] = time.perf_counter() - t0
        raise InfeasibleRelaxation(reason, diag)
    # a stalled minimisation still yields a valid pE; rounding tolerates the slack
    diag["accepted_inexact"] = sol.status != "optimal"
    return pE, diag


def _default_settings(settings):
    return settings or SolverSettings(tol=1e-7, max_iters=80, classify=False)


def _cluster_component(X, k, t, tau, pe_degree, E, rng, settings):
    n = X.shape[0]
    if k == 1 or n <= 1:
        return ClusterAssignment(np.zeros(n, dtype=int), 1), None, {"sdp_status": "skipped"}
    Xc = X - X.mean(axis=0)
    pE, diag = _solve_subsets(Xc, 1.0 / k, t, tau, pe_degree, settings, "frobenius")
    W = _ww_matrix(pE, n)
    diag["ww_frobenius"] = float(np.linalg.norm(W))
    assign = round_second_moments(k * W, k, E, rng)
    diag["pivots"] = assign.pivots
    # fewer balls than k: the rows of k pE[w w^T] are not separated (e.g. coincident means)
    diag["rounding_complete"] = assign.complete
    return assign, pE, diag


def _split_k(sizes, k):
    n = sum(sizes)
    raw = np.array(sizes, dtype=float) * k / n
    ks = np.maximum(1, np.floor(raw)).astype(int)
    while ks.sum() < k:
        ks[np.argmax(raw - ks)] += 1
    while ks.sum() > k and np.any(ks > 1):
        j = np.argmax(np.where(ks > 1, ks - raw, -np.inf))
        ks[j] -= 1
    return ks


def learn_mixture_means(samples, k: int, t: int = 4, tau: float | None = None,
                        eps_for_mean_step: float | None = None, rng=None, *, delta: float | None = None,
                        E: float | None = None, pe_degree: int | None = None,
                        precluster_radius: float | None = None, eps_constant: float = 0.0,
                        settings: SolverSettings | None = None) -> MixtureEstimate:
    """Cluster via a Frobenius-minimal pseudoexpectation, then estimate each mean.

    ``tau`` defaults to ``delta^-t`` when ``delta`` is given, else 1e-3;
    ``eps_for_mean_step`` defaults to :func:`mean_step_eps`.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = X.shape
    if k < 1 or k > n:
        raise ValueError("k must lie in [1, n]")
    rng = np.random.default_rng(rng)
    t0 = time.perf_counter()
    if tau is None:
        tau = min(delta ** -t, 0.099) if delta else 1e-3
    if eps_for_mean_step is None:
        eps_for_mean_step = mean_step_eps(k, t, delta, eps_constant)
    settings = _default_settings(settings)
    groups = single_linkage_precluster(X, precluster_radius) if precluster_radius else [np.arange(n)]
    if len(groups) > k:
        groups = [np.arange(n)]
    ks = _split_k([len(g) for g in groups], k)
    labels = np.empty(n, dtype=int)
    diag = {"tau": tau, "eps_for_mean_step": eps_for_mean_step, "precluster_groups": len(groups),
            "stages": []}
    pE_main = None
    offset = 0
    for g, kg in zip(groups, ks):
        assign, pE, sd = _cluster_component(X[g], int(kg), t, tau, pe_degree, E, rng, settings)
        labels[g] = assign.labels + offset
        offset += int(kg)
        diag["stages"].append(sd)
        if pE_main is None:
            pE_main = pE
    assignment = ClusterAssignment(labels, k)
    means = np.empty((k, d))
    mean_diag = []
    for j, idx in enumerate(assignment.clusters):
        if idx.size == 0:
            # only after incomplete rounding; every group mean coincides there anyway
            means[j] = X.mean(axis=0)
            mean_diag.append({"status": "empty"})
            continue
        try:
            est = estimate_mean(X[idx], eps_for_mean_step, t, settings=None)
            means[j] = est.mean
            mean_diag.append({"status": est.diagnostics["status"], "n": int(idx.size)})
        except InfeasibleRelaxation as exc:
            means[j] = X[idx].mean(axis=0)
            mean_diag.append({"status": "fallback_empirical", "reason": str(exc), "n": int(idx.size)})
    diag["mean_step"] = mean_diag
    spread = min((float(np.linalg.norm(means[a] - means[b]))
                  for a in range(k) for b in range(a + 1, k)), default=math.inf)
    diag["min_mean_separation"] = spread
    incomplete = any(st.get("rounding_complete") is False for st in diag["stages"])
    diag["degenerate"] = bool(k > 1 and (spread < 1.0 or incomplete))
    diag["wall_time"] = time.perf_counter() - t0
    return MixtureEstimate(means, assignment, diag, pE_main)


def learn_nonuniform(samples, eta: float, t: int = 4, xi: float = 0.05, rng=None, *,
                     tau: float | None = None, c: float = NONUNIFORM_C, pe_degree: int | None = None,
                     settings: SolverSettings | None = None, max_clusters: int | None = None) -> MixtureEstimate:
    """Sweep ``alpha'`` from 1 down to ``eta`` extracting one cluster per feasible SDP.

    Size windows ``(1 +- tau) alpha' n`` use ``tau = xi`` by default (capped
    below 0.1) so consecutive grid points overlap. Sizes are relative to the
    original ``n``; a step is skipped while the window lies above the number
    of points remaining.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = X.shape
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if not xi > 0:
        raise ValueError("xi must be positive")
    rng = np.random.default_rng(rng)
    t0 = time.perf_counter()
    tau = min(xi, 0.099) if tau is None else tau
    settings = _default_settings(settings)
    remaining = np.arange(n)
    clusters: list = []
    log: list = []
    alpha_p = 1.0
    stop = eta - 1e-9
    while alpha_p >= stop and remaining.size:
        if max_clusters is not None and len(clusters) >= max_clusters:
            break
        m = remaining.size
        if (1 - tau) * alpha_p * n > m + 1e-9:
            alpha_p = round(alpha_p - xi, 12)
            continue
        # the program's alpha is relative to the points still present
        alpha_local = min(1.0, alpha_p * n / m)
        entry = {"alpha_prime": alpha_p, "remaining": int(m)}
        Xr = X[remaining]
        try:
            if m == 1:
                W = np.ones((1, 1))
                entry["sdp_status"] = "trivial"
            else:
                Xc = Xr - Xr.mean(axis=0)
                # phase-I first: infeasible windows are common and cheap to reject this way
                _solve_subsets(Xc, alpha_local, t, tau, pe_degree, settings, None)
                pE, sd = _solve_subsets(Xc, alpha_local, t, tau, pe_degree, settings, "frobenius")
                entry.update({k_: sd[k_] for k_ in ("sdp_status", "sdp_iterations", "pe_valid")})
                W = _ww_matrix(pE, m)
            C = round_second_moments_nonuniform(W, alpha_p, xi, d, rng, c)
        except InfeasibleRelaxation as exc:
            entry["outcome"] = "infeasible"
            entry["reason"] = str(exc)
            log.append(entry)
            alpha_p = round(alpha_p - xi, 12)
            continue
        except NoExtractableCluster:
            entry["outcome"] = "no_extractable_cluster"
            log.append(entry)
            alpha_p = round(alpha_p - xi, 12)
            continue
        if C.size == 0:
            entry["outcome"] = "empty_cluster"
            log.append(entry)
            alpha_p = round(alpha_p - xi, 12)
            continue
        entry["outcome"] = "extracted"
        entry["size"] = int(C.size)
        log.append(entry)
        clusters.append(remaining[C])
        remaining = np.delete(remaining, C)
    k = max(1, len(clusters))
    labels = np.full(n, -1)
    for j, idx in enumerate(clusters):
        labels[idx] = j
    means = np.array([X[idx].mean(axis=0) for idx in clusters]) if clusters else np.empty((0, d))
    unassigned = np.flatnonzero(labels < 0)
    if unassigned.size and clusters:
        D = np.linalg.norm(X[unassigned][:, None, :] - means[None, :, :], axis=2)
        labels[unassigned] = np.argmin(D, axis=1)
    elif unassigned.size:
        labels[:] = 0
    diag = {"sweep": log, "tau": tau, "xi": xi, "c": c, "extracted": len(clusters),
            "sizes": [int(len(c_)) for c_ in clusters], "unassigned_after_sweep": int(unassigned.size),
            "wall_time": time.perf_counter() - t0}
    return MixtureEstimate(means, ClusterAssignment(labels, k, complete=bool(clusters)), diag)


# --------------------------------------------------------------------------
# identifiability oracle


def unit_grid(d: int, size: int = 10_000, rng=None) -> np.ndarray:
    """Evenly spaced unit vectors for d = 2, random ones otherwise."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = np.linspace(0.0, 2 * math.pi, size, endpoint=False)
        return np.column_stack([np.cos(th), np.sin(th)])
    G = np.random.default_rng(rng).standard_normal((size, d))
    return G / np.linalg.norm(G, axis=1, keepdims=True)


def empirical_moment_ok(points, t: int, grid, center=None) -> bool:
    """``(1/|S|) sum <x - c, u>^t <= 2 t^{t/2}`` for every grid direction ``u``.

    ``c`` is the empirical mean of ``points`` unless ``center`` is given.
    """
    P = np.atleast_2d(points)
    Y = P - (P.mean(axis=0) if center is None else np.asarray(center, dtype=float))
    proj = Y @ grid.T
    return bool(np.max(np.mean(proj ** t, axis=0)) <= 2 * t ** (t / 2))


def identifiability_check(samples, T, mu_star, t: int = 4, alpha: float = 0.5, grid=None) -> dict:
    """Exhaustive check of the subset identifiability bound.

    Every ``S`` of size ``alpha n`` that meets ``T`` and satisfies the empirical
    moment inequality must have ``||mu_S - mu*|| <= 4 sqrt(t) (|T|/|S cap T|)^(1/t)``.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = X.shape
    T = np.asarray(sorted(set(int(i) for i in T)))
    grid = unit_grid(d) if grid is None else grid
    size = int(round(alpha * n))
    inT = np.zeros(n, dtype=bool)
    inT[T] = True
    checked = qualifying = violations = 0
    worst = 0.0
    for S in itertools.combinations(range(n), size):
        S = np.asarray(S)
        overlap = int(inT[S].sum())
        if overlap == 0:
            continue
        checked += 1
        if not empirical_moment_ok(X[S], t, grid):
            continue
        qualifying += 1
        err = float(np.linalg.norm(X[S].mean(axis=0) - mu_star))
        bound = 4 * math.sqrt(t) * (T.size / overlap) ** (1 / t)
        worst = max(worst, err / bound)
        violations += err > bound
    # the planted set must satisfy the bound about its own mean and about mu*
    instance_ok = empirical_moment_ok(X[T], t, grid) and empirical_moment_ok(X[T], t, grid, mu_star)
    return {"instance_ok": instance_ok, "subsets_checked": checked,
            "qualifying": qualifying, "violations": violations, "worst_ratio": worst,
            "passed": violations == 0}
