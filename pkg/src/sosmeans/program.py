"""The structured subset system over indicator variables w and a mean variable mu.

Axioms, for samples X_1..X_n in R^d:

* booleanness  ``w_i^2 = w_i``
* size         ``(1 - tau) alpha n <= sum_i w_i <= (1 + tau) alpha n``
* mean         ``mu * sum_i w_i = sum_i w_i X_i``
* moments      either ``2 G - M(w, mu) PSD`` (Gaussian warm-up, G the Gaussian
  moment matrix) or an explicit SoS identity through auxiliary Gram
  variables (general explicitly-bounded case).

Both matrix constraints act on symmetric tensors only, so they are stated in an
orthonormal basis of symmetric tensors, indexed by multisets. This is a
congruence of the full ``d^{t/2}`` form and drops its identically-zero
antisymmetric part, which would otherwise leave the SDP without an interior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement, product
from typing import Sequence

import numpy as np

from .poly import ONE, Monomial, Poly, PolyMatrix, VariableSpace, monomials_up_to
from .sdp import SdpSolution, SolverSettings, solve
from .sos_core import MomentRelaxation, PseudoExpectation, sos_certify

__all__ = [
    "GaussianMomentRhs",
    "StructuredSubsetProgram",
    "build_program",
    "build_sdp",
    "MomentSdp",
    "find_pseudoexpectation",
    "verify_indicator_satisfiability",
    "SatisfiabilityReport",
    "gaussian_moment",
    "symmetric_multisets",
]

VARIANTS = ("gaussian_warmup", "general_explicit")


def _double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def gaussian_moment(exponents: Sequence[int]) -> float:
    """``E prod X_a^{e_a}`` for X ~ N(0, I) (Isserlis/Wick)."""
    out = 1
    for e in exponents:
        if e % 2:
            return 0.0
        out *= _double_factorial(e - 1)
    return float(out)


@dataclass(frozen=True)
class GaussianMomentRhs:
    """``E[X^{(t/2)} (X^{(t/2)})^T]`` for X ~ N(0, I_d), tensor indices row-major."""

    t: int
    d: int

    @property
    def matrix(self) -> np.ndarray:
        return _gaussian_matrix(self.t, self.d)


@lru_cache(maxsize=None)
def _gaussian_matrix(t: int, d: int) -> np.ndarray:
    h = t // 2
    idx = list(product(range(d), repeat=h))
    G = np.empty((len(idx), len(idx)))
    for r, I in enumerate(idx):
        for c, J in enumerate(idx):
            e = [0] * d
            for a in I + J:
                e[a] += 1
            G[r, c] = gaussian_moment(e)
    G.setflags(write=False)
    return G


def symmetric_multisets(d: int, h: int) -> list:
    """Exponent vectors of size-h multisets over [d], graded-lex order."""
    out = []
    for combo in combinations_with_replacement(range(d), h):
        e = [0] * d
        for a in combo:
            e[a] += 1
        out.append(tuple(e))
    return out


def _orbit_size(e: Sequence[int]) -> int:
    out = math.factorial(sum(e))
    for a in e:
        out //= math.factorial(a)
    return out


def symmetric_basis(d: int, h: int) -> np.ndarray:
    """Orthonormal basis (columns) of symmetric tensors in (R^d)^{(x)h}."""
    ms = symmetric_multisets(d, h)
    col = {m: c for c, m in enumerate(ms)}
    P = np.zeros((d ** h, len(ms)))
    for r, I in enumerate(product(range(d), repeat=h)):
        e = [0] * d
        for a in I:
            e[a] += 1
        e = tuple(e)
        P[r, col[e]] = 1.0 / math.sqrt(_orbit_size(e))
    return P


def _check_t(t: int) -> None:
    if t < 4 or t % 2 or (t & (t - 1)):
        raise ValueError("t must be an even power of two, at least 4")


@dataclass
class StructuredSubsetProgram:
    samples: np.ndarray
    alpha: float
    t: int
    tau: float
    variant: str
    space: VariableSpace
    equalities: list
    scalar_inequalities: list
    matrix_inequalities: list
    aux_pairs: list = field(default_factory=list)
    names: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def w_index(self, i: int) -> int:
        return i

    def mu_index(self, a: int) -> int:
        return self.n + a

    @property
    def w_vars(self) -> list:
        return list(range(self.n))

    @property
    def mu_vars(self) -> list:
        return list(range(self.n, self.n + self.d))

    @property
    def aux_vars(self) -> list:
        return list(range(self.n + self.d, self.space.count))

    @property
    def boolean(self) -> frozenset:
        return frozenset(self.w_vars)

    @property
    def max_degree(self) -> int:
        degs = [p.degree for p in self.equalities + self.scalar_inequalities]
        degs += [M.degree for M in self.matrix_inequalities]
        return max(degs)

    @property
    def default_pe_degree(self) -> int:
        D = max(2 * self.t, self.max_degree + 2)
        return D + (D % 2)

    def variable_scales(self) -> np.ndarray:
        s = np.ones(self.space.count)
        mu_scale = max(1.0, float(np.max(np.abs(self.samples))) if self.samples.size else 1.0)
        s[self.mu_vars] = mu_scale
        if self.aux_vars:
            s[self.aux_vars] = 2.0 * self.t ** (self.t / 2)
        return s

    def relaxation(self, pe_degree: int | None = None, sparsity: str = "clique",
                   global_block: bool | None = None) -> MomentRelaxation:
        """Moment relaxation of this program.

        ``sparsity="dense"`` uses one moment matrix over all variables.
        ``"clique"`` uses one block per sample over ``(w_i, mu)`` plus, when
        ``global_block`` is true, a degree-2 block over all variables (needed
        for pE[w w^T] and for the auxiliary variables).
        """
        D = self.default_pe_degree if pe_degree is None else int(pe_degree)
        if D % 2:
            raise ValueError("pe_degree must be even")
        if D < self.max_degree + 2:
            raise ValueError(f"pe_degree {D} below minimum {self.max_degree + 2}")
        if sparsity not in ("dense", "clique"):
            raise ValueError("sparsity must be 'dense' or 'clique'")
        mu_basis = monomials_up_to(self.mu_vars, D // 2)
        if sparsity == "dense":
            cliques = None
            gvars = None
        else:
            cliques = [[i] + self.mu_vars for i in range(self.n)]
            if global_block is None:
                global_block = bool(self.aux_vars)
            gvars = list(range(self.space.count)) if global_block else None
        return MomentRelaxation(
            self.space, D,
            equalities=self.equalities,
            inequalities=self.scalar_inequalities,
            matrix_inequalities=self.matrix_inequalities,
            boolean=self.boolean,
            cliques=cliques,
            global_vars=gvars,
            localizer_bases=[mu_basis] if sparsity == "clique" else (),
            scales=self.variable_scales(),
            names=self.names,
        )

    def solution_point(self, subset: Sequence[int]) -> np.ndarray:
        """Variable vector with w = indicator of ``subset`` and mu = subset mean.

        For the general variant the auxiliary Gram variables come from an SoS
        certificate of the moment identity; a ValueError is raised if none
        exists.
        """
        subset = np.asarray(sorted(set(int(i) for i in subset)), dtype=int)
        x = np.zeros(self.space.count)
        x[subset] = 1.0
        mu = self.samples[subset].mean(axis=0)
        x[self.mu_vars] = mu
        if self.aux_vars:
            Mq = _explicit_gram(self.samples[subset] - mu, self.alpha * self.n, self.t)
            if Mq is None:
                raise ValueError("moment identity is not SoS for this subset")
            for k, (g, r) in enumerate(self.aux_pairs):
                x[self.aux_vars[k]] = Mq[g, r]
        return x

    def evaluate_point(self, x: np.ndarray) -> dict:
        eq = max((abs(p.eval(x)) for p in self.equalities), default=0.0)
        ineq = min((p.eval(x) for p in self.scalar_inequalities), default=math.inf)
        mat = min((float(np.linalg.eigvalsh(M.evaluate(x))[0]) for M in self.matrix_inequalities),
                  default=math.inf)
        return {"max_equality_residual": eq, "min_inequality": ineq, "min_matrix_eigenvalue": mat}

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "alpha": self.alpha,
            "t": self.t,
            "tau": self.tau,
            "variant": self.variant,
            "variables": list(self.space.names),
            "num_variables": self.space.count,
            "counts": {
                "equalities": len(self.equalities),
                "boolean_equalities": self.n,
                "scalar_inequalities": len(self.scalar_inequalities),
                "matrix_inequalities": len(self.matrix_inequalities),
            },
            "degrees": {
                "equalities": [p.degree for p in self.equalities],
                "scalar_inequalities": [p.degree for p in self.scalar_inequalities],
                "matrix_inequalities": [M.degree for M in self.matrix_inequalities],
                "matrix_dims": [M.dim for M in self.matrix_inequalities],
                "max": self.max_degree,
                "default_pe_degree": self.default_pe_degree,
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _explicit_gram(centered: np.ndarray, scale: float, t: int):
    """Gram variables M_q for 2 t^{t/2} ||u||^t - (1/scale) sum <Y_i, u>^t."""
    d = centered.shape[1]
    space = VariableSpace.indexed("u", d)
    u = space.variables()
    sq = sum((v * v for v in u), space.zero())
    target = sq ** (t // 2) * (2.0 * t ** (t / 2))
    for y in centered:
        lin = sum((float(y[a]) * u[a] for a in range(d)), space.zero())
        target = target - (lin ** t) * (1.0 / scale)
    cert = sos_certify(target, t)
    if not cert:
        return None
    # certificate basis is the homogeneous degree-t/2 monomials; rescale by
    # multiplicities so that <u^{(x)}, P Mq P^T u^{(x)}> reproduces it
    ms = symmetric_multisets(d, t // 2)
    pos = {Monomial.from_exponents(e): k for k, e in enumerate(ms)}
    order = [pos[m] for m in cert.basis]
    Q = np.zeros((len(ms), len(ms)))
    Q[np.ix_(order, order)] = cert.gram
    mult = np.array([_orbit_size(e) for e in ms], dtype=float)
    return Q / np.outer(mult, mult)


def build_program(samples, alpha: float, t: int, tau: float,
                  variant: str = "gaussian_warmup") -> StructuredSubsetProgram:
    """Construct the structured subset system for ``samples``."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n == 0:
        raise ValueError("samples must be nonempty")
    _check_t(t)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if not 0 <= tau < 0.1:
        raise ValueError("tau must lie in [0, 0.1)")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    h = t // 2
    ms = symmetric_multisets(d, h)
    q = len(ms)
    names = [f"w{i}" for i in range(n)] + [f"mu{a}" for a in range(d)]
    aux_pairs = []
    if variant == "general_explicit":
        aux_pairs = [(g, r) for g in range(q) for r in range(g, q)]
        names += [f"M{g}_{r}" for g, r in aux_pairs]
    space = VariableSpace(tuple(names))
    w = [space.var(i) for i in range(n)]
    mu = [space.var(n + a) for a in range(d)]
    labels: dict = {}

    equalities = [wi * wi - wi for wi in w]
    for i in range(n):
        labels[("eq", i)] = f"bool{i}"
    sum_w = sum(w, space.zero())
    for a in range(d):
        labels[("eq", len(equalities))] = f"mean{a}"
        rhs = Poly(space, {Monomial(((i, 1),)): float(X[i, a]) for i in range(n)})
        equalities.append(mu[a] * sum_w - rhs)
    an = alpha * n
    ineqs = [sum_w - (1 - tau) * an, (1 + tau) * an - sum_w]
    labels[("ineq", 0)] = "size_lo"
    labels[("ineq", 1)] = "size_hi"

    # (X_i - mu)^e for each sample and coordinate, cached by exponent
    diff_pows = []
    for i in range(n):
        per = []
        for a in range(d):
            base = float(X[i, a]) - mu[a]
            pw = [space.const(1.0)]
            for _ in range(t):
                pw.append(pw[-1] * base)
            per.append(pw)
        diff_pows.append(per)

    def diff_monomial(i, e):
        out = space.const(1.0)
        for a in range(d):
            if e[a]:
                out = out * diff_pows[i][a][e[a]]
        return out

    matrices = []
    if variant == "gaussian_warmup":
        entries = [[None] * q for _ in range(q)]
        for g in range(q):
            for r in range(g, q):
                e = tuple(x + y for x, y in zip(ms[g], ms[r]))
                c = math.sqrt(_orbit_size(ms[g]) * _orbit_size(ms[r]))
                acc: dict = {}
                for i in range(n):
                    poly = diff_monomial(i, e)
                    for m, cf in poly.terms.items():
                        key = Monomial(((i, 1),)) * m
                        acc[key] = acc.get(key, 0.0) - c * cf / an
                acc[ONE] = acc.get(ONE, 0.0) + 2.0 * c * gaussian_moment(e)
                entries[g][r] = entries[r][g] = Poly(space, acc)
        matrices.append(PolyMatrix(space, entries))
        labels[("matrix", 0)] = "moment_bound"
    else:
        aux_index = {pair: n + d + k for k, pair in enumerate(aux_pairs)}

        def aux(g, r):
            return space.var(aux_index[(min(g, r), max(g, r))])

        matrices.append(PolyMatrix(space, [[aux(g, r) for r in range(q)] for g in range(q)]))
        labels[("matrix", 0)] = "gram_psd"
        # identity coefficients over degree-t monomials in u
        for alpha_u in symmetric_multisets(d, t):
            lhs = space.zero()
            for g in range(q):
                for r in range(q):
                    if tuple(x + y for x, y in zip(ms[g], ms[r])) == alpha_u:
                        lhs = lhs + aux(g, r) * float(_orbit_size(ms[g]) * _orbit_size(ms[r]))
            norm_coef = 0.0
            if all(x % 2 == 0 for x in alpha_u):
                half = [x // 2 for x in alpha_u]
                norm_coef = _orbit_size(half)
            target = space.const(2.0 * t ** (t / 2) * norm_coef)
            mcoef = float(_orbit_size(alpha_u))
            acc: dict = {}
            for i in range(n):
                for m, cf in diff_monomial(i, alpha_u).terms.items():
                    key = Monomial(((i, 1),)) * m
                    acc[key] = acc.get(key, 0.0) - mcoef * cf / an
            target = target + Poly(space, acc)
            labels[("eq", len(equalities))] = "identity" + "".join(map(str, alpha_u))
            equalities.append(lhs - target)
    return StructuredSubsetProgram(X, float(alpha), int(t), float(tau), variant, space,
                                   equalities, ineqs, matrices, aux_pairs, labels)


@dataclass
class MomentSdp:
    """An SDP lowered from a program, plus the map back to pseudoexpectations."""

    program: StructuredSubsetProgram
    relaxation: MomentRelaxation
    problem: object

    def extract(self, solution: SdpSolution) -> PseudoExpectation:
        return self.relaxation.extract(solution)


def build_sdp(program: StructuredSubsetProgram, pe_degree: int | None = None,
              sparsity: str = "clique", objective=None, global_block: bool | None = None,
              margin: float = 0.0) -> MomentSdp:
    """Lower ``program`` to an SDP over degree-``pe_degree`` moments.

    ``objective="frobenius"`` minimises ``||pE[w w^T]||_F``; ``None`` gives a
    feasibility problem. ``margin`` relaxes each PSD block to ``>= -margin I``.
    """
    if objective == "frobenius" and global_block is None:
        global_block = True
    rel = program.relaxation(pe_degree, sparsity=sparsity, global_block=global_block)
    obj = None
    if objective == "frobenius":
        n = program.n
        obj = ("frobenius", [[Monomial(((i, 1),)) * Monomial(((j, 1),)) for j in range(n)]
                             for i in range(n)])
    elif objective is not None:
        obj = objective
    return MomentSdp(program, rel, rel.to_sdp(obj, margin=margin))


def find_pseudoexpectation(program: StructuredSubsetProgram, pe_degree: int | None = None,
                           objective=None, sparsity: str = "clique",
                           settings: SolverSettings | None = None, global_block: bool | None = None,
                           margin: float = 0.0):
    """Solve the relaxation; returns ``(pE or None, SdpSolution, MomentSdp)``."""
    msdp = build_sdp(program, pe_degree, sparsity=sparsity, objective=objective,
                     global_block=global_block, margin=margin)
    sol = solve(msdp.problem, settings or SolverSettings())
    pE = msdp.extract(sol) if sol.status == "optimal" else None
    return pE, sol, msdp


@dataclass
class SatisfiabilityReport:
    size_ok: bool
    size: int
    size_bounds: tuple
    boolean_ok: bool
    mean_residual: float
    slack_min_eigenvalue: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.slack_min_eigenvalue

    def as_dict(self) -> dict:
        return {
            "size_ok": self.size_ok, "size": self.size, "size_bounds": list(self.size_bounds),
            "boolean_ok": self.boolean_ok, "mean_residual": self.mean_residual,
            "slack_min_eigenvalue": self.slack_min_eigenvalue, "passed": self.passed,
        }


def moment_slack(points: np.ndarray, mu: np.ndarray, t: int, scale: float) -> np.ndarray:
    """``P^T (2 G - M) P`` for ``M = (1/scale) sum (x - mu)^{(x)t/2} (...)^T``."""
    d = points.shape[1]
    h = t // 2
    ms = symmetric_multisets(d, h)
    Y = points - mu
    V = np.empty((Y.shape[0], len(ms)))
    for k, e in enumerate(ms):
        V[:, k] = math.sqrt(_orbit_size(e)) * np.prod(Y ** np.array(e), axis=1)
    P = symmetric_basis(d, h)
    G = P.T @ _gaussian_matrix(t, d) @ P
    return 2.0 * G - V.T @ V / scale


def verify_indicator_satisfiability(samples, subset, t: int, tau: float, alpha: float | None = None,
                                    variant: str = "gaussian_warmup", tol: float = 0.0) -> SatisfiabilityReport:
    """Check the axioms at w = indicator of ``subset``, mu = subset mean."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    S = np.asarray(sorted(set(int(i) for i in subset)), dtype=int)
    if S.size == 0:
        raise ValueError("subset must be nonempty")
    n = X.shape[0]
    alpha = S.size / n if alpha is None else float(alpha)
    an = alpha * n
    lo, hi = (1 - tau) * an, (1 + tau) * an
    size_ok = lo - 1e-9 <= S.size <= hi + 1e-9
    mu = X[S].mean(axis=0)
    mean_res = float(np.max(np.abs(mu * S.size - X[S].sum(axis=0))))
    if variant == "gaussian_warmup":
        slack = moment_slack(X[S], mu, t, an)
        lam = float(np.linalg.eigvalsh(slack)[0])
    else:
        Mq = _explicit_gram(X[S] - mu, an, t)
        lam = 0.0 if Mq is not None else -math.inf
        if Mq is not None:
            lam = float(np.linalg.eigvalsh(Mq)[0])
    passed = size_ok and lam >= -tol
    return SatisfiabilityReport(size_ok, int(S.size), (lo, hi), True, mean_res, lam, passed)
