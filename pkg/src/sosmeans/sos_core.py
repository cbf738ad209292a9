"""Pseudoexpectations, moment/localizing matrices, SoS certificates, and the
moment relaxation that turns a polynomial system into an SDP."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .poly import ONE, Monomial, Poly, PolyMatrix, VariableSpace, monomial_product, monomials_up_to
from .sdp import SdpProblem, SdpSolution, SolverSettings, solve

__all__ = [
    "PseudoExpectation",
    "MomentMatrix",
    "SosCertificate",
    "moment_matrix",
    "localizing_matrix",
    "matrix_localizing",
    "pe_eval",
    "sos_certify",
    "certify_explicit_boundedness",
    "MomentRelaxation",
    "SatisfactionReport",
    "check_satisfies",
    "POSITIVITY_TOL",
]

POSITIVITY_TOL = 1e-6


class DegreeOverflow(ValueError):
    pass


def _reduce(m: Monomial, boolean: frozenset) -> Monomial:
    return m.reduce_boolean(boolean) if boolean else m


class PseudoExpectation:
    """Linear functional on monomials of degree <= ``degree``.

    Either dictionary-backed (``moments``) or backed by a finite weighted set of
    points (``atoms``), in which case moments are computed on demand. Boolean
    variables are reduced (x**2 -> x) before lookup.
    """

    def __init__(self, space: VariableSpace, degree: int, moments: Mapping | None = None,
                 boolean: Iterable[int] = (), atoms=None, weights=None, meta: dict | None = None):
        if degree < 0 or degree % 2:
            raise ValueError("degree must be a nonnegative even integer")
        self.space = space
        self.degree = int(degree)
        self.boolean = frozenset(int(i) for i in boolean)
        self.meta = dict(meta or {})
        self._atoms = None
        if atoms is not None:
            atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
            if atoms.shape[1] != space.count:
                raise ValueError("atoms must have one coordinate per variable")
            w = np.full(atoms.shape[0], 1.0 / atoms.shape[0]) if weights is None else \
                np.asarray(weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
                raise ValueError("atom weights must form a probability vector")
            self._atoms = (atoms, w)
            self._moments = {}
        else:
            self._moments = {}
            for m, v in (moments or {}).items():
                m = m if isinstance(m, Monomial) else Monomial(m)
                self._moments[_reduce(m, self.boolean)] = float(v)
            self._moments.setdefault(ONE, 1.0)

    # constructors
    @classmethod
    def point_mass(cls, space, point, degree, boolean=()) -> "PseudoExpectation":
        return cls(space, degree, boolean=boolean, atoms=np.asarray(point, float)[None, :])

    @classmethod
    def from_distribution(cls, space, points, degree, weights=None, boolean=()):
        return cls(space, degree, boolean=boolean, atoms=points, weights=weights)

    @classmethod
    def mixture(cls, pes: Sequence["PseudoExpectation"], weights: Sequence[float],
                monomials: Iterable[Monomial]) -> "PseudoExpectation":
        """Convex combination evaluated on ``monomials``."""
        weights = np.asarray(weights, float)
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must form a probability vector")
        base = pes[0]
        mom = {m: float(sum(w * p[m] for p, w in zip(pes, weights))) for m in monomials}
        mom[ONE] = float(sum(w * p[ONE] for p, w in zip(pes, weights)))
        return cls(base.space, min(p.degree for p in pes), mom, boolean=base.boolean)

    @property
    def is_atomic(self) -> bool:
        return self._atoms is not None

    def support(self) -> list:
        if self._atoms is not None:
            raise ValueError("atomic pseudoexpectations have full support")
        return sorted(self._moments, key=Monomial.grlex_key)

    def __getitem__(self, m) -> float:
        m = m if isinstance(m, Monomial) else Monomial(m)
        if m.degree > self.degree:
            raise DegreeOverflow(f"monomial of degree {m.degree} exceeds pE degree {self.degree}")
        m = _reduce(m, self.boolean)
        v = self._moments.get(m)
        if v is not None:
            return v
        if self._atoms is None:
            raise KeyError(f"moment {m.to_string(self.space)} is outside the support")
        pts, w = self._atoms
        col = np.ones(pts.shape[0])
        for i, e in m:
            col = col * pts[:, i] ** e
        v = float(w @ col)
        self._moments[m] = v
        return v

    def __contains__(self, m) -> bool:
        try:
            self[m]
            return True
        except (KeyError, DegreeOverflow):
            return False

    def __call__(self, p: Poly) -> float:
        return pe_eval(self, p)

    def moment_vector(self, monomials: Sequence[Monomial]) -> np.ndarray:
        return np.array([self[m] for m in monomials])

    def to_json(self, monomials: Iterable[Monomial] | None = None) -> dict:
        if monomials is None:
            monomials = self.support()
        return {m.to_string(): self[m] for m in monomials}

    @classmethod
    def from_json(cls, data: Mapping[str, float], space: VariableSpace, degree: int,
                  boolean=()) -> "PseudoExpectation":
        mom = {}
        for key, v in data.items():
            p = Poly.parse("1.0" if key == "1" else f"1.0 * {key}", space)
            (m,) = p.terms
            mom[m] = float(v)
        return cls(space, degree, mom, boolean=boolean)


def pe_eval(pE: PseudoExpectation, p: Poly) -> float:
    if p.degree > pE.degree:
        raise DegreeOverflow(f"polynomial degree {p.degree} exceeds pE degree {pE.degree}")
    return float(math.fsum(c * pE[m] for m, c in p.terms.items()))


@dataclass
class MomentMatrix:
    row_monomials: list
    entries: np.ndarray

    def min_eigenvalue(self) -> float:
        if self.entries.size == 0:
            return math.inf
        return float(np.linalg.eigvalsh(self.entries)[0])


def _basis(pE: PseudoExpectation, half_degree: int, variables=None) -> list:
    vars_ = range(pE.space.count) if variables is None else variables
    return monomials_up_to(vars_, half_degree, pE.boolean)


def moment_matrix(pE: PseudoExpectation, half_degree: int, variables=None) -> MomentMatrix:
    if 2 * half_degree > pE.degree:
        raise DegreeOverflow("2 * half_degree exceeds the pseudoexpectation degree")
    basis = _basis(pE, half_degree, variables)
    L = len(basis)
    M = np.empty((L, L))
    for i in range(L):
        for j in range(i, L):
            M[i, j] = M[j, i] = pE[monomial_product(basis[i], basis[j])]
    return MomentMatrix(basis, M)


def localizing_matrix(pE: PseudoExpectation, g: Poly, half_degree: int, variables=None) -> MomentMatrix:
    if 2 * half_degree + max(g.degree, 0) > pE.degree:
        raise DegreeOverflow("localizing matrix degree exceeds the pseudoexpectation degree")
    basis = _basis(pE, half_degree, variables)
    L = len(basis)
    M = np.empty((L, L))
    for i in range(L):
        for j in range(i, L):
            mm = monomial_product(basis[i], basis[j])
            M[i, j] = M[j, i] = math.fsum(c * pE[monomial_product(m, mm)] for m, c in g.terms.items())
    return MomentMatrix(basis, M)


def matrix_localizing(pE: PseudoExpectation, M: PolyMatrix, half_degree: int, variables=None) -> np.ndarray:
    """Block matrix ``[pE[m_i m_j M_ab]]`` indexed by (monomial i, matrix row a)."""
    if 2 * half_degree + max(M.degree, 0) > pE.degree:
        raise DegreeOverflow("matrix localizer degree exceeds the pseudoexpectation degree")
    basis = _basis(pE, half_degree, variables)
    L, r = len(basis), M.dim
    out = np.empty((L * r, L * r))
    for i in range(L):
        for j in range(i, L):
            mm = monomial_product(basis[i], basis[j])
            for a in range(r):
                for b_ in range(r):
                    v = math.fsum(c * pE[monomial_product(m, mm)] for m, c in M.entries[a][b_].terms.items())
                    out[i * r + a, j * r + b_] = v
                    out[j * r + b_, i * r + a] = v
    return out


# --------------------------------------------------------------------------
# SoS certificates


@dataclass
class SosCertificate:
    basis: list
    gram: np.ndarray
    residual: float
    min_eigenvalue: float
    phase1_value: float = 0.0

    def evaluate_gram(self, point) -> float:
        z = np.array([m.evaluate(point) for m in self.basis])
        return float(z @ self.gram @ z)


class NotSoS:
    """Returned by :func:`sos_certify` when no Gram matrix exists."""

    def __init__(self, reason: str, phase1_value: float | None = None):
        self.reason = reason
        self.phase1_value = phase1_value

    def __bool__(self):
        return False

    def __repr__(self):
        return f"NotSoS({self.reason!r})"


def sos_certify(p: Poly, degree: int | None = None, tol: float = POSITIVITY_TOL,
                settings: SolverSettings | None = None):
    """Search for ``Q`` PSD with ``p = z^T Q z`` over monomials of degree <= degree/2.

    Returns an :class:`SosCertificate` or a falsy :class:`NotSoS`.
    """
    degree = p.degree if degree is None else int(degree)
    if degree < 0:
        degree = 0
    if degree % 2:
        raise ValueError("certificate degree must be even")
    if p.degree > degree:
        raise ValueError("polynomial degree exceeds certificate degree")
    variables = sorted(p.variables()) or [0]
    basis = monomials_up_to(variables, degree // 2)
    if p.terms and all(m.degree == degree for m in p.terms):
        # homogeneous: squares of lower-degree monomials cannot cancel
        basis = [m for m in basis if m.degree == degree // 2]
    L = len(basis)
    rows: dict = {}
    for i in range(L):
        for j in range(i, L):
            rows.setdefault(monomial_product(basis[i], basis[j]), []).append((i, j))
    missing = [m for m in p.terms if m not in rows]
    if missing:
        return NotSoS("polynomial has monomials outside the square of the basis")
    keys = sorted(rows, key=Monomial.grlex_key)
    k_, i_, j_, v_ = [], [], [], []
    b = np.zeros(len(keys))
    for k, m in enumerate(keys):
        b[k] = p.coefficient(m)
        for i, j in rows[m]:
            # Q_ij + Q_ji both contribute to the coefficient of m
            # a symmetric unit entry at (i, j) gives A . Q = Q_ij + Q_ji
            k_.append(k); i_.append(i); j_.append(j); v_.append(1.0)
    problem = SdpProblem.from_triplets([L], len(keys), [(k_, i_, j_, v_)], b, mode="feasibility")
    s = settings or SolverSettings()
    sol = solve(problem, s)
    if sol.status != "optimal":
        return NotSoS(sol.message, sol.phase1_value)
    Q = sol.primal[0]
    resid = 0.0
    for k, m in enumerate(keys):
        got = sum(Q[i, j] * (1.0 if i == j else 2.0) for i, j in rows[m])
        resid = max(resid, abs(got - b[k]))
    lam_min = float(np.linalg.eigvalsh(Q)[0])
    if lam_min < -tol or resid > tol:
        return NotSoS(f"certificate outside tolerance (min eig {lam_min:.2e}, residual {resid:.2e})",
                      sol.phase1_value)
    return SosCertificate(basis, Q, resid, lam_min, sol.phase1_value or 0.0)


def _multinomial(s: int, theta: Sequence[int]) -> int:
    out = math.factorial(s)
    for a in theta:
        out //= math.factorial(a)
    return out


def directional_moment_poly(moment_oracle: Callable, space: VariableSpace, s: int) -> Poly:
    """``E <Y - mu, u>^s`` as a polynomial in u."""
    d = space.count
    terms = {}
    for theta in _compositions(s, d):
        c = _multinomial(s, theta) * float(moment_oracle(tuple(theta)))
        if c:
            terms[Monomial.from_exponents(theta)] = c
    return Poly(space, terms)


def _compositions(s: int, d: int):
    if d == 1:
        yield (s,)
        return
    for a in range(s, -1, -1):
        for rest in _compositions(s - a, d - 1):
            yield (a,) + rest


def certify_explicit_boundedness(moment_oracle: Callable, d: int, t: int, sigma: float = 1.0,
                                 tol: float = POSITIVITY_TOL) -> list:
    """Check that ``(sigma s)^{s/2} ||u||^s - E<Y - mu, u>^s`` is SoS for even s <= t.

    ``moment_oracle(theta)`` returns ``E[(Y - mu)^theta]`` for a multi-index.
    Returns one dict per s with keys ``s, sos, residual, min_eigenvalue``.
    """
    if t % 2:
        raise ValueError("t must be even")
    space = VariableSpace.indexed("u", d)
    sq = space.zero()
    for v in space.variables():
        sq = sq + v * v
    report = []
    for s in range(2, t + 1, 2):
        try:
            target = directional_moment_poly(moment_oracle, space, s)
        except Exception as exc:  # oracle failure
            raise RuntimeError(f"moment oracle failed at order {s}: {exc}") from exc
        p = (sq ** (s // 2)) * ((sigma * s) ** (s / 2)) - target
        cert = sos_certify(p, s, tol=tol)
        report.append({
            "s": s,
            "sos": bool(cert),
            "residual": cert.residual if cert else None,
            "min_eigenvalue": cert.min_eigenvalue if cert else None,
            "polynomial": p,
            "certificate": cert if cert else None,
            "reason": None if cert else cert.reason,
        })
    return report


# --------------------------------------------------------------------------
# moment relaxation


@dataclass
class _BlockSpec:
    name: str
    kind: str  # moment | localizing | matrix
    basis: list
    inner_dim: int
    rows: np.ndarray
    cols: np.ndarray
    var: np.ndarray
    coef: np.ndarray
    const: np.ndarray  # dense (dim, dim)
    norm: float

    @property
    def dim(self) -> int:
        return len(self.basis) * self.inner_dim


@dataclass
class SatisfactionReport:
    normalization_residual: float
    max_equality_residual: float
    min_eigenvalue: float
    min_moment_eigenvalue: float
    block_min_eigenvalues: dict
    passed: bool
    tol: float

    def as_dict(self) -> dict:
        return {
            "normalization_residual": self.normalization_residual,
            "max_equality_residual": self.max_equality_residual,
            "min_eigenvalue": self.min_eigenvalue,
            "min_moment_eigenvalue": self.min_moment_eigenvalue,
            "passed": self.passed,
            "tol": self.tol,
        }


def is_boolean_axiom(p: Poly) -> int | None:
    """Index i if ``p`` is +-(x_i^2 - x_i), else None."""
    if len(p.terms) != 2:
        return None
    items = list(p.terms.items())
    ms = sorted(items, key=lambda mc: mc[0].degree)
    (m1, c1), (m2, c2) = ms
    if m1.degree == 1 and len(m2) == 1 and m2[0] == (m1[0][0], 2) and c1 == -c2:
        return m1[0][0]
    return None


class MomentRelaxation:
    """Moment relaxation of a polynomial system at degree ``degree``.

    The pseudoexpectation is indexed by a shared moment vector; every block
    refers to it, so entry consistency is structural. Boolean variables are
    handled by multilinear reduction.

    Parameters
    ----------
    cliques : list of variable-index lists, optional
        If given, one moment block per clique replaces the full moment matrix
        (a correlative-sparsity relaxation). ``global_vars`` adds a degree-2
        moment block over those variables.
    localizer_bases : list of monomial lists, optional
        Extra candidate bases for localizing blocks.
    scales : per-variable scale factors; the SDP works in ``x / scales``.
    """

    def __init__(self, space: VariableSpace, degree: int, equalities=(), inequalities=(),
                 matrix_inequalities=(), boolean=(), cliques=None, global_vars=None,
                 localizer_bases=(), scales=None, products=True, names=None):
        if degree % 2:
            raise ValueError("relaxation degree must be even")
        self.space = space
        self.degree = int(degree)
        boolean = set(int(i) for i in boolean)
        eqs = []
        for h in equalities:
            i = is_boolean_axiom(h)
            if i is not None:
                boolean.add(i)
            else:
                eqs.append(h)
        self.boolean = frozenset(boolean)
        self.scales = np.ones(space.count) if scales is None else np.asarray(scales, float)
        names = names or {}
        D, h = self.degree, self.degree // 2
        bl = self.boolean

        def red(m):
            return m.reduce_boolean(bl) if bl else m

        # moment bases
        if cliques is None:
            bases = [("moment", monomials_up_to(range(space.count), h, bl))]
        else:
            bases = [(f"moment[{c}]", monomials_up_to(cl, h, bl)) for c, cl in enumerate(cliques)]
            if global_vars is not None:
                bases.append(("moment[global]", monomials_up_to(global_vars, 1, bl)))
        self.sparsity = "dense" if cliques is None else "clique"
        support = set()
        for _, B in bases:
            L = len(B)
            for i in range(L):
                for j in range(i, L):
                    support.add(red(monomial_product(B[i], B[j])))
        self.support = support
        self.moments = sorted((m for m in support if m), key=Monomial.grlex_key)
        self.index = {m: k for k, m in enumerate(self.moments)}
        self.moment_scale = np.array([self._scale(m) for m in self.moments])

        self.blocks: list = []
        for name, B in bases:
            self.blocks.append(self._lower_block(name, "moment", B, None))

        # scalar localizers, including pairwise products
        scaled_ineqs = [(names.get(("ineq", i), f"ineq{i}"), g) for i, g in enumerate(inequalities)]
        if products:
            for (i, (n1, g1)), (j, (n2, g2)) in itertools.combinations(list(enumerate(scaled_ineqs)), 2):
                scaled_ineqs.append((f"{n1}*{n2}", (g1 * g2).reduce_boolean(bl)))
        cand = [B for _, B in bases] + [list(B) for B in localizer_bases]
        for name, g in scaled_ineqs:
            for k, B in enumerate(self._localizer_bases(g.terms.keys(), cand)):
                self.blocks.append(self._lower_block(f"{name}/{k}", "localizing", B, g))
        for i, M in enumerate(matrix_inequalities):
            mon = set()
            for row in M.entries:
                for e in row:
                    mon.update(e.terms.keys())
            for k, B in enumerate(self._localizer_bases(mon, cand)):
                self.blocks.append(self._lower_block(f"{names.get(('matrix', i), f'matrix{i}')}/{k}",
                                                     "matrix", B, M))

        # equalities: pE[m * h] = 0 for admissible multipliers m
        self.eq_rows = []
        for i, hpoly in enumerate(eqs):
            hterms = list(hpoly.reduce_boolean(bl).terms.items())
            if not hterms:
                continue
            hdeg = max(m.degree for m, _ in hterms)
            for mult in [ONE] + self.moments:
                if mult.degree + hdeg > D:
                    continue
                acc: dict = {}
                ok = True
                for m, c in hterms:
                    r = red(monomial_product(mult, m))
                    if r not in support:
                        ok = False
                        break
                    acc[r] = acc.get(r, 0.0) + c * self._scale(r)
                if not ok:
                    continue
                const = acc.pop(ONE, 0.0)
                acc = {k: v for k, v in acc.items() if v != 0.0}
                if not acc and const == 0.0:
                    continue
                scale = max([abs(v) for v in acc.values()] + [abs(const)])
                self.eq_rows.append((
                    f"{names.get(('eq', i), f'eq{i}')}*{mult.to_string()}",
                    np.array([self.index[k] for k in acc], dtype=np.int64),
                    np.array(list(acc.values())) / scale,
                    const / scale,
                ))

    # helpers -------------------------------------------------------------
    def _scale(self, m: Monomial) -> float:
        s = 1.0
        for i, e in m:
            s *= self.scales[i] ** e
        return s

    def _localizer_bases(self, g_monomials, candidates) -> list:
        """Greedy maximal compatible subsets of each candidate basis."""
        bl = self.boolean
        support = self.support
        # monomials most likely to leave the support go first
        gms = sorted(g_monomials, key=lambda m: (-len(m), -m.degree))
        verdict: dict = {}

        def fits(ab):
            ok = verdict.get(ab)
            if ok is None:
                ok = True
                for gm in gms:
                    r = monomial_product(gm, ab)
                    if bl:
                        r = r.reduce_boolean(bl)
                    if r not in support:
                        ok = False
                        break
                verdict[ab] = ok
            return ok

        chosen: list = []
        for B in candidates:
            keep: list = []
            for b in B:
                if all(fits(monomial_product(a, b)) for a in keep + [b]):
                    keep.append(b)
            if not keep:
                continue
            ks = set(keep)
            if any(ks <= set(c) for c in chosen):
                continue
            chosen = [c for c in chosen if not set(c) <= ks]
            chosen.append(keep)
        return chosen

    def _lower_block(self, name, kind, B, weight) -> _BlockSpec:
        bl = self.boolean
        L = len(B)
        if weight is None:
            inner = [[{ONE: 1.0}]]
        elif isinstance(weight, PolyMatrix):
            sw = [[e.substitute_scales(self.scales).terms for e in row] for row in weight.entries]
            inner = sw
        else:
            inner = [[weight.substitute_scales(self.scales).terms]]
        r = len(inner)
        dim = L * r
        rows, cols, var, coef = [], [], [], []
        const = np.zeros((dim, dim))
        index = self.index
        for i in range(L):
            for j in range(i, L):
                bb = monomial_product(B[i], B[j])
                for a in range(r):
                    for b_ in range(r):
                        I, J = i * r + a, j * r + b_
                        if I > J:
                            continue
                        acc: dict = {}
                        for m, c in inner[a][b_].items():
                            mm = monomial_product(m, bb)
                            if bl:
                                mm = mm.reduce_boolean(bl)
                            acc[mm] = acc.get(mm, 0.0) + c
                        for mm, c in acc.items():
                            if c == 0.0:
                                continue
                            if not mm:
                                const[I, J] += c
                                if I != J:
                                    const[J, I] += c
                            else:
                                rows.append(I); cols.append(J); var.append(index[mm]); coef.append(c)
        coef = np.array(coef, dtype=float)
        norm = max(float(np.max(np.abs(coef))) if coef.size else 0.0,
                   float(np.max(np.abs(const))) if const.size else 0.0, 1e-300)
        return _BlockSpec(name, kind, list(B), r, np.array(rows, dtype=np.int64),
                          np.array(cols, dtype=np.int64), np.array(var, dtype=np.int64),
                          coef / norm, const / norm, norm)

    # public ----------------------------------------------------------------
    @property
    def num_moments(self) -> int:
        return len(self.moments)

    def block_dims(self) -> list:
        return [blk.dim for blk in self.blocks]

    def summary(self) -> dict:
        kinds: dict = {}
        for blk in self.blocks:
            kinds.setdefault(blk.kind, []).append(blk.dim)
        return {
            "degree": self.degree,
            "sparsity": self.sparsity,
            "num_moments": self.num_moments,
            "num_equality_rows": len(self.eq_rows),
            "blocks": {k: {"count": len(v), "max_dim": max(v), "total_dim": sum(v)} for k, v in kinds.items()},
        }

    def to_sdp(self, objective=None, mode: str | None = None, margin: float = 0.0) -> SdpProblem:
        """Lower to an :class:`SdpProblem` on the dual side.

        ``objective`` is ``None`` (feasibility), a dict ``{monomial: weight}``
        to maximise ``pE[sum weight * monomial]``, or ``("frobenius", M)``
        with ``M`` a square array of monomials whose pE-values' Frobenius norm
        is minimised through the epigraph block ``[[s I, v], [v^T, s]]``.

        ``margin > 0`` relaxes every (normalised) block to ``>= -margin I``.
        Exact relaxations force low-rank moment matrices and leave the dual
        without an interior; a tiny margin restores one.
        """
        K = self.num_moments
        extra_var = 0
        frob = None
        if isinstance(objective, tuple) and objective[0] == "frobenius":
            frob = objective[1]
            extra_var = 1
        m = K + extra_var
        dims, trip, Cs = [], [], []
        for blk in self.blocks:
            dims.append(blk.dim)
            trip.append((blk.var, blk.rows, blk.cols, -blk.coef))
            Cs.append(blk.const + margin * np.eye(blk.dim) if margin else blk.const)
        b = np.zeros(m)
        if frob is not None:
            n = len(frob)
            pairs = [(i, j) for i in range(n) for j in range(i, n)]
            P = len(pairs)
            k_, i_, j_, v_ = [], [], [], []
            for d in range(P + 1):
                k_.append(K); i_.append(d); j_.append(d); v_.append(-1.0)
            const = np.zeros((P + 1, P + 1))
            for d, (i, j) in enumerate(pairs):
                mono = frob[i][j].reduce_boolean(self.boolean)
                w = 1.0 if i == j else math.sqrt(2.0)
                sc = self._scale(mono)
                if mono:
                    k_.append(self.index[mono]); i_.append(d); j_.append(P); v_.append(-w * sc)
                else:
                    const[d, P] = const[P, d] = w
            dims.append(P + 1)
            trip.append((k_, i_, j_, v_))
            Cs.append(const)
            b[K] = -1.0
        elif isinstance(objective, Mapping):
            for mono, w in objective.items():
                mono = mono.reduce_boolean(self.boolean)
                if mono:
                    b[self.index[mono]] += w * self._scale(mono)
        p = len(self.eq_rows)
        F = None
        g = None
        if p:
            rr, cc, vv = [], [], []
            g = np.zeros(p)
            for col, (_, idx, val, const) in enumerate(self.eq_rows):
                rr.extend(idx.tolist()); cc.extend([col] * idx.size); vv.extend(val.tolist())
                g[col] = -const
            F = sp.csr_matrix((vv, (rr, cc)), shape=(m, p)).toarray()
        if mode is None:
            mode = "dual_feasibility" if objective is None else "minimize"
        return SdpProblem.from_triplets(dims, m, trip, b, C=Cs, free=F, free_cost=g, mode=mode)

    def extract(self, solution: SdpSolution) -> PseudoExpectation:
        y = np.asarray(solution.dual)[: self.num_moments]
        return self.pseudoexpectation(y)

    def pseudoexpectation(self, y_scaled: np.ndarray) -> PseudoExpectation:
        vals = y_scaled * self.moment_scale
        mom = dict(zip(self.moments, vals.tolist()))
        mom[ONE] = 1.0
        return PseudoExpectation(self.space, self.degree, mom, boolean=self.boolean,
                                 meta={"sparsity": self.sparsity})

    def scaled_moments(self, pE: PseudoExpectation) -> np.ndarray:
        return np.array([pE[m] for m in self.moments]) / self.moment_scale

    def block_matrices(self, pE: PseudoExpectation) -> list:
        y = self.scaled_moments(pE)
        return self._block_values(y, pE[ONE])

    def _block_values(self, y, one=1.0) -> list:
        out = []
        for blk in self.blocks:
            M = blk.const * one
            vals = blk.coef * y[blk.var]
            M = M.copy()
            np.add.at(M, (blk.rows, blk.cols), vals)
            off = blk.rows != blk.cols
            np.add.at(M, (blk.cols[off], blk.rows[off]), vals[off])
            out.append(M)
        return out

    def evaluate(self, pE: PseudoExpectation, tol: float = POSITIVITY_TOL) -> SatisfactionReport:
        one = pE[ONE]
        y = self.scaled_moments(pE)
        mats = self._block_values(y, one)
        eigs = {}
        min_eig = math.inf
        min_mom = math.inf
        for blk, M in zip(self.blocks, mats):
            e = float(np.linalg.eigvalsh(M)[0])
            eigs[blk.name] = e
            min_eig = min(min_eig, e)
            if blk.kind == "moment":
                min_mom = min(min_mom, e)
        eq = 0.0
        for _, idx, val, const in self.eq_rows:
            eq = max(eq, abs(float(val @ y[idx]) + const * one))
        norm = abs(one - 1.0)
        passed = norm <= tol and eq <= tol and min_eig >= -tol
        return SatisfactionReport(norm, eq, min_eig, min_mom, eigs, passed, tol)


def check_satisfies(pE: PseudoExpectation, program, tol: float = POSITIVITY_TOL,
                    relaxation: MomentRelaxation | None = None, sparsity: str | None = None) -> SatisfactionReport:
    """Evaluate every equality and PSD constraint of ``program``'s relaxation at ``pE``."""
    if relaxation is None:
        if sparsity is None:
            sparsity = pE.meta.get("sparsity", "clique")
        relaxation = program.relaxation(pE.degree, sparsity=sparsity)
    return relaxation.evaluate(pE, tol)
