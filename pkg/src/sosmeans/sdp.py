"""Primal-dual interior-point solver for block-diagonal semidefinite programs.

Primal form::

    minimize    sum_b C_b . X_b + g . u
    subject to  sum_b A_{i,b} . X_b + (F u)_i = b_i,   X_b PSD,  u free

Dual form::

    maximize    b . y
    subject to  C_b - sum_i y_i A_{i,b} = Z_b PSD,  F^T y = g

The free primal variables ``u`` encode linear equalities on the dual vector;
moment relaxations live on the dual side and use them for ideal constraints.

The search direction is HKM with a Mehrotra predictor-corrector. The Schur
complement is assembled block by block and factored with dense Cholesky.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SdpProblem",
    "SdpSolution",
    "SolverSettings",
    "solve",
    "solve_min_frobenius",
    "write_sdpa",
    "read_sdpa",
]

MODES = ("minimize", "feasibility", "dual_feasibility")


@dataclass
class SolverSettings:
    tol: float = 1e-8
    max_iters: int = 200
    infeasibility_threshold: float = 1e-6
    step_factor: float = 0.95
    verbose: bool = False
    # run phase-I solves to tell infeasible from slow when minimize mode fails
    classify: bool = True


def _sym_csr(m: int, n: int, k, i, j, v) -> sp.csr_matrix:
    """Rows k of a (m, n*n) matrix holding vec of symmetric matrices.

    ``(i, j, v)`` may list either triangle; each entry sets both (i,j) and
    (j,i). Repeated entries add.
    """
    k = np.asarray(k, dtype=np.int64)
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    v = np.asarray(v, dtype=float)
    if k.size and (i.min() < 0 or j.min() < 0 or i.max() >= n or j.max() >= n):
        raise ValueError("matrix entry outside block dimension")
    off = i != j
    rows = np.concatenate([k, k[off]])
    cols = np.concatenate([i * n + j, (j * n + i)[off]])
    vals = np.concatenate([v, v[off]])
    out = sp.csr_matrix((vals, (rows, cols)), shape=(m, n * n))
    out.sum_duplicates()
    out.eliminate_zeros()
    return out


class SdpProblem:
    """Block-diagonal SDP in primal standard form (see module docstring).

    Parameters
    ----------
    block_dims : sequence of int
        Dimensions of the PSD blocks.
    A : list of sparse matrices
        ``A[b]`` has shape ``(m, n_b * n_b)``; row ``i`` is the row-major
        vectorisation of the symmetric matrix ``A_{i,b}``.
    b : array of shape (m,)
    C : list of arrays, optional
        Objective matrices, zero if omitted.
    free, free_cost : arrays, optional
        ``F`` of shape ``(m, p)`` and ``g`` of shape ``(p,)``.
    mode : {"minimize", "feasibility", "dual_feasibility"}
        ``feasibility`` asks whether the primal constraints admit X PSD;
        ``dual_feasibility`` asks the same for the dual constraints.
    """

    def __init__(self, block_dims, A, b, C=None, free=None, free_cost=None, mode="minimize"):
        self.block_dims = [int(n) for n in block_dims]
        if any(n < 1 for n in self.block_dims):
            raise ValueError("block dimensions must be at least 1")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.b = np.asarray(b, dtype=float).ravel()
        m = self.b.shape[0]
        if len(A) != len(self.block_dims):
            raise ValueError("one constraint matrix per block expected")
        self.A = []
        for n, Ab in zip(self.block_dims, A):
            Ab = sp.csr_matrix(Ab)
            if Ab.shape != (m, n * n):
                raise ValueError(f"constraint block has shape {Ab.shape}, expected {(m, n * n)}")
            self.A.append(Ab)
        if C is None:
            C = [np.zeros((n, n)) for n in self.block_dims]
        self.C = []
        for n, Cb in zip(self.block_dims, C):
            Cb = Cb.toarray() if sp.issparse(Cb) else np.asarray(Cb, dtype=float)
            Cb = Cb.reshape(n, n)
            if not np.allclose(Cb, Cb.T, atol=1e-12):
                raise ValueError("objective matrices must be symmetric")
            self.C.append(0.5 * (Cb + Cb.T))
        if free is None:
            self.F = np.zeros((m, 0))
            self.g = np.zeros(0)
        else:
            F = free.toarray() if sp.issparse(free) else np.asarray(free, dtype=float)
            self.F = F.reshape(m, -1)
            self.g = (np.zeros(self.F.shape[1]) if free_cost is None
                      else np.asarray(free_cost, dtype=float).ravel())
            if self.g.shape[0] != self.F.shape[1]:
                raise ValueError("free_cost length must match free columns")
        self.mode = mode

    @property
    def num_constraints(self) -> int:
        return self.b.shape[0]

    @property
    def num_free(self) -> int:
        return self.F.shape[1]

    def copy_with(self, **kw) -> "SdpProblem":
        args = dict(block_dims=self.block_dims, A=self.A, b=self.b, C=self.C,
                    free=self.F if self.num_free else None,
                    free_cost=self.g if self.num_free else None, mode=self.mode)
        args.update(kw)
        return SdpProblem(**args)

    @classmethod
    def from_matrices(cls, block_dims, constraints, objective=None, mode="minimize"):
        """Build from ``constraints = [({block: A_ib}, b_i), ...]``.

        Each ``A_ib`` is a dense or sparse symmetric matrix; missing blocks are
        zero. ``objective`` maps block index to ``C_b``.
        """
        block_dims = [int(n) for n in block_dims]
        m = len(constraints)
        trip = [([], [], [], []) for _ in block_dims]
        rhs = np.zeros(m)
        for k, (mats, bk) in enumerate(constraints):
            rhs[k] = bk
            for blk, Ab in mats.items():
                Ab = sp.coo_matrix(Ab)
                if Ab.shape != (block_dims[blk], block_dims[blk]):
                    raise ValueError(f"constraint {k} block {blk} is not conformal")
                dense = Ab.toarray()
                if not np.allclose(dense, dense.T, atol=1e-12):
                    raise ValueError(f"constraint {k} block {blk} is not symmetric")
                up = Ab.row <= Ab.col
                t = trip[blk]
                t[0].extend([k] * int(up.sum()))
                t[1].extend(Ab.row[up].tolist())
                t[2].extend(Ab.col[up].tolist())
                t[3].extend(Ab.data[up].tolist())
        A = [_sym_csr(m, n, *t) for n, t in zip(block_dims, trip)]
        C = None
        if objective:
            C = [np.zeros((n, n)) for n in block_dims]
            for blk, Cb in objective.items():
                C[blk] = sp.csr_matrix(Cb).toarray() if sp.issparse(Cb) else np.asarray(Cb, float)
        return cls(block_dims, A, rhs, C, mode=mode)

    @classmethod
    def from_triplets(cls, block_dims, m, triplets, b, C=None, free=None, free_cost=None,
                      mode="minimize"):
        """``triplets[b] = (k, i, j, v)`` arrays; each (i, j) sets both triangles."""
        A = []
        for n, t in zip(block_dims, triplets):
            if t is None:
                A.append(sp.csr_matrix((m, n * n)))
            else:
                A.append(_sym_csr(m, n, *t))
        return cls(block_dims, A, b, C, free=free, free_cost=free_cost, mode=mode)

    def constraint_matrix(self, i: int, blk: int) -> np.ndarray:
        n = self.block_dims[blk]
        return self.A[blk][i].toarray().reshape(n, n)


@dataclass
class SdpSolution:
    primal: list
    dual: np.ndarray
    slack: list
    free: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    gap: float
    primal_objective: float
    dual_objective: float
    iterations: int
    history: list = field(default_factory=list)
    phase1_value: float | None = None
    message: str = ""
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def min_eigenvalue(self, which: str = "primal") -> float:
        mats = self.primal if which == "primal" else self.slack
        return min((float(np.linalg.eigvalsh(M)[0]) for M in mats), default=math.inf)

    def summary(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "gap": self.gap,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "phase1_value": self.phase1_value,
            "wall_time": self.wall_time,
            "message": self.message,
        }


# --------------------------------------------------------------------------
# internal block representation


class _Block:
    """Per-block operator data and Schur-complement assembly strategy."""

    def __init__(self, n: int, A: sp.csr_matrix, C: np.ndarray):
        self.n = n
        self.A = A
        self.AT = A.T.tocsr()
        self.C = C
        coo = A.tocoo()
        self.active = np.unique(coo.row)
        mb = self.active.size
        self.mb = mb
        self.A_act = A[self.active]  # (mb, n*n)
        self.A_act_T = self.A_act.T.tocsr()
        E = coo.nnz
        nnz = E
        cost_kron = n ** 4 + nnz * n * n + nnz * mb
        cost_sparse = 5.0 * E * E
        cost_dense = 2.0 * mb * n ** 3 + 1.0 * mb * mb * n * n
        if mb == 0:
            self.method = "none"
        else:
            costs = {"kron": cost_kron, "sparse": cost_sparse, "dense": cost_dense}
            if n * n > 2500:
                costs.pop("kron")
            if E > 6000:
                costs.pop("sparse")
            self.method = min(costs, key=costs.get)
        if self.method == "sparse":
            c2 = self.A_act.tocoo()
            self.P = c2.col // n
            self.Q = c2.col % n
            self.S = sp.csr_matrix((c2.data, (c2.row, np.arange(c2.nnz))), shape=(mb, c2.nnz))
        elif self.method == "dense":
            self.Ad = self.A_act.toarray().reshape(mb, n, n)
        # many active rows on a small block: dense low-rank update beats scatter
        self.wide = self.method != "none" and n * n <= 400 and mb > 4 * n * n and mb > 200
        a_norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
        self.a_norms = a_norms

    def apply(self, W: np.ndarray) -> np.ndarray:
        return self.A @ W.reshape(-1)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return (self.AT @ y).reshape(self.n, self.n)

    def schur(self, X: np.ndarray, Zi: np.ndarray) -> np.ndarray:
        if self.method == "kron":
            # tr(A_k X A_l Zi) = vec(A_k)^T (X kron Zi) vec(A_l)
            T = self.A_act @ np.kron(X, Zi)
            return np.asarray(self.A_act @ T.T)
        if self.method == "sparse":
            P, Q = self.P, self.Q
            T = X[np.ix_(Q, P)] * Zi[np.ix_(Q, P)].T
            ST = self.S @ T
            return np.asarray((self.S @ ST.T))
        if self.method == "dense":
            G = np.matmul(np.matmul(X, self.Ad), Zi)  # X A_l Zi
            mb = self.mb
            return self.Ad.reshape(mb, -1) @ G.reshape(mb, -1).T
        return np.zeros((0, 0))


def _chol(M: np.ndarray):
    """Lower Cholesky factor; None if M is not numerically PD."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None


def _max_step(L: np.ndarray, D: np.ndarray) -> float:
    """Largest a with L L^T + a D PSD (inf if unbounded)."""
    n = D.shape[0]
    if n == 1:
        d = D[0, 0] / (L[0, 0] ** 2)
        return -1.0 / d if d < 0 else math.inf
    W = la.solve_triangular(L, D, lower=True, check_finite=False)
    W = la.solve_triangular(L, W.T, lower=True, check_finite=False)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
    return -1.0 / lam if lam < 0 else math.inf


def _factor_schur(M: np.ndarray):
    d = np.diag(M)
    scale = max(float(np.max(np.abs(d))) if d.size else 1.0, 1e-300)
    reg = 0.0
    for attempt in range(8):
        try:
            c = la.cho_factor(M if reg == 0 else M + reg * np.eye(M.shape[0]),
                              lower=True, check_finite=False)
            return c, reg
        except la.LinAlgError:
            reg = scale * (1e-14 if reg == 0 else reg / scale * 100)
    raise np.linalg.LinAlgError("Schur complement is not positive definite")


class _Prepared:
    def __init__(self, problem: SdpProblem):
        self.problem = problem
        self.blocks = [_Block(n, A, C) for n, A, C in zip(problem.block_dims, problem.A, problem.C)]
        self.m = problem.num_constraints
        self.b = problem.b
        F, g = problem.F, problem.g
        self.free_keep = np.arange(F.shape[1])
        self.free_inconsistent = 0.0
        if F.shape[1]:
            Q, R, piv = la.qr(F, mode="economic", pivoting=True)
            diag = np.abs(np.diag(R))
            rank = int(np.sum(diag > 1e-10 * max(diag[0], 1e-300))) if diag.size else 0
            keep = np.sort(piv[:rank])
            if rank < F.shape[1]:
                # dropped dual equalities must be implied by kept ones
                Fk = F[:, keep]
                y0 = np.linalg.lstsq(Fk.T, g[keep], rcond=None)[0]
                self.free_inconsistent = float(np.max(np.abs(F.T @ y0 - g)))
            self.free_keep = keep
        self.F = F[:, self.free_keep]
        self.g = g[self.free_keep]
        self.N = sum(problem.block_dims)
        self.bnorm = float(np.linalg.norm(self.b))
        self.Cnorm = float(math.sqrt(sum(np.sum(C * C) for C in problem.C)) + np.linalg.norm(self.g))

    def A_op(self, Xs) -> np.ndarray:
        out = np.zeros(self.m)
        for blk, X in zip(self.blocks, Xs):
            out += blk.apply(X)
        return out

    def AT_op(self, y) -> list:
        return [blk.adjoint(y) for blk in self.blocks]

    def schur(self, Xs, Zis) -> np.ndarray:
        M = np.zeros((self.m, self.m))
        wide = []
        for blk, X, Zi in zip(self.blocks, Xs, Zis):
            if blk.method == "none":
                continue
            if blk.wide:
                # X kron Zi = (Lx kron Lz)(Lx kron Lz)^T; batch into one product
                Lx, Lz = _chol(X), _chol(Zi)
                if Lx is not None and Lz is not None:
                    wide.append(np.asarray(blk.A @ np.kron(Lx, Lz)))
                    continue
            Mb = blk.schur(X, Zi)
            a = blk.active
            if a.size == self.m:
                M += Mb
            else:
                M[np.ix_(a, a)] += Mb
        if wide:
            B = np.hstack(wide)
            M += B @ B.T
        return M

    def start(self):
        Xs, Zs = [], []
        for blk in self.blocks:
            n = blk.n
            anorm = blk.a_norms
            if anorm.size:
                ratio = np.max((1.0 + np.abs(self.b)) / (1.0 + anorm))
                amax = float(np.max(anorm))
            else:
                ratio, amax = 1.0, 0.0
            xi = max(10.0, math.sqrt(n), n * ratio)
            cnorm = float(np.linalg.norm(blk.C))
            eta = max(10.0, math.sqrt(n), amax, cnorm)
            Xs.append(xi * np.eye(n))
            Zs.append(eta * np.eye(n))
        return Xs, Zs


def _ipm(prep: _Prepared, s: SolverSettings, stop: Callable | None = None):
    t0 = time.perf_counter()
    m, p = prep.m, prep.F.shape[1]
    F, g, b = prep.F, prep.g, prep.b
    blocks = prep.blocks
    Xs, Zs = prep.start()
    y = np.zeros(m)
    u = np.zeros(p)
    history = []
    status = "max_iters"
    message = ""
    ap = ad = 1.0
    it = 0
    best = None
    for it in range(s.max_iters + 1):
        AX = prep.A_op(Xs)
        rp = b - AX - (F @ u if p else 0.0)
        ATy = prep.AT_op(y)
        Rd = [blk.C - a - Z for blk, a, Z in zip(blocks, ATy, Zs)]
        rg = g - F.T @ y if p else np.zeros(0)
        pobj = sum(float(np.sum(blk.C * X)) for blk, X in zip(blocks, Xs)) + float(g @ u)
        dobj = float(b @ y)
        xz = sum(float(np.sum(X * Z)) for X, Z in zip(Xs, Zs))
        mu = xz / prep.N
        pinf = float(np.linalg.norm(rp)) / (1.0 + prep.bnorm)
        dres = math.sqrt(sum(float(np.sum(R * R)) for R in Rd) + float(rg @ rg))
        dinf = dres / (1.0 + prep.Cnorm)
        rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        rec = {"iter": it, "pobj": pobj, "dobj": dobj, "pinf": pinf, "dinf": dinf,
               "pres": float(np.linalg.norm(rp)), "dres": dres,
               "gap": rel_gap, "mu": mu, "xz": xz, "ap": ap, "ad": ad}
        history.append(rec)
        if s.verbose:
            print("it {iter:3d} pobj {pobj: .8e} dobj {dobj: .8e} pinf {pinf:.1e} "
                  "dinf {dinf:.1e} gap {gap:.1e} ap {ap:.2f} ad {ad:.2f}".format(**rec))
        merit = max(pinf, dinf, rel_gap)
        if best is None or merit < best[0]:
            best = (merit, it, [X.copy() for X in Xs], y.copy(), [Z.copy() for Z in Zs], u.copy())
        if max(pinf, dinf) <= s.tol and rel_gap <= s.tol and xz / (1 + abs(pobj) + abs(dobj)) <= 10 * s.tol:
            status = "optimal"
            break
        if stop is not None:
            verdict = stop(rec, Xs, y, Zs, u)
            if verdict:
                status = verdict
                break
        if it == s.max_iters:
            break
        big = max(max(float(np.max(np.abs(X))) for X in Xs), float(np.max(np.abs(y))) if m else 0.0)
        if not np.isfinite(big) or big > 1e13:
            status = "diverged"
            message = "iterates diverged"
            break
        if it > 30 and history[-1]["gap"] > 0.999 * history[-15]["gap"] and \
                max(pinf, dinf) > 0.999 * max(history[-15]["pinf"], history[-15]["dinf"]):
            status = "stalled"
            message = "no progress over 15 iterations"
            break

        LXs, Zis, LZs = [], [], []
        try:
            for X, Z in zip(Xs, Zs):
                LX = _chol(X)
                LZ = _chol(Z)
                if LX is None or LZ is None:
                    raise np.linalg.LinAlgError("iterate left the PSD cone")
                LXs.append(LX)
                LZs.append(LZ)
                Zi = la.cho_solve((LZ, True), np.eye(Z.shape[0]), check_finite=False)
                Zis.append(0.5 * (Zi + Zi.T))
            M = prep.schur(Xs, Zis)
            cf, reg = _factor_schur(M)
        except np.linalg.LinAlgError as exc:
            status = "numerical_error"
            message = str(exc)
            break
        if p:
            MiF = la.cho_solve(cf, F, check_finite=False)
            Sm = F.T @ MiF
            Sf = la.cho_factor(0.5 * (Sm + Sm.T) + 1e-14 * np.trace(Sm) / max(p, 1) * np.eye(p),
                               lower=True, check_finite=False)
        XRZ = [X @ R @ Zi for X, R, Zi in zip(Xs, Rd, Zis)]

        def kkt_solve(r1, rg):
            # M dy + F du = r1, F^T dy = rg
            if not p:
                return la.cho_solve(cf, r1, check_finite=False), np.zeros(0)
            Mr = la.cho_solve(cf, r1, check_finite=False)
            du = la.cho_solve(Sf, F.T @ Mr - rg, check_finite=False)
            return Mr - MiF @ du, du

        def direction(Ts):
            W = [T - XR for T, XR in zip(Ts, XRZ)]
            r1 = rp - prep.A_op(W)
            dy, du = kkt_solve(r1, rg)
            # iterative refinement; the Schur matrix is often badly conditioned
            scale = np.linalg.norm(r1) + np.linalg.norm(rg) + 1e-300
            for _ in range(3):
                e1 = r1 - M @ dy - (F @ du if p else 0.0)
                e2 = rg - F.T @ dy if p else rg
                err = np.linalg.norm(e1) + np.linalg.norm(e2)
                if err <= 1e-13 * scale:
                    break
                cy, cu = kkt_solve(e1, e2)
                dy, du = dy + cy, du + cu
            ATdy = prep.AT_op(dy)
            dZ = [R - a for R, a in zip(Rd, ATdy)]
            dX = []
            for T, X, D, Zi in zip(Ts, Xs, dZ, Zis):
                V = T - X @ D @ Zi
                dX.append(0.5 * (V + V.T))
            return dX, dy, dZ, du

        def steps(dX, dZ):
            a_p = min((_max_step(L, D) for L, D in zip(LXs, dX)), default=math.inf)
            a_d = min((_max_step(L, D) for L, D in zip(LZs, dZ)), default=math.inf)
            return a_p, a_d

        # predictor
        dXa, dya, dZa, dua = direction([-X for X in Xs])
        pa, da = steps(dXa, dZa)
        pa, da = min(1.0, pa), min(1.0, da)
        xz_aff = sum(float(np.sum((X + pa * dX) * (Z + da * dZ)))
                     for X, dX, Z, dZ in zip(Xs, dXa, Zs, dZa))
        mu_aff = xz_aff / prep.N
        expon = max(1.0, 3.0 * min(pa, da) ** 2)
        sigma = min(1.0, max(0.0, (mu_aff / mu) if mu > 0 else 0.0) ** expon)
        # corrector
        Ts = [sigma * mu * Zi - X - dX @ dZ @ Zi
              for Zi, X, dX, dZ in zip(Zis, Xs, dXa, dZa)]
        dX, dy, dZ, du = direction(Ts)
        a_p, a_d = steps(dX, dZ)
        gamma = max(s.step_factor, 0.9 + 0.09 * min(pa, da)) if s.step_factor >= 0.9 else s.step_factor
        ap = min(1.0, gamma * a_p)
        ad = min(1.0, gamma * a_d)
        Xs = [X + ap * D for X, D in zip(Xs, dX)]
        u = u + ap * du
        y = y + ad * dy
        Zs = [Z + ad * D for Z, D in zip(Zs, dZ)]
        Xs = [0.5 * (X + X.T) for X in Xs]
        Zs = [0.5 * (Z + Z.T) for Z in Zs]

    if status not in ("optimal",) and best is not None and status in ("numerical_error", "stalled"):
        # fall back to the best iterate seen
        _, _, Xs, y, Zs, u = best
    AX = prep.A_op(Xs)
    rp = b - AX - (F @ u if p else 0.0)
    ATy = prep.AT_op(y)
    Rd = [blk.C - a - Z for blk, a, Z in zip(blocks, ATy, Zs)]
    pobj = sum(float(np.sum(blk.C * X)) for blk, X in zip(blocks, Xs)) + float(g @ u)
    dobj = float(b @ y)
    return dict(X=Xs, y=y, Z=Zs, u=u, status=status, message=message,
                pres=float(np.max(np.abs(rp))) if m else 0.0,
                dres=max((float(np.max(np.abs(R))) for R in Rd), default=0.0),
                gap=abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)),
                pobj=pobj, dobj=dobj, iters=it, history=history,
                time=time.perf_counter() - t0)


def _expand_free(prep: _Prepared, u: np.ndarray, p_full: int) -> np.ndarray:
    out = np.zeros(p_full)
    out[prep.free_keep] = u
    return out


def _to_solution(prep: _Prepared, r: dict, status=None, phase1=None, message=None) -> SdpSolution:
    return SdpSolution(
        primal=r["X"], dual=r["y"], slack=r["Z"],
        free=_expand_free(prep, r["u"], prep.problem.num_free),
        status=status or r["status"], primal_residual=r["pres"], dual_residual=r["dres"],
        gap=r["gap"], primal_objective=r["pobj"], dual_objective=r["dobj"],
        iterations=r["iters"], history=r["history"], phase1_value=phase1,
        message=message if message is not None else r["message"], wall_time=r["time"],
    )


# --------------------------------------------------------------------------
# phase-I constructions


def _primal_phase1(problem: SdpProblem) -> SdpProblem:
    """min lam  s.t.  A(X' - lam I) + F u = b,  X' PSD, lam >= 0."""
    m = problem.num_constraints
    traces = np.zeros(m)
    for n, A in zip(problem.block_dims, problem.A):
        diag_idx = np.arange(n) * (n + 1)
        traces += np.asarray(A[:, diag_idx].sum(axis=1)).ravel()
    A_lam = sp.csr_matrix(-traces.reshape(m, 1))
    dims = problem.block_dims + [1]
    C = [np.zeros((n, n)) for n in problem.block_dims] + [np.ones((1, 1))]
    free = problem.F if problem.num_free else None
    g = np.zeros(problem.num_free) if problem.num_free else None
    return SdpProblem(dims, problem.A + [A_lam], problem.b, C, free=free, free_cost=g)


def _dual_phase1(problem: SdpProblem) -> SdpProblem:
    """max -lam  s.t.  C - A^T y + lam I PSD, lam >= 0, F^T y = g."""
    m = problem.num_constraints
    A_new = []
    for n, A in zip(problem.block_dims, problem.A):
        diag_idx = np.arange(n) * (n + 1)
        extra = sp.csr_matrix((-np.ones(n), (np.zeros(n, dtype=int), diag_idx)), shape=(1, n * n))
        A_new.append(sp.vstack([A, extra], format="csr"))
    A_new.append(sp.csr_matrix(([-1.0], ([m], [0])), shape=(m + 1, 1)))
    b = np.zeros(m + 1)
    b[m] = -1.0
    dims = problem.block_dims + [1]
    C = list(problem.C) + [np.zeros((1, 1))]
    free = g = None
    if problem.num_free:
        free = np.vstack([problem.F, np.zeros((1, problem.num_free))])
        g = problem.g
    return SdpProblem(dims, A_new, b, C, free=free, free_cost=g)


def _solve_primal_feasibility(problem: SdpProblem, s: SolverSettings) -> SdpSolution:
    ph = _primal_phase1(problem)
    prep = _Prepared(ph)
    thr = s.infeasibility_threshold

    def stop(rec, Xs, y, Zs, u):
        # dual objective bounds lam* from below once the dual residual is
        # small; a huge objective with tiny relative residual is a Farkas ray
        if rec["dobj"] > 10 * thr and (rec["dinf"] <= s.tol or rec["dres"] <= 1e-9 * rec["dobj"]):
            return "infeasible"
        return None

    r = _ipm(prep, s, stop)
    lam_lb = r["dobj"] if r["status"] in ("optimal", "infeasible") else None
    lam = float(r["X"][-1][0, 0])
    n_orig = len(problem.block_dims)
    Xs = [X - lam * np.eye(X.shape[0]) for X in r["X"][:n_orig]]
    r2 = dict(r)
    r2["X"] = Xs
    r2["Z"] = r["Z"][:n_orig]
    if r["status"] == "infeasible" or (lam_lb is not None and lam_lb > thr):
        status = "infeasible"
        msg = f"phase-I lower bound {lam_lb:.3e} exceeds threshold {thr:.1e}"
    elif r["status"] == "optimal":
        status = "optimal" if lam <= thr else "infeasible"
        msg = f"phase-I optimum {lam:.3e}"
    else:
        status = "max_iters"
        msg = r["message"] or "phase-I did not converge"
        # an overdetermined system makes the Schur matrix singular and phase I
        # can blow up; linear inconsistency alone already certifies infeasibility
        incons = _equality_inconsistency(problem)
        if incons > 1e-8:
            status = "infeasible"
            msg = f"equality constraints are inconsistent (least-squares residual {incons:.1e})"
    if status == "infeasible" and lam_lb is not None:
        phase1 = max(lam_lb, 0.0)
    else:
        phase1 = lam
    sol = _to_solution(prep, r2, status=status, phase1=phase1, message=msg)
    # residual with respect to the original constraints
    sol.primal_residual = _primal_residual(problem, Xs, sol.free)
    return sol


def _equality_inconsistency(problem: SdpProblem) -> float:
    """Relative least-squares residual of ``A(X) + F u = b`` with the cone dropped."""
    mats = list(problem.A) + ([sp.csr_matrix(problem.F)] if problem.num_free else [])
    M = sp.hstack(mats, format="csr")
    if M.shape[0] * M.shape[1] <= 4_000_000:
        x = np.linalg.lstsq(M.toarray(), problem.b, rcond=None)[0]
    else:
        x = spla.lsqr(M, problem.b, atol=1e-14, btol=1e-14, iter_lim=10 * M.shape[0])[0]
    return float(np.linalg.norm(M @ x - problem.b)) / (1.0 + float(np.linalg.norm(problem.b)))


def _primal_residual(problem: SdpProblem, Xs, u) -> float:
    r = problem.b.copy()
    for A, X in zip(problem.A, Xs):
        r -= A @ X.reshape(-1)
    if problem.num_free:
        r -= problem.F @ u
    return float(np.max(np.abs(r))) if r.size else 0.0


def _solve_dual_feasibility(problem: SdpProblem, s: SolverSettings) -> SdpSolution:
    ph = _dual_phase1(problem)
    prep = _Prepared(ph)
    thr = s.infeasibility_threshold
    m = problem.num_constraints

    def stop(rec, Xs, y, Zs, u):
        # primal objective upper-bounds -lam* once primal residual is small
        if rec["pobj"] < -10 * thr and (rec["pinf"] <= s.tol or rec["pres"] <= -1e-9 * rec["pobj"]):
            return "infeasible"
        return None

    if prep.free_inconsistent > 1e-8:
        r = _ipm(prep, SolverSettings(tol=s.tol, max_iters=0))
        sol = _to_solution(prep, r, status="infeasible",
                           message="linear equalities on the dual are inconsistent")
        return sol
    r = _ipm(prep, s, stop)
    lam = float(r["y"][m])
    y = r["y"][:m]
    n_orig = len(problem.block_dims)
    Zs = [Z - lam * np.eye(Z.shape[0]) for Z in r["Z"][:n_orig]]
    r2 = dict(r)
    r2["y"] = y
    r2["Z"] = Zs
    r2["X"] = r["X"][:n_orig]
    if r["status"] == "infeasible":
        status = "infeasible"
        msg = f"phase-I bound {-r['pobj']:.3e} exceeds threshold {thr:.1e}"
        phase1 = -r["pobj"]
    elif r["status"] == "optimal":
        status = "optimal" if lam <= thr else "infeasible"
        msg = f"phase-I optimum {lam:.3e}"
        phase1 = lam
    else:
        status = "max_iters"
        msg = r["message"] or "phase-I did not converge"
        phase1 = lam
    sol = _to_solution(prep, r2, status=status, phase1=phase1, message=msg)
    ATy = [(A.T @ y).reshape(n, n) for n, A in zip(problem.block_dims, problem.A)]
    sol.dual_residual = max(float(np.max(np.abs(C - a - Z))) for C, a, Z in zip(problem.C, ATy, Zs))
    sol.dual_objective = float(problem.b @ y)
    return sol


def solve(problem: SdpProblem, settings: SolverSettings | None = None, **kw) -> SdpSolution:
    """Solve ``problem`` according to its mode.

    ``minimize`` returns status ``optimal``, ``infeasible`` (classified by a
    phase-I solve after the main loop fails), or ``max_iters``.
    ``feasibility`` and ``dual_feasibility`` minimise a slack ``lam`` added to
    every block; the problem is declared infeasible when the phase-I optimum
    exceeds ``settings.infeasibility_threshold``. The ``phase1_value`` field
    carries that optimum.
    """
    s = settings or SolverSettings(**kw)
    if problem.mode == "feasibility":
        return _solve_primal_feasibility(problem, s)
    if problem.mode == "dual_feasibility":
        return _solve_dual_feasibility(problem, s)
    prep = _Prepared(problem)
    r = _ipm(prep, s)
    if r["status"] == "optimal":
        return _to_solution(prep, r)
    msg = r["message"]
    if not s.classify:
        return _to_solution(prep, r, status="max_iters", message=msg or "did not converge")
    # classify the failure
    ps = _solve_primal_feasibility(problem, s)
    if ps.status == "infeasible":
        return _to_solution(prep, r, status="infeasible", phase1=ps.phase1_value,
                            message="primal infeasible: " + ps.message)
    ds = _solve_dual_feasibility(problem, s)
    if ds.status == "infeasible":
        return _to_solution(prep, r, status="infeasible", phase1=ds.phase1_value,
                            message="dual infeasible (primal unbounded): " + ds.message)
    return _to_solution(prep, r, status="max_iters", message=msg or "did not converge")


def solve_min_frobenius(problem: SdpProblem, target_block: int,
                        settings: SolverSettings | None = None, **kw) -> SdpSolution:
    """Minimise ``||X_target||_F`` over the feasible set of ``problem``.

    Uses the Schur-complement epigraph ``[[W, X], [X, I]] PSD`` and minimises
    ``trace(W)``; at the optimum ``trace(W) = ||X||_F**2``. The returned
    ``primal_objective`` is the norm itself and ``primal`` holds only the
    original blocks.
    """
    s = settings or SolverSettings(**kw)
    nt = problem.block_dims[target_block]
    m0 = problem.num_constraints
    nb = len(problem.block_dims)
    # new constraints: lower-right block = I (upper triangle), off-diagonal block = X
    rows_I = [(p, q) for p in range(nt) for q in range(p, nt)]
    rows_X = [(p, q) for p in range(nt) for q in range(nt)]
    m = m0 + len(rows_I) + len(rows_X)
    dims = problem.block_dims + [2 * nt]
    A = [sp.vstack([Ab, sp.csr_matrix((m - m0, n * n))], format="csr")
         for n, Ab in zip(problem.block_dims, problem.A)]
    b = np.concatenate([problem.b, np.zeros(m - m0)])
    k, i, j, v = [], [], [], []
    kx, ix, jx, vx = [], [], [], []
    row = m0
    for p_, q_ in rows_I:
        k.append(row); i.append(nt + p_); j.append(nt + q_)
        v.append(1.0 if p_ == q_ else 0.5)
        b[row] = 1.0 if p_ == q_ else 0.0
        row += 1
    for p_, q_ in rows_X:
        k.append(row); i.append(p_); j.append(nt + q_); v.append(0.5)
        kx.append(row); ix.append(p_); jx.append(q_); vx.append(-1.0 if p_ == q_ else -0.5)
        row += 1
    A.append(_sym_csr(m, 2 * nt, k, i, j, v))
    A[target_block] = A[target_block] + _sym_csr(m, nt, kx, ix, jx, vx)
    C = [np.zeros((n, n)) for n in problem.block_dims]
    CW = np.zeros((2 * nt, 2 * nt))
    CW[np.arange(nt), np.arange(nt)] = 1.0
    C.append(CW)
    free = g = None
    if problem.num_free:
        free = np.vstack([problem.F, np.zeros((m - m0, problem.num_free))])
        g = np.zeros(problem.num_free)
    aug = SdpProblem(dims, A, b, C, free=free, free_cost=g)
    sol = solve(aug, s)
    sol.primal = sol.primal[:nb]
    sol.slack = sol.slack[:nb]
    sol.dual = sol.dual[:m0]
    if sol.primal:
        sol.primal_objective = float(np.linalg.norm(sol.primal[target_block]))
    sol.dual_objective = math.sqrt(max(sol.dual_objective, 0.0))
    return sol


# --------------------------------------------------------------------------
# SDPA sparse format


def write_sdpa(problem: SdpProblem, path, comment: str = "") -> None:
    """Write ``problem`` in SDPA sparse format.

    SDPA's matrix form reads ``max F0 . Y  s.t.  Fi . Y = ci``; we emit
    ``F0 = -C`` and ``Fi = A_i``, so optimal values differ by sign.
    """
    if problem.num_free:
        raise ValueError("free variables cannot be expressed in SDPA format")
    lines = []
    if comment:
        for c in comment.splitlines():
            lines.append('"' + c)
    m = problem.num_constraints
    lines.append(str(m))
    lines.append(str(len(problem.block_dims)))
    lines.append(" ".join(str(n) for n in problem.block_dims))
    lines.append(" ".join(repr(float(x)) for x in problem.b))
    for bi, (n, C) in enumerate(zip(problem.block_dims, problem.C)):
        ii, jj = np.nonzero(np.triu(C))
        for a, c in zip(ii, jj):
            lines.append(f"0 {bi + 1} {a + 1} {c + 1} {float(-C[a, c])!r}")
    entries = []
    for bi, (n, A) in enumerate(zip(problem.block_dims, problem.A)):
        coo = A.tocoo()
        r, c = divmod(coo.col, n)
        up = r <= c
        for k, a, cc, v in zip(coo.row[up], r[up], c[up], coo.data[up]):
            entries.append((int(k) + 1, bi + 1, int(a) + 1, int(cc) + 1, float(v)))
    entries.sort()
    for k, bi, a, c, v in entries:
        lines.append(f"{k} {bi} {a} {c} {v!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sdpa(path) -> SdpProblem:
    """Read an SDPA sparse file (inverse of :func:`write_sdpa`).

    Negative block sizes (diagonal blocks) are read as dense blocks.
    """
    with open(path) as fh:
        raw = [ln for ln in fh.read().splitlines()]
    toks: list = []
    for ln in raw:
        s_ = ln.strip()
        if not s_ or s_[0] in '"*':
            continue
        for ch in ",(){}":
            s_ = s_.replace(ch, " ")
        toks.append(s_.split())
    m = int(toks[0][0])
    nblocks = int(toks[1][0])
    dims = [abs(int(x)) for x in toks[2][:nblocks]]
    # the b vector may wrap over several lines
    bvals: list = []
    li = 3
    while len(bvals) < m:
        bvals.extend(float(x) for x in toks[li])
        li += 1
    b = np.array(bvals[:m])
    C = [np.zeros((n, n)) for n in dims]
    trip = [([], [], [], []) for _ in dims]
    for t in toks[li:]:
        k, bi, a, c = (int(x) for x in t[:4])
        v = float(t[4])
        a, c, bi = a - 1, c - 1, bi - 1
        if k == 0:
            C[bi][a, c] = -v
            C[bi][c, a] = -v
        else:
            tt = trip[bi]
            tt[0].append(k - 1); tt[1].append(a); tt[2].append(c); tt[3].append(v)
    A = [_sym_csr(m, n, *t) for n, t in zip(dims, trip)]
    return SdpProblem(dims, A, b, C)


# --------------------------------------------------------------------------
# self-test instances


def random_feasible_sdp(rng, max_blocks: int = 3, max_dim: int = 30, max_constraints: int = 100) -> SdpProblem:
    """Random instance with a known strictly feasible primal-dual pair.

    ``b = A(X0)`` and ``C = Z0 + A^T y0`` for positive definite ``X0, Z0``.
    """
    rng = np.random.default_rng(rng)
    nb = int(rng.integers(1, max_blocks + 1))
    dims = [int(x) for x in rng.integers(1, max_dim + 1, size=nb)]
    cap = sum(n * (n + 1) // 2 for n in dims)
    m = int(rng.integers(1, min(max_constraints, cap) + 1))

    def pd(n):
        G = rng.standard_normal((n, n))
        return G @ G.T / n + 0.5 * np.eye(n)

    def sym(n):
        G = rng.standard_normal((n, n))
        return 0.5 * (G + G.T)

    X0 = [pd(n) for n in dims]
    y0 = rng.standard_normal(m)
    As = [{bi: sym(n) for bi, n in enumerate(dims)} for _ in range(m)]
    b = [sum(float(np.sum(As[k][bi] * X0[bi])) for bi in range(nb)) for k in range(m)]
    C = {bi: pd(n) + sum(y0[k] * As[k][bi] for k in range(m)) for bi, n in enumerate(dims)}
    return SdpProblem.from_matrices(dims, [(As[k], b[k]) for k in range(m)], C)


def random_infeasible_sdp(rng, max_blocks: int = 2, max_dim: int = 15, max_constraints: int = 30) -> SdpProblem:
    """Random primal-infeasible feasibility problem.

    Built around a Farkas ray ``y`` with ``sum y_k A_k = -P`` (P positive
    definite) and ``b . y = 1``, so no ``X >= 0`` satisfies ``A(X) = b``.
    """
    rng = np.random.default_rng(rng)
    nb = int(rng.integers(1, max_blocks + 1))
    dims = [int(x) for x in rng.integers(2, max_dim + 1, size=nb)]
    m = int(rng.integers(2, max_constraints + 1))
    As = []
    for _ in range(m - 1):
        mats = {}
        for bi, n in enumerate(dims):
            G = rng.standard_normal((n, n))
            mats[bi] = 0.5 * (G + G.T)
        As.append(mats)
    y = rng.standard_normal(m)
    if abs(y[-1]) < 0.3:
        y[-1] = 1.0
    last = {}
    for bi, n in enumerate(dims):
        G = rng.standard_normal((n, n))
        P = G @ G.T / n + 0.1 * np.eye(n)
        last[bi] = (-P - sum(y[k] * As[k][bi] for k in range(m - 1))) / y[-1]
    As.append(last)
    b = rng.standard_normal(m)
    b = b + (1.0 - b @ y) / (y @ y) * y
    return SdpProblem.from_matrices(dims, [(As[k], b[k]) for k in range(m)], mode="feasibility")


def selftest(n_feasible: int = 50, n_infeasible: int = 10, seed: int = 0,
             settings: SolverSettings | None = None) -> dict:
    """Solve random feasible and infeasible instances; report gaps and detections."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    gaps, statuses, iters = [], [], []
    for _ in range(n_feasible):
        sol = solve(random_feasible_sdp(rng), settings)
        gaps.append(sol.gap)
        statuses.append(sol.status)
        iters.append(sol.iterations)
    detected = 0
    for _ in range(n_infeasible):
        sol = solve(random_infeasible_sdp(rng), settings)
        detected += sol.status == "infeasible"
    return {
        "feasible_solved": sum(s == "optimal" for s in statuses),
        "n_feasible": n_feasible,
        "max_gap": max(gaps, default=0.0),
        "max_iterations": max(iters, default=0),
        "infeasible_detected": detected,
        "n_infeasible": n_infeasible,
        "wall_time": time.perf_counter() - t0,
    }
