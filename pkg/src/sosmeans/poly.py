"""Sparse multivariate polynomials over an ordered variable space.

Monomials are tuples of ``(variable_index, exponent)`` pairs sorted by index,
polynomials are maps from monomials to float coefficients. Everything here is
immutable after construction.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "VariableSpace",
    "Monomial",
    "Poly",
    "PolyMatrix",
    "ONE",
    "add",
    "mul",
    "inner_power",
    "monomials_up_to",
]


@dataclass(frozen=True)
class VariableSpace:
    """Ordered, named indeterminates. Indices are positions in ``names``."""

    names: tuple
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def count(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self._index[name]

    def var(self, which: Union[int, str]) -> "Poly":
        i = self._index[which] if isinstance(which, str) else int(which)
        if not 0 <= i < self.count:
            raise IndexError(f"variable index {i} out of range")
        return Poly(self, {Monomial(((i, 1),)): 1.0})

    def variables(self) -> list:
        return [self.var(i) for i in range(self.count)]

    def const(self, c: float) -> "Poly":
        return Poly(self, {ONE: float(c)} if c != 0 else {})

    def zero(self) -> "Poly":
        return Poly(self, {})

    @classmethod
    def indexed(cls, prefix: str, n: int) -> "VariableSpace":
        return cls(tuple(f"{prefix}{i}" for i in range(n)))


class Monomial(tuple):
    """Sorted tuple of ``(index, exponent)`` pairs with positive exponents.

    The empty tuple is the constant monomial. Note that ``*`` multiplies
    monomials rather than repeating the tuple.
    """

    __slots__ = ()

    def __new__(cls, pairs: Iterable = ()):
        return super().__new__(cls, pairs)

    @classmethod
    def from_exponents(cls, exps: Union[Mapping[int, int], Sequence[int]]) -> "Monomial":
        if isinstance(exps, Mapping):
            items = sorted((int(i), int(e)) for i, e in exps.items() if e)
        else:
            items = [(i, int(e)) for i, e in enumerate(exps) if e]
        for _, e in items:
            if e < 0:
                raise ValueError("exponents must be nonnegative")
        return cls(items)

    @property
    def degree(self) -> int:
        return sum(e for _, e in self)

    @property
    def exponents(self) -> dict:
        return dict(self)

    def dense(self, nvars: int) -> tuple:
        out = [0] * nvars
        for i, e in self:
            out[i] = e
        return tuple(out)

    def variables(self) -> tuple:
        return tuple(i for i, _ in self)

    def __mul__(self, other: "Monomial") -> "Monomial":
        return monomial_product(self, other)

    __rmul__ = __mul__

    def __add__(self, other):  # tuple concatenation would be misleading
        raise TypeError("monomials are multiplied, not added")

    def grlex_key(self) -> tuple:
        """Graded lexicographic key: lower degree first, then x0 > x1 > ..."""
        return (self.degree, tuple((i, -e) for i, e in self))

    def reduce_boolean(self, boolean: Union[set, frozenset]) -> "Monomial":
        """Replace x**e by x for boolean variables (x**2 = x)."""
        if not boolean:
            return self
        changed = False
        out = []
        for i, e in self:
            if e > 1 and i in boolean:
                out.append((i, 1))
                changed = True
            else:
                out.append((i, e))
        return Monomial(out) if changed else self

    def evaluate(self, point: Sequence[float]) -> float:
        v = 1.0
        for i, e in self:
            v *= point[i] ** e
        return v

    def to_string(self, space: "VariableSpace | None" = None) -> str:
        if not self:
            return "1"
        parts = []
        for i, e in self:
            name = space.names[i] if space is not None else f"v{i}"
            parts.append(name if e == 1 else f"{name}^{e}")
        return " * ".join(parts)

    def __repr__(self) -> str:
        return f"Monomial({self.to_string()})"


ONE = Monomial(())


def monomial_product(a: tuple, b: tuple) -> Monomial:
    if not a:
        return b if isinstance(b, Monomial) else Monomial(b)
    if not b:
        return a if isinstance(a, Monomial) else Monomial(a)
    out = []
    i = j = 0
    la, lb = len(a), len(b)
    while i < la and j < lb:
        va, ea = a[i]
        vb, eb = b[j]
        if va == vb:
            out.append((va, ea + eb))
            i += 1
            j += 1
        elif va < vb:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    if i < la:
        out.extend(a[i:])
    if j < lb:
        out.extend(b[j:])
    return Monomial(out)


def _same_space(p: "Poly", q: "Poly") -> None:
    if p.space is not q.space and p.space != q.space:
        raise ValueError("polynomials live in different variable spaces")


Scalar = Union[int, float, np.floating, np.integer]


class Poly:
    """A real polynomial: sparse map from :class:`Monomial` to coefficient."""

    __slots__ = ("space", "terms")

    def __init__(self, space: VariableSpace, terms: Mapping | None = None):
        self.space = space
        clean = {}
        if terms:
            for m, c in terms.items():
                c = float(c)
                if c != 0.0:
                    clean[m if isinstance(m, Monomial) else Monomial(m)] = c
        self.terms = clean

    # construction helpers
    @classmethod
    def _raw(cls, space, terms: dict) -> "Poly":
        p = cls.__new__(cls)
        p.space = space
        p.terms = terms
        return p

    def _coerce(self, other) -> "Poly":
        if isinstance(other, Poly):
            _same_space(self, other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.space.const(float(other))
        return NotImplemented

    # arithmetic
    def __add__(self, other) -> "Poly":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            s = out.get(m, 0.0) + c
            if s == 0.0:
                out.pop(m, None)
            else:
                out[m] = s
        return Poly._raw(self.space, out)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly._raw(self.space, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Poly":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other) -> "Poly":
        return (-self) + other

    def __mul__(self, other) -> "Poly":
        if isinstance(other, (int, float, np.floating, np.integer)):
            c0 = float(other)
            if c0 == 0.0:
                return Poly._raw(self.space, {})
            return Poly._raw(self.space, {m: c * c0 for m, c in self.terms.items()})
        if not isinstance(other, Poly):
            return NotImplemented
        _same_space(self, other)
        out: dict = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = monomial_product(ma, mb)
                out[m] = out.get(m, 0.0) + ca * cb
        return Poly._raw(self.space, {m: c for m, c in out.items() if c != 0.0})

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Poly":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int) -> "Poly":
        k = int(k)
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        result = self.space.const(1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = self.space.const(float(other))
        if not isinstance(other, Poly):
            return NotImplemented
        return self.space == other.space and self.terms == other.terms

    def __hash__(self):
        return hash((self.space.names, frozenset(self.terms.items())))

    # queries
    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        return max((m.degree for m in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, m: Monomial) -> float:
        return self.terms.get(m, 0.0)

    def constant_term(self) -> float:
        return self.terms.get(ONE, 0.0)

    def monomials(self) -> list:
        return sorted(self.terms, key=Monomial.grlex_key)

    def variables(self) -> set:
        return {i for m in self.terms for i, _ in m}

    def __call__(self, point: Sequence[float]) -> float:
        return self.eval(point)

    def eval(self, point: Sequence[float]) -> float:
        point = np.asarray(point, dtype=float).ravel()
        if point.shape[0] != self.space.count:
            raise ValueError(
                f"point has length {point.shape[0]}, expected {self.space.count}"
            )
        pl = point.tolist()
        return float(math.fsum(c * m.evaluate(pl) for m, c in self.terms.items()))

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # transforms
    def reduce_boolean(self, boolean) -> "Poly":
        boolean = frozenset(boolean)
        out: dict = {}
        for m, c in self.terms.items():
            r = m.reduce_boolean(boolean)
            out[r] = out.get(r, 0.0) + c
        return Poly(self.space, out)

    def substitute_scales(self, scales: Sequence[float]) -> "Poly":
        """Return q with q(x) = p(scales * x)."""
        out = {}
        for m, c in self.terms.items():
            f = c
            for i, e in m:
                f *= scales[i] ** e
            out[m] = f
        return Poly(self.space, out)

    def approx_equal(self, other: "Poly", tol: float = 1e-10) -> bool:
        d = self - other
        return d.max_abs_coef() <= tol * max(1.0, self.max_abs_coef(), other.max_abs_coef())

    # text form
    def to_string(self, named: bool = False) -> str:
        if not self.terms:
            return "0"
        parts = []
        for m in self.monomials():
            c = self.terms[m]
            if not m:
                parts.append(repr(c))
            else:
                parts.append(f"{c!r} * {m.to_string(self.space if named else None)}")
        return " + ".join(parts)

    def __str__(self) -> str:
        return self.to_string(named=True)

    def __repr__(self) -> str:
        return f"Poly({self.to_string()})"

    _FACTOR = re.compile(r"^v(\d+)(?:\^(\d+))?$")

    @classmethod
    def parse(cls, text: str, space: VariableSpace) -> "Poly":
        """Inverse of :meth:`to_string` with index-named variables."""
        text = text.strip()
        if text == "0":
            return space.zero()
        out: dict = {}
        for term in text.split(" + "):
            factors = term.split(" * ")
            coef = float(factors[0])
            exps: dict = {}
            for f in factors[1:]:
                mt = cls._FACTOR.match(f.strip())
                if mt is None:
                    raise ValueError(f"cannot parse factor {f!r}")
                i = int(mt.group(1))
                if i >= space.count:
                    raise ValueError(f"variable index {i} out of range")
                exps[i] = exps.get(i, 0) + int(mt.group(2) or 1)
            m = Monomial.from_exponents(exps)
            out[m] = out.get(m, 0.0) + coef
        return cls(space, out)


def add(p: Poly, q: Poly) -> Poly:
    _same_space(p, q)
    return p + q


def mul(p: Poly, q: Poly) -> Poly:
    _same_space(p, q)
    return p * q


def _as_poly(x, space: VariableSpace) -> Poly:
    if isinstance(x, Poly):
        return x
    return space.const(float(x))


def inner_power(a: Sequence, b: Sequence, t: int, space: VariableSpace | None = None) -> Poly:
    """Expand ``(<a, b>)**t``; entries may be polynomials or numbers."""
    if len(a) != len(b):
        raise ValueError("vectors must have equal length")
    if t < 1:
        raise ValueError("t must be at least 1")
    if space is None:
        for x in list(a) + list(b):
            if isinstance(x, Poly):
                space = x.space
                break
        else:
            raise ValueError("no polynomial entries; pass space explicitly")
    s = space.zero()
    for x, y in zip(a, b):
        s = s + _as_poly(x, space) * _as_poly(y, space)
    return s ** t


class PolyMatrix:
    """Symmetric matrix of polynomials."""

    __slots__ = ("space", "entries")

    def __init__(self, space: VariableSpace, entries: Sequence[Sequence]):
        n = len(entries)
        rows = []
        for i in range(n):
            if len(entries[i]) != n:
                raise ValueError("PolyMatrix must be square")
            rows.append([_as_poly(e, space) for e in entries[i]])
        for i in range(n):
            for j in range(i + 1, n):
                if not rows[i][j].approx_equal(rows[j][i], 1e-12):
                    raise ValueError(f"PolyMatrix not symmetric at ({i}, {j})")
        self.space = space
        self.entries = rows

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def degree(self) -> int:
        return max((e.degree for row in self.entries for e in row), default=-1)

    def __getitem__(self, ij) -> Poly:
        i, j = ij
        return self.entries[i][j]

    def evaluate(self, point: Sequence[float]) -> np.ndarray:
        n = self.dim
        out = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                out[i, j] = out[j, i] = self.entries[i][j].eval(point)
        return out

    @classmethod
    def diag(cls, polys: Sequence[Poly]) -> "PolyMatrix":
        space = polys[0].space
        n = len(polys)
        rows = [[polys[i] if i == j else space.zero() for j in range(n)] for i in range(n)]
        return cls(space, rows)


def monomials_up_to(variables: Sequence[int], degree: int, boolean=frozenset()) -> list:
    """All monomials in ``variables`` of degree <= ``degree``, graded-lex sorted.

    Boolean variables appear with exponent at most 1.
    """
    variables = sorted(set(int(v) for v in variables))
    boolean = frozenset(boolean)
    out = []

    def rec(pos: int, remaining: int, acc: list):
        if pos == len(variables):
            out.append(Monomial(acc))
            return
        v = variables[pos]
        top = min(remaining, 1) if v in boolean else remaining
        for e in range(top + 1):
            rec(pos + 1, remaining - e, acc + [(v, e)] if e else acc)

    rec(0, degree, [])
    out.sort(key=Monomial.grlex_key)
    return out
