"""Synthetic data: explicitly bounded components, mixtures and adversaries.

Every generator is a pure function of its spec, sample count and seed.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .poly import Monomial, Poly, VariableSpace
from .program import gaussian_moment

KINDS = ("gaussian", "product_rademacher", "product_uniform", "rotated_product")
BASES = ("rademacher", "uniform")
ADVERSARIES = ("mean_shift", "far_outliers", "moment_stealth")
CORRUPTED = -1

# product coordinates carry variance proxy 1/2 before rotation
_RADEMACHER_SCALE = math.sqrt(0.5)
_UNIFORM_HALF_WIDTH = math.sqrt(1.5)


def _as_vector(x) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError("mean must be a vector")
    return v


@dataclass(frozen=True)
class DistributionSpec:
    """One explicitly bounded component.

    ``gaussian`` is N(mean, sigma I). The product kinds draw independent
    coordinates with variance proxy ``sigma / 2`` (scaled Rademacher or
    uniform); ``rotated_product`` applies ``rotation`` to a product of kind
    ``base``.
    """

    kind: str
    mean: np.ndarray
    rotation: np.ndarray | None = None
    variance_proxy: float = 1.0
    base: str = "rademacher"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.base not in BASES:
            raise ValueError(f"base must be one of {BASES}")
        if not self.variance_proxy > 0:
            raise ValueError("variance_proxy must be positive")
        mean = _as_vector(self.mean)
        object.__setattr__(self, "mean", mean)
        rot = self.rotation
        if rot is not None:
            rot = np.asarray(rot, dtype=float)
            d = mean.size
            if rot.shape != (d, d):
                raise ValueError("rotation must be d x d")
            if np.max(np.abs(rot.T @ rot - np.eye(d))) > 1e-10:
                raise ValueError("rotation must be orthogonal within 1e-10")
            if self.kind != "rotated_product":
                raise ValueError("rotation only applies to kind 'rotated_product'")
        elif self.kind == "rotated_product":
            rot = np.eye(mean.size)
        object.__setattr__(self, "rotation", rot)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def random_rotation(cls, mean, seed=None, base: str = "rademacher", variance_proxy: float = 1.0):
        """A ``rotated_product`` with a Haar-random rotation."""
        from scipy.stats import special_ortho_group

        d = _as_vector(mean).size
        rot = np.eye(1) if d == 1 else special_ortho_group.rvs(d, random_state=seed)
        return cls("rotated_product", mean, rot, variance_proxy, base)

    # -- sampling -----------------------------------------------------------
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.dim
        sig = math.sqrt(self.variance_proxy)
        if self.kind == "gaussian":
            Z = rng.standard_normal((n, d))
        else:
            base = "rademacher" if self.kind == "product_rademacher" else \
                "uniform" if self.kind == "product_uniform" else self.base
            if base == "rademacher":
                Z = _RADEMACHER_SCALE * rng.choice([-1.0, 1.0], size=(n, d))
            else:
                Z = rng.uniform(-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH, size=(n, d))
            if self.kind == "rotated_product":
                Z = Z @ self.rotation.T
        return self.mean + sig * Z

    # -- moments ------------------------------------------------------------
    def _coordinate_moment(self, k: int) -> float:
        if k % 2:
            return 0.0
        base = "rademacher" if self.kind == "product_rademacher" else \
            "uniform" if self.kind == "product_uniform" else self.base
        if base == "rademacher":
            return _RADEMACHER_SCALE ** k
        return _UNIFORM_HALF_WIDTH ** k / (k + 1)

    def centered_moment(self, theta: Sequence[int]) -> float:
        """``E[(Y - mean)^theta]`` in closed form."""
        theta = tuple(int(x) for x in theta)
        if len(theta) != self.dim or min(theta, default=0) < 0:
            raise ValueError("theta must be a nonnegative multi-index of length d")
        order = sum(theta)
        scale = self.variance_proxy ** (order / 2)
        if self.kind == "gaussian":
            return scale * gaussian_moment(theta)
        if self.kind != "rotated_product":
            return scale * math.prod(self._coordinate_moment(k) for k in theta)
        # (R z)^theta expanded over z, then independence
        space = VariableSpace.indexed("z", self.dim)
        expr = space.const(1.0)
        for a, k in enumerate(theta):
            if k:
                lin = Poly(space, {Monomial(((b, 1),)): float(self.rotation[a, b])
                                   for b in range(self.dim) if self.rotation[a, b] != 0.0})
                expr = expr * lin ** k
        total = 0.0
        for mono, c in expr.terms.items():
            total += c * math.prod(self._coordinate_moment(e) for _, e in mono)
        return scale * total

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean.tolist(),
                "rotation": None if self.rotation is None or self.kind != "rotated_product"
                else self.rotation.tolist(),
                "variance_proxy": self.variance_proxy, "base": self.base}

    @classmethod
    def from_dict(cls, data: dict) -> "DistributionSpec":
        return cls(data["kind"], data["mean"], data.get("rotation"),
                   data.get("variance_proxy", 1.0), data.get("base", "rademacher"))


def population_moment_tensor(spec: DistributionSpec, t: int) -> np.ndarray:
    """``E (Y-mu)^{(x) t/2} ((Y-mu)^{(x) t/2})^T`` as a ``d^{t/2} x d^{t/2}`` matrix."""
    if t % 2 or t <= 0 or t > 8:
        raise ValueError("t must be even and at most 8")
    d = spec.dim
    h = t // 2
    idx = list(itertools.product(range(d), repeat=h))
    cache: dict = {}
    out = np.empty((len(idx), len(idx)))
    for r, I in enumerate(idx):
        for c, J in enumerate(idx):
            theta = [0] * d
            for a in I + J:
                theta[a] += 1
            key = tuple(theta)
            if key not in cache:
                cache[key] = spec.centered_moment(key)
            out[r, c] = cache[key]
    return out


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("need at least one component")
        d = comps[0].dim
        if any(c.dim != d for c in comps):
            raise ValueError("components must share a dimension")
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != len(comps):
            raise ValueError("one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def separation(self) -> float:
        """Minimum pairwise distance between component means (inf for k = 1)."""
        mu = self.means
        best = math.inf
        for i in range(self.k):
            for j in range(i + 1, self.k):
                best = min(best, float(np.linalg.norm(mu[i] - mu[j])))
        return best

    @classmethod
    def single(cls, spec: DistributionSpec) -> "MixtureSpec":
        return cls((spec,), np.ones(1))

    @classmethod
    def collinear(cls, k: int, d: int, delta: float, kind: str = "gaussian",
                  weights=None) -> "MixtureSpec":
        """k components with means ``j * delta * e_1``, centred at the origin."""
        offsets = (np.arange(k) - (k - 1) / 2.0) * delta
        comps = []
        for off in offsets:
            mean = np.zeros(d)
            mean[0] = off
            comps.append(DistributionSpec(kind, mean))
        w = np.full(k, 1.0 / k) if weights is None else weights
        return cls(tuple(comps), w)

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components],
                "weights": self.weights.tolist(), "separation": self.separation}

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureSpec":
        return cls(tuple(DistributionSpec.from_dict(c) for c in data["components"]),
                   data["weights"])


@dataclass
class DatasetWithTruth:
    """Samples plus everything an oracle needs.

    ``labels`` holds the component id per row, or ``CORRUPTED`` (-1) for a
    replaced row; ``clean_copies`` are the rows before corruption.
    """

    samples: np.ndarray
    labels: np.ndarray
    clean_copies: np.ndarray
    means: np.ndarray
    spec: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def corrupted(self) -> np.ndarray:
        return self.labels == CORRUPTED

    @property
    def clean_labels(self) -> np.ndarray:
        """Component ids of the pre-corruption draws."""
        return np.asarray(self.spec.get("clean_labels", self.labels), dtype=int)

    @property
    def true_mean(self) -> np.ndarray:
        w = np.asarray(self.spec.get("mixture", {}).get("weights", [1.0]), dtype=float)
        if w.size != len(self.means):
            w = np.full(len(self.means), 1.0 / len(self.means))
        return w @ self.means

    def save(self, path) -> tuple:
        """Write ``path`` (CSV samples) and ``path.json`` (everything else)."""
        path = Path(path)
        d = self.samples.shape[1]
        header = ",".join(f"x{a}" for a in range(d))
        np.savetxt(path, self.samples, delimiter=",", header=header, comments="", fmt="%.17g")
        side = {
            "labels": self.labels.tolist(),
            "clean_copies": self.clean_copies.tolist(),
            "means": self.means.tolist(),
            "spec": self.spec,
        }
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps(side, indent=1))
        return path, sidecar

    @classmethod
    def load(cls, path) -> "DatasetWithTruth":
        path = Path(path)
        X = read_samples_csv(path)
        side = json.loads(path.with_name(path.name + ".json").read_text())
        return cls(X, np.asarray(side["labels"], dtype=int),
                   np.asarray(side["clean_copies"], dtype=float).reshape(X.shape),
                   np.asarray(side["means"], dtype=float), side.get("spec", {}))


def read_samples_csv(path) -> np.ndarray:
    """One sample per row; an optional non-numeric header line is skipped."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    try:
        [float(x) for x in first.strip().split(",") if x]
        skip = 0
    except ValueError:
        skip = 1
    X = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    return X


def sample_mixture(spec: MixtureSpec, n: int, seed=None) -> DatasetWithTruth:
    """Draw ``n`` i.i.d. points: a component per the weights, then a point from it."""
    if not isinstance(spec, MixtureSpec):
        raise TypeError("spec must be a MixtureSpec")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(spec.k, size=n, p=spec.weights)
    X = np.empty((n, spec.dim))
    for j, comp in enumerate(spec.components):
        rows = np.flatnonzero(labels == j)
        if rows.size:
            X[rows] = comp.sample(rows.size, rng)
    prov = {"mixture": spec.to_dict(), "n": int(n), "seed": _seed_repr(seed)}
    return DatasetWithTruth(X, labels.astype(int), X.copy(), spec.means, prov)


def sample_balanced(spec: MixtureSpec, n: int, seed=None) -> DatasetWithTruth:
    """Like :func:`sample_mixture` with component counts fixed to round(w n)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    counts = np.floor(spec.weights * n).astype(int)
    for j in np.argsort(-(spec.weights * n - counts))[: n - counts.sum()]:
        counts[j] += 1
    labels = np.repeat(np.arange(spec.k), counts)
    rng.shuffle(labels)
    X = np.empty((n, spec.dim))
    for j, comp in enumerate(spec.components):
        rows = np.flatnonzero(labels == j)
        if rows.size:
            X[rows] = comp.sample(rows.size, rng)
    prov = {"mixture": spec.to_dict(), "n": int(n), "seed": _seed_repr(seed), "balanced": True}
    return DatasetWithTruth(X, labels.astype(int), X.copy(), spec.means, prov)


def _seed_repr(seed):
    return seed if seed is None or isinstance(seed, int) else str(seed)


def corrupt(dataset: DatasetWithTruth, eps: float, adversary: str = "mean_shift", seed=None, *,
            shift=None, radius: float = 100.0, t: int = 4, scale: float = 1.0) -> DatasetWithTruth:
    """Replace exactly ``floor(eps n)`` rows, then shuffle all rows.

    ``mean_shift`` puts every bad row at ``mu* + shift`` (default ``10 e_1``);
    ``far_outliers`` spreads them uniformly on the radius-``radius`` sphere
    around ``mu*``; ``moment_stealth`` stacks them at distance
    ``scale * sqrt(t) * (1 - eps)^(-1/t)`` along a random direction, a
    heuristic placement that nearly satisfies the t-th moment bound.
    """
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    if adversary not in ADVERSARIES:
        raise ValueError(f"adversary must be one of {ADVERSARIES}")
    rng = np.random.default_rng(seed)
    n, d = dataset.samples.shape
    nbad = int(math.floor(eps * n + 1e-9))
    X = dataset.samples.copy()
    labels = dataset.labels.copy()
    mu = dataset.true_mean
    bad = rng.choice(n, size=nbad, replace=False) if nbad else np.zeros(0, dtype=int)
    if nbad:
        if adversary == "mean_shift":
            v = np.zeros(d)
            v[0] = 10.0
            if shift is not None:
                v = np.broadcast_to(np.asarray(shift, dtype=float), (d,))
            X[bad] = mu + v
        elif adversary == "far_outliers":
            G = rng.standard_normal((nbad, d))
            G /= np.linalg.norm(G, axis=1, keepdims=True)
            X[bad] = mu + radius * G
        else:
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            r = scale * math.sqrt(t) * (1.0 - eps) ** (-1.0 / t)
            X[bad] = mu + r * u
        labels[bad] = CORRUPTED
    perm = rng.permutation(n)
    spec = dict(dataset.spec)
    spec["clean_labels"] = dataset.labels[perm].tolist() if "clean_labels" not in dataset.spec \
        else np.asarray(dataset.spec["clean_labels"])[perm].tolist()
    spec["corruption"] = {"eps": eps, "adversary": adversary, "seed": _seed_repr(seed),
                          "count": nbad, "shift": None if shift is None else np.asarray(shift).tolist(),
                          "radius": radius, "t": t, "scale": scale}
    return DatasetWithTruth(X[perm], labels[perm], dataset.clean_copies[perm],
                            dataset.means.copy(), spec)
