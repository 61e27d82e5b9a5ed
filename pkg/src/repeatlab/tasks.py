"""Synthetic feature-learning tasks and dataset-level interventions.

Two task families are supported:

* ``parity``: ``x ~ Unif({-1,+1}^d)``, ``y = prod_{i in S} x_i`` for a support
  ``S`` of size ``k`` (0-based indices).
* ``sim``: ``x ~ N(0, I_d)``, ``y = He_k(<w*, x>)`` with a standard-normal
  teacher ``w*`` and the probabilists' Hermite polynomial ``He_k``.

Datasets are immutable. Draws are prefix-consistent: the first ``n'`` rows of a
size-``n`` dataset equal the size-``n'`` dataset built from the same seed, which
is what makes nested phase subsets possible.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from repeatlab.errors import ConfigurationError, InterventionError

PARITY = "parity"
SIM = "sim"

BIAS_MODES = ("mean-zero", "label-balance", "class-conditional", "antipodal")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    d: int
    k: int
    support: tuple = ()
    teacher: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in (PARITY, SIM):
            raise ConfigurationError(f"unknown task kind {self.kind!r}; expected 'parity' or 'sim'")
        if not 1 <= self.k <= self.d:
            raise ConfigurationError(f"need 1 <= k <= d, got k={self.k}, d={self.d}")
        if self.kind == PARITY:
            s = tuple(int(i) for i in self.support)
            if len(s) != self.k or len(set(s)) != self.k:
                raise ConfigurationError(f"parity support must hold {self.k} distinct indices, got {s}")
            if any(i < 0 or i >= self.d for i in s):
                raise ConfigurationError(f"parity support {s} out of range for d={self.d}")
            object.__setattr__(self, "support", s)
        else:
            if self.teacher is None or np.shape(self.teacher) != (self.d,):
                raise ConfigurationError("sim task needs a teacher vector of length d")
            if not np.all(np.isfinite(self.teacher)):
                raise ConfigurationError("sim teacher has non-finite entries")
            object.__setattr__(self, "teacher", _frozen(self.teacher))

    @classmethod
    def parity(cls, d: int, k: int, support: Optional[Sequence[int]] = None) -> "TaskSpec":
        """(d, k)-sparse parity; the support defaults to the first k coordinates."""
        if support is None:
            support = range(k)
        return cls(PARITY, d, k, tuple(support))

    @classmethod
    def sim(cls, d: int, k: int, seed: int = 0) -> "TaskSpec":
        teacher = np.random.default_rng(seed).standard_normal(d)
        return cls(SIM, d, k, (), teacher)

    def labels(self, X: np.ndarray) -> np.ndarray:
        if self.kind == PARITY:
            return parity_label(X, self.support)
        return hermite(self.k, X @ self.teacher)

    def sample_inputs(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == PARITY:
            # one uniform double per entry keeps draws prefix-consistent
            return np.where(rng.random((n, self.d)) < 0.5, -1.0, 1.0)
        return rng.standard_normal((n, self.d))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "k": self.k}
        if self.kind == PARITY:
            out["support"] = list(self.support)
        return out


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    task: TaskSpec
    seed: Optional[int]
    transform: str = "none"
    # random-label SIM keeps the feature vector that generated its labels
    label_teacher: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        X = _frozen(self.X)
        y = _frozen(self.y)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise ConfigurationError(f"bad dataset shapes X={X.shape}, y={y.shape}")
        if X.shape[1] != self.task.d:
            raise ConfigurationError(f"dataset has {X.shape[1]} columns but task d={self.task.d}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    def head(self, n: int) -> "LabeledDataset":
        """First ``n`` rows (the nested-subset view)."""
        if not 1 <= n <= self.N:
            raise ConfigurationError(f"cannot take {n} rows of a size-{self.N} dataset")
        return replace(self, X=self.X[:n], y=self.y[:n])


def parity_label(x: np.ndarray, support: Sequence[int]) -> np.ndarray:
    """Product of the coordinates in ``support``; works on one row or a batch."""
    x = np.asarray(x, dtype=np.float64)
    idx = list(support)
    d = x.shape[-1]
    if any(i < 0 or i >= d for i in idx):
        raise ConfigurationError(f"support {idx} out of range for d={d}")
    return np.prod(x[..., idx], axis=-1)


def hermite(k: int, z):
    """Probabilists' Hermite polynomial He_k(z) by the three-term recurrence."""
    if k < 0:
        raise ConfigurationError(f"Hermite order must be >= 0, got {k}")
    z = np.asarray(z, dtype=np.float64)
    prev, cur = np.ones_like(z), z.copy()
    if k == 0:
        return prev if prev.ndim else float(prev)
    for j in range(1, k):
        prev, cur = cur, z * cur - j * prev
    return cur if cur.ndim else float(cur)


def make_dataset(task: TaskSpec, N: int, seed: int) -> LabeledDataset:
    """Draw ``N`` i.i.d. samples from the task's law (pure in task, N, seed)."""
    if N < 1:
        raise ConfigurationError(f"dataset size must be >= 1, got {N}")
    rng = np.random.default_rng(seed)
    X = task.sample_inputs(N, rng)
    return LabeledDataset(X, task.labels(X), task, seed)


def population_dataset(task: TaskSpec) -> LabeledDataset:
    """Every point of the hypercube exactly once (parity only).

    Full-batch GD on this set is exact population gradient descent.
    """
    if task.kind != PARITY:
        raise ConfigurationError("an enumerable population exists only for parity tasks")
    if task.d > 24:
        raise ConfigurationError(f"refusing to enumerate 2^{task.d} points")
    X = np.array(list(itertools.product((-1.0, 1.0), repeat=task.d)))
    return LabeledDataset(X, task.labels(X), task, None, "population")


def _balance(ds: LabeledDataset) -> np.ndarray:
    """Row mask dropping the last-drawn excess rows of the majority label."""
    y = ds.y
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)
    if len(pos) == 0 or len(neg) == 0:
        raise InterventionError("label balancing impossible: all labels are equal")
    keep = min(len(pos), len(neg))
    mask = np.zeros(ds.N, dtype=bool)
    mask[pos[:keep]] = True
    mask[neg[:keep]] = True
    return mask


def remove_input_bias(ds: LabeledDataset, mode: str = "mean-zero") -> LabeledDataset:
    """Remove the empirical input bias of a parity dataset.

    ``mean-zero`` subtracts the column mean. ``label-balance`` first drops rows so
    that the labels average to zero, then centres. ``class-conditional`` balances
    and centres X within each label class. ``antipodal`` appends ``-x`` for every
    row, which keeps inputs boolean; labels stay valid only for even ``k``.
    """
    if ds.task.kind != PARITY:
        raise InterventionError("input-bias removal is defined for parity datasets")
    if mode not in BIAS_MODES:
        raise ConfigurationError(f"unknown bias-removal mode {mode!r}; expected one of {BIAS_MODES}")
    X, y = ds.X, ds.y
    if mode == "mean-zero":
        Xc = X - X.mean(axis=0)
        tag = "centered"
    elif mode == "label-balance":
        m = _balance(ds)
        X, y = X[m], y[m]
        Xc = X - X.mean(axis=0)
        tag = "centered+label-balanced"
    elif mode == "class-conditional":
        m = _balance(ds)
        X, y = X[m], y[m]
        Xc = X.copy()
        for label in (-1.0, 1.0):
            rows = y == label
            Xc[rows] -= X[rows].mean(axis=0)
        tag = "centered+class-conditional"
    else:
        if ds.task.k % 2:
            raise InterventionError("antipodal augmentation flips odd-k parity labels")
        Xc = np.vstack([X, -X])
        y = np.concatenate([y, y])
        tag = "antipodal"
    return replace(ds, X=Xc, y=y, transform=tag)


def whiten(ds: LabeledDataset, min_eig: float = 1e-10) -> LabeledDataset:
    """Map inputs to ``Sigma^{-1/2} (x - mu)`` using empirical moments."""
    if ds.task.kind != SIM:
        raise InterventionError("whitening is defined for sim datasets")
    mu = ds.X.mean(axis=0)
    Xc = ds.X - mu
    cov = Xc.T @ Xc / ds.N
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= min_eig:
        raise InterventionError(
            f"empirical covariance is singular (smallest eigenvalue {evals[0]:.3e}); need N > d"
        )
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return replace(ds, X=Xc @ inv_sqrt, transform="whitened")


def randomize_labels(ds: LabeledDataset, seed: int) -> LabeledDataset:
    """Replace labels by uniform signs (parity) or a random-teacher SIM labelling."""
    rng = np.random.default_rng(seed)
    if ds.task.kind == PARITY:
        y = np.where(rng.random(ds.N) < 0.5, -1.0, 1.0)
        return replace(ds, y=y, transform="labels-randomized")
    w_random = rng.standard_normal(ds.task.d)
    y = hermite(ds.task.k, ds.X @ w_random)
    return replace(ds, y=y, transform="labels-randomized", label_teacher=_frozen(w_random))


@dataclass(frozen=True)
class BiasedSampler:
    """Per-coordinate Bernoulli law whose means copy an offline dataset's bias."""

    p: np.ndarray
    source_m: int

    def __post_init__(self):
        p = _frozen(self.p)
        if np.any(p < 0) or np.any(p > 1):
            raise ConfigurationError("Bernoulli parameters must lie in [0, 1]")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_dataset(cls, ds: LabeledDataset) -> "BiasedSampler":
        mu = ds.X.mean(axis=0)
        return cls((1.0 + mu) / 2.0, ds.N)

    @classmethod
    def from_source(cls, task: TaskSpec, m: int, seed: int) -> "BiasedSampler":
        return cls.from_dataset(make_dataset(task, m, seed))

    @property
    def mean(self) -> np.ndarray:
        return 2.0 * self.p - 1.0


def biased_online_sample(sampler: BiasedSampler, task: TaskSpec, rng: np.random.Generator, n: int = 1):
    """Draw ``n`` fresh parity samples with ``P[x_i = +1] = p_i``.

    Returns ``(X, y)`` with shapes ``(n, d)`` and ``(n,)``.
    """
    if task.kind != PARITY:
        raise ConfigurationError("biased online sampling is defined for parity tasks")
    if sampler.p.shape != (task.d,):
        raise ConfigurationError(f"sampler has {sampler.p.shape[0]} coordinates, task d={task.d}")
    # x = -1 when u < 1 - p: P[x = +1] = p, and p = 1/2 reproduces sample_inputs draw for draw
    X = np.where(rng.random((n, task.d)) < 1.0 - sampler.p, -1.0, 1.0)
    return X, parity_label(X, task.support)


def export_csv(ds: LabeledDataset, path) -> None:
    """Debug dump with header ``x_1,...,x_d,y`` at 17 significant digits."""
    header = [f"x_{i + 1}" for i in range(ds.task.d)] + ["y"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, label in zip(ds.X, ds.y):
            w.writerow([format(v, ".17g") for v in row] + [format(label, ".17g")])
