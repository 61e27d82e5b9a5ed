"""Quadratic-neuron two-phase dynamics on 2-sparse parity, and lemma checks.

Model: ``f(x) = a (w.x)^2 / 2`` trained with correlation loss. A projected GD
step on a moment matrix ``M`` reads::

    a <- clip(a + (lr/2) w'Mw, -1, 1)
    w <- (w + lr * a * M w) / ||w + lr * a * M w||

with both right-hand sides evaluated at the pre-step ``(a, w)``. Phase 1 uses the
empirical matrix ``M_hat = mean(y x x')`` of a fixed size-``N`` sample until
``|a| >= a_star``; phase 2 uses the population matrix ``e1 e2' + e2 e1'`` until
``w`` is within ``sqrt(eps)`` of one of the four optima ``(+-e1 +- e2)/sqrt 2``.

Every Monte-Carlo verifier here returns a :class:`LemmaReport`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from repeatlab.errors import ConfigurationError, NumericalError
from repeatlab.linalg import NumericalWarning, batched_opnorm
from repeatlab.stats import wilson_interval

C0_DEFAULT = math.sqrt(3.0 / 8.0)
OPTIMA_2D = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]) / math.sqrt(2.0)


@dataclass(frozen=True)
class TheoryConstants:
    c0: float = C0_DEFAULT
    delta: float = 0.1
    bernstein_C: float = 1.0

    def __post_init__(self):
        if not 0 < self.c0 < math.sqrt(3) / 2:
            raise ConfigurationError(f"c0 must lie in (0, sqrt(3)/2), got {self.c0}")
        if not 0 < self.delta < 1:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.bernstein_C > 0:
            raise ConfigurationError("bernstein_C must be positive")


def p_pz(c0: float) -> float:
    """Paley-Zygmund lower bound on Pr[|q0| >= c0/sqrt(N)]."""
    return (1.0 - 1.0 / math.sqrt(2.0)) * (1.0 - 4.0 / 3.0 * c0 ** 2) ** 2 / 3 ** 8


def opnorm_bound(N: int, d: int, delta: float, C: float = 1.0, random_labels: bool = False) -> float:
    """Matrix-Bernstein high-probability bound on ||M_hat||_2.

    With random labels the population matrix vanishes, so the leading 1 drops.
    """
    L = math.log(2 * d / delta)
    dev = C * (math.sqrt(d * L / N) + d * L / N)
    return dev if random_labels else 1.0 + dev


# ---------------------------------------------------------------- moment matrices

@dataclass(frozen=True)
class MomentMatrix:
    M: np.ndarray
    kind: str  # "population" | "empirical"
    N: Optional[int] = None
    seed: Optional[int] = None

    @property
    def d(self) -> int:
        return self.M.shape[0]

    def opnorm(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvalsh(self.M))))


def population_M(d: int) -> MomentMatrix:
    if d < 2:
        raise ConfigurationError(f"2-sparse parity needs d >= 2, got {d}")
    M = np.zeros((d, d))
    M[0, 1] = M[1, 0] = 1.0
    M.flags.writeable = False
    return MomentMatrix(M, "population")


def moment_from_samples(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    M = (X * np.asarray(y, dtype=np.float64)[:, None]).T @ X / X.shape[0]
    return (M + M.T) / 2.0


def empirical_M(ds) -> MomentMatrix:
    """``(1/N) sum_s y_s x_s x_s'`` for a 2-sparse parity dataset."""
    if ds.task.kind != "parity" or ds.task.k != 2:
        raise ConfigurationError("the empirical moment matrix is defined for 2-sparse parity data")
    M = moment_from_samples(ds.X, ds.y)
    M.flags.writeable = False
    return MomentMatrix(M, "empirical", ds.N, ds.seed)


def sample_phase1_matrix(d: int, N: int, rng: np.random.Generator, labels: str = "true") -> np.ndarray:
    """Draw a size-N 2-parity sample (support {0, 1}) and return its moment matrix."""
    X = np.where(rng.random((N, d)) < 0.5, -1.0, 1.0)
    if labels == "true":
        y = X[:, 0] * X[:, 1]
    elif labels == "random":
        y = np.where(rng.random(N) < 0.5, -1.0, 1.0)
    else:
        raise ConfigurationError(f"phase-1 labels must be 'true' or 'random', got {labels!r}")
    return moment_from_samples(X, y)


def _batched_moments(d: int, N: int, trials: int, rng: np.random.Generator, labels: str = "true",
                     chunk_elems: int = 4_000_000) -> np.ndarray:
    """``trials`` independent empirical moment matrices, shape (trials, d, d)."""
    out = np.empty((trials, d, d))
    per = max(1, chunk_elems // (N * d))
    for lo in range(0, trials, per):
        hi = min(trials, lo + per)
        X = np.where(rng.random((hi - lo, N, d)) < 0.5, -1.0, 1.0)
        if labels == "true":
            y = X[:, :, 0] * X[:, :, 1]
        else:
            y = np.where(rng.random((hi - lo, N)) < 0.5, -1.0, 1.0)
        out[lo:hi] = np.einsum("tn,tni,tnj->tij", y, X, X, optimize=True) / N
    return out


def q_form(w: np.ndarray, M) -> float:
    M = M.M if isinstance(M, MomentMatrix) else M
    return float(w @ M @ w)


def uniform_sphere(d: int, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    g = rng.standard_normal(d if n is None else (n, d))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def dist_to_optimum(w: np.ndarray) -> float:
    """Euclidean distance to the nearest of the four optima (+-e1 +- e2)/sqrt 2."""
    tail = float(w[2:] @ w[2:])
    head = np.min(np.sum((w[:2] - OPTIMA_2D) ** 2, axis=1))
    return math.sqrt(head + tail)


def alignment(w: np.ndarray, sign: float):
    """``(|<w, u>|, r)`` for ``u = (e1 + sign e2)/sqrt 2``; ``r = ||w_perp|| / |<w,u>|``."""
    s = 1.0 if sign >= 0 else -1.0
    c = (w[0] + s * w[1]) / math.sqrt(2.0)
    perp = w.copy()
    perp[0] -= c / math.sqrt(2.0)
    perp[1] -= s * c / math.sqrt(2.0)
    al = abs(c)
    r = float(np.linalg.norm(perp)) / al if al > 0 else math.inf
    return al, r


# ---------------------------------------------------------------- dynamics

@dataclass
class QuadTheoryState:
    a: float
    w: np.ndarray
    lr: float
    a_star: float = 1.0
    t: int = 0
    phase: int = 1
    T1: Optional[int] = None
    T2: Optional[int] = None
    d: int = 0
    N: Optional[int] = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if not self.d:
            self.d = self.w.shape[0]


def _step(a: float, w: np.ndarray, M: np.ndarray, lr: float):
    Mw = M @ w
    q = float(w @ Mw)
    v = w + (lr * a) * Mw
    nv = math.sqrt(float(v @ v))
    if nv < 1e-300:
        raise NumericalError("w-update has vanishing norm; cannot renormalise")
    a_new = min(1.0, max(-1.0, a + 0.5 * lr * q))
    return a_new, v / nv, q


def quad_step(state: QuadTheoryState, M) -> QuadTheoryState:
    """One projected GD step; returns a new state (``w`` uses the pre-step ``a``).

    Crossing ``|a| >= a_star`` while in phase 1 flips the phase flag to 2.
    """
    M = M.M if isinstance(M, MomentMatrix) else M
    a, w, _ = _step(state.a, state.w, M, state.lr)
    new = replace(state, a=a, w=w, t=state.t + 1)
    if new.phase == 1 and abs(a) >= new.a_star:
        new.phase = 2
        new.T1 = new.t
    return new


def a_star_schedule(N: int, d: int, lr: float, delta: float = 0.1,
                    consts: TheoryConstants = TheoryConstants(), random_labels: bool = False) -> float:
    """Phase-switch threshold: four-way minimum from the final convergence bound."""
    if not d <= N <= d * d:
        warnings.warn(f"a_star schedule is derived for d <= N <= d^2 (got N={N}, d={d})", stacklevel=2)
    B = opnorm_bound(N, d, delta, consts.bernstein_C, random_labels)
    return min(
        1.0,
        1.0 / (2.0 * lr * B),
        1.0 / (32.0 * lr * B * math.sqrt(d)),
        math.sqrt(consts.c0 / (64.0 * B * math.sqrt(N) * math.sqrt(d))),
    )


def phase_caps(N: int, d: int, lr: float, a_star: float, eps: float, c0: float = C0_DEFAULT):
    cap1 = 100 * math.ceil(2.0 * a_star * math.sqrt(N) / (lr * c0))
    cap2 = 100 * math.ceil((2.0 / (lr * a_star)) * math.log(16.0 * d / eps))
    return cap1, cap2


@dataclass
class TwoPhaseResult:
    T1: int
    T2: int
    status: str  # "OK" | "FAILED"
    a0: float
    q0: float
    w0: np.ndarray = field(repr=False)
    w_switch: np.ndarray = field(repr=False)
    a_switch: float = 0.0
    final: Optional[QuadTheoryState] = field(default=None, repr=False)
    trajectory: List[tuple] = field(default_factory=list, repr=False)
    failed_phase: Optional[int] = None

    @property
    def total(self) -> int:
        return self.T1 + self.T2

    @property
    def ok(self) -> bool:
        return self.status == "OK"


def run_two_phase(d: int, N: int, lr: float, a_star: float, eps: float = 0.01, seed: int = 0,
                  phase1_labels: str = "true", width: Optional[int] = None, max_t1: Optional[int] = None,
                  max_t2: Optional[int] = None, skip_phase1: bool = False, record: bool = False,
                  c0: float = C0_DEFAULT) -> TwoPhaseResult:
    """Simulate phase 1 (fixed size-N sample) then phase 2 (population).

    ``w0`` is uniform on the sphere and ``a0 ~ N(0, 1/width)`` (width defaults to
    ``4 d^2``). A run that hits a step cap is returned with status ``FAILED``.
    The trajectory rows are ``(t, phase, a, q, alignment, r)``.
    """
    if not 0 < eps < 0.5:
        raise ConfigurationError(f"eps must lie in (0, 1/2), got {eps}")
    if not lr > 0:
        raise ConfigurationError("lr must be positive")
    if lr > 0.5:
        warnings.warn("phase-2 contraction is only guaranteed for lr <= 1/2", stacklevel=2)
    width = 4 * d * d if width is None else width
    # (w0, a0) are drawn before the sample so one seed gives the same init for every N
    rng = np.random.default_rng(seed)
    w = uniform_sphere(d, rng)
    a = rng.standard_normal() / math.sqrt(width)
    M1 = sample_phase1_matrix(d, N, rng, phase1_labels)
    a0, w0 = a, w.copy()
    q0 = float(w @ M1 @ w)
    cap1, cap2 = phase_caps(N, d, lr, a_star, eps, c0)
    if max_t1 is not None:
        cap1 = max_t1
    if max_t2 is not None:
        cap2 = max_t2
    if skip_phase1:
        cap2 = max_t2 if max_t2 is not None else 100 * math.ceil(2.0 / (lr * abs(a)) * math.log(16.0 * d / eps))

    traj = []

    def log(t, ph, a, w, q):
        al, r = alignment(w, a)
        traj.append((t, ph, a, q, al, r))

    t1 = 0
    status, failed = "OK", None
    if not skip_phase1:
        while abs(a) < a_star:
            if t1 >= cap1:
                status, failed = "FAILED", 1
                break
            a_next, w_next, q = _step(a, w, M1, lr)
            if record:
                log(t1, 1, a, w, q)
            a, w = a_next, w_next
            t1 += 1
    a_sw, w_sw = a, w.copy()

    P = population_M(d).M
    t2 = 0
    if status == "OK":
        while dist_to_optimum(w) > math.sqrt(eps):
            if t2 >= cap2:
                status, failed = "FAILED", 2
                break
            a_next, w_next, q = _step(a, w, P, lr)
            if record:
                log(t1 + t2, 2, a, w, q)
            a, w = a_next, w_next
            t2 += 1
    final = QuadTheoryState(a, w, lr, a_star, t1 + t2, 2, t1, t2, d, N)
    return TwoPhaseResult(t1, t2, status, a0, q0, w0, w_sw, a_sw, final, traj, failed)


@dataclass
class BatchResult:
    """Per-trial outcomes of :func:`run_two_phase_batch` (arrays of length ``trials``)."""

    T1: np.ndarray
    T2: np.ndarray
    ok: np.ndarray
    failed_phase: np.ndarray
    q0: np.ndarray
    a0: np.ndarray
    seeds: list

    @property
    def total(self) -> np.ndarray:
        return self.T1 + self.T2


def _draw_trial(d, N, seed, labels, width):
    # same draw order as run_two_phase, so a batch trial reproduces the single run
    rng = np.random.default_rng(seed)
    w = uniform_sphere(d, rng)
    a = rng.standard_normal() / math.sqrt(width)
    return sample_phase1_matrix(d, N, rng, labels), w, a


def run_two_phase_batch(d: int, N: int, lr: float, a_star: float, eps: float, seeds, phase1_labels: str = "true",
                        width: Optional[int] = None, skip_phase1: bool = False,
                        c0: float = C0_DEFAULT, max_t1: Optional[int] = None,
                        max_t2: Optional[int] = None) -> BatchResult:
    """Vectorised :func:`run_two_phase` over many trial seeds (same draws, same caps)."""
    if not 0 < eps < 0.5:
        raise ConfigurationError(f"eps must lie in (0, 1/2), got {eps}")
    width = 4 * d * d if width is None else width
    seeds = list(seeds)
    n = len(seeds)
    Ms = np.empty((n, d, d))
    W = np.empty((n, d))
    A = np.empty(n)
    for i, s in enumerate(seeds):
        Ms[i], W[i], A[i] = _draw_trial(d, N, s, phase1_labels, width)
    a0 = A.copy()
    q0 = np.einsum("ti,tij,tj->t", W, Ms, W)
    cap1, cap2 = phase_caps(N, d, lr, a_star, eps, c0)
    cap1 = cap1 if max_t1 is None else max_t1
    cap2 = cap2 if max_t2 is None else max_t2
    T1 = np.zeros(n, dtype=np.int64)
    T2 = np.zeros(n, dtype=np.int64)
    failed = np.zeros(n, dtype=np.int64)

    def advance(idx, M):
        Mw = np.einsum("tij,tj->ti", M, W[idx]) if M.ndim == 3 else W[idx] @ M
        q = np.einsum("ti,ti->t", W[idx], Mw)
        V = W[idx] + (lr * A[idx])[:, None] * Mw
        nv = np.linalg.norm(V, axis=1)
        if np.any(nv < 1e-300):
            raise NumericalError("w-update has vanishing norm; cannot renormalise")
        A[idx] = np.clip(A[idx] + 0.5 * lr * q, -1.0, 1.0)
        W[idx] = V / nv[:, None]

    if not skip_phase1:
        active = np.abs(A) < a_star
        while active.any():
            over = active & (T1 >= cap1)
            failed[over] = 1
            active &= ~over
            idx = np.flatnonzero(active)
            if not idx.size:
                break
            advance(idx, Ms[idx])
            T1[idx] += 1
            active[idx] = np.abs(A[idx]) < a_star
    if skip_phase1:
        cap2s = np.array([max_t2 if max_t2 is not None else
                          100 * math.ceil(2.0 / (lr * abs(a)) * math.log(16.0 * d / eps)) for a in a0])
    else:
        cap2s = np.full(n, cap2)
    P = population_M(d).M
    r_eps = math.sqrt(eps)

    def dist(idx):
        head = np.min(np.sum((W[idx, None, :2] - OPTIMA_2D[None]) ** 2, axis=2), axis=1)
        tail = np.sum(W[idx, 2:] ** 2, axis=1)
        return np.sqrt(head + tail)

    active = failed == 0
    idx = np.flatnonzero(active)
    active[idx] = dist(idx) > r_eps
    while active.any():
        over = active & (T2 >= cap2s)
        failed[over] = 2
        active &= ~over
        idx = np.flatnonzero(active)
        if not idx.size:
            break
        advance(idx, P)
        T2[idx] += 1
        active[idx] = dist(idx) > r_eps
    return BatchResult(T1, T2, failed == 0, failed, q0, a0, seeds)


# ---------------------------------------------------------------- reports

@dataclass
class LemmaReport:
    lemma: str
    params: dict
    trials: int
    estimate: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    violations: int = 0
    passed: bool = True
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.violations = int(self.violations)
        for name in ("estimate", "ci_low", "ci_high"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, float(v))

    def to_json(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out


def _prob_report(lemma, params, hits, n, passed, **details) -> LemmaReport:
    lo, hi = wilson_interval(hits, n)
    est = hits / n if n else float("nan")
    return LemmaReport(lemma, params, n, est, lo, hi, 0, bool(passed), details)


# ---------------------------------------------------------------- lemma verifiers

def verify_q_monotone(trials: int, d: int, N: int, lr: float, seed: int = 0, tol: float = 1e-12) -> LemmaReport:
    """One w-update under ``lr |a| ||M_hat|| <= 1/2`` moves q in the direction of sign(a).

    ``a`` is drawn uniformly from the stable range, so the boundary is exercised.
    A violation is ``sign(a) (q+ - q) < -tol * max(1, ||M_hat||)``.
    """
    rng = np.random.default_rng(seed)
    Ms = _batched_moments(d, N, trials, rng)
    norms = np.max(np.abs(np.linalg.eigvalsh(Ms)), axis=1)
    W = uniform_sphere(d, rng, trials)
    A = rng.uniform(-1.0, 1.0, trials) / (2.0 * lr * norms)
    MW = np.einsum("tij,tj->ti", Ms, W)
    q = np.einsum("ti,ti->t", W, MW)
    V = W + (lr * A)[:, None] * MW
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    qp = np.einsum("ti,tij,tj->t", V, Ms, V)
    diff = qp - q
    bad = np.sign(A) * diff < -tol * np.maximum(1.0, norms)
    v = int(bad.sum())
    return LemmaReport("q_monotone", dict(d=d, N=N, lr=lr, seed=seed), trials, None, None, None, v, v == 0,
                       {"min_signed_increment": float(np.min(np.sign(A) * diff))})


def verify_phase2_contraction(trials: int, d: int, lr: float, seed: int = 0, steps: int = 200,
                              tol: float = 1e-12) -> LemmaReport:
    """Population phase: ``r_{t+1} <= r_t / (1 + lr |a_t|)`` along random trajectories."""
    if lr > 0.5:
        raise ConfigurationError("population contraction requires lr <= 1/2")
    rng = np.random.default_rng(seed)
    P = population_M(d).M
    worst = -math.inf
    violations = 0
    for _ in range(trials):
        w = uniform_sphere(d, rng)
        q = float(w @ P @ w)
        a = math.copysign(rng.uniform(0.01, 1.0), q)
        s = math.copysign(1.0, a)
        _, r = alignment(w, s)
        for _ in range(steps):
            a_next, w, _ = _step(a, w, P, lr)
            _, r_next = alignment(w, s)
            excess = r_next - r / (1.0 + lr * abs(a))
            worst = max(worst, excess)
            violations += excess > tol
            a, r = a_next, r_next
            if r < 1e-14:
                break
    return LemmaReport("phase2_contraction", dict(d=d, lr=lr, seed=seed, steps=steps), trials, worst, None, None,
                       int(violations), violations == 0, {"max_excess": worst})


def q0_samples(d: int, N: int, trials: int, rng: np.random.Generator, labels: str = "true"):
    """``(w0, q0)`` for ``trials`` independent (initialisation, dataset) pairs."""
    W = uniform_sphere(d, rng, trials)
    q = np.empty(trials)
    per = max(1, 4_000_000 // (N * d))
    for lo in range(0, trials, per):
        hi = min(trials, lo + per)
        X = np.where(rng.random((hi - lo, N, d)) < 0.5, -1.0, 1.0)
        if labels == "true":
            y = X[:, :, 0] * X[:, :, 1]
        else:
            y = np.where(rng.random((hi - lo, N)) < 0.5, -1.0, 1.0)
        proj = np.einsum("tnd,td->tn", X, W[lo:hi])
        q[lo:hi] = np.mean(y * proj ** 2, axis=1)
    return W, q


def mc_q0_anticoncentration(d: int, N: int, trials: int, c0: float = C0_DEFAULT, seed: int = 0,
                            labels: str = "true", band: float = 0.1) -> LemmaReport:
    """Estimate ``Pr[|q0| >= c0/sqrt(N)]`` and compare with the Paley-Zygmund bound."""
    if d < 3:
        raise ConfigurationError("the anti-concentration lemma needs d >= 3")
    rng = np.random.default_rng(seed)
    _, q = q0_samples(d, N, trials, rng, labels)
    hits = int(np.sum(np.abs(q) >= c0 / math.sqrt(N)))
    est = hits / trials
    bound = p_pz(c0)
    return _prob_report("q0_anticoncentration", dict(d=d, N=N, c0=c0, seed=seed, labels=labels), hits, trials,
                        est >= bound and est >= band, p_pz=bound, band=band,
                        median_scaled_q0=float(np.median(np.abs(q)) * math.sqrt(N)))


def mc_mhat_opnorm(d: int, N: int, trials: int, delta: float = 0.1, seed: int = 0, C: float = 1.0,
                   labels: str = "true") -> LemmaReport:
    """``(1 - delta)`` quantile of ``||M_hat||_2`` against the Bernstein bound.

    The bound's universal constant is unknown, so exceeding it is reported in
    ``details`` but does not fail the report.
    """
    rng = np.random.default_rng(seed)
    Ms = _batched_moments(d, N, trials, rng, labels)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NumericalWarning)
        norms = batched_opnorm(Ms, rng=rng)
    fallbacks = sum(issubclass(w.category, NumericalWarning) for w in caught)
    qnt = float(np.quantile(norms, 1.0 - delta))
    bound = opnorm_bound(N, d, delta, C, labels == "random")
    return LemmaReport("mhat_opnorm", dict(d=d, N=N, delta=delta, C=C, seed=seed, labels=labels), trials, qnt,
                       None, None, 0, True,
                       {"bound": bound, "within_bound": bool(qnt <= bound), "median": float(np.median(norms)),
                        "power_iteration_fallbacks": fallbacks})


def mc_alignment_event(d: int, trials: int, seed: int = 0, N: Optional[int] = None, width: Optional[int] = None,
                       c0: float = C0_DEFAULT, band: float = 0.2) -> dict:
    """Initial-alignment events for ``w0`` uniform on the sphere.

    Returns reports for: the random-alignment event with ``u = e1``; the
    population margin event ``P0``; the joint sign event ``G_sign & P0``
    (needs ``N``); the sign-match frequency given ``q0 != 0``; and the
    ``Beta(1, (d-2)/2)`` law of ``||P12 w0||^2`` evaluated at 1/2.
    """
    if d < 3:
        raise ConfigurationError("alignment lemmas are stated for d >= 3")
    N = d if N is None else N
    width = 4 * d * d if width is None else width
    rng = np.random.default_rng(seed)
    W, q0 = q0_samples(d, N, trials, rng)
    a0 = rng.standard_normal(trials) / math.sqrt(width)
    params = dict(d=d, N=N, seed=seed)

    align = np.abs(W[:, 0]) >= 1.0 / (2.0 * math.sqrt(d))
    r2 = W[:, 0] ** 2 + W[:, 1] ** 2
    qpop = 2.0 * W[:, 0] * W[:, 1]
    P0 = (np.abs(qpop) >= 3.0 / (4.0 * d)) & (r2 <= 1.0 / d)
    G = (np.sign(a0) == np.sign(q0)) & (np.sign(q0) == np.sign(qpop)) & (np.abs(q0) >= c0 / math.sqrt(N))
    nz = q0 != 0
    match = int(np.sum((np.sign(a0) == np.sign(q0)) & nz))
    beta_exact = 1.0 - 2.0 ** (-(d - 2) / 2.0)
    beta_hits = int(np.sum(r2 <= 0.5))

    out = {
        "alignment": _prob_report("init_alignment", params, int(align.sum()), trials, align.mean() >= band, band=band),
        "population_margin": _prob_report("population_margin", params, int(P0.sum()), trials, P0.mean() > 0),
        "joint_sign": _prob_report("joint_sign_alignment", params, int((G & P0).sum()), trials, (G & P0).mean() > 0),
        "sign_match": _prob_report("sign_match", params, match, int(nz.sum()),
                                   abs(match / max(1, nz.sum()) - 0.5) <= 0.02, target=0.5, tolerance=0.02),
        "beta_cdf": _prob_report("beta_cdf_half", params, beta_hits, trials, abs(beta_hits / trials - beta_exact) <= 0.02,
                                 exact=beta_exact, tolerance=0.02),
    }
    return out


def _phase1_trials(trials: int, d: int, N: int, lr: float, a_star: float, seed: int, width: Optional[int],
                   c0: float, max_steps: int):
    """Yield ``(w0, a0, M_hat, opnorm, kept, history)`` for phase-1 runs up to ``|a| >= a_star``.

    ``kept`` marks trials satisfying the sign, anti-concentration and stability
    preconditions; only kept trials are simulated (history is None otherwise).
    """
    width = 4 * d * d if width is None else width
    rng = np.random.default_rng(seed)
    q_star = c0 / math.sqrt(N)
    for _ in range(trials):
        M = sample_phase1_matrix(d, N, rng)
        w0 = uniform_sphere(d, rng)
        a0 = rng.standard_normal() / math.sqrt(width)
        nrm = float(np.max(np.abs(np.linalg.eigvalsh(M))))
        q0 = float(w0 @ M @ w0)
        kept = (np.sign(a0) == np.sign(q0)) and abs(q0) >= q_star and lr * a_star * nrm <= 0.5
        if not kept:
            yield w0, a0, M, nrm, False, None
            continue
        a, w = a0, w0.copy()
        hist = [(a, q0, w)]
        t = 0
        while abs(a) < a_star and t < max_steps:
            a, w, _ = _step(a, w, M, lr)
            hist.append((a, float(w @ M @ w), w))
            t += 1
        yield w0, a0, M, nrm, True, hist


def verify_phase1_trajectories(trials: int, d: int, N: int, lr: float, a_star: float, seed: int = 0,
                               width: Optional[int] = None, c0: float = C0_DEFAULT, tol: float = 1e-12,
                               max_steps: int = 1_000_000) -> LemmaReport:
    """On kept trials, ``sign(a_t)`` never flips and ``|q_t| >= |q_0|`` before ``T*``."""
    flips = drops = kept = 0
    for w0, a0, M, nrm, ok, hist in _phase1_trials(trials, d, N, lr, a_star, seed, width, c0, max_steps):
        if not ok:
            continue
        kept += 1
        s = math.copysign(1.0, a0)
        q0 = hist[0][1]
        # states strictly before T* (the last entry is the first with |a| >= a_star)
        for a, q, _ in hist[:-1]:
            if math.copysign(1.0, a) != s or math.copysign(1.0, q) != s:
                flips += 1
                break
        for a, q, _ in hist[:-1]:
            if abs(q) < abs(q0) - tol:
                drops += 1
                break
        if math.copysign(1.0, hist[-1][0]) != s:
            flips += 1
    v = flips + drops
    return LemmaReport("phase1_sign_and_q", dict(d=d, N=N, lr=lr, a_star=a_star, seed=seed), trials,
                       kept / trials, None, None, v, v == 0,
                       {"kept": kept, "sign_flips": flips, "q_drops": drops})


def verify_w_drift(trials: int, d: int, N: int, lr: float, a_star: float, seed: int = 0,
                   width: Optional[int] = None, c0: float = C0_DEFAULT, check_quarter: bool = False,
                   max_steps: int = 1_000_000) -> LemmaReport:
    """Inner-weight drift up to ``T*`` stays below the explicit drift bound.

    With ``check_quarter`` the drift must additionally be at most ``1/(4 sqrt d)``.
    """
    q_star = c0 / math.sqrt(N)
    kept = violations = quarter_viol = 0
    worst_ratio = 0.0
    max_drift = 0.0
    for w0, a0, M, nrm, ok, hist in _phase1_trials(trials, d, N, lr, a_star, seed, width, c0, max_steps):
        if not ok:
            continue
        kept += 1
        drift = float(np.linalg.norm(hist[-1][2] - w0))
        bound = 8.0 * nrm / q_star * a_star * max(a_star - abs(a0), 0.0) + 4.0 * lr * nrm * a_star
        max_drift = max(max_drift, drift)
        worst_ratio = max(worst_ratio, drift / bound if bound > 0 else (math.inf if drift > 0 else 0.0))
        violations += drift > bound + 1e-12
        quarter_viol += drift > 1.0 / (4.0 * math.sqrt(d))
    v = violations + (quarter_viol if check_quarter else 0)
    return LemmaReport("w_drift", dict(d=d, N=N, lr=lr, a_star=a_star, seed=seed), trials, max_drift, None, None,
                       int(v), v == 0,
                       {"kept": kept, "filter_rate": kept / trials, "worst_drift_over_bound": worst_ratio,
                        "quarter_violations": int(quarter_viol)})


def verify_sign_transfer(trials: int, d: int, N: int, lr: float, a_star: float, seed: int = 0,
                         width: Optional[int] = None, c0: float = C0_DEFAULT,
                         max_steps: int = 1_000_000) -> LemmaReport:
    """Phase-1 drift below ``1/(4 sqrt d)`` from a ``P0`` start keeps ``sign(q_pop)``."""
    P = population_M(d).M
    tested = violations = 0
    for w0, a0, M, nrm, ok, hist in _phase1_trials(trials, d, N, lr, a_star, seed, width, c0, max_steps):
        if not ok:
            continue
        qpop0 = float(w0 @ P @ w0)
        r = math.hypot(w0[0], w0[1])
        wT = hist[-1][2]
        if abs(qpop0) < 3.0 / (4.0 * d) or r > 1.0 / math.sqrt(d):
            continue
        if np.linalg.norm(wT - w0) > 1.0 / (4.0 * math.sqrt(d)):
            continue
        tested += 1
        qpopT = float(wT @ P @ wT)
        s = math.copysign(1.0, qpop0)
        u = np.zeros(d)
        u[0], u[1] = 1.0 / math.sqrt(2.0), s / math.sqrt(2.0)
        bad_sign = math.copysign(1.0, qpopT) != s
        bad_align = abs(float(wT @ u)) < 1.0 / (2.0 * math.sqrt(d)) - 1e-12
        violations += bad_sign or bad_align
    return LemmaReport("sign_transfer", dict(d=d, N=N, lr=lr, a_star=a_star, seed=seed), trials,
                       tested / trials, None, None, int(violations), violations == 0, {"tested": tested})


# ---------------------------------------------------------------- studies

def _med(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.median(v)) if v.size else math.nan


def scaling_study(d: int = 16, Ns: Optional[Sequence[int]] = None, lr: float = 0.001, a_star: float = 0.03,
                  width: int = 10_000_000, eps: float = 0.01, trials: int = 1000, phase1_labels: str = "true",
                  base_seed: int = 0, schedule_lr: float = 0.03, schedule_width: Optional[int] = None,
                  schedule_trials: int = 300, delta: float = 0.1, consts: TheoryConstants = TheoryConstants(),
                  slope_target: float = 0.5, slope_tol: float = 0.15, baseline: bool = True,
                  baseline_a_star: float = 0.3) -> dict:
    """Phase-1 scaling at fixed ``(a_star, lr)`` plus total steps under the a_star schedule.

    Part 1 measures only phase 1 (success = reaching ``a_star`` within the cap).
    Part 2 runs both phases with ``a_star = a_star_schedule(N, ...)`` for
    ``N in {d, d^2}``; ``schedule_width`` (default ``d^4``) sets the output
    init scale. The optional baseline compares two-phase training at a fixed
    ``baseline_a_star`` with phase-2-only training from the same draws at ``N = d``.
    """
    from repeatlab.seeding import derive_seed
    from repeatlab.stats import loglog_slope

    Ns = list(Ns) if Ns else [d, 4 * d, 16 * d, 64 * d]
    rows, trial_rows = [], []
    meds = []
    for N in Ns:
        seeds = [derive_seed(base_seed, "theory-fixed", i) for i in range(trials)]
        b = run_two_phase_batch(d, N, lr, a_star, eps, seeds, phase1_labels, width, c0=consts.c0, max_t2=0)
        ok = b.failed_phase != 1
        m = _med(b.T1[ok])
        meds.append(m)
        rows.append({"study": "fixed", "N": N, "lr": lr, "a_star": a_star, "width": width, "labels": phase1_labels,
                     "n_trials": trials, "n_ok": int(ok.sum()), "median_T1": m, "median_T2": math.nan,
                     "median_total": math.nan})
        trial_rows.extend({"study": "fixed", "N": N, "trial": i, "T1": int(b.T1[i]), "T2": "",
                           "ok": bool(ok[i])} for i in range(trials))
    slope = loglog_slope(Ns, meds) if all(m > 0 for m in meds) else math.nan

    sw = schedule_width if schedule_width is not None else d ** 4
    totals = {}
    for N in (d, d * d):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = a_star_schedule(N, d, schedule_lr, delta, consts)
        seeds = [derive_seed(base_seed, "theory-schedule", i) for i in range(schedule_trials)]
        b = run_two_phase_batch(d, N, schedule_lr, a, eps, seeds, "true", sw, c0=consts.c0)
        totals[N] = _med(b.total[b.ok])
        rows.append({"study": "schedule", "N": N, "lr": schedule_lr, "a_star": a, "width": sw, "labels": "true",
                     "n_trials": schedule_trials, "n_ok": int(b.ok.sum()), "median_T1": _med(b.T1[b.ok]),
                     "median_T2": _med(b.T2[b.ok]), "median_total": totals[N]})
        trial_rows.extend({"study": "schedule", "N": N, "trial": i, "T1": int(b.T1[i]), "T2": int(b.T2[i]),
                           "ok": bool(b.ok[i])} for i in range(schedule_trials))
    if baseline:
        seeds = [derive_seed(base_seed, "theory-baseline", i) for i in range(schedule_trials)]
        for skip in (False, True):
            b = run_two_phase_batch(d, d, schedule_lr, baseline_a_star, eps, seeds, "true", sw, skip_phase1=skip,
                                    c0=consts.c0)
            rows.append({"study": "phase2_only" if skip else "two_phase_baseline", "N": d, "lr": schedule_lr,
                         "a_star": baseline_a_star, "width": sw, "labels": "true", "n_trials": schedule_trials,
                         "n_ok": int(b.ok.sum()), "median_T1": _med(b.T1[b.ok]), "median_T2": _med(b.T2[b.ok]),
                         "median_total": _med(b.total[b.ok])})
    checks = {
        "t1_slope": slope,
        "t1_slope_in_band": bool(abs(slope - slope_target) <= slope_tol),
        "total_at_d_le_total_at_d2": bool(totals[d] <= totals[d * d]),
    }
    if baseline:
        two, only = rows[-2]["median_total"], rows[-1]["median_total"]
        checks["phase2_only_slower"] = bool(only > two)
    return {"rows": rows, "trials": trial_rows, "checks": checks}


def verify_suite(base_seed: int = 0, trials: int = 10000, trajectories: int = 1000, phase1_trials: int = 2000,
                 transfer_trials: int = 20000, d: int = 10, N: int = 40, lr: float = 0.1,
                 contraction_lr: float = 0.5, delta: float = 0.1, anticoncentration_pairs=((10, 40), (50, 200)),
                 opnorm_Ns=(10, 40, 160), alignment_dims=(3, 10, 50), drift_Ns=(10, 100),
                 long_a_star: float = 0.3) -> List[LemmaReport]:
    """Every lemma check with its default sizes; each check has its own keyed seed."""
    from repeatlab.seeding import derive_seed

    def sd(*labels):
        return derive_seed(base_seed, "verify", *labels)

    out = [verify_q_monotone(trials, d, N, lr, sd("q_monotone")),
           verify_phase2_contraction(trajectories, d, contraction_lr, sd("contraction"))]
    for dd, NN in anticoncentration_pairs:
        out.append(mc_q0_anticoncentration(dd, NN, trials, seed=sd("q0", dd, NN)))
    quant = []
    for NN in opnorm_Ns:
        rep = mc_mhat_opnorm(d, NN, trials, delta, sd("opnorm", NN))
        quant.append(rep.estimate)
        out.append(rep)
    dec = all(b < a for a, b in zip(quant, quant[1:]))
    out.append(LemmaReport("mhat_opnorm_decreasing", {"d": d, "Ns": list(opnorm_Ns), "delta": delta}, trials,
                           None, None, None, 0 if dec else 1, dec, {"quantiles": quant}))
    for dd in alignment_dims:
        ev = mc_alignment_event(dd, trials, sd("alignment", dd))
        out.append(ev["alignment"])
        if dd == d:
            out.extend([ev["population_margin"], ev["joint_sign"], ev["sign_match"], ev["beta_cdf"]])
    width = d ** 4
    for NN in drift_Ns:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = a_star_schedule(NN, d, lr, delta)
        out.append(verify_phase1_trajectories(phase1_trials, d, NN, lr, a, sd("phase1", NN), width))
        out.append(verify_w_drift(phase1_trials, d, NN, lr, a, sd("drift", NN), width, check_quarter=True))
        out.append(verify_sign_transfer(transfer_trials, d, NN, lr, a, sd("transfer", NN), width))
    # long phase-1 trajectories well inside the stability region
    out.append(verify_phase1_trajectories(phase1_trials // 4, d, N, lr, long_a_star, sd("phase1-long"), width))
    out.append(verify_w_drift(phase1_trials // 4, d, N, lr, long_a_star, sd("drift-long"), width))
    return out
