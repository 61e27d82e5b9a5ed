"""Data-reuse regimes: fixed subsets, nested multi-phase schedules, online phases.

Phase ``i`` of a nested schedule trains on the first ``N_i`` rows of one
seed-fixed master dataset, so ``S_i`` is a subset of ``S_j`` for ``i < j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from repeatlab.errors import ConfigurationError
from repeatlab.tasks import LabeledDataset

ONLINE = "online"
FULL_BATCH = None

# Parity 6-phase recipe: fraction of the online-run data budget and epochs per phase.
PARITY_CURRICULUM_FRACTIONS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.1)
PARITY_CURRICULUM_EPOCHS = (100, 50, 20, 10, 10, 4)


@dataclass(frozen=True)
class Phase:
    """One stage of a schedule.

    ``size`` is a row count or ``ONLINE``; exactly one of ``steps``, ``epochs`` or
    ``auto`` sets the duration. An online phase with no duration runs until the
    global step budget is spent.
    """

    size: Union[int, str]
    steps: Optional[int] = None
    epochs: Optional[int] = None
    auto: bool = False

    def __post_init__(self):
        if self.size != ONLINE and (not isinstance(self.size, (int, np.integer)) or self.size < 1):
            raise ConfigurationError(f"phase size must be a positive count or 'online', got {self.size!r}")
        rules = sum([self.steps is not None, self.epochs is not None, bool(self.auto)])
        if rules > 1:
            raise ConfigurationError("a phase takes exactly one of steps, epochs, auto")
        if rules == 0 and self.size != ONLINE:
            raise ConfigurationError("a fixed-size phase needs a duration (steps, epochs or auto)")
        for name in ("steps", "epochs"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigurationError(f"phase {name} must be >= 0, got {v}")

    @property
    def online(self) -> bool:
        return self.size == ONLINE


@dataclass(frozen=True)
class PhaseSchedule:
    phases: Sequence[Phase]
    auto_acc_threshold: float = 0.75
    auto_max_epochs: int = 50
    nested: bool = True
    with_replacement: bool = True

    def __post_init__(self):
        phases = tuple(self.phases)
        if not phases:
            raise ConfigurationError("a schedule needs at least one phase")
        if any(p.online for p in phases[:-1]):
            raise ConfigurationError("an online phase may only be the final phase")
        sizes = [p.size for p in phases if not p.online]
        if self.nested and any(b < a for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError(
                f"nested schedule requires nondecreasing subset sizes (S_i within S_j), got {sizes}"
            )
        if self.auto_max_epochs < 1:
            raise ConfigurationError("auto_max_epochs must be >= 1")
        object.__setattr__(self, "phases", phases)

    @property
    def max_size(self) -> int:
        return max([p.size for p in self.phases if not p.online], default=0)

    @classmethod
    def single(cls, size: int, steps: int) -> "PhaseSchedule":
        return cls([Phase(size, steps=steps)])

    @classmethod
    def from_fractions(cls, online_total: int, fractions, epochs, **kw) -> "PhaseSchedule":
        sizes = [max(1, int(round(f * online_total))) for f in fractions]
        return cls([Phase(s, epochs=e) for s, e in zip(sizes, epochs)], **kw)

    @classmethod
    def parity_curriculum(cls, online_total: int) -> "PhaseSchedule":
        return cls.from_fractions(online_total, PARITY_CURRICULUM_FRACTIONS, PARITY_CURRICULUM_EPOCHS)

    @classmethod
    def auto_sizes(cls, online_total: int, n_phases: int = 6, first: float = 1 / 320,
                   last: float = 1 / 50, **kw) -> "PhaseSchedule":
        """Geometrically spaced auto-advancing phases between two budget fractions."""
        return cls([Phase(s, auto=True) for s in geometric_sizes(online_total, n_phases, first, last)], **kw)


def geometric_sizes(online_total: int, n_phases: int = 6, first: float = 1 / 320, last: float = 1 / 50) -> List[int]:
    if n_phases < 1:
        raise ConfigurationError("need at least one phase")
    if n_phases == 1:
        return [max(1, round(first * online_total))]
    fr = np.geomspace(first, last, n_phases)
    return [max(1, int(round(f * online_total))) for f in fr]


@dataclass
class ComputeLedger:
    """Counts optimisation steps and sample-presentations (sum of batch sizes)."""

    steps: int = 0
    compute: int = 0
    per_phase: dict = field(default_factory=dict)
    log: List[int] = field(default_factory=list)

    def record_step(self, B: int, phase: int = 0) -> "ComputeLedger":
        if B < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {B}")
        self.steps += 1
        self.compute += int(B)
        s, c = self.per_phase.get(phase, (0, 0))
        self.per_phase[phase] = (s + 1, c + int(B))
        self.log.append(int(B))
        return self


def record_step(ledger: ComputeLedger, B: int, phase: int = 0) -> ComputeLedger:
    return ledger.record_step(B, phase)


Sampler = Callable[[np.random.Generator, int], tuple]


@dataclass
class PhaseState:
    """A realised phase: its rows (or fresh-sample handle) plus progress counters."""

    index: int
    phase: Phase
    data: Optional[LabeledDataset] = None
    sampler: Optional[Sampler] = None
    rows: Optional[np.ndarray] = None  # row indices into the master set, for nesting checks
    steps_done: int = 0
    _perm: Optional[np.ndarray] = field(default=None, repr=False)
    _cursor: int = 0

    @property
    def N(self) -> Optional[int]:
        return None if self.data is None else self.data.N

    def steps_per_epoch(self, B: Optional[int]) -> int:
        if self.data is None:
            return 1
        B = self.N if B is None else B
        return math.ceil(self.N / B)

    def epochs_done(self, B: Optional[int]) -> int:
        return self.steps_done // self.steps_per_epoch(B)


def build_phases(source, schedule: PhaseSchedule, base_seed: int = 0, sampler: Optional[Sampler] = None) -> List[PhaseState]:
    """Realise a schedule over a master dataset.

    ``source`` is the master :class:`LabeledDataset`; phase ``i`` uses its first
    ``N_i`` rows. For non-nested schedules each phase takes an independent
    random subset (seeded from ``base_seed``). The online phase uses ``sampler``.
    """
    states = []
    master = source
    if schedule.max_size and (master is None or master.N < schedule.max_size):
        avail = 0 if master is None else master.N
        raise ConfigurationError(f"schedule needs {schedule.max_size} rows but only {avail} are available")
    rng = np.random.default_rng(base_seed)
    for i, ph in enumerate(schedule.phases):
        if ph.online:
            if sampler is None:
                raise ConfigurationError("an online phase needs a fresh-sample handle")
            states.append(PhaseState(i, ph, sampler=sampler))
            continue
        if schedule.nested:
            rows = np.arange(ph.size)
        else:
            rows = np.sort(rng.choice(master.N, size=ph.size, replace=False))
        data = master.head(ph.size) if schedule.nested else _subset(master, rows)
        states.append(PhaseState(i, ph, data=data, rows=rows))
    return states


def _subset(ds: LabeledDataset, rows: np.ndarray) -> LabeledDataset:
    from dataclasses import replace

    return replace(ds, X=ds.X[rows], y=ds.y[rows])


def next_batch(state: PhaseState, B: Optional[int], rng: np.random.Generator, with_replacement: bool = True):
    """Return ``(X, y)`` for one step.

    Full-batch mode (``B is None``) returns the whole phase set in row order.
    Fixed phases draw ``B`` row indices uniformly with replacement (or walk a
    per-epoch shuffle when ``with_replacement`` is False). Online phases draw
    ``B`` fresh samples.
    """
    if state.data is None:
        if B is None:
            raise ConfigurationError("an online phase needs an explicit batch size")
        return state.sampler(rng, B)
    idx = batch_indices(state, B, rng, with_replacement)
    if B is None:
        return state.data.X, state.data.y
    return state.data.X[idx], state.data.y[idx]


def batch_indices(state: PhaseState, B: Optional[int], rng: np.random.Generator, with_replacement: bool = True) -> np.ndarray:
    N = state.N
    if B is None:
        return np.arange(N)
    if B < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {B}")
    if with_replacement:
        return rng.integers(0, N, size=B)
    out = []
    need = B
    while need:
        if state._perm is None or state._cursor >= N:
            state._perm = rng.permutation(N)
            state._cursor = 0
        take = min(need, N - state._cursor)
        out.append(state._perm[state._cursor:state._cursor + take])
        state._cursor += take
        need -= take
    return np.concatenate(out)


def should_advance(phase: Phase, epoch_count: int, train_acc: Optional[float] = None, steps_done: int = 0,
                   acc_threshold: float = 0.75, max_epochs: int = 50) -> bool:
    """Whether a phase is finished.

    ``steps``/``epochs`` rules fire exactly at the configured count; ``auto``
    fires once training accuracy reaches ``acc_threshold`` or ``max_epochs``
    epochs have elapsed. Online phases without a duration never advance.
    """
    if phase.steps is not None:
        return steps_done >= phase.steps
    if phase.epochs is not None:
        return epoch_count >= phase.epochs
    if phase.auto:
        return (train_acc is not None and train_acc >= acc_threshold) or epoch_count >= max_epochs
    return False
