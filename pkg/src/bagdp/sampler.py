"""Subsample generation and the closed-form partition masses.

Random streams come from numpy's PCG64 seeded through ``SeedSequence``.
Stream splitting is done with ``SeedSequence(root_seed, spawn_key=(i,))``,
so subsample ``i`` of a run is reproducible on its own, independent of
how many other subsamples were drawn or in which order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .accountant import BaggingConfig, Mode
from .errors import InfeasibleConfigError, InvalidArgumentError

# spawn key reserved for the single joint draw of without-replacement Bagging
JOINT_STREAM = 2**32 - 1


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for ``(seed, index)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


@dataclass(frozen=True)
class Subsample:
    mode: Mode
    indices: tuple[int, ...]
    n: int

    def __post_init__(self):
        if any(not 0 <= i < self.n for i in self.indices):
            raise InvalidArgumentError("indices", f"out of range [0, {self.n})")
        if self.mode is Mode.WITHOUT_REPLACEMENT and any(
            a >= b for a, b in zip(self.indices, self.indices[1:])
        ):
            raise InvalidArgumentError("indices", "must be strictly increasing without replacement")

    def __len__(self) -> int:
        return len(self.indices)


def partial_fisher_yates(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """First ``m`` entries of a uniformly random permutation of ``range(n)``.

    The result is an ordered sequence of distinct indices; every one of the
    n!/(n-m)! sequences is equally likely.
    """
    if m > n:
        raise InfeasibleConfigError(f"cannot draw {m} distinct indices from {n}")
    pool = np.arange(n, dtype=np.int64)
    picks = rng.integers(np.arange(m), n, dtype=np.int64) if m else np.empty(0, np.int64)
    for i in range(m):
        j = picks[i]
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:m].copy()


def sample(config: BaggingConfig, subsample_index: int, rng: np.random.Generator | None = None) -> Subsample:
    """Draw one subsample of size ``config.k``.

    Without an explicit ``rng`` the stream derived from
    ``(config.seed, subsample_index)`` is used.
    """
    if not 0 <= subsample_index < config.N:
        raise InvalidArgumentError("subsample_index", f"must lie in [0, {config.N})")
    if rng is None:
        rng = stream(config.seed, subsample_index)
    n, k = config.n, config.k
    if config.mode is Mode.WITH_REPLACEMENT:
        idx = rng.integers(0, n, size=k, dtype=np.int64)
    else:
        if k > n:
            raise InfeasibleConfigError(f"subsample size k={k} exceeds n={n} without replacement")
        idx = np.sort(partial_fisher_yates(n, k, rng))
    return Subsample(config.mode, tuple(int(i) for i in idx), n)


def sample_all(config: BaggingConfig) -> list[Subsample]:
    """The N subsamples of one Bagging run, as a single accounting unit.

    With replacement: N independent k-draws (same joint law as one N*k
    draw split evenly). Without replacement: one draw of N*k distinct
    indices, cut into N consecutive blocks of k, each block sorted.
    """
    if config.mode is Mode.WITH_REPLACEMENT:
        return [sample(config, i) for i in range(config.N)]
    joint = partial_fisher_yates(config.n, config.total_draws, stream(config.seed, JOINT_STREAM))
    blocks = joint.reshape(config.N, config.k)
    return [Subsample(config.mode, tuple(int(i) for i in np.sort(b)), config.n) for b in blocks]


@dataclass(frozen=True)
class PartitionMass:
    """Masses of the D-only / D'-only / shared regions of subsample space."""

    p_gamma1: float
    p_gamma3: float
    q_gamma2: float
    q_gamma3: float
    neighbor_size: int


def log_binomial_ratio(a: int, b: int, k: int) -> float:
    """``ln(C(a, k) / C(b, k))`` for non-negative integers with ``k <= min(a, b)``.

    Uses C(x, k) / C(x + 1, k) = (x + 1 - k) / (x + 1), so the cost is
    ``|a - b|`` logarithms no matter how large ``a``, ``b`` and ``k`` are.
    """
    if k > min(a, b):
        raise InfeasibleConfigError(f"C({min(a, b)}, {k}) is zero")
    if a > b:
        return -log_binomial_ratio(b, a, k)
    return math.fsum(math.log1p(-k / (x + 1)) for x in range(a, b))


def partition_masses(n: int, k: int, mode: Mode | str, neighbor_size: int) -> PartitionMass:
    """Probability that a subsample of D (size n) or D' lands in each region.

    ``neighbor_size`` selects the adjacency direction: ``n - 1`` (one example
    removed) or ``n + 1`` (one example added).
    """
    mode = Mode.parse(mode)
    for name, value in (("n", n), ("k", k)):
        if value < 1:
            raise InvalidArgumentError(name, f"must be positive, got {value}")
    if neighbor_size not in (n - 1, n + 1):
        raise InvalidArgumentError("neighbor_size", f"must be n-1 or n+1, got {neighbor_size}")
    shared = min(n, neighbor_size)

    if mode is Mode.WITH_REPLACEMENT:
        if neighbor_size == 0:
            raise InfeasibleConfigError("the empty neighbor has no subsamples")
        # (shared/size)**k evaluated as exp(k * log1p(...))
        log_p3 = k * math.log1p((shared - n) / n) if shared != n else 0.0
        log_q3 = k * math.log1p((shared - neighbor_size) / neighbor_size) if shared != neighbor_size else 0.0
    else:
        if k > shared:
            raise InfeasibleConfigError(
                f"k={k} exceeds min(n, neighbor_size)={shared} without replacement"
            )
        log_p3 = log_binomial_ratio(shared, n, k)
        log_q3 = log_binomial_ratio(shared, neighbor_size, k)

    return PartitionMass(
        p_gamma1=-math.expm1(log_p3),
        p_gamma3=math.exp(log_p3),
        q_gamma2=-math.expm1(log_q3),
        q_gamma3=math.exp(log_q3),
        neighbor_size=neighbor_size,
    )
