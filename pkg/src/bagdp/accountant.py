"""Closed-form (epsilon, delta) budgets of Bagging and their inverses.

Both tight budgets depend on the configuration only through ``n`` and the
total number of draws ``m = N * k``:

* with replacement:    eps = m * ln(1 + 1/n),          delta = 1 - (1 - 1/n)**m
* without replacement: eps = ln((n + 1) / (n + 1 - m)), delta = m / n

Every expression is evaluated with ``log1p``/``expm1`` so that the small
quantities typical of real budgets keep full relative precision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import InfeasibleConfigError, InvalidArgumentError

MAX_INT = 2**63 - 1
MAX_SEED = 2**64 - 1


class Mode(str, enum.Enum):
    WITH_REPLACEMENT = "with"
    WITHOUT_REPLACEMENT = "without"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {
            "with": cls.WITH_REPLACEMENT,
            "with_replacement": cls.WITH_REPLACEMENT,
            "without": cls.WITHOUT_REPLACEMENT,
            "without_replacement": cls.WITHOUT_REPLACEMENT,
        }
        try:
            return aliases[str(value).lower().replace("-", "_")]
        except KeyError:
            raise InvalidArgumentError("mode", f"unknown sampling mode {value!r}") from None


class BudgetSource(str, enum.Enum):
    WITH_REPLACEMENT_TIGHT = "with_replacement_tight"
    WITHOUT_REPLACEMENT_TIGHT = "without_replacement_tight"
    COMPOSED_LOOSE = "composed_loose"


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    source: BudgetSource
    # set when a composed delta exceeded 1 and was clamped
    clamped: bool = False

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise InvalidArgumentError("epsilon", f"must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.delta <= 1.0:
            raise InvalidArgumentError("delta", f"must lie in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class BaggingConfig:
    """Everything that determines the privacy of one Bagging run."""

    n: int
    k: int
    N: int
    mode: Mode = Mode.WITH_REPLACEMENT
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        for name in ("n", "k", "N"):
            _check_positive(name, getattr(self, name))
        if not isinstance(self.seed, int) or not 0 <= self.seed <= MAX_SEED:
            raise InvalidArgumentError("seed", f"must be an unsigned 64-bit integer, got {self.seed!r}")
        total = draws(self.N, self.k)
        if self.mode is Mode.WITHOUT_REPLACEMENT and total > self.n:
            raise InfeasibleConfigError(
                f"without-replacement Bagging needs N*k <= n, got N*k={total} > n={self.n}"
            )

    @property
    def total_draws(self) -> int:
        return self.N * self.k


def _check_positive(name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidArgumentError(name, f"must be an integer, got {value!r}")
    if value <= 0:
        raise InvalidArgumentError(name, f"must be positive, got {value}")
    if value > MAX_INT:
        raise InvalidArgumentError(name, f"exceeds 2**63-1, got {value}")


def draws(N: int, k: int) -> int:
    """Return ``N * k``, refusing products that do not fit a signed 64-bit int."""
    total = N * k
    if total > MAX_INT:
        raise InvalidArgumentError("N*k", f"product {total} overflows 64-bit range")
    return total


# Unchecked evaluations; ``m`` is the total number of draws.

def _eps_with(n: int, m: int) -> float:
    return m * math.log1p(1.0 / n)


def _delta_with(n: int, m: int) -> float:
    if n == 1:
        return 1.0
    return -math.expm1(m * math.log1p(-1.0 / n))


def _eps_without(n: int, m: int) -> float:
    # ln((n+1)/(n+1-m)) == log1p(m/(n+1-m)); exact integer arithmetic inside
    return math.log1p(m / (n + 1 - m))


def _delta_without(n: int, m: int) -> float:
    return m / n


def budget_with_replacement(n: int, k: int, N: int = 1) -> PrivacyBudget:
    """Tight budget of Bagging with replacement.

    ``n = 1`` is accepted and yields the degenerate ``delta = 1``.
    """
    for name, value in (("n", n), ("k", k), ("N", N)):
        _check_positive(name, value)
    m = draws(N, k)
    return PrivacyBudget(_eps_with(n, m), _delta_with(n, m), BudgetSource.WITH_REPLACEMENT_TIGHT)


def budget_without_replacement(n: int, k: int, N: int = 1) -> PrivacyBudget:
    """Tight budget of Bagging without replacement (requires ``N*k <= n``)."""
    for name, value in (("n", n), ("k", k), ("N", N)):
        _check_positive(name, value)
    m = draws(N, k)
    if m > n:
        raise InfeasibleConfigError(
            f"without-replacement budget undefined; delta would exceed 1 (N*k={m} > n={n})"
        )
    return PrivacyBudget(_eps_without(n, m), _delta_without(n, m), BudgetSource.WITHOUT_REPLACEMENT_TIGHT)


def composed_budget_with_replacement(n: int, k: int, N: int = 1) -> PrivacyBudget:
    """Budget obtained by composing N single-model guarantees.

    This is the loose baseline: epsilon matches the tight bound but delta
    grows as ``N * (1 - (1 - 1/n)**k)``, clamped at 1.
    """
    for name, value in (("n", n), ("k", k), ("N", N)):
        _check_positive(name, value)
    m = draws(N, k)
    delta = N * _delta_with(n, k)
    clamped = delta > 1.0
    return PrivacyBudget(
        _eps_with(n, m), min(delta, 1.0), BudgetSource.COMPOSED_LOOSE, clamped=clamped
    )


def budget(config: BaggingConfig) -> PrivacyBudget:
    if config.mode is Mode.WITH_REPLACEMENT:
        return budget_with_replacement(config.n, config.k, config.N)
    return budget_without_replacement(config.n, config.k, config.N)


def budget_for(n: int, k: int, N: int, mode: Mode | str) -> PrivacyBudget:
    if Mode.parse(mode) is Mode.WITH_REPLACEMENT:
        return budget_with_replacement(n, k, N)
    return budget_without_replacement(n, k, N)


def max_subsample_for_budget(
    n: int,
    N: int,
    mode: Mode | str,
    target_epsilon: float | None = None,
    target_delta: float | None = None,
) -> int:
    """Largest subsample size ``k`` whose budget stays within the targets.

    Absent targets are ignored. Returns 0 when even ``k = 1`` is too
    expensive. Both budgets are monotone in ``k``, so a binary search over
    the feasible range is exact.
    """
    _check_positive("n", n)
    _check_positive("N", N)
    mode = Mode.parse(mode)
    if target_epsilon is None and target_delta is None:
        raise InvalidArgumentError("target", "at least one of target_epsilon/target_delta is required")
    if target_epsilon is not None and not (target_epsilon >= 0 and not math.isnan(target_epsilon)):
        raise InvalidArgumentError("target_epsilon", f"must be >= 0, got {target_epsilon}")
    if target_delta is not None and not 0.0 <= target_delta <= 1.0:
        raise InvalidArgumentError("target_delta", f"must lie in [0, 1], got {target_delta}")

    if mode is Mode.WITH_REPLACEMENT:
        eps_of, delta_of = _eps_with, _delta_with
        cap = MAX_INT // N
    else:
        eps_of, delta_of = _eps_without, _delta_without
        cap = n // N

    def fits(k: int) -> bool:
        m = N * k
        if target_epsilon is not None and eps_of(n, m) > target_epsilon:
            return False
        if target_delta is not None and delta_of(n, m) > target_delta:
            return False
        return True

    if cap < 1 or not fits(1):
        return 0
    lo = 1
    hi = 2
    while hi <= cap and fits(hi):
        lo, hi = hi, hi * 2
    hi = min(hi, cap + 1)
    # invariant: fits(lo) and (hi > cap or not fits(hi))
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo
