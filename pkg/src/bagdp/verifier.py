"""Exact verification of Bagging's privacy guarantees on tiny datasets.

The mechanism "draw subsamples, fit one base model per subsample" is
enumerated over every equiprobable index draw, giving its exact output
distribution. Hockey-stick divergences between the distributions on a
dataset and on its neighbours then show the smallest delta that really
holds at a given epsilon.

Distributions are stored compactly: an outcome is a row of symbol codes
into a sorted alphabet of byte strings, and probabilities are integer
counts over a common integer total. All divergences are exact rationals.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import binomtest

from .accountant import MAX_INT, BaggingConfig, Mode, PrivacyBudget, budget
from .errors import EnumerationLimitError, InfeasibleConfigError, InvalidArgumentError, VerificationError
from .learners import KNNLearner, LabeledExample, serialize_example

MAX_DRAWS = 10**7
CHUNK = 1 << 20
HOLDS_TOL = 1e-12
TIGHT_TOL = 1e-9


# ---------------------------------------------------------------- distributions

def _code_dtype(size: int):
    if size <= 1 << 8:
        return np.uint8
    if size <= 1 << 16:
        return np.uint16
    return np.int64


def _row_keys(rows: np.ndarray, base: int) -> np.ndarray:
    """One sortable key per row; equal keys iff equal rows."""
    width = rows.shape[1]
    if base ** width <= MAX_INT:
        powers = np.array([base ** (width - 1 - j) for j in range(width)], dtype=np.int64)
        return rows.astype(np.int64) @ powers
    wide = np.ascontiguousarray(rows, dtype=np.int64)
    return wide.view(np.dtype((np.void, 8 * width))).ravel()


def _merge(rows: np.ndarray, counts: np.ndarray, base: int) -> tuple[np.ndarray, np.ndarray]:
    keys = _row_keys(rows, base)
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    # float64 sums are exact: totals never exceed MAX_DRAWS
    merged = np.bincount(inverse.ravel(), weights=counts, minlength=len(first)).astype(np.int64)
    return rows[first], merged


@dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    """Exact distribution over canonical outcomes.

    ``rows[i]`` spells outcome ``i`` as symbols of ``alphabet``; every
    ``block`` consecutive symbols form one base model's canonical form.
    Outcome ``i`` has probability ``counts[i] / total``.
    """

    alphabet: tuple[bytes, ...]
    rows: np.ndarray
    counts: np.ndarray
    total: int
    block: int = 1

    def __post_init__(self):
        if list(self.alphabet) != sorted(set(self.alphabet)):
            raise ValueError("alphabet must be sorted and duplicate free")
        if self.rows.ndim != 2 or len(self.rows) != len(self.counts):
            raise ValueError("rows/counts shape mismatch")
        if self.rows.shape[1] % self.block:
            raise ValueError("row width must be a multiple of the block size")
        if (self.counts <= 0).any() or int(self.counts.sum()) != self.total:
            raise ValueError("counts must be positive and sum to total")

    @classmethod
    def from_mapping(cls, weights: Mapping[bytes, object]) -> "OutcomeDistribution":
        """Build from ``{outcome: probability or weight}``; weights are normalised exactly."""
        items = sorted((k, Fraction(v)) for k, v in weights.items() if Fraction(v) != 0)
        if not items or any(v < 0 for _, v in items):
            raise ValueError("weights must be non-negative with positive total")
        denom = math.lcm(*(v.denominator for _, v in items))
        counts = np.array([int(v * denom) for _, v in items], dtype=object)
        g = math.gcd(*counts)
        counts = np.array([int(c // g) for c in counts], dtype=np.int64)
        alphabet = tuple(k for k, _ in items)
        rows = np.arange(len(items), dtype=_code_dtype(len(items))).reshape(-1, 1)
        return cls(alphabet, rows, counts, int(counts.sum()))

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return len(self.counts)

    def outcome_bytes(self, i: int) -> bytes:
        """Canonical outcome of row ``i``.

        A single model's outcome is its canonical form; with several models
        the length-framed forms are concatenated in model order.
        """
        row = self.rows[i]
        forms = [
            b"".join(self.alphabet[c] for c in row[start : start + self.block])
            for start in range(0, self.width, self.block)
        ]
        if len(forms) == 1:
            return forms[0]
        return b"".join(struct.pack(">I", len(f)) + f for f in forms)

    @property
    def outcomes(self) -> dict[bytes, Fraction]:
        return {self.outcome_bytes(i): Fraction(int(c), self.total) for i, c in enumerate(self.counts)}

    def probability(self, outcome: bytes) -> Fraction:
        return self.outcomes.get(outcome, Fraction(0))


def _joint_counts(p: OutcomeDistribution, q: OutcomeDistribution) -> tuple[np.ndarray, np.ndarray]:
    """For each outcome in p's support: (count under p, count under q)."""
    if p.block != q.block or p.width != q.width:
        q_map = {q.outcome_bytes(i): int(c) for i, c in enumerate(q.counts)}
        cq = np.array([q_map.get(p.outcome_bytes(i), 0) for i in range(len(p))], dtype=np.int64)
        return p.counts, cq
    joint = sorted(set(p.alphabet) | set(q.alphabet))
    index = {s: i for i, s in enumerate(joint)}
    dtype = _code_dtype(len(joint))
    remap_p = np.array([index[s] for s in p.alphabet], dtype=dtype)
    remap_q = np.array([index[s] for s in q.alphabet], dtype=dtype)
    kp = _row_keys(remap_p[p.rows], len(joint))
    kq = _row_keys(remap_q[q.rows], len(joint))
    _, ip, iq = np.intersect1d(kp, kq, assume_unique=True, return_indices=True)
    cq = np.zeros(len(p), dtype=np.int64)
    cq[ip] = q.counts[iq]
    return p.counts, cq


def hockey_stick(
    p: OutcomeDistribution,
    q: OutcomeDistribution,
    epsilon: float = 0.0,
    *,
    exp_epsilon: Fraction | None = None,
) -> Fraction:
    """Smallest delta with P(S) <= e^eps Q(S) + delta for every event S.

    Equals ``sum_o max(0, p(o) - e^eps q(o))``; the maximising event is
    ``{o : p(o) > e^eps q(o)}``. Pass ``exp_epsilon`` to use an exact
    rational ``e^eps`` instead of the float ``exp(epsilon)``.
    """
    if exp_epsilon is None:
        if epsilon < 0:
            raise InvalidArgumentError("epsilon", f"must be non-negative, got {epsilon}")
        e = math.exp(epsilon) if epsilon < 709 else math.inf
        factor = None if math.isinf(e) else Fraction(e)
    else:
        factor = Fraction(exp_epsilon)
    cp, cq = _joint_counts(p, q)
    # group outcomes by their (count under p, count under q) pair
    span = int(cq.max()) + 1
    pair_keys, mult = np.unique(cp * span + cq, return_counts=True)
    total = Fraction(0)
    for key, m in zip(pair_keys.tolist(), mult.tolist()):
        a, b = divmod(key, span)
        if factor is None:
            term = Fraction(a, p.total) if b == 0 else Fraction(0)
        else:
            term = Fraction(a, p.total) - factor * Fraction(b, q.total)
        if term > 0:
            total += m * term
    return total


def support_gap_mass(p: OutcomeDistribution, q: OutcomeDistribution) -> Fraction:
    """Mass p puts on outcomes q can never produce."""
    cp, cq = _joint_counts(p, q)
    return Fraction(int(cp[cq == 0].sum()), p.total)


# ---------------------------------------------------------------- enumeration

def draw_count(n: int, config: BaggingConfig) -> int:
    m = config.total_draws
    if config.mode is Mode.WITH_REPLACEMENT:
        return n**m
    return math.perm(n, m)


def _draw_chunks(n: int, m: int, mode: Mode):
    """All equiprobable index draws of length m, in chunks of rows."""
    if mode is Mode.WITH_REPLACEMENT:
        total = n**m
        powers = [n ** (m - 1 - j) for j in range(m)]
        for start in range(0, total, CHUNK):
            idx = np.arange(start, min(start + CHUNK, total), dtype=np.int64)
            out = np.empty((len(idx), m), dtype=np.int64)
            for j, p in enumerate(powers):
                out[:, j] = (idx // p) % n
            yield out
    else:
        perms = itertools.permutations(range(n), m)
        while True:
            chunk = list(itertools.islice(perms, CHUNK))
            if not chunk:
                return
            yield np.array(chunk, dtype=np.int64).reshape(len(chunk), m)


def enumerate_mechanism(
    dataset: Sequence[LabeledExample],
    config: BaggingConfig,
    learner: Callable,
    *,
    limit: int = MAX_DRAWS,
) -> OutcomeDistribution:
    """Exact output distribution of Bagging with a deterministic learner.

    Each draw is an ordered sequence of ``N*k`` indices (distinct when
    sampling without replacement) split into N consecutive blocks, exactly
    as the ensemble does; without replacement each block is sorted. The
    outcome is the tuple of base-model canonical forms.

    Learners flagged ``releases_subsample`` (k-NN) have canonical forms that
    are just the concatenated serialized examples, so their outcomes are
    assembled directly from example symbols instead of refitting per draw.
    """
    n = len(dataset)
    if n != config.n:
        raise InfeasibleConfigError(f"dataset size {n} does not match config.n={config.n}")
    count = draw_count(n, config)
    if count > limit:
        raise EnumerationLimitError(
            f"{count} draws exceed the enumeration limit {limit}; use monte_carlo_gap instead"
        )
    N, k, m = config.N, config.k, config.total_draws
    examples = [dataset[i] for i in range(n)]
    fast = getattr(learner, "releases_subsample", False)

    if fast:
        serial = [serialize_example(e) for e in examples]
        alphabet = sorted(set(serial))
        lookup = {s: i for i, s in enumerate(alphabet)}
        code_of = np.array([lookup[s] for s in serial], dtype=_code_dtype(len(alphabet)))
        ordered = getattr(learner, "ordered", True)
        block = k
    else:
        forms: dict[bytes, int] = {}
        fitted: dict[tuple[int, ...], int] = {}
        block = 1

    parts_rows, parts_counts = [], []
    for draws in _draw_chunks(n, m, config.mode):
        blocks = draws.reshape(len(draws), N, k)
        if config.mode is Mode.WITHOUT_REPLACEMENT:
            blocks = np.sort(blocks, axis=2)
        if fast:
            codes = code_of[blocks]
            if not ordered:
                codes = np.sort(codes, axis=2)
            rows = codes.reshape(len(draws), m)
            base = len(alphabet)
        else:
            uniq, inverse = np.unique(blocks.reshape(-1, k), axis=0, return_inverse=True)
            symbols = np.empty(len(uniq), dtype=np.int64)
            for u, idx in enumerate(map(tuple, uniq.tolist())):
                if idx not in fitted:
                    form = learner([examples[i] for i in idx]).canonical_form
                    fitted[idx] = forms.setdefault(form, len(forms))
                symbols[u] = fitted[idx]
            rows = symbols[inverse.ravel()].reshape(len(draws), N)
            base = max(len(forms), 1)
        if fast:
            # merged once at the end; k-NN rows are mostly distinct anyway
            parts_rows.append(rows)
            parts_counts.append(np.ones(len(rows), dtype=np.int64))
        else:
            r, c = _merge(rows, np.ones(len(rows), dtype=np.int64), base)
            parts_rows.append(r)
            parts_counts.append(c)

    rows = np.concatenate(parts_rows)
    counts = np.concatenate(parts_counts)
    if not fast:
        # relabel symbols so the alphabet is sorted
        alphabet = sorted(forms)
        order = {s: i for i, s in enumerate(alphabet)}
        remap = np.empty(len(forms), dtype=np.int64)
        for s, i in forms.items():
            remap[i] = order[s]
        rows = remap[rows]
        base = len(alphabet)
    rows, counts = _merge(rows, counts, base)
    return OutcomeDistribution(
        tuple(alphabet), rows.astype(_code_dtype(len(alphabet))), counts, count, block
    )


# ---------------------------------------------------------------- claims

def distinct_examples(size: int) -> list[LabeledExample]:
    """Pairwise distinguishable one-feature examples with alternating labels."""
    return [LabeledExample((float(i),), i % 2) for i in range(size)]


def worst_case_learner(mode: Mode | str) -> KNNLearner:
    """The subsample-releasing k-NN learner (its model *is* the subsample)."""
    return KNNLearner(k_neighbors=1, ordered=Mode.parse(mode) is Mode.WITH_REPLACEMENT)


def exact_privacy_factor(config: BaggingConfig) -> Fraction:
    """``e^epsilon`` of the tight budget as an exact rational."""
    n, m = config.n, config.total_draws
    if config.mode is Mode.WITH_REPLACEMENT:
        return Fraction(n + 1, n) ** m
    return Fraction(n + 1, n + 1 - m)


def exact_delta(config: BaggingConfig) -> Fraction:
    n, m = config.n, config.total_draws
    if config.mode is Mode.WITH_REPLACEMENT:
        return 1 - Fraction(n - 1, n) ** m
    return Fraction(m, n)


def _neighbor_config(config: BaggingConfig, size: int) -> BaggingConfig | None:
    """Config on a neighbour of the given size, or None if it admits no draw."""
    if size == 0:
        return None
    if config.mode is Mode.WITHOUT_REPLACEMENT and config.total_draws > size:
        return None
    return BaggingConfig(size, config.k, config.N, config.mode, config.seed)


@dataclass(frozen=True)
class VerificationReport:
    config: BaggingConfig
    claimed: PrivacyBudget
    delta_required_removal: Fraction
    delta_required_addition: Fraction
    holds: bool
    tight: bool

    @property
    def delta_required(self) -> Fraction:
        return max(self.delta_required_removal, self.delta_required_addition)

    def to_record(self) -> str:
        """``key=value`` lines; probabilities as 12-digit decimals plus exact fractions."""
        c = self.config
        fields = [
            ("n", c.n),
            ("k", c.k),
            ("N", c.N),
            ("mode", c.mode.value),
            ("claimed_epsilon", f"{self.claimed.epsilon:.12g}"),
            ("claimed_delta", f"{self.claimed.delta:.12g}"),
            ("delta_required_removal", f"{float(self.delta_required_removal):.12g}"),
            ("delta_required_removal_exact", str(self.delta_required_removal)),
            ("delta_required_addition", f"{float(self.delta_required_addition):.12g}"),
            ("delta_required_addition_exact", str(self.delta_required_addition)),
            ("holds", str(self.holds).lower()),
            ("tight", str(self.tight).lower()),
            # both neighbours are compared against the size-n budget
            ("adjacency", "first_argument_size_n"),
        ]
        return "".join(f"{key}={value}\n" for key, value in fields)


def verify_claim(
    n: int,
    k: int,
    N: int,
    mode: Mode | str,
    dataset_builder: Callable[[int], Sequence[LabeledExample]] = distinct_examples,
    learner: Callable | None = None,
) -> VerificationReport:
    """Check the closed-form budget against exact enumeration.

    D holds the first n examples of the builder's pool of n + 1; the
    removal neighbour drops D's last example and the addition neighbour
    appends the pool's extra one. A neighbour that admits no draw at all
    (empty, or fewer than N*k examples without replacement) puts zero mass
    everywhere, so its required delta is 1.
    """
    config = BaggingConfig(n, k, N, Mode.parse(mode))
    learner = learner or worst_case_learner(config.mode)
    pool = list(dataset_builder(n + 1))
    if len(pool) != n + 1 or len({serialize_example(e) for e in pool}) != n + 1:
        raise InfeasibleConfigError("dataset_builder must return n + 1 distinguishable examples")
    claimed = budget(config)
    factor = exact_privacy_factor(config)
    p = enumerate_mechanism(pool[:n], config, learner)

    def required(size: int) -> Fraction:
        neighbor = _neighbor_config(config, size)
        if neighbor is None:
            return Fraction(1)
        q = enumerate_mechanism(pool[:size], neighbor, learner)
        return hockey_stick(p, q, exp_epsilon=factor)

    removal = required(n - 1)
    addition = required(n + 1)
    worst = max(removal, addition)
    return VerificationReport(
        config=config,
        claimed=claimed,
        delta_required_removal=removal,
        delta_required_addition=addition,
        holds=float(worst) <= claimed.delta + HOLDS_TOL,
        tight=abs(float(worst) - claimed.delta) <= TIGHT_TOL,
    )


@dataclass(frozen=True)
class ViolationEvidence:
    support_gap_mass: Fraction
    violated: bool
    hockey_stick_at_cap: Fraction


def find_violation(
    n: int,
    k: int,
    N: int,
    mode: Mode | str,
    delta_prime: float,
    epsilon_cap: float = 50.0,
) -> ViolationEvidence:
    """Counterexample search with the subsample-releasing learner.

    The event "the removed example was drawn" has positive probability on D
    and none on the removal neighbour, so no epsilon can push the required
    delta below its mass.
    """
    if not 0.0 <= delta_prime < 1.0:
        raise InvalidArgumentError("delta_prime", f"must lie in [0, 1), got {delta_prime}")
    config = BaggingConfig(n, k, N, Mode.parse(mode))
    learner = worst_case_learner(config.mode)
    pool = distinct_examples(n)
    p = enumerate_mechanism(pool, config, learner)
    neighbor = _neighbor_config(config, n - 1)
    if neighbor is None:
        gap = at_cap = Fraction(1)
    else:
        q = enumerate_mechanism(pool[: n - 1], neighbor, learner)
        gap = support_gap_mass(p, q)
        at_cap = hockey_stick(p, q, epsilon_cap)
    if at_cap < gap:
        raise VerificationError(f"hockey-stick {at_cap} fell below the support gap {gap}")
    return ViolationEvidence(gap, gap > delta_prime, at_cap)


# ---------------------------------------------------------------- Monte Carlo

@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    low: float
    high: float
    hits: int
    trials: int

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high


def monte_carlo_gap(
    n: int,
    k: int,
    N: int,
    mode: Mode | str,
    trials: int,
    rng: np.random.Generator | int | None = None,
    confidence: float = 0.95,
) -> MonteCarloEstimate:
    """Estimate the probability that the differing example (index n - 1) is drawn.

    With replacement, full index draws are simulated. Without replacement,
    the example is in a uniform (N*k)-subset exactly when its position in a
    uniform random ordering is below N*k, which is what gets simulated.
    The interval is Wilson's score interval.
    """
    if trials < 1000:
        raise InvalidArgumentError("trials", f"must be at least 1000, got {trials}")
    config = BaggingConfig(n, k, N, Mode.parse(mode))
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    m = config.total_draws
    hits = 0
    if config.mode is Mode.WITH_REPLACEMENT:
        dtype = np.int32 if n < 2**31 else np.int64
        per_chunk = max(1, 4_000_000 // m)
        done = 0
        while done < trials:
            size = min(per_chunk, trials - done)
            draws = rng.integers(0, n, size=(size, m), dtype=dtype)
            hits += int((draws == n - 1).any(axis=1).sum())
            done += size
    else:
        hits = int((rng.integers(0, n, size=trials) < m).sum())
    ci = binomtest(hits, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return MonteCarloEstimate(hits / trials, float(ci.low), float(ci.high), hits, trials)


# ---------------------------------------------------------------- post-processing

@dataclass(frozen=True)
class PostProcessingResult:
    delta_model: Fraction
    delta_subsample: Fraction


def _fresh_example(dataset: Sequence[LabeledExample]) -> LabeledExample:
    width = len(dataset[0].features)
    top = max(max((abs(x) for x in e.features), default=0.0) for e in dataset)
    return LabeledExample((top + 1.0,) * width, 0)


def post_processing_check(
    dataset: Sequence[LabeledExample],
    config: BaggingConfig,
    learner: Callable,
    fresh: LabeledExample | None = None,
) -> PostProcessingResult:
    """Compare required deltas of the released subsamples and of the models.

    Both are taken at the claimed epsilon, maximised over the removal
    (drop the last example) and addition (append ``fresh``) neighbours.
    Fitting models is post-processing, so the model-level delta can never
    exceed the subsample-level one.
    """
    data = [dataset[i] for i in range(len(dataset))]
    fresh = fresh or _fresh_example(data)
    factor = exact_privacy_factor(config)
    identity = worst_case_learner(config.mode)
    neighbors = [(data[:-1], _neighbor_config(config, len(data) - 1)),
                 (data + [fresh], _neighbor_config(config, len(data) + 1))]

    def worst(fit) -> Fraction:
        p = enumerate_mechanism(data, config, fit)
        out = Fraction(0)
        for rows, cfg in neighbors:
            if cfg is None:
                out = max(out, Fraction(1))
            else:
                out = max(out, hockey_stick(p, enumerate_mechanism(rows, cfg, fit), exp_epsilon=factor))
        return out

    result = PostProcessingResult(delta_model=worst(learner), delta_subsample=worst(identity))
    if result.delta_model > result.delta_subsample + Fraction(1, 10**12):
        raise VerificationError(
            f"model delta {result.delta_model} exceeds subsample delta {result.delta_subsample}"
        )
    return result
