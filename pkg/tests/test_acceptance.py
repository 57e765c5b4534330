"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import contextlib
import io
import random
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from bagdp.accountant import (
    BaggingConfig,
    Mode,
    budget_for,
    budget_with_replacement,
    composed_budget_with_replacement,
)
from bagdp.cli import main
from bagdp.data import make_blobs, write_csv
from bagdp.ensemble import evaluate, train
from bagdp.learners import LabeledExample, LogisticLearner, MajorityClassLearner
from bagdp.sampler import partition_masses
from bagdp.verifier import find_violation, monte_carlo_gap, post_processing_check, verify_claim

# (n, k, printed epsilon, printed delta) of the published budget tables
PUBLISHED_ROWS = [
    (60000, 300, "0.005", "0.005"),
    (60000, 500, "0.0083", "0.0083"),
    (60000, 1000, "0.017", "0.017"),
    (60000, 5000, "0.083", "0.08"),
    (60000, 10000, "0.167", "0.154"),
    (50000, 1000, "0.02", "0.02"),
    (50000, 5000, "0.1", "0.095"),
    (50000, 10000, "0.2", "0.181"),
    (50000, 20000, "0.4", "0.33"),
    (50000, 30000, "0.6", "0.45"),
]


def _cli(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, dict(line.split("=", 1) for line in buf.getvalue().splitlines())


def _places(text):
    return len(text.split(".")[1])


def test_criterion_1_budget_reproduction(report_criterion):
    start = time.perf_counter()
    mismatches = []
    for n, k, eps, delta in PUBLISHED_ROWS:
        code, out = _cli("budget", "--n", n, "--k", k, "--N", 1, "--mode", "with")
        got = (round(float(out["epsilon"]), _places(eps)), round(float(out["delta"]), _places(delta)))
        if code != 0 or got != (float(eps), float(delta)):
            mismatches.append((n, k, got, (eps, delta)))
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 1.0
    report_criterion(1, ok, f"{len(PUBLISHED_ROWS) - len(mismatches)}/{len(PUBLISHED_ROWS)} rows match, {elapsed:.3f}s")
    assert ok, mismatches


def _grid():
    cases = []
    for n in range(1, 7):
        for N in range(1, 9):
            for k in range(1, 8 // N + 1):
                cases.append((n, k, N, Mode.WITH_REPLACEMENT))
    for n in range(1, 9):
        for N in range(1, n + 1):
            for k in range(1, n // N + 1):
                cases.append((n, k, N, Mode.WITHOUT_REPLACEMENT))
    return cases


@pytest.fixture(scope="module")
def grid_reports():
    start = time.perf_counter()
    reports = [verify_claim(n, k, N, mode) for n, k, N, mode in _grid()]
    return reports, time.perf_counter() - start


def test_criterion_2_soundness_by_enumeration(grid_reports, report_criterion):
    reports, elapsed = grid_reports
    failing = [r.config for r in reports if not r.holds]
    ok = not failing and elapsed < 60.0
    report_criterion(2, ok, f"{len(reports) - len(failing)}/{len(reports)} configurations hold, {elapsed:.1f}s")
    assert ok, failing


def test_criterion_3_tightness(grid_reports, report_criterion):
    reports, _ = grid_reports
    not_tight = [r.config for r in reports if abs(float(r.delta_required_removal) - r.claimed.delta) > 1e-9]
    not_exact = []
    not_violated = []
    for r in reports:
        c = r.config
        n, m = c.n, c.total_draws
        exact = 1 - Fraction(n - 1, n) ** m if c.mode is Mode.WITH_REPLACEMENT else Fraction(m, n)
        if r.delta_required_removal != exact:
            not_exact.append(c)
        if not find_violation(c.n, c.k, c.N, c.mode, 0.99 * r.claimed.delta, epsilon_cap=50.0).violated:
            not_violated.append(c)
    ok = not (not_tight or not_exact or not_violated)
    report_criterion(
        3, ok,
        f"removal delta equals claim on {len(reports) - len(not_tight)}/{len(reports)} "
        f"(exact rational on {len(reports) - len(not_exact)}), "
        f"violation found on {len(reports) - len(not_violated)}/{len(reports)}",
    )
    assert ok, (not_tight, not_exact, not_violated)


def test_criterion_4_closed_form_identities(report_criterion):
    rng = random.Random(4)
    worst = 0.0
    for _ in range(200):
        n = rng.randint(2, 10**6)
        k = rng.randint(1, n)
        w = partition_masses(n, k, Mode.WITH_REPLACEMENT, n - 1).p_gamma1
        with mpmath.workdps(50):
            ref = float(1 - (mpmath.mpf(n - 1) / n) ** k)
        worst = max(worst, abs(w - ref) / ref)
        # k = n without replacement leaves the removal neighbour with no k-subset;
        # the D-side mass is then 1 = k/n and is checked by enumeration in criterion 3
        kw = k if k < n else n - 1
        wo = partition_masses(n, kw, Mode.WITHOUT_REPLACEMENT, n - 1).p_gamma1
        worst = max(worst, abs(wo - kw / n) / (kw / n))
    identities_ok = worst <= 1e-12

    gen = np.random.default_rng(44)
    coverage = {}
    for mode in Mode:
        truth = budget_for(1000, 20, 2, mode).delta
        coverage[mode.value] = sum(
            monte_carlo_gap(1000, 20, 2, mode, trials=5000, rng=gen).covers(truth) for _ in range(100)
        )
    coverage_ok = all(c >= 93 for c in coverage.values())
    ok = identities_ok and coverage_ok
    report_criterion(4, ok, f"max relative error {worst:.2e}, Monte Carlo coverage {coverage} of 100 at 95%")
    assert ok


def test_criterion_5_composition_dominance(report_criterion):
    rng = random.Random(5)
    bad = []
    for _ in range(1000):
        n, k, N = rng.randint(2, 10**6), rng.randint(1, 10**4), rng.randint(1, 100)
        tight = budget_with_replacement(n, k, N).delta
        loose = composed_budget_with_replacement(n, k, N).delta
        if tight > loose:
            bad.append((n, k, N, "order"))
        if N == 1 and tight != loose:
            bad.append((n, k, N, "equality"))
        if N > 1:
            # strictness on the complements 1 - delta, in 50-digit arithmetic:
            # both deltas may round to 1.0 while 1 - tight is still ~1e-100
            with mpmath.workdps(50):
                a = mpmath.mpf(n - 1) / n
                tight_rest = a ** (N * k)
                loose_rest = max(1 - N * (1 - a**k), mpmath.mpf(0))
                if not tight_rest > loose_rest:
                    bad.append((n, k, N, "strict"))
    ok = not bad
    report_criterion(5, ok, f"{1000 - len(bad)}/1000 random configurations dominated, equality exactly at N=1")
    assert ok, bad[:5]


def _random_instance(rng):
    while True:
        n, k, N = rng.randint(2, 5), rng.randint(1, 3), rng.randint(1, 2)
        mode = rng.choice(list(Mode))
        if mode is Mode.WITHOUT_REPLACEMENT and N * k > n:
            continue
        if mode is Mode.WITH_REPLACEMENT and n ** (N * k) > 5**4:
            continue
        xs = rng.sample(range(-20, 20), n)
        data = [LabeledExample((float(x), float(rng.randint(-3, 3))), rng.randint(0, 2)) for x in xs]
        return data, BaggingConfig(n, k, N, mode)


def test_criterion_6_post_processing(report_criterion):
    rng = random.Random(6)
    checked, bad = 0, []
    for i in range(50):
        data, cfg = _random_instance(rng)
        for learner in (MajorityClassLearner(), LogisticLearner(epochs=10, init_seed=i)):
            r = post_processing_check(data, cfg, learner)
            checked += 1
            if r.delta_model > r.delta_subsample:
                bad.append((cfg, learner))
    ok = not bad
    report_criterion(6, ok, f"{checked - len(bad)}/{checked} model deltas within subsample deltas")
    assert ok, bad


TREND_N = 2000
TREND_SPREAD = 3.5
TREND_SEEDS = range(5)
TREND_K = [25, 50, 100, 200, 500, 1000, 2000]
TREND_NK = [100, 200, 400, 1000]


def test_criterion_7_trends(report_criterion):
    start = time.perf_counter()
    train_set = make_blobs(TREND_N, n_classes=10, n_features=20, spread=TREND_SPREAD, seed=0, draw=0)
    test_set = make_blobs(1000, n_classes=10, n_features=20, spread=TREND_SPREAD, seed=0, draw=1)

    def mean_acc(k, N, mode):
        accs = []
        for s in TREND_SEEDS:
            model = train(train_set, BaggingConfig(TREND_N, k, N, mode, s), LogisticLearner(200, 0.5, 1e-4, s))
            accs.append(evaluate(model, test_set))
        return float(np.mean(accs))

    curves = {mode: [mean_acc(k, 1, mode) for k in TREND_K] for mode in Mode}
    a_ok = all(all(x <= y for x, y in zip(c, c[1:])) for c in curves.values())
    gaps = [abs(a - b) for a, b in zip(curves[Mode.WITH_REPLACEMENT], curves[Mode.WITHOUT_REPLACEMENT])]
    c_ok = max(gaps) <= 0.05
    pairs = {nk: (mean_acc(nk, 1, Mode.WITH_REPLACEMENT), mean_acc(nk // 4, 4, Mode.WITH_REPLACEMENT)) for nk in TREND_NK}
    b_ok = all(four <= one for one, four in pairs.values())
    elapsed = time.perf_counter() - start
    ok = a_ok and b_ok and c_ok and elapsed < 600
    with_curve = ", ".join(f"{a:.3f}" for a in curves[Mode.WITH_REPLACEMENT])
    report_criterion(
        7, ok,
        f"(a) {'ok' if a_ok else 'violated'} k-curve [{with_curve}]; "
        f"(b) {'ok' if b_ok else 'violated'} N=1 vs N=4 "
        + ", ".join(f"{nk}:{one:.3f}/{four:.3f}" for nk, (one, four) in pairs.items())
        + f"; (c) {'ok' if c_ok else 'violated'} max gap {max(gaps):.3f}; {elapsed:.0f}s",
    )
    assert ok


def _oracle(n, m, mode):
    with mpmath.workdps(50):
        n_, m_ = mpmath.mpf(n), mpmath.mpf(m)
        if mode is Mode.WITH_REPLACEMENT:
            return m_ * mpmath.log((n_ + 1) / n_), 1 - ((n_ - 1) / n_) ** m_
        return mpmath.log((n_ + 1) / (n_ + 1 - m_)), m_ / n_


def test_criterion_8_numerical_stability(report_criterion):
    worst, count = 0.0, 0
    for n in (10**3, 10**6, 10**9):
        for m in (1, 10**3, 10**6):
            for mode in Mode:
                if mode is Mode.WITHOUT_REPLACEMENT and m > n:
                    continue
                b = budget_for(n, m, 1, mode)
                eps, delta = _oracle(n, m, mode)
                worst = max(worst, abs(b.epsilon - float(eps)) / float(eps), abs(b.delta - float(delta)) / float(delta))
                count += 1
    ok = worst <= 1e-12
    report_criterion(8, ok, f"max relative error {worst:.2e} over {count} (n, N*k, mode) points")
    assert ok


def test_criterion_9_determinism(tmp_path, report_criterion, monkeypatch):
    tr, te = tmp_path / "train.csv", tmp_path / "test.csv"
    write_csv(make_blobs(300, n_classes=4, n_features=6, seed=9), tr)
    write_csv(make_blobs(100, n_classes=4, n_features=6, seed=9, draw=1), te)
    outputs = []
    for run, workers in enumerate(("1", "1", "3")):
        monkeypatch.setenv("BAGDP_WORKERS", workers)
        path = tmp_path / f"sweep{run}.csv"
        code, _ = _cli("sweep", "--train", tr, "--test", te, "--mode", "with,without", "--k", "20,60",
                       "--N", "1,3", "--repetitions", 3, "--epochs", 40, "--seed", 123, "--output", path)
        assert code == 0
        outputs.append(path.read_bytes())
    ok = outputs[0] == outputs[1] == outputs[2]
    report_criterion(9, ok, f"3 sweep runs ({len(outputs[0])} bytes each) byte-identical, serial and parallel")
    assert ok
