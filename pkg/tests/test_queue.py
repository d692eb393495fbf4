import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eqc import _rng
from eqc.channel import ExponentialErasure, sample_pattern
from eqc.queue import (QueueParams, SojournTrace, StabilityError, busy_period_counts, busy_period_pmf,
                       chernoff_rate, gg1_tail_bound, independence_window, lemma1_tail_bound, lindley,
                       load_samples, renewal_gap_bound, renewal_gap_estimate, renewal_gap_exact,
                       simulate_sojourns, sojourn_matrix)

MM1 = QueueParams(0.5, 1.0)


def _trace(n, starts):
    z = np.zeros(n)
    return SojournTrace(z, np.asarray(starts), z, z, 0.0, 0, "empty")


@pytest.mark.parametrize("lam, mu", [(1.0, 1.0), (2.0, 1.0), (0.0, 1.0), (0.5, math.inf)])
def test_params_reject_unstable_or_degenerate(lam, mu):
    with pytest.raises(ValueError):
        QueueParams(lam, mu)


def test_stability_error_is_value_error():
    with pytest.raises(StabilityError):
        QueueParams(1.0, 1.0)


def test_stationary_start_needs_mm1():
    p = QueueParams(0.5, 1.0, arrival="deterministic")
    with pytest.raises(ValueError, match="M/M/1"):
        simulate_sojourns(p, 10, 0, "stationary")
    assert len(simulate_sojourns(p, 10, 0, "empty")) == 10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(1, 400), mode=st.sampled_from(["stationary", "empty"]))
def test_lindley_reconstruction_is_bit_exact(seed, n, mode):
    tr = simulate_sojourns(MM1, n, seed, mode)
    w, renew = tr.w_prev, []
    out = []
    for a, s in zip(tr.interarrivals, tr.services):
        renew.append(a >= w)
        w = max(w - a, 0.0) + s
        out.append(w)
    assert np.array_equal(np.array(out), tr.sojourns)
    assert np.array_equal(np.flatnonzero(renew), tr.busy_period_starts)
    assert np.all(tr.sojourns >= tr.services)


def test_renewal_forces_sojourn_equal_service():
    tr = simulate_sojourns(MM1, 5000, 3)
    for j in tr.busy_period_starts[tr.busy_period_starts > 0]:
        assert tr.interarrivals[j] >= tr.sojourns[j - 1]
        assert tr.sojourns[j] == tr.services[j]


def test_empty_start_makes_first_bit_a_renewal():
    tr = simulate_sojourns(MM1, 50, 9, "empty")
    assert tr.busy_period_starts[0] == 0 and tr.sojourns[0] == tr.services[0]


def test_traces_are_prefix_stable_and_deterministic():
    a = simulate_sojourns(MM1, 1000, 11)
    b = simulate_sojourns(MM1, 1500, 11)
    assert np.array_equal(a.sojourns, b.sojourns[:1000])
    assert np.array_equal(a.sojourns, simulate_sojourns(MM1, 1000, 11).sojourns)
    assert not np.array_equal(a.sojourns, simulate_sojourns(MM1, 1000, 12).sojourns)


def test_sojourn_matrix_rows_match_single_traces():
    W, R = sojourn_matrix(MM1, 64, 5, 7, first_trial=3)
    for t in range(5):
        tr = simulate_sojourns(MM1, 64, 7, trial=3 + t)
        assert np.array_equal(W[t], tr.sojourns)
        assert np.array_equal(R[t], tr.renewal_flags())


def test_warmup_drops_leading_bits():
    long = simulate_sojourns(MM1, 300, 5, "empty")
    tr = simulate_sojourns(MM1, 200, 5, "empty", warmup=100)
    assert np.array_equal(tr.sojourns, long.sojourns[100:])
    assert tr.w_prev == long.sojourns[99]


def test_mm1_mean_sojourn():
    w = simulate_sojourns(MM1, 10**6, 21).sojourns
    se = _rng.batch_means_se(w, 100)
    assert abs(w.mean() - 2.0) < 3 * se


def test_wide_gap_arrivals_keep_queue_empty():
    p = QueueParams(1e-9, 1.0, arrival="deterministic")
    tr = simulate_sojourns(p, 1000, 4, "empty")
    assert np.array_equal(tr.sojourns, tr.services)
    assert tr.busy_period_starts.size == 1000


def test_busy_period_partition_example():
    stats = busy_period_counts(_trace(5, [0, 2, 3]))
    assert sorted(stats.counts.tolist()) == [1, 2]
    assert stats.labels.tolist() == [0, 0, 1, 2, 2]
    assert stats.independent(0, 2) and not stats.independent(0, 1)


def test_single_busy_period_has_no_completed_counts():
    stats = busy_period_counts(_trace(7, [0]))
    assert stats.num_periods == 0 and stats.empirical_tail == {}


def test_leading_partial_period_is_unlabelled():
    stats = busy_period_counts(_trace(6, [2, 4]))
    assert stats.labels.tolist() == [-1, -1, 0, 0, 1, 1]
    assert stats.counts.tolist() == [2]


def test_busy_period_stats_invariants():
    tr = simulate_sojourns(MM1, 20_000, 2)
    stats = busy_period_counts(tr)
    s = tr.busy_period_starts
    assert stats.counts.sum() == s[-1] - s[0]
    tail = list(stats.empirical_tail.values())
    assert all(a >= b for a, b in zip(tail, tail[1:]))
    assert stats.empirical_tail[1] == 1.0


def test_mean_jobs_per_busy_period():
    counts = busy_period_counts(simulate_sojourns(MM1, 260_000, 8)).counts[:100_000]
    assert counts.size == 100_000
    se = counts.std(ddof=1) / math.sqrt(counts.size)
    assert abs(counts.mean() - 2.0) < 3 * se


@pytest.mark.parametrize("lam", [0.5, 0.77, 0.9])
def test_empirical_tail_below_lemma1_bound(lam):
    bits = int(1.3e5 / (1 - lam)) + 1000
    counts = busy_period_counts(simulate_sojourns(QueueParams(lam, 1.0), bits, 31)).counts
    assert counts.size >= 10**5
    counts = counts[:10**5]
    for l in range(1, int(counts.max())):
        exc = int(np.count_nonzero(counts > l))
        if exc < 50:
            break
        p = exc / counts.size
        assert p <= lemma1_tail_bound(lam, 1.0, l) + 3 * math.sqrt(p * (1 - p) / counts.size)


def test_erasures_across_busy_periods_are_uncorrelated():
    # last bit of one busy period vs first bit of the next: adjacent, yet independent
    tr = simulate_sojourns(QueueParams(0.77, 1.0), 600_000, 17)
    bits = sample_pattern(tr, ExponentialErasure(0.1), 17).bits.astype(float)
    starts = tr.busy_period_starts[tr.busy_period_starts > 0]
    assert starts.size >= 10**5
    x, y = bits[starts - 1], bits[starts]
    r = np.corrcoef(x, y)[0, 1]
    assert abs(r) <= 4 / math.sqrt(starts.size)
    # control: adjacent bits inside one busy period are positively correlated
    inside = np.flatnonzero(~tr.renewal_flags()[1:]) + 1
    assert np.corrcoef(bits[inside - 1], bits[inside])[0, 1] > 4 / math.sqrt(inside.size)


def test_lemma1_examples():
    assert lemma1_tail_bound(0.5, 1, 10) == pytest.approx((8 / 9) ** 10)
    assert lemma1_tail_bound(0.5, 1, 10) == pytest.approx(0.3079, abs=1e-4)
    assert lemma1_tail_bound(0.77, 1, 406) <= 1e-3
    assert lemma1_tail_bound(1 - 1e-9, 1, 5) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lemma1_tail_bound(0.5, 1, 0)
    with pytest.raises(ValueError):
        lemma1_tail_bound(1.0, 1, 3)


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(0.01, 0.98), l=st.integers(1, 200))
def test_lemma1_dominates_exact_tail(lam, l):
    j = np.arange(1, l + 1)
    exact_tail = 1.0 - busy_period_pmf(lam, 1.0, j).sum()
    assert exact_tail <= lemma1_tail_bound(lam, 1.0, l) + 1e-12


@pytest.mark.parametrize("lam", [0.2, 0.5, 0.77])
def test_busy_period_pmf_is_a_distribution_with_right_mean(lam):
    j = np.arange(1, 20_000)
    p = busy_period_pmf(lam, 1.0, j)
    assert p.sum() == pytest.approx(1.0, abs=1e-9)
    assert (j * p).sum() == pytest.approx(1 / (1 - lam), rel=1e-6)


def test_gg1_tail_bound_regimes():
    assert gg1_tail_bound(1, 1, 0.5, 10) == pytest.approx(math.exp(-1.25))
    assert gg1_tail_bound(1, 1, 2, 10) == pytest.approx(math.exp(-10))
    assert gg1_tail_bound(1, 1, 0.5, 1e-12) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gg1_tail_bound(1, 1, 1, 10)
    with pytest.raises(ValueError):
        gg1_tail_bound(1, 1, 0.5, 0)


def test_independence_window_is_a_power_of_two_above_bound():
    N = independence_window(0.77, 1.0, 1e-2)
    bound = math.log(100) / chernoff_rate(0.77, 1.0)
    assert N > bound and N / 2 <= bound and N & (N - 1) == 0


def test_renewal_gap_estimate_respects_bounds():
    N = independence_window(0.77, 1.0, 1e-2)
    est = renewal_gap_estimate(QueueParams(0.77, 1.0), N, 2000, 5)
    exact = renewal_gap_exact(0.77, 1.0, N)
    assert exact <= renewal_gap_bound(0.77, 1.0, N)
    assert est.estimate <= exact + 3 * math.sqrt(exact * (1 - exact) / 2000) + 1e-12


def test_renewal_gap_wide_gap_arrivals_is_zero():
    p = QueueParams(1e-9, 1.0, arrival="deterministic")
    assert renewal_gap_estimate(p, 4, 200, 1, warmup=10).estimate == 0.0


def test_renewal_gap_heavy_load_is_non_null():
    est = renewal_gap_estimate(QueueParams(0.99, 1.0), 1, 10_000, 3)
    assert est.estimate > 0


def test_renewal_gap_exact_matches_simulation():
    est = renewal_gap_estimate(QueueParams(0.77, 1.0), 8, 20_000, 13)
    exact = renewal_gap_exact(0.77, 1.0, 8)
    assert abs(est.estimate - exact) < 4 * est.stderr


def test_lindley_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        lindley(0.0, np.ones(3), np.ones(4))


def test_custom_samples_roundtrip(tmp_path):
    f = tmp_path / "svc.txt"
    f.write_text("0.5\n1.5\n\n1.0\n")
    samples = load_samples(f)
    p = QueueParams.from_samples(service_samples=samples, lam=0.5)
    assert p.mu == pytest.approx(1.0) and p.service == "custom"
    tr = simulate_sojourns(p, 500, 1, "empty")
    assert set(np.unique(tr.services)) <= {0.5, 1.0, 1.5}


@pytest.mark.parametrize("text, line", [("0.5\nabc\n", 2), ("1\n-2\n", 2), ("", None)])
def test_load_samples_errors(tmp_path, text, line):
    f = tmp_path / "bad.txt"
    f.write_text(text)
    with pytest.raises(ValueError) as err:
        load_samples(f)
    if line is not None:
        assert f"bad.txt:{line}:" in str(err.value)
