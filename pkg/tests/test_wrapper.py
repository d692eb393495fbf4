import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eqc import ldpc, polar, wrapper
from eqc.channel import ConstantErasure, ExponentialErasure, mean_erasure_analytic
from eqc.queue import QueueParams, StabilityError
from eqc.wrapper import InnerCodeHandle, InterleaverConfig

P77 = QueueParams(0.77, 1.0)
EXP = ExponentialErasure(0.1)


def test_choose_b_examples():
    assert wrapper.choose_B(0.77, 1.0, 1e-3) == 406
    assert wrapper.choose_B(0.5, 1.0, 1 - 1e-12) == 1
    bound = math.log(1e3) / (2 * math.log(1.77) - math.log(4 * 0.77))
    assert 405 < bound < 406


@pytest.mark.parametrize("lam, mu, alpha", [(1.0, 1.0, 1e-3), (0.5, 1.0, 0.0), (0.5, 1.0, 1.0)])
def test_choose_b_errors(lam, mu, alpha):
    with pytest.raises(ValueError):
        wrapper.choose_B(lam, mu, alpha)


def test_choose_b_unstable_is_stability_error():
    with pytest.raises(StabilityError):
        wrapper.choose_B(1.0, 1.0, 0.1)


def test_interleave_examples():
    rows = np.array([["a1", "a2"], ["b1", "b2"]])
    assert wrapper.interleave(rows).tolist() == ["a1", "b1", "a2", "b2"]
    assert wrapper.deinterleave(np.array(["a1", "b1", "a2", "b2"]), InterleaverConfig(2, 2)).tolist() == \
        rows.tolist()
    assert wrapper.interleave([[1, 2, 3, 4]]).tolist() == [1, 2, 3, 4]
    assert wrapper.interleave([[7], [8], [9]]).tolist() == [7, 8, 9]
    assert wrapper.deinterleave(np.arange(5), InterleaverConfig(5, 1)).tolist() == [list(range(5))]


def test_interleave_rejects_ragged_and_mismatched():
    with pytest.raises(ValueError):
        wrapper.interleave(np.arange(4))
    with pytest.raises(ValueError):
        wrapper.deinterleave(np.arange(5), InterleaverConfig(2, 2))
    with pytest.raises(ValueError):
        InterleaverConfig(0, 3)


@pytest.mark.parametrize("N, B", list(itertools.product(range(1, 9), repeat=2)))
def test_interleave_inverse_exhaustive(N, B):
    M = np.arange(N * B).reshape(B, N)
    cfg = InterleaverConfig(N, B)
    s = wrapper.interleave(M)
    assert np.array_equal(wrapper.deinterleave(s, cfg), M)
    assert np.array_equal(wrapper.interleave(wrapper.deinterleave(s, cfg)), s)
    # stream position j*B + i holds symbol j of codeword i
    assert all(s[j * B + i] == M[i, j] for i in range(B) for j in range(N))
    assert wrapper.separation(cfg) == (B if N > 1 else N * B)


@settings(max_examples=50, deadline=None)
@given(N=st.integers(1, 64), B=st.integers(1, 64), seed=st.integers(0, 2**32 - 1))
def test_interleave_inverse_random(N, B, seed):
    M = np.random.default_rng(seed).integers(0, 2, (B, N))
    assert np.array_equal(wrapper.deinterleave(wrapper.interleave(M), InterleaverConfig(N, B)), M)


def test_deinterleave_batches_leading_axes():
    cfg = InterleaverConfig(16, 7)
    M = np.random.default_rng(0).integers(0, 2, (3, 7, 16))
    S = np.stack([wrapper.interleave(m) for m in M])
    assert np.array_equal(wrapper.deinterleave(S, cfg), M)


def test_ideal_handle():
    h = InnerCodeHandle.ideal(10, 0.62)
    assert (h.k, h.n) == (6, 10)
    e = np.zeros((3, 10), dtype=bool)
    e[1, :3] = True
    e[2, :4] = True
    assert h.decodable(e).tolist() == [True, True, False]
    with pytest.raises(ValueError):
        InnerCodeHandle("ideal", k=5, n=4)
    with pytest.raises(ValueError):
        InnerCodeHandle("turbo")


@pytest.mark.parametrize("kind", ["ideal", "polar", "ldpc"])
def test_roundtrip_clear_channel(kind):
    if kind == "ideal":
        inner = InnerCodeHandle.ideal(32, 0.5)
    elif kind == "polar":
        inner = InnerCodeHandle("polar", polar.construct(polar.bec_z(5, 0.3), 16))
    else:
        inner = InnerCodeHandle("ldpc", ldpc.regular_ldpc(32, seed=1))
    cfg = InterleaverConfig(inner.n, 5)
    msgs = np.random.default_rng(1).integers(0, 2, (5, inner.k), dtype=np.uint8)
    out = wrapper.wrapped_roundtrip(P77, ConstantErasure(0.0), inner, cfg, msgs, seed=3)
    assert not out.message_failed
    assert all(np.array_equal(d, m) for d, m in zip(out.decoded, msgs))


def test_roundtrip_failure_flags_match_pattern_decision():
    code = polar.construct(polar.bec_z(6, 0.3), 32)
    inner = InnerCodeHandle("polar", code)
    cfg = InterleaverConfig(64, 9)
    msgs = np.random.default_rng(2).integers(0, 2, (9, 32), dtype=np.uint8)
    ref = wrapper.wrapped_bler(P77, EXP, inner, 9, 9, seed=4)
    assert wrapper.wrapped_roundtrip(P77, EXP, inner, cfg, msgs, seed=4).failures.sum() == ref.block.errors
    for trial in range(1, 5):
        out = wrapper.wrapped_roundtrip(P77, EXP, inner, cfg, msgs, seed=4, trial=trial)
        for d, m, f in zip(out.decoded, msgs, out.failures):
            assert f == (d is None)


def test_roundtrip_rejects_mismatch():
    inner = InnerCodeHandle.ideal(8, 0.5)
    with pytest.raises(ValueError):
        wrapper.wrapped_roundtrip(P77, EXP, inner, InterleaverConfig(16, 2), np.zeros((2, 4)), 1)
    with pytest.raises(ValueError):
        wrapper.wrapped_roundtrip(P77, EXP, inner, InterleaverConfig(8, 2), np.zeros((3, 4)), 1)


def test_ideal_decoder_needs_sent_message():
    with pytest.raises(ValueError):
        InnerCodeHandle.ideal(8, 0.5).decode(np.zeros(8, np.int8))


def test_ideal_inner_code_meets_target_failure_rate():
    B = wrapper.choose_B(0.77, 1.0, 1e-3)
    rate = 0.9 * (1 - mean_erasure_analytic(0.77, 1.0, 0.1))
    est = wrapper.wrapped_bler(P77, EXP, InnerCodeHandle.ideal(1024, rate), B, 10_000, seed=1)
    assert est.block.estimate <= 1e-2


def test_interleaving_helps_against_bursts():
    inner = InnerCodeHandle.ideal(256, 0.5)
    plain = wrapper.wrapped_bler(P77, EXP, inner, 1, 4000, seed=2)
    mixed = wrapper.wrapped_bler(P77, EXP, inner, 300, 4000, seed=2)
    assert mixed.block.estimate < plain.block.estimate


def test_wrapped_bler_depth_one_equals_plain_patterns():
    code = polar.construct(polar.bec_z(6, 0.3), 32)
    a = wrapper.wrapped_bler(P77, EXP, InnerCodeHandle("polar", code), 1, 2000, seed=5)
    b = polar.bler(P77, EXP, code, 2000, 5)
    assert a.block.errors == b.errors and a.streams == 2000


def test_wrapped_bler_is_thread_count_independent():
    inner = InnerCodeHandle.ideal(64, 0.55)
    a = wrapper.wrapped_bler(P77, EXP, inner, 40, 3000, seed=6, workers=1, max_elements=1 << 14)
    b = wrapper.wrapped_bler(P77, EXP, inner, 40, 3000, seed=6, workers=4, max_elements=1 << 12)
    assert a == b
    assert a.message.trials == a.streams == 75


def test_long_busy_period_rate_within_bound():
    N, alpha = 64, 1e-3
    B = wrapper.choose_B(0.77, 1.0, alpha)
    est = wrapper.long_busy_period_rate(P77, N, B, 2000, 7)
    assert est.estimate <= N * alpha + 3 * est.stderr


def test_long_busy_period_rate_shallow_depth_is_common():
    assert wrapper.long_busy_period_rate(P77, 64, 2, 200, 7).estimate > 0.9


def test_wrapped_synthetics_bec_degeneracy():
    z, se = wrapper.wrapped_synthetics(P77, ConstantErasure(0.5), 3, 50, 20_000, 8)
    assert np.all(np.abs(z - polar.bec_z(3, 0.5)) <= 3 * se + 1e-12)


def test_wrapped_synthetics_deep_interleaving_looks_memoryless():
    # at large depth the rows are close to i.i.d. with the stationary erasure rate
    z, se = wrapper.wrapped_synthetics(P77, EXP, 4, 2000, 20_000, 9)
    ref = polar.bec_z(4, mean_erasure_analytic(0.77, 1.0, 0.1))
    assert np.max(np.abs(z - ref)) < 0.03
    with pytest.raises(ValueError):
        wrapper.wrapped_synthetics(P77, EXP, 4, 10, 50, 9)
