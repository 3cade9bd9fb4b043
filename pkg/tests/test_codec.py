import functools
import math

import numpy as np
import pytest
from scipy import stats

from mirrormark.cabs import CabsParams, replay_positions
from mirrormark.codec import (
    MessageSequence,
    PiModel,
    WatermarkParams,
    bayes_log_odds,
    bayes_score,
    collect_position_u,
    decode_position_bayes,
    decode_position_gumbel,
    decode_position_wmean,
    detect,
    encode,
    layer_log_likelihood,
    log_score,
    sample_unwatermarked,
    train_pi_model,
    wmean_score,
)
from mirrormark.evalkit import bit_accuracy
from mirrormark.lm import FixedSource, SyntheticSource, synthetic_distribution
from mirrormark.mirror import apply_mirror
from mirrormark.rng import SecretKey
from mirrormark.sampler import collision_probability, gumbel_select, tournament_distributions, tournament_sample

KEY = SecretKey(bytes(range(16)))


# ---------------------------------------------------------------- params


def test_params_validation():
    p = WatermarkParams(KEY, m=3, H=12)
    assert p.payload_bits == 36 and p.h == 4
    with pytest.raises(ValueError):
        WatermarkParams(KEY, m=0)
    with pytest.raises(ValueError):
        WatermarkParams(KEY, sampler="gumbel", L=3)
    with pytest.raises(ValueError):
        WatermarkParams(KEY, sampler="tournament", L=2, weights=(1.0,))
    with pytest.raises(ValueError):
        WatermarkParams(KEY, H=4, cabs=CabsParams(H=5))


def test_params_digest_hides_key_but_tracks_it():
    a = WatermarkParams(KEY, m=2, H=6)
    b = WatermarkParams(SecretKey(bytes(16)), m=2, H=6)
    assert KEY.hex() not in str(a.public_dict())
    assert a.digest() != b.digest()
    assert a.digest() == WatermarkParams(KEY, m=2, H=6).digest()


def test_message_sequence():
    msg = MessageSequence.random(12, 3, 0)
    assert len(msg) == 12 and all(0 <= s < 8 for s in msg.symbols)
    with pytest.raises(ValueError):
        MessageSequence((4,), 2)


# ---------------------------------------------------------------- encode


def test_encode_one_hot_forced():
    src = FixedSource([0.0, 1.0, 0.0])
    p = WatermarkParams(KEY, m=1, H=1)
    res = encode(src, p, MessageSequence((1,), 1), 20, 0)
    assert res.tokens == [1] * 20
    # the 4-gram (1,1,1,1) is eligible once, then repeated
    eligible = [s for s in res.trace if s.position is not None]
    assert len(eligible) == 1
    assert all(s.u is not None and len(s.u) == 1 for s in eligible)


def test_encode_deterministic_and_validated():
    src = SyntheticSource(50, 1.7, seed=0)
    p = WatermarkParams(KEY, m=2, H=6)
    msg = MessageSequence.random(6, 2, 1)
    a = encode(src, p, msg, 80, 7)
    b = encode(src, p, msg, 80, 7)
    assert a.tokens == b.tokens
    with pytest.raises(ValueError):
        encode(src, p, msg, 4, 7)
    with pytest.raises(ValueError):
        encode(src, p, MessageSequence.random(5, 2, 1), 80, 7)


@pytest.mark.parametrize("sampler,L", [("gumbel", 1), ("tournament", 4)])
def test_pipeline_synchrony(sampler, L):
    src = SyntheticSource(50, 1.7, seed=2)
    p = WatermarkParams(KEY, m=3, H=12, sampler=sampler, L=L)
    res = encode(src, p, MessageSequence.random(12, 3, 3), 200, 4)
    assert replay_positions(res.tokens, p.cabs, KEY) == res.positions
    buckets = collect_position_u(res.tokens, p)
    for step in res.trace:
        if step.position is not None:
            rows = buckets[step.position]
            assert any(np.array_equal(r, step.u) for r in rows)


def test_encode_clean_roundtrip_decodes_message():
    src = SyntheticSource(100, 1.7, seed=0)
    for sampler, L, decoder in [("gumbel", 1, "gumbel"), ("tournament", 6, "wmean")]:
        p = WatermarkParams(KEY, m=3, H=12, sampler=sampler, L=L)
        msg = MessageSequence.random(12, 3, 5)
        res = encode(src, p, msg, 300, 6)
        rep = detect(res.tokens, p, decoder=decoder)
        assert bit_accuracy(rep.decoded, msg, 3) >= 0.9


# ---------------------------------------------------------------- scores


def test_log_score_examples():
    assert log_score([0.0, 0.0]) == 0.0
    assert log_score([1 - math.exp(-1)]) == pytest.approx(1.0)
    assert log_score([0.5, 0.75]) == pytest.approx(3 * math.log(2))


def test_log_score_clamps_one():
    val, flag = log_score([1.0, 0.5], return_flag=True)
    assert flag and math.isfinite(val)
    with pytest.warns(RuntimeWarning):
        log_score([1.0])


def test_wmean_examples():
    assert wmean_score(np.full((5, 3), 0.5)) == 0.5
    assert wmean_score([[0.2, 0.8]], [1, 1]) == pytest.approx(0.5)
    assert wmean_score([[0.3, 0.9]], [2, 0]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        wmean_score([[0.3, 0.9]], [1.0])


def test_bayes_examples():
    flat = PiModel.oracle([1.0, 1.0])  # P(pi=1) = 1 everywhere
    assert bayes_score(np.random.default_rng(0).random((10, 2)), flat, 0.3) == pytest.approx(0.3)
    sure = PiModel.oracle([0.0])
    assert bayes_score([[0.75]], sure, 0.5) == pytest.approx(1 / (1 + math.exp(-math.log(1.5))))
    assert np.isfinite(layer_log_likelihood([[0.0]], sure)).all()
    assert layer_log_likelihood([[0.0]], sure)[0, 0] == pytest.approx(math.log(1e-300))
    with pytest.raises(ValueError):
        bayes_log_odds([[0.5]], sure, 1.0)


def test_pi_model_oracle():
    c = np.array([0.3, 0.1, 0.05])
    pm = PiModel.oracle(c)
    assert np.allclose(pm.prob_pi2(np.full((2, 3), 0.4)), 1 - c)


def test_pi_model_separable():
    x = np.r_[np.linspace(0, 0.4, 50), np.linspace(0.6, 1, 50)]
    y = np.r_[np.ones(50, int), np.full(50, 2)]
    pm = train_pi_model(x, y, lr=5.0)
    # prediction through the public API uses the feature of a 1-layer history
    pred = 1.0 / (1.0 + np.exp(-(pm.weight * x + pm.bias)))
    assert np.mean((pred > 0.5) == (y == 2)) == 1.0


def test_pi_model_base_rate():
    rng = np.random.default_rng(0)
    x = rng.random(20000)
    y = np.where(rng.random(20000) < 0.3, 2, 1)
    pm = train_pi_model(x, y)
    pred = 1.0 / (1.0 + np.exp(-(pm.weight * x + pm.bias)))
    assert np.all(np.abs(pred - 0.3) < 0.02)
    with pytest.raises(ValueError):
        train_pi_model(x, np.ones_like(y))


# ---------------------------------------------------------------- decoders


def _wm_position_u(rng, M_star, m, n_tokens, entropy_=1.7, V=100):
    out = []
    for _ in range(n_tokens):
        p = synthetic_distribution(V, entropy_, int(rng.integers(2**31)))
        u = rng.random(V)
        j = gumbel_select(p, apply_mirror(u, m, M_star))
        out.append(u[j])
    return np.asarray(out)


def test_gumbel_decoder_recovers_one_bit():
    rng = np.random.default_rng(0)
    hits = sum(decode_position_gumbel(_wm_position_u(rng, 1, 1, 25), 1).symbol == 1 for _ in range(500))
    assert hits / 500 >= 0.95


def test_decoders_empty():
    for dec in (
        decode_position_gumbel([], 2),
        decode_position_wmean(np.empty((0, 2)), None, 2),
        decode_position_bayes(np.empty((0, 2)), None, 2, PiModel.oracle([0.0, 0.0])),
    ):
        assert dec.symbol == 0 and dec.empty


def test_single_value_enumeration():
    u = 0.999
    mirrored = [apply_mirror(u, 2, M) for M in range(4)]
    best = int(np.argmax(mirrored))
    assert decode_position_gumbel([u], 2).symbol == best
    assert decode_position_wmean([[u]], None, 2).symbol == best


def test_wmean_decoder_recovers():
    rng = np.random.default_rng(1)
    hits = sum(decode_position_wmean(_wm_position_u(rng, 2, 2, 25)[:, None], None, 2).symbol == 2 for _ in range(200))
    assert hits / 200 >= 0.9


def test_bayes_decoder_examples():
    sure = PiModel.oracle([0.0])
    for u in (0.2, 0.7):
        want = int(np.argmax([apply_mirror(u, 1, M) for M in (0, 1)]))
        assert decode_position_bayes([[u]], None, 1, sure).symbol == want
    prior = np.array([0, 0, 0, 1.0])
    rng = np.random.default_rng(0)
    assert all(decode_position_bayes(rng.random((5, 1)), None, 2, sure, prior).symbol == 3 for _ in range(20))


def _tournament_position(rng, M_star, m, L, n_tokens, V=100):
    rows, cols = [], []
    for _ in range(n_tokens):
        p = synthetic_distribution(V, 1.7, int(rng.integers(2**31)))
        u = rng.random((L, V))
        j = tournament_sample(p, apply_mirror(u, m, M_star), L, rng)
        rows.append(u[:, j])
        cols.append([collision_probability(q) for q in tournament_distributions(p, apply_mirror(u, m, M_star))[:-1]])
    return np.asarray(rows), np.asarray(cols).mean(axis=0)


def test_bayes_agrees_with_wmean():
    rng = np.random.default_rng(2)
    L, m = 4, 2
    agree = 0
    for _ in range(500):
        M = int(rng.integers(4))
        u, coll = _tournament_position(rng, M, m, L, 25)
        b = decode_position_bayes(u, None, m, PiModel.oracle(coll)).symbol
        w = decode_position_wmean(u, None, m).symbol
        agree += b == w
    assert agree / 500 >= 0.9


def test_correct_message_dominance():
    rng = np.random.default_rng(3)
    diffs = []
    for _ in range(500):
        u = _wm_position_u(rng, 1, 1, 10, entropy_=1.0)
        diffs.append(log_score(np.minimum(apply_mirror(u, 1, 1), 1 - 2**-53)) - log_score(apply_mirror(u, 1, 0)))
    res = stats.ttest_1samp(diffs, 0.0, alternative="greater")
    assert res.pvalue < 1e-3


# ---------------------------------------------------------------- detection


def test_detect_short_sequence():
    rep = detect([1, 2, 3], WatermarkParams(KEY, m=2, H=4))
    assert rep.n_eligible == 0 and not rep.decision and all(rep.empty_positions)


def test_detect_report_roundtrip():
    src = SyntheticSource(50, 1.7, seed=0)
    p = WatermarkParams(KEY, m=2, H=4)
    res = encode(src, p, MessageSequence.random(4, 2, 0), 60, 1)
    rep = detect(res.tokens, p, threshold=0.0, keep_u=True)
    d = rep.to_dict()
    assert d["decision"] is True and set(d["position_u"]) == {"0", "1", "2", "3"}


def test_null_u_values_uniform():
    src = SyntheticSource(100, 1.7, seed=0, order=1)
    p = WatermarkParams(KEY, m=3, H=12)
    us = []
    for s in range(60):
        toks = sample_unwatermarked(src, p, 300, 1000 + s)
        us.extend(np.concatenate([b.ravel() for b in collect_position_u(toks, p).values()]))
    us = np.asarray(us[:10**4])
    assert us.size == 10**4
    assert stats.kstest(us, "uniform").pvalue > 0.01
    # the raw statistic has null mean 1 per token
    per_token = -np.log1p(-us)
    assert abs(per_token.mean() - 1.0) < 3 / np.sqrt(us.size)


@pytest.mark.slow
def test_end_to_end_calibrated_detection():
    src = SyntheticSource(100, 1.7, seed=0, order=1)
    p = WatermarkParams(KEY, m=3, H=12)
    null = [detect(sample_unwatermarked(src, p, 300, 10_000 + s), p).score for s in range(500)]
    thr = float(np.quantile(null, 0.99, method="higher"))
    hits = 0
    for s in range(20):
        res = encode(src, p, MessageSequence.random(12, 3, s), 300, s)
        hits += detect(res.tokens, p, threshold=thr).decision
    assert hits == 20


def test_wrong_key_looks_null():
    src = SyntheticSource(100, 1.7, seed=1, order=1)
    p = WatermarkParams(KEY, m=2, H=6)
    wrong = WatermarkParams(SecretKey(bytes(range(100, 116))), m=2, H=6)
    wm_scores, null_scores = [], []
    for s in range(150):
        res = encode(src, p, MessageSequence.random(6, 2, s), 150, s)
        wm_scores.append(detect(res.tokens, wrong).score / max(1, detect(res.tokens, wrong).n_eligible))
        toks = sample_unwatermarked(src, p, 150, 50_000 + s)
        rep = detect(toks, wrong)
        null_scores.append(rep.score / max(1, rep.n_eligible))
    assert stats.ks_2samp(wm_scores, null_scores).pvalue > 0.01


@functools.lru_cache(maxsize=1)
def _bit_accuracy_table():
    src = SyntheticSource(100, 0.9, seed=4, order=2)
    b = 12
    table = {}
    for m in (1, 2, 3):
        H = b // m
        p = WatermarkParams(KEY, m=m, H=H)
        for T in (100, 200, 300):
            accs = []
            for s in range(150):
                msg = MessageSequence.random(H, m, 1000 * m + s)
                res = encode(src, p, msg, T, s + 7)
                accs.append(bit_accuracy(detect(res.tokens, p).decoded, msg, m))
            table[m, T] = float(np.mean(accs))
    return table


@pytest.mark.slow
def test_bit_accuracy_nondecreasing_in_T():
    table = _bit_accuracy_table()
    for m in (1, 2, 3):
        assert table[m, 100] <= table[m, 200] <= table[m, 300], table


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="at fixed payload, fewer positions give more tokens per position; "
                   "at T=200 m=3 decodes better than m=2, so the m-trend is regime dependent")
def test_bit_accuracy_nonincreasing_in_m():
    table = _bit_accuracy_table()
    for T in (100, 200, 300):
        assert table[1, T] >= table[2, T] >= table[3, T], table
