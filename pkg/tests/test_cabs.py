import numpy as np
import pytest
from hypothesis import given, strategies as st

from mirrormark.cabs import (
    CabsParams,
    CabsScheduler,
    CabsState,
    NaiveScheduler,
    cabs_assign,
    gini,
    make_scheduler,
    naive_assign,
    position_counts,
    replay_positions,
)
from mirrormark.rng import SecretKey

KEY = SecretKey(bytes(range(16)))


def test_params_defaults_and_validation():
    p = CabsParams(H=12)
    assert (p.W, p.f, p.h, p.min_len, p.max_len) == (4, 3, 4, 12, 18)
    with pytest.raises(ValueError):
        CabsParams(H=0)
    with pytest.raises(ValueError):
        CabsParams(H=4, min_len=10)
    with pytest.raises(ValueError):
        CabsParams(H=4, W=0)


def test_gini_examples():
    assert gini([3, 3, 3]) == 0.0
    assert gini([1, 3]) == pytest.approx(0.25)
    assert gini([0, 0, 0, 5]) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        gini([0, 0])


@given(st.lists(st.integers(0, 50), min_size=1, max_size=20).filter(lambda x: sum(x) > 0))
def test_gini_bounds(c):
    g = gini(c)
    assert 0.0 <= g <= (len(c) - 1) / len(c) + 1e-12


def test_four_tokens_fill_four_positions():
    # f=0 with min_len=max_len=6 means no cut within the first four tokens
    params = CabsParams(H=4, f=0, min_len=6, max_factor=1.5)
    sched = CabsScheduler(params, KEY)
    got = [sched.assign((i, i, i, i), 100 + i) for i in range(4)]
    assert sorted(got) == [0, 1, 2, 3]
    assert sched.state.counters == [1, 1, 1, 1]


def test_forced_cut_at_max_len():
    # f=40 makes hash cuts practically impossible, so only max_len cuts
    params = CabsParams(H=4, f=40)
    sched = CabsScheduler(params, KEY)
    for i in range(params.max_len - 1):
        sched.assign((i, 0, 0, 0), i)
    assert sched.state.frame_len == params.max_len - 1
    sched.assign((999, 0, 0, 0), 1)
    assert sched.state.counters == [0] * 4
    assert sched.state.frame_len == 0 and len(sched.state.queue) == 0


def test_repeated_context_ineligible():
    sched = CabsScheduler(CabsParams(H=4, f=40), KEY)
    assert sched.assign((1, 2, 3, 4), 5) is not None
    before = list(sched.state.counters)
    assert not sched.eligible((1, 2, 3, 4))
    assert sched.assign((1, 2, 3, 4), 6) is None
    assert sched.state.counters == before


def test_h1_always_zero():
    sched = CabsScheduler(CabsParams(H=1, min_len=1), KEY)
    assert all(sched.assign((i,) * 4, i) == 0 for i in range(30))
    assert naive_assign(KEY, (1, 2, 3, 4), 1) == 0


def test_peek_matches_assign():
    sched = CabsScheduler(CabsParams(H=6), KEY)
    rng = np.random.default_rng(0)
    for _ in range(100):
        ctx = tuple(int(x) for x in rng.integers(0, 50, 4))
        tok = int(rng.integers(0, 50))
        assert sched.peek(ctx) == sched.assign(ctx, tok)


def _random_tokens(rng, T, V=30):
    return [int(x) for x in rng.integers(0, V, T)]


def test_balance_within_frame():
    rng = np.random.default_rng(1)
    params = CabsParams(H=12)
    sched = CabsScheduler(params, KEY)
    toks = _random_tokens(rng, 500)
    for t in range(params.h, len(toks)):
        sched.assign(toks[t - params.h : t], toks[t])
        c = sched.state.counters
        assert max(c) - min(c) <= 1
        assert sched.state.frame_len < params.max_len


def test_replay_reproduces_assignment():
    rng = np.random.default_rng(2)
    params = CabsParams(H=12)
    toks = _random_tokens(rng, 300)
    live = []
    sched = make_scheduler("cabs", params, KEY)
    for t in range(params.h, len(toks)):
        live.append(sched.assign(toks[t - params.h : t], toks[t]))
    assert replay_positions(toks, params, KEY)[params.h :] == live


def test_functional_wrapper():
    params = CabsParams(H=3)
    st_ = CabsState(3)
    pos, st2 = cabs_assign(st_, params, KEY, (1, 2, 3, 4), 9)
    assert pos is not None and st2.counters[pos] == 1


def test_naive_scheduler_deterministic():
    params = CabsParams(H=12)
    a = NaiveScheduler(params, KEY)
    assert a.assign((1, 2, 3, 4), 0) == naive_assign(KEY, (1, 2, 3, 4), 12)
    assert a.assign((1, 2, 3, 4), 0) is None
    with pytest.raises(ValueError):
        make_scheduler("other", params, KEY)


def _single_insert_spread(rng, params, T=200, V=40):
    toks = _random_tokens(rng, T, V=V)
    i = int(rng.integers(params.h + 1, T - 1))
    edited = toks[:i] + [int(rng.integers(0, V))] + toks[i:]
    a = replay_positions(toks, params, KEY)
    b = replay_positions(edited, params, KEY)
    b_aligned = b[:i] + b[i + 1 :]
    diffs = [t for t in range(len(a)) if a[t] != b_aligned[t]]
    return i, diffs


def test_edit_is_causal():
    rng = np.random.default_rng(3)
    params = CabsParams(H=12)
    for _ in range(100):
        i, diffs = _single_insert_spread(rng, params)
        assert not diffs or min(diffs) >= i


def _cut_flags(tokens, params):
    sched = CabsScheduler(params, KEY)
    pos, cuts = [], []
    for t in range(params.h, len(tokens)):
        before = sched.state.frame_index
        pos.append(sched.assign(tokens[t - params.h : t], tokens[t]))
        cuts.append(sched.state.frame_index != before)
    return pos, cuts


def test_edit_resynchronises_after_shared_cut():
    # once both replays cut on the same original token, every later assignment agrees
    rng = np.random.default_rng(4)
    params = CabsParams(H=12)
    h = params.h
    n_synced = 0
    for _ in range(100):
        toks = _random_tokens(rng, 300, V=40)
        i = int(rng.integers(h + 1, 150))
        edited = toks[:i] + [int(rng.integers(0, 40))] + toks[i:]
        pa, ca = _cut_flags(toks, params)
        pb, cb = _cut_flags(edited, params)
        # index k of the original tail corresponds to k + 1 in the edited stream
        shared = [k for k in range(i + h, len(pa)) if ca[k] and cb[k + 1]]
        if shared:
            n_synced += 1
            s = shared[0]
            assert pa[s + 1 :] == pb[s + 2 :]
    assert n_synced > 0


@pytest.mark.xfail(strict=True, reason="frames misaligned by an edit only realign on a coincident hash cut; "
                   "the literal scheduler spreads about half of single edits beyond max_len + W")
def test_edit_locality_frame_bound():
    rng = np.random.default_rng(3)
    params = CabsParams(H=12)
    bound = params.max_len + params.W
    for _ in range(100):
        i, diffs = _single_insert_spread(rng, params)
        if diffs:
            assert max(diffs) - i <= bound


def test_position_counts_and_gini_clean():
    rng = np.random.default_rng(4)
    params = CabsParams(H=12)
    g_cabs, g_naive = [], []
    for _ in range(50):
        toks = _random_tokens(rng, 300, V=50)
        g_cabs.append(gini(position_counts(replay_positions(toks, params, KEY), 12)))
        g_naive.append(gini(position_counts(replay_positions(toks, params, KEY, "naive"), 12)))
    assert np.mean(g_cabs) < 0.05
    assert np.mean(g_naive) > np.mean(g_cabs)
