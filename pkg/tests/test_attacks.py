import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mirrormark.attacks import AttackSpec, apply_attack, copy_paste, edit_attack


def test_spec_validation_and_roundtrip():
    spec = AttackSpec("insert", 0.2, seed=3)
    assert AttackSpec.from_dict(spec.to_dict()) == spec
    assert AttackSpec.from_dict(None) is None
    with pytest.raises(ValueError):
        AttackSpec("paraphrase", 0.1)
    with pytest.raises(ValueError):
        AttackSpec("insert", 1.5)
    with pytest.raises(ValueError):
        AttackSpec("copy_paste", 0.2, segment_len=0)


def test_copy_paste_extremes():
    wm = list(range(100))
    clean = list(range(1000, 1100))
    assert copy_paste(wm, clean, 0.0, 20, 0) == wm
    assert copy_paste(wm, clean, 1.0, 20, 0) == clean


def test_copy_paste_exact_count():
    wm = list(range(400))
    clean = [t + 10_000 for t in wm]
    out = copy_paste(wm, clean, 0.4, 20, 5)
    assert len(out) == 400
    assert sum(t >= 10_000 for t in out) == 160


@given(st.integers(1, 300), st.floats(0, 1), st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_copy_paste_properties(T, eps, seg, seed):
    wm = list(range(T))
    clean = [t + 10_000 for t in wm]
    out = copy_paste(wm, clean, eps, seg, seed)
    assert len(out) == T
    n = sum(t >= 10_000 for t in out)
    assert n == min(T, math.ceil(round(eps * T, 9)))
    # clean tokens sit at their own offsets
    assert all(t == i or t == i + 10_000 for i, t in enumerate(out))
    assert out == copy_paste(wm, clean, eps, seg, seed)


def test_copy_paste_segments_contiguous():
    wm = list(range(200))
    clean = [t + 10_000 for t in wm]
    out = copy_paste(wm, clean, 0.3, 20, 1)
    mask = np.array([t >= 10_000 for t in out], dtype=int)
    runs = np.diff(np.r_[0, mask, 0])
    lengths = np.flatnonzero(runs == -1) - np.flatnonzero(runs == 1)
    # adjacent spans may merge, so every run is a sum of whole segments
    assert lengths.sum() == 60 and all(l % 20 == 0 for l in lengths)


def test_copy_paste_needs_clean_text():
    with pytest.raises(ValueError):
        copy_paste(list(range(10)), [1, 2], 0.5, 2, 0)


@pytest.mark.parametrize("kind", ["insert", "delete", "substitute"])
def test_edit_identity_at_zero(kind):
    toks = list(range(50))
    assert edit_attack(toks, kind, 0.0, 100, 0) == toks


def test_delete_length_binomial():
    T, eps = 300, 0.2
    lens = [len(edit_attack(list(range(T)), "delete", eps, 100, s)) for s in range(200)]
    sd = math.sqrt(T * eps * (1 - eps))
    assert abs(np.mean(lens) - 240) < 3 * sd / math.sqrt(200)
    assert all(abs(l - 240) < 5 * sd for l in lens)


def test_delete_cannot_empty():
    with pytest.raises(ValueError):
        edit_attack([1, 2, 3], "delete", 1.0, 10, 0)


def test_insert_keeps_original_order():
    toks = list(range(1000, 1100))
    out = edit_attack(toks, "insert", 0.3, 50, 2)
    assert [t for t in out if t >= 1000] == toks
    assert all(t < 50 for t in out if t < 1000)


def test_substitute_changes_token():
    toks = [7] * 500
    out = edit_attack(toks, "substitute", 1.0, 10, 3)
    assert all(t != 7 and 0 <= t < 10 for t in out)
    with pytest.raises(ValueError):
        edit_attack(toks, "substitute", 0.5, 1, 0)


@given(st.lists(st.integers(0, 99), min_size=1, max_size=100), st.floats(0, 0.9), st.integers(0, 1000),
       st.sampled_from(["insert", "delete", "substitute"]))
def test_edit_deterministic_and_lengths(toks, eps, seed, kind):
    try:
        out = edit_attack(toks, kind, eps, 100, seed)
    except ValueError as exc:
        # deleting every token is the one refused outcome
        assert kind == "delete" and "every token" in str(exc)
        return
    assert out == edit_attack(toks, kind, eps, 100, seed)
    if kind == "substitute":
        assert len(out) == len(toks)
    elif kind == "insert":
        assert len(toks) <= len(out) <= 2 * len(toks)
    else:
        assert len(out) <= len(toks)


def test_apply_attack_dispatch():
    toks = list(range(40))
    assert apply_attack(AttackSpec("substitute", 0.0), toks, 100) == toks
    with pytest.raises(ValueError):
        apply_attack(AttackSpec("copy_paste", 0.5), toks, 100)
    out = apply_attack(AttackSpec("copy_paste", 0.5, seed=1, segment_len=5), toks, 100, [t + 100 for t in toks])
    assert sum(t >= 100 for t in out) == 20


def test_edit_frame_locality():
    # a single substitution changes CABS assignments only from the edit on
    from mirrormark.cabs import CabsParams, replay_positions
    from mirrormark.rng import SecretKey

    key = SecretKey(bytes(range(16)))
    params = CabsParams(H=12)
    rng = np.random.default_rng(0)
    for _ in range(100):
        toks = [int(x) for x in rng.integers(0, 40, 200)]
        i = int(rng.integers(params.h, 199))
        edited = list(toks)
        edited[i] = (edited[i] + 1) % 40
        a = replay_positions(toks, params, key)
        b = replay_positions(edited, params, key)
        assert a[:i] == b[:i]
