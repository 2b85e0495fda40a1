import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmpqkd.core import ClickBatch, ClickEvent, CombinedClass, Detector, IntensityClass, PhaseIndex, Truth
from pmpqkd.pairing import (
    MissingLabel,
    Pairer,
    PairingConfig,
    UnsortedStream,
    classify_coincidence,
    delay_pairs,
    filter_and_pair,
    filter_clicks,
    pair_neighbors,
    split_points,
)


def greedy_reference(slots, t_c):
    """Plain-Python neighbour pairing."""
    pairs, discarded, i = [], 0, 0
    while i < len(slots) - 1:
        if slots[i + 1] - slots[i] <= t_c:
            pairs.append((i, i + 1))
            i += 2
        else:
            discarded += 1
            i += 1
    if i == len(slots) - 1:
        discarded += 1
    return pairs, discarded


def random_batch(rng, n, span):
    slots = np.unique(rng.integers(0, max(span, 1), n)).astype(np.int64)
    m = len(slots)
    return ClickBatch(
        slots,
        rng.integers(0, 2, m),
        rng.integers(0, 3, m),
        rng.integers(0, 16, m),
        rng.integers(0, 3, m),
        rng.integers(0, 16, m),
    )


def test_conservation_and_monotonicity_on_random_streams():
    rng = np.random.default_rng(2024)
    grid = (1, 2, 5, 10, 30, 100)
    for _ in range(10_000):
        batch = random_batch(rng, int(rng.integers(0, 80)), int(rng.integers(1, 2000)))
        previous = -1
        for t_c in grid:
            out, stats = pair_neighbors(batch, PairingConfig(t_c, filter_enabled=False))
            assert 2 * stats.n_pairs + stats.n_unpaired_discarded == len(batch)
            sep = out.separation
            assert np.all(sep >= 1) and np.all(sep <= t_c)
            assert stats.interval_sum_slots == int(sep.sum())
            assert int(stats.class_pairs.sum()) == stats.n_pairs
            assert stats.n_pairs >= previous
            previous = stats.n_pairs


@given(st.lists(st.integers(0, 10_000), max_size=60, unique=True), st.integers(1, 500))
def test_matches_reference_pairing(raw, t_c):
    slots = np.array(sorted(raw), dtype=np.int64)
    batch = ClickBatch(slots, np.zeros(len(slots)), np.zeros(len(slots)), np.zeros(len(slots)), np.zeros(len(slots)), np.zeros(len(slots)))
    out, stats = pair_neighbors(batch, PairingConfig(t_c, filter_enabled=False))
    pairs, discarded = greedy_reference(slots.tolist(), t_c)
    assert [(int(a), int(b)) for a, b in zip(out.early.slot, out.late.slot)] == [
        (slots[i], slots[j]) for i, j in pairs
    ]
    assert stats.n_unpaired_discarded == discarded


@given(st.lists(st.integers(0, 5_000), max_size=80, unique=True), st.integers(1, 300), st.lists(st.integers(0, 80), max_size=5))
def test_chunked_pairing_equals_whole_stream(raw, t_c, cuts):
    slots = np.array(sorted(raw), dtype=np.int64)
    n = len(slots)
    batch = ClickBatch(slots, np.zeros(n), np.full(n, 2), np.zeros(n), np.full(n, 2), np.zeros(n))
    bounds = sorted({min(c, n) for c in cuts} | {0, n})
    pieces = [batch.take(slice(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]
    cfg = PairingConfig(t_c, filter_enabled=False)
    whole, whole_stats = pair_neighbors(batch, cfg)
    parts, stats = filter_and_pair(pieces, cfg)
    early = np.concatenate([p.early.slot for p in parts]) if parts else np.empty(0, np.int64)
    assert np.array_equal(early, whole.early.slot)
    assert stats.n_pairs == whole_stats.n_pairs
    assert stats.n_unpaired_discarded == whole_stats.n_unpaired_discarded


def test_split_points_do_not_change_pairing():
    rng = np.random.default_rng(5)
    batch = random_batch(rng, 3000, 200_000)
    cfg = PairingConfig(60, filter_enabled=False)
    whole, _ = pair_neighbors(batch, cfg)
    cuts = split_points(batch.slot, 60)
    assert len(cuts) > 10
    bounds = [0, *cuts.tolist(), len(batch)]
    early = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        part, _ = pair_neighbors(batch.take(slice(a, b)), cfg)
        early.extend(part.early.slot.tolist())
    assert early == whole.early.slot.tolist()


def test_filter_drops_only_mu_nu_clicks():
    rng = np.random.default_rng(1)
    batch = random_batch(rng, 5000, 10**6)
    kept = filter_clicks(batch)
    mixed = {(1, 2), (2, 1)}
    assert not any((a, b) in mixed for a, b in zip(kept.a_int, kept.b_int))
    expected = sum((a, b) not in mixed for a, b in zip(batch.a_int, batch.b_int))
    assert len(kept) == expected
    assert np.all(np.diff(kept.slot) > 0)


def test_filter_needs_labels():
    with pytest.raises(MissingLabel):
        filter_clicks(ClickBatch(np.array([1, 5]), np.array([0, 1])))


def test_unsorted_stream_rejected():
    batch = ClickBatch(np.array([5, 3]), np.array([0, 0]), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(UnsortedStream):
        pair_neighbors(batch, PairingConfig(10, filter_enabled=False))
    first = batch.take(slice(1, 2))
    with pytest.raises(UnsortedStream):
        filter_and_pair([batch.take(slice(0, 1)), first], PairingConfig(10))


def test_pending_click_carried_across_batches():
    def b(slots):
        n = len(slots)
        return ClickBatch(np.array(slots), np.zeros(n), np.full(n, 2), np.zeros(n), np.full(n, 2), np.zeros(n))

    pairer = Pairer(PairingConfig(10, filter_enabled=False))
    first = pairer.feed(b([0, 100]))
    assert len(first) == 0 and pairer.last_slot == 100
    second = pairer.feed(b([105]))
    assert second.early.slot.tolist() == [100] and second.late.slot.tolist() == [105]
    pairer.finish()
    assert pairer.stats.n_unpaired_discarded == 1


def test_mean_interval_reported_in_microseconds():
    n = 4
    batch = ClickBatch(np.array([0, 1000, 5000, 8000]), np.zeros(n), np.full(n, 2), np.zeros(n), np.full(n, 2), np.zeros(n))
    _, stats = pair_neighbors(batch, PairingConfig(5000, filter_enabled=False))
    assert stats.mean_pairing_interval_us(1e9) == pytest.approx(2.0)


def _event(slot, a, b, det=0):
    return ClickEvent(slot, Detector(det), Truth(a, PhaseIndex(0), b, PhaseIndex(0)))


def test_classify_coincidence_combines_bins():
    o, nu, mu = IntensityClass.VACUUM, IntensityClass.NU, IntensityClass.MU
    c = classify_coincidence(_event(1, mu, o), _event(7, o, mu))
    assert (c.ka_tot, c.kb_tot) == (CombinedClass.MU, CombinedClass.MU)
    c = classify_coincidence(_event(1, nu, nu), _event(7, nu, nu))
    assert (c.ka_tot, c.kb_tot) == (CombinedClass.TWO_NU, CombinedClass.TWO_NU)
    with pytest.raises(MissingLabel):
        classify_coincidence(ClickEvent(1, Detector.D0, None), _event(2, o, o))


@given(st.lists(st.integers(0, 3000), max_size=70, unique=True), st.integers(1, 200), st.integers(0, 200))
def test_delay_pairs_matches_brute_force(raw, lo, width):
    slots = np.array(sorted(raw), dtype=np.int64)
    hi = lo + width
    i, j = delay_pairs(slots, lo, hi)
    got = sorted(zip(i.tolist(), j.tolist()))
    want = [(a, b) for a in range(len(slots)) for b in range(a + 1, len(slots)) if lo <= slots[b] - slots[a] <= hi]
    assert got == want
