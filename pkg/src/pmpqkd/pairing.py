"""Post-measurement neighbour pairing of clicks into coincidences."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numba
import numpy as np

from .core import (
    COMBINE,
    N_COMBINED,
    NO_LABEL,
    ClickBatch,
    ClickEvent,
    Coincidence,
    CombinedClass,
    IntensityClass,
    PMPError,
    combine,
)


class MissingLabel(PMPError, ValueError):
    pass


class UnsortedStream(PMPError, ValueError):
    pass


@dataclass(frozen=True)
class PairingConfig:
    T_c: int  # slots
    filter_enabled: bool = True

    def __post_init__(self):
        if self.T_c < 1:
            raise ValueError("T_c must be at least one slot")


@dataclass
class PairingStats:
    n_clicks_in: int = 0
    n_clicks_filtered: int = 0
    n_pairs: int = 0
    n_unpaired_discarded: int = 0
    interval_sum_slots: int = 0
    class_pairs: np.ndarray = field(
        default_factory=lambda: np.zeros((N_COMBINED, N_COMBINED), dtype=np.int64)
    )

    def mean_pairing_interval_us(self, clock_hz: float) -> Optional[float]:
        if self.n_pairs == 0:
            return None
        return self.interval_sum_slots / self.n_pairs / clock_hz * 1e6

    def merge(self, other: "PairingStats") -> "PairingStats":
        return PairingStats(
            self.n_clicks_in + other.n_clicks_in,
            self.n_clicks_filtered + other.n_clicks_filtered,
            self.n_pairs + other.n_pairs,
            self.n_unpaired_discarded + other.n_unpaired_discarded,
            self.interval_sum_slots + other.interval_sum_slots,
            self.class_pairs + other.class_pairs,
        )

    def to_dict(self, clock_hz: float) -> dict:
        per_class = {
            f"{CombinedClass(i).label},{CombinedClass(j).label}": int(self.class_pairs[i, j])
            for i in range(N_COMBINED)
            for j in range(N_COMBINED)
            if self.class_pairs[i, j]
        }
        return {
            "n_clicks_in": self.n_clicks_in,
            "n_clicks_filtered": self.n_clicks_filtered,
            "n_pairs": self.n_pairs,
            "n_unpaired_discarded": self.n_unpaired_discarded,
            "mean_pairing_interval_us": self.mean_pairing_interval_us(clock_hz),
            "class_pairs": per_class,
        }


def _filter_mask(batch: ClickBatch) -> np.ndarray:
    if not batch.has_intensity_labels:
        raise MissingLabel("every click needs announced intensity labels to be filtered")
    mu, nu = IntensityClass.MU, IntensityClass.NU
    return ~(
        ((batch.a_int == mu) & (batch.b_int == nu)) | ((batch.a_int == nu) & (batch.b_int == mu))
    )


def filter_clicks(stream: ClickBatch) -> ClickBatch:
    """Drop (mu|nu) and (nu|mu) clicks, preserving order."""
    return stream.take(_filter_mask(stream))


@numba.njit(cache=True)
def _greedy_pairs(slots, t_c):
    n = slots.shape[0]
    early = np.empty(n // 2, np.int64)
    m = 0
    discarded = 0
    i = 0
    while i < n - 1:
        if slots[i + 1] - slots[i] <= t_c:
            early[m] = i
            m += 1
            i += 2
        else:
            discarded += 1
            i += 1
    leftover = i == n - 1
    return early[:m], discarded, leftover


def _check_sorted(slots: np.ndarray) -> None:
    if len(slots) > 1 and np.any(np.diff(slots) <= 0):
        bad = int(np.argmax(np.diff(slots) <= 0))
        raise UnsortedStream(f"slot {slots[bad + 1]} follows {slots[bad]} at index {bad + 1}")


@dataclass
class CoincidenceBatch:
    """Column-oriented coincidences: the early and late click plus classes."""

    early: ClickBatch
    late: ClickBatch
    ka_tot: np.ndarray
    kb_tot: np.ndarray

    def __len__(self) -> int:
        return len(self.early)

    @property
    def separation(self) -> np.ndarray:
        return self.late.slot - self.early.slot

    def coincidences(self):
        from .sifting import assign_basis

        for i, (e, l) in enumerate(zip(self.early.events(), self.late.events())):
            c = Coincidence(e, l, CombinedClass(int(self.ka_tot[i])), CombinedClass(int(self.kb_tot[i])))
            yield replace(c, basis=assign_basis(c))


def _classify(early: ClickBatch, late: ClickBatch):
    if len(early) == 0:
        return np.empty(0, np.uint8), np.empty(0, np.uint8)
    labelled = early.has_intensity_labels and late.has_intensity_labels
    if not labelled:
        raise MissingLabel("coincidence classification needs intensity labels")
    return COMBINE[early.a_int, late.a_int], COMBINE[early.b_int, late.b_int]


class Pairer:
    """Streaming greedy neighbour pairing.

    Feed slot-sorted (already filtered) batches; the last unpaired click of a
    batch is carried into the next one, so chunked and whole-stream pairing
    give identical results.
    """

    def __init__(self, cfg: PairingConfig):
        self.cfg = cfg
        self.stats = PairingStats()
        self._pending: Optional[ClickBatch] = None

    def feed(self, batch: ClickBatch) -> CoincidenceBatch:
        if self._pending is not None:
            batch = ClickBatch.concat([self._pending, batch])
            self._pending = None
        _check_sorted(batch.slot)
        early_idx, discarded, leftover = _greedy_pairs(batch.slot, self.cfg.T_c)
        if leftover:
            self._pending = batch.take(slice(len(batch) - 1, None))
        early = batch.take(early_idx)
        late = batch.take(early_idx + 1)
        ka, kb = _classify(early, late)
        st = self.stats
        st.n_pairs += len(early_idx)
        st.n_unpaired_discarded += discarded
        st.interval_sum_slots += int(np.sum(late.slot - early.slot))
        np.add.at(st.class_pairs, (ka, kb), 1)
        return CoincidenceBatch(early, late, ka, kb)

    def finish(self) -> None:
        if self._pending is not None:
            self.stats.n_unpaired_discarded += 1
            self._pending = None

    @property
    def last_slot(self) -> Optional[int]:
        return None if self._pending is None else int(self._pending.slot[0])


def pair_neighbors(stream: ClickBatch, cfg: PairingConfig) -> tuple[CoincidenceBatch, PairingStats]:
    """Pair an already-filtered stream in one pass."""
    pairer = Pairer(cfg)
    pairer.stats.n_clicks_in = len(stream)
    out = pairer.feed(stream)
    pairer.finish()
    return out, pairer.stats


def filter_and_pair(
    batches: Iterable[ClickBatch], cfg: PairingConfig
) -> tuple[list[CoincidenceBatch], PairingStats]:
    """Filter (if enabled) then pair a chunked stream."""
    pairer = Pairer(cfg)
    out = []
    prev_last = None
    for batch in batches:
        if len(batch) and prev_last is not None and batch.slot[0] <= prev_last:
            raise UnsortedStream(f"chunk starts at slot {batch.slot[0]} after {prev_last}")
        if len(batch):
            prev_last = int(batch.slot[-1])
        pairer.stats.n_clicks_in += len(batch)
        if cfg.filter_enabled:
            kept = filter_clicks(batch)
            pairer.stats.n_clicks_filtered += len(batch) - len(kept)
            batch = kept
        out.append(pairer.feed(batch))
    pairer.finish()
    return out, pairer.stats


def classify_coincidence(early: ClickEvent, late: ClickEvent) -> Coincidence:
    """Combine per-bin intensity labels into (ka_tot, kb_tot)."""
    from .sifting import assign_basis

    if early.truth is None or late.truth is None:
        raise MissingLabel("both clicks need intensity labels")
    ka = combine(early.truth.alice_intensity, late.truth.alice_intensity)
    kb = combine(early.truth.bob_intensity, late.truth.bob_intensity)
    c = Coincidence(early, late, ka, kb)
    return replace(c, basis=assign_basis(c))


def split_points(slots: np.ndarray, t_c: int) -> np.ndarray:
    """Indices where the stream can be cut without changing the pairing.

    A gap longer than ``t_c`` always ends the scan state: the click before the
    gap is either the late half of a pair or gets discarded.
    """
    return np.flatnonzero(np.diff(slots) > t_c) + 1


def delay_pairs(slots: np.ndarray, lo: int, hi: int, first: int = 0, last: Optional[int] = None):
    """All (i, j) with ``lo <= slots[j] - slots[i] <= hi`` and ``first <= i < last``.

    Unlike neighbour pairing a click may appear in several pairs; this is the
    estimator used to resolve QBER as a function of a forced pair separation.
    """
    slots = np.asarray(slots, dtype=np.int64)
    last = len(slots) if last is None else last
    base = slots[first:last]
    start = np.searchsorted(slots, base + lo, side="left")
    stop = np.searchsorted(slots, base + hi, side="right")
    start = np.maximum(start, np.arange(first, last) + 1)
    counts = np.maximum(stop - start, 0)
    total = int(counts.sum())
    i = np.repeat(np.arange(first, last), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    j = np.repeat(start, counts) + offsets
    return i, j


__all__ = [
    "MissingLabel",
    "UnsortedStream",
    "PairingConfig",
    "PairingStats",
    "CoincidenceBatch",
    "Pairer",
    "filter_clicks",
    "pair_neighbors",
    "filter_and_pair",
    "classify_coincidence",
    "split_points",
    "delay_pairs",
    "NO_LABEL",
]
