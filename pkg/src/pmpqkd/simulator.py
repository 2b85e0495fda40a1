"""Monte Carlo generation of Charlie's click stream.

Each slot carries an independent (intensity, phase) encoding from both users.
The two weak coherent pulses meet at a 50/50 beam splitter; the differential
phase is the encoded phase difference plus a slowly wandering laser phase.

Sampling is exact but skips empty slots: the probability that *anything*
clicks in a slot does not depend on the interference phase beyond a bounded
factor, so click candidates are drawn as a Bernoulli process at the
intensity-averaged upper-bound rate, their encodings are drawn from the
posterior given a candidate, and a final acceptance step restores the exact
phase-dependent outcome distribution.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from .core import (
    N_PHASES,
    ClickBatch,
    PMPError,
    ProtocolParams,
    validate_params,
)

DEFAULT_CHUNK_SLOTS = 1 << 24

# spawn-key namespaces of the counter-based RNG streams
_CHUNK_STREAM = 0
_PHASE_STREAM = 1


class StreamSinkError(PMPError, IOError):
    pass


def db_to_transmittance(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True)
class ChannelModel:
    """Per-arm loss, detectors and residual interference imperfections.

    ``vacuum_leak`` is the mean photon number actually emitted for a nominal
    vacuum pulse (finite modulator extinction); ``visibility_residual`` folds
    timing jitter and polarisation mismatch into one mode-overlap factor.
    """

    loss_a_db: float = 40.5
    loss_b_db: float = 40.15
    charlie_loss_a_db: float = 2.90
    charlie_loss_b_db: float = 3.08
    eta_d0: float = 0.710
    eta_d1: float = 0.705
    dark_d0_hz: float = 6.3
    dark_d1_hz: float = 9.0
    pulse_duty: float = 1.0
    visibility_residual: float = 0.98
    vacuum_leak: float = 0.0

    def __post_init__(self):
        for name in ("loss_a_db", "loss_b_db", "charlie_loss_a_db", "charlie_loss_b_db"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("eta_d0", "eta_d1"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.dark_d0_hz < 0 or self.dark_d1_hz < 0:
            raise ValueError("dark-count rates must be >= 0")
        if not 0 <= self.visibility_residual <= 1:
            raise ValueError("visibility_residual must be in [0, 1]")
        if not 0 < self.pulse_duty <= 1:
            raise ValueError("pulse_duty must be in (0, 1]")
        if self.vacuum_leak < 0:
            raise ValueError("vacuum_leak must be >= 0")

    @property
    def t_a(self) -> float:
        """Alice's arm transmittance up to the detectors (fiber + Charlie)."""
        return db_to_transmittance(self.loss_a_db + self.charlie_loss_a_db)

    @property
    def t_b(self) -> float:
        return db_to_transmittance(self.loss_b_db + self.charlie_loss_b_db)

    @property
    def total_fiber_loss_db(self) -> float:
        return self.loss_a_db + self.loss_b_db

    def dark_probabilities(self, clock_hz: float) -> tuple[float, float]:
        """Per-slot dark-count probabilities of D0 and D1."""
        return (
            self.dark_d0_hz * self.pulse_duty / clock_hz,
            self.dark_d1_hz * self.pulse_duty / clock_hz,
        )

    def photon_numbers(self, params: ProtocolParams) -> np.ndarray:
        """Emitted mean photon number per IntensityClass index."""
        return np.array([self.vacuum_leak, params.nu, params.mu])


@dataclass(frozen=True)
class PhaseNoiseModel:
    """Piecewise-linear differential laser phase.

    The frequency difference is ``offset_hz + g`` with ``g ~ N(0, drift_std_hz)``
    redrawn every ``resample_interval`` slots.
    """

    offset_hz: float = 260.0
    drift_std_hz: float = 2200.0
    resample_interval: int = 1_000_000

    def __post_init__(self):
        if self.drift_std_hz < 0:
            raise ValueError("drift_std_hz must be >= 0")
        if self.resample_interval < 1:
            raise ValueError("resample_interval must be >= 1")


@dataclass(frozen=True)
class PhaseTrajectory:
    """Phase at every resample knot plus the rate in force after each knot."""

    knots: np.ndarray  # radians at slots 0, R, 2R, ...
    rates_hz: np.ndarray
    resample_interval: int
    clock_hz: float

    def at(self, slots: np.ndarray) -> np.ndarray:
        slots = np.asarray(slots, dtype=np.int64)
        k = slots // self.resample_interval
        dt = (slots - k * self.resample_interval) / self.clock_hz
        return self.knots[k] + 2 * np.pi * self.rates_hz[k] * dt


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def phase_walk(
    model: PhaseNoiseModel, n_slots: int, seed: int, clock_hz: float = 1e9
) -> PhaseTrajectory:
    """Draw the differential phase trajectory covering ``n_slots`` slots."""
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    n_int = -(-n_slots // model.resample_interval)
    rng = _rng(seed, _PHASE_STREAM)
    rates = model.offset_hz + model.drift_std_hz * rng.standard_normal(n_int)
    step = 2 * np.pi * rates * (model.resample_interval / clock_hz)
    knots = np.concatenate([[0.0], np.cumsum(step)])
    return PhaseTrajectory(knots, rates, model.resample_interval, clock_hz)


def click_probabilities(ka, kb, phi, ch: ChannelModel, clock_hz: float = 1e9):
    """Outcome probabilities (p_D0, p_D1, p_both, p_none) for one slot.

    ``ka``/``kb`` are emitted mean photon numbers and ``phi`` the optical
    phase of Alice's pulse relative to Bob's. Accepts scalars or arrays.
    """
    ka = np.asarray(ka, dtype=float)
    kb = np.asarray(kb, dtype=float)
    a = ch.t_a * ka
    b = ch.t_b * kb
    mean = 0.5 * (a + b)
    cross = ch.visibility_residual * np.sqrt(a * b) * np.cos(phi)
    pd0, pd1 = ch.dark_probabilities(clock_hz)
    # 1 - q computed directly keeps tiny click probabilities accurate
    nq0 = (1 - pd0) * np.exp(-ch.eta_d0 * (mean + cross))
    nq1 = (1 - pd1) * np.exp(-ch.eta_d1 * (mean - cross))
    q0 = -np.expm1(np.log1p(-pd0) - ch.eta_d0 * (mean + cross))
    q1 = -np.expm1(np.log1p(-pd1) - ch.eta_d1 * (mean - cross))
    return q0 * nq1, q1 * nq0, q0 * q1, nq0 * nq1


def draw_encodings(params: ProtocolParams, n: int, rng: np.random.Generator):
    """i.i.d. per-slot encodings: (a_int, a_phase, b_int, b_phase) uint8 arrays."""
    probs = params.probabilities
    a_int = rng.choice(3, size=n, p=probs).astype(np.uint8)
    b_int = rng.choice(3, size=n, p=probs).astype(np.uint8)
    phases = rng.integers(0, N_PHASES, size=(2, n), dtype=np.uint8)
    return a_int, phases[0], b_int, phases[1]


def expected_click_rate(params: ProtocolParams, ch: ChannelModel, filtered: bool = False) -> float:
    """Closed-form single-click probability per slot, averaged over encodings
    and a uniformly distributed interference phase.

    With ``filtered`` the (mu|nu) and (nu|mu) slots are excluded, as the
    pairing filter would.
    """
    k = ch.photon_numbers(params)
    p = params.probabilities
    phis = (np.arange(256) + 0.5) * 2 * np.pi / 256
    total = 0.0
    for ia in range(3):
        for ib in range(3):
            if filtered and {ia, ib} == {1, 2}:
                continue
            p0, p1, _, _ = click_probabilities(k[ia], k[ib], phis, ch, params.F)
            total += p[ia] * p[ib] * float(np.mean(p0 + p1))
    return total


class _ChunkSampler:
    def __init__(self, params, ch, noise, n_slots, seed, chunk_slots):
        self.params = params
        self.ch = ch
        self.n_slots = n_slots
        self.seed = seed
        self.chunk_slots = chunk_slots
        self.traj = phase_walk(noise, max(n_slots, 1), seed, params.F)

        k = ch.photon_numbers(params)
        pd0, pd1 = ch.dark_probabilities(params.F)
        eta_max = max(ch.eta_d0, ch.eta_d1)
        s = ch.t_a * k[:, None] + ch.t_b * k[None, :]
        # upper bound on P(any click) over the interference phase
        bound = -np.expm1(np.log1p(-pd0) + np.log1p(-pd1) - eta_max * s)
        prior = np.outer(params.probabilities, params.probabilities)
        self.k = k
        self.p_bound = bound.ravel()
        weight = (prior * bound).ravel()
        self.p_candidate = float(weight.sum())
        self.posterior = weight / self.p_candidate if self.p_candidate > 0 else None

    @property
    def n_chunks(self) -> int:
        return -(-self.n_slots // self.chunk_slots)

    def chunk(self, index: int) -> ClickBatch:
        start = index * self.chunk_slots
        length = min(self.chunk_slots, self.n_slots - start)
        rng = _rng(self.seed, _CHUNK_STREAM, index)
        pos = _bernoulli_positions(rng, length, self.p_candidate)
        n = len(pos)
        if n == 0:
            return ClickBatch.empty()
        combo = rng.choice(9, size=n, p=self.posterior)
        a_int = (combo // 3).astype(np.uint8)
        b_int = (combo % 3).astype(np.uint8)
        phases = rng.integers(0, N_PHASES, size=(2, n), dtype=np.uint8)
        u = rng.random((2, n))

        slots = start + pos
        phi = (phases[0].astype(np.float64) - phases[1]) * (2 * np.pi / N_PHASES)
        phi += self.traj.at(slots)
        p0, p1, _, p_none = click_probabilities(
            self.k[a_int], self.k[b_int], phi, self.ch, self.params.F
        )
        p_any = 1.0 - p_none
        accept = u[0] * self.p_bound[combo] < p_any
        v = u[1] * p_any
        d0 = v < p0
        d1 = ~d0 & (v < p0 + p1)
        keep = accept & (d0 | d1)
        return ClickBatch(
            slots[keep],
            d1[keep].astype(np.uint8),
            a_int[keep],
            phases[0][keep],
            b_int[keep],
            phases[1][keep],
        )


def _bernoulli_positions(rng: np.random.Generator, length: int, p: float) -> np.ndarray:
    """Sorted indices in [0, length) of successes of i.i.d. Bernoulli(p) trials."""
    if p <= 0 or length <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(length, dtype=np.int64)
    parts = []
    pos = -1
    while True:
        mean = (length - pos) * p
        size = int(mean + 6 * math.sqrt(mean) + 16)
        gaps = rng.geometric(p, size=size)
        idx = pos + np.cumsum(gaps)
        parts.append(idx)
        if idx[-1] >= length:
            break
        pos = int(idx[-1])
    out = np.concatenate(parts)
    return out[out < length]


def iter_simulate(
    params: ProtocolParams,
    ch: ChannelModel,
    noise: PhaseNoiseModel,
    n_slots: int,
    seed: int,
    *,
    chunk_slots: int = DEFAULT_CHUNK_SLOTS,
    workers: int = 1,
) -> Iterator[ClickBatch]:
    """Yield the click stream chunk by chunk, in slot order.

    Output is bit-identical for any ``workers``; it depends on ``chunk_slots``
    only through the RNG stream layout, so keep it fixed for reproducibility.
    """
    validate_params(params)
    if n_slots < 0:
        raise ValueError("n_slots must be >= 0")
    if n_slots == 0:
        return
    sampler = _ChunkSampler(params, ch, noise, n_slots, seed, chunk_slots)
    if workers <= 1:
        for i in range(sampler.n_chunks):
            yield sampler.chunk(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending: deque = deque()
        next_index = 0
        while next_index < sampler.n_chunks or pending:
            while next_index < sampler.n_chunks and len(pending) < 2 * workers:
                pending.append(pool.submit(sampler.chunk, next_index))
                next_index += 1
            yield pending.popleft().result()


def simulate(
    params: ProtocolParams,
    ch: ChannelModel,
    noise: PhaseNoiseModel,
    n_slots: int,
    seed: int,
    *,
    chunk_slots: int = DEFAULT_CHUNK_SLOTS,
    workers: int = 1,
    sink: Optional[Callable[[ClickBatch], None]] = None,
) -> ClickBatch | int:
    """Run the simulation.

    Without a ``sink`` the whole stream (truth columns included) is returned.
    With one, each chunk is handed to it in slot order and the total number of
    clicks is returned; sink failures surface as :class:`StreamSinkError`.
    """
    chunks = iter_simulate(
        params, ch, noise, n_slots, seed, chunk_slots=chunk_slots, workers=workers
    )
    if sink is None:
        return ClickBatch.concat(chunks)
    total = 0
    for batch in chunks:
        try:
            sink(batch)
        except Exception as exc:
            raise StreamSinkError(f"sink failed after {total} clicks: {exc}") from exc
        total += len(batch)
    return total


def simulate_reference(
    params: ProtocolParams, ch: ChannelModel, noise: PhaseNoiseModel, n_slots: int, seed: int
) -> ClickBatch:
    """Slot-by-slot reference sampler (slow, for cross-checking)."""
    rng = np.random.default_rng(seed)
    traj = phase_walk(noise, max(n_slots, 1), seed, params.F)
    a_int, a_ph, b_int, b_ph = draw_encodings(params, n_slots, rng)
    k = ch.photon_numbers(params)
    slots = np.arange(n_slots, dtype=np.int64)
    phi = (a_ph.astype(float) - b_ph) * (2 * np.pi / N_PHASES) + traj.at(slots)
    p0, p1, _, _ = click_probabilities(k[a_int], k[b_int], phi, ch, params.F)
    u = rng.random(n_slots)
    d0 = u < p0
    d1 = ~d0 & (u < p0 + p1)
    keep = d0 | d1
    return ClickBatch(slots[keep], d1[keep], a_int[keep], a_ph[keep], b_int[keep], b_ph[keep])
