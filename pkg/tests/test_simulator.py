import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmpqkd.core import N_PHASES, ClickBatch, ProtocolParams
from pmpqkd.presets import get_preset
from pmpqkd.simulator import (
    ChannelModel,
    PhaseNoiseModel,
    StreamSinkError,
    click_probabilities,
    expected_click_rate,
    iter_simulate,
    phase_walk,
    simulate,
    simulate_reference,
)

PARAMS = ProtocolParams(mu=0.542, nu=0.035, p_mu=0.261, p_nu=0.344, p_o=0.395)
QUIET = PhaseNoiseModel(offset_hz=0.0, drift_std_hz=0.0)


def coherent_oracle(ka, kb, phi, ch, clock_hz):
    """Two coherent pulses on a balanced beam splitter, Bob's pulse split into
    a component matching Alice's mode (amplitude V) and an orthogonal one."""
    alpha = math.sqrt(ch.t_a * ka) * complex(math.cos(phi), math.sin(phi))
    beta = math.sqrt(ch.t_b * kb)
    v = ch.visibility_residual
    perp = math.sqrt(1 - v * v) * beta
    out0 = (abs((alpha + v * beta) / math.sqrt(2)) ** 2 + abs(perp / math.sqrt(2)) ** 2) * ch.eta_d0
    out1 = (abs((alpha - v * beta) / math.sqrt(2)) ** 2 + abs(perp / math.sqrt(2)) ** 2) * ch.eta_d1
    d0, d1 = ch.dark_d0_hz * ch.pulse_duty / clock_hz, ch.dark_d1_hz * ch.pulse_duty / clock_hz
    silent0 = (1 - d0) * math.exp(-out0)
    silent1 = (1 - d1) * math.exp(-out1)
    return (1 - silent0) * silent1, (1 - silent1) * silent0, (1 - silent0) * (1 - silent1), silent0 * silent1


channels = st.builds(
    ChannelModel,
    loss_a_db=st.floats(0, 60),
    loss_b_db=st.floats(0, 60),
    eta_d0=st.floats(0.05, 1.0),
    eta_d1=st.floats(0.05, 1.0),
    dark_d0_hz=st.floats(0, 1e5),
    dark_d1_hz=st.floats(0, 1e5),
    visibility_residual=st.floats(0, 1),
)
photons = st.floats(0, 5)
phases = st.floats(-10, 10)


@given(photons, photons, phases, channels)
def test_outcome_probabilities_sum_to_one(ka, kb, phi, ch):
    p = click_probabilities(ka, kb, phi, ch)
    assert all(x >= 0 for x in p)
    assert abs(sum(float(x) for x in p) - 1.0) <= 1e-12


@given(photons, photons, phases, channels)
@settings(max_examples=200)
def test_click_probabilities_match_coherent_state_oracle(ka, kb, phi, ch):
    got = click_probabilities(ka, kb, phi, ch)
    want = coherent_oracle(ka, kb, phi, ch, 1e9)
    for g, w in zip(got, want):
        assert float(g) == pytest.approx(w, rel=1e-9, abs=1e-15)


def test_click_probabilities_vectorised():
    ch = ChannelModel(loss_a_db=10, loss_b_db=10)
    phi = np.linspace(0, 2 * np.pi, 7)
    p0, p1, pb, pn = click_probabilities(0.5, 0.5, phi, ch)
    for i, f in enumerate(phi):
        assert (p0[i], p1[i]) == pytest.approx(click_probabilities(0.5, 0.5, f, ch)[:2], rel=1e-14)


def test_vacuum_leak_adds_mean_photon_number():
    ch = ChannelModel(vacuum_leak=1e-4)
    assert list(ch.photon_numbers(PARAMS)) == [1e-4, 0.035, 0.542]


def test_channel_rejects_bad_values():
    with pytest.raises(ValueError):
        ChannelModel(eta_d0=0.0)
    with pytest.raises(ValueError):
        ChannelModel(visibility_residual=1.5)
    with pytest.raises(ValueError):
        ChannelModel(loss_a_db=-1)


def test_phase_walk_is_continuous_and_seeded():
    model = PhaseNoiseModel(offset_hz=260, drift_std_hz=2200, resample_interval=1000)
    traj = phase_walk(model, 10_000, seed=5)
    slots = np.arange(0, 10_000)
    phase = traj.at(slots)
    step = np.diff(phase)
    assert np.max(np.abs(step)) < 2 * np.pi * 2e4 / 1e9
    again = phase_walk(model, 10_000, seed=5)
    assert np.array_equal(again.at(slots), phase)
    assert not np.array_equal(phase_walk(model, 10_000, seed=6).at(slots), phase)


def test_phase_walk_mean_rate_is_offset():
    model = PhaseNoiseModel(offset_hz=260, drift_std_hz=2200, resample_interval=10)
    traj = phase_walk(model, 10**7, seed=1)
    assert np.mean(traj.rates_hz) == pytest.approx(260, abs=5 * 2200 / math.sqrt(10**6))
    assert np.std(traj.rates_hz) == pytest.approx(2200, rel=0.01)


def test_dark_counts_only_with_vacuum_encoding():
    # every slot vacuum with perfect extinction: clicks are dark counts
    params = PARAMS.replace(p_mu=0.0, p_nu=0.0, p_o=1.0)
    ch = ChannelModel(vacuum_leak=0.0)
    n = 10**10
    clicks = simulate(params, ch, QUIET, n, seed=11)
    lam0, lam1 = 6.3e-9 * n, 9.0e-9 * n
    n0 = int(np.sum(clicks.detector == 0))
    n1 = int(np.sum(clicks.detector == 1))
    assert abs(n0 - lam0) < 4 * math.sqrt(lam0)
    assert abs(n1 - lam1) < 4 * math.sqrt(lam1)
    assert np.all(clicks.a_int == 0) and np.all(clicks.b_int == 0)


def test_click_count_matches_closed_form():
    preset = get_preset("504.66km")
    ch = preset.channel()
    n = 10**9
    count = simulate(preset.params, ch, preset.noise(), n, seed=2, sink=lambda b: None)
    expected = expected_click_rate(preset.params, ch) * n
    assert abs(count - expected) < 3 * math.sqrt(expected)


def test_determinism_across_workers():
    preset = get_preset("201.88km")
    kw = dict(chunk_slots=1 << 22)
    one = simulate(preset.params, preset.channel(), preset.noise(), 5 * 10**7, 9, workers=1, **kw)
    three = simulate(preset.params, preset.channel(), preset.noise(), 5 * 10**7, 9, workers=3, **kw)
    assert len(one) > 10_000
    assert one.equals(three)


def test_iter_simulate_chunks_are_sorted_and_contiguous():
    preset = get_preset("201.88km")
    chunks = list(iter_simulate(preset.params, preset.channel(), preset.noise(), 10**7, 4, chunk_slots=10**6))
    assert len(chunks) == 10
    for i, c in enumerate(chunks):
        assert np.all(np.diff(c.slot) > 0)
        if len(c):
            assert i * 10**6 <= c.slot[0] and c.slot[-1] < (i + 1) * 10**6
    whole = simulate(preset.params, preset.channel(), preset.noise(), 10**7, 4, chunk_slots=10**6)
    assert ClickBatch.concat(chunks).equals(whole)


def test_zero_slots_gives_empty_stream():
    assert len(simulate(PARAMS, ChannelModel(), QUIET, 0, seed=1)) == 0


def test_sink_failure_is_wrapped():
    preset = get_preset("100.94km")

    def sink(batch):
        raise OSError("disk full")

    with pytest.raises(StreamSinkError, match="disk full"):
        simulate(preset.params, preset.channel(), preset.noise(), 10**6, 1, sink=sink)


def _class_expectations(params, ch, n):
    """Expected clicks per (a_int, b_int, detector) with zero phase noise:
    the interference phase is the encoded difference only."""
    k = ch.photon_numbers(params)
    p = params.probabilities
    diffs = np.arange(N_PHASES) * 2 * np.pi / N_PHASES
    out = np.zeros((3, 3, 2))
    for a in range(3):
        for b in range(3):
            p0, p1, _, _ = click_probabilities(k[a], k[b], diffs, ch, params.F)
            out[a, b] = n * p[a] * p[b] * np.array([p0.mean(), p1.mean()])
    return out


def _class_counts(clicks):
    out = np.zeros((3, 3, 2))
    np.add.at(out, (clicks.a_int, clicks.b_int, clicks.detector), 1)
    return out


@pytest.mark.parametrize("sampler", ["fast", "reference"])
def test_samplers_match_class_expectations(sampler):
    ch = ChannelModel(loss_a_db=3, loss_b_db=4, visibility_residual=0.9, dark_d0_hz=1e6, dark_d1_hz=2e6)
    n = 400_000
    if sampler == "fast":
        clicks = simulate(PARAMS, ch, QUIET, n, seed=21)
    else:
        clicks = simulate_reference(PARAMS, ch, QUIET, n, seed=21)
    exp = _class_expectations(PARAMS, ch, n)
    got = _class_counts(clicks)
    chi2 = float(np.sum((got - exp) ** 2 / exp))
    # 18 cells: the 0.9999 quantile of chi2(18) is about 48
    assert chi2 < 48


def test_fast_sampler_interference_depends_on_encoded_phase():
    ch = ChannelModel(loss_a_db=3, loss_b_db=3, visibility_residual=1.0, dark_d0_hz=0, dark_d1_hz=0, eta_d0=0.7, eta_d1=0.7)
    clicks = simulate(PARAMS, ch, QUIET, 300_000, seed=3)
    both_mu = (clicks.a_int == 2) & (clicks.b_int == 2)
    same = both_mu & (clicks.a_phase == clicks.b_phase)
    opposite = both_mu & (((clicks.a_phase.astype(int) - clicks.b_phase) % 16) == 8)
    assert np.all(clicks.detector[same] == 0)
    assert np.all(clicks.detector[opposite] == 1)
    assert same.sum() > 100 and opposite.sum() > 100
