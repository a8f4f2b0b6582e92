import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wosr import wavegen
from wosr.errors import InvalidParams
from wosr.wavegen import ModScheme, WaveformClass, WaveParams, code_sequence

FS = 6.25e6
N = 4096


def params(bw_ratio=0.5, seed=7, n=N, **cp):
    return WaveParams(FS, bw_ratio * FS, n, seed, cp)


def all_records(seed=3):
    p = params(seed=seed)
    return [
        wavegen.synth_single_carrier(p, ModScheme.QPSK),
        wavegen.synth_multicarrier(p, WaveformClass.OFDM, 30e3, ModScheme.QAM16),
        wavegen.synth_multicarrier(p, WaveformClass.SCFDMA, 30e3, ModScheme.QAM16),
        wavegen.synth_analog(p, WaveformClass.AM, "DSB", 0.5),
        wavegen.synth_analog(p, WaveformClass.AM, "USB", 0.8),
        wavegen.synth_analog(p, WaveformClass.FM),
        wavegen.synth_lfm(p),
        wavegen.synth_phase_coded(p, "barker", 13),
        wavegen.synth_phase_coded(p, "zadoffchu", (1, 31)),
        wavegen.synth_unknown(p, WaveformClass.UNKNOWN_FH),
        wavegen.synth_unknown(p, WaveformClass.UNKNOWN_NOISE),
    ]


def test_exactly_seven_known_classes():
    assert len(wavegen.KNOWN_CLASSES) == 7
    assert set(wavegen.UNKNOWN_CLASSES) == {WaveformClass.UNKNOWN_FH, WaveformClass.UNKNOWN_NOISE}


@pytest.mark.parametrize("scheme", list(ModScheme))
def test_constellations_unit_energy(scheme):
    pts = scheme.points()
    assert len(pts) == scheme.order
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)


def test_bpsk_and_qam4_points():
    assert np.allclose(sorted(ModScheme.BPSK.points().real), [-1, 1])
    assert np.allclose(ModScheme.BPSK.points().imag, 0, atol=1e-12)
    expected = {complex(a, b) / math.sqrt(2) for a in (-1, 1) for b in (-1, 1)}
    got = ModScheme.QAM4.points()
    for e in expected:
        assert np.min(np.abs(got - e)) < 1e-12


def test_every_record_has_length_and_unit_power():
    for rec in all_records():
        assert len(rec) == N
        assert np.mean(np.abs(rec.samples) ** 2) == pytest.approx(1.0, abs=1e-9)


def test_synthesis_is_deterministic():
    for a, b in zip(all_records(5), all_records(5)):
        assert a.samples.tobytes() == b.samples.tobytes()
    a = all_records(5)[0].samples
    b = all_records(6)[0].samples
    assert not np.array_equal(a, b)


def test_wave_params_validation():
    with pytest.raises(InvalidParams):
        WaveParams(FS, 2 * FS, N)
    with pytest.raises(InvalidParams):
        WaveParams(FS, FS / 2, 32)
    with pytest.raises(InvalidParams):
        WaveParams(-1.0, 1.0, N)


def test_single_carrier_needs_two_samples_per_symbol():
    with pytest.raises(InvalidParams):
        wavegen.synth_single_carrier(params(0.9, rolloff=0.35), ModScheme.QPSK)
    # a steeper rolloff lowers the symbol rate enough
    wavegen.synth_single_carrier(params(0.9, rolloff=0.8), ModScheme.QPSK)


def test_rrc_pulse_is_nyquist_after_matching():
    # RRC convolved with itself is a raised cosine: zero at nonzero integer symbol times
    beta, sps = 0.35, 8
    t = np.arange(-16 * sps, 16 * sps + 1) / sps
    h = wavegen.rrc_pulse(t, beta)
    rc = np.convolve(h, h) / sps
    centre = len(rc) // 2
    taps = rc[centre::sps][1:6]
    assert np.max(np.abs(taps)) < 0.01 * rc[centre]


def energy_bandwidth(x, fs, frac=0.99):
    spec = np.abs(np.fft.fftshift(np.fft.fft(x))) ** 2
    f = np.fft.fftshift(np.fft.fftfreq(len(x), 1 / fs))
    order = np.argsort(spec)[::-1]
    cum = np.cumsum(spec[order]) / spec.sum()
    kept = order[:np.searchsorted(cum, frac) + 1]
    return len(kept) * fs / len(x), f[kept]


@pytest.mark.parametrize("kind", ["sc", "ofdm", "scfdma"])
@pytest.mark.parametrize("ratio", [0.25, 0.5, 0.8])
def test_coarse_bandwidth(kind, ratio):
    p = params(ratio, seed=11, rolloff=0.9 if ratio > 0.6 else 0.35)
    if kind == "sc":
        rec = wavegen.synth_single_carrier(p, ModScheme.QAM16)
    else:
        k = WaveformClass.OFDM if kind == "ofdm" else WaveformClass.SCFDMA
        rec = wavegen.synth_multicarrier(p, k, 15e3, ModScheme.QAM16)
    bw, _ = energy_bandwidth(rec.samples, FS)
    assert 0.5 * p.bandwidth_hz <= bw <= 1.5 * p.bandwidth_hz


def test_ofdm_constant_grid_is_impulse():
    grid = np.ones((1, 64), dtype=complex)
    x = wavegen.ofdm_modulate(grid, 0)
    assert abs(x[0]) == pytest.approx(8.0)
    assert np.max(np.abs(x[1:])) < 1e-12


def test_scfdma_full_spread_is_identity(rng):
    blocks = ModScheme.QAM16.draw(rng, (3, 32))
    x = wavegen.scfdma_modulate(blocks, 32, 0)
    assert np.allclose(x, blocks.ravel(), atol=1e-12)


def test_cyclic_prefix_copies_tail(rng):
    body = rng.standard_normal((2, 16)) + 0j
    out = wavegen.add_cyclic_prefix(body, 4)
    assert out.shape == (2, 20)
    assert np.array_equal(out[:, :4], body[:, -4:])


def papr(x):
    return np.max(np.abs(x) ** 2) / np.mean(np.abs(x) ** 2)


def test_ofdm_papr_exceeds_single_carrier():
    p = WaveParams(100e6, 25e6, 65536, 21)
    sc = wavegen.synth_single_carrier(p, ModScheme.QPSK)
    ofdm = wavegen.synth_multicarrier(p, WaveformClass.OFDM, 15e3, ModScheme.QPSK)
    assert papr(ofdm.samples) > papr(sc.samples)


def test_ofdm_leaves_dc_empty_scfdma_does_not():
    bins = wavegen.ofdm_bins(24, 128)
    assert 0 not in bins and len(set(bins)) == 24
    p = params(0.25, seed=2, time_offset=0, cp_fraction=0.0)
    n_idft = int(round(FS / 60e3))
    ofdm = wavegen.synth_multicarrier(p, WaveformClass.OFDM, FS / n_idft, ModScheme.QPSK)
    sym = np.fft.fft(ofdm.samples[:n_idft])
    assert abs(sym[0]) < 1e-9 * np.max(np.abs(sym))


def test_multicarrier_subcarrier_limits():
    with pytest.raises(InvalidParams):
        wavegen.synth_multicarrier(params(0.02), WaveformClass.OFDM, 60e3, ModScheme.QPSK)
    with pytest.raises(InvalidParams):
        wavegen.synth_multicarrier(params(1.0), WaveformClass.OFDM, 60e3, ModScheme.QPSK)


def test_fm_is_constant_modulus():
    rec = wavegen.synth_analog(params(seed=4), WaveformClass.FM, freq_dev_hz=1e6)
    mag = np.abs(rec.samples)
    assert np.max(np.abs(mag - mag[0])) < 1e-9


def test_am_zero_message_is_dc():
    p = params(tones=[(1e5, 0.0)])
    rec = wavegen.synth_analog(p, WaveformClass.AM, "DSB", 0.5)
    assert np.allclose(rec.samples, rec.samples[0], atol=1e-12)
    assert abs(rec.samples[0].imag) < 1e-12


def test_am_ssb_single_tone_suppresses_lower_line():
    # tone on an exact bin: 64 cycles per record
    f0 = 64 * FS / N
    rec = wavegen.synth_analog(params(tones=[(f0, 1.0)]), WaveformClass.AM, "USB", 0.5)
    spec = np.abs(np.fft.fft(rec.samples))
    upper, lower = spec[64], spec[N - 64]
    assert 20 * np.log10(upper / max(lower, 1e-300)) > 40
    lsb = wavegen.synth_analog(params(tones=[(f0, 1.0)]), WaveformClass.AM, "LSB", 0.5)
    spec = np.abs(np.fft.fft(lsb.samples))
    assert spec[N - 64] > 1e4 * spec[64]


def test_am_overmodulation_rejected():
    with pytest.raises(InvalidParams):
        wavegen.synth_analog(params(), WaveformClass.AM, "DSB", 1.5)


def inst_freq(x, fs):
    return np.diff(np.unwrap(np.angle(x))) * fs / (2 * np.pi)


def test_lfm_up_sweep_monotone_and_covers_band():
    p = params(0.5, duty=1.0, n_pulses=1, time_offset=0)
    rec = wavegen.synth_lfm(p, "up", duty=1.0)
    f = inst_freq(rec.samples, FS)
    assert np.all(np.diff(f) > 0)
    B = p.bandwidth_hz
    assert f[0] == pytest.approx(-B / 2, rel=0.01)
    assert f[-1] == pytest.approx(B / 2, rel=0.01)
    assert np.all(np.abs(rec.samples) > 0)


def test_lfm_down_is_negated_up():
    p = params(0.5, n_pulses=1, time_offset=0)
    up = inst_freq(wavegen.synth_lfm(p, "up", duty=1.0).samples, FS)
    down = inst_freq(wavegen.synth_lfm(p, "down", duty=1.0).samples, FS)
    assert np.allclose(down, -up, atol=1e-6)


def test_lfm_pulse_is_constant_modulus_and_gated():
    rec = wavegen.synth_lfm(params(n_pulses=2), duty=0.5)
    mag = np.abs(rec.samples)
    on = mag > 0
    assert 0.4 < on.mean() < 0.6
    assert np.ptp(mag[on]) < 1e-9


def aperiodic_acf(x):
    n = len(x)
    return np.array([np.sum(x[k:] * np.conj(x[:n - k])) for k in range(n)])


def test_barker13_peak_sidelobe_is_one():
    acf = np.abs(aperiodic_acf(code_sequence("barker", 13)))
    assert acf[0] == pytest.approx(13.0)
    assert np.max(acf[1:]) == pytest.approx(1.0)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 7, 11, 13])
def test_every_barker_code_has_unit_sidelobes(n):
    acf = np.abs(aperiodic_acf(code_sequence("barker", n)))
    assert np.max(acf[1:]) <= 1.0 + 1e-12


def test_barker_rejects_unknown_length():
    with pytest.raises(InvalidParams):
        code_sequence("barker", 6)


def test_frank_n4_matches_formula():
    seq = code_sequence("frank", 4)
    assert len(seq) == 16
    phases = np.array([2 * np.pi * i * k / 4 for i in range(4) for k in range(4)])
    assert np.allclose(seq, np.exp(1j * phases))


@pytest.mark.parametrize("u,nzc", [(1, 7), (1, 13), (5, 31), (25, 61)])
def test_zadoff_chu_constant_modulus_and_zero_periodic_acf(u, nzc):
    x = code_sequence("zadoffchu", (u, nzc))
    assert np.max(np.abs(np.abs(x) - 1)) < 1e-12
    acf = np.array([np.sum(x * np.conj(np.roll(x, k))) for k in range(nzc)])
    assert abs(acf[0]) == pytest.approx(nzc)
    assert np.max(np.abs(acf[1:])) < 1e-9 * nzc


def test_zadoff_chu_rejects_even_length_and_shared_factor():
    with pytest.raises(InvalidParams):
        code_sequence("zadoffchu", (1, 8))
    with pytest.raises(InvalidParams):
        code_sequence("zadoffchu", (3, 9))


def chip_plateaus(pulse, spc):
    """Split a pulse into chips, check each is flat, return one value per chip."""
    chips = pulse.reshape(-1, spc)
    assert np.all(np.ptp(np.abs(chips - chips[:, :1]), axis=1) < 1e-12)
    return chips[:, 0]


def test_phase_coded_plateau_counts():
    p = params(time_offset=0)
    rec = wavegen.synth_phase_coded(p, "barker", 13, samples_per_chip=4, duty=0.5)
    chips = chip_plateaus(rec.samples[:rec.meta["pulse_len"]], 4)
    assert len(chips) == 13
    assert np.allclose(np.sign(chips.real), code_sequence("barker", 13).real)
    frank = wavegen.synth_phase_coded(p, "frank", 4, samples_per_chip=4)
    chips = chip_plateaus(frank.samples[:frank.meta["pulse_len"]], 4)
    assert len(chips) == 16
    assert np.allclose(chips / chips[0], code_sequence("frank", 4))


def test_phase_coded_zc_constant_modulus_in_pulse():
    rec = wavegen.synth_phase_coded(params(), "zadoffchu", (1, 31))
    mag = np.abs(rec.samples)
    assert np.ptp(mag[mag > 0]) < 1e-9


def test_phase_coded_pulse_longer_than_record_rejected():
    with pytest.raises(InvalidParams):
        wavegen.synth_phase_coded(params(n=64), "frank", 8, samples_per_chip=4)


def test_noise_moments():
    for seed in range(5):
        rec = wavegen.synth_unknown(params(seed=seed), WaveformClass.UNKNOWN_NOISE)
        assert abs(np.mean(rec.samples)) < 5 / math.sqrt(N)
        assert rec.label == WaveformClass.UNKNOWN_NOISE


def test_fh_hops_between_distinct_channels():
    p = params(seed=9, n_hops=4)
    rec = wavegen.synth_unknown(p, WaveformClass.UNKNOWN_FH)
    blocks = rec.samples.reshape(4, -1)
    peaks = {int(np.argmax(np.abs(np.fft.fft(b)))) for b in blocks}
    assert len(peaks) >= 2
    assert np.ptp(np.abs(rec.samples)) < 1e-9


def test_fh_occupied_bandwidth_per_hop():
    # one dwell at full scale: -20 dB bandwidth near 2 MHz
    fs = 100e6
    p = WaveParams(fs, 25e6, 65536, 3, {"n_hops": 1})
    rec = wavegen.synth_unknown(p, WaveformClass.UNKNOWN_FH)
    spec = np.abs(np.fft.fftshift(np.fft.fft(rec.samples))) ** 2
    smooth = np.convolve(spec, np.ones(64) / 64, mode="same")
    above = np.flatnonzero(smooth > smooth.max() / 100)
    bw = (above[-1] - above[0] + 1) * fs / len(spec)
    assert 1e6 <= bw <= 3e6


@given(st.integers(0, 2**32), st.sampled_from([0.25, 0.5, 0.6, 0.75]))
def test_property_unit_power_for_any_seed(seed, ratio):
    p = params(ratio, seed=seed, n=512, rolloff=0.5)
    for rec in (wavegen.synth_single_carrier(p, ModScheme.PSK16),
                wavegen.synth_lfm(p),
                wavegen.synth_analog(p, WaveformClass.FM)):
        assert len(rec) == 512
        assert np.mean(np.abs(rec.samples) ** 2) == pytest.approx(1.0, abs=1e-9)


@given(st.integers(1, 1000).filter(lambda u: math.gcd(u, 61) == 1))
def test_property_zc_any_coprime_root(u):
    x = code_sequence("zadoffchu", (u, 61))
    acf = np.fft.ifft(np.abs(np.fft.fft(x)) ** 2)
    assert np.max(np.abs(acf[1:])) < 1e-9 * 61
