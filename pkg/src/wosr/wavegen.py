"""Seeded synthesis of the known waveform families and the unknown test signals.

Every generator is a pure function of its ``WaveParams`` (the seed included) and
returns an ``IqRecord`` of exactly ``record_len`` complex baseband samples
scaled to unit average power.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Mapping

import numpy as np
from scipy.special import erf

from .errors import InvalidParams


class WaveformClass(enum.IntEnum):
    SC = 0
    SCFDMA = 1
    OFDM = 2
    LFM = 3
    AM = 4
    FM = 5
    PHASE_CODED = 6
    UNKNOWN_FH = 7
    UNKNOWN_NOISE = 8

    @property
    def known(self) -> bool:
        return self.value < 7


KNOWN_CLASSES = tuple(c for c in WaveformClass if c.known)
UNKNOWN_CLASSES = tuple(c for c in WaveformClass if not c.known)
N_KNOWN = len(KNOWN_CLASSES)


class ModScheme(enum.Enum):
    BPSK = ("psk", 2)
    QPSK = ("psk", 4)
    PSK16 = ("psk", 16)
    PSK64 = ("psk", 64)
    QAM4 = ("qam", 4)
    QAM16 = ("qam", 16)
    QAM64 = ("qam", 64)
    QAM256 = ("qam", 256)

    @property
    def order(self) -> int:
        return self.value[1]

    def points(self) -> np.ndarray:
        """Constellation points, unit average energy."""
        return _constellation(*self.value).copy()

    def draw(self, rng: np.random.Generator, n) -> np.ndarray:
        pts = _constellation(*self.value)
        return pts[rng.integers(0, len(pts), size=n)]


@lru_cache(maxsize=None)
def _constellation(family: str, order: int) -> np.ndarray:
    if family == "psk":
        pts = np.exp(2j * np.pi * np.arange(order) / order)
    else:
        side = int(round(math.sqrt(order)))
        levels = np.arange(side) * 2.0 - (side - 1)
        pts = (levels[:, None] + 1j * levels[None, :]).ravel()
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    return pts


@dataclass(frozen=True)
class WaveParams:
    """Discrete synthesis parameters shared by every generator.

    ``class_params`` carries per-class knobs (rolloff, cyclic prefix fraction,
    message tones, pulse count, time offset, ...). Unset knobs take the
    generator's default or are drawn from the seeded RNG.
    """

    sample_rate_hz: float
    bandwidth_hz: float
    record_len: int
    seed: int = 0
    class_params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise InvalidParams(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not 0 < self.bandwidth_hz <= self.sample_rate_hz:
            raise InvalidParams(
                f"bandwidth_hz must lie in (0, sample_rate_hz], got {self.bandwidth_hz}"
            )
        if int(self.record_len) != self.record_len or self.record_len < 64:
            raise InvalidParams(f"record_len must be an integer >= 64, got {self.record_len}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def get(self, key, default=None):
        return self.class_params.get(key, default)


@dataclass
class IqRecord:
    samples: np.ndarray
    sample_rate_hz: float
    label: WaveformClass
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def replace(self, samples, **meta) -> "IqRecord":
        return IqRecord(
            np.asarray(samples), self.sample_rate_hz, self.label, {**self.meta, **meta}
        )


def derive_seed(*keys: int) -> int:
    """Map an integer key path (master seed, domain, index, ...) to a 64-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)
    return int(state[0])


def unit_power(x: np.ndarray) -> np.ndarray:
    power = np.mean(np.abs(x) ** 2)
    if power <= 0:
        raise InvalidParams("synthesized record has zero power")
    return x / np.sqrt(power)


def _finish(x, params: WaveParams, label: WaveformClass, **meta) -> IqRecord:
    x = unit_power(np.asarray(x, dtype=np.complex128))
    assert len(x) == params.record_len
    meta.setdefault("seed", params.seed)
    meta.setdefault("bandwidth_hz", params.bandwidth_hz)
    return IqRecord(x, params.sample_rate_hz, label, meta)


# ----------------------------------------------------------------------------
# single carrier


def rrc_pulse(t, beta: float) -> np.ndarray:
    """Root-raised-cosine impulse response, ``t`` in symbol periods."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    zero = np.abs(t) < 1e-12
    if beta > 0:
        sing = np.abs(np.abs(4 * beta * t) - 1.0) < 1e-9
    else:
        sing = np.zeros_like(zero)
    regular = ~(zero | sing)
    tr = t[regular]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    out[regular] = num / (np.pi * tr * (1 - (4 * beta * tr) ** 2))
    out[zero] = 1 - beta + 4 * beta / np.pi
    if beta > 0:
        a = np.pi / (4 * beta)
        out[sing] = beta / np.sqrt(2) * (
            (1 + 2 / np.pi) * np.sin(a) + (1 - 2 / np.pi) * np.cos(a)
        )
    return out


def synth_single_carrier(params: WaveParams, scheme: ModScheme) -> IqRecord:
    """RRC-shaped symbol stream whose occupied band is ``bandwidth_hz``.

    Symbol rate is ``bandwidth / (1 + rolloff)``; a random fractional timing
    offset models the unsynchronized receiver.
    """
    rolloff = float(params.get("rolloff", 0.35))
    if not 0 <= rolloff <= 1:
        raise InvalidParams(f"rolloff must lie in [0, 1], got {rolloff}")
    symbol_rate = params.bandwidth_hz / (1 + rolloff)
    sps = params.sample_rate_hz / symbol_rate
    if sps < 2:
        raise InvalidParams(
            f"samples per symbol {sps:.3f} < 2; lower the bandwidth or raise the rolloff"
        )
    span = int(params.get("span", 8))
    rng = params.rng()
    offset = float(params.get("time_offset", rng.uniform(0, sps)))

    n = params.record_len
    n_sym = int(np.ceil((n + offset) / sps)) + 2 * span + 2
    symbols = scheme.draw(rng, n_sym)
    t = (np.arange(n) + offset) / sps + span
    k0 = np.floor(t).astype(np.int64)
    x = np.zeros(n, dtype=np.complex128)
    for j in range(-span, span + 1):
        k = k0 + j
        x += symbols[k] * rrc_pulse(t - k, rolloff)
    return _finish(
        x, params, WaveformClass.SC,
        scheme=scheme.name, rolloff=rolloff, symbol_rate_hz=symbol_rate,
    )


# ----------------------------------------------------------------------------
# multicarrier


def add_cyclic_prefix(body: np.ndarray, cp_len: int) -> np.ndarray:
    """Prepend the last ``cp_len`` samples of each row."""
    if cp_len == 0:
        return body
    return np.concatenate([body[:, body.shape[1] - cp_len:], body], axis=1)


def ofdm_modulate(grid: np.ndarray, cp_len: int = 0) -> np.ndarray:
    """IDFT each row of a (symbols, n_idft) grid in natural bin order, add CP, serialize."""
    grid = np.atleast_2d(grid)
    n_idft = grid.shape[1]
    body = np.fft.ifft(grid, axis=1) * np.sqrt(n_idft)
    return add_cyclic_prefix(body, cp_len).ravel()


def scfdma_modulate(blocks: np.ndarray, n_idft: int, cp_len: int = 0,
                    half_shift: bool = False) -> np.ndarray:
    """DFT-spread each (symbols, M) row, map it onto M contiguous subcarriers, IDFT.

    With ``half_shift`` every subcarrier sits half a spacing off the grid,
    as on an LTE uplink, so no subcarrier lands on DC.
    """
    blocks = np.atleast_2d(blocks)
    m = blocks.shape[1]
    if m > n_idft:
        raise InvalidParams(f"spread size {m} exceeds IDFT size {n_idft}")
    spread = np.fft.fft(blocks, axis=1) / np.sqrt(m)
    bins = np.fft.fftfreq(m, 1.0 / m).astype(np.int64) % n_idft
    grid = np.zeros((blocks.shape[0], n_idft), dtype=np.complex128)
    grid[:, bins] = spread
    body = np.fft.ifft(grid, axis=1) * np.sqrt(n_idft)
    sym = add_cyclic_prefix(body, cp_len)
    if half_shift:
        t = np.arange(-cp_len, n_idft)
        sym = sym * np.exp(1j * np.pi * t / n_idft)
    return sym.ravel()


def ofdm_bins(n_used: int, n_idft: int) -> np.ndarray:
    """Bin indices of ``n_used`` subcarriers centred on DC, DC itself left empty."""
    neg = np.arange(-(n_used // 2), 0)
    pos = np.arange(1, n_used - n_used // 2 + 1)
    return np.concatenate([neg, pos]) % n_idft


def synth_multicarrier(params: WaveParams, kind: WaveformClass, scs_hz: float,
                       scheme: ModScheme) -> IqRecord:
    """OFDM (DC-nulled) or localized SC-FDMA (half-subcarrier shifted) stream.

    The record is a window at a random offset into a CP-OFDM symbol stream.
    """
    if kind not in (WaveformClass.OFDM, WaveformClass.SCFDMA):
        raise InvalidParams(f"multicarrier kind must be OFDM or SCFDMA, got {kind!r}")
    if scs_hz <= 0:
        raise InvalidParams("subcarrier spacing must be positive")
    n_idft = int(round(params.sample_rate_hz / scs_hz))
    n_used = int(math.floor(params.bandwidth_hz / scs_hz + 1e-9))
    if n_used < 12:
        raise InvalidParams(f"only {n_used} occupied subcarriers; need at least 12")
    if n_used >= n_idft:
        raise InvalidParams(f"{n_used} occupied subcarriers do not fit an IDFT of {n_idft}")
    cp_len = int(round(n_idft * float(params.get("cp_fraction", 1 / 8))))
    sym_len = n_idft + cp_len

    rng = params.rng()
    offset = int(params.get("time_offset", rng.integers(0, sym_len)))
    n_sym = -(-(params.record_len + offset) // sym_len)
    if kind == WaveformClass.OFDM:
        grid = np.zeros((n_sym, n_idft), dtype=np.complex128)
        grid[:, ofdm_bins(n_used, n_idft)] = scheme.draw(rng, (n_sym, n_used))
        stream = ofdm_modulate(grid, cp_len)
    else:
        blocks = scheme.draw(rng, (n_sym, n_used))
        stream = scfdma_modulate(
            blocks, n_idft, cp_len, half_shift=bool(params.get("half_shift", True))
        )
    x = stream[offset:offset + params.record_len]
    return _finish(
        x, params, kind,
        scheme=scheme.name, scs_hz=scs_hz, n_idft=n_idft, n_used=n_used, cp_len=cp_len,
    )


# ----------------------------------------------------------------------------
# analog


def message_tones(params: WaveParams, rng: np.random.Generator, band_hz: float | None = None):
    """(freq_hz, amplitude, phase) triples of the three-tone message.

    Tones fall in (0.05, 0.45) x ``band_hz`` (default: the record bandwidth).
    """
    tones = params.get("tones")
    if tones is not None:
        return [tuple(float(v) for v in tone) + (0.0,) * (3 - len(tone)) for tone in tones]
    band = params.bandwidth_hz if band_hz is None else band_hz
    freqs = rng.uniform(0.05 * band, 0.45 * band, size=3)
    amps = rng.uniform(0.5, 1.0, size=3)
    phases = rng.uniform(-np.pi, np.pi, size=3)
    return list(zip(freqs, amps, phases))


def synth_analog(params: WaveParams, kind: WaveformClass, sideband: str = "DSB",
                 mod_index: float = 0.5, freq_dev_hz: float | None = None) -> IqRecord:
    """AM (with carrier, DSB or SSB by the phasing method) and wideband FM.

    AM: ``1 + mod_index * m(t)`` with a unit-RMS message of tones up to
    0.45 x bandwidth; the SSB message is the exact analytic counterpart, so the
    rejected sideband is absent by construction. ``sideband`` is ``"DSB"``,
    ``"SSB"``/``"USB"`` or ``"LSB"``.

    FM: the message is normalized to unit peak, so ``freq_dev_hz`` (default
    0.3 x bandwidth) is the peak deviation; its tones sit below
    ``fm_message_fraction`` (default 1/4) of the bandwidth so the Carson
    bandwidth stays near ``bandwidth_hz``.
    """
    if kind not in (WaveformClass.AM, WaveformClass.FM):
        raise InvalidParams(f"analog kind must be AM or FM, got {kind!r}")
    if not 0 <= mod_index <= 1:
        raise InvalidParams(f"mod_index must lie in [0, 1], got {mod_index}")
    rng = params.rng()
    band = params.bandwidth_hz
    if kind == WaveformClass.FM:
        band *= float(params.get("fm_message_fraction", 0.25))
    tones = message_tones(params, rng, band)
    t = np.arange(params.record_len) / params.sample_rate_hz

    real_msg = np.zeros(params.record_len)
    analytic = np.zeros(params.record_len, dtype=np.complex128)
    for f, a, ph in tones:
        real_msg += a * np.cos(2 * np.pi * f * t + ph)
        analytic += a * np.exp(1j * (2 * np.pi * f * t + ph))

    if kind == WaveformClass.AM:
        rms = np.sqrt(np.mean(real_msg ** 2))
        scale = 1.0 / rms if rms > 0 else 0.0
        sideband = sideband.upper()
        if sideband == "DSB":
            x = 1.0 + mod_index * scale * real_msg
        elif sideband in ("SSB", "USB"):
            x = 1.0 + mod_index * scale * analytic
        elif sideband == "LSB":
            x = 1.0 + mod_index * scale * np.conj(analytic)
        else:
            raise InvalidParams(f"unknown sideband mode {sideband!r}")
        meta = {"sideband": sideband, "mod_index": mod_index}
    else:
        peak = np.max(np.abs(real_msg))
        scale = 1.0 / peak if peak > 0 else 0.0
        dev = 0.3 * params.bandwidth_hz if freq_dev_hz is None else float(freq_dev_hz)
        # closed-form integral of the message keeps the modulus exactly constant
        phase = np.zeros(params.record_len)
        for f, a, ph in tones:
            phase += a * np.sin(2 * np.pi * f * t + ph) / f
        x = np.exp(1j * dev * scale * phase)
        meta = {"freq_dev_hz": dev}
    return _finish(x, params, kind, tones=[list(map(float, tn)) for tn in tones], **meta)


# ----------------------------------------------------------------------------
# pulsed radar


def _pulse_train(pulse: np.ndarray, pri: int, params: WaveParams,
                 rng: np.random.Generator) -> tuple[np.ndarray, int]:
    n = params.record_len
    offset = int(params.get("time_offset", rng.integers(0, pri)))
    n_periods = -(-(n + offset) // pri)
    period = np.zeros(pri, dtype=np.complex128)
    period[:len(pulse)] = pulse
    stream = np.tile(period, n_periods)
    return stream[offset:offset + n], offset


def synth_lfm(params: WaveParams, sweep: str = "up", duty: float = 0.5) -> IqRecord:
    """Pulsed chirp sweeping ``bandwidth_hz`` across each active pulse."""
    if not 0 < duty <= 1:
        raise InvalidParams(f"duty must lie in (0, 1], got {duty}")
    if sweep not in ("up", "down"):
        raise InvalidParams(f"sweep must be 'up' or 'down', got {sweep!r}")
    n_pulses = int(params.get("n_pulses", 2))
    if n_pulses < 1:
        raise InvalidParams("n_pulses must be >= 1")
    pri = -(-params.record_len // n_pulses)
    n_active = max(2, int(round(duty * pri)))
    fs = params.sample_rate_hz
    t = (np.arange(n_active) - (n_active - 1) / 2) / fs
    dur = n_active / fs
    phase = np.pi * params.bandwidth_hz / dur * t ** 2
    if sweep == "down":
        phase = -phase
    rng = params.rng()
    x, offset = _pulse_train(np.exp(1j * phase), pri, params, rng)
    return _finish(
        x, params, WaveformClass.LFM,
        sweep=sweep, duty=duty, n_pulses=n_pulses, pulse_len=n_active, time_offset=offset,
    )


BARKER = {
    2: [1, -1],
    3: [1, 1, -1],
    4: [1, 1, -1, 1],
    5: [1, 1, 1, -1, 1],
    7: [1, 1, 1, -1, -1, 1, -1],
    11: [1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1],
    13: [1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1],
}


def code_sequence(kind: str, param) -> np.ndarray:
    """Barker, Frank or Zadoff-Chu chip sequence.

    Parameters
    ----------
    kind : {"barker", "frank", "zadoffchu"}
    param : int or (int, int)
        Barker length, Frank order ``N`` (length ``N**2``), or ``(root, length)``
        for Zadoff-Chu with an odd length coprime to the root.
    """
    kind = kind.lower().replace("-", "").replace("_", "")
    if kind == "barker":
        if param not in BARKER:
            raise InvalidParams(f"no Barker code of length {param}")
        return np.asarray(BARKER[param], dtype=np.complex128)
    if kind == "frank":
        n = int(param)
        if n < 2:
            raise InvalidParams("Frank order must be >= 2")
        i, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return np.exp(2j * np.pi * i * k / n).ravel()
    if kind == "zadoffchu":
        u, nzc = (int(v) for v in param)
        if nzc < 3 or nzc % 2 == 0:
            raise InvalidParams(f"Zadoff-Chu length must be odd and >= 3, got {nzc}")
        if math.gcd(u, nzc) != 1 or u % nzc == 0:
            raise InvalidParams(f"root {u} is not coprime with length {nzc}")
        n = np.arange(nzc)
        return np.exp(-1j * np.pi * u * n * (n + 1) / nzc)
    raise InvalidParams(f"unknown code family {kind!r}")


def synth_phase_coded(params: WaveParams, kind: str, code_param,
                      samples_per_chip: int | None = None, duty: float = 0.5) -> IqRecord:
    """Pulsed phase-coded waveform with rectangular chips.

    By default the chip rate is ``bandwidth_hz / 2`` so that the sinc mainlobe
    spans the nominal bandwidth.
    """
    code = code_sequence(kind, code_param)
    if samples_per_chip is None:
        samples_per_chip = max(1, int(math.floor(2 * params.sample_rate_hz / params.bandwidth_hz + 0.5)))
    spc = samples_per_chip
    if spc < 1 or int(spc) != spc:
        raise InvalidParams(f"chip must span a whole number (>= 1) of samples, got {spc}")
    if not 0 < duty <= 1:
        raise InvalidParams(f"duty must lie in (0, 1], got {duty}")
    pulse = np.repeat(code, int(spc))
    if len(pulse) > params.record_len:
        raise InvalidParams(f"pulse of {len(pulse)} samples exceeds the record length")
    pri = max(len(pulse), int(math.ceil(len(pulse) / duty)))
    rng = params.rng()
    x, offset = _pulse_train(pulse, pri, params, rng)
    return _finish(
        x, params, WaveformClass.PHASE_CODED,
        code=kind.lower(), code_param=code_param if np.isscalar(code_param) else list(code_param),
        samples_per_chip=int(spc), pulse_len=len(pulse), pri=pri, time_offset=offset,
    )


# ----------------------------------------------------------------------------
# unknowns


def gaussian_rect(t, symbol_period: float, bt: float) -> np.ndarray:
    """Unit rectangle of width ``symbol_period`` smoothed by a Gaussian of bandwidth-time ``bt``."""
    sigma = symbol_period * np.sqrt(np.log(2)) / (2 * np.pi * bt)
    s = np.sqrt(2) * sigma
    return 0.5 * (erf((t + symbol_period / 2) / s) - erf((t - symbol_period / 2) / s))


def synth_unknown(params: WaveParams, kind: WaveformClass) -> IqRecord:
    """Test-only signals never seen in training.

    ``UNKNOWN_NOISE`` is circular white Gaussian noise. ``UNKNOWN_FH`` is a
    frequency-hopping GFSK surrogate for a BLE transmitter: modulation index
    0.5, BT 0.5, symbol rate equal to the hop bandwidth, hop channel redrawn on
    each of ``n_hops`` equal dwell intervals.
    """
    rng = params.rng()
    n = params.record_len
    fs = params.sample_rate_hz
    if kind == WaveformClass.UNKNOWN_NOISE:
        x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
        return _finish(x, params, kind)
    if kind != WaveformClass.UNKNOWN_FH:
        raise InvalidParams(f"{kind!r} is not an unknown class")

    hop_bw = float(params.get("hop_bandwidth_hz", 2e6 * fs / 125e6))
    n_hops = int(params.get("n_hops", rng.integers(4, 9)))
    if hop_bw <= 0 or hop_bw > fs / 4:
        raise InvalidParams(f"hop bandwidth {hop_bw} outside (0, fs/4]")
    if n_hops < 1:
        raise InvalidParams("n_hops must be >= 1")
    symbol_period = fs / hop_bw
    n_bits = int(np.ceil(n / symbol_period)) + 8
    bits = rng.integers(0, 2, size=n_bits) * 2.0 - 1.0
    t = np.arange(n) / symbol_period + 4
    k0 = np.floor(t).astype(np.int64)
    shaped = np.zeros(n)
    for j in range(-3, 4):
        k = k0 + j
        shaped += bits[k] * gaussian_rect(t - k, 1.0, 0.5)
    deviation = 0.5 * hop_bw / 2

    n_chan = int((0.45 * fs - hop_bw / 2) // hop_bw)
    channels = []
    for _ in range(n_hops):
        c = int(rng.integers(-n_chan, n_chan + 1))
        while channels and c == channels[-1] and n_chan > 0:
            c = int(rng.integers(-n_chan, n_chan + 1))
        channels.append(c)
    dwell = -(-n // n_hops)
    centre = np.repeat(np.asarray(channels, dtype=np.float64) * hop_bw, dwell)[:n]
    inst_freq = centre + deviation * shaped
    phase = 2 * np.pi * np.cumsum(inst_freq) / fs
    return _finish(
        np.exp(1j * phase), params, kind,
        hop_bandwidth_hz=hop_bw, n_hops=n_hops, channels=channels,
    )
