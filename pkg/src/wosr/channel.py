"""Channel and receiver impairments.

``impair`` applies, in order: block-flat fading, carrier frequency/phase
offset, IQ gain imbalance, AWGN. Noise power is set against the measured
post-fading signal power so the requested SNR is the received SNR.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInput, InvalidParams
from .wavegen import IqRecord


class Fading(str, enum.Enum):
    RAYLEIGH = "rayleigh"
    RICIAN = "rician"


@dataclass(frozen=True)
class ImpairmentSpec:
    snr_db: float | None = None
    cfo_hz: float = 0.0
    phase_rad: float = 0.0
    iq_imbalance_db: float = 0.0
    fading: Fading | None = None
    k_factor: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if not -5000.0 <= self.cfo_hz <= 5000.0:
            raise InvalidParams(f"cfo_hz {self.cfo_hz} outside [-5000, 5000]")
        if not -np.pi <= self.phase_rad <= np.pi:
            raise InvalidParams(f"phase_rad {self.phase_rad} outside [-pi, pi]")
        if not 0.0 <= self.iq_imbalance_db <= 3.0:
            raise InvalidParams(f"iq_imbalance_db {self.iq_imbalance_db} outside [0, 3]")
        if self.fading is not None:
            object.__setattr__(self, "fading", Fading(self.fading))
        if not self.k_factor > 0:
            raise InvalidParams("k_factor must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fading"] = None if self.fading is None else self.fading.value
        return d


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def fading_coefficient(model, k_factor: float, rng: np.random.Generator) -> complex:
    """One flat-fading tap with unit mean power."""
    model = Fading(model)
    scatter = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
    if model is Fading.RAYLEIGH:
        return complex(scatter)
    los = np.sqrt(k_factor / (k_factor + 1))
    return complex(los + np.sqrt(1 / (k_factor + 1)) * scatter)


def apply_fading(rec: IqRecord, model, k_factor: float = 3.0, seed: int = 0) -> IqRecord:
    h = fading_coefficient(model, k_factor, _rng(seed, 0))
    return rec.replace(rec.samples * h, fading=Fading(model).value, fading_gain=[h.real, h.imag])


def apply_freq_phase_offset(rec: IqRecord, cfo_hz: float, phase_rad: float) -> IqRecord:
    if abs(cfo_hz) > rec.sample_rate_hz / 2:
        raise InvalidParams(f"|cfo| {cfo_hz} exceeds half the sample rate")
    n = np.arange(len(rec.samples))
    rot = np.exp(1j * (2 * np.pi * cfo_hz * n / rec.sample_rate_hz + phase_rad))
    return rec.replace(rec.samples * rot, cfo_hz=cfo_hz, phase_rad=phase_rad)


def apply_iq_imbalance(rec: IqRecord, imbalance_db: float) -> IqRecord:
    """Amplitude-only imbalance on the Q branch, power restored to its input value."""
    if not 0.0 <= imbalance_db <= 3.0:
        raise InvalidParams(f"imbalance_db {imbalance_db} outside [0, 3]")
    x = rec.samples
    if imbalance_db == 0.0:
        return rec.replace(x.copy(), iq_imbalance_db=0.0)
    alpha = 10.0 ** (imbalance_db / 20.0)
    y = x.real + 1j * alpha * x.imag
    p_in = np.mean(np.abs(x) ** 2)
    p_out = np.mean(np.abs(y) ** 2)
    if p_out > 0:
        y = y * np.sqrt(p_in / p_out)
    return rec.replace(y, iq_imbalance_db=imbalance_db)


def apply_awgn(rec: IqRecord, snr_db: float | None, seed: int = 0) -> IqRecord:
    if snr_db is None or np.isposinf(snr_db):
        return rec.replace(rec.samples.copy(), snr_db=None)
    x = rec.samples
    p_sig = np.mean(np.abs(x) ** 2)
    if not p_sig > 0:
        raise InvalidInput("cannot set an SNR against a zero-power record")
    p_noise = p_sig * 10.0 ** (-snr_db / 10.0)
    rng = _rng(seed, 1)
    w = (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x))) * np.sqrt(p_noise / 2)
    return rec.replace(x + w, snr_db=float(snr_db))


def impair(rec: IqRecord, spec: ImpairmentSpec) -> IqRecord:
    out = rec
    if spec.fading is not None:
        out = apply_fading(out, spec.fading, spec.k_factor, spec.seed)
    if spec.cfo_hz != 0.0 or spec.phase_rad != 0.0:
        out = apply_freq_phase_offset(out, spec.cfo_hz, spec.phase_rad)
    if spec.iq_imbalance_db != 0.0:
        out = apply_iq_imbalance(out, spec.iq_imbalance_db)
    if spec.snr_db is not None:
        out = apply_awgn(out, spec.snr_db, spec.seed)
    if out is rec:
        out = rec.replace(rec.samples.copy())
    out.meta["impairments"] = spec.to_dict()
    return out
