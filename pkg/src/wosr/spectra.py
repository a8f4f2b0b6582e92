"""DFT-magnitude features: the classifier's input representation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, InvalidParams
from .wavegen import IqRecord


@dataclass
class SpectrumFeature:
    values: np.ndarray
    n_fft: int
    source_meta: dict = field(default_factory=dict)


def _check_nfft(n_fft: int):
    if n_fft < 1 or n_fft & (n_fft - 1):
        raise InvalidParams(f"n_fft must be a power of two, got {n_fft}")


def dft_magnitude(samples, n_fft: int) -> np.ndarray:
    """|X[k]| for k = 0..n_fft-1, natural bin order, no window.

    Shorter inputs are zero-padded and longer ones truncated to the first
    ``n_fft`` samples. Accepts an ``IqRecord``, a 1-D array or a 2-D batch
    (one record per row).
    """
    _check_nfft(n_fft)
    x = samples.samples if isinstance(samples, IqRecord) else np.asarray(samples)
    if x.shape[-1] == 0:
        raise InvalidInput("empty record")
    return np.abs(np.fft.fft(x, n=n_fft, axis=-1))


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise InvalidInput("cannot normalize a zero vector")
    return v / norm


def featurize(rec: IqRecord, n_fft: int) -> SpectrumFeature:
    values = l2_normalize(dft_magnitude(rec, n_fft))
    return SpectrumFeature(values, n_fft, dict(rec.meta, label=rec.label.name))


def featurize_batch(samples: np.ndarray, n_fft: int, dtype=np.float32) -> np.ndarray:
    """Feature matrix for a (records, samples) array."""
    return l2_normalize(dft_magnitude(samples, n_fft)).astype(dtype)
