"""Open-set waveform recognition: synthesis, impairments, DFT features, a
feed-forward classifier and per-class isolation-forest detectors.

Setting ``WOSR_THREADS`` caps the BLAS and OpenMP thread pools. It only takes
effect if the package is imported before numpy.
"""

import os as _os

_threads = _os.environ.get("WOSR_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .wavegen import KNOWN_CLASSES, UNKNOWN_CLASSES, IqRecord, ModScheme, WaveformClass, WaveParams
from .channel import ImpairmentSpec, impair
from .spectra import SpectrumFeature, featurize

__version__ = "0.1.0"

__all__ = [
    "KNOWN_CLASSES", "UNKNOWN_CLASSES", "IqRecord", "ModScheme", "WaveformClass", "WaveParams",
    "ImpairmentSpec", "impair", "SpectrumFeature", "featurize", "__version__",
]
