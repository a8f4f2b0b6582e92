"""Dataset manifests: class counts, SNR grids, impairment ranges, parameter grids."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..errors import InvalidParams
from ..wavegen import ModScheme

FULL_RECORD_LEN = 65536
FULL_SAMPLE_RATE_HZ = 100e6
TEST_SNR_BINS = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)

# seed namespaces, kept disjoint so train and test records never share a seed
DOMAIN_TRAIN = 1
DOMAIN_TEST = 2
DOMAIN_EXTRA = 3


@dataclass(frozen=True)
class ImpairmentRanges:
    awgn: bool = True
    fading: tuple = ("rayleigh", "rician")
    rician_k: float = 3.0
    cfo_max_hz: float = 5000.0
    phase: bool = True
    iq_max_db: float = 3.0


@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to regenerate a corpus bit for bit.

    The desk profile compresses the full-scale setup in time: with
    ``record_len`` 4096 at 6.25 MHz the DFT bin width equals the full-scale
    one (65536 points at 100 MHz), so subcarrier spacings and frequency
    offsets in Hz map to the same number of bins.
    """

    profile: str = "desk"
    train_per_class: int = 1000
    test_per_class: int = 400
    test_unknown_per_kind: int = 400
    record_len: int = 4096
    n_fft: int = 4096
    sample_rate_hz: float = 6.25e6
    bandwidth_ratios: tuple = (0.25, 0.5, 0.6, 0.75, 0.8, 0.9)
    train_snr_db: tuple = (-20.0, 20.0)
    test_snr_bins: tuple = TEST_SNR_BINS
    mod_schemes: tuple = tuple(m.name for m in ModScheme)
    subcarrier_spacings_hz: tuple = (15e3, 30e3, 60e3)
    cp_fraction: float = 1 / 8
    rolloffs: tuple = (0.22, 0.35, 0.5)
    am_sidebands: tuple = ("DSB", "USB", "LSB")
    am_mod_index: tuple = (0.3, 0.9)
    fm_deviation_ratio: tuple = (0.2, 0.4)
    lfm_pulses: tuple = (1, 2, 4)
    duty: float = 0.5
    barker_lengths: tuple = (7, 11, 13)
    frank_orders: tuple = (3, 4, 5, 6, 8)
    zc_lengths: tuple = (13, 31, 61)
    impairments: ImpairmentRanges = field(default_factory=ImpairmentRanges)
    master_seed: int = 0

    def __post_init__(self):
        if self.profile not in ("desk", "full", "custom"):
            raise InvalidParams(f"profile: unknown profile {self.profile!r}")
        for name in ("train_per_class", "test_per_class", "test_unknown_per_kind"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name}: must be non-negative")
        if self.record_len < 64:
            raise InvalidParams("record_len: must be >= 64")
        if self.n_fft < 1 or self.n_fft & (self.n_fft - 1):
            raise InvalidParams("n_fft: must be a power of two")
        if not self.bandwidth_ratios or not all(0 < r <= 1 for r in self.bandwidth_ratios):
            raise InvalidParams("bandwidth_ratios: each ratio must lie in (0, 1]")
        lo, hi = self.train_snr_db
        if lo > hi:
            raise InvalidParams("train_snr_db: lower bound exceeds upper bound")
        for name in self.mod_schemes:
            if name not in ModScheme.__members__:
                raise InvalidParams(f"mod_schemes: unknown scheme {name!r}")
        imp = self.impairments
        if not 0 <= imp.cfo_max_hz <= 5000:
            raise InvalidParams("impairments.cfo_max_hz: must lie in [0, 5000]")
        if not 0 <= imp.iq_max_db <= 3:
            raise InvalidParams("impairments.iq_max_db: must lie in [0, 3]")
        for f in imp.fading:
            if f not in ("rayleigh", "rician"):
                raise InvalidParams(f"impairments.fading: unknown model {f!r}")

    @property
    def bandwidths_hz(self) -> tuple:
        return tuple(r * self.sample_rate_hz for r in self.bandwidth_ratios)

    def with_(self, **changes) -> "DatasetManifest":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidParams(f"{sorted(extra)[0]}: unknown manifest field")
        if "impairments" in d and isinstance(d["impairments"], dict):
            imp = d["impairments"]
            d["impairments"] = ImpairmentRanges(
                **{k: tuple(v) if isinstance(v, list) else v for k, v in imp.items()}
            )
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(v)
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidParams(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def desk_manifest(**changes) -> DatasetManifest:
    return DatasetManifest(**changes)


def full_manifest(**changes) -> DatasetManifest:
    """Paper-scale corpus: 10,000 training records per class, 65536-sample records at 100 MHz."""
    base = dict(
        profile="full",
        train_per_class=10_000,
        test_per_class=400,
        test_unknown_per_kind=400,
        record_len=FULL_RECORD_LEN,
        n_fft=FULL_RECORD_LEN,
        sample_rate_hz=FULL_SAMPLE_RATE_HZ,
    )
    base.update(changes)
    return DatasetManifest(**base)


def load_manifest(path) -> DatasetManifest:
    """Read a manifest JSON file; omitted fields take the named profile's defaults.

    The bare names ``desk`` and ``full`` return those profiles unchanged.
    """
    if str(path) in ("desk", "full"):
        return desk_manifest() if str(path) == "desk" else full_manifest()
    with open(path) as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise InvalidParams("manifest: top level must be an object")
    base = full_manifest() if d.get("profile") == "full" else desk_manifest()
    merged = base.to_dict()
    imp = d.pop("impairments", None)
    merged.update(d)
    if imp is not None:
        merged["impairments"] = {**merged["impairments"], **imp}
    return DatasetManifest.from_dict(merged)
