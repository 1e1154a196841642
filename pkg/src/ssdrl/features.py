"""RSSI feature construction: raw readings, pairwise differences, range buckets.

Default layout is raw (13) followed by the bucket one-hots (13 beacons x 12
ranges), 169 values in total.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np

RSSI_MIN = -100.0
RSSI_MAX = 0.0
SENTINEL = -200.0


@dataclass(frozen=True)
class FeatureConfig:
    use_raw: bool = True
    use_s1: bool = False
    use_s2: bool = True
    range_count: int = 12
    n_beacons: int = 13
    ordered_pairs: bool = False

    def __post_init__(self):
        if not (self.use_raw or self.use_s1 or self.use_s2):
            raise ValueError("at least one of use_raw, use_s1, use_s2 must be on")
        if self.range_count < 1:
            raise ValueError("range_count must be >= 1")
        if self.n_beacons < 1:
            raise ValueError("n_beacons must be >= 1")

    @classmethod
    def from_interval(cls, interval: float, **kwargs) -> "FeatureConfig":
        """Bucket the [-100, 0] dBm span into ranges ``interval`` dB wide."""
        count = int(round((RSSI_MAX - RSSI_MIN) / interval))
        return cls(range_count=count, **kwargs)

    @property
    def range_width(self) -> float:
        return (RSSI_MAX - RSSI_MIN) / self.range_count

    def pairs(self):
        idx = range(self.n_beacons)
        return list(permutations(idx, 2) if self.ordered_pairs else combinations(idx, 2))


@dataclass
class FeatureVector:
    values: np.ndarray
    layout: list = field(default_factory=list)  # (block name, start, stop)

    def __len__(self):
        return len(self.values)

    def block(self, name):
        for block_name, start, stop in self.layout:
            if block_name == name:
                return self.values[start:stop]
        raise KeyError(name)


def feature_dim(config: FeatureConfig) -> int:
    n = 0
    if config.use_raw:
        n += config.n_beacons
    if config.use_s1:
        n += len(config.pairs())
    if config.use_s2:
        n += config.n_beacons * config.range_count
    return n


def layout(config: FeatureConfig) -> list:
    blocks = []
    pos = 0
    if config.use_raw:
        blocks.append(("raw", pos, pos + config.n_beacons))
        pos += config.n_beacons
    if config.use_s1:
        n = len(config.pairs())
        blocks.append(("s1", pos, pos + n))
        pos += n
    if config.use_s2:
        for k in range(config.n_beacons):
            blocks.append((f"s2-beacon-{k}", pos, pos + config.range_count))
            pos += config.range_count
    return blocks


def _validate(config, rssi):
    if rssi.shape[-1] != config.n_beacons:
        raise ValueError(f"expected {config.n_beacons} beacon readings, got {rssi.shape[-1]}")
    ok = ((rssi >= RSSI_MIN) & (rssi <= RSSI_MAX)) | (rssi == SENTINEL)
    if not np.all(ok):
        raise ValueError("RSSI readings must lie in [-100, 0] or equal the -200 sentinel")


def featurize_array(config: FeatureConfig, rssi) -> np.ndarray:
    """Vectorised featurisation of ``(..., n_beacons)`` readings."""
    rssi = np.asarray(rssi, dtype=np.float64)
    _validate(config, rssi)
    r = np.clip(rssi, RSSI_MIN, RSSI_MAX)
    parts = []
    if config.use_raw:
        parts.append((r - RSSI_MIN) / (RSSI_MAX - RSSI_MIN))
    if config.use_s1:
        i, j = np.array(config.pairs()).T
        parts.append((r[..., i] - r[..., j]) / (RSSI_MAX - RSSI_MIN))
    if config.use_s2:
        bucket = np.floor((r - RSSI_MIN) / config.range_width).astype(int)
        bucket = np.minimum(bucket, config.range_count - 1)
        onehot = np.zeros(r.shape + (config.range_count,))
        np.put_along_axis(onehot, bucket[..., None], 1.0, axis=-1)
        parts.append(onehot.reshape(r.shape[:-1] + (-1,)))
    return np.concatenate(parts, axis=-1)


def featurize(config: FeatureConfig, rssi) -> FeatureVector:
    rssi = np.asarray(rssi, dtype=np.float64)
    if rssi.ndim != 1:
        raise ValueError("featurize takes a single scan; use featurize_array for batches")
    return FeatureVector(featurize_array(config, rssi), layout(config))
