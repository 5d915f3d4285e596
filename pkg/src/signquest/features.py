"""Synthetic signage feature oracle and the offline reference pool.

The oracle hands out a stable ground-truth unit feature per landmark name
(or distractor tag) and produces noisy observed features. It stands in for
a real text spotter: recognition quality downstream depends only on the
cosine geometry of these vectors, which is what we control here.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .venue import VenueMap

__all__ = ["FeatureOracle", "FeaturePool", "build_feature_pool"]

DEFAULT_FEATURE_DIM = 128


def _stable_rng(seed: int, *tokens: str) -> np.random.Generator:
    """Generator keyed by seed + string tokens, stable across processes."""
    h = hashlib.sha256(repr((seed,) + tokens).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


@dataclass
class FeatureOracle:
    """Deterministic per-name ground-truth features plus a noise model."""

    dim: int = DEFAULT_FEATURE_DIM
    seed: int = 0
    sigma0: float = 0.1
    sigma_dist: float = 0.5
    sigma_obliq: float = 0.5
    _cache: dict[tuple[str, str], np.ndarray] = field(default_factory=dict, repr=False)

    def _gt(self, namespace: str, name: str) -> np.ndarray:
        key = (namespace, name)
        feat = self._cache.get(key)
        if feat is None:
            rng = _stable_rng(self.seed, namespace, name)
            feat = _unit(rng.normal(size=self.dim))
            feat.setflags(write=False)
            self._cache[key] = feat
        return feat

    def gt_feature(self, name: str) -> np.ndarray:
        return self._gt("landmark", name)

    def distractor_feature(self, tag: str) -> np.ndarray:
        return self._gt("distractor", tag)

    def noise_sigma(self, dist_frac: float, obliq_frac: float) -> float:
        """Per-component noise std as a function of normalized view distance
        and obliquity (both in [0, 1])."""
        return self.sigma0 + self.sigma_dist * dist_frac + self.sigma_obliq * obliq_frac

    def observe(
        self,
        name: str,
        rng: np.random.Generator,
        dist_frac: float = 0.0,
        obliq_frac: float = 0.0,
        distractor: bool = False,
    ) -> np.ndarray:
        """Noisy unit feature for one observation of ``name``."""
        gt = self.distractor_feature(name) if distractor else self.gt_feature(name)
        sigma = self.noise_sigma(dist_frac, obliq_frac)
        if sigma == 0.0:
            return gt.copy()
        return _unit(gt + rng.normal(scale=sigma, size=self.dim))


@dataclass(frozen=True)
class FeaturePool:
    """Offline reference features, one or more entries per landmark."""

    entries: tuple[tuple[int, np.ndarray], ...]

    def landmark_indices(self) -> set[int]:
        return {idx for idx, _ in self.entries}

    def features_for(self, landmark: int) -> list[np.ndarray]:
        return [f for idx, f in self.entries if idx == landmark]


def build_feature_pool(
    vm: VenueMap,
    oracle: FeatureOracle,
    pool_noise: float = 0.0,
    pool_size: int = 1,
) -> FeaturePool:
    """Reference feature(s) per landmark: normalize(gt + noise), seeded off
    the oracle so the pool is reproducible bit-for-bit."""
    if pool_noise < 0:
        raise ValueError("pool_noise must be non-negative")
    if pool_size < 1:
        raise ValueError("pool_size must be at least 1")
    entries: list[tuple[int, np.ndarray]] = []
    for idx, lm in enumerate(vm.landmarks):
        gt = oracle.gt_feature(lm.name)
        rng = _stable_rng(oracle.seed, "pool", lm.name)
        for _ in range(pool_size):
            if pool_noise == 0.0:
                feat = gt.copy()
            else:
                feat = _unit(gt + rng.normal(scale=pool_noise, size=oracle.dim))
            feat.setflags(write=False)
            entries.append((idx, feat))
    return FeaturePool(entries=tuple(entries))
