"""Feature-domain data augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def speed_perturb(features: np.ndarray, factor: float) -> np.ndarray:
    """Resample the time axis to round(T / factor) frames by linear interpolation."""
    if factor <= 0:
        raise ValueError(f"speed factor must be positive, got {factor}")
    features = np.asarray(features, dtype=np.float64)
    t = features.shape[0]
    if factor == 1.0:
        return features.copy()
    new_t = max(1, int(round(t / factor)))
    if new_t == 1 or t == 1:
        return np.repeat(features[:1], new_t, axis=0)
    src = np.arange(new_t) * ((t - 1) / (new_t - 1))
    lo = np.minimum(np.floor(src).astype(np.int64), t - 1)
    hi = np.minimum(lo + 1, t - 1)
    w = (src - lo)[:, None]
    return features[lo] * (1.0 - w) + features[hi] * w


@dataclass(frozen=True)
class SpecAugmentPolicy:
    freq_masks: int = 2
    max_freq_width: int | None = None   # default F // 8
    time_masks: int = 2
    max_time_width: int | None = None   # default max(1, T // 20)
    min_freq_width: int = 0
    min_time_width: int = 0


def spec_augment(features: np.ndarray, seed, policy: SpecAugmentPolicy = SpecAugmentPolicy()) -> np.ndarray:
    """Mask frequency bands and time spans with the utterance mean.

    ``seed`` is an int or a numpy Generator. Widths larger than the axis are
    clipped to it.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.array(features, dtype=np.float64)
    t, f = x.shape
    fill = x.mean()
    fw = f // 8 if policy.max_freq_width is None else policy.max_freq_width
    tw = max(1, t // 20) if policy.max_time_width is None else policy.max_time_width
    fw, tw = min(fw, f), min(tw, t)
    for _ in range(policy.freq_masks):
        w = int(rng.integers(min(policy.min_freq_width, fw), fw + 1))
        start = int(rng.integers(0, f - w + 1))
        x[:, start:start + w] = fill
    for _ in range(policy.time_masks):
        w = int(rng.integers(min(policy.min_time_width, tw), tw + 1))
        start = int(rng.integers(0, t - w + 1))
        x[start:start + w, :] = fill
    return x
