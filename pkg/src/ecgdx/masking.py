"""Masks for the restoration pretext task: scattered patches over the full
signal, one contiguous run over a heartbeat."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .records import DataError

GLOBAL_PATCH_RANGE = (20, 50)  # samples, inclusive


@dataclass(frozen=True)
class MaskSpec:
    kind: str  # "global_scattered" | "local_continuous"
    mask: np.ndarray  # uint8, 1 = masked
    ratio: float
    seed: int

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.uint8)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())


def _check_ratio(ratio: float) -> None:
    if not 0.0 < ratio <= 0.9:
        raise DataError(f"mask ratio must be in (0, 0.9], got {ratio}")


def make_global_mask(length: int, ratio: float, seed: int) -> MaskSpec:
    """Union of non-overlapping random patches (20-50 samples each) placed
    until coverage reaches the requested ratio. Pure function of its inputs."""
    _check_ratio(ratio)
    if length < GLOBAL_PATCH_RANGE[0]:
        raise DataError(f"signal of length {length} is shorter than one patch")
    rng = np.random.default_rng(seed)
    mask = np.zeros(length, dtype=np.uint8)
    target = ratio * length
    covered = 0
    # free intervals tracked explicitly so placement always terminates
    free: list[tuple[int, int]] = [(0, length)]
    while covered < target and free:
        patch_len = int(rng.integers(GLOBAL_PATCH_RANGE[0], GLOBAL_PATCH_RANGE[1] + 1))
        capacities = np.array([max(0, (e - s) - patch_len + 1) for s, e in free])
        if capacities.sum() == 0:
            max_gap = max(e - s for s, e in free)
            if max_gap == 0:
                break
            patch_len = max_gap
            capacities = np.array([max(0, (e - s) - patch_len + 1) for s, e in free])
        probs = capacities / capacities.sum()
        k = int(rng.choice(len(free), p=probs))
        s, e = free[k]
        start = s + int(rng.integers(0, (e - s) - patch_len + 1))
        mask[start:start + patch_len] = 1
        covered += patch_len
        free.pop(k)
        if start > s:
            free.append((s, start))
        if start + patch_len < e:
            free.append((start + patch_len, e))
    return MaskSpec(kind="global_scattered", mask=mask, ratio=ratio, seed=seed)


def make_local_mask(length: int, ratio: float, seed: int) -> MaskSpec:
    """One contiguous run of floor(ratio * length) ones at a random start."""
    _check_ratio(ratio)
    rng = np.random.default_rng(seed)
    run = int(np.floor(ratio * length))
    run = max(1, min(run, length))
    start = int(rng.integers(0, length - run + 1))
    mask = np.zeros(length, dtype=np.uint8)
    mask[start:start + run] = 1
    return MaskSpec(kind="local_continuous", mask=mask, ratio=ratio, seed=seed)


def apply_mask(signal: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Zero-fill masked positions (zero is the post-normalization mean).
    Unmasked samples pass through bit-identical."""
    signal = np.asarray(signal)
    if signal.shape[-1] != spec.mask.size:
        raise DataError(f"mask length {spec.mask.size} does not match signal {signal.shape}")
    out = signal.copy()
    out[..., spec.mask.astype(bool)] = 0
    return out
