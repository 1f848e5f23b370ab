"""Two-axis rotary position encoding.

Features are grouped into d/2 two-dimensional subspaces. Each subspace rotates
by angle lambda_i * p * theta_i, where theta_i = base**(-2(i-1)/d) and p is the
token's temporal or flatten id depending on the subspace's axis assignment.
The default assignment alternates: subspace 1 temporal, subspace 2 flatten,
and so on. Because rotations are orthogonal and compose additively in the
angle, the pre-softmax attention score between two rotated vectors depends on
positions only through the per-axis differences.

All angle arithmetic is done in float64; callers may cast the resulting
cos/sin tables down to their activation dtype.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Axis(Enum):
    TEMPORAL = "temporal"
    FLATTEN = "flatten"


def alternating_axes(dim: int) -> tuple[Axis, ...]:
    """Default axis assignment: odd subspaces temporal, even subspaces flatten
    (1-based subspace numbering)."""
    return tuple(
        Axis.TEMPORAL if i % 2 == 0 else Axis.FLATTEN for i in range(dim // 2)
    )


@dataclass(frozen=True)
class RotaryConfig:
    """Rotation geometry for one head dimension.

    lam scales each subspace's frequency (all 1.0 means no interpolation);
    subspace_axis picks which position index drives each subspace.
    """

    dim: int
    base: float = 10000.0
    subspace_axis: tuple[Axis, ...] | None = None
    lam: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.dim < 2 or self.dim % 2 != 0:
            raise ValueError(f"dim must be even and >= 2, got {self.dim}")
        if self.base <= 0:
            raise ValueError(f"base must be positive, got {self.base}")
        half = self.dim // 2
        if self.subspace_axis is None:
            object.__setattr__(self, "subspace_axis", alternating_axes(self.dim))
        if len(self.subspace_axis) != half:
            raise ValueError(
                f"subspace_axis must have length {half}, got {len(self.subspace_axis)}"
            )
        if self.lam is None:
            object.__setattr__(self, "lam", (1.0,) * half)
        else:
            object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        if len(self.lam) != half:
            raise ValueError(f"lam must have length {half}, got {len(self.lam)}")
        if any(v <= 0 for v in self.lam):
            raise ValueError("all lam entries must be positive")

    @property
    def half(self) -> int:
        return self.dim // 2

    def with_lam(self, lam) -> "RotaryConfig":
        return RotaryConfig(
            dim=self.dim,
            base=self.base,
            subspace_axis=self.subspace_axis,
            lam=tuple(float(v) for v in lam),
        )


def rotation_angles(config: RotaryConfig) -> np.ndarray:
    """Per-subspace base frequencies theta_i = base**(-2(i-1)/d), i = 1..d/2.

    Strictly decreasing in i whenever base > 1.
    """
    i = np.arange(config.half, dtype=np.float64)
    return config.base ** (-2.0 * i / config.dim)


def subspace_angles(config: RotaryConfig, t: int | float, f: int | float) -> np.ndarray:
    """Rotation angle of every subspace for one token at temporal id t, flatten id f."""
    theta = rotation_angles(config)
    lam = np.asarray(config.lam, dtype=np.float64)
    pos = np.array(
        [t if axis is Axis.TEMPORAL else f for axis in config.subspace_axis],
        dtype=np.float64,
    )
    return lam * pos * theta


def angle_tables(
    config: RotaryConfig, temporal_ids: np.ndarray, flatten_ids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized cos/sin tables for id arrays of any matching shape.

    Returns float64 arrays of shape ids.shape + (d/2,).
    """
    t = np.asarray(temporal_ids, dtype=np.float64)
    f = np.asarray(flatten_ids, dtype=np.float64)
    if t.shape != f.shape:
        raise ValueError("temporal and flatten id arrays must have the same shape")
    theta = rotation_angles(config)
    lam = np.asarray(config.lam, dtype=np.float64)
    temporal_mask = np.array(
        [axis is Axis.TEMPORAL for axis in config.subspace_axis], dtype=bool
    )
    pos = np.where(temporal_mask, t[..., None], f[..., None])
    ang = pos * (lam * theta)
    return np.cos(ang), np.sin(ang)


def apply_itrope(x, t: int | float, f: int | float, config: RotaryConfig) -> np.ndarray:
    """Rotate one length-d vector by its (t, f) position.

    Implemented as d/2 paired 2-D rotations on adjacent components
    (2i, 2i+1); never materializes the dense d x d matrix.
    """
    vec = np.asarray(x, dtype=np.float64)
    if vec.shape != (config.dim,):
        raise ValueError(f"expected vector of shape ({config.dim},), got {vec.shape}")
    ang = subspace_angles(config, t, f)
    cos, sin = np.cos(ang), np.sin(ang)
    even, odd = vec[0::2], vec[1::2]
    out = np.empty_like(vec)
    out[0::2] = even * cos - odd * sin
    out[1::2] = even * sin + odd * cos
    return out


def relative_score(q, k, tq, fq, tk, fk, config: RotaryConfig) -> float:
    """Pre-softmax attention score between a rotated query and key.

    Depends on the four position ids only through (tq - tk, fq - fk).
    """
    return float(
        np.dot(apply_itrope(q, tq, fq, config), apply_itrope(k, tk, fk, config))
    )
