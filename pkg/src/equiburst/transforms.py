"""Rotation-translation transforms acting on images and group feature maps.

``f = (theta, b)`` maps ``x -> A_theta x + b``; it acts on a grid function by
``f[r](x) = r(A_theta^{-1} (x - b))``.  Coordinates follow the centred grid
of :mod:`equiburst.grid` (first coordinate along rows).  Resampling is
bilinear with zero extension outside the grid.  Quarter turns combined with
whole-pixel shifts are exact index permutations and skip interpolation.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import FormatError
from .grid import GroupFeatureMap, Image, rotation_matrix

__all__ = [
    "AffineTransform",
    "IDENTITY",
    "wrap_angle",
    "invert",
    "compose",
    "warp_array",
    "warp_image",
    "warp_feature",
    "group_shift",
]


def wrap_angle(theta):
    """Wrap to ``(-pi, pi]``; angles already in range are returned unchanged."""
    theta = float(theta)
    if -np.pi < theta <= np.pi:
        return theta
    w = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    return float(np.pi if w == -np.pi else w)


@dataclass(frozen=True)
class AffineTransform:
    theta: float = 0.0
    b: tuple = (0.0, 0.0)

    def __post_init__(self):
        b = tuple(float(v) for v in np.asarray(self.b, dtype=np.float64).reshape(-1))
        if len(b) != 2:
            raise ValueError("translation b must have two components")
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "b", b)

    @property
    def A(self):
        return rotation_matrix(self.theta)

    @property
    def matrix(self):
        """The 2x3 matrix ``[A_theta | b]``."""
        return np.hstack([self.A, np.asarray(self.b)[:, None]])

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) @ self.A.T + np.asarray(self.b)

    def is_identity(self):
        return self.theta == 0.0 and self.b == (0.0, 0.0)

    def to_text(self):
        return f"theta={self.theta!r} b={self.b[0]!r},{self.b[1]!r}"

    @classmethod
    def from_fields(cls, fields, lineno=None):
        """Build from parsed ``theta=`` / ``b=`` tokens."""
        try:
            theta = float(fields["theta"])
            b1, b2 = (float(v) for v in fields["b"].split(","))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad transform fields ({exc})", line=lineno) from None
        return cls(theta, (b1, b2))


IDENTITY = AffineTransform()


def invert(f):
    """``f^{-1} = (-theta, -A_{-theta} b)``."""
    b = -(rotation_matrix(-f.theta) @ np.asarray(f.b))
    return AffineTransform(-f.theta, b)


def compose(f2, f1):
    """``f2 o f1``: rotation ``theta1 + theta2`` (wrapped), translation ``A_theta2 b1 + b2``."""
    b = f2.A @ np.asarray(f1.b) + np.asarray(f2.b)
    return AffineTransform(wrap_angle(f1.theta + f2.theta), b)


def _exact_indices(H, W, h, f):
    """Source indices for quarter-turn, whole-pixel transforms, else None."""
    q = f.theta / (np.pi / 2)
    k = int(np.floor(q + 0.5))
    if abs(q - k) > 1e-12:
        return None
    s = np.asarray(f.b) / h
    si = np.floor(s + 0.5)
    if np.max(np.abs(s - si)) > 1e-9:
        return None
    R = np.rint(rotation_matrix(-k * np.pi / 2)).astype(np.int64)
    # doubled centred coordinates avoid half-integers for even sizes
    I = 2 * np.arange(H)[:, None] - (H - 1) - 2 * int(si[0])
    J = 2 * np.arange(W)[None, :] - (W - 1) - 2 * int(si[1])
    I, J = np.broadcast_arrays(I, J)
    U = R[0, 0] * I + R[0, 1] * J + (H - 1)
    V = R[1, 0] * I + R[1, 1] * J + (W - 1)
    if np.any(U % 2) or np.any(V % 2):
        return None
    return U // 2, V // 2


def warp_array(data, f, h):
    """Warp the leading two axes of ``data`` by ``f``; trailing axes ride along."""
    data = np.asarray(data, dtype=np.float64)
    H, W = data.shape[:2]
    if f.is_identity():
        return data.copy()
    exact = _exact_indices(H, W, h, f)
    if exact is not None:
        u, v = exact
        valid = (u >= 0) & (u < H) & (v >= 0) & (v < W)
        out = data[np.clip(u, 0, H - 1), np.clip(v, 0, W - 1)]
        out[~valid] = 0.0
        return out
    rows = (np.arange(H) - (H - 1) / 2.0) * h - f.b[0]
    cols = (np.arange(W) - (W - 1) / 2.0) * h - f.b[1]
    Ainv = rotation_matrix(-f.theta)
    y0 = Ainv[0, 0] * rows[:, None] + Ainv[0, 1] * cols[None, :]
    y1 = Ainv[1, 0] * rows[:, None] + Ainv[1, 1] * cols[None, :]
    u = y0 / h + (H - 1) / 2.0
    v = y1 / h + (W - 1) / 2.0
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    padded = np.pad(data, [(1, 1), (1, 1)] + [(0, 0)] * (data.ndim - 2))
    # padded index = grid index + 1; clamp far-away samples onto the zero border
    i0 = np.clip(u0.astype(np.int64) + 1, 0, H + 1)
    i1 = np.clip(u0.astype(np.int64) + 2, 0, H + 1)
    j0 = np.clip(v0.astype(np.int64) + 1, 0, W + 1)
    j1 = np.clip(v0.astype(np.int64) + 2, 0, W + 1)
    extra = (slice(None), slice(None)) + (None,) * (data.ndim - 2)
    fu = fu[extra]
    fv = fv[extra]
    top = padded[i0, j0] * (1.0 - fv) + padded[i0, j1] * fv
    bot = padded[i1, j0] * (1.0 - fv) + padded[i1, j1] * fv
    return top * (1.0 - fu) + bot * fu


def warp_image(img, f):
    return Image(warp_array(img.data, f, img.h), img.h)


def group_shift(theta, t):
    """Nearest group step ``s`` with ``theta ~ 2 pi s / t`` (ties round up)."""
    return int(np.floor(theta * t / (2 * np.pi) + 0.5))


def warp_feature(fmap, f):
    """Spatial warp by the full ``(theta, b)`` and a cyclic group shift by the nearest step."""
    s = group_shift(f.theta, fmap.t)
    data = warp_array(fmap.data, f, fmap.h)
    return GroupFeatureMap(np.roll(data, s, axis=2), fmap.h)
