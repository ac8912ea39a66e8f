"""Burst alignment by minimising the image-domain alignment loss.

For a frame ``I_j`` observing the scene through ``f_j`` the residual of a
candidate ``g ~ f_j^{-1}`` is the mean squared difference between ``g[I_j]``
and the reference on a fixed interior crop.  Estimation runs a coarse grid
search (rotation grid, whole-pixel shifts) and then a Nelder-Mead refinement
in ``(theta [deg], b1 [px], b2 [px])``.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import minimize

from ._parallel import ordered_map
from ._validation import InvalidArgument
from .transforms import IDENTITY, AffineTransform, invert, warp_array, warp_feature

__all__ = [
    "SearchConfig",
    "AlignmentResult",
    "warp_channels",
    "crop_margin",
    "frame_residual",
    "align_loss",
    "estimate_transform",
    "align_burst",
    "align_features",
]


@dataclass(frozen=True)
class SearchConfig:
    theta_max: float = math.radians(10.0)
    theta_step: float = math.radians(0.5)
    shift_max: int = 4
    max_evals: int = 200
    tol: float = 1e-4
    xtol: float = 1e-3
    margin: int = -1


@dataclass(frozen=True)
class AlignmentResult:
    transforms: tuple
    residuals: tuple
    iterations: tuple = dc_field(default=())
    converged: tuple = dc_field(default=())

    @property
    def all_converged(self):
        return all(self.converged)


def warp_channels(img, f, offsets=None):
    """Warp an image whose channel ``c`` is sampled at grid points shifted by ``offsets[c]``."""
    if offsets is None:
        return img.with_data(warp_array(img.data, f, img.h))
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != (img.C, 2):
        raise InvalidArgument("need one (row, col) offset per channel")
    corr = offsets @ (f.A - np.eye(2)).T
    out = np.empty_like(img.data)
    for c in range(img.C):
        fc = AffineTransform(f.theta, np.asarray(f.b) + corr[c])
        out[:, :, c] = warp_array(img.data[:, :, c], fc, img.h)
    return img.with_data(out)


def crop_margin(H, W, theta_max, shift_max):
    """Border (pixels) outside which a transform of the given size can pull in padding."""
    reach = shift_max * math.sqrt(2.0) + 0.5 * max(H, W) * math.sqrt(2.0) * abs(math.sin(theta_max))
    m = int(math.ceil(reach)) + 2
    if 2 * m >= min(H, W):
        raise InvalidArgument(f"transform range leaves no interior in a {H}x{W} frame")
    return m


def _crop(a, m):
    return a[m : a.shape[0] - m, m : a.shape[1] - m]


def _transform_margin(shape, h, transforms):
    H, W = shape[:2]
    th = max([abs(t.theta) for t in transforms] + [0.0])
    sh = max([max(abs(v) for v in t.b) / h for t in transforms] + [0.0])
    return crop_margin(H, W, min(th, math.pi / 2), sh)


def frame_residual(ref, frame, g, margin, offsets=None):
    """Mean squared difference between ``g[frame]`` and ``ref`` on the crop."""
    w = warp_channels(frame, g, offsets).data
    d = _crop(w, margin) - _crop(ref.data, margin)
    return float(np.mean(d * d))


def align_loss(ref, frames, transforms, margin=None, offsets=None):
    """Mean over ``j >= 1`` of the per-frame residual of ``f_j^{-1}`` applied to ``I_j``.

    ``frames`` and ``transforms`` include the reference at index 0, which is
    skipped.  The crop is shared by all frames and sized from the largest
    transform unless ``margin`` is given.
    """
    frames = list(frames)
    transforms = list(transforms)
    if len(frames) != len(transforms) or len(frames) < 2:
        raise InvalidArgument("need matching frame and transform lists with at least two entries")
    for fr in frames:
        if fr.shape != ref.shape:
            raise InvalidArgument("frame shape does not match the reference")
    if margin is None:
        margin = _transform_margin(ref.shape, ref.h, transforms[1:])
    res = [frame_residual(ref, fr, invert(tf), margin, offsets) for fr, tf in zip(frames[1:], transforms[1:])]
    return float(np.mean(res))


def _grid_search(ref, frame, cfg, margin, offsets):
    H, W = ref.H, ref.W
    S = int(cfg.shift_max)
    n_steps = int(math.floor(cfg.theta_max / cfg.theta_step + 1e-9))
    thetas = cfg.theta_step * np.arange(-n_steps, n_steps + 1)
    target = _crop(ref.data, margin)
    best = (np.inf, 0.0, 0, 0)
    for th in thetas:
        rot = warp_channels(frame, AffineTransform(float(th), (0.0, 0.0)), offsets).data
        for di in range(-S, S + 1):
            for dj in range(-S, S + 1):
                # shifting by (di, dj) pixels: out[i, j] = rot[i - di, j - dj]
                view = rot[margin - di : H - margin - di, margin - dj : W - margin - dj]
                d = view - target
                val = float(np.mean(d * d))
                if val < best[0]:
                    best = (val, float(th), di, dj)
    return best


def estimate_transform(ref, frame, search=None, offsets=None):
    """Estimate the forward transform ``f`` with ``frame ~ f[ref]``.

    Returns ``(f, residual, evaluations, converged)``; the residual is the
    per-frame loss at ``f^{-1}``.
    """
    cfg = SearchConfig() if search is None else search
    if ref.shape != frame.shape:
        raise InvalidArgument("frame shape does not match the reference")
    h = ref.h
    margin = cfg.margin if cfg.margin >= 0 else crop_margin(ref.H, ref.W, cfg.theta_max, cfg.shift_max)
    if np.array_equal(ref.data, frame.data):
        return IDENTITY, 0.0, 0, True
    val, th, di, dj = _grid_search(ref, frame, cfg, margin, offsets)
    # the grid point is g = shift(di, dj) o rotate(th)
    x0 = np.array([math.degrees(th), float(di), float(dj)])

    def loss(z):
        g = AffineTransform(math.radians(z[0]), (z[1] * h, z[2] * h))
        return frame_residual(ref, frame, g, margin, offsets)

    scale = float(np.mean(_crop(ref.data, margin) ** 2)) or 1.0
    simplex = np.array([x0, x0 + [0.25, 0, 0], x0 + [0, 0.5, 0], x0 + [0, 0, 0.5]])
    res = minimize(
        loss, x0, method="Nelder-Mead",
        options={
            "maxfev": cfg.max_evals, "xatol": cfg.xtol, "fatol": cfg.tol * scale,
            "initial_simplex": simplex,
        },
    )
    z = res.x if res.fun <= val else x0
    g = AffineTransform(math.radians(z[0]), (z[1] * h, z[2] * h))
    resid = min(float(res.fun), val)
    converged = bool(res.success)
    return invert(g), resid, int(res.nfev), converged


def align_burst(frames, search=None, offsets=None, threads=None):
    """Estimate transforms of ``frames[1:]`` relative to ``frames[0]``."""
    frames = list(frames)
    ref = frames[0]
    results = ordered_map(lambda fr: estimate_transform(ref, fr, search, offsets), frames[1:], threads)
    return AlignmentResult(
        transforms=(IDENTITY,) + tuple(r[0] for r in results),
        residuals=(0.0,) + tuple(r[1] for r in results),
        iterations=(0,) + tuple(r[2] for r in results),
        converged=(True,) + tuple(r[3] for r in results),
    )


def align_features(fmaps, transforms):
    """``Z~_j = f_j^{-1}[Z_j]`` for ``j >= 1``; the reference map is passed through."""
    fmaps = list(fmaps)
    transforms = list(transforms)
    if len(fmaps) != len(transforms):
        raise InvalidArgument("need one transform per feature map")
    out = [fmaps[0]]
    for z, tf in zip(fmaps[1:], transforms[1:]):
        out.append(z if tf.is_identity() else warp_feature(z, invert(tf)))
    return out
