"""Multi-frame reconstruction, the single-frame bicubic baseline and image metrics.

The output is ``PS(I0_up + sum_j w_j Phi_j)``: ``I0_up`` is the bilinearly
upsampled packed reference mapped to 12 channels (``R, (G1+G2)/2, B`` copied
into each of the four pixel-shuffle phases), ``Phi_j`` are per-frame
residual features and ``w_j = softmax(-lam * residual_j)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import InvalidArgument
from .burst import BAYER_PHASES, pack4, packed_offsets
from .grid import Image, pixel_shuffle, pixel_unshuffle
from .transforms import invert

__all__ = [
    "FEATURE_MODES",
    "frame_weights",
    "upsample_bilinear",
    "reference_upsample",
    "shift_and_add",
    "reconstruct",
    "bicubic_baseline",
    "keys_weights",
    "psnr",
    "ssim",
    "l1_fidelity",
]

FEATURE_MODES = ("zero", "equivariant", "shift-and-add")

# packed channel -> colour
_COLOUR = (0, 1, 1, 2)


def frame_weights(residuals, lam=10.0):
    """Convex weights ``w_j ~ exp(-lam * residual_j)``."""
    r = np.asarray(residuals, dtype=np.float64)
    if np.any(r < 0):
        raise InvalidArgument("residuals must be nonnegative")
    z = -lam * r
    e = np.exp(z - z.max())
    return e / e.sum()


def _source_index(n_out, n_in, factor):
    """Input index of each output sample when a centred grid is refined by ``factor``."""
    return (np.arange(n_out) - (n_out - 1) / 2.0) / factor + (n_in - 1) / 2.0


def upsample_bilinear(data, factor):
    """Bilinear resize of ``(H, W, C)`` by an integer factor on centred grids, edges clamped."""
    H, W = data.shape[:2]
    out = data
    for axis, n in ((0, H), (1, W)):
        u = np.clip(_source_index(n * factor, n, factor), 0, n - 1)
        i0 = np.floor(u).astype(np.int64)
        i1 = np.minimum(i0 + 1, n - 1)
        fr = u - i0
        shape = [1] * out.ndim
        shape[axis] = -1
        fr = fr.reshape(shape)
        out = np.take(out, i0, axis=axis) * (1 - fr) + np.take(out, i1, axis=axis) * fr
    return out


def reference_upsample(packed_ref, s):
    """12-channel ``I0_up`` of size ``(s Hp, s Wp)``, ready for a 2x pixel shuffle."""
    up = upsample_bilinear(packed_ref.data, s)
    rgb = np.stack([up[..., 0], 0.5 * (up[..., 1] + up[..., 2]), up[..., 3]], axis=-1)
    return np.repeat(rgb, 4, axis=-1)  # channel c*4 + phase


def _check_burst(burst, s):
    if not burst.mosaic:
        raise InvalidArgument("reconstruction needs a mosaic burst")
    if s is not None and s != burst.s:
        raise InvalidArgument(f"scale {s} does not match the burst scale {burst.s}")


def shift_and_add(burst, transforms, weights):
    """Weighted bilinear splat of every raw sample onto the high-resolution grid.

    Returns ``(N, D)`` per frame stacked: arrays of shape ``(B, H, W, 3)``.
    """
    packed = burst.packed()
    Hp, Wp = packed[0].H, packed[0].W
    hp = packed[0].h
    h = hp / (2 * burst.s)
    H, W = Hp * 2 * burst.s, Wp * 2 * burst.s
    offs = packed_offsets(hp)
    gi = (np.arange(Hp) - (Hp - 1) / 2.0) * hp
    gj = (np.arange(Wp) - (Wp - 1) / 2.0) * hp
    base = np.stack(np.meshgrid(gi, gj, indexing="ij"), axis=-1)
    nums = np.zeros((len(packed), H, W, 3))
    dens = np.zeros((len(packed), H, W, 3))
    for j, (fr, tf) in enumerate(zip(packed, transforms)):
        inv = invert(tf)
        for c in range(4):
            z = inv.apply(base + offs[c])
            u = z[..., 0] / h + (H - 1) / 2.0
            v = z[..., 1] / h + (W - 1) / 2.0
            u0 = np.floor(u).astype(np.int64)
            v0 = np.floor(v).astype(np.int64)
            fu = u - u0
            fv = v - v0
            val = fr.data[:, :, c]
            col = _COLOUR[c]
            for di, wu in ((0, 1 - fu), (1, fu)):
                for dj, wv in ((0, 1 - fv), (1, fv)):
                    ii = u0 + di
                    jj = v0 + dj
                    ok = (ii >= 0) & (ii < H) & (jj >= 0) & (jj < W)
                    wgt = (wu * wv)[ok]
                    np.add.at(nums[j, :, :, col], (ii[ok], jj[ok]), wgt * val[ok])
                    np.add.at(dens[j, :, :, col], (ii[ok], jj[ok]), wgt)
    return nums, dens


def _project_features(fused, size, seed, scale):
    rng = np.random.default_rng(seed)
    width = fused[0].t * fused[0].C
    P = rng.standard_normal((width, 12)) * scale / np.sqrt(width)
    # untrained features have arbitrary magnitude; unit RMS keeps ``scale`` meaningful
    rms = np.sqrt(np.mean([np.mean(z.data * z.data) for z in fused]))
    norm = 1.0 / rms if rms > 0 else 0.0
    out = []
    for z in fused:
        up = upsample_bilinear(z.flatten_channels() * norm, size // z.H)
        out.append(np.einsum("hwc,cd->hwd", up, P))
    return out


def reconstruct(
    burst, fused=None, transforms=None, residuals=None, mode="zero", s=None,
    lam=10.0, seed=0, feature_scale=0.01,
):
    """Super-resolved RGB image of size ``(2 s Hp, 2 s Wp)``.

    ``mode="zero"`` gives the interpolation baseline ``PS(I0_up)``;
    ``"equivariant"`` adds seeded 1x1 projections of the upsampled fused
    feature maps; ``"shift-and-add"`` chooses ``Phi_j`` so that the output is
    the weighted shift-and-add estimate wherever samples landed.
    """
    _check_burst(burst, s)
    if mode not in FEATURE_MODES:
        raise InvalidArgument(f"unknown feature mode {mode!r}")
    s = burst.s
    packed = burst.packed()
    Hp = packed[0].H
    size = Hp * s  # grid before the final pixel shuffle
    base = reference_upsample(packed[0], s)
    h_half = packed[0].h / s
    if mode == "zero":
        return pixel_shuffle(Image(base, h_half), 2)
    B = burst.B
    transforms = burst.transforms if transforms is None else tuple(transforms)
    residuals = np.zeros(B) if residuals is None else np.asarray(residuals, dtype=np.float64)
    if len(transforms) != B or len(residuals) != B:
        raise InvalidArgument("need one transform and residual per frame")
    w = frame_weights(residuals, lam)
    total = base.copy()
    if mode == "equivariant":
        if fused is None or len(fused) != B:
            raise InvalidArgument("equivariant mode needs one fused feature map per frame")
        for wj, phi in zip(w, _project_features(fused, size, seed, feature_scale)):
            total += wj * phi
        return pixel_shuffle(Image(total, h_half), 2)
    nums, dens = shift_and_add(burst, transforms, w)
    D = np.einsum("j,jhwc->hwc", w, dens)
    hr_base = pixel_shuffle(Image(base, h_half), 2).data
    safe = np.where(D > 1e-8, D, 1.0)
    for j in range(B):
        phi = np.where(D > 1e-8, (nums[j] - dens[j] * hr_base) / safe, 0.0)
        total += w[j] * pixel_unshuffle(Image(phi, h_half / 2), 2).data
    return pixel_shuffle(Image(total, h_half), 2)


def keys_weights(frac, a=-0.5):
    """Cubic convolution weights of the four taps at offsets ``-1, 0, 1, 2``."""
    x = np.stack([1 + frac, frac, 1 - frac, 2 - frac], axis=-1)
    ax = np.abs(x)
    near = (a + 2) * ax ** 3 - (a + 3) * ax ** 2 + 1
    far = a * ax ** 3 - 5 * a * ax ** 2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def _cubic_axis(data, positions, axis):
    n = data.shape[axis]
    i0 = np.floor(positions).astype(np.int64)
    wts = keys_weights(positions - i0)
    out = 0.0
    for k, off in enumerate((-1, 0, 1, 2)):
        idx = np.clip(i0 + off, 0, n - 1)
        shape = [1] * data.ndim
        shape[axis] = -1
        out = out + np.take(data, idx, axis=axis) * wts[:, k].reshape(shape)
    return out


def bicubic_baseline(burst):
    """Single-frame upscaling of the reference: each Bayer phase is cubic-interpolated
    from its true sample positions to the output grid; the two greens are averaged."""
    _check_burst(burst, None)
    ref = pack4(burst.frames[0])
    Hp, Wp = ref.H, ref.W
    hp = ref.h
    h = hp / (2 * burst.s)
    H, W = Hp * 2 * burst.s, Wp * 2 * burst.s
    offs = packed_offsets(hp)
    ys = (np.arange(H) - (H - 1) / 2.0) * h
    xs = (np.arange(W) - (W - 1) / 2.0) * h
    out = np.zeros((H, W, 3))
    for c in range(4):
        u = (ys - offs[c, 0]) / hp + (Hp - 1) / 2.0
        v = (xs - offs[c, 1]) / hp + (Wp - 1) / 2.0
        plane = _cubic_axis(_cubic_axis(ref.data[:, :, c], u, 0), v, 1)
        out[:, :, _COLOUR[c]] += plane * (0.5 if _COLOUR[c] == 1 else 1.0)
    return Image(out, h)


def _pair(a, b):
    A = a.data if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    Bv = b.data if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if A.shape != Bv.shape:
        raise InvalidArgument(f"shape mismatch {A.shape} vs {Bv.shape}")
    return A, Bv


def _crop(x, crop):
    return x[crop : x.shape[0] - crop, crop : x.shape[1] - crop] if crop else x


def psnr(a, b, peak=1.0, crop=0):
    """Peak signal-to-noise ratio in dB, capped at 99."""
    if not peak > 0:
        raise InvalidArgument("peak must be positive")
    A, Bv = _pair(a, b)
    d = _crop(A, crop) - _crop(Bv, crop)
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return 99.0
    return min(99.0, float(10.0 * np.log10(peak * peak / mse)))


def ssim(a, b, peak=1.0, crop=0, win=8):
    """Mean SSIM over all ``win x win`` windows (uniform weights) and channels."""
    A, Bv = _pair(a, b)
    A, Bv = _crop(A, crop), _crop(Bv, crop)
    if A.ndim == 2:
        A, Bv = A[..., None], Bv[..., None]
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    vals = []
    for c in range(A.shape[2]):
        x = sliding_window_view(A[:, :, c], (win, win))
        y = sliding_window_view(Bv[:, :, c], (win, win))
        mx = x.mean(axis=(-2, -1))
        my = y.mean(axis=(-2, -1))
        vx = x.var(axis=(-2, -1))
        vy = y.var(axis=(-2, -1))
        cov = ((x - mx[..., None, None]) * (y - my[..., None, None])).mean(axis=(-2, -1))
        s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def l1_fidelity(a, b):
    A, Bv = _pair(a, b)
    return float(np.mean(np.abs(A - Bv)))
