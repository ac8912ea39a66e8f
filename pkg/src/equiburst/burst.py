"""Synthetic raw bursts: warp, box downsampling, Gaussian noise and RGGB mosaicking.

Frame ``j`` of a burst is ``mosaic(noise(downsample(f_j[hr], s)))``.  The
transform ``f_j`` acts on the high-resolution scene, so ``frame_j(y)``
observes the scene at ``f_j^{-1}(y)``; ``f_0`` is the identity.
Translations are stored in coordinate units; ``shift_max`` is given in frame
(low-resolution) pixels.
"""

import os
from dataclasses import dataclass

import numpy as np

from ._parallel import ordered_map
from ._validation import FormatError, InvalidArgument, check_positive_int
from .grid import Image
from .io import format_value, parse_keyvalue_line, read_pfm, write_pfm
from .transforms import IDENTITY, AffineTransform, warp_image

__all__ = [
    "BurstSequence",
    "synthesize_burst",
    "downsample",
    "add_noise",
    "mosaic_rggb",
    "pack4",
    "unpack4",
    "packed_offsets",
    "write_burst",
    "read_burst",
    "BAYER_PHASES",
]

# (row, col) phase of each packed channel inside the 2x2 tile: R, G1, G2, B
BAYER_PHASES = ((0, 0), (0, 1), (1, 0), (1, 1))


def downsample(img, s):
    """``s x s`` box average; mesh size grows by ``s``."""
    s = check_positive_int(s, "scale s")
    if img.H % s or img.W % s:
        raise InvalidArgument(f"image size {img.H}x{img.W} not divisible by {s}")
    if s == 1:
        return img
    d = img.data.reshape(img.H // s, s, img.W // s, s, img.C).mean(axis=(1, 3))
    return Image(d, img.h * s)


def add_noise(img, sigma, seed):
    """Add i.i.d. ``N(0, sigma^2)`` noise drawn from ``default_rng(seed)``."""
    sigma = float(sigma)
    if not sigma >= 0:
        raise InvalidArgument(f"noise sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return img
    rng = np.random.default_rng(seed)
    return img.with_data(img.data + sigma * rng.standard_normal(img.shape))


def _check_even(img):
    if img.H % 2 or img.W % 2:
        raise InvalidArgument(f"Bayer operations need even dimensions, got {img.H}x{img.W}")


def mosaic_rggb(rgb):
    """Sample an RGB image through an RGGB colour filter array (one channel out)."""
    if rgb.C != 3:
        raise InvalidArgument("mosaicking needs a 3-channel image")
    _check_even(rgb)
    out = np.empty((rgb.H, rgb.W))
    for (dy, dx), c in zip(BAYER_PHASES, (0, 1, 1, 2)):
        out[dy::2, dx::2] = rgb.data[dy::2, dx::2, c]
    return Image(out[:, :, None], rgb.h)


def pack4(mosaic):
    """Gather the four Bayer phases into channels ``(R, G1, G2, B)`` at half resolution."""
    if mosaic.C != 1:
        raise InvalidArgument("pack4 needs a single-channel mosaic")
    _check_even(mosaic)
    m = mosaic.data[:, :, 0]
    out = np.stack([m[dy::2, dx::2] for dy, dx in BAYER_PHASES], axis=-1)
    return Image(out, mosaic.h * 2)


def unpack4(packed):
    if packed.C != 4:
        raise InvalidArgument("unpack4 needs a 4-channel image")
    out = np.empty((packed.H * 2, packed.W * 2))
    for k, (dy, dx) in enumerate(BAYER_PHASES):
        out[dy::2, dx::2] = packed.data[:, :, k]
    return Image(out[:, :, None], packed.h / 2)


def packed_offsets(h_packed):
    """Coordinate offset of each packed channel's samples from the packed grid points."""
    q = h_packed / 4.0
    return np.array([[(2 * dy - 1) * q, (2 * dx - 1) * q] for dy, dx in BAYER_PHASES])


@dataclass(frozen=True)
class BurstSequence:
    """Raw frames with their ground-truth transforms (``transforms[0]`` is the identity)."""

    frames: tuple
    transforms: tuple
    s: int
    sigma: float = 0.0
    seed: int = 0
    mosaic: bool = True

    def __post_init__(self):
        frames = tuple(self.frames)
        transforms = tuple(self.transforms)
        if len(frames) < 2:
            raise InvalidArgument("a burst needs at least two frames")
        if len(transforms) != len(frames):
            raise InvalidArgument("need one transform per frame")
        if any(f.shape != frames[0].shape for f in frames):
            raise InvalidArgument("all frames must share dimensions")
        if not transforms[0].is_identity():
            raise InvalidArgument("the reference transform must be the identity")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "transforms", transforms)

    @property
    def B(self):
        return len(self.frames)

    @property
    def reference(self):
        return self.frames[0]

    def packed(self):
        """Frames as 4-channel RGGB images (mosaic bursts only)."""
        if not self.mosaic:
            raise InvalidArgument("burst frames are not mosaics")
        return [pack4(f) for f in self.frames]


def _draw_transforms(B, theta_max, shift_max, h_lr, seed):
    rng = np.random.default_rng(seed)
    out = [IDENTITY]
    for _ in range(B - 1):
        theta = rng.uniform(-theta_max, theta_max)
        b = rng.uniform(-shift_max, shift_max, 2) * h_lr
        out.append(AffineTransform(theta, b))
    return out


def synthesize_burst(
    hr, B, s, theta_max=0.0, shift_max=0.0, noise_sigma=0.0, seed=0, mosaic=True,
    transforms=None, threads=None,
):
    """Simulate ``B`` raw frames of ``hr`` at scale ``1/s``.

    Transforms come from ``default_rng(seed)`` unless given explicitly; frame
    ``j`` draws its noise from ``default_rng(seed ^ j)``.
    """
    B = check_positive_int(B, "frame count B")
    s = check_positive_int(s, "scale s")
    if B < 2:
        raise InvalidArgument("a burst needs at least two frames")
    if s not in (1, 2, 3, 4):
        raise InvalidArgument(f"scale must be in 1..4, got {s}")
    if hr.C != 3:
        raise InvalidArgument("the high-resolution image must be RGB")
    if hr.H % (2 * s) or hr.W % (2 * s):
        raise InvalidArgument(f"image size {hr.H}x{hr.W} not divisible by 2s = {2 * s}")
    if transforms is None:
        transforms = _draw_transforms(B, theta_max, shift_max, hr.h * s, seed)
    transforms = list(transforms)

    def frame(j):
        lr = downsample(warp_image(hr, transforms[j]), s)
        lr = add_noise(lr, noise_sigma, seed ^ j)
        return mosaic_rggb(lr) if mosaic else lr

    frames = ordered_map(frame, range(B), threads)
    return BurstSequence(tuple(frames), tuple(transforms), s, float(noise_sigma), seed, mosaic)


def write_burst(directory, burst, extra=None):
    """Write ``frame_XXX.pfm`` files and ``manifest.txt``."""
    os.makedirs(directory, exist_ok=True)
    lines = [
        f"frames={burst.B}",
        f"scale={burst.s}",
        f"sigma={format_value(float(burst.sigma))}",
        f"seed={burst.seed}",
        f"mosaic={1 if burst.mosaic else 0}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}={format_value(value)}")
    for j, (fr, tf) in enumerate(zip(burst.frames, burst.transforms)):
        name = f"frame_{j:03d}.pfm"
        write_pfm(os.path.join(directory, name), fr)
        lines.append(f"frame={j} file={name} {tf.to_text()}")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_burst(directory):
    path = os.path.join(directory, "manifest.txt")
    header = {}
    entries = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("frame="):
                fields = parse_keyvalue_line(line, lineno)
                if "file" not in fields:
                    raise FormatError(f"{path}: frame line without file", line=lineno)
                try:
                    idx = int(fields["frame"])
                except ValueError:
                    raise FormatError(f"{path}: bad frame index", line=lineno) from None
                entries.append((idx, fields["file"], AffineTransform.from_fields(fields, lineno)))
            elif "=" in line and " " not in line:
                key, value = line.split("=", 1)
                header[key] = (value, lineno)
            else:
                raise FormatError(f"{path}: cannot parse line {lineno}: {line!r}", line=lineno)
    try:
        s = int(header["scale"][0])
        sigma = float(header.get("sigma", ("0",))[0])
        seed = int(header.get("seed", ("0",))[0])
        mosaic = header.get("mosaic", ("1",))[0] == "1"
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad or missing header key ({exc})") from None
    entries.sort(key=lambda e: e[0])
    if [e[0] for e in entries] != list(range(len(entries))):
        raise FormatError(f"{path}: frame indices must be 0..B-1")
    frames = tuple(read_pfm(os.path.join(directory, name)) for _, name, _ in entries)
    transforms = tuple(tf for _, _, tf in entries)
    return BurstSequence(frames, transforms, s, sigma, seed, mosaic)
