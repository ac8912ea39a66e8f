"""Grid functions: images, group feature maps and the smooth fields they sample.

Pixel ``(i, j)`` of an ``H x W`` grid with mesh size ``h`` sits at the
centred coordinate ``x_ij = ((i - (H-1)/2) h, (j - (W-1)/2) h)`` (0-based
indices).  The first coordinate runs along rows.  For odd sizes the centre
pixel maps to the origin exactly.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from ._validation import (
    InvalidArgument,
    check_positive_int,
    check_positive_real,
    frozen_array,
)

__all__ = [
    "Image",
    "GroupFeatureMap",
    "LatentField",
    "grid_coordinates",
    "rotation_matrix",
    "make_grid_image",
    "pixel_shuffle",
    "pixel_unshuffle",
]


def grid_coordinates(H, W, h):
    """Centred sample coordinates, shape ``(H, W, 2)``."""
    rows = (np.arange(H) - (H - 1) / 2.0) * h
    cols = (np.arange(W) - (W - 1) / 2.0) * h
    out = np.empty((H, W, 2))
    out[..., 0] = rows[:, None]
    out[..., 1] = cols[None, :]
    return out


@dataclass(frozen=True)
class Image:
    """An ``H x W x C`` grid of real samples with mesh size ``h``."""

    data: np.ndarray
    h: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InvalidArgument(f"image data must be H x W x C, got shape {arr.shape}")
        object.__setattr__(self, "data", frozen_array(arr))
        object.__setattr__(self, "h", check_positive_real(self.h, "mesh size h"))

    @property
    def shape(self):
        return self.data.shape

    @property
    def H(self):
        return self.data.shape[0]

    @property
    def W(self):
        return self.data.shape[1]

    @property
    def C(self):
        return self.data.shape[2]

    def coordinates(self):
        return grid_coordinates(self.H, self.W, self.h)

    def with_data(self, data, h=None):
        return Image(data, self.h if h is None else h)


@dataclass(frozen=True)
class GroupFeatureMap:
    """An ``H x W x t x C`` grid; group index ``k`` is the rotation by ``2 pi k / t``."""

    data: np.ndarray
    h: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise InvalidArgument(
                f"feature map data must be H x W x t x C, got shape {arr.shape}"
            )
        object.__setattr__(self, "data", frozen_array(arr))
        object.__setattr__(self, "h", check_positive_real(self.h, "mesh size h"))

    @property
    def shape(self):
        return self.data.shape

    @property
    def H(self):
        return self.data.shape[0]

    @property
    def W(self):
        return self.data.shape[1]

    @property
    def t(self):
        return self.data.shape[2]

    @property
    def C(self):
        return self.data.shape[3]

    def with_data(self, data, h=None):
        return GroupFeatureMap(data, self.h if h is None else h)

    def flatten_channels(self):
        """View as ``H x W x (t*C)``, group-major within each pixel."""
        return self.data.reshape(self.H, self.W, self.t * self.C)


def rotation_matrix(theta):
    """``A_theta = [[cos, -sin], [sin, cos]]``, exact for multiples of a quarter turn."""
    q = theta / (np.pi / 2)
    k = np.floor(q + 0.5)
    if abs(q - k) < 1e-12:
        c, s = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[int(k) % 4]
    else:
        c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class LatentField:
    """A smooth scalar field on the plane with analytic derivatives.

    ``kind="bandlimited-cosine"``: ``r(x) = sum_k a_k cos(<w_k, x> + phi_k)``
    with ``centers`` holding the frequency vectors ``w_k`` and ``widths``
    holding the phases.

    ``kind="gaussian-mixture"``: ``r(x) = sum_k a_k exp(-|x - c_k|^2 / (2 s_k^2))``.
    """

    kind: str
    centers: np.ndarray
    amplitudes: np.ndarray
    widths: np.ndarray = dc_field(default=None)

    def __post_init__(self):
        if self.kind not in ("gaussian-mixture", "bandlimited-cosine"):
            raise InvalidArgument(f"unknown field kind {self.kind!r}")
        centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        amps = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        if self.widths is None:
            widths = np.zeros(len(amps)) if self.kind == "bandlimited-cosine" else np.ones(len(amps))
        else:
            widths = np.asarray(self.widths, dtype=np.float64).reshape(-1)
        if not (len(centers) == len(amps) == len(widths)):
            raise InvalidArgument("field component arrays must have equal length")
        if self.kind == "gaussian-mixture" and np.any(widths <= 0):
            raise InvalidArgument("gaussian widths must be positive")
        object.__setattr__(self, "centers", frozen_array(centers))
        object.__setattr__(self, "amplitudes", frozen_array(amps))
        object.__setattr__(self, "widths", frozen_array(widths))

    @classmethod
    def cosine(cls, frequencies, amplitudes, phases=None):
        return cls("bandlimited-cosine", frequencies, amplitudes, phases)

    @classmethod
    def gaussian_mixture(cls, centers, amplitudes, widths):
        return cls("gaussian-mixture", centers, amplitudes, widths)

    @classmethod
    def constant(cls, value):
        return cls.cosine([[0.0, 0.0]], [value], [0.0])

    @classmethod
    def random_bandlimited(cls, seed, n_terms=6, max_freq=4.0, amplitude=1.0):
        """Random sum of cosines with angular frequencies ``|w| <= 2 pi max_freq``.

        Amplitudes are scaled so the field stays within ``[-amplitude, amplitude]``.
        """
        rng = np.random.default_rng(seed)
        radius = 2 * np.pi * max_freq * np.sqrt(rng.uniform(0.05, 1.0, n_terms))
        angle = rng.uniform(0, 2 * np.pi, n_terms)
        freqs = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        amps = rng.uniform(0.3, 1.0, n_terms)
        amps *= amplitude / amps.sum()
        phases = rng.uniform(0, 2 * np.pi, n_terms)
        return cls.cosine(freqs, amps, phases)

    @classmethod
    def random_mixture(cls, seed, n_terms=3, extent=1.0, width=(0.15, 0.4)):
        rng = np.random.default_rng(seed)
        centers = rng.uniform(-extent / 2, extent / 2, (n_terms, 2))
        amps = rng.uniform(-1.0, 1.0, n_terms)
        widths = rng.uniform(width[0], width[1], n_terms) * extent
        return cls.gaussian_mixture(centers, amps, widths)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape[:-1])
        for c, a, w in zip(self.centers, self.amplitudes, self.widths):
            if self.kind == "bandlimited-cosine":
                out += a * np.cos(x @ c + w)
            else:
                d = x - c
                out += a * np.exp(-np.einsum("...i,...i->...", d, d) / (2 * w * w))
        return out

    def gradient(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape)
        for c, a, w in zip(self.centers, self.amplitudes, self.widths):
            if self.kind == "bandlimited-cosine":
                out += (-a * np.sin(x @ c + w))[..., None] * c
            else:
                d = x - c
                g = a * np.exp(-np.einsum("...i,...i->...", d, d) / (2 * w * w))
                out += (-g / (w * w))[..., None] * d
        return out

    def hessian(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape + (2,))
        eye = np.eye(2)
        for c, a, w in zip(self.centers, self.amplitudes, self.widths):
            if self.kind == "bandlimited-cosine":
                out += (-a * np.cos(x @ c + w))[..., None, None] * np.outer(c, c)
            else:
                d = x - c
                g = a * np.exp(-np.einsum("...i,...i->...", d, d) / (2 * w * w))
                dd = d[..., :, None] * d[..., None, :] / (w ** 4)
                out += g[..., None, None] * (dd - eye / (w * w))
        return out

    def bounds(self):
        """Certified ``(sup|r|, sup|grad r|, sup||hess r||_2)`` by the triangle inequality."""
        a = np.abs(self.amplitudes)
        if self.kind == "bandlimited-cosine":
            k = np.linalg.norm(self.centers, axis=1)
            return float(a.sum()), float((a * k).sum()), float((a * k * k).sum())
        w = self.widths
        return (
            float(a.sum()),
            float((a / w).sum() * np.exp(-0.5)),
            float((a / (w * w)).sum()),
        )

    def transformed(self, theta, b):
        """The field ``x -> r(A_theta^{-1} (x - b))``."""
        A = rotation_matrix(theta)
        b = np.asarray(b, dtype=np.float64)
        if self.kind == "bandlimited-cosine":
            # cos(<w, A^T (x - b)> + phi) = cos(<A w, x> - <A w, b> + phi)
            freqs = self.centers @ A.T
            phases = self.widths - freqs @ b
            return LatentField.cosine(freqs, self.amplitudes, phases)
        centers = self.centers @ A.T + b
        return LatentField.gaussian_mixture(centers, self.amplitudes, self.widths)


def make_grid_image(field, n, h, channels=1):
    """Sample ``field`` on the centred ``n x n`` grid with mesh ``h``.

    ``field`` may be a single LatentField (replicated over channels) or a
    sequence with one field per channel.
    """
    n = check_positive_int(n, "n")
    h = check_positive_real(h, "mesh size h")
    channels = check_positive_int(channels, "channels")
    fields = [field] * channels if isinstance(field, LatentField) else list(field)
    if len(fields) != channels:
        raise InvalidArgument(f"expected {channels} fields, got {len(fields)}")
    x = grid_coordinates(n, n, h)
    return Image(np.stack([f(x) for f in fields], axis=-1), h)


def pixel_shuffle(img, s):
    """Rearrange ``C = c s^2`` channels into an ``s``-times larger image.

    Input channel ``c*s*s + u*s + v`` of pixel ``(i, j)`` lands at output
    pixel ``(s*i + u, s*j + v)``, channel ``c``.
    """
    s = check_positive_int(s, "scale s")
    H, W, C = img.shape
    if C % (s * s):
        raise InvalidArgument(f"channel count {C} not divisible by s^2 = {s * s}")
    c = C // (s * s)
    out = img.data.reshape(H, W, c, s, s).transpose(0, 3, 1, 4, 2).reshape(H * s, W * s, c)
    return Image(out, img.h / s)


def pixel_unshuffle(img, s):
    """Exact inverse of :func:`pixel_shuffle`."""
    s = check_positive_int(s, "scale s")
    H, W, c = img.shape
    if H % s or W % s:
        raise InvalidArgument(f"image size {H}x{W} not divisible by s = {s}")
    out = img.data.reshape(H // s, s, W // s, s, c).transpose(0, 2, 4, 1, 3)
    return Image(out.reshape(H // s, W // s, c * s * s), img.h * s)
