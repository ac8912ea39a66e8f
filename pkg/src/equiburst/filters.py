"""Windowed Fourier-series filters, filter banks and the bound constants.

A filter is ``phi(x) = w(|x|) * sum_{m,n} [a_mn cos(<k_mn, x>) + b_mn sin(<k_mn, x>)]``
with ``k_mn = omega * (m, n)``, ``m = 0..M``, ``n = -M..M`` and
``omega = pi / (M h)``, so the highest axial frequency is the grid Nyquist
frequency.  The window ``w(r) = (1 - r^2/R^2)^3`` for ``r < R`` (else 0) is C2,
has ``w(0) = 1`` and vanishes outside ``R = (p + 1) h / 2``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import (
    InvalidArgument,
    check_odd,
    check_positive_int,
    check_positive_real,
    frozen_array,
)
from .grid import rotation_matrix

__all__ = [
    "SteerableFilter",
    "FilterBank",
    "BoundConstants",
    "LAYER_KINDS",
    "eval_filter",
    "sample_filter_grid",
    "filter_bounds",
    "bank_bounds",
    "field_bounds",
    "compute_constants",
    "layer_constant",
    "kernel_offsets",
    "write_bank",
    "read_bank",
]

LAYER_KINDS = ("lifting", "intermediate", "projection")

# sup |w'| and sup ||w''||_2 of the window, in units of 1/R and 1/R^2
_WINDOW_G = 96.0 / (25.0 * np.sqrt(5.0))
_WINDOW_H = 6.0


def _frequencies(M, h):
    omega = np.pi / (M * h)
    m, n = np.meshgrid(np.arange(M + 1), np.arange(-M, M + 1), indexing="ij")
    return omega * np.stack([m, n], axis=-1).reshape(-1, 2).astype(np.float64)


def kernel_offsets(p, h):
    """Offsets ``delta_ij = ((i - c) h, (j - c) h)`` with ``c = (p - 1)/2``, shape ``(p, p, 2)``."""
    c = (p - 1) / 2.0
    idx = (np.arange(p) - c) * h
    out = np.empty((p, p, 2))
    out[..., 0] = idx[:, None]
    out[..., 1] = idx[None, :]
    return out


def _phase(x, k):
    # elementwise rather than matmul so every point is rounded identically
    return x[..., 0, None] * k[:, 0] + x[..., 1, None] * k[:, 1]


def _window(x, R):
    rho2 = np.einsum("...i,...i->...", x, x)
    inside = rho2 < R * R
    u = np.where(inside, 1.0 - rho2 / (R * R), 0.0)
    return u, inside


@dataclass(frozen=True)
class SteerableFilter:
    """One windowed Fourier filter.

    ``coef`` has shape ``(2, M + 1, 2M + 1)``: cosine then sine coefficients,
    indexed by ``(m, n + M)``.
    """

    coef: np.ndarray
    p: int
    h: float

    def __post_init__(self):
        p = check_odd(check_positive_int(self.p, "filter size p"), "filter size p")
        h = check_positive_real(self.h, "mesh size h")
        coef = np.asarray(self.coef, dtype=np.float64)
        if coef.ndim != 3 or coef.shape[0] != 2 or coef.shape[2] != 2 * coef.shape[1] - 1:
            raise InvalidArgument(f"coefficient table must be (2, M+1, 2M+1), got {coef.shape}")
        if coef.shape[1] < 2:
            raise InvalidArgument("basis cap M must be at least 1")
        object.__setattr__(self, "coef", frozen_array(coef))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "h", h)

    @classmethod
    def zeros(cls, p, h, M=None):
        M = p if M is None else M
        return cls(np.zeros((2, M + 1, 2 * M + 1)), p, h)

    @classmethod
    def constant(cls, value, p, h, M=None):
        """Pure window filter ``value * w(|x|)``; radially symmetric."""
        f = cls.zeros(p, h, M)
        coef = f.coef.copy()
        coef[0, 0, f.M] = value
        return cls(coef, p, h)

    @classmethod
    def random(cls, seed, p, h, M=None, decay=2.0, gain=1.0):
        M = p if M is None else M
        rng = np.random.default_rng(seed)
        return cls(gain * _random_table(rng, M, decay), p, h)

    @property
    def M(self):
        return self.coef.shape[1] - 1

    @property
    def radius(self):
        return (self.p + 1) * self.h / 2.0

    def _terms(self):
        k = _frequencies(self.M, self.h)
        return k, self.coef[0].reshape(-1), self.coef[1].reshape(-1)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        k, a, b = self._terms()
        u, inside = _window(x, self.radius)
        ph = _phase(x, k)
        series = np.einsum("...t,t->...", np.cos(ph), a) + np.einsum("...t,t->...", np.sin(ph), b)
        return np.where(inside, u ** 3 * series, 0.0)

    def gradient(self, x):
        x = np.asarray(x, dtype=np.float64)
        R = self.radius
        k, a, b = self._terms()
        u, inside = _window(x, R)
        ph = _phase(x, k)
        c, s = np.cos(ph), np.sin(ph)
        S = np.einsum("...t,t->...", c, a) + np.einsum("...t,t->...", s, b)
        dS = np.einsum("...t,ti->...i", c * b - s * a, k)
        dw = (-6.0 * u ** 2 / (R * R))[..., None] * x
        out = dw * S[..., None] + (u ** 3)[..., None] * dS
        return np.where(inside[..., None], out, 0.0)

    def hessian(self, x):
        x = np.asarray(x, dtype=np.float64)
        R = self.radius
        k, a, b = self._terms()
        u, inside = _window(x, R)
        ph = _phase(x, k)
        c, s = np.cos(ph), np.sin(ph)
        S = np.einsum("...t,t->...", c, a) + np.einsum("...t,t->...", s, b)
        dS = np.einsum("...t,ti->...i", c * b - s * a, k)
        kk = k[:, :, None] * k[:, None, :]
        d2S = -np.tensordot(c * a + s * b, kk, axes=1)
        w = u ** 3
        dw = (-6.0 * u ** 2 / (R * R))[..., None] * x
        xx = x[..., :, None] * x[..., None, :]
        d2w = (-6.0 * u ** 2 / (R * R))[..., None, None] * np.eye(2) + (
            24.0 * u / R ** 4
        )[..., None, None] * xx
        out = (
            d2w * S[..., None, None]
            + dw[..., :, None] * dS[..., None, :]
            + dS[..., :, None] * dw[..., None, :]
            + w[..., None, None] * d2S
        )
        return np.where(inside[..., None, None], out, 0.0)


def _random_table(rng, M, decay, size=()):
    m, n = np.meshgrid(np.arange(M + 1), np.arange(-M, M + 1), indexing="ij")
    std = np.exp(-decay * (m * m + n * n) / float(M * M))
    return rng.standard_normal(tuple(size) + (2, M + 1, 2 * M + 1)) * std


def eval_filter(f, x):
    return f(x)


def sample_filter_grid(f, angle, p, h=None):
    """``kernel[i, j] = phi(A^{-1} delta_ij)`` for rotation ``A`` by ``angle`` radians."""
    if p != f.p:
        raise InvalidArgument(f"kernel size {p} does not match filter size {f.p}")
    if h is not None and not np.isclose(h, f.h, rtol=1e-12, atol=0):
        raise InvalidArgument(f"mesh size {h} does not match filter mesh {f.h}")
    A = rotation_matrix(angle)
    # A^{-1} delta = A^T delta; row-vector form delta @ A
    return f(kernel_offsets(p, f.h) @ A)


def filter_bounds(f):
    """Certified ``(sup|phi|, sup|grad phi|, sup||hess phi||_2)``."""
    k, a, b = f._terms()
    amp = np.hypot(a, b)
    kn = np.linalg.norm(k, axis=1)
    s0, s1, s2 = amp.sum(), (amp * kn).sum(), (amp * kn * kn).sum()
    R = f.radius
    gw, hw = _WINDOW_G / R, _WINDOW_H / (R * R)
    return float(s0), float(gw * s0 + s1), float(hw * s0 + 2.0 * gw * s1 + s2)


def field_bounds(field):
    """Certified ``(F0, G0, H0)`` of a latent field."""
    return field.bounds()


@dataclass(frozen=True)
class FilterBank:
    """All filters of one layer.

    ``coef`` has shape ``(G, C_in, C_out, 2, M + 1, 2M + 1)`` where ``G = t``
    for intermediate layers (one filter per input group element) and 1
    otherwise.
    """

    layer_kind: str
    coef: np.ndarray
    p: int
    h: float
    t: int
    seed: object = None

    def __post_init__(self):
        if self.layer_kind not in LAYER_KINDS:
            raise InvalidArgument(f"unknown layer kind {self.layer_kind!r}")
        t = check_positive_int(self.t, "group order t")
        p = check_odd(check_positive_int(self.p, "filter size p"), "filter size p")
        h = check_positive_real(self.h, "mesh size h")
        coef = np.asarray(self.coef, dtype=np.float64)
        if coef.ndim != 6 or coef.shape[3] != 2 or coef.shape[5] != 2 * coef.shape[4] - 1:
            raise InvalidArgument(f"bad filter bank coefficient shape {coef.shape}")
        groups = t if self.layer_kind == "intermediate" else 1
        if coef.shape[0] != groups:
            raise InvalidArgument(
                f"{self.layer_kind} bank needs {groups} group slices, got {coef.shape[0]}"
            )
        object.__setattr__(self, "coef", frozen_array(coef))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "h", h)

    @classmethod
    def zeros(cls, layer_kind, in_channels, out_channels, t, p, h, M=None):
        M = p if M is None else M
        groups = t if layer_kind == "intermediate" else 1
        coef = np.zeros((groups, in_channels, out_channels, 2, M + 1, 2 * M + 1))
        return cls(layer_kind, coef, p, h, t)

    @classmethod
    def random(
        cls,
        layer_kind,
        in_channels,
        out_channels,
        t,
        p,
        h,
        seed,
        M=None,
        decay=2.0,
        gain=1.0,
        harmonics=1,
        group_mean=True,
    ):
        """Seeded random bank.

        With ``group_mean`` the sums over the group axis are averaged rather
        than added (intermediate and projection filters carry a ``1/t``
        factor), and intermediate filters vary smoothly with the input group
        angle ``alpha``: ``phi_alpha = sum_{m <= harmonics} cos(m alpha) U_m +
        sin(m alpha) V_m``.  The network then has a well defined limit as
        ``t`` grows.  Otherwise every filter is drawn independently.
        """
        M = p if M is None else M
        rng = np.random.default_rng(seed)
        shape = (in_channels, out_channels)
        if layer_kind == "lifting":
            coef = _random_table(rng, M, decay, (1,) + shape)
        elif layer_kind == "projection":
            coef = _random_table(rng, M, decay, (1,) + shape)
            if group_mean:
                coef = coef / t
        elif layer_kind == "intermediate":
            if group_mean:
                U = _random_table(rng, M, decay, (harmonics + 1,) + shape)
                V = _random_table(rng, M, decay, (harmonics + 1,) + shape)
                alpha = 2 * np.pi * np.arange(t) / t
                coef = np.zeros((t,) + U.shape[1:])
                for m in range(harmonics + 1):
                    coef += np.cos(m * alpha)[:, None, None, None, None, None] * U[m]
                    if m:
                        coef += np.sin(m * alpha)[:, None, None, None, None, None] * V[m]
                coef = coef / (t * np.sqrt(2 * harmonics + 1))
            else:
                coef = _random_table(rng, M, decay, (t,) + shape)
        else:
            raise InvalidArgument(f"unknown layer kind {layer_kind!r}")
        return cls(layer_kind, gain * coef, p, h, t, seed)

    @property
    def groups(self):
        return self.coef.shape[0]

    @property
    def in_channels(self):
        return self.coef.shape[1]

    @property
    def out_channels(self):
        return self.coef.shape[2]

    @property
    def M(self):
        return self.coef.shape[4] - 1

    @property
    def radius(self):
        return (self.p + 1) * self.h / 2.0

    def filter(self, g, c, d):
        return SteerableFilter(self.coef[g, c, d], self.p, self.h)

    def filters(self):
        for g in range(self.groups):
            for c in range(self.in_channels):
                for d in range(self.out_channels):
                    yield (g, c, d), self.filter(g, c, d)

    def kernels(self, angle):
        """Sampled kernels at rotation ``angle``, shape ``(G, C_in, C_out, p, p)``."""
        pts = kernel_offsets(self.p, self.h) @ rotation_matrix(angle)
        k = _frequencies(self.M, self.h)
        u, inside = _window(pts, self.radius)
        ph = _phase(pts, k)
        basis = np.stack([np.cos(ph), np.sin(ph)], axis=2)  # (p, p, 2, T)
        flat = self.coef.reshape(self.coef.shape[:3] + (2, -1))
        vals = np.einsum("ijst,gcdst->gcdij", basis, flat)
        return vals * np.where(inside, u ** 3, 0.0)

    def kernel_stack(self):
        """Kernels at every group rotation, shape ``(t, G, C_in, C_out, p, p)``."""
        return np.stack([self.kernels(2 * np.pi * k / self.t) for k in range(self.t)])


def bank_bounds(bank):
    """Layer-wide ``(F, G, H)``: the maximum certified bound over the bank's filters."""
    best = np.zeros(3)
    for _, f in bank.filters():
        best = np.maximum(best, filter_bounds(f))
    return tuple(float(v) for v in best)


def layer_constant(field_b, filter_b):
    """Per-layer constant ``F1 H2 + F2 H1 + 2 G1 G2`` (1 = input field, 2 = filter)."""
    F1, G1, H1 = field_b
    F2, G2, H2 = filter_b
    return F1 * H2 + F2 * H1 + 2.0 * G1 * G2


@dataclass(frozen=True)
class BoundConstants:
    layer_bounds: tuple
    field_bounds: tuple
    channels: tuple
    F_script: float
    C1: float
    C2: float
    C: float


def _ratio(num, den, what):
    if den == 0.0:
        if num != 0.0:
            raise InvalidArgument(f"{what}: zero F_i with nonzero derivative bound")
        return 0.0
    return num / den


def compute_constants(channels, field_b, layer_b, H, W, p):
    """Network constants.

    ``channels`` are the input widths ``n_0 .. n_{N-1}`` of the N layers
    (counting group channels as ``t * C``), ``layer_b`` the per-layer
    ``(F_i, G_i, H_i)`` and ``field_b`` the latent input bounds.
    """
    layer_b = [tuple(float(v) for v in b) for b in layer_b]
    channels = tuple(int(n) for n in channels)
    N = len(layer_b)
    if N < 1 or len(channels) != N:
        raise InvalidArgument("need one channel count per layer")
    if any(min(b) < 0 for b in layer_b) or min(field_b) < 0:
        raise InvalidArgument("bounds must be nonnegative")
    F0, G0, H0 = (float(v) for v in field_b)
    F_script = 1.0
    for n, (Fi, _, _) in zip(channels, layer_b):
        F_script *= n * p * p * Fi
    total = 0.0
    prefix = 0.0  # sum_{m < i} G_m F0 / F_m
    for i, (Fi, Gi, Hi) in enumerate(layer_b):
        g_over_f = _ratio(Gi, Fi, f"layer {i + 1}")
        term = _ratio(Hi * F0, Fi, f"layer {i + 1}")
        term += 2.0 * g_over_f * prefix + 2.0 * g_over_f * G0 + H0
        total += term
        prefix += g_over_f * F0
    C1 = 2.0 * N * F_script * total
    C2 = 2.0 * np.pi * G0 * F_script * (2.0 * max(H, W) / p + 2.0 * N)
    C = layer_constant((F0, G0, H0), layer_b[0])
    return BoundConstants(tuple(layer_b), (F0, G0, H0), channels, F_script, C1, C2, C)


def write_bank(path, bank):
    from .io import meta_path, write_array, write_keyvalue

    flat = bank.coef.reshape(bank.coef.shape[:3] + (-1,))
    write_array(path, flat, bank.h)
    write_keyvalue(
        meta_path(path),
        {
            "layer_kind": bank.layer_kind,
            "p": bank.p,
            "h": float(bank.h),
            "t": bank.t,
            "M": bank.M,
            "seed": "none" if bank.seed is None else bank.seed,
        },
    )


def read_bank(path):
    from ._validation import FormatError
    from .io import meta_path, read_array, read_keyvalue

    flat, h = read_array(path)
    meta = read_keyvalue(meta_path(path))
    try:
        M = int(meta["M"])
        p = int(meta["p"])
        t = int(meta["t"])
        kind = meta["layer_kind"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}.meta: missing or bad key ({exc})") from None
    if flat.shape[3] != 2 * (M + 1) * (2 * M + 1):
        raise FormatError(f"{path}: coefficient count does not match M={M}")
    seed = meta.get("seed", "none")
    seed = None if seed == "none" else int(seed)
    coef = flat.reshape(flat.shape[:3] + (2, M + 1, 2 * M + 1))
    return FilterBank(kind, coef, p, h, t, seed)
