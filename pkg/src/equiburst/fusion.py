"""Channel-attention fusion of aligned feature maps.

For frame ``j`` the input ``X = [Z~_j, Z~_0]`` (channels concatenated) is
projected to queries, keys and values by a pointwise map followed by a 3x3
depthwise filter.  Attention is computed between channels: with ``Q`` and
``K`` flattened to ``(C_f, H*W)``, ``attn = softmax_keys(Q K^T / alpha)`` and
the output is ``attn V`` reshaped, plus the residual ``Z~_j``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import InvalidArgument, check_positive_int, frozen_array

__all__ = ["MdtaParams", "mdta_fuse", "mdta_attention", "depthwise3x3"]


@dataclass(frozen=True)
class MdtaParams:
    """Per-frame weights.

    ``pointwise``: ``(B, 3, 2 C_f, C_f)`` for Q, K, V.
    ``depthwise``: ``(B, 3, C_f, 3, 3)``.
    ``alpha``: ``(B,)`` temperatures, or ``None`` for ``H * W``.
    """

    pointwise: np.ndarray
    depthwise: np.ndarray
    alpha: object = None
    seed: object = None

    def __post_init__(self):
        pw = np.asarray(self.pointwise, dtype=np.float64)
        dw = np.asarray(self.depthwise, dtype=np.float64)
        if pw.ndim != 4 or pw.shape[1] != 3 or pw.shape[2] != 2 * pw.shape[3]:
            raise InvalidArgument(f"pointwise weights must be (B, 3, 2C, C), got {pw.shape}")
        if dw.shape != (pw.shape[0], 3, pw.shape[3], 3, 3):
            raise InvalidArgument(f"depthwise weights must be (B, 3, C, 3, 3), got {dw.shape}")
        object.__setattr__(self, "pointwise", frozen_array(pw))
        object.__setattr__(self, "depthwise", frozen_array(dw))
        if self.alpha is not None:
            alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
            if alpha.shape != (pw.shape[0],) or np.any(alpha <= 0):
                raise InvalidArgument("need one positive temperature per frame")
            object.__setattr__(self, "alpha", frozen_array(alpha))

    @classmethod
    def random(cls, B, channels, seed=0, identity_depthwise=False, alpha=None):
        B = check_positive_int(B, "frame count B")
        C = check_positive_int(channels, "channels")
        rng = np.random.default_rng(seed)
        pw = rng.standard_normal((B, 3, 2 * C, C)) / np.sqrt(2 * C)
        if identity_depthwise:
            dw = np.zeros((B, 3, C, 3, 3))
            dw[..., 1, 1] = 1.0
        else:
            dw = rng.standard_normal((B, 3, C, 3, 3)) / 3.0
        return cls(pw, dw, alpha, seed)

    @property
    def B(self):
        return self.pointwise.shape[0]

    @property
    def channels(self):
        return self.pointwise.shape[3]


def depthwise3x3(x, kernels):
    """Per-channel 3x3 correlation with zero padding; ``x`` is ``(H, W, C)``."""
    H, W, _ = x.shape
    padded = np.pad(x, [(1, 1), (1, 1), (0, 0)])
    out = np.zeros_like(x)
    for a in range(3):
        for b in range(3):
            out += padded[a : a + H, b : b + W] * kernels[:, a, b]
    return out


def _softmax_rows(s):
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def mdta_attention(zj, z0, params, j):
    """Return ``(fused, attn)`` for frame ``j``; both inputs are ``(H, W, C_f)`` arrays."""
    H, W, C = zj.shape
    x = np.concatenate([zj, z0], axis=-1)
    qkv = []
    for m in range(3):
        y = np.einsum("hwc,cd->hwd", x, params.pointwise[j, m])
        qkv.append(depthwise3x3(y, params.depthwise[j, m]).reshape(H * W, C))
    q, k, v = qkv
    alpha = float(H * W) if params.alpha is None else float(params.alpha[j])
    attn = _softmax_rows(np.einsum("xa,xb->ab", q, k) / alpha)
    out = np.einsum("ab,xb->xa", attn, v).reshape(H, W, C)
    return out + zj, attn


def mdta_fuse(aligned, params, return_attention=False):
    """Fuse every aligned map with the reference map ``aligned[0]``."""
    aligned = list(aligned)
    if not aligned:
        raise InvalidArgument("nothing to fuse")
    ref = aligned[0]
    width = ref.t * ref.C
    if params.channels != width:
        raise InvalidArgument(f"parameters expect {params.channels} channels, features have {width}")
    if params.B < len(aligned):
        raise InvalidArgument("not enough per-frame parameters")
    z0 = ref.flatten_channels()
    fused, attns = [], []
    for j, z in enumerate(aligned):
        if z.shape != ref.shape:
            raise InvalidArgument("aligned feature maps must share a shape")
        out, attn = mdta_attention(z.flatten_channels(), z0, params, j)
        fused.append(z.with_data(out.reshape(z.shape)))
        attns.append(attn)
    return (fused, attns) if return_attention else fused
