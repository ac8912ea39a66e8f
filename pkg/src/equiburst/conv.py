"""Lifting, group and projection convolutions and a small network runner.

All three layers use zero padding and keep the spatial size.  Kernel offsets
are subtracted (convolution, not correlation): kernel tap ``(a, b)`` with
offset ``delta_ab`` multiplies the input at pixel ``(i - a + r, j - b + r)``,
``r = (p - 1)/2``.  Sums are accumulated tap by tap in a fixed order with
unoptimized ``einsum`` so results do not depend on BLAS threading.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import InvalidArgument, check_positive_int
from .filters import FilterBank
from .grid import GroupFeatureMap, Image

__all__ = [
    "lift_conv",
    "group_conv",
    "project_conv",
    "relu",
    "EquivNetSpec",
    "NetworkOutput",
    "run_network",
    "write_network",
    "read_network",
]


def _check_bank(bank, kind, in_channels, t=None):
    if not isinstance(bank, FilterBank) or bank.layer_kind != kind:
        raise InvalidArgument(f"expected a {kind} filter bank")
    if bank.in_channels != in_channels:
        raise InvalidArgument(
            f"bank expects {bank.in_channels} input channels, input has {in_channels}"
        )
    if t is not None and bank.t != t:
        raise InvalidArgument(f"bank group order {bank.t} does not match input t={t}")


def _taps(padded, p, H, W):
    """Yield ``(a, b, view)`` where ``view[i, j] = input[i - a + r, j - b + r]``."""
    r = (p - 1) // 2
    for a in range(p):
        for b in range(p):
            yield a, b, padded[2 * r - a : 2 * r - a + H, 2 * r - b : 2 * r - b + W]


def _pad(data, p):
    r = (p - 1) // 2
    width = [(r, r), (r, r)] + [(0, 0)] * (data.ndim - 2)
    return np.pad(data, width)


def lift_conv(img, bank, kernels=None):
    """Image ``(H, W, C)`` to group map ``(H, W, t, D)``."""
    _check_bank(bank, "lifting", img.C)
    K = bank.kernel_stack()[:, 0] if kernels is None else kernels  # (t, C, D, p, p)
    H, W = img.H, img.W
    out = np.zeros((H, W, bank.t, bank.out_channels))
    for a, b, view in _taps(_pad(img.data, bank.p), bank.p, H, W):
        out += np.einsum("hwc,kcd->hwkd", view, K[..., a, b])
    return GroupFeatureMap(out, img.h)


def _group_index(t):
    # idx[B, A] = (B + A) mod t, the composed rotation BA
    return (np.arange(t)[:, None] + np.arange(t)[None, :]) % t


def group_conv(fmap, bank, kernels=None):
    """Group map to group map: ``out[., B, d] = sum_{c, A, delta} phi_{A,c,d}(B^{-1} delta) e_c(x - delta, BA)``."""
    _check_bank(bank, "intermediate", fmap.C, fmap.t)
    K = bank.kernel_stack() if kernels is None else kernels  # (t_B, t_A, C, D, p, p)
    H, W, t = fmap.H, fmap.W, fmap.t
    idx = _group_index(t)
    out = np.zeros((H, W, t, bank.out_channels))
    for a, b, view in _taps(_pad(fmap.data, bank.p), bank.p, H, W):
        Kab = K[..., a, b]
        for B in range(t):
            out[:, :, B, :] += np.einsum("hwac,acd->hwd", view[:, :, idx[B], :], Kab[B])
    return GroupFeatureMap(out, fmap.h)


def project_conv(fmap, bank, kernels=None):
    """Group map to image: ``out[., d] = sum_{c, B, delta} phi_cd(B^{-1} delta) e_c(x - delta, B)``."""
    _check_bank(bank, "projection", fmap.C, fmap.t)
    K = bank.kernel_stack()[:, 0] if kernels is None else kernels  # (t, C, D, p, p)
    H, W = fmap.H, fmap.W
    out = np.zeros((H, W, bank.out_channels))
    for a, b, view in _taps(_pad(fmap.data, bank.p), bank.p, H, W):
        out += np.einsum("hwkc,kcd->hwd", view, K[..., a, b])
    return Image(out, fmap.h)


def relu(x):
    return x.with_data(np.maximum(x.data, 0.0))


_LAYER_FN = {"lifting": lift_conv, "intermediate": group_conv, "projection": project_conv}


@dataclass(frozen=True)
class NetworkOutput:
    output: Image
    features: GroupFeatureMap


@dataclass(frozen=True)
class EquivNetSpec:
    """Lifting layer, zero or more intermediate layers, projection layer."""

    banks: tuple
    activations: tuple

    def __post_init__(self):
        banks = tuple(self.banks)
        acts = tuple(self.activations)
        if len(banks) < 2:
            raise InvalidArgument("a network needs at least a lifting and a projection layer")
        if len(acts) != len(banks):
            raise InvalidArgument("need one activation per layer")
        for act in acts:
            if act not in ("relu", "none"):
                raise InvalidArgument(f"unknown activation {act!r}")
        kinds = [b.layer_kind for b in banks]
        if kinds[0] != "lifting" or kinds[-1] != "projection" or any(
            k != "intermediate" for k in kinds[1:-1]
        ):
            raise InvalidArgument(f"layer kinds must be lifting, intermediate..., projection; got {kinds}")
        ref = banks[0]
        for prev, cur in zip(banks, banks[1:]):
            if prev.out_channels != cur.in_channels:
                raise InvalidArgument("adjacent layer channel counts do not match")
        for b in banks:
            if (b.t, b.p) != (ref.t, ref.p) or not np.isclose(b.h, ref.h, rtol=1e-12, atol=0):
                raise InvalidArgument("all banks must share t, p and h")
        object.__setattr__(self, "banks", banks)
        object.__setattr__(self, "activations", acts)

    @classmethod
    def random(cls, t, p, h, channels=(1, 2, 2, 1), seed=0, M=None, decay=2.0, group_mean=True):
        """Lifting, ``len(channels) - 3`` intermediate layers with ReLU, projection.

        ``channels`` are the widths before and after every layer.
        """
        check_positive_int(t, "group order t")
        if len(channels) < 3:
            raise InvalidArgument("channels needs at least three entries")
        seeds = np.random.SeedSequence(seed).generate_state(len(channels) - 1)
        N = len(channels) - 1
        banks, acts = [], []
        for i in range(N):
            kind = "lifting" if i == 0 else "projection" if i == N - 1 else "intermediate"
            banks.append(
                FilterBank.random(
                    kind, channels[i], channels[i + 1], t, p, h, int(seeds[i]),
                    M=M, decay=decay, group_mean=group_mean,
                )
            )
            acts.append("relu" if kind == "intermediate" else "none")
        return cls(tuple(banks), tuple(acts))

    @property
    def t(self):
        return self.banks[0].t

    @property
    def p(self):
        return self.banks[0].p

    @property
    def h(self):
        return self.banks[0].h

    @property
    def N(self):
        return len(self.banks)

    @property
    def channels(self):
        return (self.banks[0].in_channels,) + tuple(b.out_channels for b in self.banks)

    def effective_channels(self):
        """Input widths ``n_0 .. n_{N-1}`` with group maps counted as ``t * C``."""
        widths = [self.banks[0].in_channels]
        widths += [self.t * b.in_channels for b in self.banks[1:]]
        return tuple(widths)

    def kernel_stacks(self):
        out = []
        for b in self.banks:
            ks = b.kernel_stack()
            out.append(ks if b.layer_kind == "intermediate" else ks[:, 0])
        return tuple(out)


def run_network(spec, img, kernels=None):
    """Apply the network; ``features`` is the last group map before projection."""
    kernels = spec.kernel_stacks() if kernels is None else kernels
    x = img
    feats = None
    for bank, act, K in zip(spec.banks, spec.activations, kernels):
        if bank.layer_kind == "projection":
            feats = x
        x = _LAYER_FN[bank.layer_kind](x, bank, K)
        if act == "relu":
            x = relu(x)
    return NetworkOutput(x, feats)


def write_network(directory, spec):
    """Write banks as ``layer<i>.eqt`` plus a ``network.txt`` manifest."""
    import os

    from .filters import write_bank
    from .io import write_keyvalue

    os.makedirs(directory, exist_ok=True)
    items = {"layers": spec.N}
    for i, (bank, act) in enumerate(zip(spec.banks, spec.activations)):
        name = f"layer{i}.eqt"
        write_bank(os.path.join(directory, name), bank)
        items[f"layer{i}"] = name
        items[f"activation{i}"] = act
    write_keyvalue(os.path.join(directory, "network.txt"), items)


def read_network(directory):
    import os

    from ._validation import FormatError
    from .filters import read_bank
    from .io import read_keyvalue

    meta = read_keyvalue(os.path.join(directory, "network.txt"))
    try:
        n = int(meta["layers"])
        banks = [read_bank(os.path.join(directory, meta[f"layer{i}"])) for i in range(n)]
        acts = [meta[f"activation{i}"] for i in range(n)]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{directory}/network.txt: missing or bad key ({exc})") from None
    return EquivNetSpec(tuple(banks), tuple(acts))
