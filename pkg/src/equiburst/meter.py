"""Equivariance measurements, error bounds and parameter sweeps."""

import csv
import io as _io
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._parallel import ordered_map
from ._validation import InvalidArgument, check_odd, check_positive_int
from .conv import EquivNetSpec, group_conv, lift_conv, project_conv, run_network
from .filters import FilterBank, bank_bounds, compute_constants
from .grid import GroupFeatureMap, Image, LatentField, grid_coordinates, make_grid_image
from .transforms import AffineTransform, group_shift, invert, warp_feature, warp_image

__all__ = [
    "interior_mask",
    "default_margin",
    "apply_transform",
    "commutation_error",
    "continuous_response",
    "equivariance_error",
    "remark2_bound",
    "theorem1_bound",
    "network_constants",
    "fit_slope",
    "parse_angle",
    "SweepConfig",
    "SweepRecord",
    "SweepResult",
    "CSV_COLUMNS",
    "build_network",
    "sweep_field",
    "run_sweep",
    "scaling_slopes",
    "sweep_csv",
]


def default_margin(reach):
    """Border width for a stencil of radius ``reach`` pixels that may be rotated."""
    return int(math.ceil(reach * math.sqrt(2.0))) + 2


def interior_mask(H, W, h, f, margin):
    """Pixels ``x`` such that both ``x`` and ``f(x)`` lie at least ``margin`` pixels inside."""
    if 2 * margin >= min(H, W):
        raise InvalidArgument(f"margin {margin} leaves no interior in a {H}x{W} grid")
    i = np.arange(H)[:, None] * np.ones((1, W))
    j = np.ones((H, 1)) * np.arange(W)[None, :]
    y = np.stack([(i - (H - 1) / 2.0) * h, (j - (W - 1) / 2.0) * h], axis=-1)
    fy = f.apply(y)
    u = fy[..., 0] / h + (H - 1) / 2.0
    v = fy[..., 1] / h + (W - 1) / 2.0
    tol = 1e-9
    inside = (
        (i >= margin) & (i <= H - 1 - margin) & (j >= margin) & (j <= W - 1 - margin)
    )
    mapped = (
        (u >= margin - tol) & (u <= H - 1 - margin + tol)
        & (v >= margin - tol) & (v <= W - 1 - margin + tol)
    )
    mask = inside & mapped
    if not mask.any():
        raise InvalidArgument("interior mask is empty")
    return mask


def apply_transform(x, f, field=None):
    """Act with ``f`` on an image or group map.

    When the latent ``field`` of an image is supplied the transformed image is
    sampled from the transformed field, which is the exact discrete action.
    """
    if isinstance(x, GroupFeatureMap):
        return warp_feature(x, f)
    if field is not None:
        vals = field.transformed(f.theta, f.b)(grid_coordinates(x.H, x.W, x.h))
        return Image(np.repeat(vals[..., None], x.C, axis=-1), x.h)
    return warp_image(x, f)


def _masked_max(a, b, mask):
    d = np.abs(a - b)
    d = d.reshape(d.shape[0], d.shape[1], -1)
    return float(d[mask].max())


def _select(mask, max_points):
    idx = np.argwhere(mask)
    if max_points and len(idx) > max_points:
        idx = idx[np.linspace(0, len(idx) - 1, max_points).round().astype(np.int64)]
    return idx


def continuous_response(fn, reach, field, points, h, channels):
    """Continuous extension of a stack of layers, evaluated at arbitrary ``points``.

    The layers only combine values on the lattice ``y + h Z^2``, so the
    response at ``y`` is ``fn`` applied to the latent field sampled on the
    ``(2 reach + 1)^2`` patch around ``y``, read at the patch centre.  Patches
    are tiled into one image; no centre sees a neighbouring tile.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    size = 2 * reach + 1
    P = len(points)
    g = int(math.ceil(math.sqrt(P)))
    pts = np.zeros((g * g, 2))
    pts[:P] = points
    off = (np.arange(size) - reach) * h
    patch = np.stack(np.meshgrid(off, off, indexing="ij"), axis=-1)
    vals = field(pts.reshape(g, g, 1, 1, 2) + patch)
    tiled = vals.transpose(0, 2, 1, 3).reshape(g * size, g * size)
    out = fn(Image(np.repeat(tiled[..., None], channels, axis=-1), h))
    c = np.arange(g) * size + reach
    res = out[c][:, c]
    return res.reshape((g * g,) + res.shape[2:])[:P]


def _exact_error(fn, reach, moved, field, f, mask, h, channels, t, max_points):
    """``max |G(f x) - f[G](x)|`` with ``f[G]`` read off the continuous extension at ``f^{-1}(x)``."""
    idx = _select(mask, max_points)
    x = grid_coordinates(mask.shape[0], mask.shape[1], h)[idx[:, 0], idx[:, 1]]
    ref = continuous_response(fn, reach, field, invert(f).apply(x), h, channels)
    if t is not None:
        ref = np.roll(ref, group_shift(f.theta, t), axis=1)
    got = moved[idx[:, 0], idx[:, 1]]
    return float(np.abs(got - ref).max())


def _check_reference(reference, field):
    if reference not in ("warp", "exact"):
        raise InvalidArgument(f"unknown reference {reference!r}")
    if reference == "exact" and field is None:
        raise InvalidArgument("the exact reference needs the latent field")


def commutation_error(layer, x, f, margin=None, field=None, reference="warp", max_points=400):
    """``max |layer(f x) - f layer(x)|`` over interior pixels and all group/channel indices.

    ``layer`` is a filter bank; the layer type follows its kind.  With
    ``reference="warp"`` the right-hand side warps the computed output
    bilinearly; ``"exact"`` (lifting layer with a latent field) evaluates it
    on the continuous extension at up to ``max_points`` interior pixels.
    """
    fn = {"lifting": lift_conv, "intermediate": group_conv, "projection": project_conv}[
        layer.layer_kind
    ]
    _check_reference(reference, field)
    if reference == "exact" and layer.layer_kind != "lifting":
        raise InvalidArgument("the exact reference applies to the lifting layer only")
    if margin is None:
        margin = default_margin((layer.p - 1) // 2)
    mask = interior_mask(x.shape[0], x.shape[1], x.h, invert(f), margin)
    if f.is_identity():
        return 0.0
    lhs = fn(apply_transform(x, f, field), layer)
    if reference == "exact":
        return _exact_error(
            lambda im: fn(im, layer).data, (layer.p - 1) // 2, lhs.data, field, f, mask,
            x.h, x.C, layer.t, max_points,
        )
    rhs = apply_transform(fn(x, layer), f)
    return _masked_max(lhs.data, rhs.data, mask)


def equivariance_error(
    spec, img, f, margin=None, field=None, target="output", reference="warp", max_points=400,
):
    """Equivariance error of a network over interior pixels.

    ``reference="warp"`` measures ``max |f^{-1}(g(f I)) - g(I)|`` with the
    bilinear warp; ``"exact"`` measures ``max |g(f I) - f[g](I)|`` with
    ``f[g]`` evaluated on the continuous extension of ``g`` (needs the latent
    ``field``), which removes the interpolation error of the output-side
    warp.  ``target="features"`` compares the pre-projection group maps
    instead of the network output.
    """
    if target not in ("output", "features"):
        raise InvalidArgument(f"unknown target {target!r}")
    _check_reference(reference, field)
    if margin is None:
        margin = default_margin(spec.N * (spec.p - 1) // 2)
    mask = interior_mask(img.H, img.W, img.h, f, margin)
    if f.is_identity():
        return 0.0
    kernels = spec.kernel_stacks()
    moved = run_network(spec, apply_transform(img, f, field), kernels)
    r = (spec.p - 1) // 2
    if reference == "exact":
        if target == "output":
            return _exact_error(
                lambda im: run_network(spec, im, kernels).output.data, spec.N * r,
                moved.output.data, field, f, mask, img.h, img.C, None, max_points,
            )
        return _exact_error(
            lambda im: run_network(spec, im, kernels).features.data, (spec.N - 1) * r,
            moved.features.data, field, f, mask, img.h, img.C, spec.t, max_points,
        )
    base = run_network(spec, img, kernels)
    if target == "output":
        back = warp_image(moved.output, invert(f))
        return _masked_max(back.data, base.output.data, mask)
    back = warp_feature(moved.features, invert(f))
    return _masked_max(back.data, base.features.data, mask)


def remark2_bound(C, p, h, t, layer_kind):
    if C < 0:
        raise InvalidArgument("C must be nonnegative")
    base = 0.5 * C * (p + 1) ** 2 * h * h
    if layer_kind == "lifting":
        return base
    if layer_kind in ("intermediate", "projection"):
        return base * t
    raise InvalidArgument(f"unknown layer kind {layer_kind!r}")


def theorem1_bound(consts, h, p, t):
    return consts.C1 * h * h + consts.C2 * p * h / t


def network_constants(spec, field, H, W):
    layer_b = [bank_bounds(b) for b in spec.banks]
    return compute_constants(spec.effective_channels(), field.bounds(), layer_b, H, W, spec.p)


def fit_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or len(np.unique(x)) < 2:
        raise InvalidArgument("a slope needs at least two distinct abscissae")
    if np.any(y <= 0) or np.any(x <= 0):
        raise InvalidArgument("log-log slope needs positive values")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


CSV_COLUMNS = (
    "h", "p", "t", "n", "theta", "b1", "b2", "layer_kind",
    "err_commutation", "err_equivariance", "bound_remark2", "bound_thm1",
    "C", "C1", "C2", "F_script", "seed_field", "seed_filter",
)


def parse_angle(token, t):
    """Radians from ``0.3``, ``15deg``, ``pi/2``, ``2pi/t`` or ``pi/t``."""
    tok = token.strip().lower().replace(" ", "")
    if tok.endswith("deg"):
        return math.radians(float(tok[:-3]))
    if "pi" in tok:
        head, _, tail = tok.partition("pi")
        k = float(head) if head not in ("", "+") else 1.0
        if head == "-":
            k = -1.0
        if tail == "":
            return k * math.pi
        if not tail.startswith("/"):
            raise InvalidArgument(f"cannot parse angle {token!r}")
        den = tail[1:]
        return k * math.pi / (t if den == "t" else float(den))
    return float(tok)


def _parse_real(token):
    from fractions import Fraction

    try:
        return float(Fraction(token.strip()))
    except (ValueError, ZeroDivisionError):
        raise InvalidArgument(f"cannot parse number {token!r}") from None


@dataclass(frozen=True)
class SweepConfig:
    """Grid of ``(h, p, t, theta)`` points and the shared experiment settings.

    ``thetas`` are angle expressions (see :func:`parse_angle`) so that
    ``"pi/t"`` and ``"2pi/t"`` follow the group order.  ``b_pixels`` is the
    translation in pixels of the grid being measured.  ``n = 0`` means
    ``round(1/h)`` (unit-size images).
    """

    hs: tuple = (1 / 64,)
    ps: tuple = (3,)
    ts: tuple = (4,)
    thetas: tuple = ("2pi/t",)
    b_pixels: tuple = (0.0, 0.0)
    n: int = 0
    seed_field: int = 0
    seed_filter: int = 0
    repetitions: int = 1
    margin: int = -1
    channels: tuple = (1, 2, 2, 1)
    activation: str = "relu"
    target: str = "output"
    field_terms: int = 6
    field_freq: float = 0.0
    exact_input: bool = True
    layer_kind: str = "lifting"
    filters: str = "random"
    reference: str = "warp"
    max_points: int = 400

    KEYS = {
        "h": "hs", "p": "ps", "t": "ts", "theta": "thetas", "b": "b_pixels",
        "n": "n", "seed_field": "seed_field", "seed_filter": "seed_filter",
        "repetitions": "repetitions", "margin": "margin", "channels": "channels",
        "activation": "activation", "target": "target", "field_terms": "field_terms",
        "field_freq": "field_freq", "exact_input": "exact_input", "layer_kind": "layer_kind",
        "filters": "filters", "reference": "reference", "max_points": "max_points",
    }

    def __post_init__(self):
        for p in self.ps:
            check_odd(p, "filter size p")
        for t in self.ts:
            check_positive_int(t, "group order t")
        if not self.hs or not self.ps or not self.ts or not self.thetas:
            raise InvalidArgument("sweep lists must be non-empty")
        if self.activation not in ("relu", "none"):
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        if self.target not in ("output", "features"):
            raise InvalidArgument(f"unknown target {self.target!r}")
        if self.filters not in ("random", "zero"):
            raise InvalidArgument(f"unknown filter initialisation {self.filters!r}")
        if self.reference not in ("warp", "exact"):
            raise InvalidArgument(f"unknown reference {self.reference!r}")
        if self.reference == "exact" and not self.exact_input:
            raise InvalidArgument("the exact reference needs exact_input=true")
        if self.layer_kind != "lifting":
            raise InvalidArgument("commutation bounds are evaluated for the lifting layer only")
        check_positive_int(self.repetitions, "repetitions")
        if len(self.b_pixels) != 2:
            raise InvalidArgument("b needs two components")

    @classmethod
    def from_mapping(cls, items):
        """Build from string ``key=value`` pairs; unknown keys raise InvalidArgument naming the key."""
        kw = {}
        for key, raw in items.items():
            if key not in cls.KEYS:
                raise InvalidArgument(f"unknown sweep config key {key!r}")
            name = cls.KEYS[key]
            parts = [s for s in raw.split(",") if s.strip()]
            if name == "hs":
                kw[name] = tuple(_parse_real(s) for s in parts)
            elif name in ("ps", "ts", "channels"):
                kw[name] = tuple(int(s) for s in parts)
            elif name == "thetas":
                kw[name] = tuple(s.strip() for s in parts)
            elif name == "b_pixels":
                kw[name] = tuple(_parse_real(s) for s in parts)
            elif name in ("n", "seed_field", "seed_filter", "repetitions", "margin", "field_terms", "max_points"):
                kw[name] = int(raw)
            elif name == "field_freq":
                kw[name] = _parse_real(raw)
            elif name == "exact_input":
                kw[name] = raw.strip().lower() in ("1", "true", "yes")
            else:
                kw[name] = raw.strip()
        return cls(**kw)

    def to_mapping(self):
        def fmt(v):
            if isinstance(v, tuple):
                return ",".join(fmt(x) for x in v)
            if isinstance(v, bool):
                return "true" if v else "false"
            return repr(v) if isinstance(v, float) else str(v)

        return {key: fmt(getattr(self, name)) for key, name in self.KEYS.items()}

    def points(self):
        out = []
        for rep in range(self.repetitions):
            for h in self.hs:
                for p in self.ps:
                    for t in self.ts:
                        for expr in self.thetas:
                            out.append((rep, h, p, t, expr))
        return out


@dataclass(frozen=True)
class SweepRecord:
    h: float
    p: int
    t: int
    n: int
    theta: float
    b1: float
    b2: float
    layer_kind: str
    err_commutation: float
    err_equivariance: float
    bound_remark2: float
    bound_thm1: float
    C: float
    C1: float
    C2: float
    F_script: float
    seed_field: int
    seed_filter: int
    theta_expr: str = dc_field(default="", compare=False)
    rep: int = dc_field(default=0, compare=False)

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]

    @property
    def in_group(self):
        k = self.theta * self.t / (2 * math.pi)
        return abs(k - round(k)) < 1e-9


@dataclass(frozen=True)
class SweepResult:
    records: list
    slope_h: object
    slope_t: object


def sweep_field(cfg, seed):
    freq = cfg.field_freq if cfg.field_freq > 0 else 1.0 / (8.0 * max(cfg.hs))
    return LatentField.random_bandlimited(seed, n_terms=cfg.field_terms, max_freq=freq)


def build_network(cfg, t, p, h, seed):
    spec = EquivNetSpec.random(t, p, h, channels=cfg.channels, seed=seed)
    if cfg.filters == "zero":
        banks = tuple(
            FilterBank.zeros(b.layer_kind, b.in_channels, b.out_channels, t, p, h) for b in spec.banks
        )
        spec = EquivNetSpec(banks, spec.activations)
    if cfg.activation == "none":
        spec = EquivNetSpec(spec.banks, ("none",) * spec.N)
    return spec


def _measure(cfg, point):
    rep, h, p, t, expr = point
    n = cfg.n if cfg.n > 0 else int(round(1.0 / h))
    theta = parse_angle(expr, t)
    b = (cfg.b_pixels[0] * h, cfg.b_pixels[1] * h)
    f = AffineTransform(theta, b)
    seed_field = cfg.seed_field + rep
    seed_filter = cfg.seed_filter + rep
    field = sweep_field(cfg, seed_field)
    img = make_grid_image(field, n, h, cfg.channels[0])
    spec = build_network(cfg, t, p, h, seed_filter)
    exact = field if cfg.exact_input else None
    margin = None if cfg.margin < 0 else cfg.margin
    err_c = commutation_error(spec.banks[0], img, f, margin, exact, cfg.reference, cfg.max_points)
    err_e = equivariance_error(
        spec, img, f, margin, exact, cfg.target, cfg.reference, cfg.max_points
    )
    # feature-map targets are produced by every layer but the projection
    banks = spec.banks if cfg.target == "output" else spec.banks[:-1]
    layer_b = [bank_bounds(bk) for bk in banks]
    widths = spec.effective_channels()[: len(banks)]
    consts = compute_constants(widths, field.bounds(), layer_b, n, n, p)
    return SweepRecord(
        h=float(h), p=int(p), t=int(t), n=int(n), theta=float(theta),
        b1=float(b[0]), b2=float(b[1]), layer_kind=cfg.layer_kind,
        err_commutation=err_c, err_equivariance=err_e,
        bound_remark2=remark2_bound(consts.C, p, h, t, "lifting"),
        bound_thm1=theorem1_bound(consts, h, p, t),
        C=consts.C, C1=consts.C1, C2=consts.C2, F_script=consts.F_script,
        seed_field=seed_field, seed_filter=seed_filter, theta_expr=expr, rep=rep,
    )


def _median_by(records, key):
    groups = {}
    for r in records:
        groups.setdefault(key(r), []).append(r)
    return groups


def scaling_slopes(records):
    """``(slope_h, slope_t)``; ``None`` where a fit is undefined.

    ``slope_h`` fits in-group equivariance errors against ``h`` (one group
    per ``(p, t, theta)``; the median slope over groups is reported).
    ``slope_t`` fits off-group errors minus the floor against ``t`` at fixed
    ``(h, p)``; the floor is the error at the quarter turn ``theta = pi/2``
    for the same ``(h, p, t)`` when that angle is in-group and measured, else 0.
    """
    def fit(xs, ys):
        try:
            return fit_slope(xs, ys)
        except InvalidArgument:
            return None

    h_slopes = []
    ingroup = [r for r in records if r.in_group and r.theta != 0.0]
    for _, grp in sorted(_median_by(ingroup, lambda r: (r.p, r.t, r.theta_expr)).items()):
        by_h = _median_by(grp, lambda r: r.h)
        hs = sorted(by_h)
        ys = [float(np.median([r.err_equivariance for r in by_h[h]])) for h in hs]
        s = fit(hs, ys)
        if s is not None:
            h_slopes.append(s)
    slope_h = float(np.median(h_slopes)) if h_slopes else None

    floors = {}
    for r in records:
        if r.in_group and abs(r.theta - math.pi / 2) < 1e-12:
            floors.setdefault((r.h, r.p, r.t), []).append(r.err_equivariance)
    t_slopes = []
    offgroup = [r for r in records if not r.in_group]
    for _, grp in sorted(_median_by(offgroup, lambda r: (r.h, r.p, r.theta_expr)).items()):
        by_t = _median_by(grp, lambda r: r.t)
        ts = sorted(by_t)
        ys = []
        for t in ts:
            floor = float(np.median(floors.get((grp[0].h, grp[0].p, t), [0.0])))
            ys.append(float(np.median([r.err_equivariance for r in by_t[t]])) - floor)
        s = fit(ts, ys)
        if s is not None:
            t_slopes.append(s)
    slope_t = float(np.median(t_slopes)) if t_slopes else None
    return slope_h, slope_t


def run_sweep(cfg, threads=None):
    records = ordered_map(lambda pt: _measure(cfg, pt), cfg.points(), threads)
    slope_h, slope_t = scaling_slopes(records)
    return SweepResult(records, slope_h, slope_t)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_csv(result, cfg=None):
    """CSV text: header, one row per record, then ``#`` summary lines."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in result.records:
        w.writerow([_fmt(v) for v in r.row()])
    for name, value in (("slope_h", result.slope_h), ("slope_t", result.slope_t)):
        buf.write(f"# {name}={'undefined' if value is None else repr(value)}\n")
    if cfg is not None:
        for key, value in cfg.to_mapping().items():
            buf.write(f"# config {key}={value}\n")
    return buf.getvalue()
