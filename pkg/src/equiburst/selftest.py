"""Compact self-check of the main properties, used by ``equiburst selftest``."""

import math

import numpy as np

from .align import estimate_transform
from .conv import group_conv, lift_conv, project_conv
from .filters import FilterBank
from .fusion import MdtaParams, mdta_attention
from .grid import GroupFeatureMap, Image, LatentField, make_grid_image
from .meter import SweepConfig, run_sweep
from .transforms import AffineTransform, invert, warp_image


def _offsets(p):
    r = (p - 1) // 2
    return [(a, b, a - r, b - r) for a in range(p) for b in range(p)]


def _naive_lift(img, bank):
    K = bank.kernel_stack()[:, 0]
    H, W, C = img.shape
    out = np.zeros((H, W, bank.t, bank.out_channels))
    for i in range(H):
        for j in range(W):
            for a, b, da, db in _offsets(bank.p):
                si, sj = i - da, j - db
                if 0 <= si < H and 0 <= sj < W:
                    out[i, j] += np.einsum("c,kcd->kd", img.data[si, sj], K[..., a, b])
    return out


def _naive_group(x, bank):
    K = bank.kernel_stack()
    H, W, t, C = x.shape
    out = np.zeros((H, W, t, bank.out_channels))
    for i in range(H):
        for j in range(W):
            for B in range(t):
                for A in range(t):
                    for a, b, da, db in _offsets(bank.p):
                        si, sj = i - da, j - db
                        if 0 <= si < H and 0 <= sj < W:
                            out[i, j, B] += x.data[si, sj, (A + B) % t] @ K[B, A, :, :, a, b]
    return out


def _naive_project(x, bank):
    K = bank.kernel_stack()[:, 0]
    H, W, t, C = x.shape
    out = np.zeros((H, W, bank.out_channels))
    for i in range(H):
        for j in range(W):
            for B in range(t):
                for a, b, da, db in _offsets(bank.p):
                    si, sj = i - da, j - db
                    if 0 <= si < H and 0 <= sj < W:
                        out[i, j] += x.data[si, sj, B] @ K[B, :, :, a, b]
    return out


def _rel(a, b):
    scale = max(np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


def check_oracles():
    rng = np.random.default_rng(11)
    worst = 0.0
    for t in (1, 2, 4):
        img = Image(rng.standard_normal((6, 6, 2)), 0.25)
        fm = GroupFeatureMap(rng.standard_normal((6, 6, t, 2)), 0.25)
        lift = FilterBank.random("lifting", 2, 2, t, 3, 0.25, seed=t)
        mid = FilterBank.random("intermediate", 2, 2, t, 3, 0.25, seed=t + 10)
        proj = FilterBank.random("projection", 2, 2, t, 3, 0.25, seed=t + 20)
        worst = max(worst, _rel(lift_conv(img, lift).data, _naive_lift(img, lift)))
        worst = max(worst, _rel(group_conv(fm, mid).data, _naive_group(fm, mid)))
        worst = max(worst, _rel(project_conv(fm, proj).data, _naive_project(fm, proj)))
    return worst <= 1e-12, f"max relative error {worst:.3e}"


def check_bounds():
    cfg = SweepConfig(hs=(1 / 64,), ps=(3,), ts=(4, 8), thetas=("2pi/t",), repetitions=2)
    res = run_sweep(cfg)
    ok = all(r.err_commutation <= r.bound_remark2 for r in res.records)
    ok = ok and all(r.err_equivariance <= r.bound_thm1 for r in res.records)
    worst = max(r.err_commutation / r.bound_remark2 for r in res.records)
    return ok, f"{len(res.records)} records, worst error/bound {worst:.3e}"


def check_alignment():
    errs = []
    for k in range(4):
        rng = np.random.default_rng(500 + k)
        field = LatentField.random_bandlimited(k, n_terms=8, max_freq=3.0)
        th = math.radians(rng.uniform(-5, 5))
        b = rng.uniform(-3, 3, 2) / 64
        ref = make_grid_image(field, 64, 1 / 64)
        frame = make_grid_image(field.transformed(th, b), 64, 1 / 64)
        f, _, _, _ = estimate_transform(ref, frame)
        errs.append((abs(math.degrees(f.theta - th)), float(np.abs(np.subtract(f.b, b)).max() * 64)))
    worst_t = max(e[0] for e in errs)
    worst_b = max(e[1] for e in errs)
    return worst_t <= 0.2 and worst_b <= 0.1, f"worst {worst_t:.4f} deg, {worst_b:.4f} px"


def check_mdta():
    rng = np.random.default_rng(3)
    zj = rng.standard_normal((6, 6, 4))
    z0 = rng.standard_normal((6, 6, 4))
    params = MdtaParams.random(1, 4, seed=5)
    _, attn = mdta_attention(zj, z0, params, 0)
    rows = float(np.abs(attn.sum(axis=1) - 1).max())
    pw = np.array(params.pointwise)
    pw[:, 2] = 0.0
    out, _ = mdta_attention(zj, z0, MdtaParams(pw, params.depthwise), 0)
    return rows <= 1e-6 and np.array_equal(out, zj), f"row-sum deviation {rows:.2e}"


def check_transforms():
    rng = np.random.default_rng(9)
    img = Image(rng.standard_normal((9, 9, 1)), 0.1)
    f = AffineTransform(0.3, (0.05, -0.02))
    ident = warp_image(img, AffineTransform())
    quarter = warp_image(img, AffineTransform(math.pi / 2))
    inv = invert(f)
    ok = np.array_equal(ident.data, img.data)
    ok = ok and np.array_equal(quarter.data[:, :, 0], np.rot90(img.data[:, :, 0], 1))
    ok = ok and abs(inv.theta + f.theta) == 0.0
    return ok, "identity, quarter turn, inverse"


CHECKS = (
    ("oracle-equivalence", check_oracles),
    ("transforms", check_transforms),
    ("bound-soundness", check_bounds),
    ("alignment-recovery", check_alignment),
    ("mdta-invariants", check_mdta),
)


def run_selftest(out=print):
    """Run every check, print one line each and return True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok = all_ok and bool(ok)
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
