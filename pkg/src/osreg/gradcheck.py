"""Finite-difference verification of every differentiable operation.

Each registered operation pairs its analytic backward pass against
central finite differences (step 1e-5) in f64.  The relative error uses
denominator max(|analytic|, |numeric|, 1e-8); anything at or above 1e-6
fails.  Composite blocks (attention, fusion, losses) run fewer trials
than the tensor primitives because their finite-difference sweeps cost
quadratically more.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, precision

FD_STEP = 1e-5
TOLERANCE = 1e-6
PRIMITIVE_TRIALS = 50
COMPOSITE_TRIALS = 8


def _fd_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def _max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic is None:
        raise ad.GraphError("missing analytic gradient")
    denom = np.maximum.reduce([np.abs(analytic), np.abs(numeric), np.full_like(numeric, 1e-8)])
    return float(np.max(np.abs(analytic - numeric) / denom)) if numeric.size else 0.0


@dataclass
class OpCheck:
    name: str
    trials: int
    make: object  # rng -> (build, arrays); build(*tensors) -> scalar Tensor


def _check_op(op: OpCheck, seed: int, perturb: bool = False) -> float:
    worst = 0.0
    with precision("f64"):
        for trial in range(op.trials):
            rng = np.random.default_rng([seed, zlib.crc32(op.name.encode()), trial])
            build, arrays = op.make(rng)
            tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
            backward(build(*tensors))
            for i, t in enumerate(tensors):
                analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
                if perturb and i == 0:
                    analytic = analytic + 1e-3

                def value():
                    probes = [Tensor(a) for a in arrays]
                    return float(np.sum(build(*probes).data))

                numeric = _fd_grad(value, arrays[i])
                worst = max(worst, _max_rel_err(analytic, numeric))
    return worst


def _arr(rng, *shape):
    return rng.normal(size=shape)


def _registry() -> list[OpCheck]:
    from .backbone import instance_norm
    from .enhance import attn_block, attn_core, fuse, init_attn_params, init_tafe_params
    from .losses import LossConfig, fine_loss, focal_coarse_loss
    from .matching import localize

    ops: list[OpCheck] = []

    def prim(name, make):
        ops.append(OpCheck(name, PRIMITIVE_TRIALS, make))

    def comp(name, make):
        ops.append(OpCheck(name, COMPOSITE_TRIALS, make))

    prim("matmul", lambda rng: (lambda a, b: ad.tsum(ad.matmul(a, b) * ad.matmul(a, b)),
                                [_arr(rng, 3, 4), _arr(rng, 4, 2)]))
    prim("matmul_batched", lambda rng: (lambda a, b: ad.tsum(ad.matmul(a, b)),
                                        [_arr(rng, 2, 3, 4), _arr(rng, 4, 3)]))
    prim("conv2d", lambda rng: (
        lambda x, k: ad.tsum(ad.mul(ad.conv2d(x, k, stride=2, pad=1), ad.conv2d(x, k, stride=2, pad=1))),
        [_arr(rng, 2, 6, 6), _arr(rng, 2, 2, 3, 3)],
    ))
    prim("softmax", lambda rng: (
        (lambda x, w: ad.tsum(ad.softmax(x, axis=1) * w)),
        [_arr(rng, 3, 5), _arr(rng, 3, 5)],
    ))
    prim("add", lambda rng: (lambda a, b: ad.tsum(ad.add(a, b) * ad.add(a, b)),
                             [_arr(rng, 3, 4), _arr(rng, 1, 4)]))
    prim("mul", lambda rng: (lambda a, b: ad.tsum(ad.mul(a, b) * 1.5), [_arr(rng, 3, 3), _arr(rng, 3, 3)]))
    prim("div", lambda rng: (lambda a, b: ad.tsum(ad.div(a, ad.add_scalar(ad.mul(b, b), 1.0))),
                             [_arr(rng, 2, 3), _arr(rng, 2, 3)]))
    prim("relu", lambda rng: (lambda a: ad.tsum(ad.mul(ad.relu(a), a)), [_arr(rng, 4, 4) + 0.05]))
    prim("concat", lambda rng: (
        lambda a, b: ad.tsum(ad.mul(ad.concat([a, b], axis=1), ad.concat([a, b], axis=1))),
        [_arr(rng, 2, 3), _arr(rng, 2, 2)],
    ))
    prim("slice_window", lambda rng: (
        lambda a: ad.tsum(ad.scale(ad.slice_window(a, (1, 0), (2, 3)), 2.0)),
        [_arr(rng, 4, 3)],
    ))
    prim("l2_normalize", lambda rng: (
        lambda a, w: ad.tsum(ad.l2_normalize(a, axis=1) * w),
        [_arr(rng, 3, 4), _arr(rng, 3, 4)],
    ))
    prim("scale", lambda rng: (lambda a: ad.tsum(ad.scale(a, -2.5) * a), [_arr(rng, 3, 3)]))
    prim("exp", lambda rng: (lambda a: ad.tsum(ad.exp(ad.scale(a, 0.5))), [_arr(rng, 3, 3)]))
    prim("log", lambda rng: (lambda a: ad.tsum(ad.log(ad.add_scalar(ad.mul(a, a), 1.2))), [_arr(rng, 3, 3)]))
    prim("sqrt", lambda rng: (lambda a: ad.tsum(ad.sqrt(ad.add_scalar(ad.mul(a, a), 1.0))), [_arr(rng, 3, 3)]))
    prim("pow_const", lambda rng: (
        lambda a: ad.tsum(ad.pow_const(ad.add_scalar(ad.mul(a, a), 0.5), 1.7)),
        [_arr(rng, 3, 3)],
    ))
    prim("clamp", lambda rng: (lambda a: ad.tsum(ad.mul(ad.clamp(a, -0.6, 0.6), a)), [_arr(rng, 4, 4)]))
    prim("sum", lambda rng: (lambda a: ad.tsum(ad.mul(ad.tsum(a, axis=1, keepdims=True), a)), [_arr(rng, 3, 4)]))
    prim("mean", lambda rng: (lambda a: ad.tsum(ad.mul(ad.tmean(a, axis=0, keepdims=True), a)), [_arr(rng, 3, 4)]))
    prim("transpose", lambda rng: (lambda a: ad.tsum(ad.scale(ad.transpose(a, (1, 0)), 1.5)), [_arr(rng, 3, 4)]))
    prim("reshape", lambda rng: (lambda a: ad.tsum(ad.mul(ad.reshape(a, (6,)), ad.reshape(a, (6,)))), [_arr(rng, 2, 3)]))
    prim("take_flat", lambda rng: (
        lambda a: ad.tsum(ad.scale(ad.take_flat(a, np.array([0, 3, 3, 5])), 2.0)),
        [_arr(rng, 2, 3)],
    ))
    prim("take_rows", lambda rng: (
        lambda a: ad.tsum(ad.scale(ad.take_rows(a, np.array([[0, 2], [2, 1]])), 1.5)),
        [_arr(rng, 3, 4)],
    ))
    prim("upsample_nearest", lambda rng: (
        lambda a: ad.tsum(ad.mul(ad.upsample_nearest(a, 2), ad.upsample_nearest(a, 2))),
        [_arr(rng, 2, 3, 3)],
    ))
    prim("instance_norm", lambda rng: (
        lambda x, g, b, w: ad.tsum(instance_norm(x, g, b) * w),
        [_arr(rng, 2, 4, 4), _arr(rng, 2, 1, 1), _arr(rng, 2, 1, 1), _arr(rng, 2, 4, 4)],
    ))
    prim("layer_norm", lambda rng: (
        lambda x, g, b, w: ad.tsum(ad.layer_norm(x, g, b) * w),
        [_arr(rng, 3, 6), _arr(rng, 6), _arr(rng, 6), _arr(rng, 3, 6)],
    ))

    def make_attention(block: bool):
        def make(rng):
            d, heads = 4, 2
            p = init_attn_params(rng, d, 2, "op")
            names = sorted(p)
            w = _arr(rng, 3, d)

            def build(fq, fk, *ws):
                ps = dict(zip(names, ws))
                fn = attn_block if block else attn_core
                return ad.tsum(fn(fq, fk, ps, "op", heads) * Tensor(w))

            return build, [_arr(rng, 3, d), _arr(rng, 5, d)] + [p[n].data.astype(np.float64) for n in names]

        return make

    comp("attention_core", make_attention(block=False))
    comp("attention_block", make_attention(block=True))

    def make_fusion(rng):
        from .enhance import EnhanceConfig

        cfg = EnhanceConfig(d_c=4)
        p = init_tafe_params(cfg, rng)
        keys = sorted(k for k in p if k.startswith("tafe/fuse."))
        w = _arr(rng, 3, 4)

        def build(cv, ct, *ws):
            ps = dict(zip(keys, ws))
            return ad.tsum(fuse(cv, ct, ps) * Tensor(w))

        # random biases: zero-init ones park dead rows exactly on the next
        # ReLU kink, where finite differences are undefined
        values = []
        for k in keys:
            base = p[k].data.astype(np.float64)
            values.append(0.3 * _arr(rng, *base.shape) if k.endswith(("b1", "b2", "b3")) else base)
        return build, [_arr(rng, 3, 4), _arr(rng, 3, 4)] + values

    comp("mlp_fusion", make_fusion)

    def make_focal(rng):
        cfg = LossConfig()
        pos = np.array([[0, 0], [1, 2]])
        neg = np.array([[0, 1], [2, 2], [1, 0]])

        def build(logits):
            p = ad.mul(ad.softmax(logits, axis=0), ad.softmax(logits, axis=1))
            return focal_coarse_loss(p, pos, neg, cfg)

        return build, [_arr(rng, 3, 3)]

    comp("focal_loss", make_focal)

    def make_fine_loss(rng):
        targets = _arr(rng, 4, 2)
        weights = np.abs(_arr(rng, 4)) + 0.2
        valid = np.array([0, 1, 3])

        def build(preds):
            return fine_loss(preds, targets, weights, valid)[0]

        return build, [_arr(rng, 4, 2)]

    comp("fine_loss", make_fine_loss)

    def make_localize(rng):
        def build(logits):
            heat = ad.softmax(logits, axis=1)
            return ad.tsum(localize(heat, 3).offsets)

        return build, [_arr(rng, 2, 9)]

    comp("fine_localize", make_localize)

    return ops


def registered_ops() -> list[str]:
    return [op.name for op in _registry()]


def run(seed: int = 0, perturb_op: str | None = None) -> dict[str, float]:
    """Worst relative gradient error per registered operation.

    ``perturb_op`` deliberately corrupts one op's analytic gradient; the
    checker must then flag it (negative-control hook for the harness).
    """
    results = {}
    for op in _registry():
        results[op.name] = _check_op(op, seed, perturb=(op.name == perturb_op))
    return results


def report(results: dict[str, float], tolerance: float = TOLERANCE) -> tuple[str, bool]:
    lines = []
    all_ok = True
    for name, err in results.items():
        ok = err < tolerance
        all_ok &= ok
        lines.append(f"{'PASS' if ok else 'FAIL'} {name:20s} max_rel_err={err:.3e}")
    lines.append(f"{'PASS' if all_ok else 'FAIL'} overall ({len(results)} operations, tolerance {tolerance:g})")
    return "\n".join(lines), all_ok
