"""Central finite-difference checks of every differentiable kernel.

Relative error per entry is ``|a - n| / max(|a|, |n|, 1e-6)``; the floor
keeps entries whose true gradient is ~0 from dominating (their absolute
error is then judged against 1e-6).
"""
import time
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ContractError
from .gl_trans import GLTransBlock
from .kan import BSplineGrid, KanLayer, TokKanBlock, kan_layer_forward, tok_kan_forward
from .model import ModelConfig, build
from .tensor import Tensor, precision

OP_TOL = 1e-4
MODEL_TOL = 1e-3
REL_FLOOR = 1e-6


def rel_error(analytic, numeric, floor=REL_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(fn, tensor, indices, h=1e-4):
    """Central differences of scalar ``fn()`` w.r.t. ``tensor`` at flat ``indices``."""
    flat = tensor.data.reshape(-1)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        out[j] = (fp - fm) / (2 * h)
    return out


def check(fn, tensors, h=1e-4, max_entries=None, rng=None):
    """Max relative error over (a sample of) the entries of every tensor in ``tensors``.

    ``tensors`` maps names to leaf tensors with ``requires_grad``. When
    ``max_entries`` is set, that many entries are drawn uniformly across all
    tensors together.
    """
    for t in tensors.values():
        if t.data.dtype != np.float64:
            raise ContractError("finite-difference checks need float64 tensors")
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1).copy()
                for k, t in tensors.items()}
    picks = {k: np.arange(t.size) for k, t in tensors.items()}
    if max_entries is not None:
        rng = rng or np.random.default_rng(0)
        pool = [(k, i) for k, t in tensors.items() for i in range(t.size)]
        chosen = rng.choice(len(pool), size=min(max_entries, len(pool)), replace=False)
        picks = {k: [] for k in tensors}
        for c in sorted(chosen):
            picks[pool[c][0]].append(pool[c][1])
    worst = {}
    for k, t in tensors.items():
        idx = list(picks[k])
        if not idx:
            continue
        num = numeric_grad(fn, t, idx, h)
        worst[k] = float(rel_error(analytic[k][idx], num).max())
    for t in tensors.values():
        t.grad = None
    return worst


@dataclass
class GradResult:
    name: str
    max_rel_err: float
    tol: float
    seconds: float

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted(out, w):
    return (out * w).sum()


def case_conv2d(rng):
    x, w, b = _t(rng, 2, 3, 6, 6), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    r = rng.standard_normal((2, 4, 3, 3))
    r1 = rng.standard_normal((2, 4, 6, 6))
    res = check(lambda: _weighted(F.conv2d(x, w, b, stride=2), r), {"x": x, "w": w, "b": b})
    res1 = check(lambda: _weighted(F.conv2d(x, w, b), r1), {"x": x, "w": w, "b": b})
    return max(max(res.values()), max(res1.values()))


def case_conv1x1(rng):
    x, w = _t(rng, 2, 3, 4, 4), _t(rng, 5, 3, 1, 1)
    r = rng.standard_normal((2, 5, 4, 4))
    return max(check(lambda: _weighted(F.conv2d(x, w), r), {"x": x, "w": w}).values())


def case_depthwise(rng):
    x, w = _t(rng, 2, 3, 5, 5), _t(rng, 3, 1, 3, 3)
    r = rng.standard_normal((2, 3, 5, 5))
    return max(check(lambda: _weighted(F.depthwise_conv2d(x, w), r), {"x": x, "w": w}).values())


def case_batchnorm(rng):
    x, g, b = _t(rng, 2, 3, 4, 4), _t(rng, 3), _t(rng, 3)
    rm, rv = np.zeros(3), np.ones(3)
    r = rng.standard_normal((2, 3, 4, 4))
    tr = check(lambda: _weighted(F.batch_norm2d(x, g, b, rm, rv, True), r), {"x": x, "g": g, "b": b})
    rm2, rv2 = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
    ev = check(lambda: _weighted(F.batch_norm2d(x, g, b, rm2, rv2, False), r), {"x": x, "g": g, "b": b})
    return max(max(tr.values()), max(ev.values()))


def case_layernorm(rng):
    x, g, b = _t(rng, 2, 5, 6), _t(rng, 6), _t(rng, 6)
    r = rng.standard_normal((2, 5, 6))
    return max(check(lambda: _weighted(F.layer_norm(x, g, b), r), {"x": x, "g": g, "b": b}).values())


def case_softmax(rng):
    x = _t(rng, 2, 5, 5, scale=2.0)
    r = rng.standard_normal((2, 5, 5))
    return max(check(lambda: _weighted(F.softmax_rows(x), r), {"x": x}).values())


def case_upsample(rng):
    x = _t(rng, 2, 3, 3, 4)
    r = rng.standard_normal((2, 3, 6, 8))
    return max(check(lambda: _weighted(F.upsample_bilinear2x(x), r), {"x": x}).values())


def case_cross_entropy(rng):
    x = _t(rng, 2, 2, 4, 4)
    y = rng.integers(0, 2, (2, 4, 4))
    return max(check(lambda: F.cross_entropy(x, y), {"x": x}).values())


def case_composite(rng):
    """conv2d -> batchnorm -> softmax -> cross-entropy on a 1x2x4x4 input."""
    x, w = _t(rng, 1, 2, 4, 4), _t(rng, 2, 2, 3, 3)
    g, b = _t(rng, 2), _t(rng, 2)
    rm, rv = np.zeros(2), np.ones(2)
    y = rng.integers(0, 2, (1, 4, 4))

    def fn():
        h = F.batch_norm2d(F.conv2d(x, w), g, b, rm, rv, True)
        p = F.softmax(h, axis=1)
        return F.cross_entropy(p, y)

    return max(check(fn, {"x": x, "w": w, "g": g, "b": b}).values())


def case_kan_layer(rng):
    layer = KanLayer(3, 4, rng, BSplineGrid())
    x = _t(rng, 5, 3, scale=0.5)
    r = rng.standard_normal((5, 4))
    params = {"x": x, "base": layer.base_weight, "coef": layer.spline_coeffs}
    return max(check(lambda: _weighted(kan_layer_forward(x, layer), r), params).values())


def case_tok_kan(rng):
    block = TokKanBlock(2, 3, 2, rng)
    x = _t(rng, 1, 2, 4, 4)
    r = rng.standard_normal((1, 3, 2, 2))
    params = {"x": x, **dict(block.named_parameters())}
    return max(check(lambda: _weighted(tok_kan_forward(x, block), r), params).values())


def case_gl_trans(rng):
    block = GLTransBlock(2, 3, 3, rng, token_dim=3, head_dim=2)
    block.theta.data[...] = rng.standard_normal(block.theta.shape) * 0.5
    x = _t(rng, 1, 2, 3, 3)
    r = rng.standard_normal((1, 2, 3, 3))
    params = {"x": x, **dict(block.named_parameters())}
    return max(check(lambda: _weighted(block(x), r), params).values())


def case_model(rng):
    cfg = ModelConfig(encoder_channels=(4, 8), tokkan_dims=(8, 8), input_size=(8, 8), seed=3)
    model = build(cfg)
    model.train()
    x = rng.standard_normal((2, 3, 8, 8))
    y = rng.integers(0, 2, (2, 8, 8))
    params = dict(model.named_parameters())
    res = check(lambda: F.cross_entropy(model(x), y), params, max_entries=50, rng=rng)
    return max(res.values())


SUITE = [
    ("conv2d", case_conv2d, OP_TOL),
    ("conv2d_1x1", case_conv1x1, OP_TOL),
    ("depthwise_conv2d", case_depthwise, OP_TOL),
    ("batchnorm2d", case_batchnorm, OP_TOL),
    ("layer_norm", case_layernorm, OP_TOL),
    ("softmax_rows", case_softmax, OP_TOL),
    ("bilinear_upsample2x", case_upsample, OP_TOL),
    ("cross_entropy", case_cross_entropy, OP_TOL),
    ("conv_bn_softmax_ce", case_composite, OP_TOL),
    ("kan_layer", case_kan_layer, OP_TOL),
    ("tok_kan_block", case_tok_kan, OP_TOL),
    ("gl_trans_block", case_gl_trans, OP_TOL),
    ("toy_model", case_model, MODEL_TOL),
]


def run_suite(seed=0, names=None):
    """Run every registered check in float64; returns a list of :class:`GradResult`."""
    results = []
    with precision("f64"):
        for name, fn, tol in SUITE:
            if names and name not in names:
                continue
            t0 = time.perf_counter()
            err = fn(np.random.default_rng([seed, len(results)]))
            results.append(GradResult(name, err, tol, time.perf_counter() - t0))
    return results
