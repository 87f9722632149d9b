"""Kolmogorov-Arnold layers with per-edge B-spline activations, and Tok-KAN."""
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .nn import Conv2d, LayerNorm, Module, param
from .tensor import Tensor, reshape, silu, transpose


@dataclass(frozen=True)
class BSplineGrid:
    """Clamped uniform knot grid: ``order`` is the spline degree, ``intervals`` the span count."""

    order: int = 3
    intervals: int = 5
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.order < 1 or self.intervals < 1:
            raise ConfigError(f"B-spline grid needs order >= 1 and intervals >= 1, got "
                              f"order={self.order}, intervals={self.intervals}")
        if not self.hi > self.lo:
            raise ConfigError(f"empty spline domain [{self.lo}, {self.hi}]")

    @property
    def num_basis(self):
        return self.intervals + self.order

    @property
    def knots(self):
        inner = np.linspace(self.lo, self.hi, self.intervals + 1)
        return np.concatenate([[self.lo] * self.order, inner, [self.hi] * self.order])


def bspline_basis(x, grid):
    """Basis matrix (len(x), G + k) for a real vector ``x``; values are clamped to the domain."""
    from . import kernels

    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return kernels.bspline_basis(x, grid.knots, grid.order)[0]


class KanLayer(Module):
    """``out[l, j] = sum_i base_weight[j, i] * silu(x[l, i]) + coeffs[j, i, :] . B(x[l, i])``."""

    def __init__(self, in_dim, out_dim, rng, grid=None):
        self.grid = grid or BSplineGrid()
        self.in_dim = in_dim
        self.out_dim = out_dim
        nb = self.grid.num_basis
        self.spline_coeffs = param(rng.normal(0.0, 0.1 / np.sqrt(nb), (out_dim, in_dim, nb)))
        self.base_weight = param(rng.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim))
        self._knots = self.grid.knots

    def forward(self, tokens):
        return kan_layer_forward(tokens, self)


def kan_layer_forward(tokens, layer):
    if tokens.shape[-1] != layer.in_dim:
        raise ShapeError(f"KAN layer expects feature dim {layer.in_dim}, got tokens {tokens.shape}")
    lead = tokens.shape[:-1]
    nb = layer.grid.num_basis
    base = silu(tokens) @ transpose(layer.base_weight, None)
    basis = F.bspline_basis(tokens, layer._knots, layer.grid.order)
    basis = reshape(basis, lead + (layer.in_dim * nb,))
    coeffs = reshape(layer.spline_coeffs, (layer.out_dim, layer.in_dim * nb))
    return base + basis @ transpose(coeffs, None)


def patchify(x, p):
    """(N, C, H, W) array -> (N, L, C*p*p) patches in row-major patch order."""
    n, c, h, w = x.shape
    x = x.reshape(n, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(n, (h // p) * (w // p), c * p * p)


def unpatchify(tokens, c, h, w, p):
    """Inverse of :func:`patchify`."""
    n = tokens.shape[0]
    x = tokens.reshape(n, h // p, w // p, c, p, p).transpose(0, 3, 1, 4, 2, 5)
    return x.reshape(n, c, h, w)


class PatchEmbed(Module):
    """P x P convolution with stride P, flattened to (N, L, D_e) tokens."""

    def __init__(self, in_ch, embed_dim, patch, rng):
        self.patch = patch
        self.embed_dim = embed_dim
        self.proj = Conv2d(in_ch, embed_dim, patch, rng, stride=patch, padding=0, bias=True)

    def forward(self, x):
        return patch_embed(x, self)


def patch_embed(x, embed):
    p = embed.patch
    n, c, h, w = x.shape
    if h % p or w % p:
        raise ShapeError(f"feature map {h}x{w} is not divisible by patch size P={p}")
    f = embed.proj(x)  # (N, D, H/P, W/P)
    d = f.shape[1]
    return transpose(reshape(f, (n, d, (h // p) * (w // p))), (0, 2, 1))


def tokens_to_map(tokens, h, w):
    """(N, L, D) tokens, row-major over an h x w grid -> (N, D, h, w)."""
    n, l, d = tokens.shape
    if l != h * w:
        raise ShapeError(f"{l} tokens cannot form a {h}x{w} grid")
    return reshape(transpose(tokens, (0, 2, 1)), (n, d, h, w))


class TokKanBlock(Module):
    """Patch embedding followed by pre-normalized residual KAN layers.

    Each layer computes ``t <- t + KAN(LayerNorm(t))``.
    """

    def __init__(self, in_ch, embed_dim, patch, rng, n_layers=1, grid=None):
        self.patch = patch
        self.embed_dim = embed_dim
        self.embed = PatchEmbed(in_ch, embed_dim, patch, rng)
        self.norms = [LayerNorm(embed_dim) for _ in range(n_layers)]
        self.layers = [KanLayer(embed_dim, embed_dim, rng, grid) for _ in range(n_layers)]

    def forward(self, x):
        return tok_kan_forward(x, self)


def tok_kan_forward(x, block):
    n, c, h, w = x.shape
    t = patch_embed(x, block.embed)
    for norm, layer in zip(block.norms, block.layers):
        t = t + kan_layer_forward(norm(t), layer)
    return tokens_to_map(t, h // block.patch, w // block.patch)
