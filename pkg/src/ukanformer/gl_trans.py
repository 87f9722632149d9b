"""Global-local transformer decoder block.

Local branch: BN(conv1x1 X) + BN(conv3x3 X).
Global branch: single-head attention over the H*W tokens with a learnable
(L, L) positional bias ``theta`` added to the scaled logits.
The two are summed, refined by a depthwise 3x3 conv, then mixed by a
1x1 conv followed by BN.
"""
import numpy as np

from . import functional as F
from .errors import ResolutionError, ShapeError
from .nn import BatchNorm2d, Conv2d, DepthwiseConv2d, Module, param
from .tensor import reshape, transpose


class GLTransBlock(Module):
    def __init__(self, channels, height, width, rng, token_dim=None, head_dim=None):
        c = channels
        d = token_dim or c
        dk = head_dim or max(c // 2, 1)
        self.channels, self.height, self.width = c, height, width
        self.token_dim, self.head_dim = d, dk
        L = height * width

        self.conv_local_1x1 = Conv2d(c, c, 1, rng)
        self.bn_local_1x1 = BatchNorm2d(c)
        self.conv_local_3x3 = Conv2d(c, c, 3, rng)
        self.bn_local_3x3 = BatchNorm2d(c)

        self.input_proj = param(rng.standard_normal((c, d)) / np.sqrt(c))
        self.w_q = param(rng.standard_normal((d, dk)) / np.sqrt(d))
        self.w_k = param(rng.standard_normal((d, dk)) / np.sqrt(d))
        self.w_v = param(rng.standard_normal((d, dk)) / np.sqrt(d))
        self.theta = param(np.zeros((L, L)))
        self.value_proj_out = param(rng.standard_normal((dk, c)) / np.sqrt(dk))

        self.dw = DepthwiseConv2d(c, 3, rng)
        self.conv_out = Conv2d(c, c, 1, rng)
        self.bn_out = BatchNorm2d(c)

    @property
    def seq_len(self):
        return self.height * self.width

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"GL-Trans block expects (N, {self.channels}, H, W), got {x.shape}")
        if x.shape[2:] != (self.height, self.width):
            raise ResolutionError(
                f"GL-Trans block is bound to {self.height}x{self.width} (theta is "
                f"{self.seq_len}x{self.seq_len}); got input {x.shape[2]}x{x.shape[3]}")

    def local_branch(self, x):
        self._check(x)
        return self.bn_local_1x1(self.conv_local_1x1(x)) + self.bn_local_3x3(self.conv_local_3x3(x))

    def attention(self, x):
        """Return (attention matrix A, value tokens V) for input ``x``."""
        self._check(x)
        n, c, h, w = x.shape
        seq = transpose(reshape(x, (n, c, h * w)), (0, 2, 1))  # (N, L, C), row-major tokens
        tok = seq @ self.input_proj
        q = tok @ self.w_q
        k = tok @ self.w_k
        v = tok @ self.w_v
        # scaling Q instead of the (L, L) logits: same value, one less L*L pass
        scores = (q * (1.0 / np.sqrt(self.head_dim))) @ transpose(k, (0, 2, 1)) + self.theta
        return F.softmax_rows(scores), v

    def global_branch(self, x):
        n, c, h, w = x.shape
        a, v = self.attention(x)
        out = (a @ v) @ self.value_proj_out  # (N, L, C)
        return reshape(transpose(out, (0, 2, 1)), (n, c, h, w))

    def forward(self, x):
        fused = self.local_branch(x) + self.global_branch(x)
        return self.bn_out(self.conv_out(self.dw(fused)))


def local_branch(x, block):
    return block.local_branch(x)


def global_branch(x, block):
    return block.global_branch(x)


def gl_trans_forward(x, block):
    return block.forward(x)
