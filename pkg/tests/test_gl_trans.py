import numpy as np
import pytest

from ukanformer.errors import ResolutionError, ShapeError
from ukanformer.gl_trans import GLTransBlock, gl_trans_forward, global_branch, local_branch
from ukanformer.gradcheck import check
from ukanformer.tensor import Tensor


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def make(c=2, h=3, w=3, seed=0, **kw):
    return GLTransBlock(c, h, w, np.random.default_rng(seed), **kw)


def np_conv(x, w, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, o, h + 2 * pad - k + 1, wd + 2 * pad - k + 1))
    for i in range(out.shape[2]):
        for j in range(out.shape[3]):
            out[:, :, i, j] = np.einsum("ncab,ocab->no", xp[:, :, i:i + k, j:j + k], w)
    return out


def np_bn_train(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    return gamma[None, :, None, None] * (x - mu) / np.sqrt(var + eps) + beta[None, :, None, None]


def zero_(*tensors):
    for t in tensors:
        t.data[:] = 0.0


class TestLocalBranch:
    def test_zero_paths(self, f64, rng):
        b = make()
        zero_(b.conv_local_1x1.weight, b.conv_local_3x3.weight)
        b.eval()
        assert np.all(local_branch(T(rng.standard_normal((1, 2, 3, 3))), b).data == 0.0)

    def test_pass_through(self, f64, rng):
        b = make().eval()
        b.conv_local_1x1.weight.data[:] = np.eye(2).reshape(2, 2, 1, 1)
        zero_(b.conv_local_3x3.weight)
        x = rng.standard_normal((1, 2, 3, 3))
        np.testing.assert_allclose(local_branch(T(x), b).data, x / np.sqrt(1 + 1e-5), rtol=1e-12)

    def test_compositional_oracle(self, f64, rng):
        b = make()
        b.bn_local_1x1.gamma.data[:] = [1.5, 0.5]
        b.bn_local_3x3.beta.data[:] = [0.2, -0.1]
        x = rng.standard_normal((1, 2, 3, 3))
        ref = (np_bn_train(np_conv(x, b.conv_local_1x1.weight.data, 0), b.bn_local_1x1.gamma.data,
                           b.bn_local_1x1.beta.data)
               + np_bn_train(np_conv(x, b.conv_local_3x3.weight.data, 1), b.bn_local_3x3.gamma.data,
                             b.bn_local_3x3.beta.data))
        np.testing.assert_allclose(local_branch(T(x), b).data, ref, rtol=1e-10, atol=1e-12)


def np_global(x, b, theta=None):
    n, c, h, w = x.shape
    seq = x.reshape(n, c, h * w).transpose(0, 2, 1) @ b.input_proj.data
    q, k, v = seq @ b.w_q.data, seq @ b.w_k.data, seq @ b.w_v.data
    s = q @ k.transpose(0, 2, 1) / np.sqrt(b.head_dim) + (b.theta.data if theta is None else theta)
    a = np.exp(s - s.max(axis=-1, keepdims=True))
    a /= a.sum(axis=-1, keepdims=True)
    out = a @ v @ b.value_proj_out.data
    return out.transpose(0, 2, 1).reshape(n, c, h, w), a


class TestGlobalBranch:
    def test_uniform_attention(self, f64, rng):
        b = make(c=3, h=2, w=4)
        zero_(b.w_q, b.w_k)
        x = rng.standard_normal((1, 3, 2, 4))
        a, v = b.attention(T(x))
        assert np.all(a.data == 1.0 / 8)
        out = global_branch(T(x), b).data
        mean_token = v.data[0].mean(axis=0) @ b.value_proj_out.data
        np.testing.assert_allclose(out[0].reshape(3, 8).T, np.tile(mean_token, (8, 1)), atol=1e-12)

    def test_diagonal_bias_saturates(self, f64, rng):
        b = make(c=2, h=3, w=3)
        zero_(b.w_q, b.w_k)
        b.theta.data[:] = 50.0 * np.eye(9)
        x = rng.standard_normal((1, 2, 3, 3))
        a, v = b.attention(T(x))
        assert np.abs(a.data[0] - np.eye(9)).max() < 1e-4
        tokenwise = (v.data[0] @ b.value_proj_out.data).T.reshape(1, 2, 3, 3)
        assert np.abs(global_branch(T(x), b).data - tokenwise).max() < 1e-4

    def test_matches_numpy_oracle(self, f64, rng):
        b = make(c=3, h=2, w=3, token_dim=5, head_dim=4)
        b.theta.data[:] = rng.standard_normal((6, 6))
        x = rng.standard_normal((2, 3, 2, 3))
        ref, ref_a = np_global(x, b)
        a, _ = b.attention(T(x))
        np.testing.assert_allclose(a.data, ref_a, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(global_branch(T(x), b).data, ref, rtol=1e-10, atol=1e-12)

    def test_rows_sum_to_one(self, f64, rng):
        b = make(c=4, h=4, w=4, seed=3)
        b.theta.data[:] = rng.standard_normal((16, 16)) * 5
        a, _ = b.attention(T(rng.standard_normal((2, 4, 4, 4)) * 10))
        assert np.abs(a.data.sum(axis=-1) - 1).max() <= 1e-6

    def _permute(self, x, perm):
        n, c, h, w = x.shape
        return x.reshape(n, c, h * w)[:, :, perm].reshape(n, c, h, w)

    def test_permutation_equivariance_without_bias(self, f64, rng):
        b = make(c=2, h=3, w=3)
        zero_(b.w_q, b.w_k)
        x = rng.standard_normal((1, 2, 3, 3))
        perm = rng.permutation(9)
        lhs = global_branch(T(self._permute(x, perm)), b).data
        rhs = self._permute(global_branch(T(x), b).data, perm)
        assert np.abs(lhs - rhs).max() <= 1e-6

    def test_bias_breaks_equivariance(self, f64, rng):
        b = make(c=2, h=3, w=3)
        b.theta.data[:] = rng.standard_normal((9, 9))
        x = rng.standard_normal((1, 2, 3, 3))
        perm = rng.permutation(9)
        lhs = global_branch(T(self._permute(x, perm)), b).data
        rhs = self._permute(global_branch(T(x), b).data, perm)
        assert np.abs(lhs - rhs).max() > 1e-3

    def test_resolution_bound(self, f64):
        b = make(c=2, h=3, w=3)
        with pytest.raises(ResolutionError, match="3x3"):
            global_branch(T(np.zeros((1, 2, 4, 4))), b)
        with pytest.raises(ShapeError):
            gl_trans_forward(T(np.zeros((1, 3, 3, 3))), b)


class TestBlock:
    def test_zero_network(self, f64, rng):
        b = make().eval()
        for _, p in b.named_parameters():
            if not p is b.theta:
                p.data[:] = 0.0
        assert np.all(gl_trans_forward(T(rng.standard_normal((1, 2, 3, 3))), b).data == 0.0)

    @pytest.mark.parametrize("c,h,w", [(1, 2, 2), (3, 4, 2), (4, 3, 5)])
    def test_shape_preserved(self, f64, rng, c, h, w):
        assert gl_trans_forward(T(rng.standard_normal((2, c, h, w))), make(c, h, w)).shape == (2, c, h, w)

    def _tail(self, b, f):
        return b.bn_out(b.conv_out(b.dw(f))).data

    def test_branch_additivity(self, f64, rng):
        x = T(rng.standard_normal((1, 2, 3, 3)))
        b = make().eval()
        b.theta.data[:] = rng.standard_normal((9, 9))
        zero_(b.value_proj_out)
        assert np.abs(gl_trans_forward(x, b).data - self._tail(b, local_branch(x, b))).max() <= 1e-6

        b = make(seed=1).eval()
        zero_(b.conv_local_1x1.weight, b.conv_local_3x3.weight)
        assert np.abs(gl_trans_forward(x, b).data - self._tail(b, global_branch(x, b))).max() <= 1e-6

    def test_theta_receives_gradient(self, f64, rng):
        b = make()
        (gl_trans_forward(T(rng.standard_normal((2, 2, 3, 3))), b) ** 2).sum().backward()
        assert np.abs(b.theta.grad).max() > 0

    def test_gradients_every_parameter(self, f64):
        rng = np.random.default_rng(11)
        b = make(seed=2)
        b.theta.data[:] = rng.standard_normal((9, 9)) * 0.5
        x = T(rng.standard_normal((1, 2, 3, 3)), grad=True)
        y = rng.standard_normal((1, 2, 3, 3))
        fn = lambda: ((gl_trans_forward(x, b) - T(y)) ** 2).sum()
        tensors = {"x": x}
        tensors.update(dict(b.named_parameters()))
        errs = check(fn, tensors)
        assert "theta" in errs
        assert max(errs.values()) < 1e-4, errs
