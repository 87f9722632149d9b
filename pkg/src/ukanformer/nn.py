"""Parameter containers and the layers the models are assembled from."""
import numpy as np

from . import functional as F
from .errors import ContractError
from .tensor import Tensor, get_default_dtype, silu


def param(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Minimal module: parameters are discovered from attributes in definition order."""

    training = True
    _buffer_names = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, (Tensor, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix=""):
        for key, val in self._children():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + key, val
            else:
                yield from val.named_parameters(prefix + key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(prefix + key + ".")

    def state_dict(self):
        """Parameters and buffers as numpy arrays, in a fixed order."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - set(own) - set(bufs)
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ContractError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)
        for name, b in bufs.items():
            b[...] = state[name]

    def train(self, mode=True):
        self.training = mode
        for _, val in self._children():
            if isinstance(val, Module):
                val.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))


def kaiming(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=None, bias=False):
        self.weight = param(kaiming(rng, (cout, cin, k, k), cin * k * k))
        self.bias = param(np.zeros(cout)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, c, k, rng):
        self.weight = param(kaiming(rng, (c, 1, k, k), k * k))

    def forward(self, x):
        return F.depthwise_conv2d(x, self.weight)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, c, momentum=F.BN_MOMENTUM, eps=F.BN_EPS):
        dt = get_default_dtype()
        self.gamma = param(np.ones(c))
        self.beta = param(np.zeros(c))
        self.running_mean = np.zeros(c, dtype=dt)
        self.running_var = np.ones(c, dtype=dt)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, d, eps=F.BN_EPS):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class ConvBNAct(Module):
    """conv -> batchnorm -> silu."""

    def __init__(self, cin, cout, k, rng, stride=1):
        self.conv = Conv2d(cin, cout, k, rng, stride=stride)
        self.bn = BatchNorm2d(cout)

    def forward(self, x):
        return silu(self.bn(self.conv(x)))


def sgd_step(params, lr):
    """Plain SGD: ``p <- p - lr * grad``, then clear the gradients."""
    if lr < 0:
        raise ContractError(f"learning rate must be non-negative, got {lr}")
    params = list(params)
    for i, p in enumerate(params):
        if p.grad is None:
            label = p.name or f"#{i} {p.shape}"
            raise ContractError(f"parameter {label} has no gradient; run backward() first")
    for p in params:
        if lr != 0:
            p.data -= (lr * p.grad).astype(p.dtype, copy=False)
        p.grad = None
