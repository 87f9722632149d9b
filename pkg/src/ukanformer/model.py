"""UKANFormer and the UKAN baseline.

Layout (top to bottom)::

    conv stage 0 (H)  -------------------------------------------> dec stage 0 -> head
    conv stage 1 (H/2) ---------------------------------> dec stage 1
    conv stage 2 (H/4) ----------------------> dec stage 2
    Tok-KAN 0   (H/4P) ----------> dec stage 3
    Tok-KAN 1   (H/4P^2) -- bottom

Each decoder stage upsamples, concatenates the skip tensor, fuses with a
1x1 conv and applies either a GL-Trans block (UKANFormer) or a plain
double 3x3 conv (UKAN).
"""
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import functional as F
from .errors import ConfigError, ResolutionError
from .gl_trans import GLTransBlock
from .kan import BSplineGrid, TokKanBlock
from .nn import Conv2d, ConvBNAct, Module
from .tensor import Tensor, concat, no_grad, silu

DECODERS = ("gl_trans", "plain_conv")

# sub-seed tags: encoder parameters never depend on the decoder choice
_ENCODER, _TOKKAN, _DECODER, _HEAD = 1, 2, 3, 4


@dataclass
class ModelConfig:
    in_channels: int = 3
    num_classes: int = 2
    encoder_channels: tuple = (16, 32, 64)
    tokkan_dims: tuple = (64, 64)
    tokkan_patch: int = 2
    tokkan_layers: int = 1
    spline_order: int = 3
    spline_intervals: int = 5
    spline_lo: float = -1.0
    spline_hi: float = 1.0
    decoder: str = "gl_trans"
    input_size: tuple = (32, 32)
    token_dim: int = 0
    head_dim: int = 0
    seed: int = 0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.tokkan_dims = tuple(int(c) for c in self.tokkan_dims)
        self.input_size = tuple(int(s) for s in self.input_size)
        self.validate()

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        for key in ("encoder_channels", "tokkan_dims", "input_size"):
            d[key] = list(d[key])
        return d

    @property
    def grid(self):
        return BSplineGrid(self.spline_order, self.spline_intervals, self.spline_lo, self.spline_hi)

    def validate(self):
        ch = self.encoder_channels
        if not ch:
            raise ConfigError("encoder_channels must be non-empty")
        if any(b <= a for a, b in zip(ch, ch[1:])):
            raise ConfigError(f"encoder_channels must be strictly increasing, got {list(ch)}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        p = self.tokkan_patch
        if p < 1 or p & (p - 1):
            raise ConfigError(f"tokkan_patch must be a power of two, got {p}")
        if len(self.input_size) != 2:
            raise ConfigError(f"input_size must be (H, W), got {self.input_size}")
        self.grid  # validates spline settings
        h, w = self.input_size
        for i in range(1, len(ch)):
            h, w = self._down(h, w, 2, f"encoder stage {i} (stride-2 conv)")
        for i in range(len(self.tokkan_dims)):
            h, w = self._down(h, w, p, f"Tok-KAN stage {i} (patch {p})")

    @staticmethod
    def _down(h, w, f, stage):
        if h % f or w % f or h < f or w < f:
            raise ConfigError(f"input size not divisible at {stage}: {h}x{w} by {f}")
        return h // f, w // f

    def level_sizes(self):
        """Spatial size of every skip level, top (full resolution) first, then the bottom."""
        h, w = self.input_size
        sizes = [(h, w)]
        for _ in range(1, len(self.encoder_channels)):
            h, w = h // 2, w // 2
            sizes.append((h, w))
        for _ in self.tokkan_dims:
            h, w = h // self.tokkan_patch, w // self.tokkan_patch
            sizes.append((h, w))
        return sizes


class PlainDecoderBlock(Module):
    def __init__(self, c, rng):
        self.conv1 = ConvBNAct(c, c, 3, rng)
        self.conv2 = ConvBNAct(c, c, 3, rng)

    def forward(self, x):
        return self.conv2(self.conv1(x))


class GLDecoderBlock(Module):
    def __init__(self, c, h, w, rng, token_dim=0, head_dim=0):
        self.gl = GLTransBlock(c, h, w, rng, token_dim=token_dim or None, head_dim=head_dim or None)

    def forward(self, x):
        return silu(self.gl(x))


class DecoderStage(Module):
    def __init__(self, c_in, c_skip, up_steps, block, rng):
        self.up_steps = up_steps
        self.fuse = ConvBNAct(c_in + c_skip, c_skip, 1, rng)
        self.block = block

    def forward(self, x, skip):
        for _ in range(self.up_steps):
            x = F.upsample_bilinear2x(x)
        return self.block(self.fuse(concat([x, skip], axis=1)))


class UKanFormerModel(Module):
    def __init__(self, config):
        self.config = config
        cfg = config
        ch = cfg.encoder_channels
        rng_enc = np.random.default_rng([cfg.seed, _ENCODER])
        rng_tok = np.random.default_rng([cfg.seed, _TOKKAN])
        rng_dec = np.random.default_rng([cfg.seed, _DECODER])
        rng_head = np.random.default_rng([cfg.seed, _HEAD])

        stages = []
        cin = cfg.in_channels
        for i, c in enumerate(ch):
            stages.append(EncoderStage(cin, c, 1 if i == 0 else 2, rng_enc))
            cin = c
        self.encoder = stages

        toks = []
        for d in cfg.tokkan_dims:
            toks.append(TokKanBlock(cin, d, cfg.tokkan_patch, rng_tok, cfg.tokkan_layers, cfg.grid))
            cin = d
        self.tokkan = toks

        skip_ch = list(ch) + list(cfg.tokkan_dims[:-1])
        sizes = cfg.level_sizes()
        up_tok = int(np.log2(cfg.tokkan_patch))
        ups = [1] * (len(ch) - 1) + [up_tok] * len(cfg.tokkan_dims)
        decoder = []
        c_below = cfg.tokkan_dims[-1] if cfg.tokkan_dims else ch[-1]
        # deepest skip first
        for lvl in reversed(range(len(skip_ch))):
            cs = skip_ch[lvl]
            h, w = sizes[lvl]
            if cfg.decoder == "gl_trans":
                block = GLDecoderBlock(cs, h, w, rng_dec, cfg.token_dim, cfg.head_dim)
            else:
                block = PlainDecoderBlock(cs, rng_dec)
            decoder.append(DecoderStage(c_below, cs, ups[lvl], block, rng_dec))
            c_below = cs
        self.decoder = decoder
        self.head = Conv2d(ch[0], cfg.num_classes, 1, rng_head, bias=True)
        for name, p in self.named_parameters():
            p.name = name

    @property
    def skip_levels(self):
        return len(self.decoder)

    def forward(self, x, skip_mask=None):
        """Logits (N, num_classes, H, W).

        ``skip_mask`` optionally lists skip levels (0 = full resolution) whose
        tensors are replaced by zeros; used for diagnostics only.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ResolutionError(f"expected (N, {self.config.in_channels}, H, W) input, got {x.shape}")
        if tuple(x.shape[2:]) != self.config.input_size:
            raise ResolutionError(
                f"model built for {self.config.input_size[0]}x{self.config.input_size[1]} "
                f"inputs, got {x.shape[2]}x{x.shape[3]}")
        skips = []
        for stage in self.encoder:
            x = stage(x)
            skips.append(x)
        for tok in self.tokkan:
            x = tok(x)
            skips.append(x)
        x = skips.pop()
        if skip_mask:
            skips = [Tensor(np.zeros_like(s.data)) if i in skip_mask else s for i, s in enumerate(skips)]
        for stage, skip in zip(self.decoder, reversed(skips)):
            x = stage(x, skip)
        return self.head(x)


class EncoderStage(Module):
    def __init__(self, cin, cout, stride, rng):
        self.conv1 = ConvBNAct(cin, cout, 3, rng, stride=stride)
        self.conv2 = ConvBNAct(cout, cout, 3, rng)

    def forward(self, x):
        return self.conv2(self.conv1(x))


def build(config):
    """Construct a model; parameters are a pure function of ``config.seed``."""
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    config.validate()
    return UKanFormerModel(config)


def forward(model, image, mode="eval"):
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train(mode == "train")
    return model(image)


def argmax_mask(logits):
    """Per-pixel argmax over the class axis; ties resolve to the lowest class (background)."""
    logits = np.asarray(logits)
    return np.argmax(logits, axis=1).astype(np.uint8)


def predict_mask(model, image):
    """Eval-mode binary mask(s) (N, H, W) with values {0, 1}."""
    model.eval()
    with no_grad():
        logits = model(image)
    return argmax_mask(logits.data)
