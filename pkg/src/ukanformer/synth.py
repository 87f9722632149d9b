"""Synthetic reef scenes with exact coral masks and degraded (noisy) training labels.

The degraded labels imitate coarse atlas products: each coral blob is
dilated or eroded as a whole, the outline is warped by a smooth random
displacement field, and small square patches are flipped at random.
"""
import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .errors import SpecError

# purpose tags for per-scene random streams
_LAYOUT, _TEXTURE, _DEGRADE, _JITTER, _FLIP = 11, 12, 13, 14, 15


@dataclass
class SynthSpec:
    n_scenes: int = 20
    scene_size: int = 64
    blobs_min: int = 4
    blobs_max: int = 7
    radius_min: float = 7.0
    radius_max: float = 14.0
    dilate_px: float = 2.0
    erode_px: float = 2.0
    boundary_jitter_px: float = 2.0
    patch_flip_prob: float = 0.015
    flip_patch_px: int = 4
    image_noise: float = 0.04
    seed: int = 0
    iou_band: tuple = (0.60, 0.85)  # empty disables the check

    def __post_init__(self):
        self.iou_band = tuple(self.iou_band)
        self.validate()

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = asdict(self)
        d["iou_band"] = list(self.iou_band)
        return d

    def validate(self):
        for name in ("dilate_px", "erode_px", "boundary_jitter_px", "patch_flip_prob", "image_noise"):
            if getattr(self, name) < 0:
                raise SpecError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.patch_flip_prob > 1:
            raise SpecError("patch_flip_prob must be <= 1")
        if self.n_scenes < 1 or self.scene_size < 4:
            raise SpecError("need n_scenes >= 1 and scene_size >= 4")
        if not 1 <= self.blobs_min <= self.blobs_max:
            raise SpecError(f"blob count range [{self.blobs_min}, {self.blobs_max}] is invalid")
        if not 0 < self.radius_min <= self.radius_max:
            raise SpecError(f"blob radius range [{self.radius_min}, {self.radius_max}] is invalid")
        if 2 * self.radius_max >= self.scene_size:
            raise SpecError(f"blob diameter {2 * self.radius_max} does not fit a {self.scene_size}px scene")
        if self.flip_patch_px < 1:
            raise SpecError("flip_patch_px must be >= 1")
        if self.iou_band and (len(self.iou_band) != 2 or not 0 <= self.iou_band[0] <= self.iou_band[1] <= 1):
            raise SpecError(f"iou_band must be [lo, hi] within [0, 1], got {list(self.iou_band)}")


@dataclass
class SynthScene:
    scene_id: str
    image: np.ndarray  # (S, S, 3) uint8
    clean: np.ndarray  # (S, S) uint8
    noisy: np.ndarray  # (S, S) uint8
    iou: float


def mask_iou(a, b):
    """IoU of two binary masks; 1.0 when both are empty."""
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def _rng(seed, scene, purpose):
    return np.random.default_rng([seed, scene, purpose])


def random_blobs(rng, size, n_min, n_max, r_min, r_max):
    """List of boolean masks, each a union of 1-3 rotated ellipses."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    blobs = []
    for _ in range(rng.integers(n_min, n_max + 1)):
        r = rng.uniform(r_min, r_max)
        cy, cx = rng.uniform(r, size - r, 2)
        blob = np.zeros((size, size), bool)
        for _ in range(rng.integers(1, 4)):
            oy, ox = rng.uniform(-0.4 * r, 0.4 * r, 2)
            a, b = rng.uniform(0.6 * r, r, 2)
            ang = rng.uniform(0, np.pi)
            dy, dx = yy - (cy + oy), xx - (cx + ox)
            u = dx * np.cos(ang) + dy * np.sin(ang)
            v = -dx * np.sin(ang) + dy * np.cos(ang)
            blob |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
        blobs.append(blob)
    return blobs


def grow_or_shrink(blob, amount):
    """Dilate (amount > 0) or erode (amount < 0) a boolean mask by a Euclidean distance."""
    if amount > 0:
        return ndimage.distance_transform_edt(~blob) <= amount
    if amount < 0:
        return ndimage.distance_transform_edt(blob) > -amount
    return blob.copy()


def degrade(blobs, spec, rngs):
    """Apply blob-wise dilation/erosion, boundary jitter and patch flips.

    ``rngs`` is ``(degrade_rng, jitter_rng, flip_rng)``; every stage draws
    from its own stream, so switching one noise source off leaves the others
    unchanged.
    """
    r_deg, r_jit, r_flip = rngs
    size = blobs[0].shape[0] if blobs else 0
    out = np.zeros((size, size), bool)
    for blob in blobs:
        coin = r_deg.random()
        if spec.dilate_px > 0 and spec.erode_px > 0:
            amount = spec.dilate_px if coin < 0.5 else -spec.erode_px
        else:
            amount = spec.dilate_px if spec.dilate_px > 0 else -spec.erode_px
        out |= grow_or_shrink(blob, amount)
    if spec.boundary_jitter_px > 0:
        field = r_jit.standard_normal((2, size, size))
        field = np.stack([ndimage.gaussian_filter(f, 3.0, mode="wrap") for f in field])
        field *= spec.boundary_jitter_px / max(np.abs(field).max(), 1e-12)
        yy, xx = np.mgrid[0:size, 0:size]
        sy = np.clip(np.rint(yy + field[0]), 0, size - 1).astype(int)
        sx = np.clip(np.rint(xx + field[1]), 0, size - 1).astype(int)
        out = out[sy, sx]
    if spec.patch_flip_prob > 0:
        p = spec.flip_patch_px
        cells = -(-size // p)
        flips = r_flip.random((cells, cells)) < spec.patch_flip_prob
        flips = np.kron(flips, np.ones((p, p), bool))[:size, :size]
        out ^= flips
    return out


def render_image(rng, blobs, size, noise):
    """RGB reef-like image: smooth water/sand background, textured coral blobs."""
    def smooth(sigma, amp):
        f = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
        return amp * f / max(np.abs(f).max(), 1e-12)

    base = np.array([0.20, 0.52, 0.60]) + rng.uniform(-0.05, 0.05, 3)
    img = base[None, None, :] + smooth(6.0, 0.10)[..., None] * np.array([0.6, 1.0, 0.8])
    coral = np.zeros((size, size), bool)
    for blob in blobs:
        tone = np.array([0.48, 0.36, 0.30]) + rng.uniform(-0.06, 0.06, 3)
        tex = smooth(1.0, 0.10)[..., None]
        img = np.where(blob[..., None], tone + tex, img)
        coral |= blob
    img = ndimage.gaussian_filter(img, (0.7, 0.7, 0))
    img += noise * rng.standard_normal(img.shape)
    return (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8), coral


def synth_generate(spec):
    """Generate ``spec.n_scenes`` scenes; a pure function of ``spec``."""
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    spec.validate()
    scenes = []
    for i in range(spec.n_scenes):
        blobs = random_blobs(_rng(spec.seed, i, _LAYOUT), spec.scene_size, spec.blobs_min,
                             spec.blobs_max, spec.radius_min, spec.radius_max)
        image, clean = render_image(_rng(spec.seed, i, _TEXTURE), blobs, spec.scene_size, spec.image_noise)
        noisy = degrade(blobs, spec, (_rng(spec.seed, i, _DEGRADE), _rng(spec.seed, i, _JITTER),
                                      _rng(spec.seed, i, _FLIP)))
        scenes.append(SynthScene(f"scene{i:03d}", image, clean.astype(np.uint8),
                                 noisy.astype(np.uint8), mask_iou(noisy, clean)))
    return scenes
