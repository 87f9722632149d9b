"""Scene tiling, label binarization, dataset splitting, augmentation and raster I/O."""
import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeError, SplitError

MANIFEST_HEADER = ["scene_id", "tile_id", "x0", "y0", "tile_size", "split", "image_path", "mask_path"]


@dataclass
class SceneRaster:
    scene_id: str
    pixels: np.ndarray  # (H, W, 3) uint8
    resolution_m: float = 3.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"scene {self.scene_id}: expected (H, W, 3) pixels, got {px.shape}")
        self.pixels = px.astype(np.uint8, copy=False)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def tile_origins(length, tile_size, stride):
    """Tile start offsets along one axis; the last tile is shifted back to end at ``length``."""
    if length <= tile_size:
        return [0]
    origins = list(range(0, length - tile_size + 1, stride))
    if origins[-1] + tile_size < length:
        origins.append(length - tile_size)
    return origins


def tile_stride(tile_size, overlap):
    return max(1, int(math.floor(tile_size * (1.0 - overlap))))


def tile_scene(scene, mask, tile_size=256, overlap=0.2):
    """Cut a scene and its mask into overlapping square tiles.

    Returns a list of ``(image_tile, mask_tile, x0, y0)``. Scenes smaller
    than ``tile_size`` along an axis are reflect-padded up to it first.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    if tile_size < 1:
        raise ValueError(f"tile_size must be >= 1, got {tile_size}")
    img = scene.pixels if isinstance(scene, SceneRaster) else np.asarray(scene)
    mask = np.asarray(mask)
    if img.shape[:2] != mask.shape[:2]:
        raise ShapeError(f"scene {img.shape[:2]} and mask {mask.shape[:2]} differ")
    h, w = mask.shape[:2]
    ph, pw = max(0, tile_size - h), max(0, tile_size - w)
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)) + ((0, 0),) * (img.ndim - 2), mode="reflect")
        mask = np.pad(mask, ((0, ph), (0, pw)), mode="reflect")
        h, w = mask.shape
    stride = tile_stride(tile_size, overlap)
    tiles = []
    for y0 in tile_origins(h, tile_size, stride):
        for x0 in tile_origins(w, tile_size, stride):
            tiles.append((img[y0:y0 + tile_size, x0:x0 + tile_size].copy(),
                          mask[y0:y0 + tile_size, x0:x0 + tile_size].copy(), x0, y0))
    return tiles


def binarize_labels(class_map, positive_names, legend=None, nodata=None):
    """Binary coral mask: 1 where the pixel's class name is in ``positive_names``.

    ``class_map`` holds class names or codes; ``legend`` optionally maps
    codes to names. Codes without a positive name, and ``nodata`` pixels,
    become 0.
    """
    positive_names = {str(p) for p in positive_names}
    if not positive_names:
        raise ValueError("positive_names must be non-empty")
    cm = np.asarray(class_map)
    uniq, inv = np.unique(cm, return_inverse=True)
    legend = legend or {}
    hits = np.array([str(legend.get(u.item() if hasattr(u, "item") else u, u)) in positive_names
                     and not (nodata is not None and u == nodata) for u in uniq], dtype=np.uint8)
    return hits[inv.reshape(cm.shape)]


@dataclass
class TileEntry:
    scene_id: str
    tile_id: str
    x0: int
    y0: int
    tile_size: int
    split: str = "train"
    image_path: str = ""
    mask_path: str = ""


@dataclass
class TileManifest:
    entries: list = field(default_factory=list)
    overlap_fraction: float = 0.2
    seed: int = 0

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def identity_hash(self, split="test"):
        """Stable hash of the tile identities in one split."""
        h = hashlib.sha256()
        for e in sorted(self.split(split), key=lambda e: (e.scene_id, e.tile_id)):
            h.update(f"{e.scene_id}/{e.tile_id}/{e.x0}/{e.y0}/{e.tile_size}\n".encode())
        return h.hexdigest()[:16]

    def check(self):
        keys = [(e.scene_id, e.x0, e.y0) for e in self.entries]
        if len(set(keys)) != len(keys):
            raise ValueError("manifest contains duplicate (scene, x0, y0) tiles")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(MANIFEST_HEADER)
            for e in self.entries:
                wr.writerow([e.scene_id, e.tile_id, e.x0, e.y0, e.tile_size, e.split,
                             e.image_path, e.mask_path])

    @classmethod
    def read_csv(cls, path, overlap_fraction=0.2, seed=0):
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header != MANIFEST_HEADER:
                raise ValueError(f"{path}: unexpected manifest header {header}")
            entries = [TileEntry(r[0], r[1], int(r[2]), int(r[3]), int(r[4]), r[5], r[6], r[7]) for r in rd]
        return cls(entries, overlap_fraction, seed)


def split_dataset(entries, test_fraction=0.10, seed=0, by_scene=False, overlap_fraction=0.2):
    """Seeded uniform random train/test split.

    The test count is ``round(n * test_fraction)`` (half rounds up), kept
    within [1, n - 1]. With ``by_scene`` whole scenes are assigned instead
    of individual tiles.
    """
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must be in (0, 1), got {test_fraction}")
    entries = list(entries.entries if isinstance(entries, TileManifest) else entries)
    if len(entries) < 2:
        raise SplitError(f"need at least 2 tiles to split, got {len(entries)}")
    rng = np.random.default_rng(seed)
    if by_scene:
        scenes = sorted({e.scene_id for e in entries})
        if len(scenes) < 2:
            raise SplitError("scene-level split needs at least 2 scenes")
        k = min(max(1, int(math.floor(len(scenes) * test_fraction + 0.5))), len(scenes) - 1)
        test_scenes = {scenes[i] for i in rng.permutation(len(scenes))[:k]}
        is_test = [e.scene_id in test_scenes for e in entries]
    else:
        n = len(entries)
        k = min(max(1, int(math.floor(n * test_fraction + 0.5))), n - 1)
        chosen = set(rng.permutation(n)[:k].tolist())
        is_test = [i in chosen for i in range(n)]
    out = [replace(e, split="test" if t else "train") for e, t in zip(entries, is_test)]
    return TileManifest(out, overlap_fraction, seed)


def augment(image, mask, seed):
    """Random horizontal flip and, independently, vertical flip ("mirroring"), each p=0.5.

    ``image`` is (C, H, W) and ``mask`` (H, W); the same transform is applied
    to both. ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.shape[-2:] != mask.shape[-2:]:
        raise ShapeError(f"image {image.shape} and mask {mask.shape} differ spatially")
    hflip = rng.random() < 0.5
    vflip = rng.random() < 0.5
    if hflip:
        image, mask = image[..., ::-1], mask[..., ::-1]
    if vflip:
        image, mask = image[..., ::-1, :], mask[..., ::-1, :]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


# -- raster I/O ---------------------------------------------------------------

def save_image(path, pixels):
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def save_mask(path, mask):
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_mask(path):
    """Single-channel mask with {0, 255} (or {0, 1}) mapped to {0, 1}."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 0).astype(np.uint8)


def to_model_input(pixels):
    """(H, W, 3) uint8 -> (3, H, W) float, scaled to roughly zero mean / unit spread."""
    x = np.asarray(pixels, dtype=np.float64).transpose(2, 0, 1) / 255.0
    return (x - 0.5) / 0.25


def load_split(manifest, root, split, mask_dir=None):
    """Load one split into arrays ``(images (N,3,H,W), masks (N,H,W), entries)``.

    ``mask_dir`` swaps the directory of every mask path's parent, so the
    same manifest can serve alternative reference mask sets (``masks/clean``
    vs ``masks/noisy``).
    """
    root = Path(root)
    entries = manifest.split(split)
    images, masks = [], []
    for e in entries:
        images.append(to_model_input(load_image(root / e.image_path)))
        mpath = root / e.mask_path
        if mask_dir is not None:
            mpath = root / mask_dir / Path(e.mask_path).name
        masks.append(load_mask(mpath))
    if not entries:
        return np.zeros((0, 3, 0, 0)), np.zeros((0, 0, 0), dtype=np.uint8), entries
    return np.stack(images), np.stack(masks), entries
