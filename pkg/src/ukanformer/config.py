"""Run configuration: one JSON document merging model, training, data and synthesis settings."""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .synth import SynthSpec
from .train_eval import TrainConfig


@dataclass
class DataConfig:
    tile_size: int = 32
    overlap: float = 0.2
    test_fraction: float = 0.10
    split_by_scene: bool = False

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    seed: int = 0

    SECTIONS = ("model", "train", "data", "synth", "seed")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(
            model=ModelConfig.from_dict(d.get("model", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            data=DataConfig.from_dict(d.get("data", {})),
            synth=SynthSpec.from_dict(d.get("synth", {})),
            seed=int(d.get("seed", 0)),
        )
        if "seed" in d:
            cfg.apply_seed(cfg.seed)
        return cfg

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def apply_seed(self, seed):
        """Route one seed to every consumer; each combines it with its own sub-seed tags."""
        self.seed = int(seed)
        self.model.seed = self.seed
        self.train.seed = self.seed
        self.synth.seed = self.seed

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": asdict(self.data),
            "synth": self.synth.to_dict(),
            "seed": self.seed,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def echo(self, out_dir, inputs=()):
        """Write config.json (and input file hashes) into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(self.dumps())
        hashes = {str(p): file_sha256(p) for p in inputs}
        (out / "inputs.json").write_text(json.dumps(hashes, indent=2, sort_keys=True) + "\n")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
