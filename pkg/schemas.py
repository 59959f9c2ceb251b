"""
RunConfig: the single JSON document driving curate / split / train / eval.
Unknown keys are rejected at every level.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import PUBLISHED_SPLIT_COUNTS, settings
from errors import ConfigError
from services.dataset.curation import CurationConfig
from services.nn.model import PRESETS, ModelConfig
from services.nn.training import TrainConfig


class SplitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    n_val: int = Field(PUBLISHED_SPLIT_COUNTS["val"], ge=0)
    n_test: int = Field(PUBLISHED_SPLIT_COUNTS["test"], ge=0)


class ModelSection(BaseModel):
    """Preset name plus optional architecture overrides."""

    model_config = ConfigDict(extra="forbid")

    preset: Literal["r34", "compact"] = "compact"
    stem: Optional[Literal["cifar", "imagenet"]] = None
    stage_blocks: Optional[List[int]] = None
    stage_widths: Optional[List[int]] = None

    def build(self) -> ModelConfig:
        try:
            return ModelConfig.from_preset(
                self.preset, stem=self.stem, stage_blocks=self.stage_blocks, stage_widths=self.stage_widths
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid model section: {e}") from e


class IOPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rasters: List[str] = Field(default_factory=list)
    raster_ids: Optional[List[str]] = None
    labels: Optional[str] = None
    manifest: str = "outputs/manifest.jsonl"
    split_manifest: str = "outputs/manifest_split.jsonl"
    checkpoint: str = "outputs/model.ckpt"
    best_checkpoint: Optional[str] = None  # default: <checkpoint stem>.best.ckpt
    metrics: str = "outputs/metrics.csv"
    output_dir: Optional[str] = None  # run logs; default settings.sylvan_output_base, else no run log
    resample: bool = False
    pixel_size_m: Optional[float] = Field(None, gt=0)

    def best_checkpoint_path(self) -> Path:
        if self.best_checkpoint:
            return Path(self.best_checkpoint)
        ckpt = Path(self.checkpoint)
        return ckpt.with_name(ckpt.stem + ".best" + ckpt.suffix)

    def target_pixel_size(self) -> float:
        return self.pixel_size_m if self.pixel_size_m is not None else settings.target_pixel_size_m


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    curation: CurationConfig = Field(default_factory=CurationConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    io: IOPaths = Field(default_factory=IOPaths)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(data: Dict[str, Any], assignment: str) -> None:
    """Apply `section.key=value` (value parsed as JSON, else kept as a string) in place."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"Override must look like section.key=value, got {assignment!r}")
    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Override {key!r}: {part!r} is not a section")
        node = child
    node[parts[-1]] = _parse_value(raw)


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> RunConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Run config not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Run config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Run config {path} must be a JSON object")
    for assignment in overrides:
        apply_override(data, assignment)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid run config: {e}") from e


def require_inputs(cfg: RunConfig, *fields: str) -> None:
    """Check that the io paths a subcommand reads exist; raises ConfigError listing the missing ones."""
    missing: List[str] = []
    for name in fields:
        value = getattr(cfg.io, name)
        if value is None or value == []:
            missing.append(f"io.{name} (not set)")
            continue
        for p in value if isinstance(value, list) else [value]:
            if not Path(p).exists():
                missing.append(f"io.{name}: {p}")
    if missing:
        raise ConfigError("Missing inputs: " + "; ".join(missing))


__all__ = [
    "CurationConfig",
    "IOPaths",
    "ModelSection",
    "PRESETS",
    "RunConfig",
    "SplitConfig",
    "TrainConfig",
    "apply_override",
    "load_run_config",
    "require_inputs",
]
