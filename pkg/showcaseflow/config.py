import math
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from showcaseflow.core.exceptions import MissingFileError, UsageError
from showcaseflow.models.enums import LossMode, ProfileMode, SelectionMode

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class LogLevel(str, Enum):
    """Valid logging levels."""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class Environment(str, Enum):
    """Application environment types."""
    DEVELOPMENT = "development"
    PRODUCTION = "production"
    TESTING = "testing"


class Settings(BaseSettings):
    """
    Process-wide settings with type validation using Pydantic.

    Loads values from environment variables and `.env` and provides
    defaults. Pipeline hyperparameters live in PipelineConfig instead.
    """

    APP_NAME: str = "ShowcaseFlow"
    ENVIRONMENT: Environment = Environment.DEVELOPMENT
    DEBUG: bool = Field(False, description="Enable debug mode")
    LOG_LEVEL: LogLevel = LogLevel.INFO
    LOG_FILE: Optional[str] = Field(None, description="Path to log file (if None, logs to stdout only)")
    DETERMINISTIC: bool = Field(
        True,
        description="Force deterministic torch kernels so seeded runs are bit-reproducible"
    )
    NUM_THREADS: int = Field(
        1,
        description="Intra-op threads for torch. Set to 0 to use CPU count."
    )

    @field_validator("ENVIRONMENT", mode="before")
    @classmethod
    def validate_environment(cls, v: str) -> str:
        """Validate and normalize environment value."""
        if isinstance(v, str):
            return v.lower()
        return v

    @field_validator("NUM_THREADS")
    @classmethod
    def validate_num_threads(cls, v: int) -> int:
        """Validate and adjust thread count."""
        if v < 0:
            raise ValueError("NUM_THREADS must be a non-negative integer")
        if v == 0:
            import multiprocessing
            return multiprocessing.cpu_count()
        return v

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


class PathsConfig(BaseModel):
    """Input and output locations. Relative paths resolve against `root`."""
    root: Path = Field(Path("."), description="Directory relative paths are resolved against")
    image_store: Path = Path("images.json")
    review_store: Path = Path("reviews.json")
    sentence_store: Path = Path("sentences.json")
    lexicon_store: Optional[Path] = Field(
        Path("lexicon.json"),
        description="Per-token vectors used to embed generated sentences"
    )
    generated_sentence_store: Optional[Path] = Field(
        None,
        description="Precomputed embeddings of generated sentences, ids '<review_id>:<idx>'"
    )
    reviews: Path = Path("reviews.jsonl")
    annotated_pairs: Path = Path("annotated_pairs.jsonl")
    interactions: Path = Path("interactions.jsonl")
    vocabulary: Optional[Path] = None
    entity_vocabulary: Optional[Path] = None
    out_dir: Path = Path("out")

    def resolve(self, path: Optional[Path]) -> Optional[Path]:
        """Resolve a configured path against the root directory."""
        if path is None:
            return None
        path = Path(path)
        return path if path.is_absolute() else (self.root / path)

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.out_dir)

    def artifact(self, name: str) -> Path:
        """Path of a named artifact inside the output directory."""
        return self.output_dir / name

    @property
    def vocabulary_path(self) -> Path:
        return self.resolve(self.vocabulary) if self.vocabulary else self.artifact("vocab.txt")

    @property
    def entity_vocabulary_path(self) -> Path:
        if self.entity_vocabulary:
            return self.resolve(self.entity_vocabulary)
        return self.artifact("entities.txt")


class ModelConfig(BaseModel):
    """
    Architecture and objective settings of the explanation generator.

    The defaults are the desk-scale configuration; `full_scale()` returns the
    full-size one.
    """
    hidden: int = Field(64, gt=0, description="Hidden size of encoder and decoder")
    heads: int = Field(4, gt=0)
    enc_layers: int = Field(2, ge=1)
    dec_layers: int = Field(2, ge=1)
    ffn_multiplier: int = Field(4, ge=1)
    vocab: int = Field(0, ge=0, description="Vocabulary size; filled from the vocabulary file")
    image_dim: int = Field(0, ge=0, description="Image feature width; filled from the image store")
    review_dim: int = Field(0, ge=0, description="Review feature width; filled from the review store")
    proj_dim: int = Field(32, gt=0, description="Output width of the projection heads")
    max_len: int = Field(64, ge=2, le=64)
    max_images: int = Field(5, ge=1)
    max_history: int = Field(10, ge=0)
    use_reviews: bool = Field(True, description="Encode historical reviews next to images")
    temperature: float = Field(0.1, description="Contrastive temperature tau")
    lambda1: float = Field(0.2, description="Weight of the image-text contrastive term")
    lambda2: float = Field(0.2, description="Weight of the history-text contrastive term")
    alpha: float = Field(math.e, description="Base of the history-similarity negative weights")

    @field_validator("temperature")
    @classmethod
    def validate_temperature(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("temperature must be positive")
        return v

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        if v < 1:
            raise ValueError("alpha must be >= 1")
        return v

    @field_validator("lambda1", "lambda2")
    @classmethod
    def validate_lambdas(cls, v: float) -> float:
        if v < 0:
            raise ValueError("loss weights must be non-negative")
        return v

    @model_validator(mode="after")
    def validate_heads(self) -> "ModelConfig":
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        return self

    @classmethod
    def desk(cls, **overrides: Any) -> "ModelConfig":
        return cls(**{"hidden": 64, "heads": 4, "enc_layers": 2, "dec_layers": 2, **overrides})

    @classmethod
    def full_scale(cls, **overrides: Any) -> "ModelConfig":
        return cls(**{
            "hidden": 768, "heads": 12, "enc_layers": 3, "dec_layers": 12,
            "proj_dim": 256, **overrides,
        })


class DppConfig(BaseModel):
    """Image selection settings."""
    k: int = Field(3, ge=1, description="Showcase size K")
    user_hidden: List[int] = Field(default_factory=lambda: [64, 32, 16])
    image_hidden: List[int] = Field(default_factory=lambda: [64, 32, 16])
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(512, ge=1)
    epochs: int = Field(150, ge=0)
    weight_decay: float = Field(0.0, ge=0)
    profile_mode: ProfileMode = ProfileMode.IMG_TEXT
    selection_mode: SelectionMode = SelectionMode.DPP
    random_trials: int = Field(1000, ge=1)
    logit_clip: float = Field(15.0, gt=0, description="Bound on relevance logits before exponentiation")
    jitter: float = Field(1e-6, ge=0)

    @model_validator(mode="after")
    def validate_chains(self) -> "DppConfig":
        if not self.user_hidden or not self.image_hidden:
            raise ValueError("MLP chains must have at least one layer")
        if self.user_hidden[-1] != self.image_hidden[-1]:
            raise ValueError("user and image MLP chains must end in the same width")
        return self

    @classmethod
    def full_scale(cls, **overrides: Any) -> "DppConfig":
        return cls(**{
            "user_hidden": [512, 512, 256, 128],
            "image_hidden": [512, 512, 256, 128],
            **overrides,
        })


class GenerationConfig(BaseModel):
    """Decoding settings."""
    beam_size: int = Field(2, ge=1)
    max_len: int = Field(64, ge=1, le=64)


class TrainingConfig(BaseModel):
    """Optimisation settings of the explanation generator."""
    lr: float = Field(1e-4, gt=0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(30, ge=0)
    max_steps: Optional[int] = Field(None, ge=0)
    seed: int = 42
    weight_decay: float = Field(0.01, ge=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    loss_mode: LossMode = LossMode.CE_CCL_PCL
    log_every: int = Field(10, ge=1)


class DistillConfig(BaseModel):
    """Alignment classifier and explanation distillation settings."""
    threshold: float = Field(0.5, ge=0.0, le=1.0)
    epochs: int = Field(300, ge=0)
    lr: float = Field(0.05, gt=0)
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    @field_validator("split")
    @classmethod
    def validate_split(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(part < 0 for part in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split ratios must be non-negative and sum to 1")
        return v


class EvaluationConfig(BaseModel):
    """Evaluation settings."""
    bleu_orders: List[int] = Field(default_factory=lambda: [1, 4])
    nist_order: int = Field(4, ge=1)
    histogram_bins: int = Field(6, ge=1)
    histogram_width: int = Field(10, ge=1)


class PipelineConfig(BaseSettings):
    """
    Complete pipeline configuration.

    Sections mirror the TOML config file. Environment variables prefixed
    with SHOWCASE_ override defaults (nested with `__`), and values from a
    config file or CLI flags override the environment.
    """
    paths: PathsConfig = Field(default_factory=PathsConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    dpp: DppConfig = Field(default_factory=DppConfig)
    generation: GenerationConfig = Field(default_factory=GenerationConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    distill: DistillConfig = Field(default_factory=DistillConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    model_config = SettingsConfigDict(
        env_prefix="SHOWCASE_",
        env_nested_delimiter="__",
        extra="forbid",
        protected_namespaces=(),
    )

    def snapshot(self) -> Dict[str, Any]:
        """JSON-compatible copy of the configuration."""
        return self.model_dump(mode="json")


def _merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_pipeline_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> PipelineConfig:
    """
    Build a PipelineConfig from an optional TOML file plus overrides.

    Args:
        path: TOML config file; its directory becomes `paths.root` unless
            the file sets one
        overrides: Nested mapping applied on top of the file (CLI flags)

    Returns:
        The validated configuration

    Raises:
        MissingFileError: If the config file does not exist
        UsageError: If the file cannot be parsed or values are invalid
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise MissingFileError(path, "config file")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise UsageError(f"invalid config file {path}: {e}") from e
        paths = data.setdefault("paths", {})
        root = Path(paths.get("root", "."))
        paths["root"] = str(root if root.is_absolute() else (path.parent / root))
    if overrides:
        data = _merge(data, overrides)
    try:
        return PipelineConfig(**data)
    except ValueError as e:
        raise UsageError(f"invalid configuration: {e}") from e


# Create a singleton instance to be imported by other modules
settings = Settings()
