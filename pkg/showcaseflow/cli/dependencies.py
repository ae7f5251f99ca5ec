"""
Shared command dependencies.

Loaders for the configured stores and datasets, and the CommandContext
every subcommand runs inside: it times stages, tracks input and output
files and writes the run manifest.
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel

from showcaseflow.config import PipelineConfig
from showcaseflow.core.exceptions import MissingFileError
from showcaseflow.models.enums import EmbeddingKind
from showcaseflow.models.reports import RunManifest
from showcaseflow.services.distill import AlignmentClassifier
from showcaseflow.services.embedding_store import EmbeddingStore, data_path_for, load_store
from showcaseflow.services.model_manager import load_checkpoint
from showcaseflow.utils.monitoring import StageTimer
from showcaseflow.utils.validation import sha256_file

logger = logging.getLogger(__name__)

# Artifact names inside the output directory
CLASSIFIER_CHECKPOINT = "classifier.json"
EXPLANATION_PAIRS = "explanations.jsonl"
EXPLANATION_RECORDS = "explanation_records.jsonl"
RELEVANCE_CHECKPOINT = "relevance.json"
SHOWCASES = "showcases.jsonl"
EXPLAINER_CHECKPOINT = "explainer.json"
GENERATIONS = "generations.jsonl"


class CommandContext:
    """
    Per-command state: configuration, stage timings and file provenance.

    Inputs and outputs are hashed when the manifest is written, so the
    manifest reflects the final bytes on disk.
    """

    def __init__(self, command: str, config: PipelineConfig, manifest_dir: Optional[Path] = None):
        self.command = command
        self.config = config
        self.timer = StageTimer()
        self.started_at = datetime.now(timezone.utc)
        self.manifest_dir = Path(manifest_dir) if manifest_dir else config.paths.artifact("manifests")
        self._inputs: Dict[str, Path] = {}
        self._outputs: Dict[str, Path] = {}

    @property
    def paths(self):
        return self.config.paths

    def artifact(self, name: str) -> Path:
        return self.paths.artifact(name)

    def record_input(self, path: Path) -> Path:
        """Track an input file, plus its `.bin` blob when it is a store or checkpoint manifest."""
        path = Path(path)
        self._inputs[str(path)] = path
        blob = data_path_for(path)
        if path.suffix == ".json" and blob.is_file():
            self._inputs[str(blob)] = blob
        return path

    def record_output(self, path: Path) -> Path:
        path = Path(path)
        self._outputs[str(path)] = path
        blob = data_path_for(path)
        if path.suffix == ".json" and blob.is_file():
            self._outputs[str(blob)] = blob
        return path

    def write_report(self, name: str, report: Union[BaseModel, Dict[str, Any], list]) -> Path:
        """Write a pretty JSON report under `reports/` and track it as an output."""
        path = self.artifact("reports") / name
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = report.model_dump(mode="json") if isinstance(report, BaseModel) else report
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        return self.record_output(path)

    def manifest(self) -> RunManifest:
        return RunManifest(
            command=self.command,
            config=self.config.snapshot(),
            inputs={key: sha256_file(path) for key, path in sorted(self._inputs.items()) if path.is_file()},
            outputs={key: sha256_file(path) for key, path in sorted(self._outputs.items()) if path.is_file()},
            started_at=self.started_at,
            finished_at=datetime.now(timezone.utc),
            timings=dict(self.timer.timings),
        )

    def write_manifest(self) -> Path:
        path = self.manifest_dir / f"{self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        manifest = self.manifest()
        with open(path, "w", encoding="utf-8") as f:
            f.write(manifest.model_dump_json(indent=2))
            f.write("\n")
        logger.info(f"Wrote run manifest to {path}")
        return path


def get_store(context: CommandContext, path: Optional[Path], kind: EmbeddingKind, what: str) -> EmbeddingStore:
    """
    Load a configured embedding store and record it as an input.

    Raises:
        MissingFileError: If no path is configured or the files are missing
    """
    resolved = context.paths.resolve(path)
    if resolved is None:
        raise MissingFileError("<not configured>", what)
    store = load_store(resolved, kind=kind)
    context.record_input(resolved)
    return store


def get_image_store(context: CommandContext) -> EmbeddingStore:
    return get_store(context, context.paths.image_store, EmbeddingKind.IMAGE, "image store")


def get_review_store(context: CommandContext) -> EmbeddingStore:
    return get_store(context, context.paths.review_store, EmbeddingKind.REVIEW_TEXT, "review-text store")


def get_sentence_store(context: CommandContext) -> EmbeddingStore:
    return get_store(context, context.paths.sentence_store, EmbeddingKind.SENTENCE, "sentence store")


def get_classifier(context: CommandContext, required: bool = True) -> Optional[AlignmentClassifier]:
    """Alignment classifier written by the distill command, or None when optional and absent."""
    path = context.artifact(CLASSIFIER_CHECKPOINT)
    if not path.is_file() and not required:
        logger.warning(f"No alignment classifier at {path}; classifier-based metrics are skipped")
        return None
    parameters, _ = load_checkpoint(path)
    context.record_input(path)
    return AlignmentClassifier.from_parameters({name: t.numpy() for name, t in parameters.items()})


def input_path(context: CommandContext, path: Path, what: str) -> Path:
    """Resolve a configured dataset path, check it exists and record it as an input."""
    resolved = context.paths.resolve(path)
    if resolved is None or not resolved.is_file():
        raise MissingFileError(resolved, what)
    return context.record_input(resolved)
