"""End-to-end pipeline orchestration and report persistence.

Runs ingest -> keyframe selection -> captioning -> document assembly ->
ranking -> title + abstract, then persists a canonical-JSON report. All
stages are deterministic given a deterministic backend; the `deterministic`
flag zeroes the timings block so reports are byte-stable.
"""

from __future__ import annotations

import contextlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

from . import __version__
from .captioner import (
    BackendSpec,
    Transport,
    assemble_document,
    build_backend,
    caption_keyframes,
)
from .errors import ClipscribeError, ConfigError, InputError, IoFailure, StageError
from .ingest import Frame, ImageSequenceSource, SourceKind, StreamMeta, Y4MStream
from .keyframes import KeyframeConfig, select_keyframes
from .summarizer import (
    SummarizerConfig,
    build_similarity_matrix,
    extract_summary,
    fallback_abstract,
    http_abstract,
    rank_sentences,
    split_sentences,
    title,
)

INPUT_Y4M = "y4m"
INPUT_IMAGES = "images"

ABSTRACT_HTTP = "http"
ABSTRACT_FALLBACK = "fallback"

ABSTRACT_KIND_HTTP = "http"
ABSTRACT_KIND_FALLBACK = "extractive_fallback"


@dataclass(frozen=True)
class PipelineConfig:
    input_path: str
    input_kind: str
    image_pattern: str = "*"
    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    captioner: BackendSpec = field(default_factory=lambda: BackendSpec(kind="procedural_mock"))
    abstract_backend: str = ABSTRACT_FALLBACK
    abstract_endpoint: str | None = None
    max_words: int = 50
    summarizer: SummarizerConfig = field(default_factory=SummarizerConfig)
    output_path: str | None = None
    cache_dir: str | None = None
    deterministic: bool = False

    def __post_init__(self) -> None:
        if self.input_kind not in (INPUT_Y4M, INPUT_IMAGES):
            raise ConfigError(f"input kind must be y4m or images, got {self.input_kind!r}")
        if self.abstract_backend not in (ABSTRACT_HTTP, ABSTRACT_FALLBACK):
            raise ConfigError(
                f"abstract backend must be http or fallback, got {self.abstract_backend!r}"
            )
        if self.abstract_backend == ABSTRACT_HTTP and not self.abstract_endpoint:
            raise ConfigError("http abstract backend requires an endpoint")
        if self.max_words < 1:
            raise ConfigError("max_words must be >= 1")

    def validate_paths(self) -> None:
        """Referenced paths must exist before the pipeline starts."""
        if self.input_path != "-" and not Path(self.input_path).exists():
            raise ConfigError(f"input path does not exist: {self.input_path}")
        if self.input_kind == INPUT_IMAGES and self.input_path == "-":
            raise ConfigError("image sequence input cannot be read from stdin")
        manifest = self.captioner.manifest
        if manifest is not None and not Path(manifest).exists():
            raise ConfigError(f"caption manifest does not exist: {manifest}")
        stopwords = self.summarizer.stopword_list
        if stopwords is not None and not Path(stopwords).exists():
            raise ConfigError(f"stopword list does not exist: {stopwords}")

    def as_dict(self) -> dict:
        """Config echo in the same JSON schema the --config file uses."""
        return {
            "input": {
                "path": self.input_path,
                "kind": self.input_kind,
                "pattern": self.image_pattern,
            },
            "keyframes": asdict(self.keyframes),
            "captioner": {
                "kind": self.captioner.kind,
                "endpoint": self.captioner.endpoint,
                "manifest": _as_str(self.captioner.manifest),
                "timeout_ms": self.captioner.timeout_ms,
                "max_retries": self.captioner.max_retries,
                "parallelism": self.captioner.parallelism,
            },
            "abstract": {
                "backend": self.abstract_backend,
                "endpoint": self.abstract_endpoint,
                "max_words": self.max_words,
            },
            "summarizer": {
                "top_n": self.summarizer.top_n,
                "damping": self.summarizer.damping,
                "tolerance": self.summarizer.tolerance,
                "max_iterations": self.summarizer.max_iterations,
                "stopword_list": _as_str(self.summarizer.stopword_list),
            },
            "output": self.output_path,
            "cache_dir": _as_str(self.cache_dir),
            "deterministic": self.deterministic,
        }


def _as_str(value) -> str | None:
    return None if value is None else str(value)


def config_from_dict(data: dict) -> PipelineConfig:
    """Build a PipelineConfig from the JSON schema emitted by as_dict()."""
    inp = data.get("input") or {}
    if not inp.get("path"):
        raise ConfigError("config requires input.path")
    kf = data.get("keyframes") or {}
    cap = data.get("captioner") or {}
    abst = data.get("abstract") or {}
    summ = data.get("summarizer") or {}
    try:
        return PipelineConfig(
            input_path=inp["path"],
            input_kind=inp.get("kind", INPUT_Y4M),
            image_pattern=inp.get("pattern", "*"),
            keyframes=KeyframeConfig(**kf),
            captioner=BackendSpec(kind=cap.get("kind", "procedural_mock"), **{
                k: v for k, v in cap.items() if k != "kind"
            }),
            abstract_backend=abst.get("backend", ABSTRACT_FALLBACK),
            abstract_endpoint=abst.get("endpoint"),
            max_words=abst.get("max_words", 50),
            summarizer=SummarizerConfig(**summ),
            output_path=data.get("output"),
            cache_dir=data.get("cache_dir"),
            deterministic=bool(data.get("deterministic", False)),
        )
    except TypeError as exc:
        raise ConfigError(f"bad config key: {exc}") from exc


def merge_config_layers(*layers: dict) -> dict:
    """Later layers win; nested dicts merge key by key."""
    merged: dict = {}
    for layer in layers:
        for key, value in layer.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = merge_config_layers(merged[key], value)
            else:
                merged[key] = value
    return merged


@dataclass
class PipelineReport:
    tool_version: str
    input: dict
    keyframes: list[dict]
    captions: list[dict]
    document: str
    title: str
    abstract: str
    abstract_kind: str
    config: dict
    timings: dict

    def as_dict(self) -> dict:
        return asdict(self)


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except ClipscribeError as exc:
        raise StageError(name, exc) from exc
    except OSError as exc:
        raise StageError(name, InputError(str(exc))) from exc


def _counted(frames: Iterator[Frame], cell: list[int]) -> Iterator[Frame]:
    for frame in frames:
        cell[0] += 1
        yield frame


def run_pipeline(
    config: PipelineConfig,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> PipelineReport:
    """Execute the full pipeline; fails fast per stage, no partial report."""
    config.validate_paths()
    timings: dict[str, int] = {}
    started = time.perf_counter()

    def mark(stage: str, since: float) -> float:
        now = time.perf_counter()
        timings[f"{stage}_ms"] = int(round((now - since) * 1000))
        return now

    close_me = None
    try:
        t = time.perf_counter()
        with _stage("ingest"):
            if config.input_kind == INPUT_IMAGES:
                source = ImageSequenceSource(config.input_path, config.image_pattern)
            elif config.input_path == "-":
                source = Y4MStream(sys.stdin.buffer)
            else:
                close_me = open(config.input_path, "rb")
                source = Y4MStream(close_me)
            meta: StreamMeta = source.meta
        t = mark("ingest", t)

        frame_count = [0]
        with _stage("keyframes"):
            keyframes = select_keyframes(_counted(iter(source), frame_count), config.keyframes)
        t = mark("keyframes", t)
    finally:
        if close_me is not None:
            close_me.close()

    with _stage("caption"):
        backend = build_backend(
            config.captioner, transport=transport, cache_dir=config.cache_dir, sleep=sleep
        )
        captions = caption_keyframes(backend, keyframes, config.captioner.parallelism)
        document = assemble_document(captions)
    t = mark("caption", t)

    with _stage("summarize"):
        stopwords = config.summarizer.stopwords()
        sentences = split_sentences(document.text, stopwords)
        matrix = build_similarity_matrix(sentences)
        scores = rank_sentences(matrix, config.summarizer)
        title_text = title(sentences, scores)
        if config.abstract_backend == ABSTRACT_HTTP:
            abstract = http_abstract(
                config.abstract_endpoint,
                document.text,
                config.max_words,
                timeout_ms=config.captioner.timeout_ms,
                transport=transport,
            )
            abstract_kind = ABSTRACT_KIND_HTTP
        else:
            abstract = fallback_abstract(document.text, sentences, scores, config.max_words)
            abstract_kind = ABSTRACT_KIND_FALLBACK
    mark("summarize", t)
    timings["total_ms"] = int(round((time.perf_counter() - started) * 1000))

    if config.deterministic:
        timings = {key: 0 for key in timings}

    report = PipelineReport(
        tool_version=__version__,
        input={
            "path": config.input_path,
            "kind": meta.source_kind.value,
            "width": meta.width,
            "height": meta.height,
            "fps_num": meta.fps_num,
            "fps_den": meta.fps_den,
            "frame_count": frame_count[0],
        },
        keyframes=[
            {
                "frame_index": kf.frame_index,
                "timestamp_ms": kf.timestamp_ms,
                "distance": kf.distance_from_previous_keyframe,
            }
            for kf in keyframes
        ],
        captions=[
            {
                "frame_index": cap.frame_index,
                "text": cap.text,
                "score": cap.score,
                "backend_id": cap.backend_id,
            }
            for cap in captions
        ],
        document=document.text,
        title=title_text,
        abstract=abstract,
        abstract_kind=abstract_kind,
        config=config.as_dict(),
        timings=timings,
    )
    assert report.title in report.document, "title must be verbatim in the document"
    assert len(report.captions) == len(report.keyframes)
    return report


def _canonical_value(value: Any) -> Any:
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError("non-finite reals cannot be serialized")
        return float(format(value, ".9g"))
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        return {str(k): _canonical_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical_value(v) for v in value]
    raise TypeError(f"cannot serialize {type(value).__name__} into a report")


def canonical_json(data: Any) -> str:
    """Sorted keys, UTF-8, compact separators, reals at <= 9 significant digits."""
    return (
        json.dumps(
            _canonical_value(data),
            sort_keys=True,
            ensure_ascii=False,
            allow_nan=False,
            separators=(",", ":"),
        )
        + "\n"
    )


def write_report(report: PipelineReport | dict, path: str | Path) -> None:
    data = report.as_dict() if isinstance(report, PipelineReport) else report
    text = canonical_json(data)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write report to {path}: {exc}") from exc
