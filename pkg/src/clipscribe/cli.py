"""Command-line interface: run | keyframes | caption | summarize | score.

Every stage is independently scriptable; intermediate artifacts are plain
JSON so subcommands compose into exactly what `run` produces. Config
precedence is flags > --config file > built-in defaults.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import __version__
from .captioner import assemble_document, build_backend, caption_keyframes
from .errors import ClipscribeError, ConfigError, InputError
from .ingest import ImageSequenceSource, Y4MStream
from .keyframes import (
    Keyframe,
    KeyframeConfig,
    frame_signature,
    png_encode_gray,
)
from .metrics import bleu, cider, metric_tokenize
from .pipeline import (
    PipelineConfig,
    canonical_json,
    config_from_dict,
    merge_config_layers,
    run_pipeline,
    write_report,
)
from .summarizer import (
    SummarizerConfig,
    build_similarity_matrix,
    extract_summary,
    fallback_abstract,
    rank_sentences,
    split_sentences,
    title,
)

BLEU_VARIANT = "standard: clipped n-gram precision, geometric mean n=1..max_n, brevity penalty, no smoothing"
CIDER_VARIANT = "plain: tf-idf n-gram cosine consensus, no length penalty, no x10 scaling"

_CAPTIONER_KINDS = {"http": "http", "scripted": "scripted_mock", "procedural": "procedural_mock"}


def _fail_on_pipeline_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ClipscribeError as exc:
            click.echo(f"clipscribe: error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


def _emit(data, output: str | None) -> None:
    text = canonical_json(data)
    if output:
        write_report(data, output)
    else:
        click.echo(text, nl=False)


def _load_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from exc


def _open_source(input_path: str, input_kind: str, pattern: str):
    if input_kind == "images":
        return ImageSequenceSource(input_path, pattern)
    if input_path == "-":
        return Y4MStream(sys.stdin.buffer)
    try:
        reader = open(input_path, "rb")
    except OSError as exc:
        raise ConfigError(f"cannot open input {input_path}: {exc}") from exc
    return Y4MStream(reader)


@click.group()
@click.version_option(version=__version__, prog_name="clipscribe")
def main() -> None:
    """Turn a video into a descriptive title and a concise abstract."""


@main.command("run")
@click.option("--config", "config_path", type=click.Path(), help="JSON config file.")
@click.option("--input", "input_path", type=str, help="Video path, or - for stdin.")
@click.option("--input-kind", type=click.Choice(["y4m", "images"]), default=None)
@click.option("--pattern", default=None, help="Glob for image sequences.")
@click.option("--captioner", type=click.Choice(sorted(_CAPTIONER_KINDS)), default=None)
@click.option("--endpoint", default=None, help="Caption backend base URL.")
@click.option("--manifest", type=click.Path(), default=None, help="Scripted caption manifest.")
@click.option("--keyframe-threshold", type=float, default=None)
@click.option("--min-gap", type=int, default=None)
@click.option("--max-keyframes", type=int, default=None)
@click.option("--top-n", type=int, default=None)
@click.option("--abstract-backend", type=click.Choice(["http", "fallback"]), default=None)
@click.option("--abstract-endpoint", default=None, help="Summarize backend base URL.")
@click.option("--max-words", type=int, default=None)
@click.option("--output", type=click.Path(), default=None)
@click.option("--cache-dir", type=click.Path(), default=None)
@click.option("--deterministic", is_flag=True, default=False)
@_fail_on_pipeline_errors
def run_cmd(
    config_path,
    input_path,
    input_kind,
    pattern,
    captioner,
    endpoint,
    manifest,
    keyframe_threshold,
    min_gap,
    max_keyframes,
    top_n,
    abstract_backend,
    abstract_endpoint,
    max_words,
    output,
    cache_dir,
    deterministic,
):
    """Run the full pipeline and write a canonical JSON report."""
    file_layer = _load_json(config_path, "config") if config_path else {}
    if not isinstance(file_layer, dict):
        raise ConfigError("config file must hold a JSON object")

    flag_layer: dict = {}
    inp = {}
    if input_path is not None:
        inp["path"] = input_path
    if input_kind is not None:
        inp["kind"] = input_kind
    if pattern is not None:
        inp["pattern"] = pattern
    if inp:
        flag_layer["input"] = inp
    kf = {}
    if keyframe_threshold is not None:
        kf["threshold"] = keyframe_threshold
    if min_gap is not None:
        kf["min_gap"] = min_gap
    if max_keyframes is not None:
        kf["max_keyframes"] = max_keyframes
    if kf:
        flag_layer["keyframes"] = kf
    cap = {}
    if captioner is not None:
        cap["kind"] = _CAPTIONER_KINDS[captioner]
    if endpoint is not None:
        cap["endpoint"] = endpoint
    if manifest is not None:
        cap["manifest"] = manifest
    if cap:
        flag_layer["captioner"] = cap
    abst = {}
    if abstract_backend is not None:
        abst["backend"] = abstract_backend
    if abstract_endpoint is not None:
        abst["endpoint"] = abstract_endpoint
    if max_words is not None:
        abst["max_words"] = max_words
    if abst:
        flag_layer["abstract"] = abst
    if top_n is not None:
        flag_layer["summarizer"] = {"top_n": top_n}
    if output is not None:
        flag_layer["output"] = output
    if cache_dir is not None:
        flag_layer["cache_dir"] = cache_dir
    if deterministic:
        flag_layer["deterministic"] = True

    config = config_from_dict(merge_config_layers(file_layer, flag_layer))
    report = run_pipeline(config)
    if config.output_path:
        write_report(report, config.output_path)
    else:
        click.echo(canonical_json(report.as_dict()), nl=False)


@main.command("keyframes")
@click.option("--input", "input_path", required=True, type=str)
@click.option("--input-kind", type=click.Choice(["y4m", "images"]), default="y4m")
@click.option("--pattern", default="*")
@click.option("--threshold", type=float, default=0.3)
@click.option("--min-gap", type=int, default=0)
@click.option("--max-keyframes", type=int, default=None)
@click.option("--mode", type=click.Choice(["change_detect", "uniform"]), default="change_detect")
@click.option("--uniform-k", type=int, default=None)
@click.option("--bins", type=int, default=64)
@click.option("--output", type=click.Path(), default=None)
@_fail_on_pipeline_errors
def keyframes_cmd(
    input_path, input_kind, pattern, threshold, min_gap, max_keyframes, mode, uniform_k, bins, output
):
    """Select key-frames; emits a JSON array of index/timestamp/distance."""
    from .keyframes import select_keyframes

    config = KeyframeConfig(
        threshold=threshold,
        min_gap=min_gap,
        max_keyframes=max_keyframes,
        mode=mode,
        uniform_k=uniform_k,
        bins=bins,
    )
    source = _open_source(input_path, input_kind, pattern)
    keyframes = select_keyframes(iter(source), config)
    _emit(
        [
            {
                "frame_index": kf.frame_index,
                "timestamp_ms": kf.timestamp_ms,
                "distance": kf.distance_from_previous_keyframe,
            }
            for kf in keyframes
        ],
        output,
    )


@main.command("caption")
@click.option("--input", "input_path", required=True, type=str)
@click.option("--input-kind", type=click.Choice(["y4m", "images"]), default="y4m")
@click.option("--pattern", default="*")
@click.option("--keyframes", "keyframes_path", required=True, type=click.Path())
@click.option("--captioner", type=click.Choice(sorted(_CAPTIONER_KINDS)), default="procedural")
@click.option("--endpoint", default=None)
@click.option("--manifest", type=click.Path(), default=None)
@click.option("--timeout-ms", type=int, default=10000)
@click.option("--max-retries", type=int, default=3)
@click.option("--parallelism", type=int, default=4)
@click.option("--bins", type=int, default=64)
@click.option("--cache-dir", type=click.Path(), default=None)
@click.option("--output", type=click.Path(), default=None)
@_fail_on_pipeline_errors
def caption_cmd(
    input_path,
    input_kind,
    pattern,
    keyframes_path,
    captioner,
    endpoint,
    manifest,
    timeout_ms,
    max_retries,
    parallelism,
    bins,
    cache_dir,
    output,
):
    """Caption previously selected key-frames and assemble the document."""
    from .captioner import BackendSpec

    selected = _load_json(keyframes_path, "keyframes file")
    if not isinstance(selected, list) or not all(
        isinstance(e, dict) and isinstance(e.get("frame_index"), int) for e in selected
    ):
        raise InputError("keyframes file must be a JSON array of objects with frame_index")
    wanted = {e["frame_index"]: e for e in selected}

    source = _open_source(input_path, input_kind, pattern)
    keyframes = []
    for frame in source:
        entry = wanted.get(frame.index)
        if entry is None:
            continue
        keyframes.append(
            Keyframe(
                frame_index=frame.index,
                timestamp_ms=frame.timestamp_ms,
                signature=frame_signature(frame.luma, bins),
                image_payload=png_encode_gray(frame.width, frame.height, frame.luma),
                distance_from_previous_keyframe=float(entry.get("distance", 0.0)),
                width=frame.width,
                height=frame.height,
            )
        )
    if len(keyframes) != len(wanted):
        missing = sorted(set(wanted) - {kf.frame_index for kf in keyframes})
        raise InputError(f"input stream has no frames at indices {missing}")

    spec = BackendSpec(
        kind=_CAPTIONER_KINDS[captioner],
        endpoint=endpoint,
        manifest=manifest,
        timeout_ms=timeout_ms,
        max_retries=max_retries,
        parallelism=parallelism,
    )
    backend = build_backend(spec, cache_dir=cache_dir)
    captions = caption_keyframes(backend, keyframes, spec.parallelism)
    document = assemble_document(captions)
    _emit(
        {
            "captions": [
                {
                    "frame_index": c.frame_index,
                    "text": c.text,
                    "score": c.score,
                    "backend_id": c.backend_id,
                }
                for c in captions
            ],
            "document": {
                "text": document.text,
                "provenance": [
                    {"frame_index": idx, "start": span[0], "end": span[1]}
                    for idx, span in document.provenance
                ],
            },
        },
        output,
    )


@main.command("summarize")
@click.option("--text-file", required=True, type=click.Path())
@click.option("--top-n", type=int, default=3)
@click.option("--damping", type=float, default=0.85)
@click.option("--tolerance", type=float, default=1e-6)
@click.option("--max-iterations", type=int, default=100)
@click.option("--stopwords", "stopwords_path", type=click.Path(), default=None)
@click.option("--max-words", type=int, default=None, help="Also emit the fallback abstract.")
@click.option("--output", type=click.Path(), default=None)
@_fail_on_pipeline_errors
def summarize_cmd(text_file, top_n, damping, tolerance, max_iterations, stopwords_path, max_words, output):
    """Rank a document's sentences; print title and extractive summary."""
    try:
        text = Path(text_file).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {text_file}: {exc}") from exc
    config = SummarizerConfig(
        top_n=top_n,
        damping=damping,
        tolerance=tolerance,
        max_iterations=max_iterations,
        stopword_list=stopwords_path,
    )
    sentences = split_sentences(text, config.stopwords())
    matrix = build_similarity_matrix(sentences)
    scores = rank_sentences(matrix, config)
    result = {
        "title": title(sentences, scores),
        "summary": extract_summary(sentences, scores, config.top_n),
    }
    if max_words is not None:
        result["abstract"] = fallback_abstract(text, sentences, scores, max_words)
        result["abstract_kind"] = "extractive_fallback"
    _emit(result, output)


@main.command("score")
@click.option("--candidates", "candidates_path", required=True, type=click.Path())
@click.option("--references", "references_path", required=True, type=click.Path())
@click.option("--max-n", type=int, default=4)
@click.option("--output", type=click.Path(), default=None)
@_fail_on_pipeline_errors
def score_cmd(candidates_path, references_path, max_n, output):
    """Score candidate captions against references with BLEU and CIDEr."""
    candidates = _load_json(candidates_path, "candidates file")
    references = _load_json(references_path, "references file")
    if not isinstance(candidates, dict) or not all(
        isinstance(v, str) for v in candidates.values()
    ):
        raise InputError("candidates file must map item ids to caption strings")
    if not isinstance(references, dict) or not all(
        isinstance(v, list) and v and all(isinstance(r, str) for r in v)
        for v in references.values()
    ):
        raise InputError("references file must map item ids to non-empty caption arrays")

    cand_tokens = {k: metric_tokenize(v) for k, v in candidates.items()}
    ref_tokens = {k: [metric_tokenize(r) for r in v] for k, v in references.items()}

    cider_scores, cider_mean = cider(cand_tokens, ref_tokens, max_n)
    items = {}
    bleu_total = 0.0
    for item_id, tokens in cand_tokens.items():
        score = bleu(tokens, ref_tokens[item_id], max_n)
        items[item_id] = {"bleu": score, "cider": cider_scores[item_id]}
        bleu_total += score
    _emit(
        {
            "items": items,
            "mean": {"bleu": bleu_total / len(items), "cider": cider_mean},
            "bleu_variant": BLEU_VARIANT,
            "cider_variant": CIDER_VARIANT,
        },
        output,
    )


if __name__ == "__main__":
    main()
