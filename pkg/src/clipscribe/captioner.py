"""Per-keyframe captioning through a pluggable backend.

The neural captioner lives behind an HTTP wire protocol; two deterministic
mock backends (scripted manifest lookup and a procedural template fill) make
the pipeline testable without it. Captions are assembled in frame order into
the document fed to summarization.
"""

from __future__ import annotations

import base64
import concurrent.futures
import hashlib
import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .errors import (
    BackendUnreachable,
    BadResponse,
    ConfigError,
    EmptyCaption,
    EmptyCaptionList,
    EmptyLexicon,
    ManifestMiss,
)
from .keyframes import FrameSignature, Keyframe

KIND_HTTP = "http"
KIND_SCRIPTED = "scripted_mock"
KIND_PROCEDURAL = "procedural_mock"

RETRY_BASE_MS = 250

# transport: (url, request body, timeout_ms) -> (status, response body).
# Network-level failures raise OSError/URLError and are retried; any received
# response with a bad status or schema is final.
Transport = Callable[[str, bytes, int], tuple[int, bytes]]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


@dataclass(frozen=True)
class Caption:
    frame_index: int
    text: str
    score: float | None
    backend_id: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise EmptyCaption(f"blank caption for frame {self.frame_index}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise BadResponse(f"caption score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    endpoint: str | None = None
    manifest: str | Path | None = None
    timeout_ms: int = 10000
    max_retries: int = 3
    parallelism: int = 4

    def __post_init__(self) -> None:
        if self.kind not in (KIND_HTTP, KIND_SCRIPTED, KIND_PROCEDURAL):
            raise ConfigError(f"unknown captioner kind: {self.kind!r}")
        if self.kind == KIND_HTTP and not self.endpoint:
            raise ConfigError("http captioner requires an endpoint")
        if self.kind == KIND_SCRIPTED and not self.manifest:
            raise ConfigError("scripted_mock captioner requires a manifest")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")


@dataclass(frozen=True)
class Document:
    """Ordered concatenation of captions with per-caption character spans."""

    text: str
    provenance: tuple[tuple[int, tuple[int, int]], ...]


@dataclass(frozen=True)
class Lexicon:
    subjects: tuple[str, ...]
    verbs: tuple[str, ...]
    objects: tuple[str, ...]
    scenes: tuple[str, ...]

    def __post_init__(self) -> None:
        for name in ("subjects", "verbs", "objects", "scenes"):
            if not getattr(self, name):
                raise EmptyLexicon(f"lexicon {name} list is empty")


DEFAULT_LEXICON = Lexicon(
    subjects=("man", "woman", "dog", "cat", "horse", "child", "bird", "group of people"),
    verbs=("rides", "watches", "chases", "holds", "walks past", "stands near", "plays with"),
    objects=("horse", "bicycle", "ball", "kite", "car", "bench", "umbrella", "boat", "tree"),
    scenes=("field", "street", "park", "room", "beach", "forest", "stadium", "kitchen", "market", "harbor", "garden"),
)


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def signature_fingerprint(signature: FrameSignature) -> str:
    """Bins quantized to 3 decimals, colon-joined: the procedural hash input."""
    return ":".join(f"{b:.3f}" for b in signature.bins)


def procedural_caption(signature: FrameSignature, lexicon: Lexicon = DEFAULT_LEXICON) -> str:
    """Deterministic template caption drawn from the signature's hash.

    Successive mixed-radix digits of the 64-bit FNV-1a hash of the
    fingerprint pick the subject, verb, object and scene.
    """
    h = fnv1a_64(signature_fingerprint(signature).encode("utf-8"))
    subject = lexicon.subjects[h % len(lexicon.subjects)]
    h //= len(lexicon.subjects)
    verb = lexicon.verbs[h % len(lexicon.verbs)]
    h //= len(lexicon.verbs)
    obj = lexicon.objects[h % len(lexicon.objects)]
    h //= len(lexicon.objects)
    scene = lexicon.scenes[h % len(lexicon.scenes)]
    return f"a {subject} {verb} a {obj} in a {scene}."


def urllib_transport(url: str, body: bytes, timeout_ms: int) -> tuple[int, bytes]:
    req = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout_ms / 1000.0) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        # a response arrived; let the caller classify the bad status
        return exc.code, exc.read()


class CaptionCache:
    """Responses keyed by (backend id, payload content hash), optionally on disk."""

    def __init__(self, cache_dir: str | Path | None = None):
        self._mem: dict[str, dict] = {}
        self._dir = Path(cache_dir) if cache_dir else None
        if self._dir:
            self._dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(backend_id: str, payload: bytes) -> str:
        digest = hashlib.sha256()
        digest.update(backend_id.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(payload)
        return digest.hexdigest()

    def get(self, key: str) -> dict | None:
        if key in self._mem:
            return self._mem[key]
        if self._dir:
            path = self._dir / f"{key}.json"
            if path.exists():
                entry = json.loads(path.read_text(encoding="utf-8"))
                self._mem[key] = entry
                return entry
        return None

    def put(self, key: str, entry: dict) -> None:
        self._mem[key] = entry
        if self._dir:
            (self._dir / f"{key}.json").write_text(
                json.dumps(entry, sort_keys=True), encoding="utf-8"
            )


class HttpCaptionBackend:
    """POSTs keyframes to `{endpoint}/v1/caption`, with retries and caching."""

    dedupe_by_payload = True

    def __init__(
        self,
        spec: BackendSpec,
        transport: Transport | None = None,
        cache: CaptionCache | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._spec = spec
        self._transport = transport or urllib_transport
        self._cache = cache or CaptionCache()
        self._sleep = sleep
        self.backend_id = f"http:{spec.endpoint}"
        self._url = spec.endpoint.rstrip("/") + "/v1/caption"

    def cache_key(self, keyframe: Keyframe) -> str:
        return CaptionCache.key(self.backend_id, keyframe.image_payload)

    def caption(self, keyframe: Keyframe) -> Caption:
        key = self.cache_key(keyframe)
        entry = self._cache.get(key)
        if entry is None:
            entry = self._fetch(keyframe)
            self._cache.put(key, entry)
        return Caption(
            frame_index=keyframe.frame_index,
            text=entry["caption"],
            score=entry.get("score"),
            backend_id=self.backend_id,
        )

    def _fetch(self, keyframe: Keyframe) -> dict:
        body = json.dumps(
            {
                "id": str(keyframe.frame_index),
                "width": keyframe.width,
                "height": keyframe.height,
                "format": "png-base64",
                "data": base64.b64encode(keyframe.image_payload).decode("ascii"),
            }
        ).encode("utf-8")

        last_error: Exception | None = None
        for attempt in range(self._spec.max_retries + 1):
            if attempt > 0:
                self._sleep(RETRY_BASE_MS * (2 ** (attempt - 1)) / 1000.0)
            try:
                status, response = self._transport(self._url, body, self._spec.timeout_ms)
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                last_error = exc
                continue
            return self._parse_response(keyframe.frame_index, status, response)
        raise BackendUnreachable(
            f"{self._url} unreachable after {self._spec.max_retries} retries: {last_error}"
        ) from last_error

    @staticmethod
    def _parse_response(frame_index: int, status: int, response: bytes) -> dict:
        if status != 200:
            raise BadResponse(f"frame {frame_index}: backend returned status {status}")
        try:
            payload = json.loads(response.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BadResponse(f"frame {frame_index}: response is not JSON") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get("caption"), str):
            raise BadResponse(f"frame {frame_index}: response lacks a string 'caption'")
        text = payload["caption"].strip()
        if not text:
            raise EmptyCaption(f"frame {frame_index}: backend returned a blank caption")
        score = payload.get("score")
        if score is not None and (isinstance(score, bool) or not isinstance(score, (int, float))):
            raise BadResponse(f"frame {frame_index}: 'score' is not a number")
        entry = {"caption": text}
        if score is not None:
            entry["score"] = float(score)
        return entry


class ScriptedMockBackend:
    """Captions looked up by frame index in a JSON manifest."""

    dedupe_by_payload = False
    backend_id = KIND_SCRIPTED

    def __init__(self, manifest: str | Path | dict):
        if isinstance(manifest, (str, Path)):
            try:
                manifest = json.loads(Path(manifest).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot load caption manifest: {exc}") from exc
        if not isinstance(manifest, dict) or not all(
            isinstance(k, str) and k.isdigit() and isinstance(v, str)
            for k, v in manifest.items()
        ):
            raise ConfigError(
                "caption manifest must map decimal frame-index strings to caption strings"
            )
        self._manifest = manifest

    def caption(self, keyframe: Keyframe) -> Caption:
        key = str(keyframe.frame_index)
        if key not in self._manifest:
            raise ManifestMiss(f"manifest has no caption for frame {keyframe.frame_index}")
        text = self._manifest[key].strip()
        if not text:
            raise EmptyCaption(f"manifest caption for frame {keyframe.frame_index} is blank")
        return Caption(
            frame_index=keyframe.frame_index, text=text, score=None, backend_id=self.backend_id
        )


class ProceduralMockBackend:
    """Deterministic signature-driven template captions."""

    dedupe_by_payload = False
    backend_id = KIND_PROCEDURAL

    def __init__(self, lexicon: Lexicon = DEFAULT_LEXICON):
        self._lexicon = lexicon

    def caption(self, keyframe: Keyframe) -> Caption:
        return Caption(
            frame_index=keyframe.frame_index,
            text=procedural_caption(keyframe.signature, self._lexicon),
            score=None,
            backend_id=self.backend_id,
        )


def build_backend(
    spec: BackendSpec,
    transport: Transport | None = None,
    cache_dir: str | Path | None = None,
    lexicon: Lexicon = DEFAULT_LEXICON,
    sleep: Callable[[float], None] = time.sleep,
):
    if spec.kind == KIND_HTTP:
        return HttpCaptionBackend(
            spec, transport=transport, cache=CaptionCache(cache_dir), sleep=sleep
        )
    if spec.kind == KIND_SCRIPTED:
        return ScriptedMockBackend(spec.manifest)
    return ProceduralMockBackend(lexicon)


def caption_keyframes(backend, keyframes: Sequence[Keyframe], parallelism: int = 4) -> list[Caption]:
    """Caption every keyframe, up to `parallelism` requests in flight.

    Results come back ordered by frame index regardless of completion order;
    for payload-cached backends each distinct payload is fetched once.
    """
    if not keyframes:
        return []

    if getattr(backend, "dedupe_by_payload", False):
        unique: dict[str, Keyframe] = {}
        for kf in keyframes:
            unique.setdefault(backend.cache_key(kf), kf)
        fetched = _parallel_map(backend.caption, list(unique.values()), parallelism)
        by_key = {key: cap for key, cap in zip(unique.keys(), fetched)}
        return [
            Caption(
                frame_index=kf.frame_index,
                text=by_key[backend.cache_key(kf)].text,
                score=by_key[backend.cache_key(kf)].score,
                backend_id=by_key[backend.cache_key(kf)].backend_id,
            )
            for kf in keyframes
        ]

    return _parallel_map(backend.caption, keyframes, parallelism)


def _parallel_map(fn, items: Sequence[Keyframe], parallelism: int) -> list[Caption]:
    if parallelism <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


def assemble_document(captions: Sequence[Caption]) -> Document:
    """Join trimmed captions with single spaces, recording per-caption spans.

    A terminal '.' is appended to captions lacking terminal '.', '!' or '?'.
    Duplicate adjacent captions are retained: repeated scenery legitimately
    raises the rank of persistent content.
    """
    if not captions:
        raise EmptyCaptionList("cannot assemble a document from zero captions")
    if any(b.frame_index < a.frame_index for a, b in zip(captions, captions[1:])):
        raise ValueError("captions must be sorted by frame_index")

    parts: list[str] = []
    provenance: list[tuple[int, tuple[int, int]]] = []
    pos = 0
    for cap in captions:
        text = cap.text.strip()
        if text[-1] not in ".!?":
            text += "."
        if parts:
            pos += 1  # joining space
        provenance.append((cap.frame_index, (pos, pos + len(text))))
        parts.append(text)
        pos += len(text)
    return Document(text=" ".join(parts), provenance=tuple(provenance))
