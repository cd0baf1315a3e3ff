"""Key-frame selection over luma-histogram signatures.

A frame's signature is its normalized luma histogram; selection keeps the
frames whose signature moved far enough (L1) from the last *selected* frame,
so slow drifts still trigger new key-frames while repeating frames do not.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import BinCountMismatch, ConfigError, EmptyPlane, EmptyStream
from .ingest import Frame

DEFAULT_BINS = 64
DEFAULT_THRESHOLD = 0.3

MODE_CHANGE_DETECT = "change_detect"
MODE_UNIFORM = "uniform"


@dataclass(frozen=True)
class FrameSignature:
    """Normalized luma histogram; bin k covers [k*256/B, (k+1)*256/B)."""

    bins: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "bins", np.asarray(self.bins, dtype=np.float64))
        if self.bins.ndim != 1 or self.bins.size == 0:
            raise EmptyPlane("signature must be a non-empty 1-d vector")
        if abs(float(self.bins.sum()) - 1.0) > 1e-9:
            raise EmptyPlane("signature bins must sum to 1")

    def __len__(self) -> int:
        return int(self.bins.size)


@dataclass(frozen=True)
class Keyframe:
    frame_index: int
    timestamp_ms: int
    signature: FrameSignature
    image_payload: bytes
    distance_from_previous_keyframe: float
    width: int
    height: int


@dataclass(frozen=True)
class KeyframeConfig:
    threshold: float = DEFAULT_THRESHOLD
    min_gap: int = 0
    max_keyframes: int | None = None
    mode: str = MODE_CHANGE_DETECT
    uniform_k: int | None = None
    bins: int = DEFAULT_BINS

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold <= 2.0):
            raise ConfigError(f"threshold must be in (0, 2], got {self.threshold}")
        if self.min_gap < 0:
            raise ConfigError("min_gap must be >= 0")
        if self.max_keyframes is not None and self.max_keyframes < 1:
            raise ConfigError("max_keyframes must be >= 1")
        if self.mode not in (MODE_CHANGE_DETECT, MODE_UNIFORM):
            raise ConfigError(f"unknown selection mode: {self.mode!r}")
        if self.mode == MODE_UNIFORM and (self.uniform_k is None or self.uniform_k < 1):
            raise ConfigError("uniform mode requires k >= 1")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")


def frame_signature(luma: bytes | np.ndarray, bins: int = DEFAULT_BINS) -> FrameSignature:
    """Histogram of luma values over `bins` uniform bins, normalized to sum 1."""
    arr = np.frombuffer(luma, dtype=np.uint8) if isinstance(luma, (bytes, bytearray)) else np.asarray(luma, dtype=np.uint8).ravel()
    if arr.size == 0:
        raise EmptyPlane("cannot compute a signature for an empty plane")
    # value v lands in bin floor(v*B/256)
    idx = (arr.astype(np.uint32) * bins) >> 8
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    return FrameSignature(counts / arr.size)


def signature_distance(a: FrameSignature, b: FrameSignature) -> float:
    """L1 distance between two signatures, in [0, 2]."""
    if len(a) != len(b):
        raise BinCountMismatch(f"signatures have {len(a)} vs {len(b)} bins")
    return float(np.abs(a.bins - b.bins).sum())


def png_encode_gray(width: int, height: int, luma: bytes) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.frombytes("L", (width, height), luma).save(buf, format="PNG")
    return buf.getvalue()


def _uniform_indices(n: int, k: int) -> list[int]:
    """k indices round(j*(n-1)/(k-1)), duplicates collapsed; ties round up."""
    if n == 1 or k == 1:
        return [0]
    return sorted({(2 * j * (n - 1) + (k - 1)) // (2 * (k - 1)) for j in range(k)})


class _ChangeDetector:
    """Incremental change-detect selector; one signature of lookback."""

    def __init__(self, config: KeyframeConfig):
        self._config = config
        self._last_sig: FrameSignature | None = None
        self._last_index = -1
        self._count = 0

    def offer(self, index: int, sig: FrameSignature) -> float | None:
        """Return the selection distance if this frame is selected, else None."""
        cfg = self._config
        if self._last_sig is None:
            dist = 0.0
        else:
            if cfg.max_keyframes is not None and self._count >= cfg.max_keyframes:
                return None
            dist = signature_distance(sig, self._last_sig)
            if dist < cfg.threshold or index - self._last_index <= cfg.min_gap:
                return None
        self._last_sig, self._last_index = sig, index
        self._count += 1
        return dist


def select_signature_indices(
    signatures: Iterable[FrameSignature], config: KeyframeConfig
) -> list[tuple[int, float]]:
    """Selection over bare signatures; returns (frame_index, distance) pairs.

    change_detect: frame 0 always selected; frame i selected iff its distance
    to the last selected signature is >= threshold and i is more than min_gap
    frames past it. uniform: k evenly spaced indices.
    """
    if config.mode == MODE_UNIFORM:
        sigs = list(signatures)
        if not sigs:
            raise EmptyStream("signature stream is empty")
        picked = _uniform_indices(len(sigs), config.uniform_k)
        if config.max_keyframes is not None:
            picked = picked[: config.max_keyframes]
        out = []
        prev = None
        for idx in picked:
            dist = 0.0 if prev is None else signature_distance(sigs[idx], sigs[prev])
            out.append((idx, dist))
            prev = idx
        return out

    detector = _ChangeDetector(config)
    selected = []
    for i, sig in enumerate(signatures):
        dist = detector.offer(i, sig)
        if dist is not None:
            selected.append((i, dist))
    if not selected:
        raise EmptyStream("signature stream is empty")
    return selected


def select_keyframes(frames: Iterable[Frame], config: KeyframeConfig) -> list[Keyframe]:
    """Run selection over a frame stream and materialize the chosen key-frames.

    change_detect streams (one frame of lookback); uniform buffers the stream
    since the index formula needs the total count.
    """
    if config.mode == MODE_UNIFORM:
        return _select_uniform(frames, config)

    detector = _ChangeDetector(config)
    keyframes: list[Keyframe] = []
    saw_any = False
    for frame in frames:
        saw_any = True
        sig = frame_signature(frame.luma, config.bins)
        dist = detector.offer(frame.index, sig)
        if dist is not None:
            keyframes.append(_materialize(frame, sig, dist))
    if not saw_any:
        raise EmptyStream("frame stream is empty")
    return keyframes


def _select_uniform(frames: Iterable[Frame], config: KeyframeConfig) -> list[Keyframe]:
    buffered = list(frames)
    if not buffered:
        raise EmptyStream("frame stream is empty")
    sigs = [frame_signature(f.luma, config.bins) for f in buffered]
    picked = select_signature_indices(sigs, config)
    return [_materialize(buffered[idx], sigs[idx], dist) for idx, dist in picked]


def _materialize(frame: Frame, sig: FrameSignature, dist: float) -> Keyframe:
    return Keyframe(
        frame_index=frame.index,
        timestamp_ms=frame.timestamp_ms,
        signature=sig,
        image_payload=png_encode_gray(frame.width, frame.height, frame.luma),
        distance_from_previous_keyframe=dist,
        width=frame.width,
        height=frame.height,
    )
