"""Video input parsing: YUV4MPEG2 streams and numbered image sequences.

Both sources decode to an ordered stream of frames carrying only the luma
plane; chroma is skipped on read and never retained. Y4M is the canonical
video interface (any decoder tool can emit it over a pipe); image sequences
cover still-image datasets.
"""

from __future__ import annotations

import enum
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import (
    BadFrameMarker,
    EmptySequence,
    MalformedParam,
    MissingMagic,
    MissingParam,
    MixedDimensions,
    TruncatedFrame,
    UndecodableImage,
    UnsupportedChroma,
)

Y4M_MAGIC = b"YUV4MPEG2"
_MAX_HEADER_LINE = 4096
_MAX_FRAME_LINE = 1024

# BT.601 luma weights, scaled by 1000 for exact integer arithmetic.
_LUMA_R, _LUMA_G, _LUMA_B = 299, 587, 114


class Chroma(enum.Enum):
    """Chroma subsampling mode; value is the (sx, sy) subsampling factor."""

    C420 = (2, 2)
    C422 = (2, 1)
    C444 = (1, 1)


# Y4M siting variants share the C420 plane layout.
_CHROMA_TOKENS = {
    "420": Chroma.C420,
    "420jpeg": Chroma.C420,
    "420mpeg2": Chroma.C420,
    "420paldv": Chroma.C420,
    "422": Chroma.C422,
    "444": Chroma.C444,
}


class SourceKind(enum.Enum):
    Y4M = "y4m"
    IMAGE_SEQUENCE = "image_sequence"


@dataclass(frozen=True)
class StreamMeta:
    width: int
    height: int
    fps_num: int
    fps_den: int
    chroma: Chroma
    source_kind: SourceKind

    def __post_init__(self) -> None:
        for name in ("width", "height", "fps_num", "fps_den"):
            if getattr(self, name) <= 0:
                raise MalformedParam(f"{name} must be strictly positive")

    @property
    def frame_payload_size(self) -> int:
        """Per-frame byte count: luma plane plus two subsampled chroma planes."""
        sx, sy = self.chroma.value
        return self.width * self.height + 2 * (self.width // sx) * (self.height // sy)

    @property
    def luma_size(self) -> int:
        return self.width * self.height

    def timestamp_ms(self, index: int) -> int:
        """Frame timestamp index*1000*fps_den/fps_num rounded to nearest ms (ties up)."""
        return (index * 1000 * self.fps_den * 2 + self.fps_num) // (2 * self.fps_num)


@dataclass(frozen=True)
class Frame:
    index: int
    timestamp_ms: int
    width: int
    height: int
    luma: bytes

    def __post_init__(self) -> None:
        if len(self.luma) != self.width * self.height:
            raise MalformedParam(
                f"luma plane has {len(self.luma)} bytes, expected "
                f"{self.width}x{self.height}={self.width * self.height}"
            )

    def luma_array(self) -> np.ndarray:
        return np.frombuffer(self.luma, dtype=np.uint8)


def _parse_header_line(line: bytes) -> StreamMeta:
    fields = line.rstrip(b"\n").split(b" ")
    if fields[0] != Y4M_MAGIC:
        raise MissingMagic("input does not start with a YUV4MPEG2 header")

    width = height = fps_num = fps_den = None
    chroma = Chroma.C420
    for token in fields[1:]:
        if not token:
            continue
        tag, value = chr(token[0]), token[1:].decode("ascii", "replace")
        if tag in ("W", "H"):
            if not re.fullmatch(r"\d+", value) or int(value) == 0:
                raise MalformedParam(f"bad {tag} parameter: {value!r}")
            if tag == "W":
                width = int(value)
            else:
                height = int(value)
        elif tag == "F":
            m = re.fullmatch(r"(\d+):(\d+)", value)
            if not m or int(m.group(1)) == 0 or int(m.group(2)) == 0:
                raise MalformedParam(f"bad F parameter: {value!r}")
            fps_num, fps_den = int(m.group(1)), int(m.group(2))
        elif tag == "C":
            if value not in _CHROMA_TOKENS:
                raise UnsupportedChroma(f"unsupported chroma mode: C{value}")
            chroma = _CHROMA_TOKENS[value]
        # I (interlacing), A (aspect), X (metadata) are parsed and ignored.

    if width is None or height is None or fps_num is None:
        raise MissingParam("Y4M header must carry W, H and F parameters")

    sx, sy = chroma.value
    if width % sx != 0 or height % sy != 0:
        raise MalformedParam(
            f"dimensions {width}x{height} not divisible by {chroma.name} subsampling"
        )

    return StreamMeta(width, height, fps_num, fps_den, chroma, SourceKind.Y4M)


def parse_y4m_header(data: bytes) -> StreamMeta:
    """Parse the stream header from the first line of a Y4M byte sequence.

    Consumes exactly the first 0x0A-terminated line; `C` defaults to C420.
    """
    if not data.startswith(Y4M_MAGIC):
        raise MissingMagic("input does not start with a YUV4MPEG2 header")
    end = data.find(b"\n")
    if end < 0:
        raise MalformedParam("Y4M header line is not newline-terminated")
    return _parse_header_line(data[: end + 1])


def _read_exact(reader: BinaryIO, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining > 0:
        chunk = reader.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class Y4MStream:
    """Sequential reader over a Y4M byte stream (single consumer).

    The header is parsed on construction; ``next_frame`` yields frames until
    the input is exhausted exactly at a frame boundary.
    """

    def __init__(self, reader: BinaryIO):
        if isinstance(reader, (bytes, bytearray)):
            reader = io.BytesIO(bytes(reader))
        self._reader = reader
        header = self._readline(_MAX_HEADER_LINE)
        if not header.startswith(Y4M_MAGIC):
            raise MissingMagic("input does not start with a YUV4MPEG2 header")
        if not header.endswith(b"\n"):
            raise MalformedParam("Y4M header line is not newline-terminated")
        self.meta = _parse_header_line(header)
        self._next_index = 0

    def _readline(self, limit: int) -> bytes:
        line = self._reader.readline(limit)
        return line if isinstance(line, bytes) else bytes(line)

    def next_frame(self) -> Frame | None:
        """Return the next frame, or None at a clean end of stream."""
        marker = self._readline(_MAX_FRAME_LINE)
        if marker == b"":
            return None
        if not marker.startswith(b"FRAME") or (
            len(marker) > 5 and marker[5:6] not in (b" ", b"\n")
        ):
            raise BadFrameMarker(f"expected FRAME marker, got {marker[:16]!r}")
        if not marker.endswith(b"\n"):
            raise TruncatedFrame("end of input inside FRAME marker line")

        payload = _read_exact(self._reader, self.meta.frame_payload_size)
        if len(payload) < self.meta.frame_payload_size:
            raise TruncatedFrame(
                f"frame {self._next_index}: got {len(payload)} of "
                f"{self.meta.frame_payload_size} payload bytes"
            )
        index = self._next_index
        self._next_index += 1
        return Frame(
            index=index,
            timestamp_ms=self.meta.timestamp_ms(index),
            width=self.meta.width,
            height=self.meta.height,
            luma=payload[: self.meta.luma_size],
        )

    def __iter__(self) -> Iterator[Frame]:
        while True:
            frame = self.next_frame()
            if frame is None:
                return
            yield frame


def _natural_sort_key(name: str) -> tuple:
    parts = re.split(r"(\d+)", name)
    return tuple(int(p) if p.isdigit() else p for p in parts)


def _decode_luma(path: Path) -> tuple[int, int, bytes]:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.uint8)
                return img.width, img.height, arr.tobytes()
            rgb = np.asarray(img.convert("RGB"), dtype=np.int32)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UndecodableImage(f"cannot decode {path}: {exc}") from exc
    luma = (
        _LUMA_R * rgb[..., 0] + _LUMA_G * rgb[..., 1] + _LUMA_B * rgb[..., 2] + 500
    ) // 1000
    return rgb.shape[1], rgb.shape[0], luma.astype(np.uint8).tobytes()


class ImageSequenceSource:
    """Frames decoded from a directory of images, numerically sorted.

    PNG and PPM are supported (anything Pillow decodes works). Luma is BT.601:
    Y = round(0.299R + 0.587G + 0.114B). fps is fixed at 1:1.
    """

    def __init__(self, directory: str | Path, pattern: str = "*"):
        directory = Path(directory)
        paths = sorted(
            (p for p in directory.glob(pattern) if p.is_file()),
            key=lambda p: _natural_sort_key(p.name),
        )
        if not paths:
            raise EmptySequence(f"no files match {pattern!r} in {directory}")

        frames = []
        width = height = None
        for index, path in enumerate(paths):
            w, h, luma = _decode_luma(path)
            if width is None:
                width, height = w, h
            elif (w, h) != (width, height):
                raise MixedDimensions(
                    f"{path.name} is {w}x{h}, previous frames are {width}x{height}"
                )
            frames.append(
                Frame(index=index, timestamp_ms=index * 1000, width=w, height=h, luma=luma)
            )

        self.meta = StreamMeta(
            width=width,
            height=height,
            fps_num=1,
            fps_den=1,
            chroma=Chroma.C444,
            source_kind=SourceKind.IMAGE_SEQUENCE,
        )
        self._frames = frames

    def __iter__(self) -> Iterator[Frame]:
        return iter(self._frames)


def load_image_sequence(directory: str | Path, pattern: str = "*") -> ImageSequenceSource:
    return ImageSequenceSource(directory, pattern)
