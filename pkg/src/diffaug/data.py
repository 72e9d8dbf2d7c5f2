"""Dataset manifests, WAV ingestion, spectrogram files and fold splits."""
import logging
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Generic, Literal, Protocol, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy import ndimage

from .diffusion import LabeledSample
from .dsp import Waveform, resample_linear
from .exceptions import (
    ManifestError,
    NotASpectrogramError,
    SpectrogramFormatError,
    SpectrogramSizeError,
    UnsupportedCodecError,
    WavFormatError,
)
from .numerics.grid import Grid

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["path", "fold", "class_id", "class_name"]

SGRM_MAGIC = b"SGRM"
SGRM_VERSION = 1
_SGRM_HEADER = struct.Struct("<4sIII")

_WAVE_PCM = 0x0001
_WAVE_FLOAT = 0x0003
_WAVE_EXTENSIBLE = 0xFFFE


# -- manifests ---------------------------------------------------------------


class ManifestRow(BaseModel):
    """One labelled clip; relative paths are relative to the manifest file."""

    model_config = ConfigDict(frozen=True)

    path: str = Field(min_length=1)
    fold: int = Field(ge=1)
    class_id: int = Field(ge=0)
    class_name: str = ""

    def resolve(self, base: Path) -> Path:
        path = Path(self.path)
        return path if path.is_absolute() else base / path


def read_manifest(path: Path) -> list[ManifestRow]:
    """Rows of a ``path,fold,class_id,class_name`` CSV in file order.

    Raises:
        ManifestError: If columns are missing or a row fails validation.
    """
    frame = pd.read_csv(path, dtype={"path": str, "class_name": str}, keep_default_na=False)
    missing = [column for column in MANIFEST_COLUMNS if column not in frame.columns]
    if missing:
        raise ManifestError(f"{path}: missing columns {', '.join(missing)}")
    rows: list[ManifestRow] = []
    for line, record in enumerate(frame[MANIFEST_COLUMNS].to_dict("records"), start=2):
        try:
            rows.append(ManifestRow.model_validate(record))
        except ValidationError as e:
            raise ManifestError(f"{path}:{line}: {e.errors()[0]['msg']}") from e
    return rows


def write_manifest(path: Path, rows: Iterable[ManifestRow]) -> None:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=MANIFEST_COLUMNS)
    frame.to_csv(path, index=False)


def manifest_from_urbansound8k(metadata_csv: Path, audio_root: Path) -> list[ManifestRow]:
    """Map UrbanSound8K metadata onto manifest rows.

    ``slice_file_name, fold, classID, class`` become ``path`` (under
    audio_root/fold<N>/), ``fold``, ``class_id`` and ``class_name``.
    """
    frame = pd.read_csv(metadata_csv)
    needed = ["slice_file_name", "fold", "classID", "class"]
    missing = [column for column in needed if column not in frame.columns]
    if missing:
        raise ManifestError(f"{metadata_csv}: missing columns {', '.join(missing)}")
    return [
        ManifestRow(
            path=str(audio_root / f"fold{int(record['fold'])}" / str(record["slice_file_name"])),
            fold=int(record["fold"]),
            class_id=int(record["classID"]),
            class_name=str(record["class"]),
        )
        for record in frame[needed].to_dict("records")
    ]


class _HasFold(Protocol):
    @property
    def fold(self) -> int: ...


RowT = TypeVar("RowT", bound=_HasFold)


@dataclass(frozen=True)
class FoldSplit(Generic[RowT]):
    test_fold: int
    train: list[RowT]
    test: list[RowT]


def kfold_splits(rows: Sequence[RowT], folds: int = 10) -> list[FoldSplit[RowT]]:
    """Split i tests on fold i and trains on every other fold.

    Works on manifest rows and labelled samples alike. Folds without rows are
    skipped with a warning.

    Raises:
        ManifestError: If a row's fold is outside [1, folds].
    """
    bad = [index for index, row in enumerate(rows) if not 1 <= row.fold <= folds]
    if bad:
        raise ManifestError(f"row {bad[0]}: fold {rows[bad[0]].fold} outside [1, {folds}]")
    splits = []
    for fold in range(1, folds + 1):
        test = [row for row in rows if row.fold == fold]
        if not test:
            logger.warning("Fold %d has no rows; skipping split", fold)
            continue
        splits.append(FoldSplit(fold, [row for row in rows if row.fold != fold], test))
    return splits


# -- WAV ---------------------------------------------------------------------


class _Cursor:
    def __init__(self, data: bytes, offset: int = 0, end: int | None = None):
        self.data = data
        self.offset = offset
        self.end = len(data) if end is None else end

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > self.end:
            raise WavFormatError(f"truncated {what}", self.offset)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


@dataclass(frozen=True)
class _WavFormat:
    codec: int
    channels: int
    sample_rate: int
    block_align: int
    bits: int


def _parse_fmt(cursor: _Cursor, size: int) -> _WavFormat:
    start = cursor.offset
    if size < 16:
        raise WavFormatError(f"fmt chunk of {size} bytes is too short", start)
    codec, channels, rate, _byte_rate, block_align, bits = cursor.unpack("<HHIIHH", "fmt chunk")
    if codec == _WAVE_EXTENSIBLE:
        if size < 40:
            raise WavFormatError("extensible fmt chunk is too short", start)
        _cb_size, _valid_bits, _mask = cursor.unpack("<HHI", "fmt extension")
        (codec,) = cursor.unpack("<H", "sub-format")
    if channels == 0 or rate == 0 or block_align == 0:
        raise WavFormatError("fmt chunk has zero channels, rate or block size", start)
    if block_align != channels * ((bits + 7) // 8):
        raise WavFormatError(
            f"block align {block_align} disagrees with {channels}x{bits} bits", start
        )
    return _WavFormat(codec, channels, rate, block_align, bits)


def _decode(payload: bytes, fmt: _WavFormat) -> Grid:
    if fmt.codec == _WAVE_PCM and fmt.bits == 8:
        values = (np.frombuffer(payload, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    elif fmt.codec == _WAVE_PCM and fmt.bits == 16:
        values = np.frombuffer(payload, dtype="<i2").astype(np.float32) / 32768.0
    elif fmt.codec == _WAVE_PCM and fmt.bits == 24:
        raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        values = ints.astype(np.float32) / float(1 << 23)
    elif fmt.codec == _WAVE_PCM and fmt.bits == 32:
        ints32 = np.frombuffer(payload, dtype="<i4").astype(np.float64)
        values = (ints32 / 2.0**31).astype(np.float32)
    elif fmt.codec == _WAVE_FLOAT and fmt.bits == 32:
        values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    elif fmt.codec == _WAVE_FLOAT and fmt.bits == 64:
        values = np.frombuffer(payload, dtype="<f8").astype(np.float32)
    else:
        raise UnsupportedCodecError(f"unsupported WAV codec 0x{fmt.codec:04x} at {fmt.bits} bits")
    return values.reshape(-1, fmt.channels)


def parse_wav(data: bytes, sample_rate: int | None = None) -> Waveform:
    """Decode RIFF/WAVE bytes into a mono Waveform.

    Channels are averaged; when sample_rate is given the signal is linearly
    resampled to it.

    Raises:
        WavFormatError: On a malformed or truncated file, with the byte offset.
        UnsupportedCodecError: For codecs other than PCM 8/16/24/32 and float 32/64.
    """
    cursor = _Cursor(data)
    riff, riff_size, wave = cursor.unpack("<4sI4s", "RIFF header")
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file", 0)
    if riff_size + 8 > len(data):
        raise WavFormatError(f"RIFF size {riff_size} exceeds file length {len(data)}", 4)
    cursor.end = riff_size + 8

    fmt: _WavFormat | None = None
    while True:
        header_offset = cursor.offset
        chunk_id, size = cursor.unpack("<4sI", "chunk header")
        body = _Cursor(data, cursor.offset, cursor.offset + size)
        if body.end > cursor.end:
            raise WavFormatError(f"chunk {chunk_id!r} runs past end of file", header_offset)
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body, size)
        elif chunk_id == b"data":
            if fmt is None:
                raise WavFormatError("data chunk before fmt chunk", header_offset)
            if size % fmt.block_align:
                raise WavFormatError(
                    f"data size {size} is not a multiple of block align {fmt.block_align}",
                    header_offset,
                )
            frames = _decode(body.take(size, "data"), fmt)
            rate = fmt.sample_rate
            break
        cursor.offset = body.end + (size & 1)

    samples = frames.mean(axis=1)
    if sample_rate is not None and sample_rate != rate:
        samples, rate = resample_linear(samples, rate, sample_rate), sample_rate
    return Waveform(np.clip(samples, -1.0, 1.0), rate)


def read_wav(path: Path, sample_rate: int | None = None) -> Waveform:
    """parse_wav on the contents of path."""
    return parse_wav(Path(path).read_bytes(), sample_rate)


def write_wav(
    path: Path, waveform: Waveform, encoding: Literal["pcm16", "float32"] = "pcm16"
) -> None:
    """Write a mono RIFF/WAVE file."""
    samples = np.clip(waveform.samples, -1.0, 1.0)
    if encoding == "pcm16":
        payload = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
        codec, bits = _WAVE_PCM, 16
    else:
        payload = samples.astype("<f4").tobytes()
        codec, bits = _WAVE_FLOAT, 32
    block_align = bits // 8
    fmt = struct.pack(
        "<HHIIHH",
        codec,
        1,
        waveform.sample_rate,
        waveform.sample_rate * block_align,
        block_align,
        bits,
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# -- spectrogram files -------------------------------------------------------


def encode_spectrogram(grid: Grid, label: int | None = None) -> bytes:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise SpectrogramFormatError(f"spectrograms are 2-D, got shape {grid.shape}")
    rows, cols = grid.shape
    out = _SGRM_HEADER.pack(SGRM_MAGIC, SGRM_VERSION, rows, cols)
    out += np.ascontiguousarray(grid, dtype="<f4").tobytes()
    if label is not None:
        if not 0 <= label <= 255:
            raise SpectrogramFormatError(f"label {label} does not fit in one byte")
        out += bytes([label])
    return out


def decode_spectrogram(data: bytes) -> tuple[Grid, int | None]:
    """Inverse of encode_spectrogram.

    Raises:
        NotASpectrogramError: If the magic bytes are wrong.
        SpectrogramSizeError: If the payload length disagrees with the header.
    """
    if data[:4] != SGRM_MAGIC:
        raise NotASpectrogramError(f"not a spectrogram file (magic {data[:4]!r})")
    if len(data) < _SGRM_HEADER.size:
        raise SpectrogramSizeError(f"header needs {_SGRM_HEADER.size} bytes, got {len(data)}")
    _, version, rows, cols = _SGRM_HEADER.unpack_from(data)
    if version != SGRM_VERSION:
        raise SpectrogramFormatError(f"unsupported spectrogram version {version}")
    payload_size = rows * cols * 4
    extra = len(data) - _SGRM_HEADER.size - payload_size
    if extra not in (0, 1):
        raise SpectrogramSizeError(
            f"{rows}x{cols} payload needs {payload_size} bytes (+1 label), "
            f"got {len(data) - _SGRM_HEADER.size}"
        )
    payload = data[_SGRM_HEADER.size : _SGRM_HEADER.size + payload_size]
    grid = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(rows, cols)
    label = data[-1] if extra == 1 else None
    return grid, label


def write_spectrogram(path: Path, grid: Grid, label: int | None = None) -> None:
    Path(path).write_bytes(encode_spectrogram(grid, label))


def read_spectrogram(path: Path) -> tuple[Grid, int | None]:
    return decode_spectrogram(Path(path).read_bytes())


def load_spectrogram_dir(directory: Path) -> list[LabeledSample]:
    """Labelled SGRM files of a directory in name order; fold is 0 (train only)."""
    samples = []
    for path in sorted(Path(directory).glob("*.sgrm")):
        grid, label = read_spectrogram(path)
        if label is None:
            raise SpectrogramFormatError(f"{path} carries no label byte")
        samples.append(LabeledSample(grid, label, fold=0))
    return samples


def load_manifest_samples(rows: Sequence[ManifestRow], base: Path) -> list[LabeledSample]:
    """Read the SGRM file behind every manifest row."""
    samples = []
    for row in rows:
        grid, _ = read_spectrogram(row.resolve(base))
        samples.append(LabeledSample(grid, row.class_id, row.fold))
    return samples


def resize_grid(grid: Grid, size: int) -> Grid:
    """Bilinear resize of a 2-D grid to size x size."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.shape == (size, size):
        return grid
    zoom = (size / grid.shape[0], size / grid.shape[1])
    return ndimage.zoom(grid, zoom, order=1).astype(np.float32)


def write_pgm(path: Path, grid: Grid) -> None:
    """Binary PGM (P5, maxval 255); -1 maps to 0 and 1 to 255, first row on top."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise SpectrogramFormatError(f"PGM export needs a 2-D grid, got shape {grid.shape}")
    pixels = np.round((np.clip(grid, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())
