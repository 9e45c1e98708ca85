"""
PATrack Synth - Dataset storage.

Layout, one directory per sequence:

    <name>/rgb/000001.ppm      binary P6
    <name>/x/000001.pgm        binary P5 (or .ppm for 3-channel X)
    <name>/groundtruth.txt     x,y,w,h per frame, corner form
    <name>/visible.txt         0/1 per frame
    <name>/attributes.json     modality and sorted per-frame tags

Reading is the exact inverse of writing.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np
import structlog
from PIL import Image, UnidentifiedImageError

from patrack.exceptions import ParseException, StorageException
from patrack.modules.synth.schemas import MODALITIES, FrameBox, SequenceRecord

logger = structlog.get_logger(__name__)

FRAME_PATTERN = "{:06d}"


def _save_image(array: np.ndarray, path: Path) -> None:
    if array.shape[0] == 3:
        image = Image.fromarray(np.ascontiguousarray(array.transpose(1, 2, 0)))
    else:
        image = Image.fromarray(np.ascontiguousarray(array[0]))
    image.save(path, format="PPM")


def _load_image(path: Path, channels: int | None = None) -> np.ndarray:
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            data = np.asarray(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ParseException(str(path), f"unreadable frame: {exc}") from exc
    if mode not in ("RGB", "L"):
        raise ParseException(str(path), f"unsupported image mode {mode}")
    array = data.transpose(2, 0, 1).copy() if data.ndim == 3 else data[None].copy()
    if channels is not None and array.shape[0] != channels:
        raise ParseException(str(path), f"expected {channels} channel(s), found {array.shape[0]}")
    return array


def _write_text(path: Path, lines: Iterable[str]) -> None:
    path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def format_box(box: FrameBox) -> str:
    return ",".join(repr(float(v)) for v in box.as_tuple())


def write_sequence(record: SequenceRecord, directory: str | Path) -> Path:
    root = Path(directory) / record.name
    try:
        (root / "rgb").mkdir(parents=True, exist_ok=True)
        (root / "x").mkdir(parents=True, exist_ok=True)
        for i, (rgb, x) in enumerate(zip(record.rgb, record.x, strict=True), start=1):
            stem = FRAME_PATTERN.format(i)
            _save_image(rgb, root / "rgb" / f"{stem}.ppm")
            _save_image(x, root / "x" / f"{stem}.{'ppm' if x.shape[0] == 3 else 'pgm'}")
        _write_text(root / "groundtruth.txt", (format_box(b) for b in record.boxes))
        _write_text(root / "visible.txt", (str(int(v)) for v in record.visible))
        meta = {"modality": record.modality, "attributes": [sorted(tags) for tags in record.attributes]}
        text = json.dumps(meta, indent=2, sort_keys=True) + "\n"
        (root / "attributes.json").write_text(text, encoding="utf-8")
    except OSError as exc:
        raise StorageException(str(root), f"cannot write sequence: {exc.strerror}") from exc
    return root


def write_dataset(records: Sequence[SequenceRecord], directory: str | Path) -> Path:
    root = Path(directory)
    for record in records:
        write_sequence(record, root)
    logger.info("dataset_written", directory=str(root), sequences=len(records))
    return root


# =============================================================================
# Reading
# =============================================================================


def _read_lines(path: Path) -> list[str]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageException(str(path), f"cannot read: {exc.strerror}") from exc
    return text.splitlines()


def parse_groundtruth(path: Path) -> list[FrameBox]:
    boxes = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        fields = line.replace("\t", ",").split(",")
        if len(fields) != 4:
            raise ParseException(
                str(path), f"expected 4 comma-separated values, got {len(fields)}", line=lineno
            )
        try:
            x, y, w, h = (float(f) for f in fields)
        except ValueError as exc:
            raise ParseException(str(path), f"non-numeric value: {exc}", line=lineno) from exc
        boxes.append(FrameBox(x, y, w, h))
    return boxes


def parse_visible(path: Path) -> list[int]:
    flags = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if line.strip() not in ("0", "1"):
            raise ParseException(str(path), f"visible flag must be 0 or 1, got '{line}'", line=lineno)
        flags.append(int(line.strip()))
    return flags


def _parse_attributes(path: Path) -> tuple[str, list[frozenset[str]]]:
    try:
        meta = json.loads("\n".join(_read_lines(path)))
        modality = meta["modality"]
        tags = [frozenset(frame) for frame in meta["attributes"]]
    except json.JSONDecodeError as exc:
        raise ParseException(str(path), exc.msg, line=exc.lineno) from exc
    except (KeyError, TypeError) as exc:
        raise ParseException(str(path), f"missing or malformed field: {exc}") from exc
    if modality not in MODALITIES:
        raise ParseException(str(path), f"unknown modality '{modality}'")
    return modality, tags


def _frame_files(folder: Path, suffixes: tuple[str, ...]) -> list[Path]:
    if not folder.is_dir():
        raise StorageException(str(folder), "missing frame directory")
    return sorted(p for p in folder.iterdir() if p.suffix in suffixes)


def read_sequence(root: str | Path) -> SequenceRecord:
    root = Path(root)
    boxes = parse_groundtruth(root / "groundtruth.txt")
    visible = parse_visible(root / "visible.txt")
    modality, attributes = _parse_attributes(root / "attributes.json")
    rgb = [_load_image(p, channels=3) for p in _frame_files(root / "rgb", (".ppm",))]
    x = [_load_image(p) for p in _frame_files(root / "x", (".pgm", ".ppm"))]
    if len(rgb) != len(boxes):
        raise ParseException(
            str(root / "groundtruth.txt"), f"{len(boxes)} boxes for {len(rgb)} RGB frames", line=len(boxes)
        )
    return SequenceRecord(
        name=root.name, modality=modality, rgb=rgb, x=x, boxes=boxes, visible=visible, attributes=attributes
    )


def read_dataset(directory: str | Path) -> list[SequenceRecord]:
    """Every sequence directly under `directory`, sorted by name."""
    root = Path(directory)
    if not root.is_dir():
        raise StorageException(str(root), "dataset directory does not exist")
    names = sorted(p for p in root.iterdir() if (p / "groundtruth.txt").is_file())
    records = [read_sequence(p) for p in names]
    logger.debug("dataset_read", directory=str(root), sequences=len(records))
    return records
