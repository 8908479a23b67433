"""On-disk formats: P5 silhouette frames, text skeletons, dataset layout, weight checkpoints.

Dataset layout::

    <root>/<subject>/<sequence>/sil/000.pgm ...
    <root>/<subject>/<sequence>/skel.txt
    <root>/<subject>/<sequence>/clean_skel.txt   (optional ground truth)
"""

from __future__ import annotations

import re
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .datamodel import LAYOUTS, SampleRecord, SilhouetteSequence, SkeletonSequence


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, path=None, offset: int | None = None):
        where = f"{path}: " if path else ""
        at = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{where}{message}{at}")
        self.path = path
        self.offset = offset


# --- silhouettes -----------------------------------------------------------

def encode_pgm(frame: np.ndarray) -> bytes:
    f = np.asarray(frame, dtype=np.uint8)
    if f.ndim != 2 or f.max(initial=0) > 1:
        raise ValueError("silhouette frame must be a 2-D 0/1 array")
    h, w = f.shape
    return b"P5\n%d %d\n1\n" % (w, h) + f.tobytes()


def decode_pgm(buf: bytes, path=None) -> np.ndarray:
    pos = 0
    tokens = []
    if not buf.startswith(b"P5"):
        raise FormatError("missing P5 magic", path, 0)
    pos = 2
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            nl = buf.find(b"\n", pos)
            if nl < 0:
                raise FormatError("unterminated header comment", path, pos)
            pos = nl + 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("bad or truncated PGM header", path, start)
        tokens.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("header not terminated by whitespace", path, pos)
    pos += 1
    w, h, maxval = tokens
    if maxval != 1:
        raise FormatError(f"max value must be 1, got {maxval}", path, pos - 2)
    need = w * h
    if len(buf) - pos < need:
        raise FormatError(f"truncated pixel data: need {need} bytes, have {len(buf) - pos}", path, len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w)
    if data.max(initial=0) > 1:
        bad = int(np.argmax(data.reshape(-1) > 1))
        raise FormatError("pixel value above max value", path, pos + bad)
    return data.copy()


def write_silhouettes(seq: SilhouetteSequence, sil_dir) -> None:
    sil_dir = Path(sil_dir)
    sil_dir.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(seq) - 1)))
    for i, frame in enumerate(seq.frames):
        (sil_dir / f"{i:0{width}d}.pgm").write_bytes(encode_pgm(frame))


def read_silhouettes(sil_dir, subject_id: str = "", view_tag: str | None = None) -> SilhouetteSequence:
    sil_dir = Path(sil_dir)
    files = sorted(sil_dir.glob("*.pgm"), key=lambda p: (len(p.stem), p.stem))
    if not files:
        raise FormatError("no .pgm frames", sil_dir)
    frames = [decode_pgm(p.read_bytes(), p) for p in files]
    if len({f.shape for f in frames}) != 1:
        raise FormatError("frames differ in size", sil_dir)
    return SilhouetteSequence(np.stack(frames), subject_id, view_tag)


# --- skeletons -------------------------------------------------------------

_HEADER = re.compile(r"#skeleton v1 K=(\d+) format=(\w+)$")


def format_skeleton(seq: SkeletonSequence, comments: Iterable[str] = ()) -> str:
    k = seq.num_joints
    lines = [f"#skeleton v1 K={k} format={seq.layout}"]
    lines += [c if c.startswith("#") else f"#{c}" for c in comments]
    for i, frame in enumerate(seq.joints):
        coords = " ".join(repr(float(v)) for v in frame.reshape(-1))
        lines.append(f"{i} {k} {coords}")
    return "\n".join(lines) + "\n"


def parse_skeleton(text: str, subject_id: str = "", path=None) -> tuple[SkeletonSequence, list[str]]:
    """Returns the sequence and any extra ``#`` comment lines after the header."""
    lines = text.splitlines(keepends=True)
    if not lines:
        raise FormatError("empty skeleton file", path, 0)
    m = _HEADER.match(lines[0].rstrip("\n"))
    if not m:
        raise FormatError("missing '#skeleton v1 K=<k> format=<fmt>' header", path, 0)
    k, layout = int(m.group(1)), m.group(2)
    if layout in LAYOUTS and LAYOUTS[layout][0] != k:
        raise FormatError(f"format {layout} needs K={LAYOUTS[layout][0]}, header says K={k}", path, 0)
    offset = len(lines[0].encode())
    comments, frames = [], []
    for line in lines[1:]:
        body = line.rstrip("\n")
        if body.startswith("#"):
            comments.append(body)
        elif body.strip():
            parts = body.split()
            try:
                idx, kk = int(parts[0]), int(parts[1])
                vals = [float(v) for v in parts[2:]]
            except (ValueError, IndexError):
                raise FormatError("unparseable frame record", path, offset) from None
            if kk != k or len(vals) != 2 * k:
                raise FormatError(f"frame record has {len(vals)} values, expected {2 * k}", path, offset)
            if idx != len(frames):
                raise FormatError(f"frame index {idx} out of order", path, offset)
            if not line.endswith("\n"):
                raise FormatError("truncated final record", path, offset + len(line.encode()))
            frames.append(vals)
        offset += len(line.encode())
    if not frames:
        raise FormatError("no frame records", path, offset)
    joints = np.array(frames, dtype=np.float64).reshape(len(frames), k, 2)
    if not np.isfinite(joints).all():
        raise FormatError("non-finite coordinate", path)
    return SkeletonSequence(joints, subject_id, layout), comments


def write_skeleton(seq: SkeletonSequence, path, comments: Iterable[str] = ()) -> None:
    Path(path).write_text(format_skeleton(seq, comments))


def read_skeleton(path, subject_id: str = "") -> SkeletonSequence:
    path = Path(path)
    return parse_skeleton(path.read_text(), subject_id, path)[0]


# --- records and dataset index ---------------------------------------------

def write_record(rec: SampleRecord, seq_dir) -> None:
    seq_dir = Path(seq_dir)
    write_silhouettes(rec.silhouette, seq_dir / "sil")
    comments = []
    if rec.view_tag is not None:
        comments.append(f"#view={rec.view_tag}")
    write_skeleton(rec.skeleton, seq_dir / "skel.txt", comments)
    if rec.clean_skeleton is not None:
        write_skeleton(rec.clean_skeleton, seq_dir / "clean_skel.txt", comments)


def read_record(seq_dir, subject_id: str | None = None) -> SampleRecord:
    seq_dir = Path(seq_dir)
    sid = subject_id if subject_id is not None else seq_dir.parent.name
    path = seq_dir / "skel.txt"
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FormatError("missing skel.txt", seq_dir) from None
    skel, comments = parse_skeleton(text, sid, path)
    view = next((c.split("=", 1)[1] for c in comments if c.startswith("#view=")), None)
    sil = read_silhouettes(seq_dir / "sil", sid, view)
    clean_path = seq_dir / "clean_skel.txt"
    clean = read_skeleton(clean_path, sid) if clean_path.exists() else None
    return SampleRecord(sil, skel, clean, seq_dir.name)


@dataclass(frozen=True)
class DatasetEntry:
    subject_id: str
    sequence_id: str
    path: Path

    def load(self) -> SampleRecord:
        return read_record(self.path, self.subject_id)


class DatasetIndex:
    """Sequences under a dataset root, grouped by subject in sorted order."""

    def __init__(self, entries: Iterable[DatasetEntry]):
        self.entries = sorted(entries, key=lambda e: (e.subject_id, e.sequence_id))
        self.subjects: "OrderedDict[str, list[DatasetEntry]]" = OrderedDict()
        for e in self.entries:
            self.subjects.setdefault(e.subject_id, []).append(e)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def load_all(self) -> list[SampleRecord]:
        return [e.load() for e in self.entries]


def build_dataset_index(root) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise FormatError("dataset root is not a directory", root)
    entries = [
        DatasetEntry(subj.name, seq.name, seq)
        for subj in root.iterdir() if subj.is_dir()
        for seq in subj.iterdir() if seq.is_dir() and (seq / "skel.txt").exists() and (seq / "sil").is_dir()
    ]
    return DatasetIndex(entries)


# --- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = b"GRFW1"


def save_checkpoint(params: Mapping[str, np.ndarray], path) -> None:
    """Little-endian: magic, then per tensor u32 name length, name, u32 rank, u32 dims, float64 data."""
    out = bytearray(CHECKPOINT_MAGIC)
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if not buf.startswith(CHECKPOINT_MAGIC):
        raise FormatError("bad checkpoint magic", path, 0)
    pos = len(CHECKPOINT_MAGIC)
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def need(n):
        if pos + n > len(buf):
            raise FormatError("truncated checkpoint", path, pos)

    while pos < len(buf):
        need(4)
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(n)
        try:
            name = buf[pos:pos + n].decode()
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", path, pos) from None
        pos += n
        need(4)
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        need(8 * count)
        out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * count
    return out
