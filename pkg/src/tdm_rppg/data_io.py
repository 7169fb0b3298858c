"""Dataset ingestion, binary video cubes, and clip chunking.

Two on-disk record layouts are supported, both with frames already
face-cropped and resized (face detection is not part of this package):

PURE-style record directory::

    <record>/<anything>.json            {"/FullPackage": [{"Timestamp": ns, "Value": {"waveform": v}}, ...],
                                         "/Image": [{"Timestamp": ns}, ...]}
    <record>/<frames>/Image<ns>.png     one PNG per "/Image" timestamp (any sub-directory or flat)

UBFC-style record directory::

    <record>/ground_truth.txt           line 1: PPG values, line 2: HR, line 3: timestamps (s)
    <record>/frames/<index>.png         integer-numbered frames, contiguous from the first index

The expected crop convention is the detected face box enlarged by 50%
symmetrically about its centre, then resized to 128x128 RGB.
"""

from __future__ import annotations

import json
import logging
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import container
from .dsp import Waveform, load_waveform, preprocess_groundtruth
from .model import VideoCube

log = logging.getLogger(__name__)

CLIP_LENGTH = 256


class GapError(ValueError):
    """A record is missing one or more frames."""

    def __init__(self, index: int, record: str):
        self.index = index
        super().__init__(f"{record}: missing frame at index {index}")


@dataclass
class Record:
    """One video with its aligned ground-truth waveform."""

    video_id: str
    subject_id: str
    video: VideoCube
    groundtruth: Waveform
    true_offset: int | None = None

    @property
    def n_frames(self) -> int:
        return self.video.n_frames


@dataclass
class Clip:
    video_id: str
    subject_id: str
    index: int
    frames: np.ndarray
    ppg: np.ndarray
    fps: float

    @property
    def start(self) -> int:
        return self.index * len(self.ppg)


def chunk_sequences(cube: VideoCube, waveform: Waveform, length: int = CLIP_LENGTH,
                    overlap: int = 0, video_id: str = "", subject_id: str = "") -> list[Clip]:
    """Split into aligned clips of ``length`` frames; the trailing remainder is dropped."""
    if len(waveform) != cube.n_frames:
        raise ValueError(f"video has {cube.n_frames} frames but waveform has {len(waveform)} samples")
    if overlap != 0:
        raise ValueError("only non-overlapping clips are supported")
    n = cube.n_frames // length
    if n == 0:
        warnings.warn(f"{video_id or 'record'}: {cube.n_frames} frames is shorter than one clip of {length}")
    return [Clip(video_id, subject_id, i, cube.frames[i * length:(i + 1) * length],
                 waveform.samples[i * length:(i + 1) * length], cube.fps) for i in range(n)]


def record_clips(records: Sequence[Record], length: int = CLIP_LENGTH) -> list[Clip]:
    clips = []
    for r in records:
        clips.extend(chunk_sequences(r.video, r.groundtruth, length, video_id=r.video_id, subject_id=r.subject_id))
    return clips


# -- binary cubes ----------------------------------------------------------------

def save_cube(path, cube: VideoCube, meta: dict | None = None) -> None:
    m = {"kind": "video", "fps": cube.fps}
    m.update(meta or {})
    container.save(path, {"frames": cube.frames}, m)


def load_cube(path) -> tuple[VideoCube, dict]:
    arrays, meta = container.load(path)
    if meta.get("kind") != "video":
        raise container.ContainerError(f"{path}: not a video container")
    return VideoCube(arrays["frames"].astype(np.float64), meta["fps"]), meta


# -- image decoding ----------------------------------------------------------------

def read_png(path) -> np.ndarray:
    """Decode to [3, H, W] float64 in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_png(path, frame: np.ndarray) -> None:
    """Encode a [3, H, W] frame in [0, 1] as 8-bit RGB."""
    from PIL import Image

    arr = np.clip(np.round(np.asarray(frame).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def _stack_frames(paths: Sequence[Path]) -> np.ndarray:
    return np.stack([read_png(p) for p in paths])


def _align(video: np.ndarray, fps: float, gt: Waveform, name: str) -> tuple[VideoCube, Waveform]:
    if abs(gt.fs - fps) > 1e-6:
        warnings.warn(f"{name}: ground truth at {gt.fs} Hz resampled to video rate {fps} Hz")
    processed = preprocess_groundtruth(gt, target_fs=fps)
    n = min(len(video), len(processed))
    return VideoCube(video[:n], fps), Waveform(processed.samples[:n], fps)


# -- PURE-style ------------------------------------------------------------------

_PURE_NAME = re.compile(r"Image(\d+)\.png$")


def load_pure_record(directory, fps: float = 30.0) -> tuple[VideoCube, Waveform]:
    directory = Path(directory)
    jsons = sorted(directory.glob("*.json"))
    if len(jsons) != 1:
        raise FileNotFoundError(f"{directory}: expected exactly one JSON physiology file, found {len(jsons)}")
    doc = json.loads(jsons[0].read_text())
    image_ts = [int(e["Timestamp"]) for e in doc["/Image"]]
    files = {}
    for p in directory.rglob("Image*.png"):
        m = _PURE_NAME.search(p.name)
        if m:
            files[int(m.group(1))] = p
    for i, ts in enumerate(image_ts):
        if ts not in files:
            raise GapError(i, str(directory))
    video = _stack_frames([files[ts] for ts in image_ts])
    pkg = doc["/FullPackage"]
    t = np.array([int(e["Timestamp"]) for e in pkg], dtype=np.float64) * 1e-9
    v = np.array([float(e["Value"]["waveform"]) for e in pkg])
    gt_fs = 1.0 / float(np.median(np.diff(t)))
    gt = Waveform(v, round(gt_fs, 3))
    return _align(video, fps, gt, str(directory))


# -- UBFC-style ------------------------------------------------------------------

_INDEX = re.compile(r"(\d+)\.png$")


def load_ubfc_record(directory, fps: float = 30.0) -> tuple[VideoCube, Waveform]:
    directory = Path(directory)
    lines = (directory / "ground_truth.txt").read_text().strip().splitlines()
    ppg = np.array([float(x) for x in lines[0].split()])
    ts = np.array([float(x) for x in lines[2].split()]) if len(lines) >= 3 else None
    frame_dir = directory / "frames"
    indexed = {}
    for p in frame_dir.glob("*.png"):
        m = _INDEX.search(p.name)
        if m:
            indexed[int(m.group(1))] = p
    if not indexed:
        raise FileNotFoundError(f"{frame_dir}: no numbered PNG frames")
    first, last = min(indexed), max(indexed)
    for i in range(first, last + 1):
        if i not in indexed:
            raise GapError(i, str(directory))
    video = _stack_frames([indexed[i] for i in range(first, last + 1)])
    gt_fs = 1.0 / float(np.median(np.diff(ts))) if ts is not None and len(ts) > 1 else fps
    gt = Waveform(ppg, round(gt_fs, 3))
    return _align(video, fps, gt, str(directory))


LOADERS: dict[str, Callable] = {"pure": load_pure_record, "ubfc": load_ubfc_record}


def load_records(dirs: Sequence, kind: str, max_workers: int = 4) -> list[tuple[VideoCube, Waveform]]:
    """Load several records in parallel; results keep the order of ``dirs``."""
    loader = LOADERS[kind]
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(loader, dirs))


# -- dataset index ---------------------------------------------------------------

@dataclass
class IndexEntry:
    subject_id: str
    video_path: str
    groundtruth_path: str
    fps: float
    split: str

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")


@dataclass
class DatasetIndex:
    entries: list[IndexEntry] = field(default_factory=list)

    def validate(self) -> None:
        splits: dict[str, set[str]] = {}
        for e in self.entries:
            splits.setdefault(e.subject_id, set()).add(e.split)
        both = sorted(s for s, sp in splits.items() if len(sp) > 1)
        if both:
            raise ValueError(f"subjects appear in both train and test splits: {both}")

    def split(self, name: str) -> list[IndexEntry]:
        return [e for e in self.entries if e.split == name]

    def to_json(self) -> str:
        return json.dumps({"entries": [e.__dict__ for e in self.entries]}, indent=2)

    def save(self, path) -> None:
        self.validate()
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "DatasetIndex":
        doc = json.loads(Path(path).read_text())
        keys = {"subject_id", "video_path", "groundtruth_path", "fps", "split"}
        entries = []
        for raw in doc["entries"]:
            unknown = set(raw) - keys
            if unknown:
                raise ValueError(f"unknown index keys: {sorted(unknown)}")
            entries.append(IndexEntry(**raw))
        idx = cls(entries)
        idx.validate()
        return idx


def split_subjects(subject_ids: Sequence[str], n_train: int) -> tuple[list[str], list[str]]:
    """First ``n_train`` distinct subjects (in sorted order) train, the rest test."""
    subjects = sorted(set(subject_ids))
    return subjects[:n_train], subjects[n_train:]


def detect_layout(directory) -> str:
    directory = Path(directory)
    if (directory / "ground_truth.txt").exists():
        return "ubfc"
    if list(directory.glob("*.json")):
        return "pure"
    raise FileNotFoundError(f"{directory}: neither a PURE-style nor a UBFC-style record")


def load_entry(entry: IndexEntry, root=".") -> Record:
    """Load one index entry: a ``.tdmc`` cube plus waveform file, or a record directory."""
    root = Path(root)
    vpath = root / entry.video_path
    name = Path(entry.video_path).stem
    if vpath.is_dir():
        cube, gt = LOADERS[detect_layout(vpath)](vpath, fps=entry.fps)
    else:
        raw, _ = load_cube(vpath)
        wave = load_waveform(root / entry.groundtruth_path)
        cube, gt = _align(raw.frames, entry.fps, wave, str(vpath))
    return Record(name, entry.subject_id, cube, gt)


def load_index(index: DatasetIndex, root=".", split: str | None = None, max_workers: int = 4) -> list[Record]:
    entries = index.entries if split is None else index.split(split)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(lambda e: load_entry(e, root), entries))
