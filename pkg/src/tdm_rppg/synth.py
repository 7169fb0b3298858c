"""Synthetic pulse-modulated video cubes with known ground-truth offsets.

Each frame is ``base * (1 + drift(t) * illuminant) + depth * colour * p(t)``
on skin pixels, plus Gaussian noise, clamped to [0, 1]. ``p`` is a
phase-integrated sinusoid with a 0.3-amplitude second harmonic that follows a
piecewise-linear heart-rate trajectory.

Offset convention: the ground truth is ``p(t + k*/fps)``, i.e. shifting the
ground truth by ``k*`` frames (``losses.shift_reference``) lines it up with
the pulse in the video. TALOS should therefore put its mass on ``k*``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_io import Record, load_cube, save_cube
from .dsp import Waveform, load_waveform, save_waveform_text, standardize
from .model import VideoCube

HARMONIC = 0.3
SKIN_RGB = (0.62, 0.45, 0.36)
BACKGROUND_RGB = (0.35, 0.35, 0.38)


class SpecError(ValueError):
    pass


@dataclass
class SynthSubjectSpec:
    subject_id: str
    hr_trajectory: list = field(default_factory=lambda: [(0.0, 90.0)])  # (time s, BPM) knots
    true_offset: int = 0
    modulation_depth: float = 0.02
    noise_sigma: float = 0.0
    skin_mask: float = 1.0
    seed: int = 0
    pulse_rgb: tuple = (1.0, 1.0, 1.0)
    # slow illumination drift (relative amplitude) and per-video illuminant colour jitter
    drift_amplitude: float = 0.0
    drift_max_hz: float = 0.5
    illuminant_jitter: float = 0.0
    texture: float = 0.03

    def validate(self, fps: float = 30.0) -> None:
        bound = int(np.floor(fps / 2))
        if abs(self.true_offset) > bound:
            raise SpecError(f"|true_offset| must be <= {bound} at {fps} fps")
        if not 0 < self.modulation_depth <= 0.2:
            raise SpecError("modulation_depth must be in (0, 0.2]")
        if not 0 <= self.skin_mask <= 1:
            raise SpecError("skin_mask must be in [0, 1]")
        if self.noise_sigma < 0 or self.drift_amplitude < 0 or self.illuminant_jitter < 0:
            raise SpecError("noise, drift and jitter must be non-negative")
        if not self.hr_trajectory:
            raise SpecError("hr_trajectory needs at least one knot")
        times = [float(t) for t, _ in self.hr_trajectory]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise SpecError("hr_trajectory knot times must be strictly increasing")
        for _, bpm in self.hr_trajectory:
            if not 45 <= bpm <= 150:
                raise SpecError(f"heart rate {bpm} BPM outside 45-150")


@dataclass
class SynthSample(Record):
    spec: SynthSubjectSpec | None = None


def _bpm_at(traj, t: np.ndarray) -> np.ndarray:
    knots = np.array([float(k) for k, _ in traj])
    vals = np.array([float(v) for _, v in traj])
    return np.interp(t, knots, vals)


def pulse_waveform(traj, t: np.ndarray, phase0: float = 0.0, dt: float = 1e-3) -> np.ndarray:
    """Sinusoid + second harmonic with phase integrated from the BPM trajectory."""
    lo = min(float(t.min()), 0.0)
    hi = float(t.max()) + dt
    grid = np.arange(lo, hi + dt, dt)
    f = _bpm_at(traj, grid) / 60.0
    phase_grid = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * dt)]) * 2 * np.pi
    # phase is referenced to t = 0 whatever the grid start
    phase = np.interp(t, grid, phase_grid) - np.interp(0.0, grid, phase_grid) + phase0
    return np.sin(phase) + HARMONIC * np.sin(2 * phase + np.pi / 3)


def _drift(rng: np.random.Generator, t: np.ndarray, max_hz: float, n: int = 4) -> np.ndarray:
    freqs = rng.uniform(0.03, max_hz, size=n)
    phases = rng.uniform(0, 2 * np.pi, size=n)
    amps = rng.uniform(0.5, 1.0, size=n)
    d = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)
    return d / d.std()


def _skin_region(h: int, w: int, fraction: float) -> np.ndarray:
    """Centred blob covering ``fraction`` of the frame."""
    yy, xx = np.mgrid[0:h, 0:w]
    r = ((yy - (h - 1) / 2) / h) ** 2 + ((xx - (w - 1) / 2) / w) ** 2
    n = int(round(fraction * h * w))
    mask = np.zeros(h * w, dtype=bool)
    mask[np.argsort(r.ravel(), kind="stable")[:n]] = True
    return mask.reshape(h, w)


def generate(spec: SynthSubjectSpec, n_frames: int, height: int = 16, width: int = 16,
             fps: float = 30.0, video_id: str | None = None) -> SynthSample:
    spec.validate(fps)
    rng = np.random.default_rng(spec.seed)
    t = np.arange(n_frames) / fps
    phase0 = rng.uniform(0, 2 * np.pi)
    p_video = pulse_waveform(spec.hr_trajectory, t, phase0)
    p_gt = pulse_waveform(spec.hr_trajectory, t + spec.true_offset / fps, phase0)

    mask = _skin_region(height, width, spec.skin_mask)
    base = np.where(mask[None], np.array(SKIN_RGB)[:, None, None], np.array(BACKGROUND_RGB)[:, None, None])
    base = base * (1.0 + spec.texture * rng.standard_normal((1, height, width)))

    illum = np.ones(3)
    if spec.illuminant_jitter > 0:
        illum = illum + spec.illuminant_jitter * rng.standard_normal(3)
    drift = np.zeros(n_frames)
    if spec.drift_amplitude > 0:
        drift = spec.drift_amplitude * _drift(rng, t, spec.drift_max_hz)

    rgb = np.asarray(spec.pulse_rgb, dtype=np.float64)
    frames = base[None] * (1.0 + drift[:, None, None, None] * illum[None, :, None, None])
    frames = frames + (spec.modulation_depth * p_video)[:, None, None, None] * rgb[None, :, None, None] * mask[None, None]
    if spec.noise_sigma > 0:
        frames = frames + spec.noise_sigma * rng.standard_normal(frames.shape)
    frames = np.clip(frames, 0.0, 1.0)

    vid = video_id or f"{spec.subject_id}_v0"
    return SynthSample(video_id=vid, subject_id=spec.subject_id, video=VideoCube(frames, fps),
                       groundtruth=Waveform(standardize(p_gt), fps), true_offset=spec.true_offset, spec=spec)


def skin_trace(sample: Record, channel: int = 1) -> np.ndarray:
    """Per-frame mean of one colour channel over the whole frame."""
    return sample.video.frames[:, channel].mean(axis=(1, 2))


def random_trajectory(rng: np.random.Generator, duration: float, hr_range=(60.0, 110.0),
                      max_change: float = 10.0) -> list:
    start = rng.uniform(*hr_range)
    end = float(np.clip(start + rng.uniform(-max_change, max_change), 45.0, 150.0))
    return [(0.0, float(start)), (float(duration), end)]


def generate_cohort(n_subjects: int, videos_per_subject: int, template: SynthSubjectSpec | None = None,
                    n_frames: int = 512, height: int = 16, width: int = 16, fps: float = 30.0,
                    seed: int = 0, offsets: Sequence[int] | None = None, max_offset: int | None = None,
                    hr_range=(60.0, 110.0), constant_hr: bool = False,
                    subject_prefix: str = "s") -> list[SynthSample]:
    """Subjects share one offset across all their videos.

    Offsets come from ``offsets`` when given, else they are drawn without
    replacement from [-max_offset, max_offset] (with replacement once the
    range is exhausted). Each video gets its own heart-rate trajectory and
    noise seed.
    """
    if n_subjects < 1:
        raise SpecError("n_subjects must be >= 1")
    template = template or SynthSubjectSpec(subject_id="template")
    rng = np.random.default_rng(seed)
    bound = int(np.floor(fps / 2)) if max_offset is None else max_offset
    if offsets is None:
        pool = np.arange(-bound, bound + 1)
        if n_subjects <= len(pool):
            offsets = rng.choice(pool, size=n_subjects, replace=False)
        else:
            offsets = rng.choice(pool, size=n_subjects, replace=True)
    if len(offsets) != n_subjects:
        raise SpecError("one offset per subject is required")
    duration = n_frames / fps
    samples = []
    for i, k in enumerate(offsets):
        sid = f"{subject_prefix}{i:02d}"
        subject_seed = int(rng.integers(2**31))
        for v in range(videos_per_subject):
            vrng = np.random.default_rng([subject_seed, v])
            traj = [(0.0, float(vrng.uniform(*hr_range)))] if constant_hr else random_trajectory(vrng, duration, hr_range)
            spec = replace(template, subject_id=sid, true_offset=int(k), hr_trajectory=traj,
                           seed=int(vrng.integers(2**31)))
            samples.append(generate(spec, n_frames, height, width, fps, video_id=f"{sid}_v{v}"))
    return samples


# -- manifest ----------------------------------------------------------------------

def write_cohort(samples: Sequence[Record], out_dir, withhold_offsets: bool = False) -> Path:
    """Write cubes, ground-truth text files and ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "groundtruth").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        vpath = Path("videos") / f"{s.video_id}.tdmc"
        gpath = Path("groundtruth") / f"{s.video_id}.txt"
        save_cube(out / vpath, s.video, {"video_id": s.video_id, "subject_id": s.subject_id})
        save_waveform_text(out / gpath, s.groundtruth)
        entry = {"video_id": s.video_id, "subject_id": s.subject_id, "video_path": str(vpath),
                 "groundtruth_path": str(gpath), "fps": s.video.fps, "n_frames": s.n_frames}
        if not withhold_offsets and s.true_offset is not None:
            entry["true_offset"] = int(s.true_offset)
        spec = getattr(s, "spec", None)
        if spec is not None:
            entry["spec"] = {k: (list(map(list, v)) if k == "hr_trajectory" else v) for k, v in asdict(spec).items()}
        entries.append(entry)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"version": 1, "samples": entries}, indent=2))
    return manifest


def read_cohort(manifest) -> list[Record]:
    manifest = Path(manifest)
    doc = json.loads(manifest.read_text())
    root = manifest.parent
    records = []
    for e in doc["samples"]:
        cube, _ = load_cube(root / e["video_path"])
        gt = load_waveform(root / e["groundtruth_path"])
        records.append(Record(e["video_id"], e["subject_id"], cube, Waveform(gt.samples, cube.fps),
                              e.get("true_offset")))
    return records
