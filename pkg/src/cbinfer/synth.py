"""Synthetic static-camera sequences: fixed background, moving boxes, sensor noise."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LoadError
from .tensor import DTYPE, LABEL_DTYPE, read_labels, read_raw_frame, write_labels, write_raw_frame

FRAME_PATTERN = "frame_{:04d}.f32le"
LABEL_PATTERN = "label_{:04d}.u8"
MANIFEST = "manifest.json"


@dataclass
class Sprite:
    size: int
    velocity: tuple[int, int] = (0, 1)  # (rows, cols) per frame
    intensity: float = 1.0
    start: tuple[int, int] | None = None  # top-left corner; random if None


@dataclass
class SynthConfig:
    height: int = 64
    width: int = 64
    channels: int = 3
    frames: int = 8
    sprites: list[Sprite] = field(default_factory=list)
    noise_amplitude: float = 0.0
    seed: int = 0
    background: tuple[float, float] = (0.0, 0.5)

    @classmethod
    def from_json(cls, d: dict) -> SynthConfig:
        d = dict(d)
        d["sprites"] = [Sprite(**{k: tuple(v) if isinstance(v, list) else v
                                  for k, v in s.items()}) for s in d.get("sprites", [])]
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)


@dataclass
class Sequence:
    frames: list[np.ndarray]
    labels: list[np.ndarray] | None = None
    name: str = "seq"

    def __len__(self):
        return len(self.frames)


def sprite_boxes(cfg: SynthConfig) -> list[list[tuple[int, int]]]:
    """Top-left corner of every sprite on every frame (clamped to the frame)."""
    rng = np.random.default_rng([cfg.seed, 1])
    boxes = []
    for s in cfg.sprites:
        if s.size > min(cfg.height, cfg.width):
            raise ValueError(f"sprite of size {s.size} does not fit {cfg.height}x{cfg.width}")
        hi_y, hi_x = cfg.height - s.size, cfg.width - s.size
        if s.start is None:
            y0, x0 = int(rng.integers(0, hi_y + 1)), int(rng.integers(0, hi_x + 1))
        else:
            y0, x0 = s.start
        track = []
        for t in range(cfg.frames):
            y = min(max(y0 + t * s.velocity[0], 0), hi_y)
            x = min(max(x0 + t * s.velocity[1], 0), hi_x)
            track.append((y, x))
        boxes.append(track)
    return boxes


def generate(cfg: SynthConfig) -> Sequence:
    """Render a sequence in memory. The seed fixes everything."""
    rng = np.random.default_rng([cfg.seed, 0])
    lo, hi = cfg.background
    background = rng.uniform(lo, hi, size=(cfg.channels, cfg.height, cfg.width)).astype(DTYPE)
    tracks = sprite_boxes(cfg)
    frames, labels = [], []
    for t in range(cfg.frames):
        frame = background.copy()
        label = np.zeros((cfg.height, cfg.width), dtype=LABEL_DTYPE)
        for s, track in zip(cfg.sprites, tracks):
            y, x = track[t]
            frame[:, y:y + s.size, x:x + s.size] = DTYPE(s.intensity)
            label[y:y + s.size, x:x + s.size] = 1
        if cfg.noise_amplitude > 0:
            a = cfg.noise_amplitude
            frame += rng.uniform(-a, a, size=frame.shape).astype(DTYPE)
        frames.append(frame)
        labels.append(label)
    return Sequence(frames, labels, name=f"synth-{cfg.seed}")


def synth_generate(cfg: SynthConfig, out_dir) -> dict:
    """Write a sequence as raw frames, ground-truth label maps and a manifest."""
    seq = generate(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, (frame, label) in enumerate(zip(seq.frames, seq.labels)):
        write_raw_frame(out_dir / FRAME_PATTERN.format(t), frame)
        write_labels(out_dir / LABEL_PATTERN.format(t), label)
    manifest = {"channels": cfg.channels, "height": cfg.height, "width": cfg.width,
                "frames": cfg.frames, "labels": True, "numClasses": 2}
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_sequence(seq_dir) -> Sequence:
    seq_dir = Path(seq_dir)
    try:
        manifest = json.loads((seq_dir / MANIFEST).read_text())
        c, h, w, n = (int(manifest[k]) for k in ("channels", "height", "width", "frames"))
    except (OSError, KeyError, ValueError) as exc:
        raise LoadError(f"bad sequence manifest in {seq_dir}: {exc}") from exc
    frames = [read_raw_frame(seq_dir / FRAME_PATTERN.format(t), c, h, w) for t in range(n)]
    labels = None
    if manifest.get("labels"):
        labels = [read_labels(seq_dir / LABEL_PATTERN.format(t), h, w) for t in range(n)]
    return Sequence(frames, labels, name=seq_dir.name)

