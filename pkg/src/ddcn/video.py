"""Frame I/O, HR-to-LR degradation, flip augmentation and dataset assembly.

Frames are float64 arrays of shape (3, H, W) with values in [0, 1].  The only
image codec is binary PPM (P6, maxval 255).
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ddcn.core import Tensor, gaussian_blur, no_grad
from ddcn.core.rng import SplitMix64
from ddcn.errors import DataError, DimensionError

FRAME_PATTERN = re.compile(r"^frame_(\d+)\.ppm$")


@dataclass
class FrameSequence:
    frames: list[np.ndarray]

    def __post_init__(self):
        self.frames = [np.asarray(f.data if isinstance(f, Tensor) else f, dtype=np.float64)
                       for f in self.frames]
        n = len(self.frames)
        if n < 3 or n % 2 == 0:
            raise DimensionError(f"a frame sequence needs an odd length >= 3, got {n}")
        shape = self.frames[0].shape
        if len(shape) != 3 or shape[0] != 3:
            raise DimensionError(f"frames must be (3,H,W), got {shape}")
        if any(f.shape != shape for f in self.frames):
            raise DimensionError("all frames in a sequence must share one shape")

    @property
    def reference_index(self) -> int:
        return (len(self.frames) - 1) // 2

    @property
    def reference(self) -> np.ndarray:
        return self.frames[self.reference_index]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames[0].shape

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.frames)


@dataclass(frozen=True)
class DegradationConfig:
    sigma: float = 1.6
    scale: int = 4
    crop: int = 256

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.scale < 1 or self.crop % self.scale:
            raise DimensionError(f"crop {self.crop} must be a multiple of scale {self.scale}")


@dataclass
class TrainingPair:
    lr: FrameSequence
    hr: np.ndarray


# --- PPM -------------------------------------------------------------------

def _ppm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError("malformed PPM header")
        tokens.append(buf[start:pos])
    return tokens, pos


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise DataError(f"not a binary PPM (magic {buf[:2]!r})")
    tokens, pos = _ppm_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError("malformed PPM header") from None
    if maxval != 255 or width < 1 or height < 1:
        raise DataError(f"unsupported PPM geometry {width}x{height} maxval {maxval}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise DataError("malformed PPM header")
    payload = buf[pos + 1:]
    need = width * height * 3
    if len(payload) < need:
        raise DataError(f"truncated PPM payload: {len(payload)} of {need} bytes")
    pixels = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_ppm(frame) -> bytes:
    arr = np.asarray(frame.data if isinstance(frame, Tensor) else frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"can only save (3,H,W) frames, got {arr.shape}")
    q = np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)
    _, h, w = arr.shape
    return f"P6\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes()


def load_frame(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return decode_ppm(buf)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_frame(frame, path) -> None:
    Path(path).write_bytes(encode_ppm(frame))


def quantize(frame: np.ndarray) -> np.ndarray:
    """What a frame looks like after a save/load round trip."""
    return np.clip(np.floor(np.asarray(frame) * 255.0 + 0.5), 0, 255) / 255.0


# --- degradation -----------------------------------------------------------

def degrade_frame(frame, config: DegradationConfig, offset: int = 0) -> np.ndarray:
    """Blur with the configured Gaussian, then keep every ``scale``-th pixel
    starting at ``offset`` on both axes."""
    arr = np.asarray(frame.data if isinstance(frame, Tensor) else frame, dtype=np.float64)
    _, h, w = arr.shape
    s = config.scale
    if h % s or w % s:
        raise DimensionError(f"frame {h}x{w} is not divisible by scale {s}")
    with no_grad():
        blurred = gaussian_blur(Tensor(arr), config.sigma).data
    return blurred[:, offset::s, offset::s]


def degrade(hr: FrameSequence, config: DegradationConfig, offset: int = 0) -> FrameSequence:
    return FrameSequence([degrade_frame(f, config, offset) for f in hr])


def crop_pair(hr: FrameSequence, top: int, left: int, config: DegradationConfig) -> TrainingPair:
    """Crop a ``config.crop`` square from every HR frame and degrade it."""
    _, h, w = hr.shape
    size, s = config.crop, config.scale
    if top % s or left % s:
        raise DimensionError(f"crop offset ({top},{left}) is not aligned to scale {s}")
    if top < 0 or left < 0 or top + size > h or left + size > w:
        raise DimensionError(f"crop window ({top},{left})+{size} outside {h}x{w} frame")
    window = FrameSequence([f[:, top:top + size, left:left + size] for f in hr])
    return TrainingPair(degrade(window, config), window.reference.copy())


def flip_pair(pair: TrainingPair, horizontal: bool, vertical: bool) -> TrainingPair:
    def flip(a):
        if horizontal:
            a = a[:, :, ::-1]
        if vertical:
            a = a[:, ::-1, :]
        return np.ascontiguousarray(a)

    return TrainingPair(FrameSequence([flip(f) for f in pair.lr]), flip(pair.hr))


def flip_draws(seed: int) -> tuple[bool, bool]:
    rng = SplitMix64(seed)
    return rng.bernoulli(), rng.bernoulli()


def augment_flip(pair: TrainingPair, seed: int) -> TrainingPair:
    """Flip every LR frame and the HR truth horizontally and/or vertically, each with p=1/2."""
    horizontal, vertical = flip_draws(seed)
    return flip_pair(pair, horizontal, vertical)


def rgb_to_y(frame) -> np.ndarray:
    """BT.601 luma on the [16, 235] scale, shape (1, H, W)."""
    arr = np.asarray(frame.data if isinstance(frame, Tensor) else frame, dtype=np.float64)
    r, g, b = arr[0], arr[1], arr[2]
    return (65.481 * r + 128.553 * g + 24.966 * b + 16.0)[None]


# --- on-disk dataset layout ------------------------------------------------

def read_manifest(path) -> list[Path]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    dirs = [path.parent / line.strip() for line in lines if line.strip() and not line.startswith("#")]
    if not dirs:
        raise DataError(f"manifest {path} lists no sequences")
    return dirs


def frame_paths(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"sequence directory {directory} does not exist")
    found = sorted((int(m.group(1)), p) for p in directory.iterdir()
                   if (m := FRAME_PATTERN.match(p.name)))
    return [p for _, p in found]


def load_frames(directory) -> list[np.ndarray]:
    paths = frame_paths(directory)
    if not paths:
        raise DataError(f"no frame_NNNN.ppm files in {directory}")
    return [load_frame(p) for p in paths]


def write_sequence(frames: Sequence, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = directory / f"frame_{i:04d}.ppm"
        save_frame(f, p)
        paths.append(p)
    return paths


def write_manifest(dirs: Sequence, path) -> None:
    path = Path(path)
    lines = [os.path.relpath(Path(d).resolve(), path.parent.resolve()) for d in dirs]
    path.write_text("\n".join(lines) + "\n")


def windows(frames: Sequence, T: int) -> list[FrameSequence]:
    """Every run of 2T+1 consecutive frames."""
    n = 2 * T + 1
    return [FrameSequence(list(frames[i:i + n])) for i in range(len(frames) - n + 1)]


def build_dataset(manifest, T: int, config: DegradationConfig, seed: int = 0) -> list[TrainingPair]:
    """Training pairs from every (2T+1)-frame window of every listed HR sequence.

    The crop is the configured size or, for smaller frames, the largest
    scale-aligned square that fits; its position is drawn per window.
    """
    rng = SplitMix64(seed)
    pairs = []
    for directory in read_manifest(manifest):
        frames = load_frames(directory)
        if len(frames) < 2 * T + 1:
            raise DataError(f"{directory}: {len(frames)} frames, need at least {2 * T + 1}")
        _, h, w = frames[0].shape
        size = min(config.crop, h - h % config.scale, w - w % config.scale)
        if size < config.scale:
            raise DataError(f"{directory}: frames {h}x{w} are smaller than the scale factor")
        local = DegradationConfig(config.sigma, config.scale, size)
        for window in windows(frames, T):
            top = rng.randint((h - size) // config.scale + 1) * config.scale
            left = rng.randint((w - size) // config.scale + 1) * config.scale
            pairs.append(crop_pair(window, top, left, local))
    return pairs
