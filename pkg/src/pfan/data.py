"""On-disk synthetic datasets, temporal windows and augmentation.

Layout::

    root/manifest.txt
    root/clip_0000/blur_0000.ppm  sharp_0000.ppm  flow_0000.bin
    ...

``flow_%04d.bin`` holds two little-endian float32 planes (dy, dx), row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import quantize8
from .synth import Clip
from .tensor import ContractError

MANIFEST_MAGIC = "pfan-synth"
MANIFEST_VERSION = 1


class DatasetError(ValueError):
    pass


# ------------------------------------------------------------------ PPM


def write_ppm(path, img: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as binary 8-bit PPM."""
    q = img if img.dtype == np.uint8 else quantize8(img)
    _, h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes())


def _ppm_tokens(blob: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    return tokens, pos + 1


def read_ppm_u8(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _ppm_tokens(blob, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise DatasetError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(w), int(h)
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).transpose(2, 0, 1).copy()


def read_ppm(path) -> np.ndarray:
    return read_ppm_u8(path).astype(np.float32) / np.float32(255.0)


# ------------------------------------------------------------------ dataset


@dataclass
class ClipData:
    name: str
    blurry: np.ndarray   # (T, 3, H, W) float32 in [0, 1]
    sharp: np.ndarray
    flow: np.ndarray     # (T, 2, H, W) float32
    wrapped: bool = False


@dataclass
class ClipSample:
    blurry: np.ndarray    # (2N+1, 3, H, W)
    sharp: np.ndarray     # (3, H, W)
    flow: np.ndarray      # (2, H, W) displacement of the target into frame t-1
    clip: str = ""
    frame: int = 0

    def sharp_pyramid(self, levels: int) -> list:
        out = [self.sharp]
        for _ in range(levels - 1):
            c, h, w = out[-1].shape
            out.append(out[-1].reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)))
        return out


class Dataset:
    def __init__(self, clips: list, radius: int = 1, exposures: int = 0):
        self.clips = clips
        self.radius = radius
        self.exposures = exposures

    def __len__(self):
        return len(self.clips)

    def windows(self, radius: int | None = None) -> list:
        """(clip index, target frame) pairs in deterministic order; borders dropped."""
        n = self.radius if radius is None else radius
        return [(ci, t) for ci, c in enumerate(self.clips) for t in range(n, len(c.blurry) - n)]

    def sample(self, ci: int, t: int, radius: int | None = None) -> ClipSample:
        n = self.radius if radius is None else radius
        c = self.clips[ci]
        return ClipSample(blurry=c.blurry[t - n:t + n + 1], sharp=c.sharp[t], flow=c.flow[t],
                          clip=c.name, frame=t)

    def __iter__(self):
        for ci, t in self.windows():
            yield self.sample(ci, t)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.clips[i] for i in indices], self.radius, self.exposures)


def from_clips(clips: list, radius: int = 1, names=None, exposures: int = 0) -> Dataset:
    """In-memory dataset, quantised to 8 bits exactly as a disk round trip would be."""
    out = []
    for i, c in enumerate(clips):
        q = lambda a: quantize8(a).astype(np.float32) / np.float32(255.0)  # noqa: E731
        out.append(ClipData(name=names[i] if names else f"clip_{i:04d}", blurry=q(c.blurry),
                            sharp=q(c.sharp), flow=c.flow.astype(np.float32), wrapped=c.wrapped))
    return Dataset(out, radius, exposures)


def write_dataset(clips: list, root, radius: int = 1, exposures: int = 0) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    h, w = clips[0].sharp.shape[2:]
    lines = [
        f"{MANIFEST_MAGIC} {MANIFEST_VERSION}",
        f"radius {radius}",
        f"exposures {exposures}",
        f"height {h}",
        f"width {w}",
        f"clips {len(clips)}",
    ]
    for i, clip in enumerate(clips):
        name = f"clip_{i:04d}"
        d = root / name
        d.mkdir(exist_ok=True)
        for t in range(len(clip.sharp)):
            write_ppm(d / f"blur_{t:04d}.ppm", clip.blurry[t])
            write_ppm(d / f"sharp_{t:04d}.ppm", clip.sharp[t])
            (d / f"flow_{t:04d}.bin").write_bytes(np.ascontiguousarray(clip.flow[t], dtype="<f4").tobytes())
        lines.append(f"{name} {len(clip.sharp)} {'wrapped' if clip.wrapped else '-'}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")


def _parse_manifest(path: Path) -> dict:
    lines = path.read_text().splitlines()

    def fail(lineno, msg):
        raise DatasetError(f"{path}:{lineno}: {msg}")

    if not lines:
        fail(1, "empty manifest")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MANIFEST_MAGIC:
        fail(1, f"expected '{MANIFEST_MAGIC} <version>'")
    if head[1] != str(MANIFEST_VERSION):
        fail(1, f"unsupported manifest version {head[1]}")
    meta = {}
    for lineno, key in enumerate(("radius", "exposures", "height", "width", "clips"), start=2):
        if lineno > len(lines):
            fail(lineno, f"missing '{key}' line")
        parts = lines[lineno - 1].split()
        if len(parts) != 2 or parts[0] != key or not parts[1].isdigit():
            fail(lineno, f"expected '{key} <integer>'")
        meta[key] = int(parts[1])
    clips = []
    for lineno, line in enumerate(lines[6:], start=7):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in ("wrapped", "-"):
            fail(lineno, "expected '<clip name> <frame count> wrapped|-'")
        clips.append((lineno, parts[0], int(parts[1]), parts[2] == "wrapped"))
    if len(clips) != meta["clips"]:
        fail(6, f"manifest declares {meta['clips']} clips but lists {len(clips)}")
    meta["clip_list"] = clips
    return meta


def read_dataset(root) -> Dataset:
    root = Path(root)
    path = root / "manifest.txt"
    meta = _parse_manifest(path)
    H, W = meta["height"], meta["width"]
    out = []
    for lineno, name, frames, wrapped in meta["clip_list"]:
        d = root / name
        found = len(list(d.glob("blur_*.ppm"))) if d.is_dir() else 0
        if found != frames:
            raise DatasetError(f"{path}:{lineno}: {name} declares {frames} frames, found {found} on disk")
        blurry = np.empty((frames, 3, H, W), dtype=np.float32)
        sharp = np.empty_like(blurry)
        flow = np.empty((frames, 2, H, W), dtype=np.float32)
        for t in range(frames):
            b = read_ppm(d / f"blur_{t:04d}.ppm")
            if b.shape != (3, H, W):
                raise DatasetError(f"{path}:{lineno}: {name} frame {t} has extents {b.shape[1:]}")
            blurry[t] = b
            sharp[t] = read_ppm(d / f"sharp_{t:04d}.ppm")
            flow[t] = np.frombuffer((d / f"flow_{t:04d}.bin").read_bytes(), dtype="<f4").reshape(2, H, W)
        out.append(ClipData(name=name, blurry=blurry, sharp=sharp, flow=flow, wrapped=wrapped))
    return Dataset(out, meta["radius"], meta["exposures"])


# ------------------------------------------------------------------ augmentation


def augment(sample: ClipSample, rng: np.random.Generator, crop: int) -> ClipSample:
    """Random crop and horizontal flip (p = 0.5), identical for every frame and the target."""
    h, w = sample.sharp.shape[1:]
    if crop > h or crop > w:
        raise ContractError(f"crop {crop} larger than frame {h}x{w}")
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    flip = bool(rng.random() < 0.5)
    return crop_flip(sample, y0, x0, crop, flip)


def crop_flip(sample: ClipSample, y0: int, x0: int, crop: int, flip: bool) -> ClipSample:
    sl = (slice(y0, y0 + crop), slice(x0, x0 + crop))
    blurry = sample.blurry[..., sl[0], sl[1]]
    sharp = sample.sharp[..., sl[0], sl[1]]
    flow = sample.flow[..., sl[0], sl[1]]
    if flip:
        blurry = blurry[..., ::-1]
        sharp = sharp[..., ::-1]
        flow = flow[..., ::-1] * np.array([1.0, -1.0], dtype=flow.dtype).reshape(2, 1, 1)
    return ClipSample(blurry=np.ascontiguousarray(blurry), sharp=np.ascontiguousarray(sharp),
                      flow=np.ascontiguousarray(flow), clip=sample.clip, frame=sample.frame)
