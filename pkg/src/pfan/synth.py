"""Deterministic synthetic blurry/sharp clips with ground-truth motion.

A scene is a periodic background texture plus sprites moving over it, the
whole canvas optionally translated by a per-frame camera velocity. Motion is
toroidal. Every pixel value is an exact pixel-area average: the texture is a
finite Fourier series (box-filtered in closed form) and square sprites use
their exact overlap with the pixel. Discs use a one-pixel linear edge ramp.

The blurry frame t averages E renders at times spread evenly over one frame
interval centred on t; the sharp frame is the render at t itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Sprite:
    kind: str          # "square" or "disc"
    size: float        # side length or diameter, px
    y: float           # centre at time 0
    x: float
    vy: float = 0.0    # own velocity, px / frame
    vx: float = 0.0
    color: tuple = (1.0, 1.0, 1.0)


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    frames: int = 12
    exposures: int = 8
    texture_seed: int = 0
    texture_modes: int = 24
    texture_band: int = 10          # highest spatial frequency, cycles per canvas
    texture_contrast: float = 0.2
    background: tuple = (0.5, 0.5, 0.5)
    sprites: list = field(default_factory=list)
    camera: list = field(default_factory=list)   # (vy, vx) for each interval [j, j+1]
    max_displacement: float = 8.0
    exposure_span: float = 1.0

    def camera_velocity(self, j: int) -> tuple:
        if not self.camera:
            return (0.0, 0.0)
        j = min(max(j, 0), len(self.camera) - 1)
        return tuple(self.camera[j])

    def validate(self) -> None:
        if self.exposures < 1:
            raise ValueError("need at least one exposure per frame")
        if self.frames < 1 or self.height < 1 or self.width < 1:
            raise ValueError("empty canvas or clip")
        for j in range(self.frames):
            cy, cx = self.camera_velocity(j)
            if np.hypot(cy, cx) > self.max_displacement + 1e-9:
                raise ValueError(f"camera displacement {np.hypot(cy, cx):.2f} px exceeds cap")
            for s in self.sprites:
                d = np.hypot(s.vy + cy, s.vx + cx)
                if d > self.max_displacement + 1e-9:
                    raise ValueError(f"sprite displacement {d:.2f} px exceeds cap {self.max_displacement}")


@dataclass
class Clip:
    sharp: np.ndarray      # (T, 3, H, W)
    blurry: np.ndarray     # (T, 3, H, W)
    flow: np.ndarray       # (T, 2, H, W): (dy, dx) from frame t into frame t-1
    wrapped: bool = False


def camera_position(spec: SceneSpec, tau: float) -> np.ndarray:
    """Integrated camera translation at continuous time ``tau`` (0 at tau=0)."""
    pos = np.zeros(2)
    if tau >= 0:
        whole = int(np.floor(tau))
        for j in range(whole):
            pos += spec.camera_velocity(j)
        pos += (tau - whole) * np.asarray(spec.camera_velocity(whole))
    else:
        pos += tau * np.asarray(spec.camera_velocity(0))
    return pos


def _texture_modes(spec: SceneSpec, seed: int):
    rng = np.random.default_rng(seed)
    n = spec.texture_modes
    ky = rng.integers(-spec.texture_band, spec.texture_band + 1, size=n)
    kx = rng.integers(-spec.texture_band, spec.texture_band + 1, size=n)
    kx[(ky == 0) & (kx == 0)] = 1
    amp = rng.uniform(0.3, 1.0, size=(n, 3)) * spec.texture_contrast / np.sqrt(n / 2)
    phase = rng.uniform(0, 2 * np.pi, size=(n, 3))
    return ky, kx, amp, phase


def _sinc(t):
    return np.sinc(t / np.pi)


def _render_background(spec: SceneSpec, modes, shift) -> np.ndarray:
    H, W = spec.height, spec.width
    img = np.empty((3, H, W))
    img[:] = np.asarray(spec.background, dtype=float).reshape(3, 1, 1)
    ky, kx, amp, phase = modes
    yc = np.arange(H) + 0.5 - shift[0]
    xc = np.arange(W) + 0.5 - shift[1]
    for i in range(len(ky)):
        a = 2 * np.pi * ky[i] / H
        b = 2 * np.pi * kx[i] / W
        box = _sinc(a / 2) * _sinc(b / 2)
        arg = a * yc[:, None] + b * xc[None, :]
        for ch in range(3):
            img[ch] += amp[i, ch] * box * np.cos(arg + phase[i, ch])
    return img


def _overlap_1d(lo: float, hi: float, n: int, period: int) -> np.ndarray:
    """Length of [lo, hi] inside each unit cell [i, i+1], wrapped with ``period``."""
    cells = np.arange(n, dtype=float)
    total = np.zeros(n)
    for k in (-1, 0, 1):
        a = lo + k * period
        b = hi + k * period
        total += np.clip(np.minimum(cells + 1, b) - np.maximum(cells, a), 0, None)
    return np.minimum(total, 1.0)


def sprite_center(spec: SceneSpec, s: Sprite, tau: float) -> np.ndarray:
    """Unwrapped centre position at time ``tau``."""
    return np.array([s.y + s.vy * tau, s.x + s.vx * tau]) + camera_position(spec, tau)


def _coverage(spec: SceneSpec, s: Sprite, tau: float) -> np.ndarray:
    H, W = spec.height, spec.width
    cy, cx = sprite_center(spec, s, tau)
    cy %= H
    cx %= W
    if s.kind == "square":
        half = s.size / 2
        return np.outer(_overlap_1d(cy - half, cy + half, H, H), _overlap_1d(cx - half, cx + half, W, W))
    if s.kind == "disc":
        dy = np.abs(np.arange(H) + 0.5 - cy)
        dx = np.abs(np.arange(W) + 0.5 - cx)
        dy = np.minimum(dy, H - dy)
        dx = np.minimum(dx, W - dx)
        d = np.hypot(dy[:, None], dx[None, :])
        return np.clip(s.size / 2 - d + 0.5, 0.0, 1.0)
    raise ValueError(f"unknown sprite kind {s.kind!r}")


def render(spec: SceneSpec, tau: float, modes) -> tuple:
    """Render at continuous time; returns (image (3,H,W), coverage per sprite)."""
    img = _render_background(spec, modes, camera_position(spec, tau))
    covs = []
    for s in spec.sprites:
        cov = _coverage(spec, s, tau)
        covs.append(cov)
        col = np.asarray(s.color, dtype=float).reshape(3, 1, 1)
        img = img * (1 - cov) + col * cov
    return np.clip(img, 0.0, 1.0), covs


def exposure_times(spec: SceneSpec, t: int) -> np.ndarray:
    E = spec.exposures
    if E == 1:
        return np.array([float(t)])
    return t + (np.arange(E) / (E - 1) - 0.5) * spec.exposure_span


def _flow(spec: SceneSpec, t: int, covs: list) -> np.ndarray:
    H, W = spec.height, spec.width
    flow = np.empty((2, H, W))
    bg = camera_position(spec, t - 1) - camera_position(spec, t)
    flow[0], flow[1] = bg
    for s, cov in zip(spec.sprites, covs):
        d = sprite_center(spec, s, t - 1) - sprite_center(spec, s, t)
        inside = cov >= 0.5
        flow[0][inside] = d[0]
        flow[1][inside] = d[1]
    return flow


def _wraps(spec: SceneSpec) -> bool:
    H, W = spec.height, spec.width
    lo = exposure_times(spec, 0)[0]
    hi = exposure_times(spec, spec.frames - 1)[-1]
    for s in spec.sprites:
        for tau in (lo, hi):
            cy, cx = sprite_center(spec, s, tau)
            r = s.size / 2
            if cy - r < 0 or cy + r > H or cx - r < 0 or cx + r > W:
                return True
    return False


def render_clip(spec: SceneSpec, seed: int | None = None) -> Clip:
    """Render all frames of a scene; ``seed`` overrides the texture seed."""
    spec.validate()
    modes = _texture_modes(spec, spec.texture_seed if seed is None else seed)
    T, H, W = spec.frames, spec.height, spec.width
    sharp = np.empty((T, 3, H, W))
    blurry = np.empty((T, 3, H, W))
    flow = np.empty((T, 2, H, W))
    for t in range(T):
        sharp[t], covs = render(spec, float(t), modes)
        flow[t] = _flow(spec, t, covs)
        acc = np.zeros((3, H, W))
        for tau in exposure_times(spec, t):
            acc += render(spec, float(tau), modes)[0]
        blurry[t] = acc / spec.exposures
    return Clip(sharp=sharp, blurry=blurry, flow=flow, wrapped=_wraps(spec))


def random_scene(rng: np.random.Generator, height: int = 64, width: int = 64, frames: int = 12,
                 exposures: int = 8, sprites: tuple = (3, 6), max_speed: float = 4.0,
                 camera_speed: float = 3.0, pure_translation: bool = False) -> SceneSpec:
    """Draw a random scene. ``pure_translation`` gives one global constant motion
    (no independent sprite motion) of 1..4 px/frame."""
    spec = SceneSpec(height=height, width=width, frames=frames, exposures=exposures,
                     texture_seed=int(rng.integers(2 ** 31)))
    spec.background = tuple(rng.uniform(0.3, 0.7, size=3))
    spec.texture_contrast = float(rng.uniform(0.2, 0.4))
    if pure_translation:
        speed = rng.uniform(1.0, 4.0)
        ang = rng.uniform(0, 2 * np.pi)
        v = (speed * np.sin(ang), speed * np.cos(ang))
        spec.camera = [v] * frames
    else:
        spec.camera = []
        v = np.zeros(2)
        for _ in range(frames):
            v = v + rng.normal(0, camera_speed / 3, size=2)
            n = np.hypot(*v)
            if n > camera_speed:
                v *= camera_speed / n
            spec.camera.append(tuple(v))
    count = int(rng.integers(sprites[0], sprites[1] + 1))
    for _ in range(count):
        if pure_translation:
            vy = vx = 0.0
        else:
            speed = rng.uniform(0.0, max_speed)
            ang = rng.uniform(0, 2 * np.pi)
            vy, vx = speed * np.sin(ang), speed * np.cos(ang)
        spec.sprites.append(Sprite(
            kind=str(rng.choice(["square", "disc"])),
            size=float(rng.uniform(min(6.0, min(height, width) / 4), min(height, width) / 3)),
            y=float(rng.uniform(0, height)), x=float(rng.uniform(0, width)),
            vy=float(vy), vx=float(vx),
            color=tuple(float(c) for c in rng.uniform(0, 1, size=3)),
        ))
    return spec
