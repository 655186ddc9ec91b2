"""Deterministic renderer for the synthetic shape-blend dataset.

Each scene has one shape per layer (square, circle, triangle) drawn at a
random position/size/brightness on black, and the input image is the clipped
sum of the layers.  Rendering is byte-reproducible per (seed, config).
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, RenderError
from .imaging import (
    ADDITIVE_CLIPPED,
    CompositeOp,
    Image,
    LayerSet,
    compose,
    save_png,
)

SHAPE_KINDS = ("square", "circle", "triangle")
# domain letter per layer index; "x" is always the blended input
LAYER_DOMAINS = ("y", "z", "w")

_MAX_PLACEMENT_TRIES = 100


@dataclass
class ShapeSpec:
    """One flat shape: kind, integer center (row, col), size and brightness."""

    shape: str
    center: tuple
    size: int
    brightness: float

    def __post_init__(self):
        if self.shape not in SHAPE_KINDS:
            raise ConfigError(f"unknown shape kind {self.shape!r}")
        if self.brightness <= 0 or self.brightness > 1:
            raise ConfigError(f"brightness must be in (0,1], got {self.brightness}")
        if self.size < 2:
            raise ConfigError(f"size must be >= 2 px, got {self.size}")

    def fits(self, image_size: int) -> bool:
        half = self.size / 2.0
        cy, cx = self.center
        return (
            cy - half >= -0.5
            and cx - half >= -0.5
            and cy + half <= image_size - 0.5
            and cx + half <= image_size - 0.5
        )


@dataclass
class RenderConfig:
    image_size: int = 128
    n_train: int = 4000
    n_test: int = 1000
    n_layers: int = 2
    seed: int = 0
    size_range: tuple = (16, 64)
    brightness_range: tuple = (0.3, 1.0)
    anti_alias: bool = False

    def __post_init__(self):
        if self.n_train <= 0 or self.n_test <= 0:
            raise ConfigError("n_train and n_test must be positive")
        if self.n_layers not in (2, 3):
            raise ConfigError(f"n_layers must be 2 or 3, got {self.n_layers}")
        if self.size_range[0] < 2 or self.size_range[1] > self.image_size:
            raise ConfigError(
                f"size_range {self.size_range} incompatible with image_size "
                f"{self.image_size}"
            )
        lo, hi = self.brightness_range
        if not (0 < lo <= hi <= 1):
            raise ConfigError(f"bad brightness_range {self.brightness_range}")

    @property
    def domains(self):
        return LAYER_DOMAINS[: self.n_layers]


def rasterize(spec: ShapeSpec, image_size: int, anti_alias: bool = False) -> Image:
    """Draw a single shape at constant brightness on black, 3 channels."""
    factor = 4 if anti_alias else 1
    n = image_size * factor
    # pixel centers; supersampled grid shares the same continuous coordinates
    coords = (np.arange(n) + 0.5) / factor - 0.5
    rr, cc = np.meshgrid(coords, coords, indexing="ij")
    cy, cx = spec.center
    half = spec.size / 2.0
    if spec.shape == "square":
        mask = (np.abs(rr - cy) <= half) & (np.abs(cc - cx) <= half)
    elif spec.shape == "circle":
        mask = (rr - cy) ** 2 + (cc - cx) ** 2 <= half**2
    else:  # axis-aligned isoceles triangle, apex up
        t = rr - (cy - half)  # distance below the apex row, in [0, size]
        width = np.clip(t, 0.0, spec.size) * 0.5
        mask = (t >= 0) & (t <= spec.size) & (np.abs(cc - cx) <= width)
    mono = mask.astype(np.float64)
    if anti_alias:
        mono = mono.reshape(image_size, factor, image_size, factor).mean(axis=(1, 3))
    data = np.repeat((mono * spec.brightness)[:, :, None], 3, axis=2)
    return Image(data)


def sample_shape(kind: str, rng: np.random.Generator, cfg: RenderConfig) -> ShapeSpec:
    lo, hi = cfg.size_range
    blo, bhi = cfg.brightness_range
    for _ in range(_MAX_PLACEMENT_TRIES):
        size = int(rng.integers(lo, hi + 1))
        # brightness snapped to the 8-bit grid so PNG round trips are exact
        brightness = np.rint(rng.uniform(blo, bhi) * 255.0) / 255.0
        brightness = max(brightness, 1.0 / 255.0)
        half = (size + 1) // 2
        if cfg.image_size - half <= half:
            continue
        cy = int(rng.integers(half, cfg.image_size - half))
        cx = int(rng.integers(half, cfg.image_size - half))
        spec = ShapeSpec(kind, (cy, cx), size, brightness)
        if spec.fits(cfg.image_size):
            return spec
    raise RenderError(
        f"could not place a {kind} of size in {cfg.size_range} inside a "
        f"{cfg.image_size}px image after {_MAX_PLACEMENT_TRIES} tries"
    )


def render_scene(seed, cfg: RenderConfig):
    """Render one scene: returns (x, layers, specs).

    x is exactly compose(layers) with the clipped additive operator, and the
    output is a pure function of (seed, cfg).
    """
    rng = np.random.default_rng(seed)
    specs = [sample_shape(SHAPE_KINDS[k], rng, cfg) for k in range(cfg.n_layers)]
    layers = [rasterize(s, cfg.image_size, cfg.anti_alias) for s in specs]
    x = compose(LayerSet(layers, CompositeOp(ADDITIVE_CLIPPED)))
    return x, layers, specs


def _scene_seed(cfg_seed: int, split: str, index: int):
    return (cfg_seed, 0 if split == "train" else 1, index)


def render_dataset(cfg: RenderConfig, out_dir) -> dict:
    """Render the full train/test dataset and write manifest.json.

    Layout: out_dir/{train,test}/{x,y,z[,w]}/scene_%06d.png.  The manifest is
    deterministic (no timestamps) so reruns hash identically.
    """
    out_dir = Path(out_dir)
    domains = ("x",) + tuple(cfg.domains)
    for split in ("train", "test"):
        for dom in domains:
            (out_dir / split / dom).mkdir(parents=True, exist_ok=True)

    manifest = {"config": asdict(cfg), "splits": {"train": [], "test": []}}
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        for i in range(count):
            seed = _scene_seed(cfg.seed, split, i)
            x, layers, specs = render_scene(seed, cfg)
            scene_id = f"{split}_{i:06d}"
            files = {}
            shapes = {}
            for dom, img in zip(domains, [x] + layers):
                rel = f"{split}/{dom}/scene_{i:06d}.png"
                save_png(out_dir / rel, img)
                files[dom] = rel
            for dom, spec in zip(cfg.domains, specs):
                shapes[dom] = asdict(spec)
            manifest["splits"][split].append(
                {
                    "scene_id": scene_id,
                    "scene_group": scene_id,
                    "seed": list(seed),
                    "files": files,
                    "shapes": shapes,
                }
            )
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def manifest_hash(manifest: dict) -> str:
    blob = json.dumps(manifest, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
