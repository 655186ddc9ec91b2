"""Dataset pools: non-triplet batch sampling, scene-disjoint splitting, and
training-time augmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import InvalidInputError, SamplingError, SplitError
from .imaging import Image, as_image

_MAX_RESAMPLE_TRIES = 100


@dataclass
class DomainSample:
    """One image belonging to a single domain (x, y, z, ...)."""

    domain: str
    scene_id: str
    path: Path = None
    array: np.ndarray = None  # eager alternative to path
    scene_group: str = None

    def __post_init__(self):
        if not self.scene_id:
            raise InvalidInputError("scene_id must be non-empty")
        if self.path is None and self.array is None:
            raise InvalidInputError("DomainSample needs a path or an array")

    def load(self) -> Image:
        if self.array is not None:
            return as_image(self.array)
        from .imaging import load_png

        return load_png(self.path)


@dataclass
class Pool:
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def draw(self, rng: np.random.Generator) -> DomainSample:
        if not self.samples:
            raise SamplingError("cannot draw from an empty pool")
        return self.samples[int(rng.integers(len(self.samples)))]


@dataclass
class Batch:
    """One training draw: an input image plus one image per layer domain.

    The non-triplet guarantee: no layer image comes from the input's scene.
    """

    x: Image
    layers: dict  # domain -> Image
    scene_ids: dict  # domain (incl. "x") -> scene_id

    def __post_init__(self):
        xid = self.scene_ids["x"]
        for dom in self.layers:
            if self.scene_ids[dom] == xid:
                raise InvalidInputError(
                    f"triplet collision: layer {dom} shares scene {xid} with x"
                )


def load_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def manifest_pools(manifest: dict, root, split: str = "train") -> dict:
    """Build per-domain pools from a renderer-style manifest."""
    root = Path(root)
    entries = manifest["splits"][split]
    if not entries:
        raise InvalidInputError(f"manifest split {split!r} is empty")
    domains = list(entries[0]["files"].keys())
    pools = {dom: Pool() for dom in domains}
    for e in entries:
        for dom, rel in e["files"].items():
            pools[dom].samples.append(
                DomainSample(
                    domain=dom,
                    scene_id=e["scene_id"],
                    path=root / rel,
                    scene_group=e.get("scene_group"),
                )
            )
    return pools


def split_non_triplet(records, scene_groups: dict, subset1_groups=None):
    """Split records into scene-disjoint pools.

    Input images (domain "x") are drawn only from subset 1; layer images and
    test samples only from subset 2.  ``scene_groups`` maps scene_id -> group
    label; by default the sorted group labels are halved, or pass
    ``subset1_groups`` explicitly.
    """
    for r in records:
        if r.scene_id not in scene_groups:
            raise SplitError(f"record {r.scene_id} has no scene group")
    groups = sorted({str(g) for g in scene_groups.values()})
    if len(groups) < 2:
        raise SplitError(
            f"need at least 2 scene groups to split, got {len(groups)}"
        )
    if subset1_groups is None:
        subset1 = set(groups[: len(groups) // 2])
    else:
        subset1 = {str(g) for g in subset1_groups}
        unknown = subset1 - set(groups)
        if unknown:
            raise SplitError(f"unknown subset-1 groups: {sorted(unknown)}")
        if not subset1 or subset1 == set(groups):
            raise SplitError("both subsets must be non-empty")
    subset2 = set(groups) - subset1

    def in_subset1(r):
        return str(scene_groups[r.scene_id]) in subset1

    input_pool = Pool([r for r in records if r.domain == "x" and in_subset1(r)])
    layer_pool = {}
    for r in records:
        if r.domain != "x" and not in_subset1(r):
            layer_pool.setdefault(r.domain, Pool()).samples.append(r)
    test_pool = Pool([r for r in records if not in_subset1(r)])

    s1_ids = {r.scene_id for r in input_pool.samples}
    s2_ids = {r.scene_id for r in test_pool.samples}
    assert not (s1_ids & s2_ids), "subsets share scenes"
    for dom, pool in list(layer_pool.items()) + [("x", input_pool)]:
        if len(pool) == 0:
            raise SplitError(f"split left domain {dom!r} empty")
    return input_pool, layer_pool, test_pool


def sample_batch(pools: dict, rng_seed) -> Batch:
    """Draw one non-triplet batch: x, then one layer per domain whose scene
    differs from x's (rejection-resampled)."""
    rng = np.random.default_rng(rng_seed)
    for dom, pool in pools.items():
        if len(pool) == 0:
            raise SamplingError(f"pool {dom!r} is empty")
    xs = pools["x"].draw(rng)
    layers = {}
    scene_ids = {"x": xs.scene_id}
    for dom, pool in pools.items():
        if dom == "x":
            continue
        for attempt in range(_MAX_RESAMPLE_TRIES):
            cand = pool.draw(rng)
            if cand.scene_id != xs.scene_id:
                break
        else:
            raise SamplingError(
                f"pool {dom!r} kept colliding with scene {xs.scene_id} after "
                f"{_MAX_RESAMPLE_TRIES} tries"
            )
        layers[dom] = cand.load()
        scene_ids[dom] = cand.scene_id
    return Batch(x=xs.load(), layers=layers, scene_ids=scene_ids)


@dataclass
class AugmentConfig:
    enabled: bool = True
    target_size: int = 128
    scale_range: tuple = (0.8, 1.2)
    flip_prob: float = 0.5


def augment(img: Image, rng_seed, cfg: AugmentConfig) -> Image:
    """Random scale, crop back to the target size, random horizontal flip."""
    img = as_image(img)
    if img.range_tag != "unit":
        raise InvalidInputError("augment expects a unit-range image")
    if not cfg.enabled:
        return img
    rng = np.random.default_rng(rng_seed)
    scale = rng.uniform(*cfg.scale_range)
    h = max(1, int(round(img.height * scale)))
    w = max(1, int(round(img.width * scale)))
    data = cv2.resize(img.data, (w, h), interpolation=cv2.INTER_LINEAR)
    if data.ndim == 2:
        data = data[:, :, None]
    t = cfg.target_size
    if h < t or w < t:
        pad_h = max(0, t - h)
        pad_w = max(0, t - w)
        data = np.pad(
            data,
            ((0, pad_h), (0, pad_w), (0, 0)),
            mode="reflect",
        )
        h, w = data.shape[:2]
    top = int(rng.integers(0, h - t + 1))
    left = int(rng.integers(0, w - t + 1))
    data = data[top : top + t, left : left + t]
    if rng.uniform() < cfg.flip_prob:
        data = data[:, ::-1]
    return Image(np.clip(np.ascontiguousarray(data), 0.0, 1.0), img.range_tag)
