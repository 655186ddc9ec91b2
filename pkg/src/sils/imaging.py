"""Images, layer sets, and the pluggable compositing operators behind x = y (+) z.

All images are H x W x C float arrays.  A range tag says how to interpret
the values:

  - "unit":   intensities in [0, 1]
  - "log":    log intensities in [log(eps), 0] (intrinsic decomposition)
  - "linear": unbounded non-negative intensities (pre-clip composite results)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import ConfigError, InvalidInputError

UNIT = "unit"
LOG = "log"
LINEAR = "linear"
RANGE_TAGS = (UNIT, LOG, LINEAR)

ADDITIVE_CLIPPED = "additive-clipped"
ADDITIVE_UNCLIPPED = "additive-unclipped"
LOG_ADDITIVE = "log-additive"
COMPOSITE_KINDS = (ADDITIVE_CLIPPED, ADDITIVE_UNCLIPPED, LOG_ADDITIVE)

DEFAULT_LOG_EPSILON = 1e-4


@dataclass
class Image:
    """One image: H x W x C finite float data plus a value-range tag."""

    data: np.ndarray
    range_tag: str = UNIT

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise InvalidInputError(
                f"image must be HxWxC with 1 or 3 channels, got shape {arr.shape}"
            )
        if self.range_tag not in RANGE_TAGS:
            raise InvalidInputError(f"unknown range_tag {self.range_tag!r}")
        if not np.isfinite(arr).all():
            raise InvalidInputError("image contains non-finite values")
        if self.range_tag == UNIT and (arr.min() < 0.0 or arr.max() > 1.0):
            raise InvalidInputError(
                f"unit-range image out of [0,1]: min={arr.min()}, max={arr.max()}"
            )
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


def as_image(obj, range_tag: str = UNIT) -> Image:
    """Coerce an ndarray (or Image) into an Image."""
    if isinstance(obj, Image):
        return obj
    return Image(np.asarray(obj), range_tag)


@dataclass
class CompositeOp:
    kind: str = ADDITIVE_CLIPPED

    def __post_init__(self):
        if self.kind not in COMPOSITE_KINDS:
            raise ConfigError(f"unknown composite kind {self.kind!r}")


@dataclass
class LayerSet:
    layers: list = field(default_factory=list)
    composite_op: CompositeOp = field(default_factory=CompositeOp)

    def __post_init__(self):
        if len(self.layers) < 2:
            raise InvalidInputError("a LayerSet needs at least 2 layers")
        self.layers = [as_image(l) for l in self.layers]
        first = self.layers[0]
        for l in self.layers[1:]:
            if l.shape != first.shape:
                raise InvalidInputError(
                    f"layer shape mismatch: {l.shape} vs {first.shape}"
                )
            if l.range_tag != first.range_tag:
                raise InvalidInputError(
                    f"layer range_tag mismatch: {l.range_tag} vs {first.range_tag}"
                )
        if self.composite_op.kind == LOG_ADDITIVE and first.range_tag != LOG:
            raise InvalidInputError(
                "log-additive compositing requires log-domain layers"
            )


def compose(layers: LayerSet) -> Image:
    """Blend layers into one image: elementwise sum, with the clipped variant
    clamping to [0,1]."""
    kind = layers.composite_op.kind
    total = np.zeros_like(layers.layers[0].data)
    for l in layers.layers:
        total = total + l.data
    if kind == ADDITIVE_CLIPPED:
        return Image(np.clip(total, 0.0, 1.0), UNIT)
    if kind == ADDITIVE_UNCLIPPED:
        return Image(total, LINEAR)
    return Image(total, LOG)


def to_log_domain(img: Image, epsilon: float = DEFAULT_LOG_EPSILON) -> Image:
    """Map a unit-range image to log intensities, flooring at epsilon."""
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    img = as_image(img)
    if img.range_tag != UNIT:
        raise InvalidInputError(f"expected a unit-range image, got {img.range_tag}")
    return Image(np.log(np.maximum(img.data, epsilon)), LOG)


def from_log_domain(img: Image) -> Image:
    """Invert to_log_domain; output is clipped back to [0,1]."""
    img = as_image(img, LOG)
    if img.range_tag != LOG:
        raise InvalidInputError(f"expected a log-domain image, got {img.range_tag}")
    return Image(np.clip(np.exp(img.data), 0.0, 1.0), UNIT)


def quantize(img: Image, bit_depth: int = 8) -> np.ndarray:
    """Quantize a unit-range image onto the integer grid of a PNG bit depth."""
    if bit_depth not in (8, 16):
        raise ConfigError(f"bit_depth must be 8 or 16, got {bit_depth}")
    img = as_image(img)
    if img.range_tag != UNIT:
        raise InvalidInputError("only unit-range images can be quantized")
    maxv = (1 << bit_depth) - 1
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return np.rint(img.data * maxv).astype(dtype)


def save_png(path, img: Image, bit_depth: int = 8) -> None:
    """Write a unit-range image as an 8- or 16-bit PNG."""
    raw = quantize(img, bit_depth)
    if raw.shape[2] == 1:
        raw = raw[:, :, 0]
    else:
        raw = cv2.cvtColor(raw, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), raw):
        raise IOError(f"failed to write PNG: {path}")


def load_png(path) -> Image:
    """Read a PNG back into a unit-range image."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"failed to read PNG: {path}")
    maxv = 65535.0 if raw.dtype == np.uint16 else 255.0
    if raw.ndim == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return Image(raw.astype(np.float64) / maxv, UNIT)
