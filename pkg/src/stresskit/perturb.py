"""Image perturbations with graded severity schedules.

Five transforms operate on [0, 1] float buffers: gamma, contrast, brightness
and sharpness admit both positive and negative severity levels around an
identity point; gaussian blur only degrades. Every transform clamps its
output back into [0, 1] and is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidLevelError, InvalidParameterError
from .image import ImageBuffer

__all__ = [
    "PerturbationKind",
    "SeverityTable",
    "SuiteConfig",
    "PerturbationSpec",
    "adjust_brightness",
    "adjust_contrast",
    "adjust_gamma",
    "adjust_sharpness",
    "gaussian_blur",
    "luma_mean",
    "blur_radius",
    "resolve_severity",
    "admissible_levels",
    "apply",
    "build_suite",
    "DEFAULT_BIDIRECTIONAL_LEVELS",
    "DEFAULT_BLUR_LEVELS",
]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

DEFAULT_BIDIRECTIONAL_LEVELS = (-3, -2, -1, 1, 2, 3)
DEFAULT_BLUR_LEVELS = (1, 2, 3, 4, 5, 6)


class PerturbationKind(str, Enum):
    GAMMA = "gamma"
    CONTRAST = "contrast"
    BRIGHTNESS = "brightness"
    SHARPNESS = "sharpness"
    BLUR = "blur"

    @property
    def bidirectional(self) -> bool:
        return self is not PerturbationKind.BLUR


# Suite order: the four bidirectional kinds first, blur last.
KIND_ORDER = (
    PerturbationKind.GAMMA,
    PerturbationKind.CONTRAST,
    PerturbationKind.BRIGHTNESS,
    PerturbationKind.SHARPNESS,
    PerturbationKind.BLUR,
)


def _wrap(pixels: np.ndarray) -> ImageBuffer:
    out = np.clip(pixels, 0.0, 1.0).astype(np.float32, copy=False)
    out.setflags(write=False)
    return ImageBuffer(out)


def adjust_brightness(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Scale all pixels by `factor` and clamp; factor 1 is the identity."""
    if factor < 0:
        raise InvalidParameterError(f"brightness factor must be >= 0, got {factor}")
    return _wrap(img.pixels * np.float32(factor))


def luma_mean(img: ImageBuffer) -> float:
    """Mean luma: plain mean for grayscale, 0.299/0.587/0.114-weighted for RGB."""
    p = img.pixels
    if img.channels == 1:
        return float(p.mean())
    r, g, b = p[:, :, 0], p[:, :, 1], p[:, :, 2]
    luma = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return float(luma.mean())


def adjust_contrast(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Blend each pixel with the image's luma mean; factor 1 is the identity.

    factor 0 collapses the image to its mean; factors > 1 stretch around it.
    """
    if factor < 0:
        raise InvalidParameterError(f"contrast factor must be >= 0, got {factor}")
    mean = np.float32(luma_mean(img))
    f = np.float32(factor)
    return _wrap(f * img.pixels + (np.float32(1.0) - f) * mean)


def adjust_gamma(img: ImageBuffer, gamma: float, gain: float = 1.0) -> ImageBuffer:
    """Apply `gain * p**gamma` per pixel and clamp; gamma 1, gain 1 is the identity."""
    if gamma <= 0:
        raise InvalidParameterError(f"gamma must be > 0, got {gamma}")
    out = np.float32(gain) * np.power(img.pixels, np.float32(gamma))
    return _wrap(out)


_SHARP_CENTER = np.float32(5.0 / 13.0)
_SHARP_RING = np.float32(1.0 / 13.0)


def _smooth_interior(p: np.ndarray) -> np.ndarray:
    """3x3 weighted smoothing of interior pixels; border rows/columns copied."""
    acc = _SHARP_RING * (
        p[:-2, :-2] + p[:-2, 1:-1] + p[:-2, 2:]
        + p[1:-1, :-2] + p[1:-1, 2:]
        + p[2:, :-2] + p[2:, 1:-1] + p[2:, 2:]
    ) + _SHARP_CENTER * p[1:-1, 1:-1]
    smooth = p.copy()
    smooth[1:-1, 1:-1] = acc
    return smooth


def adjust_sharpness(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Blend between a smoothed copy (factor 0) and the input (factor 1).

    Factors above 1 oversharpen. Smoothing touches interior pixels only;
    borders pass through, and images with any side below 3 pixels are
    returned unchanged.
    """
    if factor < 0:
        raise InvalidParameterError(f"sharpness factor must be >= 0, got {factor}")
    if img.height < 3 or img.width < 3:
        return img
    p = img.pixels
    smooth = _smooth_interior(p)
    f = np.float32(factor)
    return _wrap(f * p + (np.float32(1.0) - f) * smooth)


def blur_radius(sigma: float) -> int:
    """Kernel radius covering three standard deviations."""
    return int(math.ceil(3.0 * sigma))


def _gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float32)
    k = np.exp(-0.5 * np.square(x / np.float32(sigma)))
    return k / k.sum()


def gaussian_blur(img: ImageBuffer, sigma: float) -> ImageBuffer:
    """Separable gaussian blur, radius ceil(3*sigma), reflect padding.

    Reflection does not repeat the edge pixel. Every output value is a
    convex combination of inputs, so the [min, max] range can only shrink.
    """
    if sigma <= 0:
        raise InvalidParameterError(f"blur sigma must be > 0, got {sigma}")
    r = blur_radius(sigma)
    kernel = _gaussian_kernel1d(sigma, r)
    padded = np.pad(img.pixels, ((r, r), (r, r), (0, 0)), mode="reflect")
    horiz = np.tensordot(sliding_window_view(padded, kernel.size, axis=1), kernel, axes=([-1], [0]))
    both = np.tensordot(sliding_window_view(horiz, kernel.size, axis=0), kernel, axes=([-1], [0]))
    return _wrap(both.astype(np.float32))


@dataclass(frozen=True)
class SeverityTable:
    """Per-kind parameter schedule: geometric base**level for bidirectional
    kinds, linear step*level for blur sigma."""

    gamma_base: float = 1.5
    contrast_base: float = 1.4
    brightness_base: float = 1.3
    sharpness_base: float = 2.0
    blur_sigma_step: float = 0.6

    def __post_init__(self):
        for name in ("gamma_base", "contrast_base", "brightness_base", "sharpness_base"):
            v = getattr(self, name)
            if not v > 1.0:
                raise InvalidParameterError(f"{name} must be > 1, got {v}")
        if not self.blur_sigma_step > 0.0:
            raise InvalidParameterError(
                f"blur_sigma_step must be > 0, got {self.blur_sigma_step}"
            )

    def base_for(self, kind: PerturbationKind) -> float:
        return {
            PerturbationKind.GAMMA: self.gamma_base,
            PerturbationKind.CONTRAST: self.contrast_base,
            PerturbationKind.BRIGHTNESS: self.brightness_base,
            PerturbationKind.SHARPNESS: self.sharpness_base,
        }[kind]


def admissible_levels(kind: PerturbationKind) -> tuple[int, ...]:
    return DEFAULT_BIDIRECTIONAL_LEVELS if kind.bidirectional else DEFAULT_BLUR_LEVELS


def resolve_severity(kind: PerturbationKind, level: int, table: SeverityTable) -> float:
    """Map a signed severity level to the concrete transform parameter."""
    if level == 0:
        raise InvalidLevelError(f"level 0 is the identity and is excluded ({kind.value})")
    if kind.bidirectional:
        if not -3 <= level <= 3:
            raise InvalidLevelError(f"{kind.value} level must be in -3..3, got {level}")
        return table.base_for(kind) ** level
    if not 1 <= level <= 6:
        raise InvalidLevelError(f"blur level must be in 1..6, got {level}")
    return table.blur_sigma_step * level


@dataclass(frozen=True)
class PerturbationSpec:
    """One resolved (kind, level, parameter) triple."""

    kind: PerturbationKind
    level: int
    parameter: float

    def __post_init__(self):
        if self.parameter <= 0:
            raise InvalidParameterError(
                f"{self.kind.value} parameter must be > 0, got {self.parameter}"
            )

    @property
    def tag(self) -> str:
        """Stable identifier used in file names and result rows, e.g. 'gamma+2'."""
        return f"{self.kind.value}{self.level:+d}"


@dataclass(frozen=True)
class SuiteConfig:
    """Severity table plus the level set evaluated per kind."""

    table: SeverityTable = field(default_factory=SeverityTable)
    levels: dict[PerturbationKind, tuple[int, ...]] = field(default_factory=dict)

    def levels_for(self, kind: PerturbationKind) -> tuple[int, ...]:
        chosen = self.levels.get(kind, admissible_levels(kind))
        return tuple(sorted(chosen))


def build_suite(config: SuiteConfig | None = None) -> list[PerturbationSpec]:
    """Materialize the ordered perturbation suite (default: 30 specs).

    Kinds run gamma, contrast, brightness, sharpness, blur; levels ascending
    within each kind. Level validation happens here so a malformed config
    fails before any images are touched.
    """
    config = config or SuiteConfig()
    specs: list[PerturbationSpec] = []
    for kind in KIND_ORDER:
        for level in config.levels_for(kind):
            param = resolve_severity(kind, level, config.table)
            specs.append(PerturbationSpec(kind=kind, level=level, parameter=param))
    return specs


def apply(spec: PerturbationSpec, img: ImageBuffer) -> ImageBuffer:
    """Dispatch a spec to its transform; deterministic, no shared state."""
    k = spec.kind
    if k is PerturbationKind.GAMMA:
        return adjust_gamma(img, spec.parameter)
    if k is PerturbationKind.CONTRAST:
        return adjust_contrast(img, spec.parameter)
    if k is PerturbationKind.BRIGHTNESS:
        return adjust_brightness(img, spec.parameter)
    if k is PerturbationKind.SHARPNESS:
        return adjust_sharpness(img, spec.parameter)
    return gaussian_blur(img, spec.parameter)
