"""Procedural multi-domain image dataset: classes are shapes, domains are
rendering styles.

Every sample is a 3x32x32 float64 image in [0, 1]. Shape geometry (class)
is drawn from the same jitter distribution in every domain; only the
rendering style and palette differ between domains, so the class-defining
signal is domain-invariant while the style signal is strongly
domain-specific. An optional label-keyed color patch provides a
correlation-shift regime: its color agrees with the class label at a
per-domain rate.

Generation is a pure function of the config: each sample's RNG is seeded
by (seed, domain, label, index), so outputs are bit-identical across
calls and independent of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConfigError(ValueError):
    """Invalid dataset or run configuration."""


STYLES = ("solid-fill", "outline-only", "stripes", "speckle-noise")
SHAPES = ("disk", "square", "triangle", "cross", "diamond", "ring")

IMAGE_SIZE = 32
_SUPER = 4  # anti-aliasing supersampling factor

# (background, foreground) base colors per style slot. Hue families are far
# apart so domains separate on raw mean color, but every style keeps a dark
# shape on a light background: the luminance silhouette is the
# domain-invariant cue that can transfer to a held-out style.
_PALETTES = (
    ((0.92, 0.88, 0.55), (0.45, 0.08, 0.08)),  # solid: pale yellow bg, dark red shape
    ((0.86, 0.80, 0.92), (0.22, 0.06, 0.30)),  # outline: lavender bg, dark purple stroke
    ((0.62, 0.76, 0.95), (0.08, 0.14, 0.42)),  # stripes: light blue field, navy shape
    ((0.78, 0.90, 0.72), (0.10, 0.34, 0.12)),  # speckle: pale green bg, dark green shape
)
_STRIPE_ALT = (0.80, 0.89, 0.99)  # second stripe color
_SPECKLE_AMP = 0.13

# saturated patch colors for the spurious attribute, shared by all domains
SPURIOUS_COLORS = (
    (1.0, 0.1, 0.1),
    (0.1, 1.0, 0.1),
    (0.1, 0.3, 1.0),
    (1.0, 0.9, 0.1),
    (1.0, 0.1, 1.0),
    (0.1, 1.0, 1.0),
)
_PATCH = (slice(1, 6), slice(1, 6))  # rows, cols of the 5x5 patch


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    style: str
    palette: tuple[tuple[float, float, float], ...]
    spurious_correlation: float | None


@dataclass(frozen=True)
class DatasetConfig:
    classes: int = 4
    domains: int = 4
    per_cell: int = 25
    seed: int = 7
    # label-agreement rate of the color patch; None disables the patch.
    # The last domain uses `spurious_last` (default 1 - spurious) so that
    # holding it out produces a correlation shift.
    spurious: float | None = None
    spurious_last: float | None = None

    def validate(self) -> None:
        if self.classes < 2 or self.classes > len(SHAPES):
            raise ConfigError(f"classes must be in [2, {len(SHAPES)}], got {self.classes}")
        if self.domains < 3 or self.domains > len(STYLES):
            raise ConfigError(
                f"domains must be in [3, {len(STYLES)}] (one distinct style each), "
                f"got {self.domains}"
            )
        if self.per_cell < 8:
            raise ConfigError(f"per_cell must be >= 8, got {self.per_cell}")
        for rho in (self.spurious, self.spurious_last):
            if rho is not None and not 0.0 <= rho <= 1.0:
                raise ConfigError(f"spurious correlation must be in [0, 1], got {rho}")
        if self.classes > len(SPURIOUS_COLORS) and self.spurious is not None:
            raise ConfigError("not enough spurious patch colors for this many classes")

    def total(self) -> int:
        return self.classes * self.domains * self.per_cell


@dataclass
class Sample:
    image: np.ndarray  # (3, 32, 32) float64 in [0, 1]
    label: int
    domain: int
    index: int


def domain_specs(config: DatasetConfig) -> list[DomainSpec]:
    config.validate()
    specs = []
    for d in range(config.domains):
        if config.spurious is None:
            rho = None
        elif d == config.domains - 1:
            rho = config.spurious_last if config.spurious_last is not None else 1.0 - config.spurious
        else:
            rho = config.spurious
        specs.append(
            DomainSpec(domain_id=d, style=STYLES[d], palette=_PALETTES[d], spurious_correlation=rho)
        )
    return specs


# ----------------------------------------------------------------------
# shape indicator functions on supersampled pixel coordinates

_grid = (np.arange(IMAGE_SIZE * _SUPER) + 0.5) / _SUPER
_YS, _XS = np.meshgrid(_grid, _grid, indexing="ij")


def _disk(cx, cy, r):
    return (_XS - cx) ** 2 + (_YS - cy) ** 2 <= r * r


def _square(cx, cy, r):
    return np.maximum(np.abs(_XS - cx), np.abs(_YS - cy)) <= 0.9 * r


def _triangle(cx, cy, r):
    # upward triangle via three half-plane tests
    ax, ay = cx, cy - r
    bx, by = cx - 0.95 * r, cy + 0.75 * r
    qx, qy = cx + 0.95 * r, cy + 0.75 * r

    def side(px, py, ux, uy, vx, vy):
        return (vx - ux) * (py - uy) - (vy - uy) * (px - ux)

    s1 = side(_XS, _YS, ax, ay, bx, by)
    s2 = side(_XS, _YS, bx, by, qx, qy)
    s3 = side(_XS, _YS, qx, qy, ax, ay)
    return (s1 >= 0) & (s2 >= 0) & (s3 >= 0)


def _cross(cx, cy, r):
    dx, dy = np.abs(_XS - cx), np.abs(_YS - cy)
    return ((dx <= 0.33 * r) & (dy <= r)) | ((dy <= 0.33 * r) & (dx <= r))


def _diamond(cx, cy, r):
    return np.abs(_XS - cx) + np.abs(_YS - cy) <= 1.2 * r


def _ring(cx, cy, r):
    d2 = (_XS - cx) ** 2 + (_YS - cy) ** 2
    return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)


_SHAPE_FNS: dict[str, Callable] = {
    "disk": _disk,
    "square": _square,
    "triangle": _triangle,
    "cross": _cross,
    "diamond": _diamond,
    "ring": _ring,
}


def _coverage(shape: str, cx: float, cy: float, r: float) -> np.ndarray:
    ind = _SHAPE_FNS[shape](cx, cy, r).astype(np.float64)
    return ind.reshape(IMAGE_SIZE, _SUPER, IMAGE_SIZE, _SUPER).mean(axis=(1, 3))


def _flat(color) -> np.ndarray:
    return np.asarray(color, dtype=np.float64).reshape(3, 1, 1) * np.ones(
        (3, IMAGE_SIZE, IMAGE_SIZE)
    )


def _render(spec: DomainSpec, label: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    # geometry jitter: same distribution in every domain
    cx = 16.0 + rng.uniform(-3.2, 3.2)
    cy = 16.0 + rng.uniform(-3.2, 3.2)
    r = 9.0 * (1.0 + rng.uniform(-0.2, 0.2))
    shape = SHAPES[label]
    bg_color, fg_color = spec.palette

    if spec.style == "solid-fill":
        cov = _coverage(shape, cx, cy, r)
        img = _flat(bg_color) * (1.0 - cov) + _flat(fg_color) * cov
    elif spec.style == "outline-only":
        band = _coverage(shape, cx, cy, r) - _coverage(shape, cx, cy, 0.68 * r)
        band = np.clip(band, 0.0, 1.0)
        img = _flat(bg_color) * (1.0 - band) + _flat(fg_color) * band
    elif spec.style == "stripes":
        cov = _coverage(shape, cx, cy, r)
        phase = int(rng.integers(0, 8))
        ii, jj = np.meshgrid(np.arange(IMAGE_SIZE), np.arange(IMAGE_SIZE), indexing="ij")
        stripe = (((ii + jj + phase) // 4) % 2).astype(np.float64)
        bg = _flat(bg_color) * (1.0 - stripe) + _flat(_STRIPE_ALT) * stripe
        img = bg * (1.0 - cov) + _flat(fg_color) * cov
    elif spec.style == "speckle-noise":
        cov = _coverage(shape, cx, cy, r)
        noise = rng.uniform(-_SPECKLE_AMP, _SPECKLE_AMP, (IMAGE_SIZE, IMAGE_SIZE))
        img = _flat(bg_color) * (1.0 - cov) + _flat(fg_color) * cov + noise
    else:  # pragma: no cover - style list is closed
        raise ConfigError(f"unknown style {spec.style!r}")

    if spec.spurious_correlation is not None:
        if rng.random() < spec.spurious_correlation:
            patch_idx = label
        else:
            # disagreeing patches are uniform over the other class colors
            others = [c for c in range(classes) if c != label]
            patch_idx = int(rng.choice(others))
        color = np.asarray(SPURIOUS_COLORS[patch_idx]).reshape(3, 1, 1)
        img[:, _PATCH[0], _PATCH[1]] = color

    return np.clip(img, 0.0, 1.0)


def generate(config: DatasetConfig) -> list[Sample]:
    """Deterministically render `per_cell` samples for every (class, domain)."""
    config.validate()
    specs = domain_specs(config)
    samples: list[Sample] = []
    index = 0
    for spec in specs:
        for label in range(config.classes):
            for i in range(config.per_cell):
                rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, spec.domain_id, label, i])
                )
                image = _render(spec, label, config.classes, rng)
                samples.append(Sample(image=image, label=label, domain=spec.domain_id, index=index))
                index += 1
    return samples


def spurious_index(image: np.ndarray, classes: int) -> int:
    """Recover the patch color index from a rendered image."""
    patch = image[:, _PATCH[0], _PATCH[1]].mean(axis=(1, 2))
    colors = np.asarray(SPURIOUS_COLORS[:classes])
    return int(np.argmin(((colors - patch) ** 2).sum(axis=1)))
