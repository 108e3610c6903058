"""Scene descriptions, rasterization to contrast maps and random scene sampling.

Grid convention used throughout the package: an ``M x M`` contrast map is
indexed ``[row, col]`` with row 0 at the top of the DOI (largest ``y``) and
col 0 at the left (smallest ``x``).  Flattening is row-major, so cell ``n``
sits at ``row = n // M, col = n % M``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8
SUBSAMPLES = 4


@dataclass(frozen=True)
class SceneConfig:
    """Measurement geometry and discretization of the imaging system."""

    doi_side_m: float = 0.2
    antenna_radius_m: float = 1.67
    freq_hz: float = 3.0e9
    n_tx: int = 16
    n_rx: int = 32
    forward_grid: int = 100
    inversion_grid: int = 64
    lossy: bool = False

    def __post_init__(self):
        if self.doi_side_m <= 0:
            raise ValueError("doi_side_m must be positive")
        if self.antenna_radius_m <= self.doi_side_m * math.sqrt(2) / 2:
            raise ValueError(
                f"antenna radius {self.antenna_radius_m} m does not clear the DOI "
                f"(half-diagonal {self.doi_side_m * math.sqrt(2) / 2:.4f} m)"
            )
        if self.freq_hz <= 0:
            raise ValueError("freq_hz must be positive")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("n_tx and n_rx must be at least 1")
        if self.forward_grid < 2 or self.inversion_grid < 2:
            raise ValueError("grids need at least 2 cells per side")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi * self.freq_hz / SPEED_OF_LIGHT

    @property
    def inverse_crime(self) -> bool:
        """True when forward and inversion grids coincide."""
        return self.forward_grid == self.inversion_grid

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> SceneConfig:
        return cls(**data)


def cell_centers(doi_side_m: float, grid: int) -> np.ndarray:
    """Cell-center coordinates, shape ``(grid**2, 2)`` in row-major order."""
    h = doi_side_m / grid
    offsets = (np.arange(grid) + 0.5) * h - doi_side_m / 2
    xs = np.tile(offsets, grid)
    ys = np.repeat(offsets[::-1], grid)
    return np.column_stack([xs, ys])


def antenna_positions(radius_m: float, count: int) -> np.ndarray:
    """``count`` antennas equally spaced on a circle, the first at angle 0."""
    angles = 2.0 * math.pi * np.arange(count) / count
    return radius_m * np.column_stack([np.cos(angles), np.sin(angles)])


@dataclass(frozen=True, eq=False)
class ShapeSpec:
    """One scatterer: a disk, an annulus, or a raster covering the whole DOI.

    ``raster`` holds intensities in [0, 1]; its contrast is
    ``intensity * contrast`` with nearest-neighbor lookup at cell centers.
    """

    kind: str
    contrast: complex
    center_m: tuple[float, float] = (0.0, 0.0)
    radius_m: float | None = None
    inner_radius_m: float | None = None
    outer_radius_m: float | None = None
    raster: np.ndarray | None = field(default=None, repr=False)
    source: str | None = None

    def __post_init__(self):
        c = complex(self.contrast)
        object.__setattr__(self, "contrast", c)
        object.__setattr__(self, "center_m", tuple(float(v) for v in self.center_m))
        if c.real < 0 or c.imag < 0:
            raise ValueError(f"contrast {c} must have nonnegative real and imaginary parts")
        if self.kind == "disk":
            if self.radius_m is None or self.radius_m <= 0:
                raise ValueError("disk needs a positive radius_m")
        elif self.kind == "annulus":
            if self.inner_radius_m is None or self.outer_radius_m is None:
                raise ValueError("annulus needs inner_radius_m and outer_radius_m")
            if not 0 < self.inner_radius_m < self.outer_radius_m:
                raise ValueError("annulus needs 0 < inner_radius_m < outer_radius_m")
        elif self.kind == "raster":
            img = np.asarray(self.raster, dtype=float)
            if img.ndim != 2 or img.size == 0:
                raise ValueError("raster must be a nonempty 2-D image")
            if img.min() < 0 or img.max() > 1:
                raise ValueError("raster intensities must lie in [0, 1]")
            object.__setattr__(self, "raster", img)
        else:
            raise ValueError(f"unknown shape kind {self.kind!r}")

    def covers(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        dx = x - self.center_m[0]
        dy = y - self.center_m[1]
        r2 = dx * dx + dy * dy
        if self.kind == "disk":
            return r2 <= self.radius_m**2
        if self.kind == "annulus":
            return (r2 >= self.inner_radius_m**2) & (r2 <= self.outer_radius_m**2)
        raise TypeError("raster shapes are sampled with raster_values()")

    def raster_values(self, doi_side_m: float, grid: int) -> np.ndarray:
        """Nearest-neighbor resampling of the raster onto the cell centers."""
        h_img, w_img = self.raster.shape
        centers = (np.arange(grid) + 0.5) / grid
        rows = np.minimum((centers * h_img).astype(int), h_img - 1)
        cols = np.minimum((centers * w_img).astype(int), w_img - 1)
        return self.raster[np.ix_(rows, cols)] * self.contrast

    def to_json(self) -> dict:
        out = {"kind": self.kind, "contrast": [self.contrast.real, self.contrast.imag]}
        if self.kind == "disk":
            out.update(center_m=list(self.center_m), radius_m=self.radius_m)
        elif self.kind == "annulus":
            out.update(
                center_m=list(self.center_m),
                inner_radius_m=self.inner_radius_m,
                outer_radius_m=self.outer_radius_m,
            )
        else:
            out.update(path=self.source, max_contrast=out.pop("contrast"))
        return out


def disk(center_m, radius_m, contrast) -> ShapeSpec:
    return ShapeSpec("disk", contrast, center_m=center_m, radius_m=radius_m)


def annulus(center_m, inner_radius_m, outer_radius_m, contrast) -> ShapeSpec:
    return ShapeSpec(
        "annulus",
        contrast,
        center_m=center_m,
        inner_radius_m=inner_radius_m,
        outer_radius_m=outer_radius_m,
    )


def rasterize(shapes, config: SceneConfig, grid: int) -> np.ndarray:
    """Rasterize ``shapes`` to a complex ``(grid, grid)`` contrast map.

    Each cell is sampled on a 4x4 sub-grid; a sub-sample takes the contrast
    of the last shape covering it, and the cell value is the sub-sample mean.
    Raster shapes cover the cells where their intensity is nonzero.

    Raises
    ------
    ValueError
        If ``grid < 2`` or a parametric shape is centered outside the DOI.
    """
    if grid < 2:
        raise ValueError("grid must be at least 2")
    side = config.doi_side_m
    half = side / 2
    n_sub = grid * SUBSAMPLES
    offsets = (np.arange(n_sub) + 0.5) * (side / n_sub) - half
    x = offsets[None, :]
    y = offsets[::-1, None]
    values = np.zeros((n_sub, n_sub), dtype=complex)
    for shape in shapes:
        if shape.kind == "raster":
            cell = shape.raster_values(side, grid)
            sub = np.repeat(np.repeat(cell, SUBSAMPLES, axis=0), SUBSAMPLES, axis=1)
            mask = sub != 0
            values[mask] = sub[mask]
            continue
        cx, cy = shape.center_m
        if abs(cx) > half or abs(cy) > half:
            raise ValueError(
                f"{shape.kind} centered at ({cx}, {cy}) m lies outside the "
                f"{side} m x {side} m DOI"
            )
        values[np.broadcast_to(shape.covers(x, y), values.shape)] = shape.contrast
    return values.reshape(grid, SUBSAMPLES, grid, SUBSAMPLES).mean(axis=(1, 3))


def austria_profile(contrast=1.0, config: SceneConfig | None = None) -> list[ShapeSpec]:
    """Two disks above an annulus, scaled to a 0.2 m DOI.

    The canonical profile lives in a 2 m domain; lengths here are divided
    by 10 (and rescaled again if ``config`` uses another DOI side).
    """
    scale = 1.0 if config is None else config.doi_side_m / 0.2
    r_disk = 0.02 * scale
    return [
        disk((-0.03 * scale, 0.06 * scale), r_disk, contrast),
        disk((0.03 * scale, 0.06 * scale), r_disk, contrast),
        annulus((0.0, -0.02 * scale), 0.03 * scale, 0.06 * scale, contrast),
    ]


def sample_cylinder_scene(
    rng_seed: int, lossy: bool = False, config: SceneConfig | None = None
) -> list[ShapeSpec]:
    """1 to 3 random disks fully inside the DOI, deterministic per seed.

    Radii are uniform in [0.01, 0.05] m, real contrast uniform in
    [0.2, 2.2] and, for lossy scenes, imaginary contrast uniform in [0, 1].
    """
    half = (config.doi_side_m if config else 0.2) / 2
    rng = np.random.default_rng(rng_seed)
    shapes = []
    for _ in range(int(rng.integers(1, 4))):
        r = rng.uniform(0.01, 0.05)
        cx, cy = rng.uniform(-half + r, half - r, size=2)
        re = rng.uniform(0.2, 2.2)
        im = rng.uniform(0.0, 1.0) if lossy else 0.0
        shapes.append(disk((cx, cy), r, complex(re, im)))
    return shapes


def import_raster(image, max_contrast=1.0, source: str | None = None) -> ShapeSpec:
    """Wrap a grayscale image as a raster shape spanning the DOI.

    Integer images are scaled by their dtype maximum; float images must
    already be in [0, 1].
    """
    img = np.asarray(image)
    if img.size == 0:
        raise ValueError("raster image is empty")
    if np.issubdtype(img.dtype, np.integer):
        img = img / np.iinfo(img.dtype).max
    return ShapeSpec("raster", max_contrast, raster=img.astype(float), source=source)


def scene_to_json(shapes) -> dict:
    return {"shapes": [s.to_json() for s in shapes]}


def save_scene(path, shapes) -> None:
    Path(path).write_text(json.dumps(scene_to_json(shapes), indent=2) + "\n")


def load_scene(path) -> list[ShapeSpec]:
    """Read a scene JSON file; raster paths resolve relative to the file."""
    from .io import read_pgm

    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("shapes"), list):
        raise ValueError(f"{path}: expected an object with a 'shapes' list")
    shapes = []
    for i, item in enumerate(doc["shapes"]):
        try:
            kind = item["kind"]
            if kind == "raster":
                img_path = path.parent / item["path"]
                shapes.append(
                    import_raster(read_pgm(img_path), complex(*_pair(item["max_contrast"])),
                                  source=item["path"])
                )
                continue
            contrast = complex(*_pair(item["contrast"]))
            if kind == "disk":
                shapes.append(disk(item["center_m"], item["radius_m"], contrast))
            elif kind == "annulus":
                shapes.append(
                    annulus(item["center_m"], item["inner_radius_m"], item["outer_radius_m"], contrast)
                )
            else:
                raise ValueError(f"unknown shape kind {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: shape {i}: {exc}") from exc
    return shapes


def _pair(value):
    if isinstance(value, (int, float)):
        return (float(value), 0.0)
    re, im = value
    return (float(re), float(im))
