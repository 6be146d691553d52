"""Gaussian atom-density grids and their coordinate derivatives.

Each atom stamps a truncated Gaussian onto the voxels of its own type
channel: a Gaussian core out to the van der Waals radius r, a quadratic
tail that decays smoothly to zero at 1.5r, and zero beyond.  Both the
density and its distance derivative are continuous at the seams, which is
what makes grid-space gradients mappable back onto atom coordinates.

Grids are cell-centered: voxel i along an axis has its center at
``center - dimension/2 + (i + 0.5) * resolution``.  Value arrays are
``(channel, x, y, z)`` in C order, so the z index varies fastest, matching
the OpenDX data layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .molio import Complex

TRUNCATION_FACTOR = 1.5  # density support ends at 1.5 * vdw radius


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a cubic multi-channel density grid."""

    center: np.ndarray  # (3,) Angstroms
    dimension: float = 24.0
    resolution: float = 0.5
    channels: int = 35

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.center.shape != (3,):
            raise ValueError("center must be a 3-vector")
        if self.dimension <= 0 or self.resolution <= 0:
            raise ValueError("dimension and resolution must be positive")
        n = self.dimension / self.resolution
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("dimension must be a positive multiple of resolution")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")

    @property
    def points_per_side(self) -> int:
        return int(round(self.dimension / self.resolution))

    def axis_coords(self, axis: int) -> np.ndarray:
        """Voxel-center coordinates along one axis."""
        n = self.points_per_side
        first = self.center[axis] - self.dimension / 2.0 + 0.5 * self.resolution
        return first + self.resolution * np.arange(n)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        n = self.points_per_side
        return (self.channels, n, n, n)


@dataclass(frozen=True)
class DensityGrid:
    spec: GridSpec
    values: np.ndarray  # (channels, n, n, n) float64

    def __post_init__(self):
        if self.values.shape != self.spec.shape:
            raise ValueError(f"values shape {self.values.shape} != spec shape {self.spec.shape}")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation about the grid center followed by a translation."""

    rotation: np.ndarray  # (3,3)
    translation: np.ndarray  # (3,)
    max_translate: float = 2.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1")
        # Translation components are bounded by the configured maximum.
        if np.any(np.abs(t) > self.max_translate + 1e-12):
            raise ValueError("translation exceeds the configured maximum")

    def apply(self, points: np.ndarray, pivot: np.ndarray) -> np.ndarray:
        return (points - pivot) @ self.rotation.T + pivot + self.translation


def _check_radius(r: float):
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")


def density_gauss_branch(d, r: float):
    """Inner branch, valid for 0 <= d < r."""
    d = np.asarray(d, dtype=np.float64)
    return np.exp(-2.0 * d * d / (r * r))


def density_quad_branch(d, r: float):
    """Outer branch, valid for r <= d < 1.5r; hits zero with zero slope at 1.5r."""
    d = np.asarray(d, dtype=np.float64)
    e2 = math.e**2
    return (4.0 / (e2 * r * r)) * d * d - (12.0 / (e2 * r)) * d + 9.0 / e2


def ddist_gauss_branch(d, r: float):
    d = np.asarray(d, dtype=np.float64)
    return -4.0 * d / (r * r) * np.exp(-2.0 * d * d / (r * r))


def ddist_quad_branch(d, r: float):
    d = np.asarray(d, dtype=np.float64)
    e2 = math.e**2
    return (8.0 / (e2 * r * r)) * d - 12.0 / (e2 * r)


def atom_density(d, r: float):
    """Truncated Gaussian density at distance d from an atom of radius r."""
    _check_radius(r)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    out = np.where(
        d < r,
        density_gauss_branch(d, r),
        np.where(d < TRUNCATION_FACTOR * r, density_quad_branch(d, r), 0.0),
    )
    return float(out) if out.ndim == 0 else out


def atom_density_ddist(d, r: float):
    """Derivative of atom_density with respect to distance."""
    _check_radius(r)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    out = np.where(
        d <= r,
        ddist_gauss_branch(d, r),
        np.where(d < TRUNCATION_FACTOR * r, ddist_quad_branch(d, r), 0.0),
    )
    return float(out) if out.ndim == 0 else out


def _atom_voxel_window(spec: GridSpec, pos: np.ndarray, reach: float):
    """Per-axis index ranges of voxels whose centers lie within reach of pos."""
    n = spec.points_per_side
    ranges = []
    for axis in range(3):
        first = spec.center[axis] - spec.dimension / 2.0 + 0.5 * spec.resolution
        lo = int(math.ceil((pos[axis] - reach - first) / spec.resolution))
        hi = int(math.floor((pos[axis] + reach - first) / spec.resolution))
        lo = max(lo, 0)
        hi = min(hi, n - 1)
        if lo > hi:
            return None
        ranges.append((lo, hi))
    return ranges


def voxelize(
    cplx: Complex,
    spec: GridSpec,
    transform: RigidTransform | None = None,
) -> DensityGrid:
    """Discretize a complex onto a multi-channel density grid.

    Atoms accumulate in ascending id order so the result is bit-identical
    across runs.  Atoms (or parts of atoms) outside the box contribute
    nothing; overlapping same-type atoms sum.
    """
    if spec.channels != len(cplx.types):
        raise ValueError(
            f"grid has {spec.channels} channels but the type table has {len(cplx.types)}"
        )
    values = np.zeros(spec.shape)
    if not cplx.atoms:
        return DensityGrid(spec=spec, values=values)
    positions = cplx.positions()
    if transform is not None:
        positions = transform.apply(positions, spec.center)
    axes = [spec.axis_coords(a) for a in range(3)]
    for atom in cplx.atoms:  # ascending id by construction
        r = cplx.radius_of(atom.id)
        pos = positions[atom.id]
        window = _atom_voxel_window(spec, pos, TRUNCATION_FACTOR * r)
        if window is None:
            continue
        (x0, x1), (y0, y1), (z0, z1) = window
        dx = axes[0][x0 : x1 + 1] - pos[0]
        dy = axes[1][y0 : y1 + 1] - pos[1]
        dz = axes[2][z0 : z1 + 1] - pos[2]
        d = np.sqrt(
            dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2
        )
        values[atom.type_index, x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1] += np.where(
            d < r,
            density_gauss_branch(d, r),
            np.where(d < TRUNCATION_FACTOR * r, density_quad_branch(d, r), 0.0),
        )
    return DensityGrid(spec=spec, values=values)


def grid_gradient_to_atoms(
    grid_grad: np.ndarray,
    cplx: Complex,
    spec: GridSpec,
    include_receptor: bool = False,
) -> np.ndarray:
    """Chain a voxel-space gradient back onto atom coordinates.

    For each atom, sums ``grid_grad * d(density)/d(distance) * d(distance)/d(coord)``
    over the voxels of the atom's own channel that lie within its support.
    The voxel exactly at the atom center contributes nothing (the density
    derivative vanishes at distance zero).  Receptor atoms get zero rows
    unless include_receptor is set; positions are taken as stored, so the
    grid must have been built without a transform.
    """
    if grid_grad.shape != spec.shape:
        raise ValueError(f"gradient shape {grid_grad.shape} != grid shape {spec.shape}")
    out = np.zeros((len(cplx.atoms), 3))
    axes = [spec.axis_coords(a) for a in range(3)]
    for atom in cplx.atoms:
        if not atom.is_ligand and not include_receptor:
            continue
        r = cplx.radius_of(atom.id)
        pos = atom.position
        window = _atom_voxel_window(spec, pos, TRUNCATION_FACTOR * r)
        if window is None:
            continue
        (x0, x1), (y0, y1), (z0, z1) = window
        dx = pos[0] - axes[0][x0 : x1 + 1]
        dy = pos[1] - axes[1][y0 : y1 + 1]
        dz = pos[2] - axes[2][z0 : z1 + 1]
        d = np.sqrt(
            dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2
        )
        g = grid_grad[atom.type_index, x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1]
        dd = np.where(
            d <= r,
            ddist_gauss_branch(d, r),
            np.where(d < TRUNCATION_FACTOR * r, ddist_quad_branch(d, r), 0.0),
        )
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(d > 0, g * dd / d, 0.0)
        out[atom.id, 0] = np.sum(w * dx[:, None, None])
        out[atom.id, 1] = np.sum(w * dy[None, :, None])
        out[atom.id, 2] = np.sum(w * dz[None, None, :])
    return out


def random_transform(rng_seed: int, max_translate: float = 2.0) -> RigidTransform:
    """Uniform random rotation plus a translation uniform in a cube."""
    if max_translate < 0:
        raise ValueError("max_translate must be >= 0")
    rng = np.random.default_rng(rng_seed)
    # Uniform unit quaternion -> uniform rotation.
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rotation = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    translation = rng.uniform(-max_translate, max_translate, size=3) if max_translate > 0 else np.zeros(3)
    return RigidTransform(rotation=rotation, translation=translation, max_translate=max_translate)


def write_dx(path: str, values: np.ndarray, origin: np.ndarray, spacing: float, comments: list[str] | None = None):
    """Write one scalar 3-D field in OpenDX format (z index varies fastest)."""
    if values.ndim != 3:
        raise ValueError("dx export needs a 3-D array")
    nx, ny, nz = values.shape
    lines = []
    for c in (comments or []):
        lines.append(f"# {c}\n")
    lines.append(f"object 1 class gridpositions counts {nx} {ny} {nz}\n")
    lines.append("origin {:.5f} {:.5f} {:.5f}\n".format(*origin))
    lines.append(f"delta {spacing:.5f} 0 0\n")
    lines.append(f"delta 0 {spacing:.5f} 0\n")
    lines.append(f"delta 0 0 {spacing:.5f}\n")
    lines.append(f"object 2 class gridconnections counts {nx} {ny} {nz}\n")
    lines.append(f"object 3 class array type double rank 0 items [ {nx * ny * nz} ] data follows\n")
    flat = values.reshape(-1)
    row = []
    for i, v in enumerate(flat):
        row.append(f"{v:.10g}")
        if i % 3 == 2:
            lines.append(" ".join(row) + "\n")
            row = []
    if row:
        lines.append(" ".join(row) + "\n")
    with open(path, "w") as fh:
        fh.write("".join(lines))


def read_dx(path: str) -> tuple[np.ndarray, np.ndarray, float]:
    """Read a grid written by write_dx; returns (values, origin, spacing)."""
    counts = None
    origin = None
    deltas = []
    data: list[float] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("object 1"):
                counts = tuple(int(t) for t in line.split()[-3:])
            elif line.startswith("origin"):
                origin = np.array([float(t) for t in line.split()[1:4]])
            elif line.startswith("delta"):
                deltas.append([float(t) for t in line.split()[1:4]])
            elif line.startswith("object"):
                continue
            else:
                data.extend(float(t) for t in line.split())
    if counts is None or origin is None or len(deltas) != 3:
        raise ValueError(f"{path}: not a recognizable dx file")
    spacing = deltas[0][0]
    values = np.array(data).reshape(counts)
    return values, origin, spacing


def export_grid_dx(
    grid: DensityGrid,
    path: str,
    channel: int | None = None,
    comments: list[str] | None = None,
):
    """Export one channel (or the channel sum when channel is None) as OpenDX."""
    field = grid.values.sum(axis=0) if channel is None else grid.values[channel]
    origin = np.array([grid.spec.axis_coords(a)[0] for a in range(3)])
    write_dx(path, field, origin, grid.spec.resolution, comments=comments)
