"""Periodic unit cell, perforated domain, and facet bookkeeping.

The solid obstacle inside the unit cell Y = (0,1)^n is represented by a
staircase mask: a cell of the uniform grid is solid iff its center lies
inside the inclusion.  The porous domain over Omega = (0,1)^n is the
m x ... x m tiling of that mask with period eps = 1/m, so every eps-cell
carries an identical copy of the pattern and facet areas are exact
multiples of h^(n-1).

Facets fall into four classes: interior fluid-fluid faces (where fluxes
live), fluid-solid faces (the interior hole boundary), solid-solid faces
(ignored), and outer-boundary faces adjacent to fluid cells.  Because the
inclusion must keep a positive margin to the cell boundary, the outer
boundary of the domain is always adjacent to fluid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.csgraph import connected_components

from .errors import GeometryError

_KINDS = ("none", "disk", "square", "super_ellipse")


@dataclass(frozen=True)
class InclusionShape:
    """Solid inclusion Y^s in cell coordinates.

    kind:
        "none"          empty inclusion, porosity 1
        "disk"          ball of ``radius`` around ``center``
        "square"        axis-aligned cube of half width ``half_width``
        "super_ellipse" sum((|x_i - c_i| / a_i)^q) <= 1 with exponent q
    """

    kind: str
    center: tuple = (0.5, 0.5)
    radius: float = 0.25
    half_width: float = 0.25
    semi_axes: tuple = (0.25, 0.25)
    exponent: float = 4.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise GeometryError(f"unknown inclusion kind {self.kind!r}; expected one of {_KINDS}")

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of which points (shape (k, n)) lie inside Y^s."""
        if self.kind == "none":
            return np.zeros(points.shape[0], dtype=bool)
        center = np.asarray(self.center, dtype=float)
        delta = np.abs(points - center[None, :])
        if self.kind == "disk":
            return np.sum(delta ** 2, axis=1) < self.radius ** 2
        if self.kind == "square":
            return np.max(delta, axis=1) < self.half_width
        axes = np.asarray(self.semi_axes, dtype=float)
        return np.sum((delta / axes[None, :]) ** self.exponent, axis=1) < 1.0

    def margin(self, dim: int) -> float:
        """Distance from the inclusion's bounding box to the cell boundary."""
        if self.kind == "none":
            return 0.5
        center = np.asarray(self.center, dtype=float)
        if center.shape != (dim,):
            raise GeometryError(f"inclusion center has {center.shape[0]} coordinates, grid has {dim}")
        if self.kind == "disk":
            extent = np.full(dim, self.radius)
        elif self.kind == "square":
            extent = np.full(dim, self.half_width)
        else:
            axes = np.asarray(self.semi_axes, dtype=float)
            if axes.shape != (dim,):
                raise GeometryError("super_ellipse needs one semi-axis per dimension")
            extent = axes
        if np.any(extent <= 0):
            raise GeometryError("inclusion extent must be positive")
        lo = center - extent
        hi = center + extent
        return float(min(np.min(lo), np.min(1.0 - hi)))


@dataclass
class CellGeometry:
    """Staircase discretization of the unit cell with periodic face lists."""

    shape: InclusionShape
    resolution: int
    dim: int
    fluid_mask: np.ndarray
    porosity: float
    n_fluid: int
    fluid_id: np.ndarray          # full-grid array, -1 on solid cells
    centers: np.ndarray           # (n_fluid, dim) cell centers in Y
    face_lo: np.ndarray           # periodic fluid-fluid faces, fluid ids
    face_hi: np.ndarray
    face_axis: np.ndarray
    gamma_cell: np.ndarray        # fluid id adjacent to each fluid-solid facet
    gamma_axis: np.ndarray
    gamma_sign: np.ndarray        # +1 if the solid neighbor sits on the high side
    gamma_center: np.ndarray      # (k, dim) facet midpoints in Y

    @property
    def h(self) -> float:
        return 1.0 / self.resolution

    @property
    def facet_area(self) -> float:
        return self.h ** (self.dim - 1)

    @property
    def gamma_area_total(self) -> float:
        """Staircase surface measure of the hole boundary inside one cell."""
        return self.gamma_cell.size * self.facet_area


def _adjacent_flat_indices(shape, axis, periodic):
    """Flat C-order indices of (lo, hi) cell pairs adjacent along ``axis``."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    if periodic:
        lo = idx
        hi = np.roll(idx, -1, axis=axis)
    else:
        sl_lo = [slice(None)] * len(shape)
        sl_hi = [slice(None)] * len(shape)
        sl_lo[axis] = slice(0, shape[axis] - 1)
        sl_hi[axis] = slice(1, shape[axis])
        lo = idx[tuple(sl_lo)]
        hi = idx[tuple(sl_hi)]
    return lo.ravel(), hi.ravel()


def _face_centers(flat_lo, shape, axis, h, wrap):
    """Facet midpoints for faces on the high side of the ``flat_lo`` cells."""
    multi = np.unravel_index(flat_lo, shape)
    dim = len(shape)
    centers = np.empty((flat_lo.size, dim))
    for d in range(dim):
        if d == axis:
            pos = (multi[d] + 1).astype(float) * h
            if wrap:
                pos = np.mod(pos, 1.0)
            centers[:, d] = pos
        else:
            centers[:, d] = (multi[d] + 0.5) * h
    return centers


def _check_connected(n_fluid, face_lo, face_hi):
    if n_fluid == 0:
        raise GeometryError("no fluid cells: inclusion covers the whole cell")
    ones = np.ones(face_lo.size)
    adj = sparse.coo_matrix((ones, (face_lo, face_hi)), shape=(n_fluid, n_fluid))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise GeometryError(f"fluid region is disconnected ({n_comp} components)")


def build_cell_geometry(shape: InclusionShape, resolution: int) -> CellGeometry:
    """Rasterize the inclusion onto the unit-cell grid and classify faces.

    A grid cell is solid iff its center lies inside the inclusion.  Rejects
    inclusions whose bounding box leaves a margin below 2/resolution to the
    cell boundary, and disconnected fluid regions (both break the periodic
    cell problems downstream).
    """
    if resolution < 4:
        raise GeometryError(f"resolution must be >= 4, got {resolution}")
    dim = len(shape.center)
    if dim not in (2, 3):
        raise GeometryError(f"dimension must be 2 or 3, got {dim}")
    if shape.kind != "none":
        margin = shape.margin(dim)
        if margin < 2.0 / resolution:
            raise GeometryError(
                f"inclusion margin {margin:.6g} to the cell boundary is below 2/resolution = "
                f"{2.0 / resolution:.6g}; the solid part must stay strictly inside the cell"
            )
    h = 1.0 / resolution
    axes_1d = (np.arange(resolution) + 0.5) * h
    grids = np.meshgrid(*([axes_1d] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    solid = shape.contains(points).reshape((resolution,) * dim)
    fluid_mask = ~solid

    n_total = fluid_mask.size
    n_fluid = int(np.count_nonzero(fluid_mask))
    fluid_id = -np.ones(fluid_mask.shape, dtype=np.int64)
    fluid_id[fluid_mask] = np.arange(n_fluid)

    face_lo_parts, face_hi_parts, face_axis_parts = [], [], []
    g_cell, g_axis, g_sign, g_center = [], [], [], []
    mask_flat = fluid_mask.ravel()
    id_flat = fluid_id.ravel()
    for axis in range(dim):
        lo, hi = _adjacent_flat_indices(fluid_mask.shape, axis, periodic=True)
        both = mask_flat[lo] & mask_flat[hi]
        face_lo_parts.append(id_flat[lo[both]])
        face_hi_parts.append(id_flat[hi[both]])
        face_axis_parts.append(np.full(int(both.sum()), axis, dtype=np.int64))
        lo_only = mask_flat[lo] & ~mask_flat[hi]
        hi_only = ~mask_flat[lo] & mask_flat[hi]
        if np.any(lo_only):
            sel = lo[lo_only]
            g_cell.append(id_flat[sel])
            g_axis.append(np.full(sel.size, axis, dtype=np.int64))
            g_sign.append(np.ones(sel.size, dtype=np.int64))
            g_center.append(_face_centers(sel, fluid_mask.shape, axis, h, wrap=True))
        if np.any(hi_only):
            sel_lo = lo[hi_only]
            g_cell.append(id_flat[hi[hi_only]])
            g_axis.append(np.full(sel_lo.size, axis, dtype=np.int64))
            g_sign.append(-np.ones(sel_lo.size, dtype=np.int64))
            g_center.append(_face_centers(sel_lo, fluid_mask.shape, axis, h, wrap=True))

    face_lo = np.concatenate(face_lo_parts) if face_lo_parts else np.empty(0, dtype=np.int64)
    face_hi = np.concatenate(face_hi_parts) if face_hi_parts else np.empty(0, dtype=np.int64)
    face_axis = np.concatenate(face_axis_parts) if face_axis_parts else np.empty(0, dtype=np.int64)
    _check_connected(n_fluid, face_lo, face_hi)

    cell = CellGeometry(
        shape=shape,
        resolution=resolution,
        dim=dim,
        fluid_mask=fluid_mask,
        porosity=n_fluid / n_total,
        n_fluid=n_fluid,
        fluid_id=fluid_id,
        centers=points[mask_flat],
        face_lo=face_lo,
        face_hi=face_hi,
        face_axis=face_axis,
        gamma_cell=np.concatenate(g_cell) if g_cell else np.empty(0, dtype=np.int64),
        gamma_axis=np.concatenate(g_axis) if g_axis else np.empty(0, dtype=np.int64),
        gamma_sign=np.concatenate(g_sign) if g_sign else np.empty(0, dtype=np.int64),
        gamma_center=np.concatenate(g_center) if g_center else np.empty((0, dim)),
    )
    return cell


@dataclass
class MaskedGrid:
    """Uniform grid over Omega = (0,1)^n with per-cell fluid flags and facet lists.

    Immutable once built; safe to share across concurrent solver runs.
    """

    cell: CellGeometry
    dim: int
    m: int
    r: int
    fluid_mask: np.ndarray
    n_fluid: int
    fluid_id: np.ndarray
    centers: np.ndarray
    face_lo: np.ndarray
    face_hi: np.ndarray
    face_axis: np.ndarray
    gamma_cell: np.ndarray
    gamma_axis: np.ndarray
    gamma_sign: np.ndarray
    gamma_center: np.ndarray
    outer_cell: np.ndarray
    outer_axis: np.ndarray
    outer_sign: np.ndarray
    outer_center: np.ndarray
    n_solid_solid_faces: int = 0
    _unit_cell_ids: np.ndarray = field(default=None, repr=False)

    @property
    def eps(self) -> float:
        return 1.0 / self.m

    @property
    def n_cells_per_edge(self) -> int:
        return self.m * self.r

    @property
    def h(self) -> float:
        return 1.0 / (self.m * self.r)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def facet_area(self) -> float:
        return self.h ** (self.dim - 1)

    @property
    def fluid_volume(self) -> float:
        """|Omega_eps| = total fluid volume."""
        return self.n_fluid * self.cell_volume

    @property
    def gamma_area_total(self) -> float:
        return self.gamma_cell.size * self.facet_area

    @property
    def outer_area_total(self) -> float:
        return self.outer_cell.size * self.facet_area

    @property
    def is_unperforated(self) -> bool:
        return self.gamma_cell.size == 0 and self.n_fluid == self.fluid_mask.size

    def unit_cell_ids(self) -> np.ndarray:
        """For each fluid cell, the fluid id of its image in the unit cell.

        Exact lookup: the grid tiles the cell pattern, so micro cell centers
        land on unit-cell centers under y = (x / eps) mod 1.
        """
        if self._unit_cell_ids is None:
            shape = self.fluid_mask.shape
            multi = np.unravel_index(np.arange(self.fluid_mask.size), shape)
            within = tuple(ix % self.r for ix in multi)
            ids = self.cell.fluid_id[within]
            self._unit_cell_ids = ids[self.fluid_mask.ravel()]
            if np.any(self._unit_cell_ids < 0):
                raise GeometryError("tiling mismatch: fluid cell maps to solid unit-cell cell")
        return self._unit_cell_ids


def build_masked_grid(cell: CellGeometry, m: int, r: int) -> MaskedGrid:
    """Tile the unit-cell mask m times per axis over Omega = (0,1)^n.

    ``r`` must equal ``cell.resolution`` so the eps-cells align exactly with
    the grid; eps = 1/m and the spacing is h = eps/r.
    """
    if m < 1:
        raise GeometryError(f"m must be >= 1, got {m}")
    if r != cell.resolution:
        raise GeometryError(
            f"alignment error: r = {r} must equal the unit-cell resolution {cell.resolution}"
        )
    dim = cell.dim
    fluid_mask = np.tile(cell.fluid_mask, (m,) * dim)
    n_side = m * r
    h = 1.0 / n_side

    n_fluid = int(np.count_nonzero(fluid_mask))
    fluid_id = -np.ones(fluid_mask.shape, dtype=np.int64)
    fluid_id[fluid_mask] = np.arange(n_fluid)
    mask_flat = fluid_mask.ravel()
    id_flat = fluid_id.ravel()

    axes_1d = (np.arange(n_side) + 0.5) * h
    grids = np.meshgrid(*([axes_1d] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    centers = points[mask_flat]

    face_lo_parts, face_hi_parts, face_axis_parts = [], [], []
    g_cell, g_axis, g_sign, g_center = [], [], [], []
    o_cell, o_axis, o_sign, o_center = [], [], [], []
    n_ss = 0
    for axis in range(dim):
        lo, hi = _adjacent_flat_indices(fluid_mask.shape, axis, periodic=False)
        both = mask_flat[lo] & mask_flat[hi]
        face_lo_parts.append(id_flat[lo[both]])
        face_hi_parts.append(id_flat[hi[both]])
        face_axis_parts.append(np.full(int(both.sum()), axis, dtype=np.int64))
        n_ss += int(np.count_nonzero(~mask_flat[lo] & ~mask_flat[hi]))
        lo_only = mask_flat[lo] & ~mask_flat[hi]
        hi_only = ~mask_flat[lo] & mask_flat[hi]
        if np.any(lo_only):
            sel = lo[lo_only]
            g_cell.append(id_flat[sel])
            g_axis.append(np.full(sel.size, axis, dtype=np.int64))
            g_sign.append(np.ones(sel.size, dtype=np.int64))
            g_center.append(_face_centers(sel, fluid_mask.shape, axis, h, wrap=False))
        if np.any(hi_only):
            sel_lo = lo[hi_only]
            g_cell.append(id_flat[hi[hi_only]])
            g_axis.append(np.full(sel_lo.size, axis, dtype=np.int64))
            g_sign.append(-np.ones(sel_lo.size, dtype=np.int64))
            g_center.append(_face_centers(sel_lo, fluid_mask.shape, axis, h, wrap=False))

        # outer boundary facets at x_axis = 0 and x_axis = 1
        idx = np.arange(fluid_mask.size).reshape(fluid_mask.shape)
        for side, sign in ((0, -1), (n_side - 1, +1)):
            sl = [slice(None)] * dim
            sl[axis] = side
            cells = idx[tuple(sl)].ravel()
            if np.any(~mask_flat[cells]):
                raise GeometryError(
                    "outer boundary adjacent to a solid cell; the inclusion must be interior"
                )
            o_cell.append(id_flat[cells])
            o_axis.append(np.full(cells.size, axis, dtype=np.int64))
            o_sign.append(np.full(cells.size, sign, dtype=np.int64))
            multi = np.unravel_index(cells, fluid_mask.shape)
            ctr = np.empty((cells.size, dim))
            for d in range(dim):
                if d == axis:
                    ctr[:, d] = 0.0 if side == 0 else 1.0
                else:
                    ctr[:, d] = (multi[d] + 0.5) * h
            o_center.append(ctr)

    grid = MaskedGrid(
        cell=cell,
        dim=dim,
        m=m,
        r=r,
        fluid_mask=fluid_mask,
        n_fluid=n_fluid,
        fluid_id=fluid_id,
        centers=centers,
        face_lo=np.concatenate(face_lo_parts),
        face_hi=np.concatenate(face_hi_parts),
        face_axis=np.concatenate(face_axis_parts),
        gamma_cell=np.concatenate(g_cell) if g_cell else np.empty(0, dtype=np.int64),
        gamma_axis=np.concatenate(g_axis) if g_axis else np.empty(0, dtype=np.int64),
        gamma_sign=np.concatenate(g_sign) if g_sign else np.empty(0, dtype=np.int64),
        gamma_center=np.concatenate(g_center) if g_center else np.empty((0, dim)),
        outer_cell=np.concatenate(o_cell),
        outer_axis=np.concatenate(o_axis),
        outer_sign=np.concatenate(o_sign),
        outer_center=np.concatenate(o_center),
        n_solid_solid_faces=n_ss,
    )
    return grid


@dataclass
class FacetCharges:
    """Surface charge samples on the boundary facets of a masked grid.

    ``gamma_values`` carry the eps-scaled interface density eps*xi1(x, x/eps mod 1);
    ``outer_values`` carry xi2(x).  ``xi_star`` is the max absolute facet value.
    """

    gamma_values: np.ndarray
    outer_values: np.ndarray
    xi_star: float

    def total_charge(self, grid: MaskedGrid) -> float:
        return float(
            np.sum(self.gamma_values) * grid.facet_area
            + np.sum(self.outer_values) * grid.facet_area
        )


def surface_charge_on_facets(grid: MaskedGrid, xi1, xi2) -> FacetCharges:
    """Sample the surface charge density at facet midpoints.

    ``xi1(x, y)`` takes (k, n) arrays of macro and cell coordinates; it is
    evaluated at y = (x / eps) mod 1, which makes the periodic extension
    exact on the aligned staircase grid.  ``xi2(x)`` takes the (k, n) outer
    facet midpoints.
    """
    x_gamma = grid.gamma_center
    y_gamma = np.mod(x_gamma / grid.eps, 1.0)
    gamma_values = grid.eps * np.asarray(xi1(x_gamma, y_gamma), dtype=float) \
        if x_gamma.shape[0] else np.empty(0)
    outer_values = np.asarray(xi2(grid.outer_center), dtype=float)
    hi = 0.0
    if gamma_values.size:
        hi = float(np.max(np.abs(gamma_values)))
    if outer_values.size:
        hi = max(hi, float(np.max(np.abs(outer_values))))
    return FacetCharges(gamma_values=gamma_values, outer_values=outer_values, xi_star=hi)
