"""Global assembly: DOF numbering, scatter, and Dirichlet elimination.

The global space couples the per-element spaces through shared vertex
values; boundary vertices are eliminated (homogeneous data is the native
formulation, inhomogeneous data enters through a lift).  Assembly is the
standard two-phase scheme: coordinate triplets gathered cell by cell, then
compressed to CSR.  The element loop is strictly ordered, so two runs over
the same mesh produce bit-identical sparse structures.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from .coefficients import CoefficientSet
from .geometry import Polygon
from .mesh import PolyMesh
from .vem_core import local_forms

__all__ = [
    "AssemblyError",
    "DofMap",
    "GlobalSystem",
    "FullSystem",
    "dof_map",
    "assemble",
    "assemble_full",
    "apply_dirichlet_lift",
    "expand_solution",
    "write_matrix_market",
    "read_matrix_market",
    "export_system",
]


class AssemblyError(ValueError):
    """Raised when a mesh/coefficient combination cannot be assembled."""


@dataclass(frozen=True)
class DofMap:
    """Numbering of interior vertices as global degrees of freedom.

    Attributes
    ----------
    interior_index : ndarray, shape (n_vertices,)
        Global DOF of each vertex, -1 for boundary vertices.
    boundary_index : ndarray, shape (n_vertices,)
        Position of each boundary vertex in `boundary_vertices`, -1 for
        interior vertices.
    interior_vertices : ndarray, shape (n_interior,)
        Vertex ids in DOF order (ascending vertex id).
    boundary_vertices : ndarray, shape (n_boundary,)
        Boundary vertex ids in lift order (ascending vertex id).
    """

    interior_index: np.ndarray
    boundary_index: np.ndarray
    interior_vertices: np.ndarray
    boundary_vertices: np.ndarray

    @property
    def n_interior(self) -> int:
        return len(self.interior_vertices)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_vertices)

    @property
    def n_vertices(self) -> int:
        return len(self.interior_index)


def dof_map(mesh: PolyMesh) -> DofMap:
    """Number the interior vertices 0..n_interior-1 in vertex order."""
    nv = len(mesh.vertices)
    interior_vertices = np.flatnonzero(~mesh.boundary_vertex)
    boundary_vertices = np.flatnonzero(mesh.boundary_vertex)
    interior_index = np.full(nv, -1, dtype=np.int64)
    interior_index[interior_vertices] = np.arange(len(interior_vertices))
    boundary_index = np.full(nv, -1, dtype=np.int64)
    boundary_index[boundary_vertices] = np.arange(len(boundary_vertices))
    return DofMap(interior_index, boundary_index, interior_vertices, boundary_vertices)


@dataclass(frozen=True)
class GlobalSystem:
    """Assembled operators on the interior DOFs.

    A is the diffusion part (symmetric), B the convection part (generally
    nonsymmetric), C the reaction part, and M the projected mass matrix for
    the eigenproblem.  K_coupling is the interior-by-boundary block of
    A + B + C, kept for the Dirichlet lift.  F only contains the volume
    load; boundary data contributions are added by `apply_dirichlet_lift`.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    M: sp.csr_matrix
    K_coupling: sp.csr_matrix
    F: np.ndarray
    dof: DofMap

    @property
    def K_load(self) -> sp.csr_matrix:
        """Operator of the load problem, A + B + C."""
        return (self.A + self.B + self.C).tocsr()

    @property
    def n(self) -> int:
        return self.dof.n_interior


@dataclass(frozen=True)
class FullSystem:
    """Operators over all vertex DOFs, boundary rows retained.

    Used for pre-elimination invariants (constants lie in the kernel of A)
    and for exporting the raw operators.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    M: sp.csr_matrix
    F: np.ndarray


class _TripletBuffer:
    """Coordinate triplets for one global matrix."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.data: list[np.ndarray] = []

    def add(self, rows: np.ndarray, cols: np.ndarray, data: np.ndarray) -> None:
        if len(rows):
            self.rows.append(rows)
            self.cols.append(cols)
            self.data.append(data)

    def tocsr(self, shape) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        data = np.concatenate(self.data)
        out = sp.coo_matrix((data, (rows, cols)), shape=shape).tocsr()
        out.sum_duplicates()
        return out


def _check_domain(mesh: PolyMesh, coeffs: CoefficientSet) -> None:
    if coeffs.domain is not None and coeffs.domain != mesh.domain_tag:
        raise AssemblyError(
            f"coefficients are defined on domain '{coeffs.domain}' but the "
            f"mesh is tagged '{mesh.domain_tag}'"
        )


def _local_elements(mesh: PolyMesh, coeffs: CoefficientSet):
    """Yield (vertex ids, LocalElement) per cell, with finiteness checks."""
    for ci, cell in enumerate(mesh.cells):
        ids = np.asarray(cell, dtype=np.int64)
        poly = Polygon(mesh.vertices[ids])
        try:
            le = local_forms(poly, coeffs)
        except ValueError as exc:
            raise AssemblyError(f"cell {ci}: {exc}") from exc
        if not (
            np.isfinite(le.Ah).all()
            and np.isfinite(le.Bh).all()
            and np.isfinite(le.Ch).all()
            and np.isfinite(le.Mh).all()
            and np.isfinite(le.Fh).all()
        ):
            raise AssemblyError(
                f"cell {ci}: coefficient evaluation produced non-finite values"
            )
        yield ids, le


def assemble(mesh: PolyMesh, coeffs: CoefficientSet) -> GlobalSystem:
    """Assemble the interior-DOF operators of the discrete problem.

    The load problem reads (A + B + C) u = F (plus lift contributions for
    inhomogeneous Dirichlet data); the eigenproblem pairs A + B (+ C) with M.
    """
    _check_domain(mesh, coeffs)
    dof = dof_map(mesh)
    n = dof.n_interior
    nb = dof.n_boundary

    bufs = {name: _TripletBuffer() for name in ("A", "B", "C", "M", "K_coupling")}
    F = np.zeros(n)

    for ids, le in _local_elements(mesh, coeffs):
        k = len(ids)
        rows_v = np.repeat(ids, k)
        cols_v = np.tile(ids, k)
        gi_r = dof.interior_index[rows_v]
        gi_c = dof.interior_index[cols_v]

        mask_ii = (gi_r >= 0) & (gi_c >= 0)
        r_ii = gi_r[mask_ii]
        c_ii = gi_c[mask_ii]
        bufs["A"].add(r_ii, c_ii, le.Ah.ravel()[mask_ii])
        bufs["B"].add(r_ii, c_ii, le.Bh.ravel()[mask_ii])
        bufs["C"].add(r_ii, c_ii, le.Ch.ravel()[mask_ii])
        bufs["M"].add(r_ii, c_ii, le.Mh.ravel()[mask_ii])

        mask_ib = (gi_r >= 0) & (gi_c < 0)
        if mask_ib.any():
            K_local = le.Ah + le.Bh + le.Ch
            bufs["K_coupling"].add(
                gi_r[mask_ib],
                dof.boundary_index[cols_v[mask_ib]],
                K_local.ravel()[mask_ib],
            )

        fi = dof.interior_index[ids]
        m = fi >= 0
        F[fi[m]] += le.Fh[m]

    return GlobalSystem(
        A=bufs["A"].tocsr((n, n)),
        B=bufs["B"].tocsr((n, n)),
        C=bufs["C"].tocsr((n, n)),
        M=bufs["M"].tocsr((n, n)),
        K_coupling=bufs["K_coupling"].tocsr((n, nb)),
        F=F,
        dof=dof,
    )


def assemble_full(mesh: PolyMesh, coeffs: CoefficientSet) -> FullSystem:
    """Assemble over all vertex DOFs with boundary rows retained."""
    _check_domain(mesh, coeffs)
    nv = len(mesh.vertices)
    bufs = {name: _TripletBuffer() for name in ("A", "B", "C", "M")}
    F = np.zeros(nv)

    for ids, le in _local_elements(mesh, coeffs):
        k = len(ids)
        rows_v = np.repeat(ids, k)
        cols_v = np.tile(ids, k)
        bufs["A"].add(rows_v, cols_v, le.Ah.ravel())
        bufs["B"].add(rows_v, cols_v, le.Bh.ravel())
        bufs["C"].add(rows_v, cols_v, le.Ch.ravel())
        bufs["M"].add(rows_v, cols_v, le.Mh.ravel())
        F[ids] += le.Fh

    return FullSystem(
        A=bufs["A"].tocsr((nv, nv)),
        B=bufs["B"].tocsr((nv, nv)),
        C=bufs["C"].tocsr((nv, nv)),
        M=bufs["M"].tocsr((nv, nv)),
        F=F,
    )


BoundaryData = Union[Callable, float, np.ndarray, Sequence[float]]


def _boundary_values(mesh: PolyMesh, dof: DofMap, g: BoundaryData) -> np.ndarray:
    if callable(g):
        xy = mesh.vertices[dof.boundary_vertices]
        vals = np.asarray(g(xy[:, 0], xy[:, 1]), dtype=float)
        vals = np.broadcast_to(vals, (dof.n_boundary,)).copy()
    elif np.isscalar(g):
        vals = np.full(dof.n_boundary, float(g))
    else:
        vals = np.asarray(g, dtype=float)
        if vals.shape != (dof.n_boundary,):
            raise AssemblyError(
                f"boundary data has shape {vals.shape}, expected ({dof.n_boundary},)"
            )
        vals = vals.copy()
    if not np.isfinite(vals).all():
        raise AssemblyError("boundary data evaluated to non-finite values")
    return vals


def apply_dirichlet_lift(
    system: GlobalSystem, mesh: PolyMesh, g: BoundaryData
) -> tuple[np.ndarray, np.ndarray]:
    """Eliminate inhomogeneous Dirichlet data.

    Returns (delta_F, g_boundary): the load-vector contribution
    -K_coupling @ g_boundary to add to ``system.F``, and the boundary
    values themselves (ordered like ``system.dof.boundary_vertices``) for
    expanding the solution back to all vertices.
    """
    g_b = _boundary_values(mesh, system.dof, g)
    delta_F = -(system.K_coupling @ g_b)
    return delta_F, g_b


def expand_solution(
    dof: DofMap, u_interior: np.ndarray, boundary_values: Optional[np.ndarray] = None
) -> np.ndarray:
    """Scatter an interior DOF vector to a full vertex-value vector."""
    u_interior = np.asarray(u_interior, dtype=float)
    if u_interior.shape != (dof.n_interior,):
        raise AssemblyError(
            f"solution has shape {u_interior.shape}, expected ({dof.n_interior},)"
        )
    full = np.zeros(dof.n_vertices)
    full[dof.interior_vertices] = u_interior
    if boundary_values is not None:
        boundary_values = np.asarray(boundary_values, dtype=float)
        if boundary_values.shape != (dof.n_boundary,):
            raise AssemblyError(
                f"boundary values have shape {boundary_values.shape}, "
                f"expected ({dof.n_boundary},)"
            )
        full[dof.boundary_vertices] = boundary_values
    return full


def write_matrix_market(obj, path: Union[str, Path]) -> Path:
    """Write a sparse matrix or vector in MatrixMarket coordinate format."""
    path = Path(path)
    if path.suffix != ".mtx":
        path = path.with_suffix(path.suffix + ".mtx")
    arr = obj
    if isinstance(arr, np.ndarray) and arr.ndim == 1:
        arr = sp.csr_matrix(arr.reshape(-1, 1))
    scipy.io.mmwrite(str(path), arr)
    return path


def read_matrix_market(path: Union[str, Path]):
    """Read a MatrixMarket file; vectors come back as (n,) arrays."""
    mat = scipy.io.mmread(str(path))
    if sp.issparse(mat):
        mat = mat.tocsr()
        if mat.shape[1] == 1:
            return np.asarray(mat.todense()).ravel()
        return mat
    arr = np.asarray(mat)
    if arr.ndim == 2 and arr.shape[1] == 1:
        return arr.ravel()
    return arr


def export_system(
    system: Union[GlobalSystem, FullSystem], directory: Union[str, Path], stem: str = "system"
) -> list[Path]:
    """Dump A, B, C, M, F as MatrixMarket files for external cross-checks."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("A", "B", "C", "M"):
        written.append(write_matrix_market(getattr(system, name), directory / f"{stem}_{name}"))
    written.append(write_matrix_market(system.F, directory / f"{stem}_F"))
    return written
