"""Error norms, convergence-rate fitting, and eigenvalue post-processing.

The virtual solution is only known through its vertex values, so errors
are measured against the computable projections: the L2 error uses the
cellwise P1 projection of u_h, the H1 seminorm its (constant per cell)
gradient.  Rates come from a log-log least-squares fit; the non-convex
benchmark has no closed-form spectrum, so its columns are extrapolated
with a three-parameter power-law fit instead.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .coefficients import CoefficientSet
from .geometry import Polygon, polygon_quadrature
from .mesh import PolyMesh
from .vem_core import local_forms, pi_nabla

__all__ = [
    "error_l2",
    "error_h1_semi",
    "triple_seminorm_interp",
    "fit_rate",
    "extrapolate",
    "match_eigs",
    "EigMatch",
    "MatchReport",
    "ConvergenceEntry",
    "ConvergenceRecord",
]

ERROR_QUAD_DEGREE = 6


def _cell_polys(mesh: PolyMesh):
    for cell in mesh.cells:
        ids = np.asarray(cell, dtype=np.int64)
        yield ids, Polygon(mesh.vertices[ids])


def _projection_coeffs(poly: Polygon, dofs: np.ndarray) -> np.ndarray:
    """Coefficients (s0, s1, s2) of Pi u_h in the scaled monomial basis."""
    return pi_nabla(poly) @ dofs


def error_l2(mesh: PolyMesh, u_h: np.ndarray, u_exact: Callable) -> float:
    """|| u - Pi u_h ||_{L2} with u_h given at all vertices."""
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (len(mesh.vertices),):
        raise ValueError(
            f"u_h has shape {u_h.shape}, expected ({len(mesh.vertices)},)"
        )
    total = 0.0
    for ids, poly in _cell_polys(mesh):
        s = _projection_coeffs(poly, u_h[ids])
        xc, yc = poly.centroid
        h = poly.diameter
        qx, qy, wts = polygon_quadrature(poly, ERROR_QUAD_DEGREE)
        proj = s[0] + s[1] * (qx - xc) / h + s[2] * (qy - yc) / h
        diff = np.asarray(u_exact(qx, qy), dtype=float) - proj
        total += float(wts @ diff**2)
    return float(np.sqrt(max(total, 0.0)))


def error_h1_semi(mesh: PolyMesh, u_h: np.ndarray, grad_u_exact: Callable) -> float:
    """| u - Pi u_h |_{H1}; the projected gradient is constant per cell."""
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (len(mesh.vertices),):
        raise ValueError(
            f"u_h has shape {u_h.shape}, expected ({len(mesh.vertices)},)"
        )
    total = 0.0
    for ids, poly in _cell_polys(mesh):
        s = _projection_coeffs(poly, u_h[ids])
        gx_h = s[1] / poly.diameter
        gy_h = s[2] / poly.diameter
        qx, qy, wts = polygon_quadrature(poly, ERROR_QUAD_DEGREE)
        gx, gy = grad_u_exact(qx, qy)
        dx = np.asarray(gx, dtype=float) - gx_h
        dy = np.asarray(gy, dtype=float) - gy_h
        total += float(wts @ (dx**2 + dy**2))
    return float(np.sqrt(max(total, 0.0)))


def triple_seminorm_interp(
    mesh: PolyMesh, u_h: np.ndarray, u_exact: Callable, coeffs: CoefficientSet
) -> float:
    """Discrete energy distance between u_h and the interpolant of u.

    The continuous triple seminorm needs boundary derivatives of the exact
    solution; the computable stand-in replaces u by its vertex interpolant
    u_I and evaluates the discrete form sum_E a_h^E(u_I - u_h, u_I - u_h),
    which includes the stabilization term.
    """
    u_h = np.asarray(u_h, dtype=float)
    u_i = np.asarray(
        u_exact(mesh.vertices[:, 0], mesh.vertices[:, 1]), dtype=float
    )
    if u_h.shape != u_i.shape:
        raise ValueError(
            f"u_h has shape {u_h.shape}, expected {u_i.shape}"
        )
    total = 0.0
    for ids, poly in _cell_polys(mesh):
        d = u_i[ids] - u_h[ids]
        le = local_forms(poly, coeffs)
        total += float(d @ le.Ah @ d)
    return float(np.sqrt(max(total, 0.0)))


def fit_rate(hs: Sequence[float], errs: Sequence[float]) -> float:
    """Least-squares slope of log(err) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if hs.shape != errs.shape or hs.ndim != 1 or len(hs) < 3:
        raise ValueError("need at least 3 (h, err) pairs of equal length")
    if (hs <= 0).any() or (errs <= 0).any():
        raise ValueError("h and err values must be positive for a log-log fit")
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def _power_law_residual(params, hs, vals):
    lam, c, t = params
    model = lam + c * hs**t
    return model - vals


def extrapolate(hs: Sequence[float], vals: Sequence[float]) -> tuple[float, float]:
    """Fit vals ~ limit + C * h^order; returns (limit, order).

    Three-parameter damped Gauss-Newton (Levenberg style): the Jacobian is
    tiny, so the normal equations are solved densely with an adaptive
    damping factor.  On breakdown the limit falls back to the finest value
    and a warning is emitted.
    """
    hs = np.asarray(hs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if hs.shape != vals.shape or hs.ndim != 1 or len(hs) < 3:
        raise ValueError("need at least 3 (h, value) pairs of equal length")
    if (hs <= 0).any():
        raise ValueError("h values must be positive")

    lam = float(vals[-1])
    t = 2.0
    denom = hs[0] ** t - hs[1] ** t
    c = float((vals[0] - vals[1]) / denom) if denom != 0 else 1.0

    params = np.array([lam, c, t])
    mu = 1e-3
    r = _power_law_residual(params, hs, vals)
    cost = float(r @ r)
    for _ in range(100):
        lam, c, t = params
        ht = hs ** t
        J = np.column_stack([np.ones_like(hs), ht, c * ht * np.log(hs)])
        JtJ = J.T @ J
        g = J.T @ r
        step = None
        for _ in range(25):
            try:
                step = np.linalg.solve(JtJ + mu * np.diag(np.diag(JtJ) + 1e-30), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            trial = params + step
            r_trial = _power_law_residual(trial, hs, vals)
            cost_trial = float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial <= cost:
                params = trial
                r = r_trial
                cost = cost_trial
                mu = max(mu * 0.3, 1e-12)
                break
            mu *= 10.0
        else:
            break
        if np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(params)):
            break
    else:
        pass

    lam, c, t = params
    if not (np.isfinite(lam) and np.isfinite(t)):
        warnings.warn(
            "power-law extrapolation failed; falling back to the finest value",
            RuntimeWarning,
        )
        return float(vals[-1]), float("nan")
    return float(lam), float(t)


@dataclass(frozen=True)
class EigMatch:
    computed: complex
    reference: float
    rel_error: float
    imag_flagged: bool


@dataclass(frozen=True)
class MatchReport:
    pairs: tuple
    unmatched_computed: int
    unmatched_reference: int

    @property
    def rel_errors(self) -> np.ndarray:
        return np.array([p.rel_error for p in self.pairs])

    @property
    def any_imag_flagged(self) -> bool:
        return any(p.imag_flagged for p in self.pairs)


def match_eigs(computed, reference: Sequence[float]) -> MatchReport:
    """Pair computed eigenvalues with reference values, order preserved.

    `computed` is an EigenResult or a sequence of (complex) values; both
    lists are sorted ascending (by real part) and matched greedily front to
    back, so multiplicities line up positionally.  Counts may differ; the
    surplus is reported unmatched.
    """
    vals = np.asarray(getattr(computed, "eigenvalues", computed))
    vals = vals[np.lexsort((vals.imag if np.iscomplexobj(vals) else np.zeros(len(vals)), vals.real))]
    ref = np.sort(np.asarray(reference, dtype=float))
    n = min(len(vals), len(ref))
    pairs = []
    for lam, lref in zip(vals[:n], ref[:n]):
        lam = complex(lam)
        flagged = abs(lam.imag) > 1e-6 * max(abs(lam), 1e-300)
        rel = abs(lam.real - lref) / max(abs(lref), 1e-300)
        pairs.append(EigMatch(lam, float(lref), float(rel), bool(flagged)))
    return MatchReport(tuple(pairs), len(vals) - n, len(ref) - n)


@dataclass(frozen=True)
class ConvergenceEntry:
    N: int
    h: float
    dof_count: int
    values: dict


@dataclass
class ConvergenceRecord:
    """Mesh-refinement study: one entry per level, finest last.

    Values are named columns (errors or eigenvalues).  Footer helpers fit
    orders per column and, where no exact reference exists, extrapolate
    the limit.
    """

    entries: list = field(default_factory=list)

    def add_entry(self, N: int, h: float, dof_count: int, values: dict) -> None:
        if self.entries:
            if h >= self.entries[-1].h:
                raise ValueError("h must be strictly decreasing across entries")
            if list(values.keys()) != self.names:
                raise ValueError(
                    f"value names {list(values.keys())} do not match {self.names}"
                )
        self.entries.append(
            ConvergenceEntry(int(N), float(h), int(dof_count), dict(values))
        )

    @property
    def names(self) -> list:
        return list(self.entries[0].values.keys()) if self.entries else []

    def column(self, name: str) -> np.ndarray:
        return np.array([e.values[name] for e in self.entries], dtype=float)

    @property
    def hs(self) -> np.ndarray:
        return np.array([e.h for e in self.entries])

    def fitted_order(self, name: str, reference: Optional[float] = None) -> float:
        """Slope of the column (as |value - reference| if a reference is given)."""
        col = self.column(name)
        if reference is not None:
            col = np.abs(col - reference)
        return fit_rate(self.hs, col)

    def extrapolated(self, name: str) -> tuple[float, float]:
        return extrapolate(self.hs, self.column(name))

    def check_monotone_from_above(self, reference: dict) -> list:
        """Columns observed to approach their reference from above.

        Returns the offending column names and warns; never raises (the
        nonsymmetric pencil carries no monotonicity theorem).
        """
        bad = []
        for name, ref in reference.items():
            col = self.column(name)
            above = (col >= ref - 1e-12 * max(abs(ref), 1.0)).all()
            decreasing = (np.diff(col) <= 1e-12 * np.abs(col[:-1])).all()
            if not (above and decreasing):
                bad.append(name)
        if bad:
            warnings.warn(
                f"columns not monotone from above: {', '.join(bad)}",
                RuntimeWarning,
            )
        return bad

    def write_csv(
        self,
        path: Union[str, Path],
        exact: Optional[dict] = None,
        extrap: bool = False,
        header_comment: Optional[str] = None,
    ) -> Path:
        """One row per level plus footer rows: order, then exact or extrap.

        The order row holds the log-log slope of |value - exact| when an
        exact reference is given, the fitted power-law exponent when
        extrapolating, and the raw log-log slope otherwise (error columns).
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = self.names
        with open(path, "w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["N", "h", "dof_count"] + names)
            for e in self.entries:
                writer.writerow(
                    [e.N, f"{e.h:.12g}", e.dof_count]
                    + [f"{e.values[n]:.12g}" for n in names]
                )
            enough = len(self.entries) >= 3
            limits = (
                {n: self.extrapolated(n) for n in names} if (extrap and enough) else {}
            )
            if enough:
                orders = []
                for n in names:
                    try:
                        if exact and n in exact:
                            orders.append(f"{self.fitted_order(n, exact[n]):.4f}")
                        elif extrap:
                            orders.append(f"{limits[n][1]:.4f}")
                        else:
                            orders.append(f"{self.fitted_order(n):.4f}")
                    except ValueError:
                        orders.append("")
                writer.writerow(["order", "", ""] + orders)
            if exact:
                writer.writerow(
                    ["exact", "", ""]
                    + [f"{exact[n]:.12g}" if n in exact else "" for n in names]
                )
            elif limits:
                writer.writerow(
                    ["extrap", "", ""] + [f"{limits[n][0]:.12g}" for n in names]
                )
        return path
