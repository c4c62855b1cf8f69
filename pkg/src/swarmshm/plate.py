"""Bending modes of a thin rectangular plate on a regular grid.

The plate is clamped along two opposite edges and free along the other
two, with spatially varying thickness to model localized damage. The
stiffness operator is assembled from the discrete bending energy

    U = 1/2 sum D(x,y) [w_xx^2 + w_yy^2 + 2*nu*w_xx*w_yy
                        + 2*(1-nu)*w_xy^2] dA

with second-order finite differences, so K is symmetric positive
definite after the clamped rows are eliminated and free edges carry
their natural (traction-free) conditions. Mass is lumped per node.

An analytic clamped-clamped beam basis (cylindrical bending along the
clamped axis) serves as an independent frequency and shape oracle.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

STEEL_DENSITY = 7850.0  # kg/m^3, structural steel default

# (beta*L) roots of cos(x)*cosh(x) = 1, clamped-clamped beam modes 1..4
CLAMPED_CLAMPED_ROOTS = (
    4.730040744862704,
    7.853204624095838,
    10.995607838001671,
    14.137165491257464,
)

# Energy shares of the two retained modes; renormalized to sum to 1
# wherever they are used as damage-index weights.
DOMINANT_MODE_ENERGY = (0.66, 0.29)


class EigenSolveError(RuntimeError):
    """Eigensolver failed to converge; carries the iteration count."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


@dataclass(frozen=True)
class PlateSpec:
    """Geometry, material, and discretization of the square plate."""

    side_length: float = 1.0        # m
    thickness: float = 0.003        # m
    youngs_modulus: float = 2.1e11  # Pa
    poisson: float = 0.3
    density: float = STEEL_DENSITY  # kg/m^3
    grid_n: int = 101               # nodes per axis
    clamped_axis: str = "x"         # edges x=0 and x=side clamped
    free_edge_bc: str = "free"      # or "simply_supported"

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")
        if not 0 < self.poisson < 0.5:
            raise ValueError("poisson ratio must lie in (0, 0.5)")
        if self.side_length <= 0 or self.youngs_modulus <= 0 or self.density <= 0:
            raise ValueError("side_length, youngs_modulus, density must be positive")
        if self.grid_n < 3:
            raise ValueError("grid_n too small")
        if self.clamped_axis not in ("x", "y"):
            raise ValueError("clamped_axis must be 'x' or 'y'")
        if self.free_edge_bc not in ("free", "simply_supported"):
            raise ValueError("free_edge_bc must be 'free' or 'simply_supported'")

    @property
    def spacing(self):
        return self.side_length / (self.grid_n - 1)

    @property
    def rigidity(self):
        """Flexural rigidity D = E t^3 / (12 (1 - nu^2)) at nominal thickness."""
        return self.youngs_modulus * self.thickness**3 / (12.0 * (1.0 - self.poisson**2))


def uniform_thickness(spec: PlateSpec) -> np.ndarray:
    """Nominal thickness map: grid_n x grid_n, all cells at spec.thickness."""
    return np.full((spec.grid_n, spec.grid_n), spec.thickness)


@dataclass(frozen=True)
class DamageRegion:
    """A 4-connected set of grid cells thinned by a fixed depth."""

    cells: tuple          # tuple of (i, j) index pairs
    depth: float          # m of thickness removed
    area_mm2: float = 0.0

    def __post_init__(self):
        if self.depth <= 0:
            raise ValueError("damage depth must be positive")
        cells = tuple(tuple(int(v) for v in c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        if not cells:
            raise ValueError("damage region has no cells")
        if not _is_4_connected(cells):
            raise ValueError("damage cells must form a 4-connected region")
        if self.area_mm2 == 0.0:
            object.__setattr__(self, "area_mm2", 100.0 * len(cells))


def _is_4_connected(cells):
    cellset = set(cells)
    seen = {cells[0]}
    stack = [cells[0]]
    while stack:
        i, j = stack.pop()
        for ni, nj in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if (ni, nj) in cellset and (ni, nj) not in seen:
                seen.add((ni, nj))
                stack.append((ni, nj))
    return len(seen) == len(cellset)


def apply_damage(thickness: np.ndarray, regions) -> np.ndarray:
    """Reduce thickness in each region by its depth; other cells unchanged.

    Regions must lie within the grid and must not overlap each other.
    """
    out = np.array(thickness, dtype=float, copy=True)
    n0, n1 = out.shape
    claimed = set()
    for reg in regions:
        for (i, j) in reg.cells:
            if not (0 <= i < n0 and 0 <= j < n1):
                raise ValueError(f"damage cell {(i, j)} outside {out.shape} grid")
            if (i, j) in claimed:
                raise ValueError(f"damage regions overlap at cell {(i, j)}")
            claimed.add((i, j))
            out[i, j] -= reg.depth
    if np.any(out <= 0):
        raise ValueError("damage depth removes full plate thickness")
    return out


@dataclass
class ModalBasis:
    """Mode shapes on the grid with natural frequencies and energy weights.

    Shapes are unit 2-norm over the grid and sign-fixed so the value at
    the grid center (or, if that is zero, the largest-magnitude node) is
    positive. Frequencies are strictly increasing.
    """

    frequencies: np.ndarray   # (M,) Hz
    shapes: np.ndarray        # (M, n, n)
    weights: np.ndarray       # (M,), sums to 1
    side_length: float = 1.0

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.shapes = np.asarray(self.shapes, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.shapes.ndim != 3 or self.shapes.shape[0] != self.frequencies.size:
            raise ValueError("shapes must be (M, n, n) matching frequencies")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    @property
    def n_modes(self):
        return self.frequencies.size

    @property
    def grid_n(self):
        return self.shapes.shape[1]

    def interpolate(self, points) -> np.ndarray:
        """Bilinear interpolation of every mode shape at (k, 2) positions.

        Returns an (M, k) array. Positions are in meters on
        [0, side_length]^2 with axis 0 of the grid along x.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if np.any(pts < -1e-12) or np.any(pts > self.side_length + 1e-12):
            raise ValueError("interpolation point outside the plate")
        h = self.side_length / (self.grid_n - 1)
        f = np.clip(pts / h, 0.0, self.grid_n - 1 - 1e-12)
        i0 = f.astype(int)
        t = f - i0
        i1 = np.minimum(i0 + 1, self.grid_n - 1)
        sx, sy = t[:, 0], t[:, 1]
        v00 = self.shapes[:, i0[:, 0], i0[:, 1]]
        v10 = self.shapes[:, i1[:, 0], i0[:, 1]]
        v01 = self.shapes[:, i0[:, 0], i1[:, 1]]
        v11 = self.shapes[:, i1[:, 0], i1[:, 1]]
        return (v00 * (1 - sx) * (1 - sy) + v10 * sx * (1 - sy)
                + v01 * (1 - sx) * sy + v11 * sx * sy)

    def content_hash(self) -> str:
        hsh = hashlib.sha256()
        hsh.update(np.ascontiguousarray(self.frequencies).tobytes())
        hsh.update(np.ascontiguousarray(self.shapes).tobytes())
        hsh.update(np.ascontiguousarray(self.weights).tobytes())
        return hsh.hexdigest()[:16]

    def export(self, out_dir) -> None:
        """Write one CSV grid per mode plus a JSON header."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i in range(self.n_modes):
            np.savetxt(out / f"mode_{i + 1}.csv", self.shapes[i], delimiter=",")
        header = {
            "frequencies_hz": [float(f) for f in self.frequencies],
            "weights": [float(w) for w in self.weights],
            "grid_n": int(self.grid_n),
            "side_length_m": float(self.side_length),
        }
        (out / "modes.json").write_text(json.dumps(header, sort_keys=True, indent=2))


@dataclass
class PlateOperators:
    """Assembled stiffness and mass with the free-node index map."""

    stiffness: sp.csc_matrix  # free DOFs only
    mass: sp.csc_matrix       # diagonal, free DOFs only
    free_index: np.ndarray    # flat grid indices of free DOFs
    spec: PlateSpec
    thickness: np.ndarray = field(repr=False, default=None)


def rigidity_map(spec: PlateSpec, thickness: np.ndarray) -> np.ndarray:
    """Per-node flexural rigidity E t^3 / (12 (1 - nu^2))."""
    return spec.youngs_modulus * thickness**3 / (12.0 * (1.0 - spec.poisson**2))


def assemble_operators(spec: PlateSpec, thickness: np.ndarray) -> PlateOperators:
    """Assemble the bending stiffness and lumped mass operators.

    Clamped edges (zero deflection and zero normal slope) are imposed on
    the two edges normal to ``spec.clamped_axis`` by eliminating edge
    DOFs and using a one-sided second-order curvature stencil at the
    wall. Free edges carry no constraint: their natural boundary
    conditions emerge from the energy formulation. With
    ``free_edge_bc="simply_supported"`` the non-clamped edge DOFs are
    eliminated as well (zero deflection, free rotation).
    """
    thickness = np.asarray(thickness, dtype=float)
    n = spec.grid_n
    if n < 21:
        raise ValueError("grid too coarse: grid_n must be >= 21")
    if thickness.shape != (n, n):
        raise ValueError(f"thickness map must be {(n, n)}, got {thickness.shape}")
    if np.any(thickness <= 0):
        raise ValueError("thickness must be positive everywhere")

    # Work in index space with axis 0 along the clamped direction; the
    # grid is square so operators for clamped_axis="y" are assembled on
    # the transposed map and re-indexed at the end.
    transpose = spec.clamped_axis == "y"
    t = thickness.T if transpose else thickness
    h = spec.spacing
    nu = spec.poisson
    N = n * n
    D = rigidity_map(spec, t)

    # trapezoid quadrature weights for the nodal energy sums
    aw = np.ones((n, n))
    aw[0, :] *= 0.5
    aw[-1, :] *= 0.5
    aw[:, 0] *= 0.5
    aw[:, -1] *= 0.5

    def flat(i, j):
        return i * n + j

    def second_diff_operator(axis):
        # curvature rows along one axis; at the clamped wall use the
        # one-sided stencil w'' = (8 w1 - w2) / (2 h^2) valid for
        # w(0) = w'(0) = 0; free edges carry no boundary curvature row
        rows, cols, vals, wts = [], [], [], []
        r = 0
        for i in range(n):
            for j in range(n):
                a = i if axis == 0 else j
                if 1 <= a <= n - 2:
                    if axis == 0:
                        ent = [(flat(i - 1, j), 1.0), (flat(i, j), -2.0), (flat(i + 1, j), 1.0)]
                    else:
                        ent = [(flat(i, j - 1), 1.0), (flat(i, j), -2.0), (flat(i, j + 1), 1.0)]
                elif axis == 0 and a == 0:
                    ent = [(flat(1, j), 4.0), (flat(2, j), -0.5)]
                elif axis == 0:
                    ent = [(flat(n - 2, j), 4.0), (flat(n - 3, j), -0.5)]
                else:
                    continue
                for c, v in ent:
                    rows.append(r)
                    cols.append(c)
                    vals.append(v / h**2)
                wts.append(D[i, j] * aw[i, j] * h * h)
                r += 1
        B = sp.csr_matrix((vals, (rows, cols)), shape=(r, N))
        return B, sp.diags(wts)

    Bxx, Wxx = second_diff_operator(0)
    Byy, Wyy = second_diff_operator(1)

    # twist curvature at cell centers
    rows, cols, vals, wts = [], [], [], []
    r = 0
    for i in range(n - 1):
        for j in range(n - 1):
            for c, v in ((flat(i, j), 1.0), (flat(i + 1, j + 1), 1.0),
                         (flat(i + 1, j), -1.0), (flat(i, j + 1), -1.0)):
                rows.append(r)
                cols.append(c)
                vals.append(v / h**2)
            Dc = 0.25 * (D[i, j] + D[i + 1, j] + D[i, j + 1] + D[i + 1, j + 1])
            wts.append(Dc * h * h)
            r += 1
    Bxy = sp.csr_matrix((vals, (rows, cols)), shape=(r, N))
    Wxy = sp.diags(wts)

    # Poisson coupling term, evaluated where both curvatures are interior
    rx, cx, vx, ry, cy, vy, wts = [], [], [], [], [], [], []
    r = 0
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            for c, v in ((flat(i - 1, j), 1.0), (flat(i, j), -2.0), (flat(i + 1, j), 1.0)):
                rx.append(r)
                cx.append(c)
                vx.append(v / h**2)
            for c, v in ((flat(i, j - 1), 1.0), (flat(i, j), -2.0), (flat(i, j + 1), 1.0)):
                ry.append(r)
                cy.append(c)
                vy.append(v / h**2)
            wts.append(D[i, j] * h * h)
            r += 1
    Cxx = sp.csr_matrix((vx, (rx, cx)), shape=(r, N))
    Cyy = sp.csr_matrix((vy, (ry, cy)), shape=(r, N))
    Wc = sp.diags(wts)

    K = (Bxx.T @ Wxx @ Bxx) + (Byy.T @ Wyy @ Byy) \
        + nu * (Cxx.T @ Wc @ Cyy + Cyy.T @ Wc @ Cxx) \
        + 2.0 * (1.0 - nu) * (Bxy.T @ Wxy @ Bxy)

    M = sp.diags((spec.density * t * aw * h * h).ravel())

    # eliminate constrained DOFs
    keep = np.ones((n, n), dtype=bool)
    keep[0, :] = False
    keep[-1, :] = False
    if spec.free_edge_bc == "simply_supported":
        keep[:, 0] = False
        keep[:, -1] = False
    free_t = np.flatnonzero(keep.ravel())

    Kf = K.tocsr()[free_t, :][:, free_t].tocsc()
    Mf = M.tocsr()[free_t, :][:, free_t].tocsc()

    if transpose:
        # map transposed flat indices back to the original layout
        it, jt = np.divmod(free_t, n)
        free_orig = jt * n + it
    else:
        free_orig = free_t

    return PlateOperators(stiffness=Kf, mass=Mf, free_index=free_orig,
                          spec=spec, thickness=thickness)


def _sign_fix(shape_grid):
    n = shape_grid.shape[0]
    c = shape_grid[n // 2, n // 2]
    if abs(c) > 1e-9 * np.max(np.abs(shape_grid)):
        s = np.sign(c)
    else:
        flatidx = np.argmax(np.abs(shape_grid))
        s = np.sign(shape_grid.ravel()[flatidx])
    return shape_grid * (s if s != 0 else 1.0)


def _symmetry_scores(shape_grid):
    """Correlation of a mode with its mirror image about each center axis."""
    f = shape_grid / np.linalg.norm(shape_grid)
    return float(np.sum(f * f[::-1, :])), float(np.sum(f * f[:, ::-1]))


def solve_modes(operators: PlateOperators, n_modes: int = 12, *, seed: int = 0,
                select_pair: bool = True, target_freqs=(17.0, 90.0),
                energy=DOMINANT_MODE_ENERGY) -> ModalBasis:
    """Lowest bending modes of the assembled plate.

    Solves the generalized eigenproblem K phi = (2 pi f)^2 M phi by
    shift-invert iteration about zero with a seed-derived start vector.
    With ``select_pair`` the basis is reduced to the two modes that are
    even about both center axes and closest to ``target_freqs``; their
    weights are ``energy`` renormalized to sum to 1. The intermediate
    antisymmetric mode (one nodal line across the clamped span) is
    thereby excluded.
    """
    if n_modes < 2:
        raise ValueError("n_modes must be >= 2")
    spec = operators.spec
    n = spec.grid_n
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(operators.stiffness.shape[0])
    try:
        vals, vecs = spla.eigsh(operators.stiffness, k=n_modes, M=operators.mass,
                                sigma=0, which="LM", v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise EigenSolveError(
            f"eigensolver did not converge ({len(exc.eigenvalues)} of {n_modes} modes)",
            iterations=len(exc.eigenvalues)) from exc

    order = np.argsort(vals)
    vals = vals[order]
    vecs = vecs[:, order]
    freqs = np.sqrt(np.maximum(vals, 0.0)) / (2.0 * np.pi)

    shapes = np.zeros((n_modes, n, n))
    for m in range(n_modes):
        full = np.zeros(n * n)
        full[operators.free_index] = vecs[:, m]
        grid = full.reshape(n, n)
        grid = grid / np.linalg.norm(grid)
        shapes[m] = _sign_fix(grid)

    if not select_pair:
        w = np.full(n_modes, 1.0 / n_modes)
        return ModalBasis(freqs, shapes, w, side_length=spec.side_length)

    symmetric = [m for m in range(n_modes)
                 if min(_symmetry_scores(shapes[m])) > 0.9]
    if len(symmetric) < 2:
        raise EigenSolveError("fewer than two doubly symmetric modes found; "
                              "increase n_modes")
    picked = []
    for ft in target_freqs:
        cand = min((m for m in symmetric if m not in picked),
                   key=lambda m: abs(freqs[m] - ft))
        picked.append(cand)
    picked.sort(key=lambda m: freqs[m])

    w = np.asarray(energy, dtype=float)
    w = w / w.sum()
    return ModalBasis(freqs[picked], shapes[picked], w, side_length=spec.side_length)


def beam_mode_function(order: int, xi) -> np.ndarray:
    """Clamped-clamped beam mode shape on normalized coordinate xi in [0, 1]."""
    lam = CLAMPED_CLAMPED_ROOTS[order - 1]
    xi = np.asarray(xi, dtype=float)
    sig = (np.cosh(lam) - np.cos(lam)) / (np.sinh(lam) - np.sin(lam))
    return (np.cosh(lam * xi) - np.cos(lam * xi)
            - sig * (np.sinh(lam * xi) - np.sin(lam * xi)))


def beam_mode_frequency(spec: PlateSpec, order: int) -> float:
    """Natural frequency of a clamped-clamped strip in cylindrical bending.

    Uses the plate rigidity (plane-strain bending), f = (beta L)^2 /
    (2 pi L^2) * sqrt(D / (rho h)).
    """
    lam2 = CLAMPED_CLAMPED_ROOTS[order - 1] ** 2
    L = spec.side_length
    return lam2 / (2.0 * np.pi * L**2) * np.sqrt(
        spec.rigidity / (spec.density * spec.thickness))


def analytic_beam_basis(spec: PlateSpec) -> ModalBasis:
    """Cylindrical-bending surrogate basis: beam modes 1 and 3.

    Shapes vary along the clamped axis only and are constant along the
    free axis; frequencies come from the clamped-clamped beam formula.
    Valid for uniform thickness only.
    """
    n = spec.grid_n
    xi = np.linspace(0.0, 1.0, n)
    shapes = []
    freqs = []
    for order in (1, 3):
        line = beam_mode_function(order, xi)
        grid = np.repeat(line[:, None], n, axis=1)
        if spec.clamped_axis == "y":
            grid = grid.T
        grid = grid / np.linalg.norm(grid)
        shapes.append(_sign_fix(grid))
        freqs.append(beam_mode_frequency(spec, order))
    w = np.asarray(DOMINANT_MODE_ENERGY, dtype=float)
    return ModalBasis(np.asarray(freqs), np.asarray(shapes), w / w.sum(),
                      side_length=spec.side_length)
