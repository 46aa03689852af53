"""Cell-centered tensor-product grids with mean-zero calculus.

Everything in the package is built on a uniform cell-centered grid over a
1D interval or a 2D rectangle, carrying the uniform reference probability
measure (volume-normalized Lebesgue).  Scalar fields live at cell centers,
vector fields at cell faces.  The discrete gradient maps cells to faces
with reflecting (zero-flux) closure, and the discrete divergence is its
negative adjoint under the matching cell/face quadrature pairings, so that
weighted Laplacians assembled as G^T diag(w) G are symmetric with the
constant vector in their kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class FaceField:
    """Per-axis arrays of face-normal components.

    Axis a has shape cells with axis a enlarged by one (one entry per face,
    boundary faces included).  Boundary entries store the normal component
    on the domain boundary; fields produced by `Grid.gradient` have zeros
    there, which is the discrete zero-flux closure.
    """

    components: tuple[np.ndarray, ...]

    def __add__(self, other: "FaceField") -> "FaceField":
        return FaceField(tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "FaceField") -> "FaceField":
        return FaceField(tuple(a - b for a, b in zip(self.components, other.components)))

    def __mul__(self, c: float) -> "FaceField":
        return FaceField(tuple(c * a for a in self.components))

    __rmul__ = __mul__

    def copy(self) -> "FaceField":
        return FaceField(tuple(a.copy() for a in self.components))


class Grid:
    """Uniform cell-centered grid on an interval or rectangle.

    Parameters
    ----------
    extents : sequence of (lo, hi) pairs, one per axis (1 or 2 axes).
    cells : sequence of cell counts per axis, each >= 4.

    The reference measure is the uniform probability measure, so the
    quadrature weight of every cell is exactly ``1 / n_cells``.
    """

    def __init__(self, extents, cells):
        extents = [(float(lo), float(hi)) for lo, hi in extents]
        cells = [int(n) for n in cells]
        if len(extents) not in (1, 2) or len(cells) != len(extents):
            raise ValueError("grid supports 1 or 2 axes with matching extents/cells")
        for (lo, hi), n in zip(extents, cells):
            if not hi > lo:
                raise ValueError(f"extent [{lo}, {hi}] has nonpositive length")
            if n < 4:
                raise ValueError(f"need at least 4 cells per axis, got {n}")
        self.dim = len(cells)
        self.extents = tuple(extents)
        self.cells = tuple(cells)
        self.spacings = tuple((hi - lo) / n for (lo, hi), n in zip(extents, cells))
        self.cell_volume = float(np.prod(self.spacings))
        self.volume = float(np.prod([hi - lo for lo, hi in extents]))
        self.n_cells = int(np.prod(cells))
        self.shape = tuple(cells)
        # cell-center and face coordinates per axis
        self.centers = tuple(
            lo + (np.arange(n) + 0.5) * dx
            for (lo, _), n, dx in zip(extents, cells, self.spacings)
        )
        self.faces = tuple(
            lo + np.arange(n + 1) * dx
            for (lo, _), n, dx in zip(extents, cells, self.spacings)
        )
        self._grad_ops = self._build_gradient_operators()

    # ------------------------------------------------------------------
    # layout helpers

    def face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)

    def zeros_faces(self) -> FaceField:
        return FaceField(tuple(np.zeros(self.face_shape(a)) for a in range(self.dim)))

    def mesh(self):
        """Cell-center coordinate arrays, shaped like scalar fields."""
        if self.dim == 1:
            return (self.centers[0],)
        return tuple(np.meshgrid(*self.centers, indexing="ij"))

    def _check_cell_field(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"field shape {f.shape} does not match grid {self.shape}")
        return f

    def _build_gradient_operators(self):
        """Sparse per-axis gradient matrices, flattened cells -> flattened faces.

        Boundary-face rows are zero (reflecting ghosts), so G @ ones == 0 and
        weighted Laplacians G^T diag(.) G carry the Neumann closure for free.
        """
        ops = []
        eye_parts = [sp.identity(n, format="csr") for n in self.shape]
        for axis, (n, dx) in enumerate(zip(self.shape, self.spacings)):
            d = sp.lil_matrix((n + 1, n))
            for face in range(1, n):
                d[face, face - 1] = -1.0 / dx
                d[face, face] = 1.0 / dx
            d = d.tocsr()
            parts = list(eye_parts)
            parts[axis] = d
            op = parts[0]
            for p in parts[1:]:
                op = sp.kron(op, p, format="csr")
            ops.append(op)
        return ops

    # ------------------------------------------------------------------
    # quadrature

    def integrate(self, f: np.ndarray) -> float:
        """Integral of a cell field against the uniform reference measure."""
        f = self._check_cell_field(f)
        return float(f.mean())

    def integrate_lebesgue(self, f: np.ndarray) -> float:
        return self.integrate(f) * self.volume

    def project_mean_zero(self, f: np.ndarray) -> np.ndarray:
        """Subtract the reference-measure mean."""
        f = self._check_cell_field(f)
        return f - f.mean()

    @property
    def nu0_cell_weight(self) -> float:
        """Reference-measure weight of one cell (also used for faces)."""
        return 1.0 / self.n_cells

    # ------------------------------------------------------------------
    # differential operators

    def gradient(self, f: np.ndarray) -> FaceField:
        """Central-difference gradient across faces, zero on boundary faces."""
        f = self._check_cell_field(f)
        flat = f.ravel()
        comps = tuple(
            (self._grad_ops[a] @ flat).reshape(self.face_shape(a))
            for a in range(self.dim)
        )
        return FaceField(comps)

    def divergence(self, F: FaceField) -> np.ndarray:
        """Negative adjoint of `gradient` under the cell/face pairings."""
        out = np.zeros(self.n_cells)
        for a in range(self.dim):
            comp = np.asarray(F.components[a], dtype=float)
            if comp.shape != self.face_shape(a):
                raise ValueError(
                    f"face component {a} has shape {comp.shape}, "
                    f"expected {self.face_shape(a)}"
                )
            out -= self._grad_ops[a].T @ comp.ravel()
        return out.reshape(self.shape)

    def face_average(self, f: np.ndarray) -> FaceField:
        """Arithmetic average of a cell field onto faces; zero on the boundary.

        This is the interpolation used for every weighted face coefficient in
        the package, so that operators and quadratures stay mutually adjoint.
        """
        f = self._check_cell_field(f)
        comps = []
        for a in range(self.dim):
            comp = np.zeros(self.face_shape(a))
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            inner = [slice(None)] * self.dim
            lo[a] = slice(0, -1)
            hi[a] = slice(1, None)
            inner[a] = slice(1, -1)
            comp[tuple(inner)] = 0.5 * (f[tuple(lo)] + f[tuple(hi)])
            comps.append(comp)
        return FaceField(tuple(comps))

    def face_inner(self, F: FaceField, G: FaceField, weight: FaceField | None = None) -> float:
        """Face quadrature pairing sum_f F G [w] * nu0 face weight."""
        total = 0.0
        for a in range(self.dim):
            prod = F.components[a] * G.components[a]
            if weight is not None:
                prod = prod * weight.components[a]
            total += prod.sum()
        return float(total * self.nu0_cell_weight)

    def cell_inner(self, f: np.ndarray, g: np.ndarray, weight: np.ndarray | None = None) -> float:
        f = self._check_cell_field(f)
        g = self._check_cell_field(g)
        prod = f * g if weight is None else f * g * weight
        return float(prod.sum() * self.nu0_cell_weight)

    # ------------------------------------------------------------------
    # face-vector packing (used by the elliptic solver)

    def faces_to_vector(self, F: FaceField) -> np.ndarray:
        return np.concatenate([F.components[a].ravel() for a in range(self.dim)])

    def vector_to_faces(self, v: np.ndarray) -> FaceField:
        comps = []
        offset = 0
        for a in range(self.dim):
            size = int(np.prod(self.face_shape(a)))
            comps.append(v[offset:offset + size].reshape(self.face_shape(a)))
            offset += size
        return FaceField(tuple(comps))

    def stacked_gradient_matrix(self) -> sp.csr_matrix:
        """All per-axis gradient operators stacked; cells -> packed faces."""
        return sp.vstack(self._grad_ops, format="csr")

    def __repr__(self):
        ext = " x ".join(f"[{lo:g},{hi:g}]" for lo, hi in self.extents)
        return f"Grid({ext}, cells={self.cells})"
