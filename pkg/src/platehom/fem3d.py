"""Scaled-gradient linear elasticity on voxel grids with trilinear hexahedra.

The plate/cell geometry is always the fixed unit domain: in-plane the unit
square (cell mode: unit torus), thickness I = [-1/2, 1/2]. Thinness enters
only through the scaled gradient (d1, d2, (1/s) d3): the element
strain-displacement matrix carries the 1/s on its z-derivative column, so one
mesh serves every scale.

Dof layout is node-major with interleaved components (ux, uy, uz per node).
Cell mode identifies the x=0/x=1 and y=0/y=1 node planes (periodic in-plane,
natural top/bottom) and its operator kernel is the three translations,
handled by mean-projection inside CG. Plate mode eliminates all components
on the clamped edge planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .algebra import _EMBED, HookeTensor3
from .microstructure import VoxelGrid

GAUSS = 1.0 / np.sqrt(3.0)
EDGES = ("left", "right", "bottom", "top")


class SolverError(RuntimeError):
    """Iterative solver failed to reach the requested tolerance."""


@dataclass
class ElementKit:
    """Reference-element quantities for one voxel size and gradient scale."""

    b: np.ndarray       # (8 gp, 6, 24) Mandel strain-displacement matrices
    wdet: float         # quadrature weight * |J| (same for all gp)
    n: np.ndarray       # (8 gp, 8) shape function values
    zeta_frac: np.ndarray  # (8 gp,) z position of gp as fraction of hz in [0,1]
    hx: float
    hy: float
    hz: float
    scale: float


def _local_corners() -> np.ndarray:
    # local node order: x fastest, then y, then z
    out = np.zeros((8, 3))
    for a in range(8):
        out[a] = (a & 1, (a >> 1) & 1, (a >> 2) & 1)
    return out


def _b_at(point, jac: np.ndarray) -> np.ndarray:
    """6x24 Mandel strain-displacement matrix at a reference point."""
    corners = 2.0 * _local_corners() - 1.0
    xi, eta, zeta = point
    s2 = np.sqrt(2.0)
    b = np.zeros((6, 24))
    for a, (xa, ya, za) in enumerate(corners):
        dx = xa * (1 + ya * eta) * (1 + za * zeta) / 8.0 * jac[0]
        dy = ya * (1 + xa * xi) * (1 + za * zeta) / 8.0 * jac[1]
        dz = za * (1 + xa * xi) * (1 + ya * eta) / 8.0 * jac[2]
        b[0, 3 * a + 0] = dx
        b[1, 3 * a + 1] = dy
        b[2, 3 * a + 2] = dz
        b[3, 3 * a + 1] = dz / s2
        b[3, 3 * a + 2] = dy / s2
        b[4, 3 * a + 0] = dz / s2
        b[4, 3 * a + 2] = dx / s2
        b[5, 3 * a + 0] = dy / s2
        b[5, 3 * a + 1] = dx / s2
    return b


def element_kit(hx: float, hy: float, hz: float, scale: float,
                ans_shear: bool = False) -> ElementKit:
    """Strain-displacement matrices at the 2x2x2 Gauss points.

    With ``ans_shear`` the two transverse-shear rows are sampled on the
    element midplanes (e13 at xi = 0, e23 at eta = 0), the assumed-natural-
    strain treatment that removes parasitic shear under bending. Quadrature
    stays full 2x2x2; constant strains are reproduced exactly and a free
    element keeps exactly the six rigid-body zero-energy modes. Strain fields
    without in-plane variation are untouched, so cell problems with uniform
    loads are identical to the plain trilinear element.
    """
    corners = 2.0 * _local_corners() - 1.0  # (+-1)^3
    gps = GAUSS * corners                   # 2x2x2 Gauss points, same ordering
    nmat = np.zeros((8, 8))
    bmat = np.zeros((8, 6, 24))
    jac = np.array([2.0 / hx, 2.0 / hy, 2.0 / (hz * scale)])
    for g, (xi, eta, zeta) in enumerate(gps):
        for a, (xa, ya, za) in enumerate(corners):
            nmat[g, a] = (1 + xa * xi) * (1 + ya * eta) * (1 + za * zeta) / 8.0
        bmat[g] = _b_at((xi, eta, zeta), jac)
        if ans_shear:
            bmat[g, 3, :] = _b_at((xi, 0.0, zeta), jac)[3, :]
            bmat[g, 4, :] = _b_at((0.0, eta, zeta), jac)[4, :]
    zeta_frac = (gps[:, 2] + 1.0) / 2.0
    return ElementKit(b=bmat, wdet=hx * hy * hz / 8.0, n=nmat,
                      zeta_frac=zeta_frac, hx=hx, hy=hy, hz=hz, scale=scale)


def element_stiffness(kit: ElementKit, hooke: HookeTensor3) -> np.ndarray:
    ke = np.zeros((24, 24))
    for g in range(8):
        bg = kit.b[g]
        ke += kit.wdet * (bg.T @ hooke.c @ bg)
    return 0.5 * (ke + ke.T)


@dataclass
class Operator:
    """Assembled stiffness with its dof bookkeeping.

    ``k`` acts on the reduced dof vector (periodic dofs in cell mode, free
    dofs in plate mode); the quadratic energy of a field u is 0.5 u.K u.
    """

    k: sp.csr_matrix
    mode: str
    scale: float
    grid: VoxelGrid
    kit: ElementKit
    edof: np.ndarray          # (nelem, 24) reduced dof ids (-1 = eliminated)
    tensors: list[HookeTensor3]
    tensor_of_elem: np.ndarray  # (nelem,) index into tensors
    ndof: int
    clamped: tuple[str, ...] = ()
    node_free: np.ndarray | None = None  # plate mode: free flag per full node

    def project(self, x: np.ndarray) -> np.ndarray:
        """Remove the translation kernel (cell mode); identity in plate mode."""
        if self.mode != "cell":
            return x
        y = x.copy()
        for c in range(3):
            y[c::3] -= y[c::3].mean()
        return y

    def energy(self, u: np.ndarray) -> float:
        return float(0.5 * u @ (self.k @ u))


def _cell_node_ids(nx: int, ny: int, nz: int) -> np.ndarray:
    """(nx+1, ny+1, nz+1) periodic node ids (x/y wrapped)."""
    i = np.arange(nx + 1) % nx
    j = np.arange(ny + 1) % ny
    k = np.arange(nz + 1)
    return (i[:, None, None] + nx * (j[None, :, None] + ny * k[None, None, :]))


def _plate_node_ids(nx: int, ny: int, nz: int) -> np.ndarray:
    i = np.arange(nx + 1)
    j = np.arange(ny + 1)
    k = np.arange(nz + 1)
    return (i[:, None, None] + (nx + 1) * (j[None, :, None] + (ny + 1) * k[None, None, :]))


def _element_dofs(node_ids: np.ndarray, nx: int, ny: int, nz: int) -> np.ndarray:
    """(nelem, 24) dof ids from a (nx+1, ny+1, nz+1) node-id lattice."""
    corners = _local_corners().astype(int)
    ii = np.arange(nx)
    jj = np.arange(ny)
    kk = np.arange(nz)
    ei, ej, ek = np.meshgrid(ii, jj, kk, indexing="ij")
    # element order must match VoxelGrid flat order: x fastest, then y, then z
    ei = ei.transpose(2, 1, 0).ravel()
    ej = ej.transpose(2, 1, 0).ravel()
    ek = ek.transpose(2, 1, 0).ravel()
    nodes = np.empty((ei.size, 8), dtype=np.int64)
    for a, (dx, dy, dz) in enumerate(corners):
        nodes[:, a] = node_ids[ei + dx, ej + dy, ek + dz]
    dofs = (3 * nodes[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 24)
    return dofs


def assemble(grid: VoxelGrid, phases: dict[int, HookeTensor3], scale: float,
             mode: str | None = None, clamped: tuple[str, ...] = (),
             allow_soft: bool = False) -> Operator:
    """Assemble the scaled-gradient stiffness operator for a voxel grid.

    ``scale`` is gamma (cell mode) or h (plate mode). Plate mode requires a
    nonempty set of clamped edges from {"left", "right", "bottom", "top"}.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    mode = mode or grid.domain
    nx, ny, nz = grid.shape

    ids = sorted(int(p) for p in grid.phase_ids())
    missing = [p for p in ids if p not in phases]
    if missing:
        raise ValueError(f"grid references unknown phase ids {missing}")
    tensors = [phases[p] for p in ids]
    for p, t in zip(ids, tensors):
        if t.alpha <= 0.0 and not allow_soft:
            raise ValueError(
                f"phase {p} is not coercive (alpha={t.alpha:.3e}); "
                "pass allow_soft=True to accept it"
            )
    tensor_of_elem = np.searchsorted(np.array(ids), grid.data).astype(np.int32)

    # plate mode uses assumed-natural-strain transverse shear: the thin-limit
    # bending response at coarse in-plane resolution is otherwise polluted by
    # parasitic shear; cell problems see uniform loads and are unaffected.
    kit = element_kit(1.0 / nx, 1.0 / ny, 1.0 / nz, scale,
                      ans_shear=(mode == "plate"))
    kes = np.stack([element_stiffness(kit, t) for t in tensors])

    if mode == "cell":
        node_ids = _cell_node_ids(nx, ny, nz)
        ndof = 3 * nx * ny * (nz + 1)
        edof = _element_dofs(node_ids, nx, ny, nz)
        node_free = None
    elif mode == "plate":
        if not clamped:
            raise ValueError("plate mode requires at least one clamped edge")
        bad = [e for e in clamped if e not in EDGES]
        if bad:
            raise ValueError(f"unknown edge names {bad}")
        node_ids = _plate_node_ids(nx, ny, nz)
        edof_full = _element_dofs(node_ids, nx, ny, nz)
        free_node = np.ones(((nx + 1), (ny + 1), (nz + 1)), dtype=bool)
        if "left" in clamped:
            free_node[0, :, :] = False
        if "right" in clamped:
            free_node[nx, :, :] = False
        if "bottom" in clamped:
            free_node[:, 0, :] = False
        if "top" in clamped:
            free_node[:, ny, :] = False
        free_flat = np.zeros((nx + 1) * (ny + 1) * (nz + 1), dtype=bool)
        free_flat[node_ids[free_node]] = True
        dof_free = np.repeat(free_flat, 3)
        new_id = -np.ones(dof_free.size, dtype=np.int64)
        new_id[dof_free] = np.arange(dof_free.sum())
        edof = new_id[edof_full]
        ndof = int(dof_free.sum())
        node_free = free_flat
    else:
        raise ValueError(f"unknown mode {mode!r}")

    vals = kes[tensor_of_elem]  # (nelem, 24, 24)
    rows = np.broadcast_to(edof[:, :, None], vals.shape)
    cols = np.broadcast_to(edof[:, None, :], vals.shape)
    if mode == "plate":
        keep = (rows >= 0) & (cols >= 0)
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    k = sp.coo_matrix(
        (vals.ravel(), (rows.ravel().astype(np.int64), cols.ravel().astype(np.int64))),
        shape=(ndof, ndof),
    ).tocsr()
    k.sum_duplicates()

    return Operator(k=k, mode=mode, scale=scale, grid=grid, kit=kit, edof=edof,
                    tensors=tensors, tensor_of_elem=tensor_of_elem, ndof=ndof,
                    clamped=tuple(clamped), node_free=node_free)


# ---------------------------------------------------------------------------
# preconditioned conjugate gradients with kernel projection
# ---------------------------------------------------------------------------

@dataclass
class SolveInfo:
    iterations: int
    residual: float      # relative residual ||r|| / ||b||
    converged: bool


def _jacobi(k: sp.csr_matrix):
    d = k.diagonal().copy()
    d[d <= 0.0] = 1.0
    inv = 1.0 / d

    def apply(r):
        return inv * r

    return apply


def _block_jacobi(k: sp.csr_matrix):
    n = k.shape[0]
    if n % 3:
        return _jacobi(k)
    nb = n // 3
    coo = k.tocoo()
    same = (coo.row // 3) == (coo.col // 3)
    blocks = np.zeros((nb, 3, 3))
    np.add.at(blocks, (coo.row[same] // 3, coo.row[same] % 3, coo.col[same] % 3),
              coo.data[same])
    # guard empty blocks (fully eliminated nodes never appear here)
    sing = np.abs(np.linalg.det(blocks)) < 1e-300
    blocks[sing] = np.eye(3)
    inv = np.linalg.inv(blocks)

    def apply(r):
        return np.einsum("nij,nj->ni", inv, r.reshape(nb, 3)).ravel()

    return apply


def pcg(k: sp.csr_matrix, b: np.ndarray, precond: str = "jacobi",
        tol: float = 1e-10, max_iter: int | None = None,
        project=None, x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveInfo]:
    """Conjugate gradients with Jacobi or 3x3 block-Jacobi preconditioning.

    If ``project`` is given it must be an orthogonal projector onto the
    complement of the operator kernel; it is applied to the right-hand side
    and re-applied to the iterate every iteration.
    """
    n = k.shape[0]
    if max_iter is None:
        max_iter = max(200, int(50 * np.sqrt(n)))
    apply_m = _block_jacobi(k) if precond == "block" else _jacobi(k)

    if project is not None:
        b = project(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(iterations=0, residual=0.0, converged=True)

    x = np.zeros(n) if x0 is None else x0.copy()
    if project is not None:
        x = project(x)
    r = b - k @ x
    if project is not None:
        r = project(r)
    z = apply_m(r)
    p = z.copy()
    rz = float(r @ z)
    it = 0
    res = np.linalg.norm(r) / bnorm
    while res > tol and it < max_iter:
        ap = k @ p
        if project is not None:
            ap = project(ap)
        pap = float(p @ ap)
        if pap <= 0.0:
            raise ValueError(
                "operator is not positive definite on the search space "
                f"(p.Ap = {pap:.3e} at iteration {it})"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        it += 1
        if project is not None and it % 50 == 0:
            x = project(x)
            r = project(b - k @ x)
        z = apply_m(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        res = np.linalg.norm(r) / bnorm
    if project is not None:
        x = project(x)
    return x, SolveInfo(iterations=it, residual=float(res), converged=res <= tol)


def solve(op: Operator, rhs: np.ndarray, tol: float = 1e-10,
          max_iter: int | None = None, precond: str = "jacobi"
          ) -> tuple[np.ndarray, SolveInfo]:
    """Solve K u = rhs; cell-mode kernel handled by projection.

    Never raises on slow convergence: the achieved residual is reported and
    the caller decides.
    """
    project = op.project if op.mode == "cell" else None
    return pcg(op.k, rhs, precond=precond, tol=tol, max_iter=max_iter,
               project=project)


# ---------------------------------------------------------------------------
# cell corrector loads
# ---------------------------------------------------------------------------

def corrector_loads(op: Operator) -> tuple[np.ndarray, np.ndarray]:
    """Load couplings for the six membrane/curvature basis strains.

    Returns (G, E0): G[:, a] = integral of B^T C eps_a over the grid
    (so the corrector equation reads K psi_a = -G[:, a]) and
    E0[a, b] = integral of eps_a . C eps_b (twice the zero-corrector energy).
    The basis strain is eps_a(x3) = mandel3(iota(M1_a + x3 M2_a)).
    """
    grid, kit = op.grid, op.kit
    nx, ny, nz = grid.shape
    ntens = len(op.tensors)

    # load vectors at the 8 gauss points for each layer: (nz, 8, 6, 6)
    z0 = -0.5 + np.arange(nz) * kit.hz
    x3 = z0[:, None] + kit.zeta_frac[None, :] * kit.hz   # (nz, 8)
    eps = np.zeros((nz, 8, 6, 6))                        # [k, gp, :, load]
    for a in range(3):
        eps[:, :, :, a] = _EMBED[:, a]
        eps[:, :, :, 3 + a] = x3[:, :, None] * _EMBED[:, a]

    g_tab = np.zeros((ntens, nz, 24, 6))
    e0_tab = np.zeros((ntens, nz, 6, 6))
    for t, hooke in enumerate(op.tensors):
        for g in range(8):
            ce = np.einsum("ij,kjl->kil", hooke.c, eps[:, g])     # (nz, 6, 6)
            g_tab[t] += kit.wdet * np.einsum("ia,kil->kal", kit.b[g], ce)
            e0_tab[t] += kit.wdet * np.einsum("kia,kil->kal", eps[:, g], ce)

    layer_of_elem = np.repeat(np.arange(nz), nx * ny)
    gvals = g_tab[op.tensor_of_elem, layer_of_elem]   # (nelem, 24, 6)
    gmat = np.zeros((op.ndof, 6))
    if op.mode == "plate":
        keep = op.edof >= 0
        np.add.at(gmat, op.edof[keep], gvals[keep])
    else:
        np.add.at(gmat, op.edof, gvals)

    counts = np.zeros((ntens, nz), dtype=np.int64)
    np.add.at(counts, (op.tensor_of_elem, layer_of_elem), 1)
    e0 = np.einsum("tk,tkab->ab", counts, e0_tab)
    return gmat, 0.5 * (e0 + e0.T)


# ---------------------------------------------------------------------------
# clamped plate solves with body force
# ---------------------------------------------------------------------------

def body_load(op: Operator, f) -> np.ndarray:
    """Load vector of the force functional integral f . (u1, u2, h u3)."""
    f = np.asarray(f, dtype=float).reshape(3)
    nodal = op.kit.wdet * np.array([f[0], f[1], op.scale * f[2]])
    ell = np.zeros(op.ndof)
    vals = np.broadcast_to(np.tile(nodal, 8), (op.edof.shape[0], 24))
    if op.mode == "plate":
        keep = op.edof >= 0
        np.add.at(ell, op.edof[keep], vals[keep])
    else:
        np.add.at(ell, op.edof, vals)
    return ell


def solve_clamped(grid: VoxelGrid, phases: dict[int, HookeTensor3], h: float,
                  f, clamped: tuple[str, ...], tol: float = 1e-12,
                  max_iter: int | None = None, precond: str = "block",
                  allow_soft: bool = False):
    """Minimize the force-loaded scaled energy over the clamped plate.

    Returns (operator, free-dof minimizer, energy value, solver info); the
    energy is the discrete functional value 0.5 u.K u - l.u.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    op = assemble(grid, phases, scale=h, mode="plate", clamped=clamped,
                  allow_soft=allow_soft)
    ell = body_load(op, f)
    u, info = pcg(op.k, ell, precond=precond, tol=tol, max_iter=max_iter)
    if not info.converged:
        raise SolverError(
            f"clamped solve stalled at residual {info.residual:.3e} "
            f"after {info.iterations} iterations"
        )
    energy = float(0.5 * u @ (op.k @ u) - ell @ u)
    return op, u, energy, info


def expand_field(op: Operator, u: np.ndarray) -> np.ndarray:
    """Reduced dof vector -> full nodal field (nx+1, ny+1, nz+1, 3)."""
    nx, ny, nz = op.grid.shape
    if op.mode == "cell":
        node_ids = _cell_node_ids(nx, ny, nz)
        vals = u.reshape(-1, 3)
        return vals[node_ids]
    full = np.zeros(((nx + 1) * (ny + 1) * (nz + 1), 3))
    full[op.node_free] = u.reshape(-1, 3)
    node_ids = _plate_node_ids(nx, ny, nz)
    return full[node_ids]


def restrict_field(op: Operator, field: np.ndarray) -> np.ndarray:
    """Full nodal field -> reduced dof vector (inverse of expand on its range)."""
    nx, ny, nz = op.grid.shape
    if op.mode == "cell":
        vals = field[:nx, :ny, :, :]
        # transpose to [k, j, i, comp]: flat node order i + nx*(j + ny*k)
        return np.ascontiguousarray(vals.transpose(2, 1, 0, 3)).reshape(-1)
    flat = np.ascontiguousarray(field.transpose(2, 1, 0, 3)).reshape(-1, 3)
    return flat[op.node_free].ravel()


# ---------------------------------------------------------------------------
# legacy VTK structured-points dump
# ---------------------------------------------------------------------------

def dump_vtk(field: np.ndarray, path, name: str = "displacement",
             origin=(0.0, 0.0, -0.5), title: str = "platehom field") -> None:
    """Write a nodal 3-vector field as legacy ASCII VTK STRUCTURED_POINTS.

    Point order is x-fastest, then y, then z; one VECTORS record; numbers
    printed with %.17g.
    """
    npx, npy, npz, _ = field.shape
    sx = 1.0 / max(npx - 1, 1)
    sy = 1.0 / max(npy - 1, 1)
    sz = 1.0 / max(npz - 1, 1)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {npx} {npy} {npz}\n")
        fh.write(f"ORIGIN {origin[0]:.17g} {origin[1]:.17g} {origin[2]:.17g}\n")
        fh.write(f"SPACING {sx:.17g} {sy:.17g} {sz:.17g}\n")
        fh.write(f"POINT_DATA {npx * npy * npz}\n")
        fh.write(f"VECTORS {name} double\n")
        for k in range(npz):
            for j in range(npy):
                for i in range(npx):
                    v = field[i, j, k]
                    fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
