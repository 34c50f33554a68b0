"""Homogenized plate stiffness from periodic cell corrector problems.

For a gamma in (0, inf) and a periodic N-phase cell, six corrector problems
(one per membrane/curvature Mandel basis load) yield the 6x6 form A with
value z.Az equal to the infimum of the cell energy; the 1/2 inside the 3D
density is absorbed into A, so the coercivity/boundedness eigenvalue bounds
[alpha/12, beta] apply to A directly.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fem3d
from .algebra import HookeTensor3, PlateForm, evaluate_form, laminate_x3_form
from .fem3d import SolverError
from .microstructure import VoxelGrid, volume_fractions

BASIS_TAG = "mandel-pair-v1"
CONVENTION_NOTE = (
    "matrix A gives the homogenized energy value z.Az directly (the 1/2 of "
    "the 3D density is absorbed); Mandel order (m11, m22, sqrt2 m12) for each "
    "of the membrane and curvature slots"
)


@dataclass(frozen=True)
class HomogenizedForm:
    """A PlateForm plus the provenance of the cell computation."""

    form: PlateForm
    gamma: float
    resolution: tuple[int, int, int]
    fractions: tuple[float, ...]
    residuals: tuple[float, ...]
    phase_ids: tuple[int, ...]
    phase_digests: tuple[str, ...]

    @property
    def a(self) -> np.ndarray:
        return self.form.a


def evaluate(form, m1, m2) -> float:
    """Q(M1, M2) = z.Az; accepts a PlateForm or a HomogenizedForm."""
    if isinstance(form, HomogenizedForm):
        form = form.form
    return evaluate_form(form, m1, m2)


def _solve_correctors(op: fem3d.Operator, tol: float, max_iter=None):
    gmat, e0 = fem3d.corrector_loads(op)
    u = np.zeros((op.ndof, 6))
    residuals = np.zeros(6)
    for a in range(6):
        ua, info = fem3d.solve(op, -gmat[:, a], tol=tol, max_iter=max_iter)
        if not info.converged:
            raise SolverError(
                f"corrector {a} stalled at residual {info.residual:.3e} "
                f"after {info.iterations} iterations"
            )
        u[:, a] = ua
        residuals[a] = info.residual
    return gmat, e0, u, residuals


def _form_matrix(e0, gmat, u, ku) -> np.ndarray:
    # A_ab = 0.5 * int (eps_a + B psi_a) . C (eps_b + B psi_b); the cross
    # version below is symmetric by construction and second-order accurate
    # in the corrector error.
    a = 0.5 * (e0 + gmat.T @ u + u.T @ gmat + u.T @ ku)
    defect = np.max(np.abs(a - a.T))
    scale = max(np.max(np.abs(a)), 1e-300)
    if defect > 1e-12 * scale:
        raise AssertionError(f"form symmetry defect {defect:.3e} exceeds 1e-12 rel")
    return 0.5 * (a + a.T)


def homogenize(grid: VoxelGrid, phases: dict[int, HookeTensor3], gamma: float,
               tol: float = 1e-10, max_iter=None,
               allow_soft: bool = False) -> HomogenizedForm:
    """Compute the homogenized plate form of a periodic cell at given gamma."""
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    if grid.domain != "cell":
        raise ValueError("homogenize expects a cell-domain grid")
    op = fem3d.assemble(grid, phases, scale=gamma, mode="cell",
                        allow_soft=allow_soft)
    gmat, e0, u, residuals = _solve_correctors(op, tol, max_iter)
    a = _form_matrix(e0, gmat, u, op.k @ u)
    ids = sorted(int(p) for p in grid.phase_ids())
    return HomogenizedForm(
        form=PlateForm(a=a, gamma=gamma),
        gamma=gamma,
        resolution=grid.shape,
        fractions=tuple(volume_fractions(grid, ids).tolist()),
        residuals=tuple(residuals.tolist()),
        phase_ids=tuple(ids),
        phase_digests=tuple(phases[p].digest() for p in ids),
    )


def voigt_form(grid: VoxelGrid, phases: dict[int, HookeTensor3]) -> PlateForm:
    """Upper-bound form with correctors forced to zero (gamma-independent)."""
    op = fem3d.assemble(grid, phases, scale=1.0, mode="cell", allow_soft=True)
    _, e0 = fem3d.corrector_loads(op)
    return PlateForm(a=0.5 * e0, gamma="voigt")


def x3_layers(grid: VoxelGrid, phases: dict[int, HookeTensor3]
              ) -> list[tuple[HookeTensor3, float, float]]:
    """Layer decomposition of an x3-laminated grid (errors if in-plane varying)."""
    arr = grid.as_3d()
    layers = []
    hz = 1.0 / grid.nz
    for k in range(grid.nz):
        sl = arr[:, :, k]
        pid = int(sl.flat[0])
        if not np.all(sl == pid):
            raise ValueError("grid varies in-plane; not an x3 laminate")
        z0 = -0.5 + k * hz
        if layers and layers[-1][0] is phases[pid]:
            h, a, _ = layers[-1]
            layers[-1] = (h, a, z0 + hz)
        else:
            layers.append((phases[pid], z0, z0 + hz))
    return layers


def kl_limit_form(grid: VoxelGrid, phases: dict[int, HookeTensor3]) -> PlateForm:
    """Exact limit form for in-plane-invariant (x3-layered) microstructures."""
    return laminate_x3_form(x3_layers(grid, phases))


@dataclass
class BoundsReport:
    eig_min: float
    eig_max: float
    coercive_floor: float          # alpha / 12
    bounded_ceiling: float         # beta
    coercivity_checked: bool
    coercivity_ok: bool
    boundedness_ok: bool
    voigt_ok: bool | None
    voigt_margin: float | None
    passed: bool


def check_bounds(form, alpha: float, beta: float, voigt: PlateForm | None = None,
                 slack: float = 1e-9) -> BoundsReport:
    """Verify eigenvalues of A against [alpha/12, beta] and the Voigt ceiling.

    With non-coercive (soft) phases pass alpha <= 0: the coercivity check is
    skipped with a warning, mirroring the bound's precondition.
    """
    a = form.a if not isinstance(form, HomogenizedForm) else form.form.a
    eig = np.linalg.eigvalsh(a)
    check_coercivity = alpha > 0.0
    if not check_coercivity:
        warnings.warn("soft phase present: coercivity bound skipped", stacklevel=2)
    coercivity_ok = bool(eig[0] >= alpha / 12.0 - slack) if check_coercivity else True
    boundedness_ok = bool(eig[-1] <= beta + slack)
    voigt_ok = None
    voigt_margin = None
    if voigt is not None:
        diff = np.linalg.eigvalsh(voigt.a - a)
        voigt_margin = float(diff[0])
        voigt_ok = bool(voigt_margin >= -slack)
    passed = coercivity_ok and boundedness_ok and (voigt_ok is not False)
    return BoundsReport(
        eig_min=float(eig[0]), eig_max=float(eig[-1]),
        coercive_floor=alpha / 12.0, bounded_ceiling=beta,
        coercivity_checked=check_coercivity, coercivity_ok=coercivity_ok,
        boundedness_ok=boundedness_ok, voigt_ok=voigt_ok,
        voigt_margin=voigt_margin, passed=passed,
    )


@dataclass
class SweepResult:
    gammas: list[float]
    forms: list[HomogenizedForm | None]
    errors: dict[float, str] = field(default_factory=dict)
    gamma0_estimate: np.ndarray | None = None
    gammainf_estimate: np.ndarray | None = None


def _aitken(m0: np.ndarray, m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Entrywise Aitken delta-squared extrapolation with safe fallback."""
    d1 = m1 - m0
    d2 = m2 - m1
    den = d2 - d1
    out = m2.copy()
    ok = np.abs(den) > 1e-14 * (np.abs(m2) + 1e-300)
    out[ok] = m2[ok] - d2[ok] ** 2 / den[ok]
    return out


def gamma_sweep(grid: VoxelGrid, phases: dict[int, HookeTensor3], gammas,
                tol: float = 1e-10, allow_soft: bool = False) -> SweepResult:
    """Homogenize over a sorted list of gammas; endpoint behavior is
    Aitken-extrapolated, never solved at gamma = 0 or infinity."""
    gammas = [float(g) for g in gammas]
    if any(g <= 0 for g in gammas):
        raise ValueError("all gammas must be positive")
    if sorted(gammas) != gammas:
        raise ValueError("gammas must be sorted ascending")
    result = SweepResult(gammas=gammas, forms=[])
    for g in gammas:
        try:
            result.forms.append(homogenize(grid, phases, g, tol=tol,
                                           allow_soft=allow_soft))
        except SolverError as exc:
            result.forms.append(None)
            result.errors[g] = str(exc)
    good = [f for f in result.forms if f is not None]
    if len(good) >= 3:
        result.gamma0_estimate = _aitken(good[2].a, good[1].a, good[0].a)
        result.gammainf_estimate = _aitken(good[-3].a, good[-2].a, good[-1].a)
    elif good:
        result.gamma0_estimate = good[0].a.copy()
        result.gammainf_estimate = good[-1].a.copy()
    return result


# ---------------------------------------------------------------------------
# output formats
# ---------------------------------------------------------------------------

def form_to_dict(hf: HomogenizedForm) -> dict:
    return {
        "gamma": hf.gamma,
        "basis": BASIS_TAG,
        "matrix": hf.a.ravel().tolist(),
        "fractions": list(hf.fractions),
        "resolution": list(hf.resolution),
        "residuals": list(hf.residuals),
        "phase_ids": list(hf.phase_ids),
        "phase_digests": list(hf.phase_digests),
        "note": CONVENTION_NOTE,
    }


def dump_form(hf: HomogenizedForm, path) -> None:
    with open(path, "w") as f:
        json.dump(form_to_dict(hf), f, indent=1)


def load_form(path) -> PlateForm:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("basis", BASIS_TAG) != BASIS_TAG:
        raise ValueError(f"unsupported basis tag {doc.get('basis')!r}")
    a = np.array(doc["matrix"], dtype=float).reshape(6, 6)
    return PlateForm(a=a, gamma=doc.get("gamma", "limit"))


def _upper_triangle(a: np.ndarray) -> list[float]:
    iu = np.triu_indices(6)
    return a[iu].tolist()


UPPER_HEADER = [f"a{i + 1}{j + 1}" for i, j in zip(*np.triu_indices(6))]


def dump_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# basis: {BASIS_TAG}\n")
        w = csv.writer(f)
        w.writerow(["gamma", *UPPER_HEADER, "eig_min", "eig_max"])
        for g, hf in zip(result.gammas, result.forms):
            if hf is None:
                w.writerow([g] + ["nan"] * 23)
                continue
            eig = np.linalg.eigvalsh(hf.a)
            w.writerow([g, *_upper_triangle(hf.a), eig[0], eig[-1]])
        for label, est in (("gamma->0 est.", result.gamma0_estimate),
                           ("gamma->inf est.", result.gammainf_estimate)):
            if est is not None:
                eig = np.linalg.eigvalsh(0.5 * (est + est.T))
                w.writerow([label, *_upper_triangle(est), eig[0], eig[-1]])
