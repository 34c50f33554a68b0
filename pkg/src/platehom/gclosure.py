"""Sampling the set of periodically homogenized mixtures at fixed volume
fraction, and the patchwork construction with windowed local recovery.

The sampled set is exactly that: a finite family of homogenized forms from
parametric microstructure generators, each adjusted to the target fractions.
The patchwork tiles each patch of the plate with a periodic cell; windowed
recovery re-homogenizes one period cut strictly inside each patch and checks
it against the patch's target form, which is the constructive content of the
locality statement.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import cell as cellmod
from .algebra import HookeTensor3
from .fem3d import SolverError
from .microstructure import (VoxelGrid, adjust_volume_fraction, load_grid,
                             make_checkerboard, make_laminate, tile,
                             volume_fractions, window)


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str                      # "laminate" | "checkerboard"
    axis: str | float | None = None
    period: int | None = None
    label: str = ""

    def describe(self) -> str:
        if self.label:
            return self.label
        if self.kind == "laminate":
            axis = self.axis if isinstance(self.axis, str) else f"{self.axis:g}"
            return f"laminate:{axis}"
        return f"checkerboard:{self.period}"

    @staticmethod
    def parse(token: str) -> "GeneratorSpec":
        kind, _, arg = token.partition(":")
        if kind == "laminate":
            axis: str | float = arg if arg in ("x1", "x2", "x3") else float(arg)
            return GeneratorSpec(kind="laminate", axis=axis)
        if kind == "checkerboard":
            return GeneratorSpec(kind="checkerboard", period=int(arg))
        raise ValueError(f"unknown generator {token!r}")


def build_generator(spec: GeneratorSpec, theta, resolution) -> VoxelGrid:
    if spec.kind == "laminate":
        return make_laminate(spec.axis, theta, resolution)
    if spec.kind == "checkerboard":
        nph = np.asarray(theta).size
        return make_checkerboard(spec.period, resolution, nphases=nph)
    raise ValueError(f"unknown generator kind {spec.kind!r}")


@dataclass
class SampleEntry:
    generator: str
    gamma: float
    form: cellmod.HomogenizedForm | None
    realized_theta: tuple[float, ...]
    error: str | None = None


@dataclass
class SampleSet:
    theta: tuple[float, ...]
    entries: list[SampleEntry] = field(default_factory=list)


def sample_ptheta(phases: dict[int, HookeTensor3], theta, generators,
                  gammas, resolution=(8, 8, 8), tol: float = 1e-10,
                  allow_soft: bool = False) -> SampleSet:
    """One homogenized form per (generator, gamma), every generator adjusted
    to the target fractions first; failures are recorded, not raised."""
    theta = np.asarray(theta, dtype=float)
    out = SampleSet(theta=tuple(theta.tolist()))
    ids = sorted(phases)
    for spec in generators:
        grid = build_generator(spec, theta, resolution)
        grid = adjust_volume_fraction(grid, theta, phase_ids=ids)
        realized = tuple(volume_fractions(grid, ids).tolist())
        for g in gammas:
            try:
                hf = cellmod.homogenize(grid, phases, float(g), tol=tol,
                                        allow_soft=allow_soft)
                out.entries.append(SampleEntry(generator=spec.describe(),
                                               gamma=float(g), form=hf,
                                               realized_theta=realized))
            except SolverError as exc:
                out.entries.append(SampleEntry(generator=spec.describe(),
                                               gamma=float(g), form=None,
                                               realized_theta=realized,
                                               error=str(exc)))
    return out


def dump_samples_csv(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# basis: {cellmod.BASIS_TAG}\n")
        w = csv.writer(f)
        w.writerow(["generator", "gamma", *cellmod.UPPER_HEADER,
                    "eig_min", "eig_max", "error"])
        for e in samples.entries:
            if e.form is None:
                w.writerow([e.generator, e.gamma] + ["nan"] * 23 + [e.error])
                continue
            eig = np.linalg.eigvalsh(e.form.a)
            iu = np.triu_indices(6)
            w.writerow([e.generator, e.gamma, *e.form.a[iu].tolist(),
                        eig[0], eig[-1], ""])


# ---------------------------------------------------------------------------
# patchwork construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Patch:
    cell: VoxelGrid
    rect: tuple[int, int, int, int]    # (i0, i1, j0, j1) in target voxels
    label: str = ""


@dataclass(frozen=True)
class PatchworkSpec:
    resolution: tuple[int, int, int]
    gamma: float
    patches: tuple[Patch, ...]


def patchwork_construct(spec: PatchworkSpec) -> VoxelGrid:
    """Plate grid whose restriction to each patch is the periodic extension
    of that patch's cell."""
    return tile([(p.cell, p.rect) for p in spec.patches], spec.resolution)


@dataclass
class PatchReport:
    label: str
    window_origin: tuple[int, int]
    form_gap: float
    theta_exact: bool
    window_theta: tuple[float, ...]
    target_theta: tuple[float, ...]


def windowed_recovery(grid: VoxelGrid, spec: PatchworkSpec,
                      phases: dict[int, HookeTensor3],
                      margin_periods: int = 1, tol: float = 1e-10,
                      allow_soft: bool = False) -> list[PatchReport]:
    """Re-homogenize one period inside each patch and compare to the target.

    The window is period-aligned and at least ``margin_periods`` periods from
    every patch interface; a patch too small for that margin is an error.
    """
    reports = []
    ids = sorted(phases)
    for p in spec.patches:
        i0, i1, j0, j1 = p.rect
        px, py = p.cell.nx, p.cell.ny
        repsx = (i1 - i0) // px
        repsy = (j1 - j0) // py
        mx = (repsx - 1) // 2
        my = (repsy - 1) // 2
        if mx < margin_periods or my < margin_periods:
            raise ValueError(
                f"patch {p.label or p.rect}: window would sit within "
                f"{margin_periods} period(s) of an interface"
            )
        wi = i0 + mx * px
        wj = j0 + my * py
        sub = window(grid, wi, wj, px, py)
        target = cellmod.homogenize(p.cell, phases, spec.gamma, tol=tol,
                                    allow_soft=allow_soft)
        got = cellmod.homogenize(sub, phases, spec.gamma, tol=tol,
                                 allow_soft=allow_soft)
        gap = float(np.max(np.abs(got.a - target.a))
                    / max(np.max(np.abs(target.a)), 1e-300))

        # coarse in-plane averaging: integer counts must match the tiled cell
        region = grid.as_3d()[i0:i1, j0:j1, :]
        reps = repsx * repsy
        cell3 = p.cell.as_3d()
        exact = all(
            int(np.count_nonzero(region == pid))
            == reps * int(np.count_nonzero(cell3 == pid))
            for pid in ids
        )
        wt = tuple(volume_fractions(sub, ids).tolist())
        tt = tuple(volume_fractions(p.cell, ids).tolist())
        reports.append(PatchReport(label=p.label or str(p.rect),
                                   window_origin=(wi, wj), form_gap=gap,
                                   theta_exact=exact, window_theta=wt,
                                   target_theta=tt))
    return reports


# ---------------------------------------------------------------------------
# patchwork spec file
# ---------------------------------------------------------------------------

def load_patchwork_spec(path) -> PatchworkSpec:
    """Spec JSON: {"resolution": [NX,NY,NZ], "gamma": g, "patches":
    [{"rect": [i0,i1,j0,j1], "micro": <path or inline grid doc>, "label": s}]}.
    Relative micro paths resolve against the spec file's directory."""
    import os

    with open(path) as f:
        doc = json.load(f)
    base = os.path.dirname(os.path.abspath(path))
    patches = []
    for pd in doc["patches"]:
        micro = pd["micro"]
        if isinstance(micro, str):
            mp = micro if os.path.isabs(micro) else os.path.join(base, micro)
            cell_grid = load_grid(mp)
        else:
            cell_grid = VoxelGrid(nx=int(micro["nx"]), ny=int(micro["ny"]),
                                  nz=int(micro["nz"]),
                                  data=np.array(micro["data"], dtype=np.int32),
                                  domain="cell")
        patches.append(Patch(cell=cell_grid, rect=tuple(pd["rect"]),
                             label=pd.get("label", "")))
    return PatchworkSpec(resolution=tuple(doc["resolution"]),
                         gamma=float(doc["gamma"]), patches=tuple(patches))


def dump_recovery_report(reports: list[PatchReport], path) -> None:
    doc = {"basis": cellmod.BASIS_TAG,
           "patches": [r.__dict__ for r in reports]}
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
