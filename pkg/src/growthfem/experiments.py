"""Case-study presets and the end-to-end branch exploration driver.

A case run computes the annular branch first, locates the growth values at
which its eigenplanes lose stability, then works through a queue of
discovery tasks.  Every discovered state is continued backward until it
disappears and forward to the end of the range; a minimizer that turns into
a saddle on the way spawns a further discovery along its unstable direction.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .continuation import (
    BranchRecord,
    ContinuationConfig,
    ContinuationError,
    PerturbationSpec,
    Study,
    collapse_path,
    fit_pitchfork,
    minimal_energy_path,
    snapped_schedule,
)
from .material import MaterialParams
from .mesh import build_annulus, write_snapshot
from .optimizer import SolveConfig, SolveResult, SolverError
from .spectral import Classification

logger = logging.getLogger(__name__)


@dataclass
class MeshSpec:
    r_in: float = 0.5
    r_out: float = 1.0
    n_radial: int = 12
    n_circ: int = 92
    growing_layers: int = 2
    split: str = "uniform"

    def build(self):
        return build_annulus(
            self.r_in, self.r_out, self.n_radial, self.n_circ, self.growing_layers, self.split
        )


@dataclass
class Anchor:
    """A growth value, either absolute or relative to an instability of ``s0``.

    ``onset_index`` counts eigenvalues of ``H(s0)`` from 1; an eigenplane
    occupies two consecutive indices, so the second plane starts at 3.
    """

    g: float | None = None
    onset_index: int | None = None
    offset: float = 0.0

    def __post_init__(self):
        if (self.g is None) == (self.onset_index is None):
            raise ValueError("anchor needs exactly one of g or onset_index")


@dataclass
class Discovery:
    at: Anchor
    base: str = "s0"
    eigen_indices: tuple = (1,)
    gamma: float = 0.3
    in_plane_angles: tuple = (0.0,)
    max_iter_gd: int = 200_000


@dataclass
class CasePreset:
    name: str
    stiffness_ratio: float
    g_start: float
    g_max: float
    onset_indices: tuple = (1,)
    onset_scan: tuple = (1.1, 2.0)
    discoveries: list = field(default_factory=list)
    dg: float = 0.01
    dg_fine: float = 0.002
    fine_span: float = 0.02
    dg_backward: float = -0.002
    g_min: float = 1.0
    spawn_on_saddle: bool = True
    spawn_gamma: float = 0.3
    spawn_max_iter_gd: int = 400_000
    follow_successors: bool = False
    successor_max_iter_gd: int = 100_000
    max_branches: int = 16
    continuation_max_iter_gd: int = 500
    warn_above: float | None = None
    expected: tuple = ()
    snapshot_g: tuple = ()
    bulk_to_shear: float = 1.0

    def __post_init__(self):
        if not self.stiffness_ratio > 0:
            raise ValueError("stiffness ratio must be positive")
        if not self.g_max > self.g_start:
            raise ValueError("empty g schedule: g_max must exceed g_start")
        if self.dg <= 0 or self.dg_fine <= 0 or self.dg_backward >= 0:
            raise ValueError("dg and dg_fine must be positive, dg_backward negative")

    def material(self) -> MaterialParams:
        return MaterialParams.from_ratio(
            self.stiffness_ratio, mu_g=1.0, K_g=self.bulk_to_shear
        )


def _plane_discoveries(indices, gamma, angles_first=(0.0,), first_offset=0.02,
                       later_offset=0.005, later_max_iter_gd=2000):
    """One discovery per eigenplane of ``s0``.

    The first plane yields a minimizer, reached by a long descent.  Later
    planes yield saddles born close to their onset; a long descent would slide
    off them, so only a short descent precedes Newton.
    """
    out = []
    for n, idx in enumerate(indices):
        first = n == 0
        out.append(
            Discovery(
                at=Anchor(onset_index=idx, offset=first_offset if first else later_offset),
                eigen_indices=(idx,),
                gamma=gamma,
                in_plane_angles=angles_first if first else (0.0,),
                max_iter_gd=200_000 if first else later_max_iter_gd,
            )
        )
    return out


def case_preset(case: int) -> CasePreset:
    """Presets for stiffness ratios 0.1, 0.4 and 1.

    Discovery points are placed relative to the computed instabilities of
    ``s0`` rather than at fixed growth values, so the same protocol applies
    whatever the mesh and bulk modulus.
    """
    if case == 1:
        return CasePreset(
            name="case1",
            stiffness_ratio=0.1,
            g_start=1.2,
            g_max=2.0,
            onset_indices=(1, 3, 5),
            onset_scan=(1.1, 2.0),
            discoveries=_plane_discoveries((1, 3, 5), 0.3, angles_first=(0.0, 45.0, 90.0)),
            spawn_on_saddle=False,
            warn_above=1.9,
            expected=("s0", "s5", "s6", "s4"),
        )
    if case == 2:
        return CasePreset(
            name="case2",
            stiffness_ratio=0.4,
            g_start=1.3,
            g_max=2.1,
            onset_indices=(1, 3),
            onset_scan=(1.2, 2.2),
            discoveries=_plane_discoveries((1, 3), 0.3),
            spawn_on_saddle=True,
            expected=("s0", "s5", "s6", "s_star", "s_1", "s_2", "s_4a", "s_6"),
        )
    if case == 3:
        plane_starts = (3, 5, 7, 9, 11, 13)
        return CasePreset(
            name="case3",
            stiffness_ratio=1.0,
            g_start=1.5,
            g_max=2.2,
            onset_indices=(1,),
            onset_scan=(1.4, 2.4),
            discoveries=[
                Discovery(at=Anchor(onset_index=1, offset=0.002), eigen_indices=(1,), gamma=1e-3),
                Discovery(at=Anchor(onset_index=1, offset=0.002), eigen_indices=plane_starts, gamma=1.0),
            ],
            dg=0.005,
            dg_fine=0.005,
            fine_span=0.0,
            dg_backward=-0.005,
            spawn_on_saddle=False,
            follow_successors=True,
            expected=("s0", "s_6", "s_1"),
        )
    raise ValueError(f"unknown case {case!r}; expected 1, 2 or 3")


def absolute_g_units_note() -> str:
    return (
        "Moduli are normalized so that the growing layer has mu_g = 1 and "
        "K_g = bulk_to_shear (1 by default); the non-growing layer is scaled "
        "by the stiffness ratio. Energies are reported both raw and divided by "
        "E(s0) at the same g; the ratio does not depend on the overall modulus "
        "scale. The bulk-to-shear ratio inside a layer does move the critical "
        "growth values."
    )


@dataclass
class CaseRun:
    preset: CasePreset
    study: Study
    onsets: dict
    branches: dict  # label -> BranchRecord
    path: list
    summary: dict
    notes: list

    def branch(self, label: str) -> BranchRecord:
        return self.branches[label]

    def all_results(self):
        for br in self.branches.values():
            for s in br.steps:
                yield br.label, s.result
        for label, res in self.summary.get("_extra_results", []):
            yield label, res


def _auto_label(step, used: set) -> str:
    c = step.census.crease_count
    n = step.census.indentation_count
    if c == 0:
        base = f"s{step.wavenumber}" if step.wavenumber and n == step.wavenumber else "s_star"
    else:
        base = f"s_{c}"
    if base not in used:
        return base
    for letter in "bcdefghijklmnopqrstuvwxyz":
        if base + letter not in used:
            return base + letter
    raise ContinuationError("ran out of labels")


class Explorer:
    """Queue-driven branch discovery for one case."""

    def __init__(self, preset: CasePreset, mesh_spec: MeshSpec | None = None,
                 solve_config: SolveConfig | None = None):
        self.preset = preset
        self.mesh = (mesh_spec or MeshSpec()).build()
        base_cfg = solve_config or SolveConfig(trace_every=1000)
        self.solve_config = base_cfg
        cont = ContinuationConfig(solve=base_cfg)
        self.study = Study(self.mesh, preset.material(), cont)
        self.branches: dict[str, BranchRecord] = {}
        self.notes: list[str] = []
        self.extra_results: list[tuple[str, SolveResult]] = []
        self.discovery_log: list[dict] = []
        self.onsets: dict[int, float] = {}

    # -- helpers ------------------------------------------------------
    def _grid(self, g: float) -> float:
        h = self.preset.dg_fine
        return round(round(g / h) * h, 12)

    def _cfg(self, max_iter_gd: int) -> SolveConfig:
        c = self.solve_config
        return SolveConfig(
            tol=c.tol, max_iter_gd=max_iter_gd, max_iter_newton=c.max_iter_newton,
            eig_refresh_interval=c.eig_refresh_interval, step_safety=c.step_safety,
            fallback_displacement=c.fallback_displacement, eig_tol=c.eig_tol,
            trace_every=c.trace_every,
        )

    def resolve(self, anchor: Anchor) -> float:
        if anchor.g is not None:
            return self._grid(anchor.g)
        if anchor.onset_index not in self.onsets:
            raise ContinuationError(f"onset {anchor.onset_index} was not located")
        return self._grid(self.onsets[anchor.onset_index] + anchor.offset)

    def base_state(self, label: str, g: float) -> SolveResult | None:
        if label == "s0":
            return self.study.reference(g)
        br = self.branches.get(label)
        step = br.at(g) if br else None
        return step.result if step else None

    # -- stages -------------------------------------------------------
    def locate_onsets(self):
        lo, hi = self.preset.onset_scan
        for idx in self.preset.onset_indices:
            try:
                self.onsets[idx] = self.study.find_onset(lo, hi, index=idx, dg=0.02)
                logger.info("%s: eigenvalue %d of H(s0) crosses zero at g=%.4f",
                            self.preset.name, idx, self.onsets[idx])
            except ContinuationError as exc:
                self.notes.append(f"onset {idx}: {exc}")

    def discover(self, base: str, g: float, spec: PerturbationSpec, max_iter_gd: int,
                 origin: str) -> str | None:
        """Perturb, solve, and adopt the result as a new branch when it is new."""
        state = self.base_state(base, g)
        entry = {"origin": origin, "base": base, "g": g, "eigen_index": spec.eigen_index,
                 "gamma": spec.gamma, "angle": spec.in_plane_angle}
        self.discovery_log.append(entry)
        if state is None:
            entry["outcome"] = f"base {base} not available at g={g}"
            return None
        try:
            res = self.study.perturb_and_search(state, spec, g, self._cfg(max_iter_gd))
        except (SolverError, ContinuationError) as exc:
            entry["outcome"] = f"failed: {exc}"
            self.notes.append(f"{origin}: {exc}")
            return None
        self.extra_results.append((f"{origin}", res))
        if not res.converged:
            entry["outcome"] = f"not converged (residual {res.residual_norm:.2e})"
            return None
        return self.adopt(res, g, entry)

    def adopt(self, res: SolveResult, g: float, entry: dict) -> str | None:
        step = self.study.analyze(res, g)
        known = self.study.identify(step, self.branches.values())
        entry.update(
            energy_ratio=step.energy_ratio, distance=step.distance,
            classification=step.classification.value, creases=step.census.crease_count,
            indentations=step.census.indentation_count, wavenumber=step.wavenumber,
        )
        if known is not None:
            entry["outcome"] = f"found {known}"
            return None
        if len(self.branches) >= self.preset.max_branches:
            entry["outcome"] = "new state, branch budget exhausted"
            return None
        label = _auto_label(step, set(self.branches) | {"s0"})
        entry["outcome"] = f"new branch {label}"
        logger.info("%s: new branch %s at g=%.4f (%s, %d creases / %d indentations)",
                    self.preset.name, label, g, step.classification.value,
                    step.census.crease_count, step.census.indentation_count)
        self.track(label, res, g)
        return label

    def track(self, label: str, seed: SolveResult, g: float):
        p = self.preset
        cfg = self._cfg(p.continuation_max_iter_gd)
        known = list(self.branches.values())
        back = self.study.continue_branch(
            seed, g, p.g_min, p.dg_backward, label=label, known=known, config=cfg,
            schedule=snapped_schedule(g, max(p.g_min, p.g_start - 0.5), p.dg_backward),
        )
        fwd = self.study.continue_branch(
            seed, g, p.g_max, p.dg, label=label, known=known, config=cfg,
            schedule=snapped_schedule(g, p.g_max, p.dg, p.dg_fine, p.fine_span),
            include_seed=False,
        )
        rec = BranchRecord(label=label)
        rec.steps = sorted(back.steps + fwd.steps, key=lambda s: s.g)
        alive = rec.alive()
        if back.death_g is not None or back.failure:
            rec.birth_g = alive[0].g if alive else g
        if fwd.death_g is not None:
            rec.death_g = fwd.death_g
        rec.failure = "; ".join(x for x in (back.failure, fwd.failure) if x) or None
        rec.successor = back.successor
        self.branches[label] = rec
        self._after_track(rec, back)

    def _after_track(self, rec: BranchRecord, back: BranchRecord):
        p = self.preset
        if p.spawn_on_saddle:
            alive = rec.alive()
            for prev, cur in zip(alive, alive[1:]):
                if (prev.classification == Classification.LOCAL_MINIMIZER
                        and cur.classification == Classification.SADDLE):
                    self.queue.append(("spawn", rec.label, cur.g))
                    break
        if p.follow_successors and rec.birth_g is not None:
            g_prev = self._grid(rec.birth_g + p.dg_backward)
            last = rec.at(rec.birth_g)
            if last is not None and g_prev >= p.g_min:
                self.queue.append(("successor", rec.label, g_prev, last.result.phi))

    def successor(self, label: str, g: float, phi: np.ndarray) -> str | None:
        """Where the iterates go once ``label`` has disappeared below ``g``."""
        entry = {"origin": f"successor of {label}", "base": label, "g": g}
        self.discovery_log.append(entry)
        try:
            res = self.study.solve_at(g, phi, self._cfg(self.preset.successor_max_iter_gd))
        except Exception as exc:  # noqa: BLE001 - recorded, run continues
            entry["outcome"] = f"failed: {exc}"
            return None
        self.extra_results.append((entry["origin"], res))
        if not res.converged:
            entry["outcome"] = "not converged"
            return None
        step = self.study.analyze(res, g)
        if step.classification != Classification.LOCAL_MINIMIZER:
            entry["outcome"] = f"landed on a {step.classification.value}"
            return None
        return self.adopt(res, g, entry)

    def run(self) -> CaseRun:
        p = self.preset
        self.locate_onsets()
        self.queue: deque = deque()
        for d in p.discoveries:
            try:
                g = self.resolve(d.at)
            except ContinuationError as exc:
                self.notes.append(str(exc))
                continue
            for idx in d.eigen_indices:
                for angle in d.in_plane_angles:
                    self.queue.append(("perturb", d.base, g,
                                       PerturbationSpec(idx, d.gamma, angle), d.max_iter_gd))
        while self.queue:
            task = self.queue.popleft()
            kind = task[0]
            if kind == "perturb":
                _, base, g, spec, cap = task
                self.discover(base, g, spec, cap, f"perturb {base} eig {spec.eigen_index} "
                              f"angle {spec.in_plane_angle:g} at g={g:g}")
            elif kind == "spawn":
                _, base, g = task
                self.discover(base, g, PerturbationSpec(1, p.spawn_gamma), p.spawn_max_iter_gd,
                              f"unstable direction of {base} at g={g:g}")
            elif kind == "successor":
                _, base, g, phi = task
                self.successor(base, g, phi)
        self.branches = {"s0": self.reference_record(), **self.branches}
        grid = sorted({round(s.g, 12) for br in self.branches.values() for s in br.alive()})
        path = minimal_energy_path(self.branches.values(), grid)
        summary = self.summarize(path)
        return CaseRun(p, self.study, dict(self.onsets), self.branches, path, summary, self.notes)

    def reference_record(self) -> BranchRecord:
        p = self.preset
        gs = set(np.round(snapped_schedule(p.g_start, p.g_max, p.dg), 12))
        for br in self.branches.values():
            gs.update(round(s.g, 12) for s in br.alive())
        rec = BranchRecord(label="s0", birth_g=1.0)
        for g in sorted(gs):
            res = self.study.reference(g)
            rec.steps.append(self.study.analyze(res, g, self.study.reference_spectrum(g)))
        return rec

    def summarize(self, path) -> dict:
        p = self.preset
        out = {
            "case": p.name,
            "stiffness_ratio": p.stiffness_ratio,
            "onsets": {str(k): v for k, v in self.onsets.items()},
            "merge_threshold": self.study.merge_threshold,
            "branches": {},
            "minimal_energy_path": collapse_path(path),
            "discoveries": self.discovery_log,
            "notes": list(self.notes),
            "units": absolute_g_units_note(),
        }
        for label, br in self.branches.items():
            alive = br.alive()
            if not alive:
                continue
            out["branches"][label] = {
                "g_range": [alive[0].g, alive[-1].g],
                "birth_g": br.birth_g,
                "death_g": br.death_g,
                "failure": br.failure,
                "classifications": [[s.g, s.classification.value] for s in alive],
                "census_at_end": [alive[-1].census.crease_count,
                                  alive[-1].census.smooth_count],
            }
        smooth = [br for lbl, br in self.branches.items()
                  if lbl != "s0" and br.birth_g is not None
                  and all(s.census.crease_count == 0 for s in br.alive())]
        for br in smooth[:1]:
            pts = [(s.g, s.distance) for s in br.alive() if s.g <= br.birth_g + 0.02 + 1e-9]
            try:
                gc, c1, c2 = fit_pitchfork(pts)
                out["pitchfork"] = {"branch": br.label, "g_c": gc, "c1": c1, "c2": c2,
                                    "points": len(pts)}
            except ValueError as exc:
                out["pitchfork"] = {"branch": br.label, "error": str(exc)}
        if p.warn_above is not None:
            late = [lbl for lbl, br in self.branches.items()
                    if any(s.g > p.warn_above for s in br.alive()) and lbl != "s0"]
            if late:
                msg = (f"branches {late} continued past g={p.warn_above}; "
                       "self-contact is not modelled there")
                logger.warning(msg)
                out["notes"].append(msg)
        return out


def run_case(preset: CasePreset, out_dir: str | Path | None = None,
             mesh_spec: MeshSpec | None = None, solve_config: SolveConfig | None = None) -> CaseRun:
    """Run one case end to end; write CSVs, snapshots, summary and manifest."""
    explorer = Explorer(preset, mesh_spec, solve_config)
    run = explorer.run()
    run.summary["_extra_results"] = explorer.extra_results
    if out_dir is not None:
        write_case_outputs(run, Path(out_dir), mesh_spec or MeshSpec(), solve_config)
    return run


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items() if not k.startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def content_hash(payload: dict) -> str:
    """SHA-256 over a canonical JSON dump of the run inputs."""
    blob = json.dumps(_jsonable(payload), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_case_outputs(run: CaseRun, out: Path, mesh_spec: MeshSpec,
                       solve_config: SolveConfig | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    mesh = run.study.mesh
    snap_dir = out / "snapshots"
    ckpt_dir = out / "checkpoints"
    snap_dir.mkdir(exist_ok=True)
    ckpt_dir.mkdir(exist_ok=True)
    targets = [round(g, 12) for g in run.preset.snapshot_g]
    for label, br in run.branches.items():
        br.write_csv(out / f"branch_{label}.csv")
        alive = br.alive()
        if not alive:
            continue
        np.savez(
            ckpt_dir / f"{label}.npz",
            g=np.array([s.g for s in alive]),
            phi=np.stack([s.result.phi for s in alive]),
            label=label,
        )
        for s in alive:
            if any(abs(s.g - t) < 1e-9 for t in targets):
                write_snapshot(snap_dir / f"{label}_g{s.g:.4f}.txt", mesh,
                               mesh.full_coords(s.result.phi))
    write_snapshot(out / "reference_mesh.txt", mesh)
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(run.summary), fh, indent=2)
    inputs = {
        "preset": asdict(run.preset),
        "mesh": asdict(mesh_spec),
        "solve": asdict(solve_config or SolveConfig()),
    }
    manifest = {"inputs": inputs, "content_hash": content_hash(inputs)}
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, default=str)
