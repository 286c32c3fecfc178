"""Command-line driver.

Subcommands: ``mesh``, ``solve``, ``continue``, ``perturb``, ``case`` and
``render``.  Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 partial branch failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .continuation import ContinuationConfig, PerturbationSpec, Study, crease_census, snapped_schedule
from .experiments import MeshSpec, case_preset, run_case
from .io import load_checkpoint, result_record, save_checkpoint, write_json
from .material import MaterialParams
from .mesh import MeshError, read_snapshot, write_snapshot
from .optimizer import SolveConfig, SolveResult, SolverError
from .render import render_svg
from .spectral import Classification

logger = logging.getLogger("growthfem")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_PARTIAL = 4


class ConfigError(ValueError):
    pass


@dataclass
class MaterialConfig:
    stiffness_ratio: float = 0.1
    mu_g: float = 1.0
    bulk_to_shear: float = 1.0

    def params(self) -> MaterialParams:
        return MaterialParams.from_ratio(
            self.stiffness_ratio, mu_g=self.mu_g, K_g=self.bulk_to_shear * self.mu_g
        )


@dataclass
class ScheduleConfig:
    g: float = 1.2
    g_to: float | None = None
    dg: float = 0.01


@dataclass
class PerturbConfig:
    eigen_index: int = 1
    gamma: float = 1e-3
    in_plane_angle: float = 0.0


@dataclass
class ContinuationSettings:
    crease_angle: float = 120.0
    merge_factor: float = 1e-3
    n_eigs: int = 3
    max_iter_gd: int = 500


@dataclass
class OutputConfig:
    dir: str = "out"
    snapshot_g: list = field(default_factory=list)
    render: bool = False


@dataclass
class RunConfig:
    mesh: MeshSpec = field(default_factory=MeshSpec)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    solve: SolveConfig = field(default_factory=SolveConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    perturbation: PerturbConfig = field(default_factory=PerturbConfig)
    continuation: ContinuationSettings = field(default_factory=ContinuationSettings)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def study(self) -> Study:
        c = self.continuation
        cc = ContinuationConfig(
            solve=self.solve, n_eigs=c.n_eigs, crease_angle=c.crease_angle,
            merge_factor=c.merge_factor,
        )
        return Study(self.mesh.build(), self.material.params(), cc)


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_SECTIONS = {
    (RunConfig, "mesh"): MeshSpec,
    (RunConfig, "material"): MaterialConfig,
    (RunConfig, "solve"): SolveConfig,
    (RunConfig, "schedule"): ScheduleConfig,
    (RunConfig, "perturbation"): PerturbConfig,
    (RunConfig, "continuation"): ContinuationSettings,
    (RunConfig, "output"): OutputConfig,
}


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return _build(RunConfig, data or {}, "config")


def validate(cfg: RunConfig) -> None:
    try:
        cfg.material.params()
        cfg.mesh.build()
    except (ValueError, MeshError) as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg.schedule.g > 0:
        raise ConfigError("schedule.g must be positive")


# -- commands --------------------------------------------------------------

def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.output.dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit_state(cfg: RunConfig, study: Study, res: SolveResult, label: str) -> dict:
    out = _out(cfg)
    stem = f"{label}_g{res.g:.4f}"
    spectrum = study.spectrum(res, res.g) if res.converged else None
    rec = result_record(res, label, spectrum)
    write_json(out / f"{stem}.json", rec)
    save_checkpoint(out / f"{stem}.npz", res.phi, res.g, label)
    res.write_trace(out / f"{stem}_trace.csv")
    coords = study.mesh.full_coords(res.phi)
    write_snapshot(out / f"{stem}.txt", study.mesh, coords)
    if cfg.output.render:
        census = crease_census(res.phi, study.mesh, cfg.continuation.crease_angle)
        saddle = spectrum is not None and spectrum.classification == Classification.SADDLE
        render_svg(study.mesh, coords, out / f"{stem}.svg", saddle=saddle,
                   crease_nodes=census.crease_nodes, title=stem)
    return rec


def cmd_mesh(cfg: RunConfig) -> int:
    mesh = cfg.mesh.build()
    out = _out(cfg)
    write_snapshot(out / "mesh.txt", mesh)
    if cfg.output.render:
        render_svg(mesh, path=out / "mesh.svg")
    print(f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} free_dofs {mesh.n_free_dofs}")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, g: float, seed: str | None = None) -> int:
    study = cfg.study()
    phi0 = load_checkpoint(seed).phi if seed else study.mesh.reference_vector()
    res = study.solve_at(g, phi0)
    rec = _emit_state(cfg, study, res, "solve")
    print(f"g={g} converged={rec['converged']} residual={rec['residual_norm']:.3e} "
          f"energy={rec['energy']:.10g} {rec.get('classification', '')}")
    return EXIT_OK if res.converged else EXIT_SOLVER


def _converged_seed(study: Study, path: str) -> tuple[SolveResult, str]:
    ck = load_checkpoint(path)
    res = study.solve_at(ck.g, ck.phi)
    if not res.converged:
        raise SolverError(f"seed {path} does not converge at g={ck.g}")
    return res, ck.label


def cmd_continue(cfg: RunConfig, seed: str, g_to: float, dg: float) -> int:
    study = cfg.study()
    res, label = _converged_seed(study, seed)
    sched = snapped_schedule(res.g, g_to, dg)
    cont = dataclasses.replace(cfg.solve, max_iter_gd=cfg.continuation.max_iter_gd)
    rec = study.continue_branch(res, res.g, g_to, dg, label=label, config=cont, schedule=sched)
    out = _out(cfg)
    rec.write_csv(out / f"branch_{label}.csv")
    alive = rec.alive()
    np.savez(out / f"branch_{label}.npz", g=np.array([s.g for s in alive]),
             phi=np.stack([s.result.phi for s in alive]), label=label)
    for s in alive:
        if any(abs(s.g - t) < 1e-9 for t in cfg.output.snapshot_g):
            write_snapshot(out / f"{label}_g{s.g:.4f}.txt", study.mesh,
                           study.mesh.full_coords(s.result.phi))
    print(f"{label}: {len(alive)} steps, g in [{alive[0].g}, {alive[-1].g}]"
          + (f", stopped: {rec.failure}" if rec.failure else ""))
    return EXIT_PARTIAL if rec.failure else EXIT_OK


def cmd_perturb(cfg: RunConfig, seed: str | None, g: float | None, spec: PerturbationSpec) -> int:
    study = cfg.study()
    if seed:
        base, _ = _converged_seed(study, seed)
        g = base.g
    else:
        g = cfg.schedule.g if g is None else g
        base = study.reference(g)
    res = study.perturb_and_search(base, spec, g)
    rec = _emit_state(cfg, study, res, f"perturbed_e{spec.eigen_index}")
    print(f"g={g} converged={rec['converged']} energy={rec['energy']:.10g} "
          f"{rec.get('classification', '')}")
    return EXIT_OK if res.converged else EXIT_SOLVER


def cmd_case(cfg: RunConfig, case: int) -> int:
    preset = case_preset(case)
    preset = dataclasses.replace(
        preset, bulk_to_shear=cfg.material.bulk_to_shear,
        snapshot_g=tuple(cfg.output.snapshot_g) or preset.snapshot_g,
    )
    run = run_case(preset, _out(cfg), cfg.mesh, cfg.solve)
    print(f"{preset.name}: branches {', '.join(run.branches)}")
    print("minimal-energy path: " + " -> ".join(run.summary["minimal_energy_path"]))
    failed = [d for d in run.summary["discoveries"] if str(d.get("outcome", "")).startswith("failed")]
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_render(snapshot: str, out: str | None, saddle: bool, crease_angle: float) -> int:
    mesh, coords = read_snapshot(snapshot)
    census = crease_census(mesh.free_vector(coords), mesh, crease_angle)
    target = out or str(Path(snapshot).with_suffix(".svg"))
    render_svg(mesh, coords, target, saddle=saddle, crease_nodes=census.crease_nodes,
               title=Path(snapshot).stem)
    print(target)
    return EXIT_OK


# -- argument handling ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--render", action="store_true", help="also write SVG drawings")
    common.add_argument("--print-config", action="store_true",
                        help="print the resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="growthfem", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="write the reference mesh")
    s = sub.add_parser("solve", parents=[common], help="solve at one growth value")
    s.add_argument("--g", type=float)
    s.add_argument("--seed", help="checkpoint to start from")
    c = sub.add_parser("continue", parents=[common], help="continue a branch in g")
    c.add_argument("--seed", required=True, help="checkpoint of a converged state")
    c.add_argument("--g", type=float, help="target growth value")
    c.add_argument("--dg", type=float)
    q = sub.add_parser("perturb", parents=[common], help="perturb along a Hessian eigenvector")
    q.add_argument("--seed", help="checkpoint of the base state (default: annular state)")
    q.add_argument("--g", type=float)
    q.add_argument("--gamma", type=float)
    q.add_argument("--eigen-index", type=int)
    q.add_argument("--angle", type=float, help="angle inside a degenerate eigenplane (degrees)")
    k = sub.add_parser("case", parents=[common], help="run a case study")
    k.add_argument("--case", type=int, choices=(1, 2, 3), required=True)
    r = sub.add_parser("render", parents=[common], help="draw a snapshot file as SVG")
    r.add_argument("snapshot")
    r.add_argument("--saddle", action="store_true", help="mark the state as a saddle")
    return p


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.out:
        cfg.output.dir = args.out
    if args.render:
        cfg.output.render = True
    sched = cfg.schedule
    if getattr(args, "g", None) is not None:
        if args.command == "continue":
            sched.g_to = args.g
        else:
            sched.g = args.g
    if getattr(args, "dg", None) is not None:
        sched.dg = args.dg
    pert = cfg.perturbation
    for name in ("gamma", "eigen_index"):
        if getattr(args, name, None) is not None:
            setattr(pert, name, getattr(args, name))
    if getattr(args, "angle", None) is not None:
        pert.in_plane_angle = args.angle
    validate(cfg)
    if args.command == "continue":
        if sched.g_to is None:
            raise ConfigError("continue needs a target: --g or schedule.g_to")
        if sched.dg == 0:
            raise ConfigError("empty g schedule: dg is zero")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = _resolve(args)
        if args.print_config:
            print(yaml.safe_dump(cfg.to_dict(), sort_keys=False), end="")
            return EXIT_OK
        if args.command == "mesh":
            return cmd_mesh(cfg)
        if args.command == "solve":
            return cmd_solve(cfg, cfg.schedule.g, args.seed)
        if args.command == "continue":
            ck = load_checkpoint(args.seed)
            sched = snapped_schedule(ck.g, cfg.schedule.g_to, _signed_dg(ck.g, cfg))
            if len(sched) < 2:
                raise ConfigError("empty g schedule: target equals the seed growth value")
            return cmd_continue(cfg, args.seed, cfg.schedule.g_to, _signed_dg(ck.g, cfg))
        if args.command == "perturb":
            pert = cfg.perturbation
            try:
                spec = PerturbationSpec(pert.eigen_index, pert.gamma, pert.in_plane_angle)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            return cmd_perturb(cfg, args.seed, cfg.schedule.g, spec)
        if args.command == "case":
            return cmd_case(cfg, args.case)
        if args.command == "render":
            target = args.out
            if target and not target.endswith(".svg"):
                Path(target).mkdir(parents=True, exist_ok=True)
                target = str(Path(target) / (Path(args.snapshot).stem + ".svg"))
            return cmd_render(args.snapshot, target, args.saddle, cfg.continuation.crease_angle)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, MeshError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _signed_dg(g_from: float, cfg: RunConfig) -> float:
    dg = abs(cfg.schedule.dg)
    if dg == 0:
        raise ConfigError("empty g schedule: dg is zero")
    return dg if cfg.schedule.g_to >= g_from else -dg


if __name__ == "__main__":
    sys.exit(main())
