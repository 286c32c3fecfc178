"""Branch discovery and tracking in the growth parameter ``g``."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .assembly import ElasticEnergy
from .material import InvertedElementError, MaterialParams
from .mesh import Mesh
from .optimizer import SolveConfig, SolveResult, SolverError, newton_phase, solve
from .spectral import Classification, SpectralReport, mode_wavenumber, smallest_k_eigenpairs

logger = logging.getLogger(__name__)

MAX_GAMMA_HALVINGS = 30

CSV_FIELDS = [
    "g", "energy", "energy_ratio", "lambda_min", "distance", "classification",
    "crease_count", "indentation_count", "wavenumber",
]


class ContinuationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PerturbationSpec:
    """Direction ``eigen_index`` (1 = smallest eigenvalue) scaled to length ``gamma``.

    When the chosen eigenvalue belongs to a degenerate pair, ``in_plane_angle``
    (degrees) rotates the direction inside that eigenplane.
    """

    eigen_index: int = 1
    gamma: float = 1e-3
    in_plane_angle: float = 0.0

    def __post_init__(self):
        if self.eigen_index < 1:
            raise ValueError("eigen_index is 1-based")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass
class Census:
    crease_count: int
    smooth_count: int
    positions: list  # (angle in degrees, "crease" | "smooth")
    crease_nodes: list = field(default_factory=list)

    @property
    def indentation_count(self) -> int:
        return self.crease_count + self.smooth_count


@dataclass
class BranchStep:
    g: float
    result: SolveResult
    spectrum: SpectralReport
    distance: float
    energy_ratio: float
    census: Census
    wavenumber: int | None = None
    merged_into: str | None = None

    @property
    def classification(self) -> Classification:
        return self.spectrum.classification

    @property
    def energy(self) -> float:
        return self.result.energy

    @property
    def lambda_min(self) -> float:
        return self.spectrum.lambda_min


@dataclass
class BranchRecord:
    label: str
    steps: list[BranchStep] = field(default_factory=list)
    birth_g: float | None = None
    death_g: float | None = None
    failure: str | None = None
    # the critical point the iterates fell into once the branch disappeared
    successor: SolveResult | None = None

    def alive(self) -> list[BranchStep]:
        return [s for s in self.steps if s.merged_into is None]

    def at(self, g: float, atol: float = 1e-9) -> BranchStep | None:
        for s in self.alive():
            if abs(s.g - g) <= atol:
                return s
        return None

    @property
    def gs(self) -> np.ndarray:
        return np.array([s.g for s in self.alive()])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for s in self.alive():
                w.writerow([
                    repr(s.g), repr(s.energy), repr(s.energy_ratio), repr(s.lambda_min),
                    repr(s.distance), s.classification.value, s.census.crease_count,
                    s.census.indentation_count, "" if s.wavenumber is None else s.wavenumber,
                ])


def read_branch_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- diagnostics ------------------------------------------------------------

def distance_from(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two free-DOF vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"fields differ in shape: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def fit_pitchfork(points) -> tuple[float, float, float]:
    """Least-squares fit ``g = g_c + c1 d + c2 d^2``; returns ``(g_c, c1, c2)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise ValueError("need at least four (g, d) points")
    g, d = pts[:, 0], pts[:, 1]
    A = np.column_stack([np.ones_like(d), d, d * d])
    scale = np.abs(A).max(axis=0)
    scale[scale == 0] = 1.0
    As = A / scale
    coef, _, rank, sv = np.linalg.lstsq(As, g, rcond=None)
    if rank < 3 or sv[-1] < 1e-10 * sv[0]:
        raise ValueError("degenerate pitchfork data (distances not distinct enough)")
    gc, c1, c2 = coef / scale
    return float(gc), float(c1), float(c2)


def _turning_angles(p: np.ndarray) -> np.ndarray:
    """Angle (degrees) at each vertex of a closed polyline between its two edges."""
    prev = np.roll(p, 1, axis=0) - p
    nxt = np.roll(p, -1, axis=0) - p
    cos = np.einsum("ij,ij->i", prev, nxt) / (
        np.linalg.norm(prev, axis=1) * np.linalg.norm(nxt, axis=1)
    )
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def crease_census(
    phi: np.ndarray,
    mesh: Mesh,
    crease_angle: float = 120.0,
    min_depth: float | None = None,
) -> Census:
    """Count indentations of the inner boundary and split them into creases and smooth ones.

    An indentation is a local maximum of the distance from the annulus centre
    along the inner boundary (a valley pushed into the tissue), with
    prominence above ``min_depth`` (default ``1e-3 * r_in``).  It is a crease
    when the angle between the two boundary edges at that vertex is below
    ``crease_angle`` degrees.  The result depends on mesh resolution.
    """
    ring = mesh.inner_ring
    x = mesh.full_coords(np.asarray(phi, dtype=float))[ring]
    r = np.hypot(x[:, 0], x[:, 1])
    n = len(r)
    if min_depth is None:
        min_depth = 1e-3 * (mesh.r_in if mesh.r_in > 0 else float(np.mean(r)))
    tiled = np.concatenate([r, r, r])
    peaks, _ = find_peaks(tiled, prominence=min_depth)
    peaks = peaks[(peaks >= n) & (peaks < 2 * n)] - n
    angles = _turning_angles(x)
    theta = np.degrees(np.arctan2(mesh.nodes[ring, 1], mesh.nodes[ring, 0])) % 360.0
    positions = []
    crease_nodes = []
    for k in peaks:
        kind = "crease" if angles[k] < crease_angle else "smooth"
        if kind == "crease":
            crease_nodes.append(int(ring[k]))
        positions.append((float(theta[k]), kind))
    n_crease = len(crease_nodes)
    return Census(n_crease, len(peaks) - n_crease, positions, crease_nodes)


def detect_death(branch: BranchRecord) -> float | None:
    """Last ``g`` at which the branch was still a distinct critical point.

    ``None`` when the branch neither merged into another one nor stopped
    converging within the scan.
    """
    if branch.death_g is not None:
        return branch.death_g
    alive_g = None
    for s in branch.steps:
        if s.merged_into is not None:
            return alive_g
        alive_g = s.g
    return None


def minimal_energy_path(branches, g_grid, atol: float = 1e-9) -> list[tuple[float, str]]:
    """Lowest-energy converged local minimizer at each ``g`` of the grid."""
    path = []
    for g in g_grid:
        best = None
        for br in branches:
            s = br.at(g, atol)
            if s is None or not s.result.converged:
                continue
            if s.classification != Classification.LOCAL_MINIMIZER:
                continue
            if best is None or s.energy < best[0]:
                best = (s.energy, br.label)
        if best is not None:
            path.append((float(g), best[1]))
    return path


def collapse_path(path) -> list[str]:
    """Sequence of distinct labels along a path, e.g. ``['s5', 's6']``."""
    out = []
    for _, label in path:
        if not out or out[-1] != label:
            out.append(label)
    return out


def g_schedule(g_from: float, g_to: float, dg: float) -> np.ndarray:
    if dg == 0 or np.sign(g_to - g_from) not in (0, np.sign(dg)):
        raise ContinuationError(f"dg={dg} does not lead from {g_from} to {g_to}")
    n = int(np.floor((g_to - g_from) / dg + 1e-9))
    return np.round(g_from + dg * np.arange(n + 1), 12)


def snapped_schedule(
    g_from: float, g_to: float, dg: float, fine_dg: float | None = None, fine_span: float = 0.0
) -> np.ndarray:
    """``g_from`` followed by grid multiples of ``|dg|`` up to ``g_to``.

    Snapping lets branches started at arbitrary ``g`` share grid points.
    Within ``fine_span`` of the start the finer spacing ``fine_dg`` is used.
    """
    if dg == 0 or np.sign(g_to - g_from) not in (0, np.sign(dg)):
        raise ContinuationError(f"dg={dg} does not lead from {g_from} to {g_to}")
    direction = np.sign(dg)
    out = [round(float(g_from), 12)]
    g = g_from
    while True:
        h = abs(dg)
        if fine_dg and abs(g - g_from) < fine_span - 1e-12:
            h = abs(fine_dg)
        k = np.floor(g / h + 1e-9) + 1 if direction > 0 else np.ceil(g / h - 1e-9) - 1
        nxt = round(float(k * h), 12)
        if direction * (nxt - g_to) > 1e-12:
            break
        out.append(nxt)
        g = nxt
    return np.array(out)


def equivalent(a: BranchStep, b: BranchStep, threshold: float, energy_rtol: float = 1e-7) -> bool:
    """Same critical point, or a rotated copy of it.

    Rotated copies sit far apart in coordinate space; they are recognised by
    an identical crease census and energy agreeing to ``energy_rtol``.
    """
    if abs(a.g - b.g) > 1e-9:
        return False
    if distance_from(a.result.phi, b.result.phi) < threshold:
        return True
    same_census = (
        a.census.crease_count == b.census.crease_count
        and a.census.indentation_count == b.census.indentation_count
    )
    return same_census and abs(a.energy - b.energy) <= energy_rtol * abs(b.energy)


# -- the study context -----------------------------------------------------

@dataclass
class ContinuationConfig:
    solve: SolveConfig = field(default_factory=SolveConfig)
    n_eigs: int = 3
    crease_angle: float = 120.0
    # branch identity: distance < merge_factor * r_out * sqrt(free DOFs)
    merge_factor: float = 1e-3
    # a continuation step larger than this multiple of the previous one is a jump
    jump_factor: float = 10.0
    reference_dg: float = 0.02


class Study:
    """Mesh + material context with a cached annular branch ``s0``.

    ``s0`` is followed from ``g = 1`` by warm-started Newton iterations; Newton
    keeps the axisymmetric solution even after it turns into a saddle.
    """

    def __init__(self, mesh: Mesh, mat: MaterialParams, config: ContinuationConfig | None = None):
        self.mesh = mesh
        self.mat = mat
        self.config = config or ContinuationConfig()
        self._models: dict[float, ElasticEnergy] = {}
        self._s0: dict[float, SolveResult] = {1.0: self._trivial()}
        self._s0_spec: dict[float, SpectralReport] = {}

    @property
    def merge_threshold(self) -> float:
        return self.config.merge_factor * self.mesh.r_out * np.sqrt(self.mesh.n_free_dofs)

    def model(self, g: float) -> ElasticEnergy:
        g = round(float(g), 12)
        m = self._models.get(g)
        if m is None:
            if len(self._models) > 64:
                self._models.clear()
            m = self._models[g] = ElasticEnergy(self.mesh, g, self.mat)
        return m

    def _trivial(self) -> SolveResult:
        phi = self.mesh.reference_vector()
        return SolveResult(phi=phi, residual_norm=0.0, energy=0.0, g=1.0, converged=True)

    def reference(self, g: float) -> SolveResult:
        """The annular solution ``s0`` at ``g``."""
        g = round(float(g), 12)
        if g in self._s0:
            return self._s0[g]
        known = np.array(sorted(self._s0))
        start = float(known[np.argmin(np.abs(known - g))])
        cfg = SolveConfig(tol=self.config.solve.tol * 1e-2, max_iter_gd=0, max_iter_newton=50)
        phi = self._s0[start].phi
        steps = int(np.ceil(abs(g - start) / self.config.reference_dg))
        for gi in np.linspace(start, g, steps + 1)[1:]:
            gi = round(float(gi), 12)
            if gi in self._s0:
                phi = self._s0[gi].phi
                continue
            res = newton_phase(self.model(gi), phi, cfg)
            if not res.converged:
                res = newton_phase(self.model(gi), res.phi, self.config.solve)
            if not res.converged:
                raise ContinuationError(f"annular branch lost at g={gi}")
            res.g = gi
            self._s0[gi] = res
            phi = res.phi
        return self._s0[g]

    def reference_spectrum(self, g: float, k: int | None = None) -> SpectralReport:
        g = round(float(g), 12)
        k = k or self.config.n_eigs
        rep = self._s0_spec.get(g)
        if rep is None or len(rep.eigenvalues) < k:
            H = self.model(g).hessian(self.reference(g).phi)
            rep = smallest_k_eigenpairs(H, k, self.mesh, phi=self.reference(g).phi)
            self._s0_spec[g] = rep
        return rep

    def spectrum(self, result: SolveResult, g: float, k: int | None = None) -> SpectralReport:
        H = self.model(g).hessian(result.phi)
        return smallest_k_eigenpairs(H, k or self.config.n_eigs, self.mesh, phi=result.phi)

    def analyze(self, result: SolveResult, g: float, spectrum: SpectralReport | None = None) -> BranchStep:
        ref = self.reference(g)
        spectrum = spectrum or self.spectrum(result, g)
        E0 = ref.energy
        shape = result.phi - ref.phi
        return BranchStep(
            g=float(g),
            result=result,
            spectrum=spectrum,
            distance=distance_from(result.phi, ref.phi),
            energy_ratio=result.energy / E0 if E0 > 0 else float("nan"),
            census=crease_census(result.phi, self.mesh, self.config.crease_angle),
            wavenumber=mode_wavenumber(shape, self.mesh) if np.any(shape) else 0,
        )

    def solve_at(self, g: float, phi0: np.ndarray, config: SolveConfig | None = None) -> SolveResult:
        res = solve(self.model(g), phi0, config or self.config.solve)
        res.g = float(g)
        return res

    def find_onset(self, g_lo: float, g_hi: float, index: int = 1, dg: float = 0.01,
                   tol: float = 1e-4) -> float:
        """Growth value where the ``index``-th smallest eigenvalue of ``H(s0)`` crosses zero.

        Scans with step ``dg`` and refines the bracket by bisection.
        """
        def lam(g):
            return self.reference_spectrum(g, index).eigenvalues[index - 1]

        a = round(g_lo, 12)
        if lam(a) <= 0:
            raise ContinuationError(f"eigenvalue {index} already non-positive at g={a}")
        b = None
        for g in g_schedule(g_lo, g_hi, dg)[1:]:
            if lam(g) < 0:
                b = float(g)
                break
            a = float(g)
        if b is None:
            raise ContinuationError(f"no crossing of eigenvalue {index} in [{g_lo}, {g_hi}]")
        while b - a > tol:
            c = round(0.5 * (a + b), 12)
            if lam(c) < 0:
                b = c
            else:
                a = c
        return 0.5 * (a + b)

    def perturbed_guess(self, base: SolveResult, spec: PerturbationSpec, g: float) -> np.ndarray:
        H = self.model(g).hessian(base.phi)
        rep = smallest_k_eigenpairs(H, spec.eigen_index + 1, self.mesh)
        return perturbation_vector(base.phi, rep, spec)

    def perturb_and_search(
        self, base: SolveResult, spec: PerturbationSpec, g: float, config: SolveConfig | None = None
    ) -> SolveResult:
        """Solve from ``phi_base + gamma v / |v|`` along a Hessian eigenvector."""
        if spec.gamma == 0:
            return SolveResult(
                phi=base.phi.copy(), residual_norm=base.residual_norm, energy=base.energy,
                g=base.g, converged=base.converged, message="unperturbed",
            )
        model = self.model(g)
        H = model.hessian(base.phi)
        rep = smallest_k_eigenpairs(H, spec.eigen_index + 1, self.mesh)
        gamma = spec.gamma
        for _ in range(MAX_GAMMA_HALVINGS + 1):
            phi0 = perturbation_vector(base.phi, rep, replace(spec, gamma=gamma))
            try:
                model.energy(phi0)
                break
            except InvertedElementError:
                gamma *= 0.5
        else:
            raise ContinuationError("every perturbation magnitude inverts an element")
        if gamma != spec.gamma:
            logger.warning("perturbation reduced from %g to %g to keep elements valid", spec.gamma, gamma)
        return self.solve_at(g, phi0, config)

    def continue_branch(
        self,
        seed: SolveResult,
        g_from: float,
        g_to: float,
        dg: float,
        label: str = "branch",
        known: list[BranchRecord] | None = None,
        config: SolveConfig | None = None,
        stop_on_merge: bool = True,
        include_seed: bool = True,
        schedule=None,
    ) -> BranchRecord:
        """Warm-started continuation of a converged critical point.

        Each step starts from the previous solution.  The branch is declared
        dead when a step lands within the merge threshold of ``s0`` or of a
        ``known`` branch at the same ``g``, or when it jumps far from the
        previous step (it fell into some other critical point); that landing
        state is kept as ``successor``.
        """
        if not seed.converged:
            raise ContinuationError("seed must be a converged solution")
        record = BranchRecord(label=label)
        gs = g_schedule(g_from, g_to, dg) if schedule is None else np.asarray(schedule, dtype=float)
        phi = seed.phi
        prev_step = None
        # a seed on the annular branch follows that branch instead of merging into it
        on_s0 = label == "s0" or (
            distance_from(seed.phi, self.reference(gs[0]).phi) < self.merge_threshold
        )
        for j, g in enumerate(gs):
            if j == 0:
                res = seed
                if not include_seed:
                    continue
            else:
                try:
                    res = self.solve_at(g, phi, config)
                except SolverError as exc:
                    record.failure = f"g={g}: {exc}"
                except InvertedElementError as exc:
                    record.failure = f"g={g}: warm start invalid ({exc})"
                else:
                    if not res.converged:
                        record.failure = f"g={g}: not converged (residual {res.residual_norm:.2e})"
                if record.failure:
                    # a branch past its fold has nothing left to converge to
                    record.death_g = prev_step.g if prev_step is not None else None
                    logger.info("%s: %s", label, record.failure)
                    break
            step = self.analyze(res, g)
            merged = None if on_s0 else self._merged_into(step, record, known)
            if merged is None and prev_step is not None and j > 1:
                jump = distance_from(res.phi, prev_step.result.phi)
                last = self._last_increment(record)
                if last is not None and jump > self.merge_threshold and jump > self.config.jump_factor * last:
                    merged = "jump"
            if merged is not None and j > 0:
                step.merged_into = merged
                record.steps.append(step)
                record.successor = res
                record.death_g = prev_step.g if prev_step is not None else None
                if stop_on_merge:
                    break
                continue
            record.steps.append(step)
            prev_step = step
            phi = res.phi
            logger.info(
                "%s g=%.4f E/E0=%.6f d=%.4f lmin=%.3e %s creases=%d/%d",
                label, g, step.energy_ratio, step.distance, step.lambda_min,
                step.classification.value, step.census.crease_count,
                step.census.indentation_count,
            )
        return record

    @staticmethod
    def _last_increment(record: BranchRecord) -> float | None:
        alive = record.alive()
        if len(alive) < 2:
            return None
        return distance_from(alive[-1].result.phi, alive[-2].result.phi)

    def _merged_into(self, step: BranchStep, record: BranchRecord, known) -> str | None:
        thr = self.merge_threshold
        if step.distance < thr:
            return "s0"
        for br in known or ():
            other = br.at(step.g)
            if other is not None and br.label != record.label:
                if equivalent(step, other, thr):
                    return br.label
        return None

    def identify(self, step: BranchStep, branches) -> str | None:
        """Label of a known branch this state belongs to, if any."""
        if step.distance < self.merge_threshold:
            return "s0"
        for br in branches:
            other = br.at(step.g)
            if other is not None and equivalent(step, other, self.merge_threshold):
                return br.label
        return None


def perturbation_vector(phi: np.ndarray, report: SpectralReport, spec: PerturbationSpec) -> np.ndarray:
    """``phi + gamma * v / |v|`` for the requested eigen-direction."""
    i = spec.eigen_index - 1
    if i >= len(report.eigenvalues):
        raise ContinuationError(f"eigenpair {spec.eigen_index} not available")
    w, V = report.eigenvalues, report.eigenvectors
    v = V[:, i]
    partner = None
    scale = max(abs(w[i]), 1e-12 * abs(report.lambda_max))
    for j in (i + 1, i - 1):
        if 0 <= j < len(w) and abs(w[j] - w[i]) <= 1e-3 * scale:
            partner = j
            break
    if partner is not None and spec.in_plane_angle:
        a, b = (V[:, i], V[:, partner]) if partner > i else (V[:, partner], V[:, i])
        t = np.radians(spec.in_plane_angle)
        v = np.cos(t) * a + np.sin(t) * b
    return phi + spec.gamma * v / np.linalg.norm(v)
