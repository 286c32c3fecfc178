"""Energy-stable gradient descent followed by Newton refinement.

Gradient descent uses ``ds = min(2/(lmax + lmin), 2/lmax)`` while the
Hessian is positive semi-definite and ``2/lmax`` otherwise, with ``lmin`` and
``lmax`` refreshed periodically by warm-started Lanczos estimates.  Newton
iterations then polish the iterate; they converge to saddles as readily as to
minimizers, which is intended.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as sla

from .assembly import ElasticEnergy
from .material import InvertedElementError
from .spectral import ExtremeEigenEstimator

logger = logging.getLogger(__name__)

MAX_HALVINGS = 60
MONOTONE_RTOL = 1e-12


class SolverError(RuntimeError):
    """Hard failure of an iteration (persistent inversion, singular Hessian)."""


class SingularHessianError(SolverError):
    def __init__(self, message: str, min_pivot: float):
        super().__init__(message)
        self.min_pivot = min_pivot


@dataclass
class SolveConfig:
    tol: float = 1e-7
    max_iter_gd: int = 10_000
    max_iter_newton: int = 30
    eig_refresh_interval: int = 50
    step_safety: float = 0.9
    # fallback when lmax <= 0: cap ||dphi|| at this fraction of r_out
    fallback_displacement: float = 1e-3
    eig_tol: float = 1e-3
    trace_every: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if min(self.max_iter_gd, self.max_iter_newton) < 0:
            raise ValueError("iteration caps must be non-negative")
        if self.eig_refresh_interval < 1:
            raise ValueError("eig_refresh_interval must be at least 1")
        if not 0 < self.step_safety <= 1:
            raise ValueError("step_safety must lie in (0, 1]")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")


@dataclass
class TraceRow:
    iter: int
    phase: str
    residual: float
    energy: float
    step: float
    rule: str = ""


@dataclass
class SolveResult:
    phi: np.ndarray
    residual_norm: float
    energy: float
    g: float = float("nan")
    gd_iters: int = 0
    newton_iters: int = 0
    converged: bool = False
    trace: list[TraceRow] = field(default_factory=list)
    message: str = ""
    # largest relative energy increase over accepted descent steps
    max_rel_increase: float = 0.0

    def write_trace(self, path: str | Path) -> None:
        write_trace_csv(path, self.trace)


def write_trace_csv(path: str | Path, trace: list[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "phase", "residual", "energy", "step"])
        for row in trace:
            w.writerow([row.iter, row.phase, repr(row.residual), repr(row.energy), repr(row.step)])


def stable_step(lambda_max: float, fallback: float | None = None) -> float:
    """``2/lambda_max`` for a positive largest eigenvalue, else ``fallback``.

    With a negative semi-definite Hessian any small step decreases the energy;
    the caller supplies that increment.
    """
    if lambda_max > 0:
        return 2.0 / lambda_max
    if fallback is None:
        raise ValueError("lambda_max <= 0 and no fallback step given")
    return fallback


def optimal_step(lambda_max: float, lambda_min: float) -> float | None:
    """``2/(lambda_max + lambda_min)``; ``None`` when the sum is not positive."""
    s = lambda_max + lambda_min
    if not s > 0:
        return None
    return 2.0 / s


def select_step(
    lambda_min: float, lambda_max: float, grad_norm: float, config: SolveConfig, length: float = 1.0
) -> tuple[float, str]:
    """Step size and the rule that produced it ("min", "stable" or "fallback")."""
    if lambda_max > 0:
        ds = stable_step(lambda_max)
        rule = "stable"
        if lambda_min >= 0:
            ds_opt = optimal_step(lambda_max, lambda_min)
            if ds_opt is not None:
                ds = min(ds, ds_opt)
                rule = "min"
    else:
        ds = config.fallback_displacement * length / max(grad_norm, np.finfo(float).tiny)
        rule = "fallback"
    return config.step_safety * ds, rule


def _length_scale(model: ElasticEnergy) -> float:
    return model.mesh.r_out if model.mesh.r_out > 0 else 1.0


def gradient_descent_phase(
    model: ElasticEnergy, phi0: np.ndarray, config: SolveConfig | None = None
) -> SolveResult:
    """Steepest descent with analytic step sizes.

    A step that would invert a triangle is halved; a step that would raise the
    energy triggers a fresh spectral estimate and, failing that, halving.
    Accepted steps therefore never increase the energy beyond round-off.
    """
    config = config or SolveConfig()
    phi = np.array(phi0, dtype=float)
    E, grad = model.energy_and_gradient(phi)
    res = float(np.linalg.norm(grad))
    trace = [TraceRow(0, "gd", res, E, 0.0)]
    estimator = ExtremeEigenEstimator(tol=config.eig_tol)
    length = _length_scale(model)
    lam = None
    since_refresh = 0
    it = 0
    worst = 0.0
    while res > config.tol and it < config.max_iter_gd:
        if lam is None or since_refresh >= config.eig_refresh_interval:
            lam = estimator(model.hessian(phi))
            since_refresh = 0
            fresh = True
        ds, rule = select_step(lam[0], lam[1], res, config, length)
        halvings = 0
        while True:
            trial = phi - ds * grad
            try:
                E_new, g_new = model.energy_and_gradient(trial)
            except InvertedElementError:
                E_new = None
            if E_new is not None and E_new <= E + MONOTONE_RTOL * abs(E):
                break
            if E_new is not None and not fresh:
                # stale spectrum: refresh before shrinking the step
                lam = estimator(model.hessian(phi))
                since_refresh = 0
                fresh = True
                ds, rule = select_step(lam[0], lam[1], res, config, length)
                continue
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise SolverError(
                    f"gradient descent stalled at iteration {it}: no admissible "
                    f"descent step after {MAX_HALVINGS} halvings"
                )
            ds *= 0.5
            rule = "halved"
        if E != 0:
            worst = max(worst, (E_new - E) / abs(E))
        phi, E, grad = trial, E_new, g_new
        res = float(np.linalg.norm(grad))
        it += 1
        since_refresh += 1
        fresh = False
        if it % config.trace_every == 0 or res <= config.tol:
            trace.append(TraceRow(it, "gd", res, E, ds, rule))
    return SolveResult(
        phi=phi,
        residual_norm=res,
        energy=E,
        g=model.growth.g,
        gd_iters=it,
        converged=res <= config.tol,
        trace=trace,
        max_rel_increase=worst,
    )


def _newton_direction(H, grad) -> np.ndarray:
    try:
        lu = sla.splu(H.tocsc())
    except RuntimeError as exc:
        raise SingularHessianError(f"Hessian factorization failed: {exc}", 0.0) from exc
    piv = np.abs(lu.U.diagonal())
    pmin = float(piv.min())
    if not pmin > 1e-14 * float(piv.max()):
        raise SingularHessianError(
            f"Hessian numerically singular (smallest pivot {pmin:.3e})", pmin
        )
    return lu.solve(grad)


def newton_phase(
    model: ElasticEnergy, phi0: np.ndarray, config: SolveConfig | None = None
) -> SolveResult:
    """Plain Newton iterations; a step that inverts a triangle is halved."""
    config = config or SolveConfig()
    phi = np.array(phi0, dtype=float)
    E, grad = model.energy_and_gradient(phi)
    res = float(np.linalg.norm(grad))
    trace = [TraceRow(0, "newton", res, E, 0.0)]
    it = 0
    while res > config.tol and it < config.max_iter_newton:
        d = _newton_direction(model.hessian(phi), grad)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = phi - t * d
            try:
                E_new, g_new = model.energy_and_gradient(trial)
                break
            except InvertedElementError:
                t *= 0.5
        else:
            raise SolverError(f"Newton step {it} inverts elements at every damping")
        phi, E, grad = trial, E_new, g_new
        res = float(np.linalg.norm(grad))
        it += 1
        trace.append(TraceRow(it, "newton", res, E, t))
        if not np.isfinite(res):
            break
    return SolveResult(
        phi=phi,
        residual_norm=res,
        energy=E,
        g=model.growth.g,
        newton_iters=it,
        converged=bool(res <= config.tol),
        trace=trace,
    )


def solve(
    model: ElasticEnergy, phi0: np.ndarray, config: SolveConfig | None = None
) -> SolveResult:
    """Gradient descent until the tolerance or its cap, then Newton."""
    config = config or SolveConfig()
    gd = gradient_descent_phase(model, phi0, config)
    if gd.converged:
        logger.debug("g=%.4f: GD converged in %d iterations", model.growth.g, gd.gd_iters)
        return gd
    nt = newton_phase(model, gd.phi, config)
    offset = gd.gd_iters
    for row in nt.trace[1:]:
        row.iter += offset
    logger.debug(
        "g=%.4f: GD %d its (res %.2e), Newton %d its (res %.2e)",
        model.growth.g, gd.gd_iters, gd.residual_norm, nt.newton_iters, nt.residual_norm,
    )
    return SolveResult(
        phi=nt.phi,
        residual_norm=nt.residual_norm,
        energy=nt.energy,
        g=model.growth.g,
        gd_iters=gd.gd_iters,
        newton_iters=nt.newton_iters,
        converged=nt.converged,
        trace=gd.trace + nt.trace[1:],
        max_rel_increase=gd.max_rel_increase,
    )
