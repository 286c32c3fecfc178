import csv
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import random_admissible
from growthfem.assembly import ElasticEnergy
from growthfem.material import MaterialParams
from growthfem.optimizer import (
    SingularHessianError,
    SolveConfig,
    gradient_descent_phase,
    newton_phase,
    optimal_step,
    select_step,
    solve,
    stable_step,
)
import scipy.sparse as sp


class Quadratic:
    """E = 1/2 x^T A x with a known spectrum, shaped like an energy model."""

    def __init__(self, eigs, rng):
        n = len(eigs)
        self.Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        self.eigs = np.asarray(eigs, float)
        self.A = self.Q @ np.diag(self.eigs) @ self.Q.T
        self.A = 0.5 * (self.A + self.A.T)
        self.growth = SimpleNamespace(g=1.0)
        self.mesh = SimpleNamespace(r_out=1.0)

    def energy_and_gradient(self, x):
        Ax = self.A @ x
        return 0.5 * float(x @ Ax), Ax

    def hessian(self, x):
        return sp.csr_matrix(self.A)


def test_stable_step_formula():
    assert stable_step(4.0) == 0.5
    assert stable_step(-1.0, fallback=1e-3) == 1e-3
    with pytest.raises(ValueError):
        stable_step(0.0)


def test_optimal_step_formula():
    assert optimal_step(4.0, 2.0) == pytest.approx(1 / 3)
    assert optimal_step(4.0, 0.0) == pytest.approx(stable_step(4.0))
    assert optimal_step(1.0, -2.0) is None


def test_select_step_rules():
    cfg = SolveConfig()
    ds, rule = select_step(2.0, 4.0, 1.0, cfg)
    assert rule == "min" and ds == pytest.approx(0.9 / 3)
    ds, rule = select_step(-2.0, 4.0, 1.0, cfg)
    assert rule == "stable" and ds == pytest.approx(0.45)
    ds, rule = select_step(-3.0, -1.0, 2.0, cfg, length=1.0)
    assert rule == "fallback"
    # displacement of the fallback step is 0.9 * 1e-3 * length
    assert ds * 2.0 == pytest.approx(0.9e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolveConfig(step_safety=1.5)


@pytest.mark.parametrize("eigs", [(1.0, 3.0, 10.0), (0.5, 2.0, 2.0, 7.0, 20.0)])
def test_stable_step_never_increases_energy(rng, eigs):
    q = Quadratic(eigs, rng)
    res = gradient_descent_phase(q, rng.standard_normal(len(eigs)), SolveConfig(tol=1e-10, max_iter_gd=5000))
    energies = [row.energy for row in res.trace]
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert res.converged


@pytest.mark.parametrize("safety", [1.0, 0.9])
def test_optimal_step_contraction(rng, safety):
    lo, hi = 1.0, 10.0
    q = Quadratic([lo, 3.0, 6.0, hi], rng)
    x0 = q.Q @ np.array([1.0, 0.0, 0.0, 1.0])
    cfg = SolveConfig(tol=1e-300, max_iter_gd=40, step_safety=safety)
    res = gradient_descent_phase(q, x0, cfg)
    r = np.array([row.residual for row in res.trace])
    observed = (r[-1] / r[10]) ** (1.0 / (len(r) - 11))
    expected = (hi - lo) / (hi + lo)
    assert abs(observed - expected) / expected < 0.05
    assert {row.rule for row in res.trace[1:]} == {"min"}


def test_indefinite_uses_stable_rule(rng):
    q = Quadratic([-1.0, 2.0, 5.0], rng)
    res = gradient_descent_phase(q, rng.standard_normal(3), SolveConfig(max_iter_gd=20))
    assert {row.rule for row in res.trace[1:]} <= {"stable", "halved"}
    energies = [row.energy for row in res.trace]
    assert all(b <= a for a, b in zip(energies, energies[1:]))


def test_negative_definite_fallback(rng):
    q = Quadratic([-3.0, -1.0], rng)
    x0 = np.array([0.3, -0.2])
    res = gradient_descent_phase(q, x0, SolveConfig(max_iter_gd=5))
    assert {row.rule for row in res.trace[1:]} == {"fallback"}
    assert res.energy < q.energy_and_gradient(x0)[0]
    # each step moves at most 1e-3 * r_out
    assert np.linalg.norm(res.phi - x0) <= 5 * 1e-3 + 1e-15


def test_reference_state_zero_iterations(small_mesh):
    model = ElasticEnergy(small_mesh, 1.0, MaterialParams.from_ratio(0.1))
    res = solve(model, small_mesh.reference_vector())
    assert res.converged and res.gd_iters == 0 and res.newton_iters == 0


def test_gd_monotone_on_grown_mesh(small_mesh, rng):
    model = ElasticEnergy(small_mesh, 1.3, MaterialParams.from_ratio(0.1))
    res = gradient_descent_phase(model, random_admissible(small_mesh, rng, g=1.3), SolveConfig(max_iter_gd=100))
    energies = [row.energy for row in res.trace]
    for a, b in zip(energies, energies[1:]):
        assert b <= a + 1e-12 * abs(a)
    assert res.max_rel_increase <= 1e-12


def test_solve_converges_and_certificate(small_mesh, rng):
    model = ElasticEnergy(small_mesh, 1.3, MaterialParams.from_ratio(0.1))
    res = solve(model, random_admissible(small_mesh, rng, g=1.3), SolveConfig(max_iter_gd=200))
    assert res.converged
    assert np.linalg.norm(model.gradient(res.phi)) <= 1e-7
    assert res.residual_norm <= 1e-7


def test_newton_quadratic_convergence(small_mesh, rng):
    model = ElasticEnergy(small_mesh, 1.2, MaterialParams.from_ratio(0.1))
    s0 = solve(model, small_mesh.reference_vector(), SolveConfig(tol=1e-12, max_iter_gd=0))
    start = s0.phi + 1e-3 * rng.standard_normal(s0.phi.shape)
    res = newton_phase(model, start)
    assert res.converged and res.newton_iters <= 6
    r = [row.residual for row in res.trace]
    for a, b in zip(r, r[1:]):
        assert b <= 10.0 * a * a
    again = newton_phase(model, res.phi)
    assert again.newton_iters <= 1


def test_newton_singular_reports_pivot(rng):
    q = Quadratic([0.0, 1.0], rng)
    q.A = np.diag([0.0, 1.0])
    with pytest.raises(SingularHessianError) as err:
        newton_phase(q, np.array([1.0, 1.0]))
    assert err.value.min_pivot == 0.0


def test_determinism(small_mesh, rng):
    model = ElasticEnergy(small_mesh, 1.4, MaterialParams.from_ratio(0.4))
    phi0 = random_admissible(small_mesh, rng, g=1.4)
    a = solve(model, phi0, SolveConfig(max_iter_gd=300))
    b = solve(ElasticEnergy(small_mesh, 1.4, MaterialParams.from_ratio(0.4)), phi0, SolveConfig(max_iter_gd=300))
    assert np.array_equal(a.phi, b.phi)
    assert a.energy == b.energy and a.gd_iters == b.gd_iters


def test_trace_csv(tmp_path, small_mesh, rng):
    model = ElasticEnergy(small_mesh, 1.3, MaterialParams.from_ratio(0.1))
    res = solve(model, random_admissible(small_mesh, rng, g=1.3), SolveConfig(max_iter_gd=50))
    path = tmp_path / "trace.csv"
    res.write_trace(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(res.trace)
    assert float(rows[-1]["residual"]) == res.trace[-1].residual
