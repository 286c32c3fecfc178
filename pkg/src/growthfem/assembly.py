"""Discrete elastic energy of the grown annulus, with analytic gradient and Hessian.

Each linear triangle carries a uniform deformation gradient
``F = m M^{-1}`` built from its current (``m``) and reference (``M``) edge
matrices, and a uniform growth ``G = g_t I``.  The element energy is
``Jg * W(F G^{-1}) * A0`` and the total energy is the sum over triangles,
viewed as a function of the free nodal coordinates only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .material import InvertedElementError, MaterialParams
from .mesh import Mesh, edge_matrices

# eps(a, b) for local nodes a, b of a counterclockwise triangle (k, k-, k+):
# 0 on the diagonal, +1 when a is the successor of b, -1 when a precedes b.
_EPS = np.array([[0, -1, 1], [1, 0, -1], [-1, 1, 0]], dtype=float)
_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


@numba.njit(cache=True)
def _fused_energy_gradient(x, tri, p11, p12, p21, p22, weight, mu, K, grad):
    """Energy and full-node gradient in one pass over triangles.

    Returns ``(E, t)`` where ``t`` is the first inverted triangle or -1.
    ``grad`` (N x 2) is overwritten.
    """
    grad[:] = 0.0
    E = 0.0
    for t in range(tri.shape[0]):
        i0, i1, i2 = tri[t, 0], tri[t, 1], tri[t, 2]
        x0, y0 = x[i0, 0], x[i0, 1]
        x1, y1 = x[i1, 0], x[i1, 1]
        x2, y2 = x[i2, 0], x[i2, 1]
        m11 = x1 - x0
        m21 = y1 - y0
        m12 = x2 - x0
        m22 = y2 - y0
        f11 = m11 * p11[t] + m12 * p21[t]
        f12 = m11 * p12[t] + m12 * p22[t]
        f21 = m21 * p11[t] + m22 * p21[t]
        f22 = m21 * p12[t] + m22 * p22[t]
        Je = f11 * f22 - f12 * f21
        if not Je > 0.0:
            return E, t
        b11 = f11 * f11 + f12 * f12
        b22 = f21 * f21 + f22 * f22
        b12 = f11 * f21 + f12 * f22
        E += weight[t] * (0.5 * mu[t] * ((b11 + b22) / Je - 2.0) + 0.5 * K[t] * (Je - 1.0) ** 2)
        c = mu[t] / (Je * Je)
        pr = K[t] * (Je - 1.0)
        half = 0.5 * (b11 - b22)
        s11 = c * half + pr
        s12 = c * b12
        s22 = -c * half + pr
        # node k gets 1/2 sigma R (x[k+] - x[k-])
        for a in range(3):
            if a == 0:
                ia, ex, ey = i0, x2 - x1, y2 - y1
            elif a == 1:
                ia, ex, ey = i1, x0 - x2, y0 - y2
            else:
                ia, ex, ey = i2, x1 - x0, y1 - y0
            grad[ia, 0] += 0.5 * (-s11 * ey + s12 * ex)
            grad[ia, 1] += 0.5 * (-s12 * ey + s22 * ex)
    return E, -1


@dataclass(frozen=True)
class GrowthField:
    """Isotropic growth ``g I`` on growing triangles, identity elsewhere."""

    g: float

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError(f"growth stretch must be positive, got {self.g}")

    def stretch(self, mesh: Mesh) -> np.ndarray:
        return np.where(mesh.growing, float(self.g), 1.0)

    def tensors(self, mesh: Mesh) -> np.ndarray:
        return self.stretch(mesh)[:, None, None] * np.eye(2)


@dataclass
class ElementState:
    """Per-triangle kinematics, arrays over triangles."""

    m: np.ndarray
    M: np.ndarray
    F: np.ndarray
    Fe: np.ndarray
    B: np.ndarray
    Jg: np.ndarray
    Je: np.ndarray
    sigma: np.ndarray
    A0: np.ndarray


class ElasticEnergy:
    """Energy, gradient and Hessian for one mesh, growth value and material.

    All per-triangle constants are precomputed; ``phi`` is always the free-DOF
    vector (x/y interleaved, node order of ``mesh.free_nodes``).
    """

    def __init__(self, mesh: Mesh, growth: GrowthField | float, mat: MaterialParams):
        if not isinstance(growth, GrowthField):
            growth = GrowthField(float(growth))
        self.mesh = mesh
        self.growth = growth
        self.mat = mat
        tri = mesh.triangles
        self._tri = tri
        M = edge_matrices(mesh.nodes, tri)
        detM = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
        gt = growth.stretch(mesh)
        Minv = np.linalg.inv(M)
        P = Minv / gt[:, None, None]  # M^{-1} G^{-1}
        self._p11, self._p12 = P[:, 0, 0].copy(), P[:, 0, 1].copy()
        self._p21, self._p22 = P[:, 1, 0].copy(), P[:, 1, 1].copy()
        self.M = M
        self.detM = detM
        self.A0 = 0.5 * detM
        self.Jg = gt * gt
        self.mu, self.K = mat.per_triangle(mesh.growing)
        self._weight = self.Jg * self.A0
        self._work = mesh.nodes.copy()
        self._gwork = np.zeros_like(mesh.nodes)
        self._n = mesh.n_nodes

        # sparse pattern of the free-DOF Hessian
        dof = 2 * tri[:, :, None] + np.arange(2)  # (T, 3, 2) full-DOF index
        rows = np.broadcast_to(dof[:, :, None, :, None], (len(tri), 3, 3, 2, 2))
        cols = np.broadcast_to(dof[:, None, :, None, :], (len(tri), 3, 3, 2, 2))
        full_to_free = np.full(2 * mesh.n_nodes, -1, dtype=np.int64)
        full_to_free[mesh.free_dofs] = np.arange(mesh.n_free_dofs)
        r = full_to_free[rows.ravel()]
        c = full_to_free[cols.ravel()]
        self._keep = (r >= 0) & (c >= 0)
        self._rows = r[self._keep]
        self._cols = c[self._keep]

    # -- kinematics -------------------------------------------------------
    def _coords(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.mesh.n_free_dofs,):
            raise ValueError(
                f"expected free vector of length {self.mesh.n_free_dofs}, got {phi.shape}"
            )
        return self.mesh.full_coords(phi, out=self._work)

    def _kinematics(self, phi: np.ndarray):
        x = self._coords(phi)
        tri = self._tri
        x0, x1, x2 = x[tri[:, 0]], x[tri[:, 1]], x[tri[:, 2]]
        m11 = x1[:, 0] - x0[:, 0]
        m21 = x1[:, 1] - x0[:, 1]
        m12 = x2[:, 0] - x0[:, 0]
        m22 = x2[:, 1] - x0[:, 1]
        f11 = m11 * self._p11 + m12 * self._p21
        f12 = m11 * self._p12 + m12 * self._p22
        f21 = m21 * self._p11 + m22 * self._p21
        f22 = m21 * self._p12 + m22 * self._p22
        Je = f11 * f22 - f12 * f21
        bad = np.flatnonzero(~(Je > 0))
        if bad.size:
            t = int(bad[0])
            raise InvertedElementError(
                f"triangle {t} inverted (det Fe = {Je[t]:.3e})", triangle=t
            )
        return x0, x1, x2, f11, f12, f21, f22, Je

    def _energy_from(self, f11, f12, f21, f22, Je) -> float:
        I1 = f11 * f11 + f12 * f12 + f21 * f21 + f22 * f22
        W = 0.5 * self.mu * (I1 / Je - 2.0) + 0.5 * self.K * (Je - 1.0) ** 2
        return float(np.dot(self._weight, W))

    def _stress_from(self, f11, f12, f21, f22, Je):
        b11 = f11 * f11 + f12 * f12
        b22 = f21 * f21 + f22 * f22
        b12 = f11 * f21 + f12 * f22
        c = self.mu / (Je * Je)
        p = self.K * (Je - 1.0)
        half = 0.5 * (b11 - b22)
        return c * half + p, c * b12, -c * half + p  # s11, s12, s22

    # -- public API -------------------------------------------------------
    def energy(self, phi: np.ndarray) -> float:
        _, _, _, *fe = self._kinematics(phi)
        return self._energy_from(*fe)

    def energy_and_gradient(self, phi: np.ndarray) -> tuple[float, np.ndarray]:
        x = self._coords(phi)
        E, bad = _fused_energy_gradient(
            x, self._tri, self._p11, self._p12, self._p21, self._p22,
            self._weight, self.mu, self.K, self._gwork,
        )
        if bad >= 0:
            # re-run the vectorized check for the diagnostic message
            self._kinematics(phi)
        return E, self._gwork.ravel()[self.mesh.free_dofs]

    def energy_and_gradient_vectorized(self, phi: np.ndarray) -> tuple[float, np.ndarray]:
        """Pure-numpy reference implementation of :meth:`energy_and_gradient`."""
        x0, x1, x2, f11, f12, f21, f22, Je = self._kinematics(phi)
        E = self._energy_from(f11, f12, f21, f22, Je)
        s11, s12, s22 = self._stress_from(f11, f12, f21, f22, Je)
        tri = self._tri
        n = self._n
        gx = np.zeros(n)
        gy = np.zeros(n)
        # node k gets 1/2 sigma R (x[k+] - x[k-]); local successors are cyclic
        for a, (xm, xp) in enumerate(((x1, x2), (x2, x0), (x0, x1))):
            ex = xp[:, 0] - xm[:, 0]
            ey = xp[:, 1] - xm[:, 1]
            # R e = (-ey, ex)
            fx = 0.5 * (-s11 * ey + s12 * ex)
            fy = 0.5 * (-s12 * ey + s22 * ex)
            gx += np.bincount(tri[:, a], weights=fx, minlength=n)
            gy += np.bincount(tri[:, a], weights=fy, minlength=n)
        grad = np.empty(2 * n)
        grad[0::2] = gx
        grad[1::2] = gy
        return E, grad[self.mesh.free_dofs]

    def gradient(self, phi: np.ndarray) -> np.ndarray:
        return self.energy_and_gradient(phi)[1]

    def hessian(self, phi: np.ndarray) -> sp.csr_matrix:
        """Sparse symmetric Hessian over the free DOFs."""
        x0, x1, x2, f11, f12, f21, f22, Je = self._kinematics(phi)
        T = len(Je)
        # perp_a = R (x[a+] - x[a-]) with (a-, a+) the cyclic successors of a
        perp = np.empty((T, 3, 2))
        for a, (xm, xp) in enumerate(((x1, x2), (x2, x0), (x0, x1))):
            perp[:, a, 0] = -(xp[:, 1] - xm[:, 1])
            perp[:, a, 1] = xp[:, 0] - xm[:, 0]
        detm = Je * self.Jg * self.detM
        b11 = f11 * f11 + f12 * f12
        b22 = f21 * f21 + f22 * f22
        b12 = f11 * f21 + f12 * f22
        detB = b11 * b22 - b12 * b12
        trB = b11 + b22
        Binv = np.empty((T, 2, 2))
        Binv[:, 0, 0] = b22 / detB
        Binv[:, 1, 1] = b11 / detB
        Binv[:, 0, 1] = Binv[:, 1, 0] = -b12 / detB

        dots = np.einsum("tai,tbi->tab", perp, perp)
        outer = np.einsum("tai,tbj->tabij", perp, perp)
        # shear part: (p1.p2)/det(m) B^{-1} - tr(B) eps / (2 det B) R
        h_mu = (dots / detm[:, None, None])[:, :, :, None, None] * Binv[:, None, None]
        h_mu -= (trB / (2.0 * detB))[:, None, None, None, None] * (
            _EPS[None, :, :, None, None] * _ROT
        )
        # bulk part: (p1 (x) p2) / (Jg det M) + (Je - 1) eps R
        h_K = outer / (self.Jg * self.detM)[:, None, None, None, None]
        h_K += (Je - 1.0)[:, None, None, None, None] * (_EPS[None, :, :, None, None] * _ROT)
        blocks = 0.5 * self.mu[:, None, None, None, None] * h_mu
        blocks += 0.5 * self.K[:, None, None, None, None] * h_K

        n = self.mesh.n_free_dofs
        H = sp.coo_matrix(
            (blocks.ravel()[self._keep], (self._rows, self._cols)), shape=(n, n)
        ).tocsr()
        H.sum_duplicates()
        # floating-point addition commutes, so this is exactly symmetric
        H = (H + H.T) * 0.5
        return H.tocsr()

    def element_state(self, phi: np.ndarray) -> ElementState:
        x = self._coords(phi)
        m = edge_matrices(x, self._tri)
        F = m @ np.linalg.inv(self.M)
        gt = np.sqrt(self.Jg)
        Fe = F / gt[:, None, None]
        B = Fe @ np.transpose(Fe, (0, 2, 1))
        Je = np.linalg.det(Fe)
        _, _, _, f11, f12, f21, f22, Je_ = self._kinematics(phi)
        s11, s12, s22 = self._stress_from(f11, f12, f21, f22, Je_)
        sigma = np.stack([np.stack([s11, s12], -1), np.stack([s12, s22], -1)], -2)
        return ElementState(m, self.M.copy(), F, Fe, B, self.Jg.copy(), Je, sigma, self.A0.copy())


def total_energy(phi, mesh: Mesh, growth, mat: MaterialParams) -> float:
    return ElasticEnergy(mesh, growth, mat).energy(phi)


def gradient(phi, mesh: Mesh, growth, mat: MaterialParams) -> np.ndarray:
    return ElasticEnergy(mesh, growth, mat).gradient(phi)


def hessian(phi, mesh: Mesh, growth, mat: MaterialParams) -> sp.csr_matrix:
    return ElasticEnergy(mesh, growth, mat).hessian(phi)
