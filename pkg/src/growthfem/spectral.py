"""Eigen-analysis of the free-DOF Hessian."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .mesh import Mesh

DENSE_LIMIT = 5000
DEGENERACY_RTOL = 1e-3
# a pattern rotation is a (near-)neutral direction; see phase_shift_generator
NEUTRAL_RTOL = 1e-6
NEUTRAL_OVERLAP = 0.9


class SpectralError(RuntimeError):
    """Eigen-iteration failed to converge."""


class Classification(str, Enum):
    LOCAL_MINIMIZER = "LocalMinimizer"
    SADDLE = "Saddle"
    MARGINAL = "Marginal"


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns match eigenvalues
    lambda_max: float
    classification: Classification
    mode_wavenumbers: list = field(default_factory=list)
    # index of the pattern-rotation eigenpair, excluded from classification
    neutral_index: int | None = None

    @property
    def lambda_min(self) -> float:
        """Smallest eigenvalue, skipping the pattern-rotation mode if one was found."""
        if self.neutral_index is None or len(self.eigenvalues) < 2:
            return float(self.eigenvalues[0])
        return float(np.delete(self.eigenvalues, self.neutral_index)[0])

    @property
    def lambda_min_raw(self) -> float:
        return float(self.eigenvalues[0])


def _as_operator(H):
    if sp.issparse(H):
        return H.tocsr()
    return np.asarray(H, dtype=float)


def _dense(H) -> np.ndarray:
    return H.toarray() if sp.issparse(H) else np.asarray(H, dtype=float)


def extreme_eigenvalues(H, tol: float = 1e-10) -> tuple[float, float]:
    """(lambda_min, lambda_max) of a symmetric matrix."""
    H = _as_operator(H)
    n = H.shape[0]
    if n <= DENSE_LIMIT:
        Hd = _dense(H)
        lo = sl.eigh(Hd, eigvals_only=True, subset_by_index=[0, 0])[0]
        hi = sl.eigh(Hd, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]
        return float(lo), float(hi)
    try:
        hi = sla.eigsh(H, k=1, which="LA", tol=tol, return_eigenvectors=False)[0]
        lo = sla.eigsh(H, k=1, which="SA", tol=tol, return_eigenvectors=False)[0]
    except sla.ArpackNoConvergence as exc:
        raise SpectralError(f"extreme eigenvalues did not converge: {exc}") from exc
    return float(lo), float(hi)


class ExtremeEigenEstimator:
    """Cheap, warm-started Lanczos estimates of the spectral extremes.

    Used inside gradient descent, where the Hessian changes slowly between
    refreshes; the previous Ritz vectors seed the next call.
    """

    def __init__(self, tol: float = 1e-3, maxiter: int = 2000, seed: int = 0):
        self.tol = tol
        self.maxiter = maxiter
        self._seed = seed
        self._vmax = None
        self._vmin = None

    def _start(self, v, n):
        if v is None or len(v) != n:
            v = np.random.default_rng(self._seed).standard_normal(n)
        return v

    def __call__(self, H) -> tuple[float, float]:
        n = H.shape[0]
        if n < 20:
            w = np.linalg.eigvalsh(_dense(H))
            return float(w[0]), float(w[-1])
        try:
            wmax, vmax = sla.eigsh(
                H, k=1, which="LA", tol=self.tol, maxiter=self.maxiter,
                v0=self._start(self._vmax, n),
            )
            wmin, vmin = sla.eigsh(
                H, k=1, which="SA", tol=self.tol, maxiter=self.maxiter,
                v0=self._start(self._vmin, n),
            )
        except sla.ArpackNoConvergence as exc:
            raise SpectralError(f"Lanczos estimate did not converge: {exc}") from exc
        self._vmax, self._vmin = vmax[:, 0], vmin[:, 0]
        return float(wmin[0]), float(wmax[0])


def classify(H_or_eigs, tol_eig: float | None = None) -> Classification:
    """Stability of a critical point from the Hessian spectrum.

    Accepts a Hessian, a ``SpectralReport``, or a ``(lambda_min, lambda_max)``
    pair.  The default tolerance is ``1e-8 * lambda_max``.
    """
    if isinstance(H_or_eigs, SpectralReport):
        lo, hi = H_or_eigs.lambda_min, H_or_eigs.lambda_max
    elif isinstance(H_or_eigs, tuple):
        lo, hi = map(float, H_or_eigs)
    else:
        lo, hi = extreme_eigenvalues(H_or_eigs)
    if tol_eig is None:
        tol_eig = 1e-8 * abs(hi)
    if lo > tol_eig:
        return Classification.LOCAL_MINIMIZER
    if lo < -tol_eig:
        return Classification.SADDLE
    return Classification.MARGINAL


def smallest_k_eigenpairs(
    H, k: int, mesh: Mesh | None = None, tol_eig: float | None = None, phi: np.ndarray | None = None
) -> SpectralReport:
    """The ``k`` smallest eigenpairs, extended so a degenerate pair is never split.

    With ``phi`` and ``mesh`` given, an eigenpair that is numerically zero and
    aligned with the pattern-rotation direction of ``phi`` is flagged as
    neutral and ignored by the classification.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    H = _as_operator(H)
    n = H.shape[0]
    kk = min(k + 2, n)
    if n <= DENSE_LIMIT:
        Hd = _dense(H)
        w, v = sl.eigh(Hd, subset_by_index=[0, kk - 1])
        hi = float(sl.eigh(Hd, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])
    else:
        try:
            w, v = sla.eigsh(H, k=kk, which="SA", tol=1e-12)
            hi = float(sla.eigsh(H, k=1, which="LA", return_eigenvectors=False)[0])
        except sla.ArpackNoConvergence as exc:
            raise SpectralError(f"eigenpairs did not converge: {exc}") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    keep = min(k, n)
    if keep < len(w) and _near(w[keep - 1], w[keep], hi):
        keep += 1
    neutral = None
    if phi is not None and mesh is not None:
        neutral = _find_neutral(w, v, hi, phase_shift_generator(phi, mesh))
        if neutral is not None and neutral >= keep - 1 and keep < len(w):
            keep += 1
    w, v = w[:keep], v[:, :keep]
    report = SpectralReport(
        eigenvalues=np.asarray(w, dtype=float),
        eigenvectors=np.asarray(v, dtype=float),
        lambda_max=hi,
        classification=Classification.MARGINAL,
        neutral_index=neutral if neutral is not None and neutral < keep else None,
    )
    report.classification = classify(report, tol_eig)
    if mesh is not None:
        report.mode_wavenumbers = [mode_wavenumber(v[:, i], mesh) for i in range(v.shape[1])]
    return report


def phase_shift_generator(phi: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Tangent of the family ``x(X) -> Q x(Q^T X)`` of rotated patterns at ``phi``.

    Rotating both the material labels and the deformed positions keeps the
    fixed outer ring in place, so on the continuum this is an exact symmetry.
    The angular derivative along each ring is spectral (FFT).  The result is
    zero for an axisymmetric state.
    """
    x = mesh.full_coords(np.asarray(phi, dtype=float)).reshape(mesh.n_radial + 1, mesh.n_circ, 2)
    n = mesh.n_circ
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    dx = np.fft.ifft(1j * k[None, :, None] * np.fft.fft(x, axis=1), axis=1).real
    rx = np.stack([-x[..., 1], x[..., 0]], axis=-1)
    return (rx - dx).reshape(-1)[mesh.free_dofs]


def _find_neutral(w, v, lam_max: float, gen: np.ndarray) -> int | None:
    norm = np.linalg.norm(gen)
    if norm < 1e-10 * np.sqrt(len(gen)):
        return None
    gen = gen / norm
    for i, lam in enumerate(w):
        if abs(lam) <= NEUTRAL_RTOL * abs(lam_max) and abs(v[:, i] @ gen) >= NEUTRAL_OVERLAP:
            return i
    return None


def _near(a: float, b: float, scale: float) -> bool:
    return abs(a - b) <= DEGENERACY_RTOL * max(abs(a), abs(b), 1e-12 * abs(scale))


def eigen_residuals(H, report: SpectralReport) -> np.ndarray:
    V = report.eigenvectors
    R = H @ V - V * report.eigenvalues
    return np.linalg.norm(R, axis=0)


def inner_ring_radial(v: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Radial component of a free-DOF field at the inner-boundary nodes."""
    ring = mesh.inner_ring
    dofs = mesh.free_dof_map[ring]
    u = np.column_stack([v[dofs[:, 0]], v[dofs[:, 1]]])
    X = mesh.nodes[ring]
    return np.einsum("ij,ij->i", u, X) / np.linalg.norm(X, axis=1)


def mode_wavenumber(v: np.ndarray, mesh: Mesh, threshold: float = 0.5) -> int | None:
    """Dominant circumferential Fourier mode of the inner-ring radial component.

    Returns ``None`` when no single mode carries more than ``threshold`` of the
    spectral power (mixed or localized fields).
    """
    r = inner_ring_radial(np.asarray(v, dtype=float), mesh)
    power = np.abs(np.fft.rfft(r)) ** 2
    # one-sided spectrum: double every bin that has a mirror image
    power[1 : (len(r) + 1) // 2] *= 2.0
    total = power.sum()
    if total == 0:
        return None
    m = int(np.argmax(power))
    return m if power[m] > threshold * total else None
