"""Checkpoints and small result records."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .optimizer import SolveResult
from .spectral import SpectralReport


@dataclass
class Checkpoint:
    phi: np.ndarray
    g: float
    label: str


def save_checkpoint(path: str | Path, phi: np.ndarray, g: float, label: str) -> None:
    """Restartable state: free-DOF vector, growth value and branch label."""
    with open(path, "wb") as fh:
        np.savez(fh, phi=np.asarray(phi, dtype=float), g=float(g), label=str(label))


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        phi = data["phi"]
        if phi.ndim == 2:  # branch checkpoint: take the last step
            return Checkpoint(phi[-1].copy(), float(data["g"][-1]), str(data["label"]))
        return Checkpoint(phi.copy(), float(data["g"]), str(data["label"]))


def result_record(res: SolveResult, label: str, spectrum: SpectralReport | None = None) -> dict:
    rec = {
        "label": label,
        "g": res.g,
        "converged": bool(res.converged),
        "residual_norm": res.residual_norm,
        "energy": res.energy,
        "gd_iters": res.gd_iters,
        "newton_iters": res.newton_iters,
        "message": res.message,
    }
    if spectrum is not None:
        rec.update(
            classification=spectrum.classification.value,
            lambda_min=spectrum.lambda_min,
            lambda_max=spectrum.lambda_max,
            eigenvalues=[float(x) for x in spectrum.eigenvalues],
            mode_wavenumbers=spectrum.mode_wavenumbers,
        )
    return rec


def write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=float)
