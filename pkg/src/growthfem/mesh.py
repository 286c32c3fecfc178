"""Graded annular triangulation with region and boundary tags."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh parameters or malformed mesh file."""


class Region(IntEnum):
    NON_GROWING = 0
    GROWING = 1


class Boundary(IntEnum):
    BULK = 0
    FREE_INTERIOR = 1
    DIRICHLET_EXTERIOR = 2


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation of the reference annulus.

    Nodes are indexed ring-major (ring 0 is the inner boundary), sector-minor,
    with sector 0 at angle 0.  Every triangle ``(k, k-, k+)`` is stored in
    counterclockwise order.
    """

    nodes: np.ndarray  # (N, 2) reference coordinates
    triangles: np.ndarray  # (T, 3) node indices, counterclockwise
    region: np.ndarray  # (T,) Region tags
    boundary: np.ndarray  # (N,) Boundary tags
    n_radial: int = 0
    n_circ: int = 0
    r_in: float = 0.0
    r_out: float = 0.0
    free_nodes: np.ndarray = field(init=False, repr=False)
    free_dof_map: np.ndarray = field(init=False, repr=False)
    free_dofs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (N, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("triangles must have shape (T, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(nodes)):
            raise MeshError("triangle references a missing node")
        region = np.asarray(self.region, dtype=np.int8)
        boundary = np.asarray(self.boundary, dtype=np.int8)
        if region.shape != (len(tris),) or boundary.shape != (len(nodes),):
            raise MeshError("tag arrays do not match mesh size")

        free = np.flatnonzero(boundary != Boundary.DIRICHLET_EXTERIOR)
        dof_map = np.full((len(nodes), 2), -1, dtype=np.int64)
        dof_map[free, 0] = 2 * np.arange(len(free))
        dof_map[free, 1] = 2 * np.arange(len(free)) + 1
        # flat index into nodes.ravel() for each free DOF, x/y interleaved
        free_dofs = np.empty(2 * len(free), dtype=np.int64)
        free_dofs[0::2] = 2 * free
        free_dofs[1::2] = 2 * free + 1

        for name, value in (
            ("nodes", nodes),
            ("triangles", tris),
            ("region", region),
            ("boundary", boundary),
            ("free_nodes", free),
            ("free_dof_map", dof_map),
            ("free_dofs", free_dofs),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_free_dofs(self) -> int:
        return len(self.free_dofs)

    @property
    def growing(self) -> np.ndarray:
        return self.region == Region.GROWING

    @property
    def inner_ring(self) -> np.ndarray:
        """Free-boundary node indices in circumferential order.

        For ring-major meshes this is simply the first ring, which stays
        correct for deformed snapshots whose boundary folds back on itself.
        """
        idx = np.flatnonzero(self.boundary == Boundary.FREE_INTERIOR)
        if self.n_circ and len(idx) == self.n_circ and idx[-1] == self.n_circ - 1:
            return idx
        ang = np.arctan2(self.nodes[idx, 1], self.nodes[idx, 0]) % (2 * np.pi)
        return idx[np.argsort(ang, kind="stable")]

    def reference_vector(self) -> np.ndarray:
        """Free-DOF vector of the undeformed configuration."""
        return self.nodes.ravel()[self.free_dofs].copy()

    def full_coords(self, phi: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Expand a free-DOF vector to (N, 2) coordinates.

        Dirichlet nodes keep their reference positions.
        """
        if out is None:
            out = self.nodes.copy()
        flat = out.reshape(-1)
        flat[self.free_dofs] = phi
        return out

    def free_vector(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=float).reshape(-1)[self.free_dofs].copy()

    def reference_edge_matrices(self) -> np.ndarray:
        """M for every triangle, shape (T, 2, 2), columns ``X[k-]-X[k]`` and ``X[k+]-X[k]``."""
        return edge_matrices(self.nodes, self.triangles)

    def reference_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.det(self.reference_edge_matrices())


def edge_matrices(coords: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = coords[triangles]
    out = np.empty((len(triangles), 2, 2))
    out[:, :, 0] = p[:, 1] - p[:, 0]
    out[:, :, 1] = p[:, 2] - p[:, 0]
    return out


def reference_edge_matrix(mesh: Mesh, t: int) -> np.ndarray:
    """Reference edge matrix of a single triangle."""
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range")
    return edge_matrices(mesh.nodes, mesh.triangles[t : t + 1])[0]


def signed_areas(coords: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = coords[triangles]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def build_annulus(
    r_in: float,
    r_out: float,
    n_radial: int,
    n_circ: int,
    growing_layers: int,
    split: str = "uniform",
) -> Mesh:
    """Triangulate the annulus ``r_in <= r <= r_out``.

    Ring radii grow geometrically by ``(r_out/r_in)**(1/n_radial)`` so that all
    cells are similar.  Each quad between rings ``i`` and ``i+1`` is cut along
    the diagonal from ``(i, j)`` to ``(i+1, j+1)``; ``split="alternating"``
    flips the diagonal on every other sector.
    """
    if not (0 < r_in < r_out) or not np.isfinite(r_out):
        raise MeshError(f"need 0 < r_in < r_out, got r_in={r_in}, r_out={r_out}")
    if n_radial < 1 or n_circ < 3:
        raise MeshError(f"need n_radial >= 1 and n_circ >= 3, got {n_radial}, {n_circ}")
    if not 0 <= growing_layers <= n_radial:
        raise MeshError(f"growing_layers must lie in [0, {n_radial}], got {growing_layers}")
    if split not in ("uniform", "alternating"):
        raise MeshError(f"unknown split {split!r}")

    ratio = (r_out / r_in) ** (1.0 / n_radial)
    radii = r_in * ratio ** np.arange(n_radial + 1)
    radii[-1] = r_out
    theta = 2.0 * np.pi * np.arange(n_circ) / n_circ
    nodes = np.column_stack(
        [np.outer(radii, np.cos(theta)).ravel(), np.outer(radii, np.sin(theta)).ravel()]
    )

    tris = []
    region = []
    for i in range(n_radial):
        tag = Region.GROWING if i < growing_layers else Region.NON_GROWING
        for j in range(n_circ):
            jn = (j + 1) % n_circ
            a, b = i * n_circ + j, i * n_circ + jn  # inner ring
            c, d = (i + 1) * n_circ + j, (i + 1) * n_circ + jn  # outer ring
            if split == "alternating" and j % 2:
                # diagonal (i, j+1)-(i+1, j)
                tris += [(a, b, c), (b, d, c)]
            else:
                tris += [(a, b, d), (a, d, c)]
            region += [tag, tag]
    tris = np.array(tris, dtype=np.int64)
    # enforce counterclockwise order by swapping k- and k+ where needed
    neg = signed_areas(nodes, tris) < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]

    boundary = np.full(len(nodes), Boundary.BULK, dtype=np.int8)
    boundary[:n_circ] = Boundary.FREE_INTERIOR
    boundary[n_radial * n_circ :] = Boundary.DIRICHLET_EXTERIOR
    return Mesh(
        nodes=nodes,
        triangles=tris,
        region=np.array(region, dtype=np.int8),
        boundary=boundary,
        n_radial=n_radial,
        n_circ=n_circ,
        r_in=float(r_in),
        r_out=float(r_out),
    )


def write_snapshot(path: str | Path, mesh: Mesh, coords: np.ndarray | None = None) -> None:
    """Write ``nodes N triangles T`` followed by node and triangle lines.

    ``coords`` replaces the reference coordinates (deformed snapshots); values
    are written with 17 significant digits so a read-back is bitwise exact.
    """
    coords = mesh.nodes if coords is None else np.asarray(coords, dtype=float)
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}"]
    lines += [
        f"{x:.17g} {y:.17g} {Boundary(int(tag)).name}"
        for (x, y), tag in zip(coords, mesh.boundary)
    ]
    lines += [
        f"{i} {j} {k} {Region(int(tag)).name}"
        for (i, j, k), tag in zip(mesh.triangles, mesh.region)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path: str | Path) -> tuple[Mesh, np.ndarray]:
    """Read a snapshot file; returns the mesh (with the file coordinates as its
    nodes) together with those coordinates."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise MeshError(f"{path}: empty snapshot")
    head = text[0].split()
    if len(head) != 4 or head[0] != "nodes" or head[2] != "triangles":
        raise MeshError(f"{path}: bad header {text[0]!r}")
    n, t = int(head[1]), int(head[3])
    if len(text) < 1 + n + t:
        raise MeshError(f"{path}: expected {n} nodes and {t} triangles")
    coords = np.empty((n, 2))
    boundary = np.empty(n, dtype=np.int8)
    for i, line in enumerate(text[1 : 1 + n]):
        x, y, tag = line.split()
        coords[i] = float(x), float(y)
        boundary[i] = Boundary[tag]
    tris = np.empty((t, 3), dtype=np.int64)
    region = np.empty(t, dtype=np.int8)
    for i, line in enumerate(text[1 + n : 1 + n + t]):
        a, b, c, tag = line.split()
        tris[i] = int(a), int(b), int(c)
        region[i] = Region[tag]
    inner = coords[boundary == Boundary.FREE_INTERIOR]
    outer = coords[boundary == Boundary.DIRICHLET_EXTERIOR]
    r_in = float(np.hypot(*inner.T).mean()) if len(inner) else 0.0
    r_out = float(np.hypot(*outer.T).mean()) if len(outer) else 0.0
    mesh = Mesh(coords, tris, region, boundary, r_in=r_in, r_out=r_out,
                n_circ=len(outer), n_radial=(n // len(outer) - 1) if len(outer) else 0)
    return mesh, coords
