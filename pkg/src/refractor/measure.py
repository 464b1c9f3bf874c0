"""Poly-oval refractor surface and its discrete energy measure.

The surface over the cap is rho(x) = min_i h(x, P_i, b_i); the cell of target
i is where oval i attains the minimum (smallest index wins ties). The measure
H_i(b) sums the per-node energies f*w over cell i. Summation is sequential in
node order, so refining b_i monotonically grows H_i bitwise, not just up to
roundoff.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import QuadratureGrid, dir_from_spherical
from .oval import _radius_from_t, normals_for_directions
from .parallel import map_chunks
from .scene import Scene, check_b_vector

TIE_REL = 1e-12


@dataclass(frozen=True, eq=False)
class CellAssignment:
    labels: np.ndarray  # (n,) int, 0-based target index per node
    ties: np.ndarray    # (n,) bool, two smallest radii within TIE_REL * rho


@dataclass(frozen=True, eq=False)
class MeasureVector:
    H: np.ndarray   # (N,) per-target energy
    total: float    # float sum of H


def radii_matrix(scene: Scene, b, dirs: np.ndarray) -> np.ndarray:
    """Oval radii h(x, P_j, b_j) for unit directions dirs (n, 3) -> (n, N).

    Dot products are accumulated componentwise (not via GEMM) so chunked and
    unchunked evaluation agree bitwise.
    """
    b = np.asarray(b, dtype=float)
    pts = scene.points
    p_norms = scene.p_norms
    kappa = scene.kappa
    n = dirs.shape[0]

    def work(sl):
        x = dirs[sl]
        cols = np.empty((x.shape[0], scene.n_targets))
        for j in range(scene.n_targets):
            t = x[:, 0] * pts[j, 0] + x[:, 1] * pts[j, 1] + x[:, 2] * pts[j, 2]
            cols[:, j], _ = _radius_from_t(t, float(b[j]), float(p_norms[j]), kappa)
        return cols

    return np.concatenate(map_chunks(work, n), axis=0)


def rho(scene: Scene, b, x):
    """Surface radius and owning target index at a single unit direction."""
    radii = radii_matrix(scene, b, np.asarray(x, dtype=float).reshape(1, 3))[0]
    label = int(np.argmin(radii))
    return float(radii[label]), label


def _assign(radii: np.ndarray) -> CellAssignment:
    labels = np.argmin(radii, axis=1)
    if radii.shape[1] == 1:
        ties = np.zeros(radii.shape[0], dtype=bool)
    else:
        two = np.partition(radii, 1, axis=1)
        ties = (two[:, 1] - two[:, 0]) < TIE_REL * two[:, 0]
    return CellAssignment(labels=labels, ties=ties)


def assign_cells(scene: Scene, b, grid: QuadratureGrid) -> CellAssignment:
    """Label every grid node with the target whose oval sits lowest there."""
    return _assign(radii_matrix(scene, b, grid.nodes))


def node_energies(grid: QuadratureGrid, f_values: np.ndarray) -> np.ndarray:
    return np.asarray(f_values, dtype=float) * grid.weights


def total_energy(grid: QuadratureGrid, f_values) -> float:
    """Total discrete source energy sum_k f_k * w_k."""
    return float(np.sum(node_energies(grid, np.asarray(f_values, dtype=float))))


def refractor_measure(scene: Scene, b, grid: QuadratureGrid, f_values) -> MeasureVector:
    """Per-target refracted energy H_i(b) = sum of f*w over cell i.

    Each node contributes to exactly one cell, so the H_i form an exact
    partition of the per-node energies; total is their float sum.
    """
    assignment = assign_cells(scene, b, grid)
    e = node_energies(grid, np.asarray(f_values, dtype=float))
    H = np.bincount(assignment.labels, weights=e, minlength=scene.n_targets)
    return MeasureVector(H=H, total=float(H.sum()))


def flood_vector(scene: Scene, b, i: int) -> np.ndarray:
    """Parameter vector that floods the whole cap into cell i.

    Drops b_i until the global maximum of oval i sits strictly below every
    other oval's global minimum, with a 1e-9 relative safety margin:
    b_i = kappa|P_i| + min_{j != i}(b_j - kappa|P_j|) * (1-kappa)/(1+kappa) * (1 - 1e-9).
    """
    b = np.asarray(b, dtype=float).copy()
    kp = scene.kappa * scene.p_norms
    spans = b - kp
    others = np.delete(spans, i)
    b[i] = kp[i] + float(np.min(others)) * (1.0 - scene.kappa) / (1.0 + scene.kappa) * (1.0 - 1e-9)
    return b


# --- surface mesh export ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    vertices: np.ndarray  # (V, 3)
    normals: np.ndarray   # (V, 3) per-vertex, from the owning oval
    faces: np.ndarray     # (F, 3) int, 0-based vertex indices
    labels: np.ndarray    # (V,) 0-based owning target per vertex


def export_mesh(scene: Scene, b, n_theta: int, n_phi: int) -> SurfaceMesh:
    """Triangulated surface over the cap on an n_theta x n_phi vertex grid.

    Rings sit at theta_k = half_angle*(k+1)/n_theta (the apex point is skipped
    to avoid degenerate fans), azimuths at phi_l = 2 pi l / n_phi, theta-major
    vertex order. At cell creases the smaller-index oval supplies the normal,
    which is what the argmin labeling already yields.
    """
    if n_theta < 2 or n_phi < 3:
        raise ValueError("mesh needs n_theta >= 2 and n_phi >= 3")
    b = check_b_vector(scene, b)
    psi = scene.cap.half_angle
    thetas = psi * (np.arange(n_theta) + 1.0) / n_theta
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    tt = np.repeat(thetas, n_phi)
    pp = np.tile(phis, n_theta)
    dirs = dir_from_spherical(tt, pp, scene.cap)

    radii = radii_matrix(scene, b, dirs)
    labels = np.argmin(radii, axis=1)
    rr = radii[np.arange(len(labels)), labels]
    vertices = rr[:, None] * dirs

    normals = np.empty_like(vertices)
    for j in range(scene.n_targets):
        mask = labels == j
        if np.any(mask):
            normals[mask] = normals_for_directions(
                dirs[mask], scene.points[j], float(b[j]), scene.kappa
            )

    faces = []
    for k in range(n_theta - 1):
        for l in range(n_phi):
            a = k * n_phi + l
            bb = k * n_phi + (l + 1) % n_phi
            c = (k + 1) * n_phi + (l + 1) % n_phi
            d = (k + 1) * n_phi + l
            faces.append((a, bb, c))
            faces.append((a, c, d))
    return SurfaceMesh(
        vertices=vertices, normals=normals,
        faces=np.array(faces, dtype=int), labels=labels,
    )


def write_obj(mesh: SurfaceMesh, path) -> None:
    """Write the mesh as Wavefront OBJ (v/vn/f records, 1-based indices)."""
    with open(path, "w") as fh:
        fh.write("# poly-oval refractor surface\n")
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for n in mesh.normals:
            fh.write(f"vn {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}\n")
        for f in mesh.faces:
            a, b, c = (int(i) + 1 for i in f)
            fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")


def write_label_csv(path, grid: QuadratureGrid, f_values, assignment: CellAssignment) -> None:
    """Per-node dump: node_index, theta, phi, weight, f, label (targets 1-based)."""
    f_values = np.asarray(f_values, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_index", "theta", "phi", "weight", "f", "label"])
        for k in range(grid.n_nodes):
            writer.writerow([
                k, repr(float(grid.thetas[k])), repr(float(grid.phis[k])),
                repr(float(grid.weights[k])), repr(float(f_values[k])),
                int(assignment.labels[k]) + 1,
            ])
