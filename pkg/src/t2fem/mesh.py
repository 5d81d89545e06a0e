"""Hexahedral meshes: geometry queries, quality checks, rigid poses.

Node ordering for every element (bottom face counterclockwise, then the top
face in the same sense)::

          7--------6
         /|       /|          zeta
        4--------5 |           |  eta
        | |      | |           | /
        | 3------|-2           |/
        |/       |/            +----- xi
        0--------1

Node a sits at natural coordinates (xi, eta, zeta) = CORNER_SIGNS[a], each
component +-1.  All geometry and FEM code in the package shares this
convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from t2fem.raster import VoxelGrid

PART_LABELS = ("femoral-cartilage", "tibial-cartilage", "meniscus", "other")
CARTILAGE_PARTS = ("femoral-cartilage", "tibial-cartilage")

CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)

# Fixed 6-tetrahedron decomposition along the 0-6 diagonal.  The overlap
# machinery in t2fem.transfer uses the same split, so warped-face cells have
# one consistent geometric meaning across the package.
TET_SPLIT = np.array(
    [
        [0, 1, 2, 6],
        [0, 2, 3, 6],
        [0, 3, 7, 6],
        [0, 7, 4, 6],
        [0, 4, 5, 6],
        [0, 5, 1, 6],
    ],
    dtype=np.int64,
)

# Local node ids of the 6 quad faces (outward order is irrelevant here; faces
# are matched as sorted node-id 4-tuples).
HEX_FACES = np.array(
    [
        [0, 1, 2, 3],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [3, 0, 4, 7],
    ],
    dtype=np.int64,
)


def shape_gradients(xi: float, eta: float, zeta: float) -> np.ndarray:
    """Trilinear shape-function gradients d N_a / d(xi,eta,zeta), shape (8, 3)."""
    s = CORNER_SIGNS
    g = np.empty((8, 3))
    g[:, 0] = 0.125 * s[:, 0] * (1 + s[:, 1] * eta) * (1 + s[:, 2] * zeta)
    g[:, 1] = 0.125 * (1 + s[:, 0] * xi) * s[:, 1] * (1 + s[:, 2] * zeta)
    g[:, 2] = 0.125 * (1 + s[:, 0] * xi) * (1 + s[:, 1] * eta) * s[:, 2]
    return g


_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = np.array(
    [[sx * _G, sy * _G, sz * _G] for sx, sy, sz in CORNER_SIGNS]
)
GAUSS_WEIGHTS = np.ones(8)

# (8 gauss points, 8 nodes, 3): gradient tables evaluated once.
GAUSS_GRADS = np.stack([shape_gradients(*p) for p in GAUSS_POINTS])
CORNER_GRADS = np.stack([shape_gradients(*p) for p in CORNER_SIGNS])


@dataclass(frozen=True)
class HexMesh:
    """8-node hexahedral mesh with part labels and named node sets.

    ``nodes`` is (n_nodes, 3) mm, ``elements`` (n_elements, 8) 0-based node
    ids in the package ordering, ``parts`` one label per element, and
    ``node_sets`` maps set names to node-id arrays.
    """

    nodes: np.ndarray
    elements: np.ndarray
    parts: tuple[str, ...]
    node_sets: dict[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "elements", np.asarray(self.elements, dtype=np.int64))
        object.__setattr__(self, "parts", tuple(self.parts))
        object.__setattr__(
            self,
            "node_sets",
            {k: np.asarray(v, dtype=np.int64) for k, v in self.node_sets.items()},
        )
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise ValueError("nodes must be (n, 3)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 8:
            raise ValueError("elements must be (m, 8)")
        if len(self.parts) != self.n_elements:
            raise ValueError("need one part label per element")
        n = self.n_nodes
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise ValueError("element node index out of range")
        distinct = np.array(
            [len(set(e.tolist())) == 8 for e in self.elements], dtype=bool
        )
        if not distinct.all():
            bad = int(np.nonzero(~distinct)[0][0])
            raise ValueError(f"element {bad} is degenerate (repeated node)")
        for name, ids in self.node_sets.items():
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise ValueError(f"node set {name!r} references a missing node")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_corners(self, e: int | None = None) -> np.ndarray:
        """Corner coordinates, (8, 3) for one element or (m, 8, 3) for all."""
        if e is None:
            return self.nodes[self.elements]
        self._check_eid(e)
        return self.nodes[self.elements[e]]

    def elements_of_parts(self, parts) -> np.ndarray:
        wanted = set(parts)
        return np.array(
            [i for i, p in enumerate(self.parts) if p in wanted], dtype=np.int64
        )

    def _check_eid(self, e: int) -> None:
        if not 0 <= e < self.n_elements:
            raise IndexError(f"element id {e} out of range [0, {self.n_elements})")


def element_centroid(mesh: HexMesh, e: int) -> np.ndarray:
    """Arithmetic mean of the element's 8 node coordinates (mm)."""
    mesh._check_eid(e)
    return mesh.nodes[mesh.elements[e]].mean(axis=0)


def element_centroids(mesh: HexMesh) -> np.ndarray:
    return mesh.nodes[mesh.elements].mean(axis=1)


def corner_jacobians(corners: np.ndarray) -> np.ndarray:
    """det(dx/dxi) at the 8 corners of one or many hexes.

    corners: (8, 3) or (m, 8, 3); returns (8,) or (m, 8).
    """
    c = np.asarray(corners, dtype=float)
    single = c.ndim == 2
    if single:
        c = c[None]
    # J[m, p, k, l] = sum_a corners[m, a, l] * CORNER_GRADS[p, a, k]
    jac = np.einsum("pak,mal->mpkl", CORNER_GRADS, c)
    dets = np.linalg.det(jac)
    return dets[0] if single else dets


def element_volume(mesh: HexMesh, e: int) -> float:
    """Trilinear element volume by 2x2x2 Gauss quadrature of det J (mm^3).

    Exact for the trilinear map (det J has degree <= 3 per natural axis).
    Raises if any quadrature-point Jacobian is nonpositive.
    """
    mesh._check_eid(e)
    return float(element_volumes(mesh, np.array([e]))[0])


def element_volumes(mesh: HexMesh, ids=None) -> np.ndarray:
    corners = mesh.element_corners() if ids is None else mesh.nodes[mesh.elements[ids]]
    jac = np.einsum("pak,mal->mpkl", GAUSS_GRADS, corners)
    dets = np.linalg.det(jac)
    if np.any(dets <= 0):
        bad = int(np.nonzero(np.any(dets <= 0, axis=1))[0][0])
        eid = bad if ids is None else int(np.asarray(ids)[bad])
        raise ValueError(f"element {eid} has a nonpositive Jacobian")
    return dets @ GAUSS_WEIGHTS


def tet_decomposition_volume(corners: np.ndarray) -> float:
    """Volume of the fixed 6-tet split of a hex (mm^3).

    This is the geometry the voxel-overlap machinery integrates, so it is
    also the denominator consistent with summed overlap volumes.  Equals the
    trilinear volume exactly when all faces are planar.
    """
    c = np.asarray(corners, dtype=float)
    tets = c[TET_SPLIT]
    edges = tets[:, 1:, :] - tets[:, :1, :]
    return float(np.abs(np.linalg.det(edges)).sum() / 6.0)


def check_jacobians(mesh: HexMesh) -> list[int]:
    """Element ids whose corner Jacobian is nonpositive anywhere."""
    if mesh.n_elements == 0:
        return []
    dets = corner_jacobians(mesh.element_corners())
    return [int(i) for i in np.nonzero(np.any(dets <= 0, axis=1))[0]]


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid transform: x -> rotation @ x + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        r = self.rotation
        if r.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if abs(np.linalg.det(r) - 1.0) > 1e-9 or not np.allclose(
            r.T @ r, np.eye(3), atol=1e-8
        ):
            raise ValueError("rotation must be orthonormal with det = +1")

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> RigidTransform:
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.rotation.T + self.translation


def apply_pose(obj, t: RigidTransform):
    """Apply a rigid transform to a mesh or to a grid's pose.

    Grid voxel data is never resampled: only origin and direction move.
    Mesh node coordinates are transformed.
    """
    if isinstance(obj, VoxelGrid):
        new_origin = t.rotation @ np.asarray(obj.origin) + t.translation
        return replace(
            obj, origin=tuple(new_origin), direction=t.rotation @ obj.direction
        )
    if isinstance(obj, HexMesh):
        return replace(obj, nodes=t.apply_points(obj.nodes))
    raise TypeError(f"cannot pose object of type {type(obj).__name__}")


def write_mesh(mesh: HexMesh, path) -> None:
    payload = {
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.elements.tolist(),
        "parts": list(mesh.parts),
        "node_sets": {k: v.tolist() for k, v in mesh.node_sets.items()},
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def read_mesh(path) -> HexMesh:
    data = json.loads(Path(path).read_text())
    return HexMesh(
        np.asarray(data["nodes"], dtype=float),
        np.asarray(data["elements"], dtype=np.int64),
        tuple(data.get("parts", ["other"] * len(data["elements"]))),
        {k: np.asarray(v, dtype=np.int64) for k, v in data.get("node_sets", {}).items()},
    )


def read_mesh_text(path) -> HexMesh:
    """Read a whitespace-delimited node/element listing.

    Grammar (blank lines and ``#`` comments ignored)::

        nodes <N>
        x y z                  # N lines
        elements <M>
        n0 n1 ... n7 [part]    # M lines, 0-based ids, label defaults to "other"
    """
    tokens: list[list[str]] = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.append(line.split())
    if not tokens or tokens[0][0] != "nodes":
        raise ValueError("listing must start with 'nodes <count>'")
    n = int(tokens[0][1])
    nodes = np.array([[float(x) for x in row[:3]] for row in tokens[1 : 1 + n]])
    at = 1 + n
    if at >= len(tokens) or tokens[at][0] != "elements":
        raise ValueError("expected 'elements <count>' after the node block")
    m = int(tokens[at][1])
    rows = tokens[at + 1 : at + 1 + m]
    elements = np.array([[int(x) for x in row[:8]] for row in rows], dtype=np.int64)
    parts = tuple(row[8] if len(row) > 8 else "other" for row in rows)
    return HexMesh(nodes, elements, parts, {})


def build_box_mesh(
    n_cells: tuple[int, int, int],
    size_mm: tuple[float, float, float],
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0),
    part: str = "other",
) -> HexMesh:
    """Regular box mesh of n_cells hexes filling a box of size_mm.

    Node sets "xmin"/"xmax"/"ymin"/"ymax"/"zmin"/"zmax" name the boundary
    planes.
    """
    nx, ny, nz = (int(v) for v in n_cells)
    xs = np.linspace(origin_mm[0], origin_mm[0] + size_mm[0], nx + 1)
    ys = np.linspace(origin_mm[1], origin_mm[1] + size_mm[1], ny + 1)
    zs = np.linspace(origin_mm[2], origin_mm[2] + size_mm[2], nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    elements = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                elements.append(
                    [
                        nid(i, j, k),
                        nid(i + 1, j, k),
                        nid(i + 1, j + 1, k),
                        nid(i, j + 1, k),
                        nid(i, j, k + 1),
                        nid(i + 1, j, k + 1),
                        nid(i + 1, j + 1, k + 1),
                        nid(i, j + 1, k + 1),
                    ]
                )
    elements = np.asarray(elements, dtype=np.int64)

    ii, jj, kk = np.meshgrid(
        np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij"
    )
    flat_ids = (ii * (ny + 1) + jj) * (nz + 1) + kk
    node_sets = {
        "xmin": flat_ids[0].ravel(),
        "xmax": flat_ids[-1].ravel(),
        "ymin": flat_ids[:, 0].ravel(),
        "ymax": flat_ids[:, -1].ravel(),
        "zmin": flat_ids[:, :, 0].ravel(),
        "zmax": flat_ids[:, :, -1].ravel(),
    }
    return HexMesh(nodes, elements, tuple([part] * len(elements)), node_sets)
