"""Parametric forearm mesh: lattice construction, latent shape space, pose.

The forearm is a truncated cone sampled on a regular angle/height lattice,
with a per-level radial offset profile for fine sculpting, two cap vertices,
an interior mid marker vertex, and three joints (elbow, mid, wrist) on the
axis at z = 0, h/2, h. Rotations applied to the mesh keep only the component
that moves the axis; spin about the axis is unobservable for the radially
symmetric geometry and is discarded.

Meshes are immutable value objects and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateArmError,
    DegenerateInputError,
    DimensionMismatchError,
    NonPositiveRadiusError,
    NotWatertightError,
    SchemaError,
)

DEFAULT_N_THETA = 50
DEFAULT_N_Z = 12


@dataclass(frozen=True)
class FarmShape:
    """Forearm shape: end radii, length, and a per-level radial offset profile (all mm)."""

    elbow_radius: float
    wrist_radius: float
    length: float
    radial_offsets: np.ndarray  # (n_z,)

    def __post_init__(self):
        offsets = np.asarray(self.radial_offsets, dtype=float)
        if offsets.ndim != 1 or offsets.size < 2:
            raise DimensionMismatchError("radial_offsets must be a vector of length n_z >= 2")
        object.__setattr__(self, "radial_offsets", offsets)
        if self.length <= 0:
            raise ValueError("length must be positive")
        # degenerate end radii (a perfect cone tip) are representable for
        # volume evaluation; meshing requires strictly positive rings
        if np.any(self.level_radii() < 0):
            raise NonPositiveRadiusError("negative level radius for this shape")

    @property
    def n_z(self) -> int:
        return self.radial_offsets.size

    def level_radii(self) -> np.ndarray:
        frac = np.arange(self.n_z) / (self.n_z - 1)
        return self.elbow_radius + (self.wrist_radius - self.elbow_radius) * frac + self.radial_offsets

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [[self.elbow_radius, self.wrist_radius, self.length], self.radial_offsets]
        )

    @classmethod
    def from_vector(cls, s) -> "FarmShape":
        s = np.asarray(s, dtype=float)
        return cls(float(s[0]), float(s[1]), float(s[2]), s[3:].copy())

    @classmethod
    def tapered(cls, elbow_radius, wrist_radius, length, n_z: int = DEFAULT_N_Z) -> "FarmShape":
        return cls(elbow_radius, wrist_radius, length, np.zeros(n_z))


@dataclass(frozen=True)
class FarmMesh:
    """Watertight triangulated forearm surface plus the three axis joints."""

    vertices: np.ndarray  # (n_theta * n_z + 3, 3) mm
    faces: np.ndarray  # (F, 3) int
    joints: np.ndarray  # (3, 3) mm: elbow, mid, wrist

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64))
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=float))


def lattice_vertices(radii: np.ndarray, length: float, n_theta: int) -> np.ndarray:
    """Ring lattice plus bottom/top cap vertices and the interior mid marker.

    Level j's ring occupies indices [j*n_theta, (j+1)*n_theta); the three
    trailing vertices are bottom center, top center, mid marker.
    """
    n_z = radii.size
    theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    z = np.arange(n_z) * length / (n_z - 1)
    rings = np.empty((n_z, n_theta, 3))
    rings[:, :, 0] = radii[:, None] * cos_t[None, :]
    rings[:, :, 1] = radii[:, None] * sin_t[None, :]
    rings[:, :, 2] = z[:, None]
    extra = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, length], [0.0, 0.0, 0.5 * length]])
    return np.vstack([rings.reshape(-1, 3), extra])


def lattice_faces(n_theta: int, n_z: int) -> np.ndarray:
    """Outward-oriented triangles: split side quads along (i,j)->(i+1,j+1), fan caps."""
    faces = []
    for j in range(n_z - 1):
        base, nxt = j * n_theta, (j + 1) * n_theta
        for i in range(n_theta):
            i1 = (i + 1) % n_theta
            a, b = base + i, base + i1
            c, d = nxt + i1, nxt + i
            faces.append((a, b, c))
            faces.append((a, c, d))
    bottom = n_theta * n_z
    top = bottom + 1
    for i in range(n_theta):
        i1 = (i + 1) % n_theta
        faces.append((bottom, i1, i))
        faces.append((top, (n_z - 1) * n_theta + i, (n_z - 1) * n_theta + i1))
    return np.array(faces, dtype=np.int64)


def build_mesh(shape: FarmShape, n_theta: int = DEFAULT_N_THETA, n_z: int = None) -> FarmMesh:
    """Generate the forearm mesh; vertex count is n_theta * n_z + 3."""
    if n_z is None:
        n_z = shape.n_z
    elif n_z != shape.n_z:
        raise DimensionMismatchError(
            f"n_z={n_z} disagrees with the shape's offset profile length {shape.n_z}"
        )
    if n_theta < 3 or n_z < 2:
        raise ValueError("need n_theta >= 3 and n_z >= 2")
    radii = shape.level_radii()
    if np.any(radii <= 0):
        raise NonPositiveRadiusError("level radius <= 0")
    joints = np.array(
        [[0.0, 0.0, 0.0], [0.0, 0.0, 0.5 * shape.length], [0.0, 0.0, shape.length]]
    )
    return FarmMesh(
        vertices=lattice_vertices(radii, shape.length, n_theta),
        faces=lattice_faces(n_theta, n_z),
        joints=joints,
    )


def ring_vertex_indices(mesh: FarmMesh) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays of the elbow (level 0) and wrist (last level) boundary rings.

    The ring size is recovered from the bottom cap fan, which has exactly one
    face per angular subdivision.
    """
    bottom = mesh.vertices.shape[0] - 3
    n_theta = int(np.count_nonzero(np.any(mesh.faces == bottom, axis=1)))
    n_z = bottom // n_theta
    return np.arange(n_theta), np.arange((n_z - 1) * n_theta, n_z * n_theta)


def validate_watertight(mesh: FarmMesh) -> dict:
    """Check edge-manifoldness, orientation consistency and Euler characteristic.

    The surface complex is the set of face-referenced vertices; interior
    marker vertices do not participate. Returns the counts on success.
    """
    faces = mesh.faces
    directed = {}
    for tri in faces:
        a, b, c = (int(v) for v in tri)
        if len({a, b, c}) < 3:
            raise NotWatertightError(f"degenerate face {tri}")
        for e in ((a, b), (b, c), (c, a)):
            if e in directed:
                raise NotWatertightError(f"directed edge {e} used twice; inconsistent orientation")
            directed[e] = True
    undirected = {}
    for (a, b) in directed:
        key = (min(a, b), max(a, b))
        undirected[key] = undirected.get(key, 0) + 1
    bad = [e for e, n in undirected.items() if n != 2]
    if bad:
        raise NotWatertightError(f"{len(bad)} edge(s) not shared by exactly two faces")
    used = np.unique(faces)
    euler = used.size - len(undirected) + faces.shape[0]
    if euler != 2:
        raise NotWatertightError(f"Euler characteristic {euler} != 2")
    return {"vertices": int(used.size), "edges": len(undirected), "faces": int(faces.shape[0])}


def mesh_volume(mesh: FarmMesh) -> float:
    """Signed volume (mm^3) by the divergence theorem; requires a watertight mesh."""
    validate_watertight(mesh)
    v = mesh.vertices
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def volume_frusta(shape: FarmShape, n_z: int = None) -> float:
    """Analytic volume (mm^3) as a stack of conical frusta; exact for linear profiles."""
    if n_z is not None and n_z != shape.n_z:
        raise DimensionMismatchError("n_z disagrees with the shape's profile length")
    r = shape.level_radii()
    dz = shape.length / (shape.n_z - 1)
    return float(math.pi / 3.0 * dz * np.sum(r[:-1] ** 2 + r[:-1] * r[1:] + r[1:] ** 2))


def canonical_gauge(shape: FarmShape) -> FarmShape:
    """Re-express a shape with the least-squares linear radius profile in (r1, r2).

    The (r1, r2, offsets) split is redundant: offsets can absorb any linear
    trend. This picks the gauge where the end radii carry the best-fit linear
    part and the offsets hold only the residual. The level radii, and hence
    the geometry, are unchanged.
    """
    r = shape.level_radii()
    frac = np.arange(shape.n_z) / (shape.n_z - 1)
    design = np.stack([np.ones_like(frac), frac], axis=1)
    (intercept, slope), *_ = np.linalg.lstsq(design, r, rcond=None)
    rho = r - (intercept + slope * frac)
    return FarmShape(float(intercept), float(intercept + slope), shape.length, rho)


@dataclass(frozen=True)
class PcaSpace:
    """Linear latent shape space: shape_vector = basis @ code + mean."""

    basis: np.ndarray  # (3 + n_z, d), orthonormal columns
    mean: np.ndarray  # (3 + n_z,)
    explained: float  # fraction of corpus variance captured

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        if basis.ndim != 2 or mean.ndim != 1 or basis.shape[0] != mean.size:
            raise DimensionMismatchError("basis must be (3+n_z, d) with matching mean")
        gram = basis.T @ basis
        if not np.allclose(gram, np.eye(basis.shape[1]), atol=1e-8):
            raise ValueError("basis columns must be orthonormal")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def n_z(self) -> int:
        return self.mean.size - 3


def decode_shape(pca: PcaSpace, code) -> FarmShape:
    """Affine decode: shape vector = basis @ code + mean."""
    code = np.asarray(code, dtype=float)
    if code.shape != (pca.dim,):
        raise DimensionMismatchError(f"latent code must have shape ({pca.dim},)")
    return FarmShape.from_vector(pca.basis @ code + pca.mean)


def encode_shape(pca: PcaSpace, shape) -> np.ndarray:
    """Orthogonal projection onto the latent space (least-squares inverse of decode)."""
    s = shape.as_vector() if isinstance(shape, FarmShape) else np.asarray(shape, dtype=float)
    if s.shape != pca.mean.shape:
        raise DimensionMismatchError(f"shape vector must have shape {pca.mean.shape}")
    return pca.basis.T @ (s - pca.mean)


def rot6d_to_matrix(r6) -> np.ndarray:
    """Decode the 6D rotation parameterization by Gram-Schmidt; third column by cross product."""
    r6 = np.asarray(r6, dtype=float)
    if r6.shape != (6,):
        raise DimensionMismatchError("6D rotation input must have shape (6,)")
    a1, a2 = r6[:3], r6[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-12:
        raise DegenerateInputError("first basis vector is zero")
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u2)
    if n2 < 1e-12 * max(1.0, np.linalg.norm(a2)):
        raise DegenerateInputError("basis vectors are parallel")
    b2 = u2 / n2
    return np.stack([b1, b2, np.cross(b1, b2)], axis=1)


def matrix_to_rot6d(rot: np.ndarray) -> np.ndarray:
    """First two columns of the rotation matrix, flattened."""
    rot = np.asarray(rot, dtype=float)
    return np.concatenate([rot[:, 0], rot[:, 1]])


def _quat_from_matrix(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix, branch-stable."""
    m = rot
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[2, 1] + m[1, 2]) / s]
        )
    else:
        s = math.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] + m[1, 2]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def swing_twist(rot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor a rotation into (swing, twist) about the local z axis, rot = swing @ twist.

    The twist is the quaternion projection onto the z axis; a swing within
    1e-12 of 180 degrees has an undefined twist and falls back to identity.
    """
    q = _quat_from_matrix(np.asarray(rot, dtype=float))
    norm_zw = math.hypot(q[0], q[3])
    if norm_zw < 1e-12:
        twist = np.eye(3)
    else:
        twist = _quat_to_matrix(np.array([q[0] / norm_zw, 0.0, 0.0, q[3] / norm_zw]))
    swing = np.asarray(rot, dtype=float) @ twist.T
    return swing, twist


def apply_pose(mesh: FarmMesh, rotation: np.ndarray, translation) -> FarmMesh:
    """Rigidly pose the mesh about its mid joint, keeping only the rotation's swing.

    Vertices and the three joints get the identical transform
    v -> swing (v - c) + c + t with c the mid joint.
    """
    swing, _ = swing_twist(np.asarray(rotation, dtype=float))
    t = np.asarray(translation, dtype=float)
    c = mesh.joints[1]
    verts = (mesh.vertices - c) @ swing.T + c + t
    joints = (mesh.joints - c) @ swing.T + c + t
    return FarmMesh(vertices=verts, faces=mesh.faces, joints=joints)


def attach_forearm(hand_joints, farm: FarmMesh) -> tuple[np.ndarray, FarmMesh]:
    """Anchor the forearm at the hand wrist plus a small elbow-direction offset.

    The mesh is translated so its wrist joint meets hand_joints[0], then backed
    off along elbow-wrist by 3% of the elbow-to-wrist length to avoid
    interpenetration; rotation is untouched. Returns (unified 24x3 joints,
    translated mesh) with joint order: 21 hand, then elbow, mid, wrist.
    """
    hand = np.asarray(hand_joints, dtype=float)
    if hand.shape != (21, 3):
        raise DimensionMismatchError("hand_joints must be (21, 3)")
    elbow, wrist = farm.joints[0], farm.joints[2]
    arm_vec = elbow - wrist
    if np.linalg.norm(arm_vec) < 1e-9:
        raise DegenerateArmError("elbow and wrist coincide")
    shift = (hand[0] - wrist) + 0.03 * arm_vec
    moved = FarmMesh(vertices=farm.vertices + shift, faces=farm.faces, joints=farm.joints + shift)
    return np.vstack([hand, moved.joints]), moved


def farm_operator(
    code,
    rot6,
    translation,
    pca: PcaSpace,
    n_theta: int = DEFAULT_N_THETA,
) -> FarmMesh:
    """Latent-to-mesh pipeline: decode shape, build the lattice, apply the swung pose."""
    shape = decode_shape(pca, code)
    return apply_pose(build_mesh(shape, n_theta), rot6d_to_matrix(rot6), translation)


def save_obj(mesh: FarmMesh, path) -> None:
    """Write vertices and triangular faces as Wavefront OBJ (millimeter units)."""
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj_vertices(path) -> np.ndarray:
    """Read the vertex list of an OBJ file; faces and other records are ignored."""
    pts = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] == "v":
                if len(parts) < 4:
                    raise SchemaError(f"malformed vertex line: {line.rstrip()}")
                pts.append([float(parts[1]), float(parts[2]), float(parts[3])])
    if not pts:
        raise SchemaError(f"{path}: no vertices found")
    return np.array(pts)


def shape_to_json(shape: FarmShape) -> dict:
    return {
        "elbow_radius": shape.elbow_radius,
        "wrist_radius": shape.wrist_radius,
        "length": shape.length,
        "n_z": shape.n_z,
        "radial_offsets": shape.radial_offsets.tolist(),
    }


def shape_from_json(obj: dict) -> FarmShape:
    try:
        offsets = np.asarray(obj["radial_offsets"], dtype=float)
        if int(obj["n_z"]) != offsets.size:
            raise SchemaError("n_z disagrees with radial_offsets length")
        return FarmShape(
            float(obj["elbow_radius"]), float(obj["wrist_radius"]), float(obj["length"]), offsets
        )
    except KeyError as exc:
        raise SchemaError(f"shape JSON missing field {exc}") from exc


def pca_to_json(pca: PcaSpace) -> dict:
    return {
        "n_z": pca.n_z,
        "dim": pca.dim,
        "explained": pca.explained,
        "mean": pca.mean.tolist(),
        "basis": pca.basis.tolist(),
    }


def pca_from_json(obj: dict) -> PcaSpace:
    try:
        space = PcaSpace(
            basis=np.asarray(obj["basis"], dtype=float),
            mean=np.asarray(obj["mean"], dtype=float),
            explained=float(obj["explained"]),
        )
    except KeyError as exc:
        raise SchemaError(f"pca JSON missing field {exc}") from exc
    if space.n_z != int(obj.get("n_z", space.n_z)):
        raise SchemaError("n_z disagrees with mean length")
    return space
