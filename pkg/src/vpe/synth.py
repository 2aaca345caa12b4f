"""Deterministic synthetic driving scenes for tests and demos.

Ground plane, axis-aligned boxes (vehicles), vertical cylinders (poles)
and wall segments are sampled as LiDAR returns whose density falls off
with range. Virtual points are dense samples of the same surfaces inside
the camera frustum, perturbed by Gaussian depth noise along the camera ray
plus a fraction of gross depth outliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import REAL, VIRTUAL, CalibrationModel, PointSet
from .projection import covisible_mask

GROUND, VEHICLE, POLE, WALL = 0, 1, 2, 3
CLASS_NAMES = ("ground", "vehicle", "pole", "wall")
GROUND_Z = -1.7


@dataclass(frozen=True)
class SceneSpec:
    extent: float = 49.0
    n_ground: int = 12000
    n_boxes: int = 10
    n_poles: int = 12
    n_walls: int = 4
    object_density: float = 1500.0  # returns per m^2 at 1 m range
    virtual_per_m2: float = 40.0
    virtual_ground_per_m2: float = 2.0
    sigma: float = 0.05  # depth noise, metres
    outliers: float = 0.1
    ignore_fraction: float = 0.01
    image_size: tuple = (450, 800)
    focal: float = 400.0
    cameras: int = 1


@dataclass(frozen=True)
class _Box:
    lo: np.ndarray
    hi: np.ndarray


@dataclass(frozen=True)
class _Pole:
    center: np.ndarray  # (x, y)
    radius: float
    z0: float
    z1: float


class Scene:
    """Primitive layout plus surface sampling and distance queries."""

    def __init__(self, spec: SceneSpec, rng: np.random.Generator):
        self.spec = spec
        self.boxes: list[_Box] = []
        self.poles: list[_Pole] = []
        self.walls: list[_Box] = []  # zero-thickness boxes
        for _ in range(spec.n_boxes):
            r, th = rng.uniform(6, 42), rng.uniform(-np.pi, np.pi)
            c = np.array([r * np.cos(th), r * np.sin(th)])
            size = np.array([rng.uniform(3.5, 5.0), rng.uniform(1.6, 2.0)])
            if rng.random() < 0.5:
                size = size[::-1]
            lo = np.array([*(c - size / 2), GROUND_Z])
            hi = np.array([*(c + size / 2), GROUND_Z + rng.uniform(1.4, 2.2)])
            self.boxes.append(_Box(lo, hi))
        for _ in range(spec.n_poles):
            r, th = rng.uniform(4, 46), rng.uniform(-np.pi, np.pi)
            self.poles.append(_Pole(np.array([r * np.cos(th), r * np.sin(th)]),
                                    rng.uniform(0.1, 0.2), GROUND_Z, GROUND_Z + rng.uniform(3.0, 5.0)))
        for _ in range(spec.n_walls):
            along_x = rng.random() < 0.5
            pos = rng.uniform(30, 45) * rng.choice([-1, 1])
            start = rng.uniform(-35, 15)
            length = rng.uniform(10, 20)
            if along_x:
                lo = np.array([start, pos, GROUND_Z])
                hi = np.array([start + length, pos, GROUND_Z + 3.0])
            else:
                lo = np.array([pos, start, GROUND_Z])
                hi = np.array([pos, start + length, GROUND_Z + 3.0])
            self.walls.append(_Box(lo, hi))

    # --- sampling -----------------------------------------------------
    @staticmethod
    def _box_faces(b: _Box):
        lo, hi = b.lo, b.hi
        faces = []
        for axis in range(3):
            for side in (lo[axis], hi[axis]):
                if axis == 2 and side == lo[axis]:
                    continue  # bottom rests on the ground
                others = [a for a in range(3) if a != axis]
                area = np.prod([hi[a] - lo[a] for a in others])
                if area > 0:
                    faces.append((axis, side, others, area))
        return faces

    def _sample_box(self, b: _Box, per_m2, rng):
        out = []
        for axis, side, others, area in self._box_faces(b):
            n = rng.poisson(per_m2(b, area))
            if n == 0:
                continue
            p = np.empty((n, 3))
            p[:, axis] = side
            for a in others:
                p[:, a] = rng.uniform(b.lo[a], b.hi[a], n)
            out.append(p)
        return np.concatenate(out) if out else np.zeros((0, 3))

    def _sample_pole(self, pole: _Pole, per_m2, rng):
        area = 2 * np.pi * pole.radius * (pole.z1 - pole.z0)
        n = rng.poisson(per_m2(pole, area))
        th = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(pole.z0, pole.z1, n)
        return np.column_stack([pole.center[0] + pole.radius * np.cos(th),
                                pole.center[1] + pole.radius * np.sin(th), z])

    def sample_objects(self, per_m2, rng) -> tuple[np.ndarray, np.ndarray]:
        pts, labels = [], []
        for b in self.boxes:
            p = self._sample_box(b, per_m2, rng)
            pts.append(p)
            labels.append(np.full(len(p), VEHICLE))
        for pole in self.poles:
            p = self._sample_pole(pole, per_m2, rng)
            pts.append(p)
            labels.append(np.full(len(p), POLE))
        for w in self.walls:
            p = self._sample_box(w, per_m2, rng)
            pts.append(p)
            labels.append(np.full(len(p), WALL))
        return np.concatenate(pts), np.concatenate(labels)

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest sampled surface."""
        best = np.abs(p[:, 2] - GROUND_Z)
        for b in self.boxes + self.walls:
            best = np.minimum(best, _box_surface_distance(p, b))
        for pole in self.poles:
            radial = np.hypot(p[:, 0] - pole.center[0], p[:, 1] - pole.center[1])
            dz = np.maximum(np.maximum(pole.z0 - p[:, 2], p[:, 2] - pole.z1), 0)
            best = np.minimum(best, np.hypot(radial - pole.radius, dz))
        return best


def _box_surface_distance(p: np.ndarray, b: _Box) -> np.ndarray:
    lo, hi = b.lo, b.hi
    outside = np.maximum(np.maximum(lo - p, p - hi), 0)
    d_out = np.linalg.norm(outside, axis=1)
    inside = np.all((p >= lo) & (p <= hi), axis=1)
    d_in = np.min(np.minimum(p - lo, hi - p), axis=1)
    return np.where(inside, d_in, d_out)


def _in_scene(p: np.ndarray, e: float) -> np.ndarray:
    return (np.abs(p[:, 0]) < e) & (np.abs(p[:, 1]) < e) & (p[:, 2] > -3.9) & (p[:, 2] < 2.9)


def rig(spec: SceneSpec) -> list[CalibrationModel]:
    """Cameras at the sensor origin, evenly spaced in yaw, the first looking along +x."""
    H, W = spec.image_size
    K = np.array([[spec.focal, 0, W / 2], [0, spec.focal, H / 2], [0, 0, 1.0]])
    # lidar (x fwd, y left, z up) -> camera (x right, y down, z fwd)
    base = np.array([[0, -1, 0], [0, 0, -1], [1, 0, 0]], dtype=np.float64)
    out = []
    for i in range(spec.cameras):
        yaw = 2 * np.pi * i / spec.cameras
        c, s = np.cos(yaw), np.sin(yaw)
        Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        R = base @ Rz.T
        out.append(CalibrationModel(K=K, R=R, t=np.zeros(3), image_size=(H, W)))
    return out


def synth_scene(spec: SceneSpec = SceneSpec(), seed: int = 0):
    """Return ``(real, virtual, calibs, scene)``; identical seeds give identical bytes."""
    rng = np.random.default_rng(seed)
    scene = Scene(spec, rng)
    calibs = rig(spec)
    e = spec.extent

    # ground: uniform in range -> density ~ 1/r, like a spinning LiDAR
    r = rng.uniform(2.0, e * np.sqrt(2), spec.n_ground * 2)
    th = rng.uniform(-np.pi, np.pi, r.shape[0])
    g = np.column_stack([r * np.cos(th), r * np.sin(th), np.full(r.shape[0], GROUND_Z)])
    g = g[(np.abs(g[:, 0]) < e) & (np.abs(g[:, 1]) < e)][: spec.n_ground]

    def lidar_density(obj, area):
        c = obj.center if isinstance(obj, _Pole) else (obj.lo[:2] + obj.hi[:2]) / 2
        dist = max(np.hypot(*c), 1.0)
        return spec.object_density * area / dist ** 2

    obj, obj_lab = scene.sample_objects(lidar_density, rng)
    coords = np.concatenate([g, obj])
    labels = np.concatenate([np.full(len(g), GROUND), obj_lab]).astype(np.int64)
    keep = (np.abs(coords[:, 0]) < e) & (np.abs(coords[:, 1]) < e)
    coords, labels = coords[keep], labels[keep]
    n_ign = int(round(spec.ignore_fraction * len(labels)))
    if n_ign:
        labels[rng.choice(len(labels), n_ign, replace=False)] = len(CLASS_NAMES)
    intensity = np.clip(rng.normal(0.3, 0.1, len(coords)) + 0.2 * (labels == VEHICLE), 0, 1)
    real = PointSet(coords, intensity, labels, np.full(len(coords), REAL, np.uint8))

    # virtual: dense, range-independent surface samples inside the frustum
    vobj, vlab = scene.sample_objects(lambda o, area: spec.virtual_per_m2 * area, rng)
    area = (2 * e) ** 2
    ng = rng.poisson(spec.virtual_ground_per_m2 * area)
    vg = np.column_stack([rng.uniform(-e, e, ng), rng.uniform(-e, e, ng), np.full(ng, GROUND_Z)])
    vcoords = np.concatenate([vg, vobj])
    vlabels = np.concatenate([np.full(ng, GROUND), vlab]).astype(np.int64)
    vis = covisible_mask(vcoords, calibs)
    vcoords, vlabels = vcoords[vis], vlabels[vis]

    # depth noise along the ray from the (origin-mounted) camera
    depth = np.linalg.norm(vcoords, axis=1)
    ray = vcoords / depth[:, None]
    new_depth = depth + (rng.normal(0, spec.sigma, len(depth)) if spec.sigma > 0 else 0.0)
    outlier = rng.random(len(depth)) < spec.outliers
    near_f = rng.uniform(0.6, 0.85, len(depth))
    far_f = rng.uniform(1.15, 1.5, len(depth))
    # push outward only where the displaced point stays inside the scene
    far_ok = _in_scene(ray * (depth * far_f)[:, None], e)
    factor = np.where((rng.random(len(depth)) < 0.5) & far_ok, far_f, near_f)
    new_depth = np.where(outlier, depth * factor, new_depth)
    vcoords = ray * new_depth[:, None] if (spec.sigma > 0 or outlier.any()) else vcoords
    inb = _in_scene(vcoords, e)
    vcoords, vlabels = vcoords[inb], vlabels[inb]
    virtual = PointSet(vcoords, np.zeros(len(vcoords)), vlabels, np.full(len(vcoords), VIRTUAL, np.uint8))
    return real, virtual, calibs, scene
