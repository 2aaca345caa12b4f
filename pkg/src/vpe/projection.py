"""LiDAR-to-image projection, co-visibility and sparse image feature maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .core import CalibrationModel, InputError, PointSet, SiteIndex, check_features

Calibs = Union[CalibrationModel, Sequence[CalibrationModel]]

KITTI_IMAGE_SIZE = (376, 1241)


def _coords(points) -> np.ndarray:
    if isinstance(points, PointSet):
        return points.coords
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def _as_list(calib: Calibs) -> list[CalibrationModel]:
    if isinstance(calib, CalibrationModel):
        return [calib]
    calibs = list(calib)
    if not calibs:
        raise InputError("at least one calibration is required")
    return calibs


@dataclass(frozen=True)
class Projection:
    """Per-point projection result.

    ``uv`` holds continuous pixel coordinates (column, row), only meaningful
    where ``valid``; ``camera`` is the assigned camera index, -1 where the
    point is visible in none.
    """

    uv: np.ndarray
    depth: np.ndarray
    valid: np.ndarray
    camera: np.ndarray

    @property
    def pixels(self) -> np.ndarray:
        """Integer (row, col) pixel of each point; meaningless where invalid."""
        rc = np.nan_to_num(self.uv[:, ::-1], nan=-1.0, posinf=-1.0, neginf=-1.0)
        return np.floor(np.clip(rc, -1, 2**30)).astype(np.int64)


def project(points, calib: CalibrationModel) -> Projection:
    """Project points through one camera.

    A point is valid iff its camera-frame depth is positive and its pixel
    falls inside ``[0, W) x [0, H)``.
    """
    xyz = _coords(points)
    cam = xyz @ calib.R.T + calib.t
    Z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        img = cam @ calib.K.T
        uv = img[:, :2] / img[:, 2:3]
    H, W = calib.image_size
    valid = (Z > 0) & np.isfinite(uv).all(axis=1)
    valid &= (uv[:, 0] >= 0) & (uv[:, 0] < W) & (uv[:, 1] >= 0) & (uv[:, 1] < H)
    camera = np.where(valid, 0, -1).astype(np.int64)
    return Projection(uv=uv, depth=Z, valid=valid, camera=camera)


def project_multi(points, calibs: Calibs) -> Projection:
    """Project through a camera rig; each point goes to the valid camera with the smallest depth."""
    calibs = _as_list(calibs)
    if len(calibs) == 1:
        return project(points, calibs[0])
    n = _coords(points).shape[0]
    best_z = np.full(n, np.inf)
    uv = np.full((n, 2), np.nan)
    camera = np.full(n, -1, dtype=np.int64)
    depth = np.full(n, np.nan)
    for ci, c in enumerate(calibs):
        p = project(points, c)
        take = p.valid & (p.depth < best_z)
        best_z[take] = p.depth[take]
        uv[take] = p.uv[take]
        depth[take] = p.depth[take]
        camera[take] = ci
    return Projection(uv=uv, depth=depth, valid=camera >= 0, camera=camera)


def covisible_mask(points, calib: Calibs) -> np.ndarray:
    """True for points that land inside at least one camera image with positive depth."""
    return project_multi(points, calib).valid


@dataclass(frozen=True)
class SparseImageMap:
    """Active pixels of one or more images.

    ``sites`` rows are ``(camera, row, col)`` in lexicographic order.
    ``winner[k]`` is the point whose features occupy pixel ``k``;
    ``point_pixel[i]`` is the pixel row point ``i`` maps to (-1 if not
    co-visible), including points that lost a depth collision.
    """

    sites: np.ndarray
    features: np.ndarray
    winner: np.ndarray
    point_pixel: np.ndarray
    projection: Projection

    @property
    def num_pixels(self) -> int:
        return self.sites.shape[0]

    def with_features(self, point_features) -> "SparseImageMap":
        """Same pixel layout, pixel rows taken from new per-point features."""
        F = check_features(point_features, rows=self.point_pixel.shape[0], stage="image_map")
        return SparseImageMap(self.sites, F[self.winner], self.winner, self.point_pixel, self.projection)

    def to_points(self, pixel_features, fill: float = 0.0) -> np.ndarray:
        """Read each point's pixel row; non-co-visible points get ``fill``."""
        G = check_features(pixel_features, rows=self.num_pixels, stage="image_gather")
        out = np.full((self.point_pixel.shape[0], G.shape[1]), fill, dtype=np.float64)
        has = self.point_pixel >= 0
        out[has] = G[self.point_pixel[has]]
        return out

    def index(self) -> SiteIndex:
        return SiteIndex(self.sites)


def build_sparse_image_map(points, calib: Calibs, features) -> SparseImageMap:
    """Scatter point features onto image pixels, nearest point wins each pixel."""
    xyz = _coords(points)
    n = xyz.shape[0]
    F = check_features(features, rows=n, stage="image_map")
    proj = project_multi(xyz, calib)
    idx = np.flatnonzero(proj.valid)
    rc = proj.pixels[idx]
    sites_all = np.column_stack([proj.camera[idx], rc])
    # sort by (camera, row, col, depth, point index): first of each run wins
    order = np.lexsort((idx, proj.depth[idx], sites_all[:, 2], sites_all[:, 1], sites_all[:, 0]))
    s = sites_all[order]
    new = np.ones(len(order), dtype=bool)
    if len(order) > 1:
        new[1:] = np.any(s[1:] != s[:-1], axis=1)
    first = np.flatnonzero(new)
    sites = s[first]
    winner = idx[order[first]]
    point_pixel = np.full(n, -1, dtype=np.int64)
    point_pixel[idx[order]] = np.cumsum(new) - 1
    return SparseImageMap(sites=sites, features=F[winner], winner=winner,
                          point_pixel=point_pixel, projection=proj)


def _parse_kv(path: Path) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in (":", "="):
            if sep in line:
                key, val = line.split(sep, 1)
                break
        else:
            raise InputError(f"{path}:{lineno}: expected 'key: values'")
        try:
            out[key.strip()] = [float(v) for v in val.replace(",", " ").split()]
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    return out


def read_calibration(path, image_size=None) -> CalibrationModel:
    """Read a calibration text file.

    Native keys: ``K`` (9 values, row-major), ``R`` (9), ``t`` (3), ``HW``
    (2). Files with KITTI ``P2``/``Tr`` entries go through
    :func:`kitti_to_calibration`.
    """
    path = Path(path)
    kv = _parse_kv(path)
    if "P2" in kv and ("Tr" in kv or "Tr_velo_to_cam" in kv):
        return kitti_to_calibration(kv, image_size or KITTI_IMAGE_SIZE)
    expect = {"K": 9, "R": 9, "t": 3, "HW": 2}
    for key, size in expect.items():
        if key not in kv:
            if key == "HW" and image_size is not None:
                kv["HW"] = list(image_size)
                continue
            raise InputError(f"{path}: missing key '{key}'")
        if len(kv[key]) != size:
            raise InputError(f"{path}: key '{key}' needs {size} values, got {len(kv[key])}")
    hw = kv["HW"]
    if any(v != int(v) for v in hw):
        raise InputError(f"{path}: HW must be integers")
    return CalibrationModel(K=kv["K"], R=kv["R"], t=kv["t"], image_size=(int(hw[0]), int(hw[1])))


def kitti_to_calibration(kv: dict, image_size=KITTI_IMAGE_SIZE) -> CalibrationModel:
    """Fold KITTI ``P2 @ R0_rect @ Tr`` into an intrinsic ``K`` and rigid ``[R | t]``.

    ``P2 = K [I | K^-1 p4]``, so the camera-offset column is absorbed into t.
    """
    def entry(names, size):
        for name in names:
            if name in kv:
                vals = np.asarray(kv[name], dtype=np.float64)
                if vals.size != size:
                    raise InputError(f"KITTI calibration: {name} has {vals.size} values, expected {size}")
                return vals
        raise InputError(f"KITTI calibration: missing {' or '.join(names)}")

    P2 = entry(("P2",), 12).reshape(3, 4)
    Tr = entry(("Tr", "Tr_velo_to_cam"), 12).reshape(3, 4)
    R0 = entry(("R0_rect",), 9).reshape(3, 3) if "R0_rect" in kv else np.eye(3)
    K = P2[:, :3]
    shift = np.linalg.solve(K, P2[:, 3])
    R = R0 @ Tr[:, :3]
    t = R0 @ Tr[:, 3] + shift
    # KITTI rotations are stored with ~1e-7 precision; re-orthonormalise
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return CalibrationModel(K=K, R=R, t=t, image_size=tuple(image_size))


def write_calibration(path, calib: CalibrationModel) -> None:
    fmt = lambda a: " ".join(repr(float(v)) for v in np.ravel(a))
    H, W = calib.image_size
    Path(path).write_text(
        f"K: {fmt(calib.K)}\nR: {fmt(calib.R)}\nt: {fmt(calib.t)}\nHW: {H} {W}\n"
    )


def empty_image_map(n_points: int, channels: int = 1) -> SparseImageMap:
    """Image map with no active pixels, for runs without a camera."""
    proj = Projection(uv=np.full((n_points, 2), np.nan), depth=np.full(n_points, np.nan),
                      valid=np.zeros(n_points, bool), camera=np.full(n_points, -1, np.int64))
    return SparseImageMap(sites=np.zeros((0, 3), np.int64), features=np.zeros((0, channels)),
                          winner=np.zeros(0, np.int64), point_pixel=np.full(n_points, -1, np.int64),
                          projection=proj)
