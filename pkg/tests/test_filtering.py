import numpy as np
import pytest

from oracles import budget_exact, density_brute, prefilter_brute
from vpe.core import CalibrationModel, InputError, PointSet, REAL, VIRTUAL
from vpe.filtering import (FilterParams, adaptive_select, adaptive_select_indices, budget,
                           filter_virtual, merge, prefilter_indices, scene_density_stats)
from vpe.projection import project
from vpe.voxel import voxelize

K = np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]])
CAM = CalibrationModel(K, np.eye(3), np.zeros(3), (100, 100))

# (a, s, rho, d, b) -> N, worked by hand
BUDGET_CASES = [
    ((5, 0.4, 1, 30, 20), 6),
    ((5, 0.4, 0, 30, 20), 4),
    ((5, 0.4, 0, 0, 20), 0),
    ((5, 0.4, 0, 0.001, 20), 2),
    ((5, 0.4, 0, 20, 20), 2),
    ((5, 0.4, 0, 20.0001, 20), 4),
    ((5, 0.2, 0, 10, 20), 1),
    ((5, 0.2, 0.5, 10, 20), 2),
    ((5, 0.2, 1.5, 10, 20), 3),
    ((5, 0.2, 0.25, 30, 20), 2),
    ((5, 0.1, 0, 45, 20), 2),
    ((5, 0.1, 0, 5, 20), 1),
    ((1, 0.5, 0, 5, 20), 1),
    ((1, 0.5, 2, 5, 20), 2),
    ((2, 0.25, 3, 100, 20), 4),
    ((10, 0.4, 6, 12, 10), 32),
    ((5, 0.4, 6, 5, 20), 14),
    ((3, 0.5, 0, 61, 20), 6),
    ((5, 0.3, 1, 1, 1), 3),
    ((4, 0.125, 0, 50, 20), 2),
]


@pytest.mark.parametrize("args,expected", BUDGET_CASES)
def test_budget_examples(args, expected):
    assert budget_exact(*args) == expected
    assert budget(*args) == expected


def test_budget_vectorised_and_monotone():
    d = np.linspace(0, 200, 401)
    n = budget(5, 0.4, 1.0, d, 20)
    assert np.all(np.diff(n) >= 0)
    rhos = np.linspace(0, 10, 101)
    n = np.array([budget(5, 0.4, r, 30, 20) for r in rhos])
    assert np.all(np.diff(n) >= 0)


def test_params_validation_and_presets():
    with pytest.raises(InputError):
        FilterParams(a=0)
    k = FilterParams.semantickitti()
    assert (k.s, k.D, k.a, k.b) == (0.2, 20, 5, 20)
    n = FilterParams.nuscenes()
    assert (n.s, n.D) == (0.4, 10)


def _pts(xyz, origin=REAL):
    xyz = np.asarray(xyz, dtype=float)
    return PointSet(xyz, np.zeros(len(xyz)), origin=np.full(len(xyz), origin))


def test_prefilter_distance_zero_and_three():
    real = _pts([[0, 0, 2.0]])
    on_top = _pts([[0, 0, 4.0]])
    assert prefilter_indices(real, on_top, CAM, 2.0).tolist() == [0]
    off = _pts([[0.06, 0, 2.0]])  # 3 px to the right
    np.testing.assert_allclose(project(off, CAM).uv[0], [53, 50])
    assert prefilter_indices(real, off, CAM, 2.0).tolist() == []
    assert prefilter_indices(real, off, CAM, 3.0).tolist() == [0]


def test_prefilter_matches_brute_force(rng):
    for _ in range(10):
        real = _pts(np.column_stack([rng.uniform(-3, 3, (60, 2)), rng.uniform(-1, 6, 60)]))
        virt = _pts(np.column_stack([rng.uniform(-3, 3, (150, 2)), rng.uniform(-1, 6, 150)]))
        pr, pv = project(real, CAM), project(virt, CAM)
        for radius in (0.5, 2.0, 6.0):
            expect = prefilter_brute(pr.uv, pr.valid, pv.uv, pv.valid, radius)
            assert prefilter_indices(real, virt, CAM, radius).tolist() == expect


def test_prefilter_multi_camera_union(rng):
    from scipy.spatial.transform import Rotation
    back = CalibrationModel(K, Rotation.from_euler("y", 180, degrees=True).as_matrix(), np.zeros(3), (100, 100))
    real = _pts([[0, 0, 2.0], [0, 0, -2.0]])
    virt = _pts([[0, 0, 3.0], [0, 0, -3.0], [5, 5, 1.0]])
    assert prefilter_indices(real, virt, [CAM, back], 2.0).tolist() == [0, 1]


def _cluster(center, n, scale, rng):
    lo = np.floor(np.asarray(center) / scale) * scale
    return lo + rng.uniform(0.01, 0.99, (n, 3)) * scale


def test_density_uniform_gives_zero(rng):
    pts = np.vstack([_cluster((x, 0.5, 0.5), 4, 1.0, rng) for x in (1, 3, 5, 15, 20, 30)])
    st = scene_density_stats(pts, voxelize(pts, 1.0), 10)
    assert st.rho_near == st.rho_far == 4
    assert st.rho == 0


def test_density_eight_vs_two(rng):
    pts = np.vstack([_cluster((x, 0.5, 0.5), 8, 1.0, rng) for x in (1, 3, 5)]
                    + [_cluster((x, 0.5, 0.5), 2, 1.0, rng) for x in (15, 20)])
    st = scene_density_stats(pts, voxelize(pts, 1.0), 10)
    assert (st.rho_near, st.rho_far, st.rho) == (8, 2, 6)
    assert (st.near_voxels, st.far_voxels, st.near_points, st.far_points) == (3, 2, 24, 4)


def test_density_far_side_empty(rng):
    pts = _cluster((1, 1, 1), 5, 1.0, rng)
    st = scene_density_stats(pts, voxelize(pts, 1.0), 10)
    assert st.far_empty and st.rho == 5


def test_density_two_ring_recount(rng):
    ang = rng.uniform(0, 2 * np.pi, 3000)
    r = np.where(rng.random(3000) < 0.6, rng.uniform(4, 6, 3000), rng.uniform(18, 22, 3000))
    pts = np.column_stack([r * np.cos(ang), r * np.sin(ang), rng.uniform(-1, 1, 3000)])
    st = scene_density_stats(pts, voxelize(pts, 0.4), 10)
    rn, rf, rho, nv, fv = density_brute(pts, 0.4, 10)
    assert (st.near_voxels, st.far_voxels) == (nv, fv)
    assert st.rho_near == pytest.approx(rn, abs=1e-12)
    assert st.rho_far == pytest.approx(rf, abs=1e-12)
    assert st.rho == pytest.approx(rho, abs=1e-12)


def test_budget_exceeding_supply_keeps_all(rng):
    real = _pts(_cluster((30.2, 0.2, 0.2), 3, 0.4, rng))
    virt = _pts(_cluster((30.2, 0.2, 0.2), 3, 0.4, rng), VIRTUAL)
    idx, dens = adaptive_select_indices(real, virt, FilterParams(a=5, s=0.4, D=10, b=20))
    assert dens.rho == 0 and dens.near_empty
    assert budget(5, 0.4, dens.rho, 30.2, 20) == 4
    assert idx.tolist() == [0, 1, 2]


def test_selection_keeps_nearest_to_centroid():
    real = _pts([[10.1, 0.1, 0.1], [10.3, 0.3, 0.3]])  # centroid (10.2, 0.2, 0.2)
    virt = _pts([[10.39, 0.39, 0.39], [10.2, 0.2, 0.21], [10.01, 0.01, 0.01], [10.21, 0.2, 0.2]], VIRTUAL)
    # ceil(10.2/20)=1, rho=0: N = round(5*0.4*1) = 2
    idx, _ = adaptive_select_indices(real, virt, FilterParams())
    assert idx.tolist() == [1, 3]


def test_virtual_outside_real_voxels_dropped():
    real = _pts([[0.1, 0.1, 0.1]])
    virt = _pts([[5.1, 5.1, 0.1]], VIRTUAL)
    sel, stats = adaptive_select(real, virt, FilterParams())
    assert len(sel) == 0 and stats.kept == 0 and stats.percent_virtual == 0


def test_filter_stats_and_merge(rng):
    real = _pts(rng.uniform(0, 8, (400, 3)))
    virt = _pts(rng.uniform(0, 8, (900, 3)), VIRTUAL)
    sel, stats = filter_virtual(real, virt, None, FilterParams())
    assert stats.kept == len(sel)
    assert stats.total_virtual == 900 and stats.total_real == 400
    assert stats.percent_virtual == pytest.approx(100 * len(sel) / (len(sel) + 400))
    m = merge(real, sel)
    np.testing.assert_array_equal(m.coords[:400], real.coords)
    assert np.all(m.origin[:400] == REAL) and np.all(m.origin[400:] == VIRTUAL)
    assert np.all(m.intensity[400:] == 0)
    d = stats.to_dict()
    assert d["kept"] == stats.kept and isinstance(d["far_empty"], bool)


def _scene(rng, n_real=None, n_virt=None):
    n_real = n_real or int(rng.integers(1, 120))
    n_virt = n_virt or int(rng.integers(0, 300))
    extent = rng.uniform(2, 40)
    real = _pts(rng.uniform(-extent, extent, (n_real, 3)) * [1, 1, 0.1])
    # virtual points cluster around real ones so that most land in real voxels
    base = real.coords[rng.integers(0, n_real, n_virt)]
    virt = _pts(base + rng.normal(scale=rng.uniform(0.05, 0.6), size=(n_virt, 3)), VIRTUAL)
    return real, virt


def filter_property_violations(rng, n_scenes):
    """Count violations of the filter invariants over random scenes."""
    bad = []
    for k in range(n_scenes):
        real, virt = _scene(rng)
        params = FilterParams(a=float(rng.uniform(0.5, 8)), s=float(rng.choice([0.2, 0.4, 0.8])),
                              D=float(rng.uniform(2, 30)), b=float(rng.uniform(5, 30)))
        idx, _ = adaptive_select_indices(real, virt, params)
        sel = virt.subset(idx)
        if len(set(idx.tolist())) != len(idx) or (len(idx) and (idx.min() < 0 or idx.max() >= len(virt))):
            bad.append((k, "subset"))
        if not np.array_equal(sel.coords, virt.coords[idx]):
            bad.append((k, "subset-rows"))
        m = merge(real, sel)
        if not (np.array_equal(m.coords[:len(real)], real.coords)
                and np.array_equal(m.intensity[:len(real)], real.intensity)
                and len(m) == len(real) + len(sel)):
            bad.append((k, "real-untouched"))
        bigger = FilterParams(a=params.a * float(rng.uniform(1.0, 3.0)), s=params.s, D=params.D, b=params.b)
        if len(adaptive_select_indices(real, virt, bigger)[0]) < len(idx):
            bad.append((k, "monotone-a"))
        pr, pv = rng.permutation(len(real)), rng.permutation(len(virt))
        idx2, _ = adaptive_select_indices(real.subset(pr), virt.subset(pv), params)
        if sorted(map(tuple, virt.coords[idx])) != sorted(map(tuple, virt.coords[pv[idx2]])):
            bad.append((k, "permutation"))
        again, _ = adaptive_select_indices(real, virt, params)
        if not np.array_equal(again, idx):
            bad.append((k, "determinism"))
    return bad


def test_filter_properties_random_scenes():
    assert filter_property_violations(np.random.default_rng(7), 200) == []


def test_prefiltered_subset_of_virtual(rng):
    real, virt = _scene(rng, 200, 500)
    shifted_real = PointSet(real.coords + [0, 0, 30], real.intensity)
    shifted_virt = PointSet(virt.coords + [0, 0, 30], virt.intensity)
    sel, stats = filter_virtual(shifted_real, shifted_virt, CAM, FilterParams())
    pre = set(prefilter_indices(shifted_real, shifted_virt, CAM, 2.0).tolist())
    assert stats.prefiltered == len(pre)
    rows = {tuple(r) for r in shifted_virt.coords[sorted(pre)]}
    assert all(tuple(r) in rows for r in sel.coords)
