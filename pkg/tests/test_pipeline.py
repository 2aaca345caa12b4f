import numpy as np
import pytest

from vpe.core import PointSet
from vpe.io import PipelineConfig, load_config, default_config_path
from vpe.layers import MlpSpec
from vpe.model import SegmentationNet
from vpe.pipeline import PipelineError, run_pipeline
from vpe.synth import SceneSpec, synth_scene

SMALL = SceneSpec(n_ground=2000, n_boxes=3, n_poles=3, n_walls=1, virtual_per_m2=10,
                  virtual_ground_per_m2=0.5, extent=30)


@pytest.fixture(scope="module")
def cfg():
    return load_config(default_config_path()).override(hidden=8)


@pytest.fixture(scope="module")
def data():
    return synth_scene(SMALL, seed=5)


def test_zero_head_gives_histogram_baseline(cfg, data):
    real, virtual, calibs, _ = data
    net = SegmentationNet.random(cfg)
    net.classifier = MlpSpec.zeros(cfg.hidden, cfg.num_classes)
    res = run_pipeline(cfg, real, virtual, calibs, net)
    assert np.all(res.logits == 0)
    scored = res.pred != cfg.ignore_id
    assert np.all(res.pred[scored] == 0)
    # everything predicted class 0: IoU_0 = n_0 / n, other present classes score 0
    inside = cfg.voxel_config.inside(real.coords)
    t = real.labels[inside]
    t = t[t != cfg.ignore_id]
    hist = np.bincount(t, minlength=cfg.num_classes)
    expected = (hist[0] / hist.sum()) / np.count_nonzero(hist)
    assert res.report.miou == pytest.approx(expected, abs=1e-12)


def test_filter_is_noop_without_virtual_points(cfg, data):
    real = data[0]
    a = run_pipeline(cfg, real, None, data[2])
    b = run_pipeline(cfg.override(filter_enabled=False), real, PointSet.empty(), data[2])
    np.testing.assert_array_equal(a.pred, b.pred)
    assert a.filter_stats is None


def test_seeded_runs_identical(cfg, data):
    a = run_pipeline(cfg, *data[:3])
    b = run_pipeline(cfg, *data[:3])
    assert a.report.to_json() == b.report.to_json()
    assert a.losses == b.losses


def test_result_layout(cfg, data):
    real, virtual, calibs, _ = data
    res = run_pipeline(cfg, real, virtual, calibs, keep_trace=True)
    assert res.pred.shape == (len(real),)
    assert len(res.merged) == res.num_real + res.filter_stats.kept
    assert res.logits.shape == (len(res.merged), cfg.num_classes)
    assert set(res.losses) == {"point"} | {f"stride{s}" for s in cfg.strides}
    assert all(np.isfinite(v) and v > 0 for v in res.losses.values())
    assert {"initial_features", "stage0.nr_gate", "stage1.ffe_out", "logits"} <= set(res.trace)
    s = res.summary()
    assert s["num_merged"] == len(res.merged) and s["report"]["miou"] == res.report.miou


def test_points_outside_crop_get_ignore(cfg):
    pts = PointSet([[0.5, 0.5, 0.0], [1.0, 1.0, 0.0], [500.0, 0, 0]], [0, 0, 0], labels=[0, 1, 2])
    res = run_pipeline(cfg, pts)
    assert res.pred[2] == cfg.ignore_id
    assert res.report.num_points == 2


def test_stage_failure_names_stage(cfg):
    with pytest.raises(PipelineError) as exc:
        run_pipeline(cfg, PointSet([[500.0, 0, 0]], [0]))
    assert exc.value.stage == "filter" and exc.value.exit_code == 2
    assert len(exc.value.digest) == 16


def test_numeric_failure_exit_code(cfg, data):
    net = SegmentationNet.random(cfg)
    C, K = cfg.hidden, cfg.num_classes
    # two 1e200 layers push every non-zero activation past the float64 range
    net.classifier = MlpSpec([np.full((C, C), 1e200), np.full((C, K), 1e200)],
                             [np.full(C, 1.0), np.zeros(K)], ["none", "none"])
    with pytest.raises(PipelineError) as exc:
        run_pipeline(cfg, *data[:3], net=net)
    assert exc.value.stage == "head" and exc.value.exit_code == 3


def test_weights_round_trip(tmp_path, cfg, data):
    net = SegmentationNet.random(cfg, seed=4)
    net.save(tmp_path / "w.bin")
    back = SegmentationNet.load(tmp_path / "w.bin", cfg)
    real = data[0]
    small = real.subset(np.arange(300))
    np.testing.assert_allclose(back(small, data[2], cfg), net(small, data[2], cfg), atol=1e-4)
    wrong = PipelineConfig(hidden=4, strides=[2])
    with pytest.raises(Exception, match="does not match"):
        SegmentationNet.load(tmp_path / "w.bin", wrong)
