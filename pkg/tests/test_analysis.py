import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from specmae.analysis import (
    compare_strategies,
    curriculum_trace,
    distribution,
    mask_overlay_export,
    mask_ratio_sweep,
    skewness,
    spearman,
    ssm_distribution,
)
from specmae.masking import binary_mask, plan_from_saliency
from specmae.model import ModelConfig
from specmae.raster_io import Band, Raster, load_raster
from specmae.spectral import sentinel2_band_map
from specmae.synthetic import SceneSpec, generate_scene
from specmae.trainer import TrainConfig, pretrain

from conftest import SMALL_MODEL


def s2_raster(data):
    names = ("B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12")
    return Raster(np.asarray(data, np.float32), tuple(Band(n, 10) for n in names))


# statistics

def test_skewness_matches_adjusted_estimator():
    x = np.random.default_rng(0).gamma(2.0, size=500)
    n, m = x.size, x.mean()
    g1 = np.mean((x - m) ** 3) / np.mean((x - m) ** 2) ** 1.5
    assert skewness(x) == pytest.approx(g1 * np.sqrt(n * (n - 1)) / (n - 2), rel=1e-12)
    assert skewness(np.full(10, 3.0)) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(3, 30))
def test_spearman_matches_scipy_with_ties(seed, n):
    rng = np.random.default_rng(seed)
    x, y = rng.integers(0, 5, n).astype(float), rng.integers(0, 5, n).astype(float)
    if np.all(x == x[0]) or np.all(y == y[0]):
        assert spearman(x, y) == 0.0
    else:
        assert spearman(x, y) == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)


def test_distribution_counts_cover_sample():
    x = np.random.default_rng(1).random(1000)
    d = distribution(x, bins=20)
    assert sum(d.counts) == d.n == 1000
    assert d.edges[0] == x.min() and d.edges[-1] == x.max()
    with pytest.raises(ValueError):
        distribution([])


# SSM distribution

def test_identical_patches_give_degenerate_histogram():
    r = s2_raster(np.broadcast_to(np.linspace(0.1, 0.5, 10)[:, None, None], (10, 16, 16)))
    rep = ssm_distribution([r], P=4, band_map=sentinel2_band_map())
    assert sum(c > 0 for c in rep.ssm.counts) == 1
    assert rep.ssm.skewness == 0.0 and rep.ssm.n == 16


def test_zero_jitter_corpus_is_bimodal():
    spec = SceneSpec(jitter_std=0.0, background_std=0.0, seed=2)
    rep = ssm_distribution([generate_scene(spec, i) for i in range(6)], P=8)
    # pure patches have sigma = 0, so Q = |mu| / sqrt(eps) ~ 1e3..1e4; mixed patches stay near 1
    edges, counts = np.array(rep.ssm.edges), np.array(rep.ssm.counts)
    occupied = np.flatnonzero(counts)
    assert counts[0] > 0 and occupied.max() > 10
    gaps = np.diff(occupied)
    assert gaps.max() > 5  # empty bins separate the two groups
    low_hi = edges[occupied[np.argmax(gaps)] + 1]
    assert low_hi < 0.2 * edges[-1]
    assert set(rep.index_values) == {"NDVI", "NDWI", "NDBI"}


# curriculum

def test_curriculum_endpoints_and_monotone():
    q = np.random.default_rng(3).permutation(64) / 63.0
    pts = curriculum_trace(q, E=10, p_m=0.75, seeds=range(1000))
    by_gamma = {round(p.gamma, 2): p for p in pts}
    assert abs(by_gamma[0.5].spearman_mean) <= 0.1
    assert by_gamma[1.0].spearman_mean == pytest.approx(-1.0, abs=1e-12)
    assert by_gamma[1.0].spearman_std == pytest.approx(0.0, abs=1e-12)
    means = [p.spearman_mean for p in pts]
    assert all(b <= a + 0.05 for a, b in zip(means, means[1:]))
    assert by_gamma[0.1].top_decile_masked > by_gamma[1.0].top_decile_masked
    assert by_gamma[1.0].top_decile_masked == 0.0  # hard phase keeps the most salient visible
    assert all(p.draws == 1000 for p in pts)


# ablations

def test_single_strategy_report(small_scenes):
    base = TrainConfig(total_epochs=3, warmup_epochs=1, batch_size=4, mask_ratio=0.5)
    rep = compare_strategies(base, ["random"], small_scenes, SMALL_MODEL)
    assert list(rep.runs) == ["random"]
    run = rep.runs["random"]
    assert len(run.losses) == len(run.spearman) == 3


def test_report_is_recomputable_from_logs(tmp_path, small_scenes):
    base = TrainConfig(total_epochs=2, warmup_epochs=1, batch_size=4, mask_ratio=0.5, seed=4)
    rep = compare_strategies(base, ["ssdtm", "ssdtm_static"], small_scenes, SMALL_MODEL)
    assert rep.runs["ssdtm"].init_hash == rep.runs["ssdtm_static"].init_hash
    rep.write(tmp_path)
    direct = pretrain(dataclasses.replace(base, strategy="ssdtm_static"), small_scenes, SMALL_MODEL)
    rows = list(csv.DictReader(open(tmp_path / "curves.csv")))
    assert list(rows[0]) == ["strategy", "epoch", "loss", "lr", "gamma"]
    static = [r for r in rows if r["strategy"] == "ssdtm_static"]
    assert [(int(r["epoch"]), float(r["loss"]), float(r["lr"]), float(r["gamma"])) for r in static] == direct.log.values()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["final_losses"]["ssdtm_static"] == direct.log.losses[-1]


def test_mask_ratio_sweep_exports(tmp_path):
    spec = SceneSpec(seed=5)
    corpus = [generate_scene(spec, i) for i in range(2)]
    model = ModelConfig(embed_dim=16, encoder_depth=1, decoder_dim=8, decoder_depth=1, heads=2)
    base = TrainConfig(total_epochs=2, warmup_epochs=1, batch_size=2)
    rows = mask_ratio_sweep(base, [0.5, 0.75, 0.9], corpus, model, out=tmp_path, sentinel=-1.0)
    assert [r.visible for r in rows] == [32, 16, 7]
    for r in rows:
        for path in r.exports.values():
            assert np.all(np.isfinite(load_raster(path).data))
    masked = load_raster(tmp_path / "ratio_75" / "masked.msr").data
    per_pixel = np.all(masked == -1.0, axis=0)
    assert per_pixel.sum() == 48 * 64
    original = load_raster(tmp_path / "ratio_75" / "original.msr").data
    assert np.array_equal(masked[:, ~per_pixel], original[:, ~per_pixel])
    with pytest.raises(ValueError):
        mask_ratio_sweep(base, [1.0], corpus, model)


# overlay

def overlay_plan(masked, P=2, H=4, W=4):
    plan = plan_from_saliency(np.zeros((H // P) * (W // P)), 1, 2, 0.5, P, H, W)
    masked = np.asarray(masked, dtype=np.int64)
    return dataclasses.replace(plan, masked=masked, binary_mask=binary_mask(masked, P, H, W))


def test_overlay_examples(tmp_path):
    r = Raster(np.random.default_rng(6).random((2, 4, 4)).astype(np.float32), (Band("a", 10), Band("b", 10)))
    assert mask_overlay_export(r, overlay_plan([]), tmp_path / "e.msr").identical(r)
    assert load_raster(tmp_path / "e.msr").identical(r)
    full = mask_overlay_export(r, overlay_plan([0, 1, 2, 3]), None, sentinel=-9.0)
    assert np.all(full.data == -9.0)
    chk = mask_overlay_export(r, overlay_plan([0, 3]), None).data
    layout = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], bool)
    assert np.all(chk[:, layout] == -1.0)
    assert np.array_equal(chk[:, ~layout], r.data[:, ~layout])
    with pytest.raises(ValueError):
        mask_overlay_export(r, overlay_plan([0], P=2, H=8, W=8), None)
