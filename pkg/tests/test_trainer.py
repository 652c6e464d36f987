import dataclasses
import json

import numpy as np
import pytest

from specmae.checkpoint import Checkpoint, CheckpointError, load_checkpoint, params_hash, save_checkpoint
from specmae.masking import draw_noise, plan_from_saliency
from specmae.model import init_params
from specmae.trainer import (
    NonFiniteLossError,
    TrainConfig,
    TrainLog,
    full_scale_profile,
    prepare_dataset,
    pretrain,
)

from conftest import SMALL_MODEL


def small_cfg(**kw):
    base = dict(total_epochs=3, warmup_epochs=1, base_lr=1e-3, batch_size=4, mask_ratio=0.5, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_lr_single_epoch_leaves_params_bitwise(small_scenes):
    cfg = TrainConfig(total_epochs=1, warmup_epochs=0, base_lr=0.0, warmup_lr=0.0,
                      weight_decay=0.05, batch_size=8, mask_ratio=0.5)
    res = pretrain(cfg, small_scenes, SMALL_MODEL)
    init = init_params(SMALL_MODEL, cfg.seed)
    assert all(res.params[k].tobytes() == init[k].data.tobytes() for k in init)
    assert len(res.log) == 1 and np.isfinite(res.log.losses[0])


def test_runs_are_bit_identical(small_scenes):
    a = pretrain(small_cfg(), small_scenes, SMALL_MODEL, record_masks=True)
    b = pretrain(small_cfg(), small_scenes, SMALL_MODEL, record_masks=True)
    assert a.log.values() == b.log.values()
    assert params_hash(a.params) == params_hash(b.params)
    assert all(np.array_equal(x, y) for x, y in zip(a.masks, b.masks))


def test_log_records_schedule(small_scenes):
    res = pretrain(small_cfg(total_epochs=4), small_scenes, SMALL_MODEL)
    assert [r.epoch for r in res.log.records] == [1, 2, 3, 4]
    assert [r.gamma for r in res.log.records] == [e / 4 for e in range(1, 5)]
    assert res.log.records[0].lr == 1e-6
    assert res.adam.step == 4 * 2  # 8 images, batch 4


def test_one_plan_per_image_per_epoch(small_scenes):
    cfg = small_cfg(mask_ratio=0.75)
    res = pretrain(cfg, small_scenes, SMALL_MODEL, record_masks=True)
    L = SMALL_MODEL.num_patches
    data = prepare_dataset(small_scenes, SMALL_MODEL.patch_size)
    for e, m in enumerate(res.masks, start=1):
        assert m.shape == (8, int(0.75 * L))
        # the recorded set for image i at epoch e is the one its keyed noise produces
        plan = plan_from_saliency(data.q_norm[5], e, cfg.total_epochs, cfg.mask_ratio, 4, 16, 16,
                                  rng_seed=cfg.seed, image_id=5)
        assert np.array_equal(m[5], plan.masked)
        assert np.array_equal(plan.noise, draw_noise(cfg.seed, e, 5, L))


def test_strategies_share_initialisation(small_scenes):
    hashes = {s: pretrain(small_cfg(total_epochs=1, warmup_epochs=0, strategy=s), small_scenes, SMALL_MODEL).init_hash
              for s in ("ssdtm", "random")}
    assert len(set(hashes.values())) == 1


def test_loss_decreases_on_small_corpus(small_scenes):
    res = pretrain(small_cfg(total_epochs=20, base_lr=3e-3, batch_size=8), small_scenes, SMALL_MODEL)
    assert res.log.losses[-1] < 0.5 * res.log.losses[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_reports_batch(small_scenes):
    init = {k: v.data for k, v in init_params(SMALL_MODEL, 0).items()}
    init["dec_pred.b"] = np.full_like(init["dec_pred.b"], 3e38)
    with pytest.raises(NonFiniteLossError) as info:
        pretrain(small_cfg(), small_scenes, SMALL_MODEL, init=init)
    assert info.value.epoch == 1 and info.value.batch == 0 and info.value.seed == 1


def test_checkpoint_round_trip(tmp_path, small_scenes):
    cfg = small_cfg(checkpoint=str(tmp_path / "ck"), checkpoint_every=1)
    res = pretrain(cfg, small_scenes, SMALL_MODEL)
    assert (tmp_path / "ck-e0001.json").exists() and (tmp_path / "ck-e0002.json").exists()
    ck = load_checkpoint(tmp_path / "ck")
    assert ck.hash == params_hash(res.params)
    assert ck.model == SMALL_MODEL and ck.epoch == 3 and ck.step == res.adam.step
    assert all(np.array_equal(ck.adam.m[k], res.adam.m[k]) for k in res.adam.m)
    # resave is byte-identical
    save_checkpoint(ck, tmp_path / "again")
    assert (tmp_path / "again.bin").read_bytes() == (tmp_path / "ck.bin").read_bytes()


def test_checkpoint_rejects_mismatch(tmp_path):
    ck_params = {k: v.data for k, v in init_params(SMALL_MODEL, 0).items()}
    save_checkpoint(Checkpoint(SMALL_MODEL, ck_params), tmp_path / "c")
    m = json.loads((tmp_path / "c.json").read_text())
    m["model"]["embed_dim"] = 32
    (tmp_path / "c.json").write_text(json.dumps(m))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing")


def test_trainlog_csv_round_trip(tmp_path, small_scenes):
    res = pretrain(small_cfg(total_epochs=2), small_scenes, SMALL_MODEL)
    res.log.to_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,mean_loss,lr,gamma,seconds"
    assert TrainLog.from_csv(tmp_path / "log.csv").values() == res.log.values()


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(total_epochs=5, warmup_epochs=5)
    with pytest.raises(ValueError):
        TrainConfig(mask_ratio=1.0)
    with pytest.raises(ValueError):
        TrainConfig(strategy="greedy")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3})
    cfg = TrainConfig(betas=(0.8, 0.9))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_full_scale_profile_values():
    train, model = full_scale_profile()
    assert (train.total_epochs, train.base_lr, train.warmup_epochs, train.warmup_lr) == (1000, 1e-4, 20, 1e-6)
    assert (train.batch_size, train.weight_decay, train.betas) == (900, 0.05, (0.9, 0.95))
    assert model.image_size == 120


def test_dataset_shape_mismatch(small_scenes):
    with pytest.raises(ValueError):
        pretrain(small_cfg(), small_scenes, dataclasses.replace(SMALL_MODEL, image_size=32))
