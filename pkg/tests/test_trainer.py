import json
from collections import Counter

import numpy as np
import pytest

from autojoin import autodiff as ad
from autojoin import perturb
from autojoin.autodiff import Tensor
from autojoin.curriculum import CurriculumState
from autojoin.data import SyntheticSpec, generate_synthetic
from autojoin.models import build_nvidia_desk
from autojoin.trainer import (
    DESK_PRESET, LossWeights, PerturbationSchedule, TrainConfig, TrainingError, feedback_loss,
    fuse_batch, joint_loss, perturb_batch, train, with_overrides,
)


@pytest.fixture(scope="module")
def tiny():
    return generate_synthetic(SyntheticSpec(count=200, seed=1))


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def test_joint_loss_examples():
    recon, clean = T([[1.0]]), T([[1.0]])
    pred, truth = T([[2.0]]), T([[2.0]])
    assert joint_loss(recon, clean, pred, truth, LossWeights(1, 10)).item() == 0.0
    # l2 = 0.5 and l1 = 0.2 by construction
    recon, clean = T([[1.0, 0.0]]), T([[0.0, 0.0]])
    pred, truth = T([[0.2]]), T([[0.0]])
    assert joint_loss(recon, clean, pred, truth, LossWeights(1, 10)).item() == pytest.approx(2.5)
    assert joint_loss(recon, clean, pred, truth, LossWeights(10, 1)).item() == pytest.approx(5.2)


def test_feedback_loss_reduces_to_joint():
    rng = np.random.default_rng(0)
    args = [T(rng.normal(size=(2, 3))), T(rng.normal(size=(2, 3))), T(rng.normal(size=(2, 1))),
            T(rng.normal(size=(2, 1))), T(rng.normal(size=(2, 1)))]
    zero = feedback_loss(*args, LossWeights(1, 1, 0.0)).item()
    assert zero == joint_loss(args[0], args[1], args[2], args[4], LossWeights(1, 1)).item()
    assert feedback_loss(*[T(np.zeros((1, 1)))] * 5, LossWeights(1, 1, 10)).item() == 0.0
    with pytest.raises(ValueError):
        feedback_loss(*args, LossWeights(1, 1))


def test_regression_weight_zero_blocks_head_gradient():
    with ad.default_dtype(np.float64):
        m = build_nvidia_desk(seed=0)
        x = Tensor(np.random.default_rng(0).random((2, 3, 64, 64)))
        z = m.encode(x)
        loss = joint_loss(m.decode(z), x, m.predict(z), Tensor(np.ones((2, 1))), LossWeights(1.0, 0.0))
        ad.backward(loss)
    assert all(not p.grad.any() for n, p in m.params.items() if n.startswith("head."))
    assert any(p.grad.any() for n, p in m.params.items() if n.startswith("encoder."))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="autojoin", weights=LossWeights(1, 10, 5)).validate()
    with pytest.raises(ValueError):
        TrainConfig(variant="feedback").validate()
    with pytest.raises(ValueError):
        TrainConfig(variant="mystery").validate()
    with pytest.raises(ValueError):
        LossWeights(0, 0).validate()
    with pytest.raises(ValueError):
        LossWeights(-1, 1).validate()
    TrainConfig(variant="feedback", weights=LossWeights(1, 1, 10)).validate()


def test_config_dict_round_trip():
    cfg = with_overrides(DESK_PRESET, kinds=("noise", "blur"), variant="autojoin_fuse")
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert TrainConfig.from_dict({"weights": [1, 1, 10], "variant": "feedback"}).weights.recon_regress == 10
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epoch": 3})


def test_schedule_cycles_every_kind_per_block():
    sched = PerturbationSchedule(perturb.BASE_KINDS, np.random.default_rng(0))
    seq = [sched.next() for _ in range(150)]
    for s in range(0, 150, 15):
        assert sorted(seq[s:s + 15]) == sorted(perturb.BASE_KINDS)
    with pytest.raises(TrainingError):
        PerturbationSchedule([], np.random.default_rng(0))


def test_perturb_batch_examples():
    imgs = np.random.default_rng(0).integers(0, 256, (30, 8, 8, 3)).astype(np.uint8)
    sched = PerturbationSchedule(perturb.BASE_KINDS, np.random.default_rng(1))
    cur = CurriculumState(c_current=0.5)
    _, applied = perturb_batch(imgs, sched, cur, np.random.default_rng(2), DESK_PRESET)
    assert Counter(k for k, _ in applied) == {k: 2 for k in perturb.BASE_KINDS}

    sched = PerturbationSchedule(perturb.BASE_KINDS, np.random.default_rng(1))
    out, applied = perturb_batch(imgs, sched, CurriculumState.start(), np.random.default_rng(2), DESK_PRESET)
    assert np.array_equal(out, imgs.astype(np.float32))
    assert all(a == 0.0 for _, a in applied)

    def log():
        s = PerturbationSchedule(perturb.BASE_KINDS, np.random.default_rng(1))
        return perturb_batch(imgs, s, cur, np.random.default_rng(2), DESK_PRESET)

    (o1, l1), (o2, l2) = log(), log()
    assert l1 == l2 and np.array_equal(o1, o2)


def test_fuse_batch_examples():
    batch = np.random.default_rng(0).uniform(0, 255, (10, 4, 4, 3)).astype(np.float32)
    out, triples = fuse_batch(batch, 0.1, np.random.default_rng(3))
    assert len(triples) == 1
    t, a, b = triples[0]
    assert len({t, a, b}) == 3
    np.testing.assert_allclose(out[t], (batch[t].astype(np.float64) + batch[a] + batch[b]) / 3, rtol=1e-6)
    untouched = [i for i in range(10) if i != t]
    assert np.array_equal(out[untouched], batch[untouched])
    again, triples2 = fuse_batch(batch, 0.1, np.random.default_rng(3))
    assert triples == triples2 and np.array_equal(out, again)
    with pytest.raises(TrainingError):
        fuse_batch(batch[:2], 0.5, np.random.default_rng(0))


def test_standard_smoke_run_loss_mostly_decreases(tiny):
    cfg = with_overrides(DESK_PRESET, variant="standard", epochs=5)
    hist = train(cfg, tiny).history
    losses = [h["loss"] for h in hist]
    assert sum(b <= a for a, b in zip(losses, losses[1:])) >= 3


def test_training_is_reproducible_and_logged(tiny, tmp_path):
    cfg = with_overrides(DESK_PRESET, variant="autojoin_fuse", epochs=2, checkpoint_every=1)
    a = train(cfg, tiny.subset(range(64)), out_dir=tmp_path, record_applied=True)
    b = train(cfg, tiny.subset(range(64)), record_applied=True)
    assert a.model.checksum(include_decoder=True) == b.model.checksum(include_decoder=True)
    assert a.applied == b.applied
    lines = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [x["epoch"] for x in lines] == [0, 1]
    assert {"loss", "c", "wall_time"} <= set(lines[0])
    assert (tmp_path / "checkpoint_epoch0002.json").exists()


@pytest.mark.parametrize("variant", ["no_dae", "feedback", "no_full_set", "no_fs_ri"])
def test_variants_run(tiny, variant):
    weights = LossWeights(1, 1, 10) if variant == "feedback" else DESK_PRESET.weights
    cfg = with_overrides(DESK_PRESET, variant=variant, weights=weights, epochs=2)
    res = train(cfg, tiny.subset(range(48)), record_applied=True)
    assert np.isfinite(res.history[-1]["loss"])
    if variant == "no_dae":
        assert all(not p.grad.any() for n, p in res.model.params.items() if n.startswith("decoder."))
    if variant.startswith("no_f"):
        assert all(k in perturb.CHANNEL_KINDS + ("noise", "blur", "distort") for k, _ in res.applied)


def test_no_full_set_draws_from_nine_kinds():
    cfg = with_overrides(DESK_PRESET, variant="no_full_set")
    imgs = np.zeros((90, 4, 4, 3), dtype=np.uint8)
    sched = PerturbationSchedule(perturb.UNDIRECTED_KINDS, np.random.default_rng(0))
    _, applied = perturb_batch(imgs, sched, CurriculumState(c_current=1.0), np.random.default_rng(1), cfg)
    undirected = [k.split("-")[0] for k, _ in applied]
    assert Counter(undirected) == {k: 10 for k in perturb.UNDIRECTED_KINDS}
    dirs = Counter(k.split("-")[1] for k, _ in applied if "-" in k)
    assert set(dirs) == {"light", "dark"}


def test_subset_filter_shrinks_schedule(tiny):
    cfg = with_overrides(DESK_PRESET, kinds=("noise", "blur", "distort"), epochs=2, c_min=0.5)
    res = train(cfg, tiny.subset(range(30)), record_applied=True)
    assert {k for k, _ in res.applied} == {"noise", "blur", "distort"}


def test_empty_dataset_rejected(tiny):
    with pytest.raises(TrainingError):
        train(DESK_PRESET, tiny.subset([]))
