import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regtrack.datasets import StillImageExample, VideoSequence
from regtrack.geometry import BoundingBox, axis_containment
from regtrack.motion import MotionModel, make_rng
from regtrack.net import NetConfig, Network, SGD, l1_loss
from regtrack.synthetic import SyntheticSceneConfig, generate_synthetic_video, make_still_images
from regtrack.trainer import (
    EmptySourceError,
    Sources,
    TrainConfig,
    assemble_batch,
    base_count,
    load_checkpoint,
    make_image_pseudo_pair,
    make_video_pair_example,
    online_finetune_step,
    stack_batch,
    train,
    with_backbone,
)

SMALL_NET = NetConfig(input_size=16, conv_filters=(4,), conv_kernels=(3,), conv_strides=(1,), conv_pools=(1,),
                      fc_layers=1, fc_width=16, dropout=0.0)
CENTRED = [2.5, 2.5, 7.5, 7.5]


def _frames(n=2, h=64, w=64, seed=0):
    return np.random.default_rng(seed).integers(0, 256, (n, h, w, 3)).astype(np.uint8)


@pytest.fixture(scope="module")
def sources():
    cfg = SyntheticSceneConfig(width=96, height=96, num_frames=6)
    videos = [generate_synthetic_video(replace(cfg, seed=s), f"v{s}") for s in range(3)]
    images = make_still_images(cfg, 4, seed=7)
    return Sources(videos, images)


def test_static_pair_label_is_centred():
    f = _frames()
    box = BoundingBox(20, 20, 36, 30)
    ex = make_video_pair_example(box, box, f[0], f[1])
    np.testing.assert_allclose(ex.label, CENTRED, atol=1e-12)
    assert ex.provenance == "video_real"
    assert ex.target.shape == ex.search.shape == (64, 64, 3)


def test_translation_shifts_label():
    f = _frames()
    box = BoundingBox(20, 20, 40, 30)
    moved = BoundingBox(24, 20, 44, 30)  # +w/5
    ex = make_video_pair_example(box, moved, f[0], f[1])
    # window is 2w wide, so a w/5 shift is 1/10 of it: 10 * 0.1 = 1 output unit
    np.testing.assert_allclose(ex.label, [3.5, 2.5, 8.5, 7.5], atol=1e-12)


def test_out_of_frame_box_is_padded_label_unchanged():
    f = _frames()
    box = BoundingBox(-10, -5, 10, 15)
    ex = make_video_pair_example(box, box, f[0], f[1])
    np.testing.assert_allclose(ex.label, CENTRED, atol=1e-12)
    assert ex.search.shape == (64, 64, 3)


def test_pseudo_pair_zero_motion_is_centred():
    img = _frames(1)[0]
    ex = make_image_pseudo_pair(StillImageExample(img, BoundingBox(10, 10, 30, 26)),
                                MotionModel.from_scales(1e-300, 1e-300), make_rng(0))
    np.testing.assert_allclose(ex.label, CENTRED, atol=1e-12)
    assert ex.provenance == "image_augmented"


def test_pseudo_pair_reproducible():
    img = _frames(1)[0]
    exm = StillImageExample(img, BoundingBox(10, 10, 30, 26))
    m = MotionModel.from_scales(0.2, 1 / 15)
    a = make_image_pseudo_pair(exm, m, make_rng(5))
    b = make_image_pseudo_pair(exm, m, make_rng(5))
    assert a.search.tobytes() == b.search.tobytes() and a.label.tobytes() == b.label.tobytes()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pseudo_pair_label_keeps_containment(seed):
    box = BoundingBox(30, 30, 50, 44)
    exm = StillImageExample(np.zeros((96, 96, 3), np.uint8), box)
    ex = make_image_pseudo_pair(exm, MotionModel.from_scales(0.2, 1 / 15), make_rng(seed))
    # label coordinates / S are fractions of the search window, i.e. the unit square
    x1, y1, x2, y2 = (float(v) / 10 for v in ex.label)
    cx, cy = axis_containment(BoundingBox(x1, y1, x2, y2), BoundingBox(0.0, 0.0, 1.0, 1.0))
    assert cx >= 0.5 - 1e-9 and cy >= 0.5 - 1e-9


def test_batch_composition(sources):
    cfg = TrainConfig(batch_size=50, k3=10)
    batch = assemble_batch(sources, cfg, make_rng(0), NetConfig())
    assert len(batch) == 50
    aug = sum(ex.provenance.endswith("augmented") for ex in batch)
    assert aug / len(batch) >= 0.4
    # grouping: each real entry is followed by its augmented crops
    bases = [ex.provenance for ex in batch if ex.provenance.endswith("_real")]
    assert bases == ["video_real", "image_real", "video_real", "image_real", "video_real"]
    assert base_count(batch) == 5
    assert aug == 45  # k3 / (k3 + 1) of a full batch


def test_alternation_continues_across_batches(sources):
    cfg = TrainConfig(batch_size=3, k3=1)
    rng = make_rng(0)
    kinds, start = [], 0
    for _ in range(4):
        batch = assemble_batch(sources, cfg, rng, SMALL_NET, start=start)
        start += base_count(batch)
        kinds += [ex.provenance.split("_")[0] for ex in batch if ex.provenance.endswith("_real")]
    assert all(a != b for a, b in zip(kinds[:-1], kinds[1:]))


def test_no_augmentation_videos_only(sources):
    cfg = TrainConfig(batch_size=12, k3=0, source_mix="videos_only")
    batch = assemble_batch(sources, cfg, make_rng(1), SMALL_NET)
    assert {ex.provenance for ex in batch} == {"video_real"}


def test_augmented_per_batch_override(sources):
    for a in (0, 7, 19):
        cfg = TrainConfig(batch_size=20, augmented_per_batch=a)
        batch = assemble_batch(sources, cfg, make_rng(2), SMALL_NET)
        assert len(batch) == 20
        assert sum(ex.provenance.endswith("augmented") for ex in batch) == a
    with pytest.raises(ValueError):
        TrainConfig(batch_size=20, augmented_per_batch=20)


def test_batches_are_deterministic(sources):
    cfg = TrainConfig(batch_size=10, k3=4)
    a = stack_batch(assemble_batch(sources, cfg, make_rng(3), SMALL_NET))
    b = stack_batch(assemble_batch(sources, cfg, make_rng(3), SMALL_NET))
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_augmentation_is_not_cached(sources):
    cfg = TrainConfig(batch_size=10, k3=4, source_mix="images_only")
    rng = make_rng(4)
    a = stack_batch(assemble_batch(sources, cfg, rng, SMALL_NET))[2]
    b = stack_batch(assemble_batch(sources, cfg, rng, SMALL_NET))[2]
    assert not np.array_equal(a, b)


def test_empty_source_errors():
    with pytest.raises(EmptySourceError):
        assemble_batch(Sources([], []), TrainConfig(), make_rng(0))
    img = StillImageExample(np.zeros((32, 32, 3), np.uint8), BoundingBox(8, 8, 16, 16))
    with pytest.raises(EmptySourceError):
        assemble_batch(Sources([], [img]), TrainConfig(source_mix="videos_only"), make_rng(0))


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(k3=-1)
    with pytest.raises(ValueError):
        TrainConfig(loss="huber")


def test_overfit_single_example():
    seq = generate_synthetic_video(SyntheticSceneConfig(num_frames=2, seed=3))
    a, b = seq.annotations[:2]
    ex = make_video_pair_example(a.box, b.box, seq.frame(0), seq.frame(1))
    t, s, y = stack_batch([ex])
    net = Network(NetConfig(dropout=0.0))
    net.train()
    opt = SGD(net, 5e-2, 0.9)
    loss = np.inf
    for _ in range(2000):
        loss, g = l1_loss(net.forward(t, s), y)
        if loss < 0.05:
            break
        net.backward(g)
        opt.step()
    assert loss < 0.05


def test_zero_lr_is_flat(sources, tmp_path):
    net = Network(SMALL_NET)
    before = {k: v.copy() for k, v in net.parameters().items()}
    cfg = TrainConfig(batch_size=4, k3=1, lr=0.0, iterations=5, seed=1)
    res = train(cfg, sources, net, tmp_path)
    assert all(np.array_equal(before[k], v) for k, v in net.parameters().items())
    rows = list(csv.reader(open(tmp_path / "train_log.csv")))
    assert rows[0] == ["iteration", "loss", "lr", "source_mix"]
    assert len(rows) == 6 and len(res.losses) == 5
    # same batch, same weights -> same loss
    v = sources.videos[0]
    single = Sources([VideoSequence("s", v.frames[:2], v.annotations[:2])])
    flat = train(TrainConfig(batch_size=2, k3=0, lr=0.0, iterations=3, source_mix="videos_only"), single, net)
    assert len(set(flat.losses)) == 1


def test_frozen_batch_loss_decreases(sources):
    net = Network(replace(SMALL_NET, freeze_features=False))
    batch = stack_batch(assemble_batch(sources, TrainConfig(batch_size=20, k3=4), make_rng(0), SMALL_NET))
    net.train()
    opt = SGD(net, 5e-2, 0.9)
    losses = []
    for _ in range(100):
        loss, g = l1_loss(net.forward(*batch[:2]), batch[2])
        net.backward(g)
        opt.step()
        losses.append(loss)
    assert losses[-1] < 0.5 * losses[0]


@pytest.mark.parametrize("average", [0.0, 0.9])
def test_checkpoint_resume_matches_straight_run(sources, tmp_path, average):
    cfg = TrainConfig(batch_size=6, k3=2, lr=1e-2, iterations=6, checkpoint_every=3, seed=4, weight_average=average)
    straight = Network(replace(SMALL_NET, dtype="float64", dropout=0.3))
    train(cfg, sources, straight, tmp_path / "a")
    first = Network(replace(SMALL_NET, dtype="float64", dropout=0.3))
    train(replace(cfg, iterations=3), sources, first, tmp_path / "b")
    net, state = load_checkpoint(tmp_path / "b" / "checkpoint_000003.bin")
    assert state["iteration"] == 3
    train(cfg, sources, net, tmp_path / "b", resume=state)
    for k, v in straight.parameters().items():
        assert np.array_equal(v, net.parameters()[k]), k
    log = list(csv.reader(open(tmp_path / "b" / "train_log.csv")))
    assert [r[0] for r in log[1:]] == [str(i) for i in range(1, 7)]


def test_weight_average_matches_hand_ema(sources, tmp_path):
    base = TrainConfig(batch_size=6, k3=2, lr=2e-2, iterations=5, seed=3)
    cfg_net = replace(SMALL_NET, dtype="float64", dropout=0.3)
    # raw trajectory: averaging off, a checkpoint after every step
    plain = Network(cfg_net)
    init = {k: v.copy() for k, v in plain.parameters().items()}
    train(replace(base, weight_average=0.0, checkpoint_every=1), sources, plain, tmp_path / "raw")
    steps = [load_checkpoint(tmp_path / "raw" / f"checkpoint_{i:06d}.bin")[0].parameters() for i in range(1, 6)]
    decay = 0.2  # the ramp (0.1, 0.18) and then the cap are both exercised
    expect = {k: v.copy() for k, v in init.items()}
    for t, p in enumerate(steps):
        d = min(decay, (1 + t) / (10 + t))
        expect = {k: d * expect[k] + (1 - d) * p[k] for k in expect}
    avg = Network(cfg_net)
    train(replace(base, weight_average=decay), sources, avg, tmp_path / "avg")
    for k, v in avg.parameters().items():
        np.testing.assert_allclose(v, expect[k], rtol=1e-12, atol=1e-15, err_msg=k)
    # the stored weights are the average; the raw iterate rides along for resuming
    net, state = load_checkpoint(tmp_path / "avg" / "final.bin")
    for k, v in net.parameters().items():
        assert np.array_equal(v, avg.parameters()[k]), k
    for k, v in state["raw"].items():
        assert np.array_equal(v, plain.parameters()[k]), k


def test_training_is_deterministic(sources):
    cfg = TrainConfig(batch_size=6, k3=2, lr=1e-2, iterations=4, seed=2)
    nets = [Network(replace(SMALL_NET, dtype="float64", dropout=0.2)) for _ in range(2)]
    for n in nets:
        train(cfg, sources, n)
    for k, v in nets[0].parameters().items():
        assert v.tobytes() == nets[1].parameters()[k].tobytes()


def test_frozen_training_leaves_conv_untouched(sources):
    net = Network(replace(SMALL_NET, freeze_features=True))
    conv = net.parameters()["conv0.W"].copy()
    fc = net.parameters()["out.W"].copy()
    train(TrainConfig(batch_size=6, k3=2, lr=1e-2, iterations=3), sources, net)
    assert np.array_equal(conv, net.parameters()["conv0.W"])
    assert not np.array_equal(fc, net.parameters()["out.W"])


def test_single_input_training_runs(sources):
    net = Network(replace(SMALL_NET, single_input=True, freeze_features=False))
    res = train(TrainConfig(batch_size=6, k3=2, lr=1e-2, iterations=2), sources, net)
    assert all(np.isfinite(res.losses))


def test_with_backbone_copies_and_freezes():
    backbone = Network(replace(SMALL_NET, freeze_features=False, seed=9))
    net = with_backbone(replace(SMALL_NET, tied_branches=False, seed=1), backbone)
    assert net.cfg.freeze_features and net.is_frozen("conva0.W")
    p = net.parameters()
    assert np.array_equal(p["conva0.W"], backbone.parameters()["conv0.W"])
    assert np.array_equal(p["convb0.W"], backbone.parameters()["conv0.W"])


def _history():
    seq = generate_synthetic_video(SyntheticSceneConfig(width=64, height=64, num_frames=3, seed=1))
    a, b = seq.annotations[:2]
    return [(seq.frame(0), a.box, seq.frame(1), b.box)]


def test_online_finetune_zero_lr_is_noop():
    net = Network(SMALL_NET)
    before = {k: v.copy() for k, v in net.parameters().items()}
    online_finetune_step(net, _history(), lr_online=0.0)
    assert all(np.array_equal(before[k], v) for k, v in net.parameters().items())


def test_online_finetune_changes_weights():
    net = Network(SMALL_NET)
    before = net.parameters()["out.W"].copy()
    online_finetune_step(net, _history(), lr_online=1e-2)
    assert not np.array_equal(before, net.parameters()["out.W"])
    assert not net.training
