import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regtrack.datasets import Annotation, VideoSequence, parse_annotations
from regtrack.geometry import BoundingBox
from regtrack.net import NetConfig, Network
from regtrack.synthetic import SyntheticSceneConfig, generate_synthetic_video
from regtrack.tracker import IdentityNet, Tracker, track_sequence, write_predictions

SMALL_NET = NetConfig(input_size=16, conv_filters=(4,), conv_kernels=(3,), conv_strides=(1,), conv_pools=(1,),
                      fc_layers=1, fc_width=16, dropout=0.0)


@pytest.fixture(scope="module")
def seq():
    return generate_synthetic_video(SyntheticSceneConfig(width=96, height=96, num_frames=12, seed=4), "s4")


class ConstNet:
    """Returns a fixed code for every input."""

    def __init__(self, code):
        self.cfg = NetConfig()
        self.code = np.asarray(code, float)

    def forward(self, target, search):
        return np.tile(self.code, (len(search), 1))


def test_init_reads_back_box(seq):
    box = BoundingBox(10.5, 12.25, 30, 40)
    state = Tracker(IdentityNet()).init(seq.frame(0), box)
    assert state.box == box and state.warnings == []
    assert np.array_equal(state.frame, seq.frame(0))


def test_init_clamps_and_warns(seq):
    state = Tracker(IdentityNet()).init(seq.frame(0), BoundingBox(-10, 80, 20, 120))
    assert state.box == BoundingBox(0, 80, 20, 96)
    assert len(state.warnings) == 1


def test_init_is_deterministic(seq):
    t = Tracker(IdentityNet())
    a, b = t.init(seq.frame(0), BoundingBox(1, 2, 30, 40)), t.init(seq.frame(0), BoundingBox(1, 2, 30, 40))
    assert a.box == b.box and a.index == b.index


def test_identity_net_predicts_constant_box(seq):
    rec = track_sequence(IdentityNet(), seq)
    first = rec.predictions[0]
    np.testing.assert_allclose(rec.predictions, np.tile(first, (len(seq), 1)), atol=1e-9)
    assert rec.fallbacks == [] and rec.error is None


def test_one_frame_sequence(seq):
    one = VideoSequence("one", seq.frames[:1], seq.annotations[:1])
    rec = track_sequence(IdentityNet(), one)
    assert rec.predictions.shape == (1, 4)
    np.testing.assert_array_equal(rec.predictions[0], seq.annotations[0].box.as_array())


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        track_sequence(IdentityNet(), VideoSequence("e", [], []))


def test_tracking_is_deterministic(seq):
    net = Network(SMALL_NET)
    a, b = track_sequence(net, seq), track_sequence(net, seq)
    assert a.predictions.tobytes() == b.predictions.tobytes()


def test_replay_prefix_equality(seq):
    # state at frame t depends only on frames <= t
    net = Network(SMALL_NET)
    full = track_sequence(net, seq)
    head = VideoSequence("h", seq.frames[:6], [a for a in seq.annotations if a.frame < 6])
    part = track_sequence(net, head)
    assert part.predictions.tobytes() == full.predictions[:6].tobytes()


def test_degenerate_output_falls_back(seq):
    rec = track_sequence(ConstNet([5.0, 5.0, 5.0, 5.0]), seq)
    assert rec.fallbacks == list(range(1, len(seq)))
    np.testing.assert_array_equal(rec.predictions[-1], rec.predictions[0])


def test_nonfinite_output_falls_back(seq):
    rec = track_sequence(ConstNet([np.nan, 0, 1, 1]), seq)
    assert len(rec.fallbacks) == len(seq) - 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 60, allow_nan=False), min_size=4, max_size=4))
def test_never_emits_invalid_box(code):
    frames = np.zeros((4, 40, 50, 3), np.uint8)
    s = VideoSequence("z", frames, [Annotation(0, BoundingBox(10, 10, 20, 20))])
    rec = track_sequence(ConstNet(code), s)
    p = rec.predictions
    assert np.all(p[:, 2] > p[:, 0]) and np.all(p[:, 3] > p[:, 1])
    assert np.all(p[:, 2] - p[:, 0] >= 2 - 1e-9) and np.all(p[:, 3] - p[:, 1] >= 2 - 1e-9)
    assert np.all(p[:, 0] < 50) and np.all(p[:, 2] > 0) and np.all(p[:, 1] < 40) and np.all(p[:, 3] > 0)


def test_hook_reinitializes(seq):
    gt = seq.dense_boxes()
    rec = track_sequence(IdentityNet(), seq, hook=lambda i, box: BoundingBox(*gt[i]) if i == 5 else None)
    np.testing.assert_allclose(rec.predictions[5:], np.tile(gt[5], (len(seq) - 5, 1)), atol=1e-9)


def test_unreadable_frame_keeps_partial_record(tmp_path, seq):
    paths = []
    for i in range(3):
        p = tmp_path / f"{i:03d}.ppm"
        if i < 2:
            from regtrack.imageio import write_image

            write_image(p, seq.frame(i))
        paths.append(p)
    s = VideoSequence("broken", paths, seq.annotations[:1])
    rec = track_sequence(IdentityNet(), s)
    assert rec.error is not None
    assert np.all(np.isfinite(rec.predictions[:2])) and np.all(np.isnan(rec.predictions[2]))


def test_timing_accumulates(seq):
    rec = track_sequence(IdentityNet(), seq)
    assert rec.timing["total_mean_ms"] >= rec.timing["forward_mean_ms"] >= 0
    assert rec.timing["total_std_ms"] >= 0


def test_predictions_file_roundtrip(tmp_path, seq):
    rec = track_sequence(Network(SMALL_NET), seq)
    path = tmp_path / "pred.txt"
    write_predictions(path, rec, {"checkpoint": "none"})
    text = path.read_text()
    assert text.startswith("# sequence=s4\n# tracker=tracker\n# checkpoint=none\n")
    back = parse_annotations(path).dense_boxes()
    np.testing.assert_array_equal(back, rec.predictions)
    write_predictions(tmp_path / "again.txt", rec, {"checkpoint": "none"})
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()
    write_predictions(tmp_path / "timed.txt", rec, timing=True)
    assert "total_mean_ms=" in (tmp_path / "timed.txt").read_text()
