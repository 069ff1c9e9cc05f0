import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regtrack.datasets import (
    Annotation,
    AnnotationFormatError,
    StillImageExample,
    VideoSequence,
    default_exclusions,
    filter_still_images,
    format_corner4,
    parse_annotation_text,
    parse_annotations,
    read_manifest,
    split_dataset,
    write_corner4,
    write_manifest,
    manifest_image_line,
    manifest_sequence_line,
)
from regtrack.geometry import BoundingBox
from regtrack.imageio import write_ppm


def test_parse_corner4_row():
    seq = parse_annotation_text("3 10 10 50 40\n")
    (a,) = seq.annotations
    assert a.frame == 3 and a.box == BoundingBox(10, 10, 50, 40) and a.flags == frozenset()


def test_parse_corner4_flags_and_comments():
    seq = parse_annotation_text("# header\n0 1 2 3 4 occlusion,camera_motion\n\n5 1 2 3 4 none  # trailing\n")
    assert seq.annotations[0].flags == {"occlusion", "camera_motion"}
    assert seq.annotations[1].attribute_set() == {"none"}


def test_vot8_rotated_square_gives_hull():
    r = math.sqrt(2)
    seq = parse_annotation_text(f"{r},0,0,{r},{-r},0,0,{-r}\n", fmt="vot8")
    b = seq.annotations[0].box
    assert (b.x1, b.y1, b.x2, b.y2) == (-r, -r, r, r)


def test_vot8_frames_are_dense():
    text = "0,0,2,0,2,2,0,2\n1,1,3,1,3,3,1,3\n"
    seq = parse_annotation_text(text, fmt="vot8")
    assert [a.frame for a in seq.annotations] == [0, 1]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=8, max_size=8))
def test_vot8_hull_contains_all_points(vals):
    xs, ys = vals[0::2], vals[1::2]
    if max(xs) - min(xs) <= 0 or max(ys) - min(ys) <= 0:
        return
    text = ",".join(repr(v) for v in vals)
    b = parse_annotation_text(text, fmt="vot8").annotations[0].box
    assert all(b.x1 <= x <= b.x2 for x in xs) and all(b.y1 <= y <= b.y2 for y in ys)


def test_empty_file_is_an_error():
    with pytest.raises(AnnotationFormatError, match="no annotations"):
        parse_annotation_text("# only a comment\n")


def test_all_malformed_lines_reported():
    with pytest.raises(AnnotationFormatError) as exc:
        parse_annotation_text("0 1 2 3 4\n1 a b c d\n2 1 2 3\n3 1 2 3 4 bogus\n")
    assert [n for n, _ in exc.value.lines] == [2, 3, 4]


def test_non_monotone_frames_rejected():
    with pytest.raises(AnnotationFormatError, match="increasing"):
        parse_annotation_text("2 0 0 1 1\n1 0 0 1 1\n")


def test_degenerate_label_kept_as_none():
    seq = parse_annotation_text("0 5 5 5 9\n1 0 0 1 1\n")
    assert seq.annotations[0].box is None and seq.annotations[1].box is not None
    assert seq.annotated_pairs() == []


def test_unknown_format():
    with pytest.raises(AnnotationFormatError, match="format"):
        parse_annotation_text("0 0 0 1 1", fmt="xywh")


def test_corner4_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    anns = []
    for f in range(50):
        x, y = rng.uniform(-100, 100, 2)
        w, h = rng.uniform(0.1, 50, 2)
        anns.append(Annotation(f, BoundingBox(x, y, x + w, y + h), frozenset(["occlusion"]) if f % 3 == 0 else frozenset()))
    p = tmp_path / "ann.txt"
    write_corner4(p, anns, ["written by test"])
    back = parse_annotations(p)
    assert back.annotations == anns
    assert format_corner4(back.annotations, ["written by test"]) == p.read_text()


def _still(w, h, bw, bh):
    return StillImageExample(None, BoundingBox(0, 0, bw, bh), image_size=(w, h))


def test_filter_drops_large_boxes():
    ex = [_still(100, 100, 70, 10), _still(100, 100, 50, 50), _still(100, 100, 10, 66)]
    kept = filter_still_images(ex)
    assert kept == [ex[1]]
    assert len(filter_still_images(ex, max_fill=1.0)) == 3


def _videos(n):
    return [VideoSequence(f"v{i}", [], [Annotation(0, BoundingBox(0, 0, 1, 1))]) for i in range(n)]


def test_split_counts_and_exclusions():
    vids = _videos(10)
    s = split_dataset(vids, ["v3", "v7", "missing"], val_fraction=0.25, seed=1)
    assert len(s.train) == 6 and len(s.validation) == 2
    ids = {v.seq_id for v in s.train} | {v.seq_id for v in s.validation}
    assert ids == {f"v{i}" for i in range(10)} - {"v3", "v7"}
    assert not {v.seq_id for v in s.train} & {v.seq_id for v in s.validation}
    assert s.missing_exclusions == ["missing"]


def test_split_deterministic():
    vids = _videos(20)
    a = split_dataset(vids, seed=5)
    b = split_dataset(vids, seed=5)
    assert [v.seq_id for v in a.validation] == [v.seq_id for v in b.validation]


def test_default_exclusions():
    ex = default_exclusions()
    assert len(ex) == 7 and "01-Light_video00016" in ex


def test_video_frame_count_check():
    with pytest.raises(AnnotationFormatError):
        VideoSequence("x", np.zeros((2, 4, 4, 3), np.uint8), [Annotation(5, BoundingBox(0, 0, 1, 1))])


def test_dense_views():
    seq = parse_annotation_text("0 0 0 2 2 occlusion\n2 1 1 3 3\n")
    gt = seq.dense_boxes()
    assert gt.shape == (3, 4) and np.isnan(gt[1]).all()
    assert seq.dense_flags()[0] == {"occlusion"} and seq.dense_flags()[1] == {"none"}


def test_manifest_round_trip(tmp_path):
    frames = tmp_path / "s0"
    frames.mkdir()
    for i in range(3):
        write_ppm(frames / f"{i:05d}.ppm", np.full((8, 8, 3), i, np.uint8))
    write_corner4(tmp_path / "s0.txt", [Annotation(i, BoundingBox(1, 1, 4, 4)) for i in range(3)])
    write_ppm(tmp_path / "img.ppm", np.zeros((10, 10, 3), np.uint8))
    write_manifest(tmp_path / "m.txt", [
        manifest_sequence_line("s0", "s0", "s0.txt", class_label="rect-solid"),
        manifest_image_line("img.ppm", BoundingBox(1, 2, 3, 4)),
    ])
    ds = read_manifest(tmp_path / "m.txt", load_frames=True)
    (v,) = ds.videos
    assert v.class_label == "rect-solid" and v.frames.shape == (3, 8, 8, 3) and v.frame(2)[0, 0, 0] == 2
    assert ds.images[0].box == BoundingBox(1, 2, 3, 4) and ds.images[0].size() == (10, 10)


def test_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_manifest(tmp_path / "nope.txt")
    (tmp_path / "bad.txt").write_text("video a b\n")
    with pytest.raises(AnnotationFormatError, match="bad.txt:1"):
        read_manifest(tmp_path / "bad.txt")
