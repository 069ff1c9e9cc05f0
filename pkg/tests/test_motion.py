import math
import warnings

import numpy as np
import pytest

from regtrack.geometry import BoundingBox, axis_containment, make_search_region
from regtrack.motion import (
    LaplaceDist,
    MotionBudgetError,
    MotionModel,
    draw_motion,
    extract_motion_stats,
    fit_laplace,
    fit_motion_stats,
    laplace_sample,
    make_rng,
    model_from_fits,
    read_motion_file,
    sample_pseudo_motion,
    write_motion_file,
)


class _Ann:
    def __init__(self, box):
        self.box = box


class _Seq:
    def __init__(self, boxes):
        self.annotations = [_Ann(b) for b in boxes]


def test_pdf_integrates_to_one_and_moments():
    d = LaplaceDist(0.3, 0.2)
    x = np.linspace(-20, 20, 4_000_001)
    assert abs(np.trapezoid(d.pdf(x), x) - 1.0) < 1e-6
    # median and mean absolute deviation, by quadrature
    assert abs(d.cdf(0.3) - 0.5) < 1e-15
    assert abs(np.trapezoid(np.abs(x - 0.3) * d.pdf(x), x) - 0.2) < 1e-6


def test_ppf_inverts_cdf():
    d = LaplaceDist(-1.0, 0.7)
    u = np.linspace(0.001, 0.999, 999)
    np.testing.assert_allclose(d.cdf(d.ppf(u)), u, atol=1e-12)


def test_degenerate_scale_returns_location():
    rng = make_rng(0)
    d = LaplaceDist(0.25, 1e-300)
    assert all(laplace_sample(d, rng) == 0.25 for _ in range(100))


def test_median_draw():
    assert LaplaceDist(3.0, 2.0).ppf(0.5) == 3.0


def test_sample_moments():
    rng = make_rng(1)
    x = laplace_sample(LaplaceDist(0.0, 0.2), rng, size=1_000_000)
    assert abs(np.mean(np.abs(x)) - 0.2) < 0.002
    assert abs(np.median(np.abs(x)) - 0.2 * math.log(2)) < 0.002


def test_zero_motion_limit_returns_same_box():
    m = MotionModel.from_scales(1e-300, 1e-300)
    box = BoundingBox(10, 20, 50, 45)
    rng = make_rng(2)
    for _ in range(50):
        out = sample_pseudo_motion(box, m, rng)
        np.testing.assert_allclose(out.as_array(), box.as_array(), atol=1e-9)


def _brute_force_pseudo_motion(box, n, rng, b_x=0.2, b_s=1 / 15):
    """Independent rejection sampler: numpy's own Laplace generator + explicit interval checks."""
    out = []
    while len(out) < n:
        dx, dy = rng.laplace(0.0, b_x, 2)
        gw, gh = rng.laplace(1.0, b_s, 2)
        if not (0.6 < gw < 1.4 and 0.6 < gh < 1.4):
            continue
        cx, cy = box.cx + box.width * dx, box.cy + box.height * dy
        rw, rh = 2 * box.width * gw, 2 * box.height * gh
        ox = min(box.x2, cx + rw / 2) - max(box.x1, cx - rw / 2)
        oy = min(box.y2, cy + rh / 2) - max(box.y1, cy - rh / 2)
        if ox >= 0.5 * box.width and oy >= 0.5 * box.height:
            out.append((dx, dy, gw, gh))
    return np.array(out)


def test_pseudo_motion_medians_match_oracle():
    box = BoundingBox(0, 0, 100, 100)
    m = MotionModel()
    rng = make_rng(3)
    draws = np.array([[d.dx, d.dy, d.gw, d.gh] for d in (draw_motion(box, m, rng) for _ in range(100_000))])
    med = np.median(draws, axis=0)
    assert abs(med[0]) < 0.01 and abs(med[1]) < 0.01
    assert abs(med[2] - 1) < 0.005 and abs(med[3] - 1) < 0.005
    oracle = _brute_force_pseudo_motion(box, 100_000, np.random.default_rng(99))
    omed = np.median(oracle, axis=0)
    np.testing.assert_allclose(med, omed, atol=0.01)
    # both samplers agree on spread too
    np.testing.assert_allclose(np.mean(np.abs(draws - [0, 0, 1, 1]), axis=0),
                               np.mean(np.abs(oracle - [0, 0, 1, 1]), axis=0), rtol=0.03)


def test_pseudo_motion_constraints_hold():
    box = BoundingBox(5, 5, 35, 25)
    m = MotionModel()
    rng = make_rng(4)
    for _ in range(20_000):
        d = draw_motion(box, m, rng)
        assert 0.6 < d.gw < 1.4 and 0.6 < d.gh < 1.4
        region = make_search_region(d.apply(box), 2.0).as_box()
        fx, fy = axis_containment(box, region)
        assert fx >= 0.5 and fy >= 0.5


def test_pseudo_motion_deterministic_and_translation_equivariant():
    box = BoundingBox(10, 10, 40, 30)
    m = MotionModel()
    a = [draw_motion(box, m, make_rng(7, s)) for s in range(200)]
    b = [draw_motion(box, m, make_rng(7, s)) for s in range(200)]
    c = [draw_motion(box.translated(123.0, -77.0), m, make_rng(7, s)) for s in range(200)]
    assert a == b
    for x, y in zip(a, c):
        np.testing.assert_allclose([x.dx, x.dy, x.gw, x.gh], [y.dx, y.dy, y.gw, y.gh], atol=1e-12)


def test_small_motions_more_frequent():
    box = BoundingBox(0, 0, 50, 50)
    m = MotionModel()
    rng = make_rng(8)
    dx = np.abs([draw_motion(box, m, rng).dx for _ in range(100_000)])
    assert np.sum(dx < 0.1) > np.sum((dx > 0.1) & (dx < 0.2))


def test_rejection_budget_error_names_constraint():
    m = MotionModel.from_scales(0.2, 1 / 15, containment=1.0, scale_min=0.99999, scale_max=1.00001, max_attempts=20)
    with pytest.raises(MotionBudgetError, match="scale"):
        draw_motion(BoundingBox(0, 0, 10, 10), m, make_rng(0))


def test_uniform_mode_respects_constraints_and_is_flat():
    box = BoundingBox(0, 0, 20, 20)
    m = MotionModel().uniform()
    assert m.uniform_shift_range == pytest.approx(1.4)
    rng = make_rng(9)
    draws = [draw_motion(box, m, rng) for _ in range(20_000)]
    gw = np.array([d.gw for d in draws])
    assert gw.min() > 0.6 and gw.max() < 1.4
    dx = np.abs([d.dx for d in draws])
    # far flatter than Laplace: large shifts are common
    assert np.mean(dx > 0.5) > 0.3


def test_fit_hand_mle():
    f = fit_laplace([-1, 0, 1])
    assert f.loc == 0 and abs(f.scale - 2 / 3) < 1e-15 and not f.degenerate


def test_fit_identical_samples_flagged():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        f = fit_laplace([0.5, 0.5, 0.5])
    assert f.scale == 0 and f.degenerate and rec


def test_fit_needs_two_samples():
    with pytest.raises(ValueError):
        fit_laplace([1.0])


def test_fit_consistency():
    rng = make_rng(10)
    f = fit_laplace(laplace_sample(LaplaceDist(0.0, 0.2), rng, size=100_000))
    assert abs(f.loc) < 0.01 and abs(f.scale - 0.2) < 0.01


def test_extract_static_and_translation():
    b = BoundingBox(0, 0, 10, 10)
    s = extract_motion_stats([_Seq([b, b, b])])
    assert s.dx == [0, 0] and s.gw == [1, 1]
    s = extract_motion_stats([_Seq([b, BoundingBox(2, 0, 12, 10)])])
    assert s.dx == [0.2] and s.dy == [0] and s.gw == [1] and s.gh == [1]


def test_extract_skips_degenerate_pairs():
    b = BoundingBox(0, 0, 10, 10)
    s = extract_motion_stats([_Seq([b, None, b, b])])
    assert s.skipped == 2 and len(s) == 1


def test_extract_requires_two_annotations():
    with pytest.raises(ValueError):
        extract_motion_stats([_Seq([BoundingBox(0, 0, 1, 1)])])


def test_motion_file_round_trip(tmp_path):
    rng = make_rng(11)
    boxes = [BoundingBox(0, 0, 10, 10)]
    for _ in range(200):
        boxes.append(sample_pseudo_motion(boxes[-1], MotionModel(), rng))
    fits = fit_motion_stats(extract_motion_stats([_Seq(boxes)]))
    p = tmp_path / "motion.txt"
    write_motion_file(p, fits)
    assert read_motion_file(p) == fits
    m = model_from_fits(fits)
    assert m.dx.scale == fits["dx"].scale
