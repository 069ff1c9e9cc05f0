from dataclasses import replace

import numpy as np
import pytest

from regtrack import ablation as abl
from regtrack.datasets import VideoSequence
from regtrack.evaluation import ScoreTable
from regtrack.net import NetConfig
from regtrack.synthetic import SyntheticSceneConfig, make_sequences, make_still_images
from regtrack.trainer import Sources, TrainConfig

TINY = abl.AblationSpec(
    net=NetConfig(input_size=16, conv_filters=(4,), conv_kernels=(3,), conv_strides=(1,), conv_pools=(1,),
                  fc_layers=1, fc_width=16),
    train=TrainConfig(batch_size=6, k3=2, iterations=2),
    repetitions=2,
    backbone_iterations=2,
)


@pytest.fixture(scope="module")
def data():
    cfg = SyntheticSceneConfig(width=80, height=80, num_frames=5)
    return make_sequences(cfg, 4, 1, "tr"), make_sequences(cfg, 2, 2, "te"), make_still_images(cfg, 3, 3)


def _table(name, acc, rob):
    return ScoreTable(name, {"all": acc}, {"all": rob}, {"all": 0.0}, {"all": 10})


def test_table1_variant_set():
    assert [v.name for v in abl.TABLE1_VARIANTS] == ["full", "l2_loss", "uniform_crops", "images_only",
                                                    "videos_only"]
    net, train = abl.VARIANTS["l2_loss"].configs(NetConfig(), TrainConfig())
    assert train.loss == "l2" and net == NetConfig()
    net, _ = abl.SINGLE_INPUT.configs(NetConfig(), TrainConfig())
    assert net.single_input


def test_suite_emits_rows_and_shares_seeds(data):
    train, test, images = data
    res = abl.run_ablation_suite(abl.TABLE1_VARIANTS, Sources(train, images), test, TINY)
    assert len(res) == 10 and all(r.ok for r in res)
    rows = abl.median_rows(res)
    assert [r["variant"] for r in rows] == [v.name for v in abl.TABLE1_VARIANTS]
    assert all(r["runs"] == 2 and r["failed_runs"] == 0 for r in rows)
    assert abl.report(res).splitlines()[0].split()[0] == "variant"
    # same seed, same variant -> same scores
    again = abl.run_variant(abl.FULL, Sources(train, images), test, TINY, 1, abl.make_backbone(TINY, Sources(train, images), 1))
    first = [r for r in res if r.name == "full" and r.repetition == 1][0]
    assert again.table.overall_error() == first.table.overall_error()


def test_failed_variant_does_not_stop_suite(data):
    train, test, images = data
    res = abl.run_ablation_suite([abl.VARIANTS["videos_only"], abl.VARIANTS["images_only"]], Sources(train, []), test,
                                 replace(TINY, repetitions=1, backbone_iterations=0))
    assert res[0].ok and not res[1].ok and "EmptySourceError" in res[1].error
    rows = abl.median_rows(res)
    assert rows[1]["failed_runs"] == 1 and np.isnan(rows[1]["overall_error"])


def test_median_rows_use_median():
    res = [abl.VariantResult("a", i, _table("a", acc, 1.0)) for i, acc in enumerate((0.2, 0.9, 0.5))]
    row = abl.median_rows(res)[0]
    assert row["accuracy_error"] == pytest.approx(0.5)
    assert row["overall_error"] == pytest.approx(0.25)
    assert abl.median_error(res, "a") == pytest.approx(0.25)


def test_subsets_are_nested():
    vids = [VideoSequence(f"v{i}") for i in range(40)]
    a, b, c = (abl.subset_videos(vids, f, 3) for f in (0.25, 0.5, 1.0))
    assert (len(a), len(b), len(c)) == (10, 20, 40)
    assert {v.seq_id for v in a} <= {v.seq_id for v in b} <= {v.seq_id for v in c}
    with pytest.raises(ValueError):
        abl.subset_videos(vids, 0.0)


def test_training_size_sweep_rows(data):
    train, test, images = data
    res = abl.training_size_sweep(train, images, test, replace(TINY, repetitions=1))
    assert [r.name for r in res] == ["full@0.25", "full@0.5", "full@1"]


def test_non_increasing():
    assert abl.is_non_increasing([0.5, 0.5, 0.3])
    assert not abl.is_non_increasing([0.5, 0.6, 0.3])


def test_class_split_threshold():
    train = [VideoSequence(f"a{i}", class_label="cat") for i in range(25)]
    train += [VideoSequence(f"b{i}", class_label="dog") for i in range(24)]
    test = [VideoSequence("t1", class_label="cat"), VideoSequence("t2", class_label="dog"), VideoSequence("t3")]
    seen, unseen = abl.class_split(train, test)
    assert [s.seq_id for s in seen] == ["t1"]
    assert [s.seq_id for s in unseen] == ["t2", "t3"]


def test_seen_unseen_rows(data):
    train, test, images = data
    res = abl.run_variant(abl.FULL, Sources(train, images), test, replace(TINY, backbone_iterations=0), 0)
    rows = abl.seen_unseen_rows(res, train, test, TINY, threshold=1)
    assert sum(r["sequences"] for r in rows) == len(test)


def test_attribute_rows_format():
    res = [abl.VariantResult("full", 0, _table("full", 0.8, 1.0)), abl.VariantResult("single_input", 0,
                                                                                     _table("s", 0.6, 1.0))]
    rows = abl.attribute_rows(res, ["all"])
    assert rows[0]["all"] == pytest.approx(0.1) and rows[1]["all"] == pytest.approx(0.2)
