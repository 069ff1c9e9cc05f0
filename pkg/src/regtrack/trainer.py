"""Offline training on video pairs and still-image pseudo pairs.

Base examples alternate between a randomly chosen video pair and a randomly
chosen still image. Each base example contributes its real pair followed by
``k3`` freshly augmented crops, grouped contiguously in the batch.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import StillImageExample, VideoSequence
from .geometry import BoundingBox, crop_and_resize, encode_target, make_search_region
from .motion import MotionModel, draw_motion, make_rng
from .net import LOSSES, NetConfig, Network, SGD, load_weights, save_weights

log = logging.getLogger(__name__)

SOURCE_MIXES = ("both", "videos_only", "images_only")
AUGMENTATIONS = ("laplace", "uniform", "none")
PROVENANCE = ("video_real", "video_augmented", "image_real", "image_augmented")

PAPER_LEARNING_RATE = 1e-5
DESK_LEARNING_RATE = 5e-2
ONLINE_LEARNING_RATE = 1e-9
# desk recipe: still-image pretraining of the conv backbone, then head training
DESK_BACKBONE_ITERATIONS = 1000
DESK_ITERATIONS = 8000
# decay of the running weight average reported as the trained network; 0 keeps the last iterate
DESK_WEIGHT_AVERAGE = 0.999


class EmptySourceError(ValueError):
    """The configured source mix needs a source that has no usable examples."""


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or Inf loss; the last checkpoint is left in place."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    k3: int = 10
    # exact number of augmented entries per batch; overrides k3 when set
    augmented_per_batch: int | None = None
    lr: float = DESK_LEARNING_RATE
    momentum: float = 0.9
    iterations: int = DESK_ITERATIONS
    loss: str = "l1"
    augmentation: str = "laplace"
    source_mix: str = "both"
    b_translation: float = 1.0 / 5.0
    b_scale: float = 1.0 / 15.0
    context: float = 2.0
    weight_average: float = DESK_WEIGHT_AVERAGE
    checkpoint_every: int = 0
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.k3 < 0:
            raise ValueError("batch_size must be >= 1 and k3 >= 0")
        if self.augmented_per_batch is not None and not 0 <= self.augmented_per_batch < self.batch_size:
            raise ValueError(
                f"augmented_per_batch must be in [0, {self.batch_size - 1}] to leave room for a real pair"
            )
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}, got {self.loss!r}")
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"augmentation must be one of {AUGMENTATIONS}, got {self.augmentation!r}")
        if self.source_mix not in SOURCE_MIXES:
            raise ValueError(f"source_mix must be one of {SOURCE_MIXES}, got {self.source_mix!r}")
        if self.lr < 0 or self.iterations < 0:
            raise ValueError("lr and iterations must be non-negative")
        if not 0.0 <= self.weight_average < 1.0:
            raise ValueError(f"weight_average must be in [0, 1), got {self.weight_average}")

    def motion_model(self, model: MotionModel | None = None) -> MotionModel:
        m = model or MotionModel.from_scales(self.b_translation, self.b_scale, context=self.context)
        return m.uniform() if self.augmentation == "uniform" else m


@dataclass
class TrainingExample:
    target: np.ndarray
    search: np.ndarray
    label: np.ndarray
    provenance: str


@dataclass
class Sources:
    videos: list[VideoSequence] = field(default_factory=list)
    images: list[StillImageExample] = field(default_factory=list)

    def __post_init__(self):
        # videos without a usable consecutive pair cannot be sampled
        self._pairs = [(v, v.annotated_pairs()) for v in self.videos]
        self._pairs = [(v, p) for v, p in self._pairs if p]

    @property
    def n_video_pairs(self) -> int:
        return sum(len(p) for _, p in self._pairs)

    def sample_pair(self, rng):
        video, pairs = self._pairs[int(rng.integers(len(self._pairs)))]
        a, b = pairs[int(rng.integers(len(pairs)))]
        return video, a, b

    def enabled(self, mix: str) -> list[str]:
        want = {"both": ["video", "image"], "videos_only": ["video"], "images_only": ["image"]}[mix]
        have = {"video": bool(self._pairs), "image": bool(self.images)}
        missing = [w for w in want if not have[w]]
        if missing:
            raise EmptySourceError(f"source mix {mix!r} needs {' and '.join(missing)} examples, found none")
        return want


def _crop(image, box: BoundingBox, k: float, size: int):
    region = make_search_region(box, k)
    return crop_and_resize(image, region, size), region


def make_video_pair_example(prev_box: BoundingBox, curr_box: BoundingBox, prev_frame, curr_frame,
                            size: int = 64, k: float = 2.0, scale: float = 10.0) -> TrainingExample:
    """Real pair: target from the previous frame, search region centred on the previous box."""
    target, _ = _crop(prev_frame, prev_box, k, size)
    search, region = _crop(curr_frame, prev_box, k, size)
    return TrainingExample(target, search, encode_target(curr_box, region, scale), "video_real")


def _shifted_example(target, image, box, m, rng, size, k, scale, tag):
    moved = draw_motion(box, m, rng).apply(box)
    search, region = _crop(image, moved, k, size)
    return TrainingExample(target, search, encode_target(box, region, scale), tag)


def make_video_augmented_example(target_crop, curr_box, curr_frame, m: MotionModel, rng,
                                 size=64, k=2.0, scale=10.0) -> TrainingExample:
    """Search region centred on a motion-model displacement of the current box."""
    return _shifted_example(target_crop, curr_frame, curr_box, m, rng, size, k, scale, "video_augmented")


def make_image_pseudo_pair(example: StillImageExample, m: MotionModel, rng, size: int = 64,
                           k: float = 2.0, scale: float = 10.0, image=None) -> TrainingExample:
    """Still image used as both frames, with an apparent motion drawn from ``m``."""
    image = example.load() if image is None else image
    target, _ = _crop(image, example.box, k, size)
    return _shifted_example(target, image, example.box, m, rng, size, k, scale, "image_augmented")


def _base_group(kind, sources: Sources, n_aug, m, rng, size, k, scale):
    """One base example followed by ``n_aug`` augmented variants."""
    if kind == "video":
        video, a, b = sources.sample_pair(rng)
        prev, curr = video.frame(a.frame), video.frame(b.frame)
        real = make_video_pair_example(a.box, b.box, prev, curr, size, k, scale)
        out = [real]
        for _ in range(n_aug):
            out.append(make_video_augmented_example(real.target, b.box, curr, m, rng, size, k, scale))
        return out
    ex = sources.images[int(rng.integers(len(sources.images)))]
    image = ex.load()
    target, region = _crop(image, ex.box, k, size)
    out = [TrainingExample(target, target.copy(), encode_target(ex.box, region, scale), "image_real")]
    for _ in range(n_aug):
        out.append(_shifted_example(target, image, ex.box, m, rng, size, k, scale, "image_augmented"))
    return out


def assemble_batch(sources: Sources, cfg: TrainConfig, rng, net_cfg: NetConfig = NetConfig(),
                   motion: MotionModel | None = None, start: int = 0) -> list[TrainingExample]:
    """Build one batch. ``start`` is the running base-example counter for alternation."""
    kinds = sources.enabled(cfg.source_mix)
    m = cfg.motion_model(motion)
    size, scale = net_cfg.input_size, net_cfg.output_scale
    k3 = 0 if cfg.augmentation == "none" else cfg.k3
    batch: list[TrainingExample] = []
    if cfg.augmented_per_batch is not None and cfg.augmentation != "none":
        n_real = cfg.batch_size - cfg.augmented_per_batch
        base, extra = divmod(cfg.augmented_per_batch, n_real)
        for i in range(n_real):
            n_aug = base + (1 if i < extra else 0)
            batch += _base_group(kinds[(start + i) % len(kinds)], sources, n_aug, m, rng, size, cfg.context, scale)
        return batch
    i = 0
    while len(batch) < cfg.batch_size:
        n_aug = min(k3, cfg.batch_size - len(batch) - 1)
        batch += _base_group(kinds[(start + i) % len(kinds)], sources, n_aug, m, rng, size, cfg.context, scale)
        i += 1
    return batch


def base_count(batch: Sequence[TrainingExample]) -> int:
    return sum(ex.provenance.endswith("_real") for ex in batch)


def stack_batch(batch: Sequence[TrainingExample]):
    target = np.stack([ex.target for ex in batch])
    search = np.stack([ex.search for ex in batch])
    labels = np.stack([ex.label for ex in batch])
    return target, search, labels


# checkpoints ----------------------------------------------------------------


def _rng_to_array(rng: np.random.Generator) -> np.ndarray:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 generators can be checkpointed")
    s, inc = st["state"]["state"], st["state"]["inc"]
    mask = (1 << 64) - 1
    return np.array([s >> 64, s & mask, inc >> 64, inc & mask, st["has_uint32"], st["uinteger"]], dtype=np.uint64)


def _rng_from_array(a: np.ndarray) -> np.random.Generator:
    a = [int(v) for v in a]
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": (a[0] << 64) | a[1], "inc": (a[2] << 64) | a[3]},
        "has_uint32": a[4],
        "uinteger": a[5],
    }
    return np.random.Generator(bg)


class WeightAverage:
    """Exponential moving average of the trainable parameters.

    The decay ramps up as ``min(decay, (1 + t) / (10 + t))`` after ``t`` updates, so early
    iterates (including the initialization) are forgotten quickly.
    """

    def __init__(self, net: Network, decay: float, updates: int = 0):
        self.net, self.decay, self.updates = net, decay, updates
        params = net.parameters()
        self.names = [n for n in params if not net.is_frozen(n)]
        self.shadow = {n: params[n].copy() for n in self.names}

    def update(self) -> None:
        d = min(self.decay, (1 + self.updates) / (10 + self.updates))
        params = self.net.parameters()
        for n in self.names:
            # s <- d*s + (1-d)*p, written so that an unchanged parameter stays bit-identical
            s = self.shadow[n]
            s += (1.0 - d) * (params[n] - s)
        self.updates += 1

    def apply(self) -> dict[str, np.ndarray]:
        """Write the average into the network; returns the raw weights it replaced."""
        params = self.net.parameters()
        raw = {n: params[n].copy() for n in self.names}
        for n in self.names:
            params[n][...] = self.shadow[n]
        return raw

    def restore(self, raw: dict[str, np.ndarray]) -> None:
        params = self.net.parameters()
        for n, v in raw.items():
            params[n][...] = v


def save_checkpoint(path, net: Network, opt: SGD, rng, iteration: int, bases: int,
                    average: WeightAverage | None = None) -> None:
    """Weights file plus trainer state.

    With an active average the stored weights are the averaged ones, so any checkpoint can be
    used for tracking directly; the raw iterate needed to resume goes in ``raw.*`` tensors.
    """
    extra = {
        "trainer.iteration": np.array([iteration, bases], dtype=np.uint64),
        "trainer.rng": _rng_to_array(rng),
        "trainer.dropout_rng": _rng_to_array(net.rng),
    }
    extra.update({f"velocity.{k}": v for k, v in opt.state().items()})
    raw = average.apply() if average is not None else None
    try:
        if raw is not None:
            extra.update({f"raw.{k}": v for k, v in raw.items()})
        tmp = Path(str(path) + ".tmp")
        save_weights(net, tmp, extra)
        tmp.replace(path)
    finally:
        if raw is not None:
            average.restore(raw)


def load_checkpoint(path, expected: NetConfig | None = None):
    """``(net, state)`` where state has iteration, bases, rng, velocity and raw weights (if averaged)."""
    net, extra = load_weights(path, expected)
    it, bases = (int(v) for v in extra["trainer.iteration"])
    net.rng = _rng_from_array(extra["trainer.dropout_rng"])
    for layer in net.head:
        if hasattr(layer, "rate"):
            layer.rng = net.rng
    velocity = {k[len("velocity."):]: v for k, v in extra.items() if k.startswith("velocity.")}
    raw = {k[len("raw."):]: v for k, v in extra.items() if k.startswith("raw.")}
    return net, {"iteration": it, "bases": bases, "rng": _rng_from_array(extra["trainer.rng"]),
                 "velocity": velocity, "raw": raw}


# training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    seconds: float = 0.0


def train(cfg: TrainConfig, sources: Sources, net: Network, out_dir=None, motion: MotionModel | None = None,
          resume: dict | None = None, log_file: str = "train_log.csv") -> TrainResult:
    """Run ``cfg.iterations`` SGD steps on ``net`` in place.

    With ``cfg.weight_average > 0`` the network ends holding the running average of its
    iterates rather than the last one. With ``out_dir`` set, a CSV log ``iteration,loss,lr,source_mix`` and
    checkpoints every ``cfg.checkpoint_every`` iterations (plus a final one)
    are written there.
    """
    sources.enabled(cfg.source_mix)
    loss_fn = LOSSES[cfg.loss]
    opt = SGD(net, cfg.lr, cfg.momentum)
    rng = make_rng(cfg.seed, 2)
    start_it, bases = 0, 0
    average = None
    if resume is not None:
        start_it, bases, rng = resume["iteration"], resume["bases"], resume["rng"]
        opt.load_state(resume["velocity"])
        # a resumed net holds the average; the raw iterate continues training
        if cfg.weight_average:
            average = WeightAverage(net, cfg.weight_average, updates=start_it)
        params = net.parameters()
        for n, v in resume.get("raw", {}).items():
            params[n][...] = v
    elif cfg.weight_average:
        average = WeightAverage(net, cfg.weight_average)
    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / log_file, "a" if resume else "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if not resume:
            writer.writerow(["iteration", "loss", "lr", "source_mix"])
    result = TrainResult()
    t0 = time.perf_counter()
    net.train()
    try:
        for it in range(start_it, cfg.iterations):
            batch = assemble_batch(sources, cfg, rng, net.cfg, motion, start=bases)
            bases += base_count(batch)
            target, search, labels = stack_batch(batch)
            loss, grad = loss_fn(net.forward(target, search), labels)
            if not math.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss {loss} at iteration {it + 1}")
            net.backward(grad)
            opt.step()
            if average is not None:
                average.update()
            result.losses.append(loss)
            if writer is not None:
                writer.writerow([it + 1, f"{loss:.6g}", f"{cfg.lr:g}", cfg.source_mix])
            if cfg.log_every and (it + 1) % cfg.log_every == 0:
                log.info("iteration %d loss %.4f", it + 1, loss)
            if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                path = out / f"checkpoint_{it + 1:06d}.bin"
                save_checkpoint(path, net, opt, rng, it + 1, bases, average)
                result.checkpoints.append(path)
        if out is not None:
            path = out / "final.bin"
            save_checkpoint(path, net, opt, rng, cfg.iterations, bases, average)
            result.checkpoints.append(path)
        if average is not None:
            average.apply()
    finally:
        if fh is not None:
            fh.close()
        net.eval()
    result.seconds = time.perf_counter() - t0
    return result


def pretrain_features(net_cfg: NetConfig, sources: Sources, cfg: TrainConfig) -> Network:
    """Train a full network on still-image pseudo pairs; its conv branch becomes the frozen backbone."""
    # the pretraining head is discarded, so it is trained without dropout
    net = Network(replace(net_cfg, freeze_features=False, single_input=False, tied_branches=True, dropout=0.0))
    train(replace(cfg, source_mix="images_only"), sources, net)
    return net


def with_backbone(net_cfg: NetConfig, backbone: Network | None) -> Network:
    """Fresh network whose conv branches are copied from ``backbone`` and frozen."""
    net = Network(replace(net_cfg, freeze_features=backbone is not None or net_cfg.freeze_features))
    if backbone is not None:
        src = backbone.parameters()
        for name, p in net.parameters().items():
            if name.startswith("conv"):
                # untied branches both start from the shared backbone
                key = "conv" + name[5:] if name[4] in "ab" else name
                p[...] = src[key]
    return net


def online_finetune_step(net: Network, history: Sequence[tuple], lr_online: float = ONLINE_LEARNING_RATE,
                         loss: str = "l1", k: float = 2.0) -> float:
    """One SGD step on self-labelled pairs ``(prev_frame, prev_box, frame, box)`` from tracking."""
    if not history:
        return 0.0
    size, scale = net.cfg.input_size, net.cfg.output_scale
    exs = [make_video_pair_example(pb, cb, pf, cf, size, k, scale) for pf, pb, cf, cb in history]
    target, search, labels = stack_batch(exs)
    net.train()
    try:
        value, grad = LOSSES[loss](net.forward(target, search), labels)
        net.backward(grad)
        SGD(net, lr_online).step()
    finally:
        net.eval()
    return value
