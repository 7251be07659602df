"""Pose CNN and gesture LSTM: construction, training, evaluation, persistence."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .nncore import (LSTM, Adam, Conv2D, Dense, Flatten, MaxPool2x2, Network, Relu, Sigmoid, SoftmaxHead,
                     load_weights, save_weights)
from .poseseq import N_FEATURES, N_KEYPOINTS, AugmentParams, PoseSequence, augment_sequence, normalize_pose
from .project import DepthImage

log = logging.getLogger(__name__)

N_CLASSES = 19
MIN_SEQ_LEN, MAX_SEQ_LEN = 10, 30
STATIC_CLASSES = tuple(range(1, 13))
DYNAMIC_CLASSES = tuple(range(13, 19))


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseNetConfig:
    rows: int = 128
    cols: int = 64
    channels: int = 64
    conv_blocks: int = 4
    hidden: tuple = (512, 256)
    outputs: int = 3 * N_KEYPOINTS


@dataclass(frozen=True)
class GestureNetConfig:
    features: int = N_FEATURES
    hidden: int = 50
    classes: int = N_CLASSES


def build_posenet(seed: int = 0, cfg: PoseNetConfig = PoseNetConfig(), dtype=np.float32) -> Network:
    """Four conv blocks then a dense head with a sigmoid output.

    Each block is conv -> 2x2 max-pool -> ReLU; pooling and ReLU commute so
    this equals conv -> ReLU -> pool with a quarter of the ReLU work.
    """
    div = 2 ** cfg.conv_blocks
    if cfg.rows % div or cfg.cols % div:
        raise ValueError(f"input {cfg.rows}x{cfg.cols} must be divisible by {div}")
    layers = []
    ch = 1
    for _ in range(cfg.conv_blocks):
        layers += [Conv2D(ch, cfg.channels), MaxPool2x2(), Relu()]
        ch = cfg.channels
    n = ch * (cfg.rows // div) * (cfg.cols // div)
    layers.append(Flatten())
    for width in cfg.hidden:
        layers += [Dense(n, width), Relu()]
        n = width
    layers += [Dense(n, cfg.outputs, init="xavier"), Sigmoid()]
    net = Network(layers, seed, dtype, "posenet")
    net.config = cfg
    return net


def build_gesturenet(seed: int = 0, cfg: GestureNetConfig = GestureNetConfig(), dtype=np.float32) -> Network:
    net = Network([LSTM(cfg.features, cfg.hidden), Dense(cfg.hidden, cfg.classes, init="xavier"), SoftmaxHead()],
                  seed, dtype, "gesturenet")
    net.config = cfg
    return net


def posenet_param_count(cfg: PoseNetConfig = PoseNetConfig()) -> int:
    """Closed-form parameter count, independent of the layer objects."""
    c = cfg.channels
    conv = (1 * 9 * c + c) + (cfg.conv_blocks - 1) * (c * 9 * c + c)
    n = c * (cfg.rows >> cfg.conv_blocks) * (cfg.cols >> cfg.conv_blocks)
    dense = 0
    for width in (*cfg.hidden, cfg.outputs):
        dense += n * width + width
        n = width
    return conv + dense


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _as_image_batch(net: Network, images) -> np.ndarray:
    cfg: PoseNetConfig = net.config
    if isinstance(images, DepthImage):
        images = images.pixels
    x = np.asarray(images)
    if x.ndim == 2:
        x = x[None]
    if x.shape[-1] == 1 and x.ndim == 4:
        x = x[..., 0]
    if x.ndim != 3 or x.shape[1:] != (cfg.rows, cfg.cols):
        raise ValueError(f"expected images of {cfg.rows}x{cfg.cols}, got {x.shape}")
    return x[..., None]


def posenet_predict(net: Network, images, batch_size: int = 32) -> np.ndarray:
    """Normalized keypoints: (8, 3) for one image, (N, 8, 3) for a batch."""
    single = isinstance(images, DepthImage) or np.ndim(images) == 2
    out = net.predict(_as_image_batch(net, images), batch_size).reshape(-1, N_KEYPOINTS, 3)
    return out[0] if single else out


def gesturenet_predict(net: Network, sequence) -> np.ndarray:
    """Class probabilities for one (T, 24) or a batch (N, T, 24) of feature
    sequences, 10 <= T <= 30."""
    x = np.asarray(sequence)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != N_FEATURES:
        raise ValueError(f"expected (N, T, {N_FEATURES}) features, got {x.shape}")
    if not MIN_SEQ_LEN <= x.shape[1] <= MAX_SEQ_LEN:
        raise ValueError(f"sequence length {x.shape[1]} outside [{MIN_SEQ_LEN}, {MAX_SEQ_LEN}]")
    p = net.predict(x, batch_size=256)
    return p[0] if single else p


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate < 0:
            raise ValueError("epochs and batch_size must be positive, learning_rate >= 0")


@dataclass
class TrainResult:
    net: Network
    history: list = field(default_factory=list)  # mean training loss per epoch
    initial_loss: float = float("nan")


def _fit(net: Network, x, y, cfg: TrainConfig, loss: str, progress: Callable | None = None) -> TrainResult:
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.learning_rate)
    params = [p for _, p, _ in net.parameters()]
    grads = [g for _, _, g in net.parameters()]
    n = len(x)
    initial = _mean_loss(net, x, y, loss)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            net.zero_grad()
            total += net.loss_and_grad(x[idx], y[idx], loss) * len(idx)
            opt.step(params, grads)
        history.append(total / n)
        log.info("%s epoch %d/%d loss %.6g", net.name, epoch + 1, cfg.epochs, history[-1])
        if progress is not None:
            progress(epoch, history[-1])
    net.zero_grad()
    return TrainResult(net, history, initial)


def _mean_loss(net: Network, x, y, loss: str, batch: int = 64) -> float:
    total = 0.0
    for s in range(0, len(x), batch):
        total += net.loss(x[s:s + batch], y[s:s + batch], loss) * len(x[s:s + batch])
    return total / len(x)


def train_posenet(images, labels, cfg: TrainConfig = TrainConfig(), net: Network | None = None,
                  progress: Callable | None = None) -> TrainResult:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty pose dataset")
    if labels.ndim != 2 or labels.shape[1] != 3 * N_KEYPOINTS:
        raise ValueError(f"labels must be (N, {3 * N_KEYPOINTS})")
    if labels.min() < 0 or labels.max() > 1 or not np.isfinite(labels).all():
        raise ValueError("pose labels must lie in [0, 1]")
    net = net or build_posenet(cfg.seed)
    x = _as_image_batch(net, images).astype(net.dtype)
    if len(x) != len(labels):
        raise ValueError("images and labels differ in count")
    return _fit(net, x, labels.astype(net.dtype), cfg, "mse", progress)


def train_gesturenet(sequences, labels, cfg: TrainConfig = TrainConfig(epochs=30, batch_size=32),
                     net: Network | None = None, progress: Callable | None = None) -> TrainResult:
    x = np.asarray(sequences)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 3 or x.shape[2] != N_FEATURES:
        raise ValueError(f"sequences must be (N, T, {N_FEATURES})")
    if not MIN_SEQ_LEN <= x.shape[1] <= MAX_SEQ_LEN:
        raise ValueError(f"sequence length {x.shape[1]} outside [{MIN_SEQ_LEN}, {MAX_SEQ_LEN}]")
    if len(x) != len(y):
        raise ValueError("sequences and labels differ in count")
    missing = sorted(set(range(N_CLASSES)) - set(y.tolist()))
    if missing:
        raise ValueError(f"classes missing from training data: {missing}")
    net = net or build_gesturenet(cfg.seed)
    return _fit(net, x.astype(net.dtype), y, cfg, "ce", progress)


# ---------------------------------------------------------------------------
# gesture sequence datasets
# ---------------------------------------------------------------------------


def sequence_dataset(recordings: list[PoseSequence], rate: float, per_recording: int, seed: int,
                     params: AugmentParams = AugmentParams(), seconds: float = 1.0,
                     frame_noise: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``per_recording`` augmented one-second windows at ``rate`` from
    every recording and normalize them. ``frame_noise`` adds independent
    per-frame jitter (meters) on top of the constant per-sequence offset."""
    xs, ys = [], []
    for r_i, rec in enumerate(recordings):
        if rec.label is None:
            raise ValueError("recording without label")
        for k in range(per_recording):
            rng = np.random.default_rng([seed, r_i, k])
            seq = augment_sequence(rec, params, rng, out_rate=rate, seconds=seconds)
            if seq.label != rec.label:
                raise AssertionError("augmentation changed the label")
            pts = seq.points
            if frame_noise > 0:
                pts = pts + rng.normal(0.0, frame_noise, size=pts.shape)
            xs.append(normalize_pose(pts))
            ys.append(rec.label)
    return np.stack(xs).astype(np.float32), np.array(ys, dtype=np.int64)


def window_dataset(recordings: list[PoseSequence], rate: float, stride: float = 0.5,
                   seconds: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Un-augmented sliding one-second windows (for evaluation). Recordings
    are resampled to ``rate`` first. Returns features, labels and the source
    recording index per window."""
    from .poseseq import resample

    xs, ys, src = [], [], []
    n = int(round(seconds * rate))
    for r_i, rec in enumerate(recordings):
        seq = rec if abs(rec.nominal_rate - rate) < 1e-9 else resample(rec, rate)
        step = max(1, int(round(stride * rate)))
        for s in range(0, len(seq) - n + 1, step):
            xs.append(normalize_pose(seq.points[s:s + n]))
            ys.append(rec.label)
            src.append(r_i)
    return np.stack(xs).astype(np.float32), np.array(ys, dtype=np.int64), np.array(src)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class PoseReport:
    mean: np.ndarray   # (8,) meters
    std: np.ndarray    # (8,)
    overall_mean: float
    overall_std: float
    count: int

    def to_json(self) -> dict:
        from .poseseq import KEYPOINTS

        return {
            "count": self.count,
            "overall_mean_m": self.overall_mean,
            "overall_std_m": self.overall_std,
            "per_keypoint": {k: {"mean_m": float(m), "std_m": float(s)} for k, m, s in zip(KEYPOINTS, self.mean, self.std)},
        }

    def write_csv(self, path) -> None:
        from .poseseq import KEYPOINTS

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["keypoint", "mean_m", "std_m"])
            for k, m, s in zip(KEYPOINTS, self.mean, self.std):
                w.writerow([k, f"{m:.6f}", f"{s:.6f}"])
            w.writerow(["all", f"{self.overall_mean:.6f}", f"{self.overall_std:.6f}"])


def keypoint_errors(pred, truth) -> PoseReport:
    """Euclidean error per keypoint between (N, 8, 3) arrays in meters."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, N_KEYPOINTS, 3)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, N_KEYPOINTS, 3)
    if len(truth) == 0:
        raise ValueError("empty pose test set")
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth shapes differ")
    e = np.linalg.norm(pred - truth, axis=-1)
    return PoseReport(e.mean(axis=0), e.std(axis=0), float(e.mean()), float(e.std()), len(e))


def eval_pose(net: Network, dataset) -> PoseReport:
    """``dataset`` is a :class:`gesturepipe.simgen.PoseDataset`."""
    if len(dataset) == 0:
        raise ValueError("empty pose test set")
    pred = posenet_predict(net, dataset.images)
    return keypoint_errors(dataset.decode_view(pred.reshape(len(pred), -1)), dataset.keypoints)


@dataclass
class GestureReport:
    confusion: np.ndarray  # (19, 19), rows = truth, cols = prediction
    precision: np.ndarray  # (19,)
    recall: np.ndarray     # (19,)

    @property
    def mean_precision(self) -> float:
        """Mean over the 18 gesture classes (null excluded)."""
        return float(self.precision[1:].mean())

    @property
    def mean_recall(self) -> float:
        return float(self.recall[1:].mean())

    @property
    def static_recall(self) -> float:
        return float(self.recall[list(STATIC_CLASSES)].mean())

    @property
    def dynamic_recall(self) -> float:
        return float(self.recall[list(DYNAMIC_CLASSES)].mean())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / max(self.confusion.sum(), 1))

    def to_json(self) -> dict:
        return {
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "static_recall": self.static_recall,
            "dynamic_recall": self.dynamic_recall,
            "accuracy": self.accuracy,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "confusion": self.confusion.tolist(),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "precision", "recall", "support"])
            for c in range(len(self.precision)):
                w.writerow([c, f"{self.precision[c]:.6f}", f"{self.recall[c]:.6f}", int(self.confusion[c].sum())])


def confusion_report(truth, pred, n_classes: int = N_CLASSES) -> GestureReport:
    """Precision/recall per class; a class never predicted has precision 0
    and a class with no support has recall 0."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if len(truth) == 0:
        raise ValueError("empty gesture test set")
    if truth.shape != pred.shape:
        raise ValueError("truth and prediction lengths differ")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    tp = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros(n_classes), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros(n_classes), where=row > 0)
    return GestureReport(cm, precision, recall)


def eval_gesture(net: Network, sequences, labels) -> GestureReport:
    """Raw (unfiltered) argmax predictions on fixed-length windows."""
    x = np.asarray(sequences)
    if len(x) == 0:
        raise ValueError("empty gesture test set")
    pred = gesturenet_predict(net, x).argmax(axis=1)
    return confusion_report(labels, pred)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_model(path, net: Network) -> None:
    save_weights(path, net)


def load_model(path, kind: str, dtype=np.float32) -> Network:
    if kind == "pose":
        net = build_posenet(0, dtype=dtype)
    elif kind == "gesture":
        net = build_gesturenet(0, dtype=dtype)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    load_weights(path, net)
    return net


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def training_manifest(kind: str, cfg: TrainConfig, result: TrainResult, dataset_sha256: str, **extra) -> dict:
    return {
        "kind": kind,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "dataset_sha256": dataset_sha256,
        "initial_loss": result.initial_loss,
        "loss_history": list(result.history),
        "num_params": result.net.num_params(),
        **extra,
    }


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_loss_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(history, 1):
            w.writerow([i, repr(float(v))])
