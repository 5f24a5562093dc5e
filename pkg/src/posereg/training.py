"""Adam and the two-stage (MSE, then geodesic) training procedure."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import losses
from .rotations import exp_map, log_map, mat_to_quat, quat_to_mat

STAGES = ("mse", "gve")
PUBLISHED_BASE_LR = 1e-3


class ConfigError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs_mse: int = 10
    epochs_gve: int = 10
    # desk-scale default; the published schedule starts at PUBLISHED_BASE_LR
    base_lr: float = 3e-3
    batch_size: int = 32
    seed: int = 0
    head: str = "axisangle"
    hidden: tuple = (256, 64)
    category_weights: dict | None = None
    reset_adam_between_stages: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.epochs_mse < 0 or self.epochs_gve < 0:
            raise ConfigError("epoch counts must be >= 0")
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.head not in ("axisangle", "quat"):
            raise ConfigError(f"head must be 'axisangle' or 'quat', got {self.head!r}")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError("hidden must list two positive layer widths")
        if self.category_weights is not None:
            bad = {k: w for k, w in self.category_weights.items() if not w > 0}
            if bad:
                raise ConfigError(f"category weights must be > 0: {bad}")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}:1: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def lr_at(config, epoch):
    """``base_lr / (1 + epoch)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.base_lr / (1.0 + epoch)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs):
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, **kwargs)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r} at Adam step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class PoseDataset:
    features: np.ndarray
    rotations: np.ndarray
    categories: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        self.categories = np.asarray(self.categories, dtype=object)
        if self.ids is None:
            self.ids = np.array([str(i) for i in range(len(self.features))], dtype=object)
        n = len(self.features)
        if not (len(self.rotations) == len(self.categories) == len(self.ids) == n):
            raise ValueError("dataset columns have inconsistent lengths")

    def __len__(self):
        return len(self.features)

    def category_names(self):
        return list(dict.fromkeys(self.categories.tolist()))

    def subset(self, index):
        return PoseDataset(self.features[index], self.rotations[index], self.categories[index], self.ids[index])

    def of_category(self, category):
        return self.subset(self.categories == category)


def encode_targets(rotations, head, stage):
    """Targets for each (head, stage): MSE regresses the representation
    vector (log map, or canonical c >= 0 quaternion); GVE compares rotations."""
    if head == "axisangle":
        return log_map(rotations) if stage == "mse" else rotations
    return mat_to_quat(rotations)


def stage_loss(head, stage):
    if stage == "mse":
        return losses.mse_loss
    return losses.gve_loss_aa if head == "axisangle" else losses.gve_loss_quat


def decode_outputs(outputs, head):
    """Network outputs to rotation matrices."""
    outputs = np.asarray(outputs, dtype=float)
    if head == "axisangle":
        return exp_map(outputs)
    return quat_to_mat(outputs / np.linalg.norm(outputs, axis=-1, keepdims=True))


def predict_rotations(bank, dataset):
    out = np.empty((len(dataset), 3, 3))
    for cat in dataset.category_names():
        mask = dataset.categories == cat
        net = bank[cat]
        out[mask] = decode_outputs(net.forward(dataset.features[mask])[0], net.head)
    return out


def weighted_batch_loss(preds, targets, categories, loss_fn, category_weights=None):
    """Batch mean of ``weight(category) * loss``; gradients carry the same factors.

    Returns a :class:`~posereg.losses.LossValue` whose ``value`` is the scalar
    batch loss and whose ``grad`` is ``(N, d)``, ready for backpropagation.
    """
    per = loss_fn(preds, targets)
    n = len(per.value)
    if category_weights is None:
        w = np.ones(n)
    else:
        missing = sorted(set(categories) - set(category_weights))
        if missing:
            raise KeyError(f"no loss weight for categories {missing}")
        w = np.array([category_weights[c] for c in categories], dtype=float)
    value = float(np.sum(w * per.value) / n)
    grad = (w / n)[:, None] * per.grad
    return losses.LossValue(value, grad, per.singular)


def inverse_frequency_weights(categories):
    """Weights proportional to ``1 / count`` normalized to mean 1 over samples."""
    names, counts = np.unique(np.asarray(categories, dtype=object), return_counts=True)
    raw = {n: 1.0 / c for n, c in zip(names.tolist(), counts)}
    total = sum(raw[c] for c in categories)
    scale = len(categories) / total
    return {n: w * scale for n, w in raw.items()}


@dataclass
class TraceRow:
    epoch: int
    stage: str
    category: str
    mean_loss: float
    lr: float = field(default=0.0)


def format_trace(trace):
    lines = ["# posereg loss-trace v1", "epoch,stage,category,mean_loss,lr"]
    lines += [f"{r.epoch},{r.stage},{r.category},{r.mean_loss!r},{r.lr!r}" for r in trace]
    return "\n".join(lines) + "\n"


def train_two_stage(bank, dataset, config, on_stage_end=None):
    """Train each category's network on its own samples: ``epochs_mse``
    epochs of MSE, then ``epochs_gve`` epochs of geodesic loss starting from
    the MSE weights.

    The learning-rate epoch counter runs across both stages. Adam moments are
    reset at the stage boundary unless ``config.reset_adam_between_stages`` is
    false. Returns ``(trained_bank, trace)``; the input bank is not modified.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    bank = bank.copy()
    trace = []
    for ci, cat in enumerate(dataset.category_names()):
        net = bank[cat]
        data = dataset.of_category(cat)
        n = len(data)
        rng = np.random.default_rng([int(config.seed), ci])
        n_batches = max(1, -(-n // config.batch_size))
        epoch = 0
        state = None
        for stage, n_epochs in zip(STAGES, (config.epochs_mse, config.epochs_gve)):
            if n_epochs == 0:
                continue
            if state is None or config.reset_adam_between_stages:
                state = AdamState.zeros_like(net.params)
            targets = encode_targets(data.rotations, net.head, stage)
            loss_fn = stage_loss(net.head, stage)
            cats = data.categories
            for _ in range(n_epochs):
                lr = lr_at(config, epoch)
                total = 0.0
                for b, idx in enumerate(np.array_split(rng.permutation(n), n_batches)):
                    out, cache = net.forward(data.features[idx], train=True)
                    lv = weighted_batch_loss(out, targets[idx], cats[idx], loss_fn, config.category_weights)
                    if not np.isfinite(lv.value) or not np.all(np.isfinite(lv.grad)):
                        raise NonFiniteLossError(
                            f"non-finite {stage} loss for category {cat!r} at epoch {epoch}, batch {b}"
                        )
                    grads = net.backward(cache, lv.grad)
                    adam_step(net.params, grads, state, lr)
                    net.bump()
                    total += lv.value * len(idx)
                trace.append(TraceRow(epoch, stage, cat, total / n, lr))
                epoch += 1
            if on_stage_end is not None:
                on_stage_end(cat, stage, net)
    return bank, trace
