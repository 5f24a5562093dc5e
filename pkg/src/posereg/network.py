"""Per-category pose networks: FC-BN-ReLU, FC-BN-ReLU, FC, constrained head.

The network consumes precomputed feature vectors; the convolutional feature
extractor is not part of this package. Weights are stored ``(out, in)``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from ._fileio import atomic_write
from .losses import l2_normalize, pi_tanh

HEADS = {"axisangle": 3, "quat": 4}
PARAM_NAMES = ("W1", "b1", "gamma1", "beta1", "W2", "b2", "gamma2", "beta2", "W3", "b3")
RUNNING_NAMES = ("mean1", "var1", "mean2", "var2")
PUBLISHED_HIDDEN = (4096, 500)

CHECKPOINT_MAGIC = b"POSEREG-CHECKPOINT"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    pass


@dataclass
class PoseNetwork:
    """Pose network for one category.

    ``layer_sizes`` is ``(in_dim, hidden1, hidden2)``; the output dimension is
    fixed by ``head``. Batch norm uses ``running = momentum * running +
    (1 - momentum) * batch`` with biased batch variance.
    """

    params: dict
    running: dict
    head: str
    layer_sizes: tuple
    seed: int | None = None
    momentum: float = 0.9
    epsilon: float = 1e-5
    version: int = field(default=0, compare=False)

    @property
    def out_dim(self):
        return HEADS[self.head]

    def copy(self):
        return copy.deepcopy(self)

    def bump(self):
        """Mark parameters as modified; invalidates outstanding caches."""
        self.version += 1

    def _activate(self, z):
        if self.head == "axisangle":
            return pi_tanh(z)
        return l2_normalize(z)

    def forward(self, x, train=False):
        """Run the network on a batch ``(N, in_dim)`` (or a single vector).

        Returns ``(output, cache)``. Train mode normalizes with batch
        statistics and updates the running statistics; infer mode is a pure
        function of parameters and input.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.layer_sizes[0]:
            raise ValueError(f"feature dimension {x.shape[-1]} != network input {self.layer_sizes[0]}")
        p = self.params
        cache = {"train": train, "version": self.version, "x": x}
        h = x
        for k in (1, 2):
            z = h @ p[f"W{k}"].T + p[f"b{k}"]
            if train:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                m = self.momentum
                self.running[f"mean{k}"] = m * self.running[f"mean{k}"] + (1 - m) * mean
                self.running[f"var{k}"] = m * self.running[f"var{k}"] + (1 - m) * var
            else:
                mean = self.running[f"mean{k}"]
                var = self.running[f"var{k}"]
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            xhat = (z - mean) * inv_std
            a = p[f"gamma{k}"] * xhat + p[f"beta{k}"]
            h = np.maximum(a, 0.0)
            cache[f"xhat{k}"] = xhat
            cache[f"inv_std{k}"] = inv_std
            cache[f"a{k}"] = a
            cache[f"h{k}"] = h
        z3 = h @ p["W3"].T + p["b3"]
        out, jac = self._activate(z3)
        cache["z3"] = z3
        cache["jac"] = jac
        if single:
            return out[0], cache
        return out, cache

    def backward(self, cache, grad_out):
        """Parameter gradients given ``dL/d output`` for the cached batch."""
        if cache is None:
            raise StaleCacheError("backward called without a forward cache")
        if not cache.get("train"):
            raise StaleCacheError("backward requires a train-mode forward cache")
        if cache["version"] != self.version:
            raise StaleCacheError("forward cache predates the latest parameter update")
        p = self.params
        g = np.asarray(grad_out, dtype=float).reshape(cache["z3"].shape)
        grads = {}
        dz = np.einsum("ni,nij->nj", g, cache["jac"])
        grads["W3"] = dz.T @ cache["h2"]
        grads["b3"] = dz.sum(axis=0)
        dh = dz @ p["W3"]
        for k in (2, 1):
            xhat = cache[f"xhat{k}"]
            da = dh * (cache[f"a{k}"] > 0)
            grads[f"gamma{k}"] = np.sum(da * xhat, axis=0)
            grads[f"beta{k}"] = da.sum(axis=0)
            dxhat = da * p[f"gamma{k}"]
            n = dxhat.shape[0]
            dz = (cache[f"inv_std{k}"] / n) * (
                n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)
            )
            below = cache["h1"] if k == 2 else cache["x"]
            grads[f"W{k}"] = dz.T @ below
            grads[f"b{k}"] = dz.sum(axis=0)
            if k == 2:
                dh = dz @ p["W2"]
        return grads


def init_params(seed, layer_sizes, head="axisangle", momentum=0.9, epsilon=1e-5, out_scale=1.0):
    """Fresh network: N(0, 1/fan_in) weights (final layer additionally scaled
    by ``out_scale``), zero biases, unit BN scale, zero BN shift."""
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}; expected one of {sorted(HEADS)}")
    d_in, h1, h2 = (int(s) for s in layer_sizes)
    out = HEADS[head]
    rng = np.random.default_rng(seed)
    params = {
        "W1": rng.standard_normal((h1, d_in)) / np.sqrt(d_in),
        "b1": np.zeros(h1),
        "gamma1": np.ones(h1),
        "beta1": np.zeros(h1),
        "W2": rng.standard_normal((h2, h1)) / np.sqrt(h1),
        "b2": np.zeros(h2),
        "gamma2": np.ones(h2),
        "beta2": np.zeros(h2),
        "W3": out_scale * rng.standard_normal((out, h2)) / np.sqrt(h2),
        "b3": np.zeros(out),
    }
    running = {"mean1": np.zeros(h1), "var1": np.ones(h1), "mean2": np.zeros(h2), "var2": np.ones(h2)}
    return PoseNetwork(params, running, head, (d_in, h1, h2), seed, momentum, epsilon)


def category_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint32)[0])


class CategoryBank:
    """One independent :class:`PoseNetwork` per category id."""

    def __init__(self, networks=None, seed=None):
        self.networks = dict(networks or {})
        self.seed = seed

    @classmethod
    def create(cls, categories, seed, layer_sizes, head="axisangle", **kwargs):
        cats = list(categories)
        if len(set(cats)) != len(cats):
            raise ValueError("category ids must be unique")
        nets = {c: init_params(category_seed(seed, i), layer_sizes, head, **kwargs) for i, c in enumerate(cats)}
        return cls(nets, seed)

    def __getitem__(self, category):
        try:
            return self.networks[category]
        except KeyError:
            raise KeyError(f"unknown category {category!r}") from None

    def __contains__(self, category):
        return category in self.networks

    def __len__(self):
        return len(self.networks)

    @property
    def categories(self):
        return list(self.networks)

    def forward(self, category, features, train=False):
        return self[category].forward(features, train=train)

    def predict(self, category, features):
        return self[category].forward(features, train=False)[0]

    def copy(self):
        return CategoryBank({c: n.copy() for c, n in self.networks.items()}, self.seed)


# -- checkpoint file ---------------------------------------------------------
#
# Layout (version 1):
#   line 1: b"POSEREG-CHECKPOINT 1"
#   line 2: byte length of the JSON header, in decimal ASCII
#   JSON header (UTF-8, sorted keys) followed by b"\n"
#   tensor payload: little-endian float64, C order, concatenated at the
#   offsets recorded in the header.


def checkpoint_bytes(bank):
    blobs = []
    offset = 0
    entries = []
    for cat, net in bank.networks.items():
        tensors = []
        for group, names in (("params", PARAM_NAMES), ("running", RUNNING_NAMES)):
            for name in names:
                arr = np.ascontiguousarray(getattr(net, group)[name], dtype="<f8")
                blob = arr.tobytes()
                tensors.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
                blobs.append(blob)
                offset += len(blob)
        entries.append(
            {
                "category": cat,
                "head": net.head,
                "layer_sizes": list(net.layer_sizes),
                "seed": net.seed,
                "momentum": net.momentum,
                "epsilon": net.epsilon,
                "tensors": tensors,
            }
        )
    header = {"format": "posereg-checkpoint", "version": CHECKPOINT_VERSION, "seed": bank.seed, "networks": entries}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return b"".join(
        [CHECKPOINT_MAGIC, b" %d\n" % CHECKPOINT_VERSION, b"%d\n" % len(hbytes), hbytes, b"\n", *blobs]
    )


def save_checkpoint(bank, path):
    atomic_write(path, checkpoint_bytes(bank))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data)


def parse_checkpoint(data):
    first, _, rest = data.partition(b"\n")
    magic, _, ver = first.partition(b" ")
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a posereg checkpoint")
    if int(ver) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {int(ver)}")
    length, _, rest = rest.partition(b"\n")
    n = int(length)
    header = json.loads(rest[:n])
    payload = memoryview(rest[n + 1 :])
    nets = {}
    for entry in header["networks"]:
        groups = {"params": {}, "running": {}}
        for t in entry["tensors"]:
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=t["offset"]).reshape(t["shape"])
            groups[t["group"]][t["name"]] = arr.astype(np.float64)
        nets[entry["category"]] = PoseNetwork(
            groups["params"],
            groups["running"],
            entry["head"],
            tuple(entry["layer_sizes"]),
            entry["seed"],
            entry["momentum"],
            entry["epsilon"],
        )
    return CategoryBank(nets, header["seed"])
