"""Federated tasks: synthetic data, local training, weighted aggregation,
and model-transfer accounting.

The default per-task model is multinomial logistic regression (strictly
convex with L2, so convergence is checkable against an independent solver);
a one-hidden-layer net is available for the nonconvex regime.  Model
parameters travel as flat float64 vectors, which is also the checkpoint
wire format.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn

CHECKPOINT_MAGIC = b"SGFL"
CHECKPOINT_VERSION = 1


@dataclass
class TaskSpec:
    """Static description of one federated task."""

    task_id: int
    input_dim: int
    n_classes: int
    model_dim: int
    model_size_bits: int
    test_x: np.ndarray
    test_y: np.ndarray
    separability_floor: float = 0.0
    model_kind: str = "logistic"
    mlp_hidden: int = 16
    l2_penalty: float = 1e-3

    def __post_init__(self) -> None:
        bits_per_param = self.model_size_bits / max(1, self.model_dim)
        if self.model_size_bits != self.model_dim * int(bits_per_param):
            raise ValueError("model_size_bits must be model_dim * bits/param")


@dataclass
class LocalDataset:
    """One user's shard for one task; zero size means no participation."""

    task_id: int
    features: np.ndarray
    labels: np.ndarray
    size: int

    def __post_init__(self) -> None:
        if self.size != len(self.labels):
            raise ValueError("size must match label count")


@dataclass
class TaskModel:
    """Flat parameter vector plus training metadata."""

    task_id: int
    params: np.ndarray
    local_iterations_done: int = 0
    staleness: int = 0

    def __post_init__(self) -> None:
        self.params = np.asarray(self.params, dtype=np.float64)
        if not np.all(np.isfinite(self.params)):
            raise ValueError("model parameters must be finite")


@dataclass
class TransferJob:
    """A model payload in flight on one directed link."""

    task_id: int
    payload: np.ndarray
    bits_remaining: float
    src: tuple[str, int]
    dst: tuple[str, int]
    direction: str  # edge_up | cloud_up | isl | cloud_down | edge_down
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.bits_remaining < 0.0:
            raise ValueError("bits_remaining must be non-negative")


# ---------------------------------------------------------------------------
# synthetic task generation
# ---------------------------------------------------------------------------

def make_model_dim(input_dim: int, n_classes: int, model_kind: str,
                   mlp_hidden: int) -> int:
    if model_kind == "logistic":
        return (input_dim + 1) * n_classes
    return (input_dim + 1) * mlp_hidden + (mlp_hidden + 1) * n_classes


def gen_synthetic_tasks(n_tasks: int, n_users: int, concentration: float,
                        rng: np.random.Generator, *, input_dim: int = 60,
                        n_classes: int = 5, samples_min: int = 80,
                        samples_max: int = 240, zero_prob: float = 0.15,
                        test_samples: int = 300,
                        bits_per_parameter: int = 64,
                        separation_min: float = 1.1,
                        separation_max: float = 2.4,
                        feature_scale_min: float = 0.2,
                        feature_scale_max: float = 8.0,
                        model_kind: str = "logistic",
                        mlp_hidden: int = 16,
                        l2_penalty: float = 1e-3,
                        ) -> tuple[list[TaskSpec], list[dict[int, LocalDataset]]]:
    """Build classification tasks and one shard per (user, task).

    Each task is a Gaussian class mixture whose mean separation varies
    between tasks (heterogeneous difficulty), observed through a random
    per-coordinate scaling.  The scaling leaves the achievable accuracy
    unchanged but ill-conditions the optimization, so test accuracy climbs
    over many aggregation rounds instead of saturating after one step.
    Per-user class mass follows a symmetric Dirichlet; large
    ``concentration`` recovers the i.i.d. limit.  A user may hold a
    zero-sized shard for a task and then cannot contribute to it; every task
    keeps at least two contributors.
    """
    if n_tasks < 1 or n_users < 1:
        raise ValueError("need at least one task and one user")
    if concentration <= 0.0:
        raise ValueError("concentration must be positive")

    specs: list[TaskSpec] = []
    shards: list[dict[int, LocalDataset]] = [dict() for _ in range(n_users)]
    for f in range(n_tasks):
        sep = rng.uniform(separation_min, separation_max)
        means = rng.standard_normal((n_classes, input_dim))
        means *= sep / np.linalg.norm(means, axis=1, keepdims=True)
        scales = np.exp(rng.uniform(math.log(feature_scale_min),
                                    math.log(feature_scale_max), input_dim))

        def draw(n: int, proportions: np.ndarray):
            counts = rng.multinomial(n, proportions)
            xs, ys = [], []
            for c, cnt in enumerate(counts):
                if cnt == 0:
                    continue
                xs.append((means[c] + rng.standard_normal((cnt, input_dim)))
                          * scales)
                ys.append(np.full(cnt, c, dtype=np.int64))
            x = np.concatenate(xs) if xs else np.empty((0, input_dim))
            y = np.concatenate(ys) if ys else np.empty(0, dtype=np.int64)
            order = rng.permutation(len(y))
            return x[order], y[order]

        test_x, test_y = draw(test_samples, np.full(n_classes, 1.0 / n_classes))
        # nearest-class-mean accuracy in the observed space: the floor a
        # one-step classifier reaches and a trained model should beat
        scaled_means = means * scales
        ncm = np.argmin(((test_x[:, None, :] - scaled_means[None, :, :]) ** 2
                         ).sum(-1), axis=1)
        floor = float(np.mean(ncm == test_y))

        model_dim = make_model_dim(input_dim, n_classes, model_kind, mlp_hidden)
        specs.append(TaskSpec(
            task_id=f, input_dim=input_dim, n_classes=n_classes,
            model_dim=model_dim,
            model_size_bits=model_dim * bits_per_parameter,
            test_x=test_x, test_y=test_y, separability_floor=floor,
            model_kind=model_kind, mlp_hidden=mlp_hidden,
            l2_penalty=l2_penalty))

        holders = rng.random(n_users) >= zero_prob
        while holders.sum() < min(2, n_users):
            holders[rng.integers(n_users)] = True
        for k in range(n_users):
            if not holders[k]:
                shards[k][f] = LocalDataset(task_id=f,
                                            features=np.empty((0, input_dim)),
                                            labels=np.empty(0, dtype=np.int64),
                                            size=0)
                continue
            n_k = int(rng.integers(samples_min, samples_max + 1))
            props = rng.dirichlet(np.full(n_classes, concentration))
            x, y = draw(n_k, props)
            shards[k][f] = LocalDataset(task_id=f, features=x, labels=y,
                                        size=len(y))
    return specs, shards


# ---------------------------------------------------------------------------
# local models
# ---------------------------------------------------------------------------

def zero_model(spec: TaskSpec) -> TaskModel:
    return TaskModel(task_id=spec.task_id, params=np.zeros(spec.model_dim))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logistic_unpack(params: np.ndarray, input_dim: int, n_classes: int):
    return params.reshape(input_dim + 1, n_classes)


def logistic_loss_grad(params: np.ndarray, x: np.ndarray, y: np.ndarray,
                       input_dim: int, n_classes: int,
                       l2: float) -> tuple[float, np.ndarray]:
    """Regularized cross-entropy and its exact gradient (flat layout)."""
    w = _logistic_unpack(params, input_dim, n_classes)
    xb = np.concatenate([x, np.ones((len(x), 1))], axis=1)
    probs = _softmax(xb @ w)
    n = len(y)
    ll = -np.log(np.clip(probs[np.arange(n), y], 1e-300, None)).mean()
    loss = ll + 0.5 * l2 * float(np.sum(w * w))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    grad = xb.T @ delta / n + l2 * w
    return float(loss), grad.reshape(-1)


def _mlp_shapes(spec: TaskSpec):
    return [(spec.input_dim, spec.mlp_hidden), (spec.mlp_hidden,),
            (spec.mlp_hidden, spec.n_classes), (spec.n_classes,)]


def _mlp_net_from_params(spec: TaskSpec, params: np.ndarray) -> nn.DenseNet:
    net = nn.DenseNet([spec.input_dim, spec.mlp_hidden, spec.n_classes],
                      hidden_activation="tanh",
                      rng=np.random.default_rng(0))
    flats, off = [], 0
    for shape in _mlp_shapes(spec):
        size = int(np.prod(shape))
        flats.append(params[off:off + size].reshape(shape))
        off += size
    net.set_params(flats)
    return net


def mlp_loss_grad(params: np.ndarray, x: np.ndarray, y: np.ndarray,
                  spec: TaskSpec) -> tuple[float, np.ndarray]:
    net = _mlp_net_from_params(spec, params)
    logits, tape = net.forward(x, want_tape=True)
    probs = _softmax(logits)
    n = len(y)
    loss = -np.log(np.clip(probs[np.arange(n), y], 1e-300, None)).mean() \
        + 0.5 * spec.l2_penalty * float(np.sum(params * params))
    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    grads, _ = net.backward(tape, dlogits / n)
    flat = np.concatenate([g.reshape(-1) for g in nn.grads_to_flat(grads)])
    return float(loss), flat + spec.l2_penalty * params


def task_loss_grad(model: TaskModel, data: LocalDataset,
                   spec: TaskSpec) -> tuple[float, np.ndarray]:
    if spec.model_kind == "logistic":
        return logistic_loss_grad(model.params, data.features, data.labels,
                                  spec.input_dim, spec.n_classes,
                                  spec.l2_penalty)
    return mlp_loss_grad(model.params, data.features, data.labels, spec)


def local_train_step(model: TaskModel, data: LocalDataset, spec: TaskSpec,
                     lr: float) -> TaskModel:
    """One full-batch gradient step on the user's shard."""
    if data.size <= 0:
        raise ValueError("cannot train on a zero-sized dataset")
    if data.task_id != model.task_id:
        raise ValueError("dataset/model task mismatch")
    _, grad = task_loss_grad(model, data, spec)
    params = model.params - lr * grad
    if not np.all(np.isfinite(params)):
        raise FloatingPointError("training step produced non-finite params")
    return TaskModel(task_id=model.task_id, params=params,
                     local_iterations_done=model.local_iterations_done + 1,
                     staleness=model.staleness)


def evaluate_task(model: TaskModel, spec: TaskSpec) -> tuple[float, float]:
    """Held-out accuracy and mean loss; deterministic."""
    if len(model.params) != spec.model_dim:
        raise ValueError("parameter vector does not match the task")
    if spec.model_kind == "logistic":
        w = _logistic_unpack(model.params, spec.input_dim, spec.n_classes)
        xb = np.concatenate([spec.test_x, np.ones((len(spec.test_x), 1))],
                            axis=1)
        logits = xb @ w
    else:
        logits = _mlp_net_from_params(spec, model.params).forward(spec.test_x)
    probs = _softmax(logits)
    n = len(spec.test_y)
    acc = float(np.mean(np.argmax(logits, axis=1) == spec.test_y))
    loss = float(-np.log(np.clip(probs[np.arange(n), spec.test_y],
                                 1e-300, None)).mean())
    return acc, loss


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _check_simplex(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < -1e-12):
        raise ValueError("aggregation weights must be non-negative")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValueError("aggregation weights must sum to 1")
    return weights


def _weighted_combine(models: list[TaskModel], weights: np.ndarray,
                      literal_prefactor: bool) -> TaskModel:
    if not models:
        raise ValueError("nothing to aggregate")
    weights = _check_simplex(weights)
    if len(weights) != len(models):
        raise ValueError("one weight per model required")
    task_id = models[0].task_id
    dim = len(models[0].params)
    for m in models:
        if m.task_id != task_id:
            raise ValueError("cannot aggregate models of different tasks")
        if len(m.params) != dim:
            raise ValueError("model dimension mismatch")
    out = np.zeros(dim)
    for w, m in zip(weights, models):
        out += w * m.params
    if literal_prefactor:
        out /= len(models)
    iters = max(m.local_iterations_done for m in models)
    return TaskModel(task_id=task_id, params=out,
                     local_iterations_done=iters, staleness=0)


def edge_aggregate(models: list[TaskModel], weights: np.ndarray,
                   literal_prefactor: bool = False) -> TaskModel:
    """Weighted mean of user models at one UAV.

    By default the member-count prefactor of the literal aggregation rule is
    dropped (it shrinks the model and fights the simplex constraint on the
    weights); ``literal_prefactor=True`` restores the written form.
    """
    return _weighted_combine(models, weights, literal_prefactor)


def cloud_aggregate(models: list[TaskModel], weights: np.ndarray,
                    literal_prefactor: bool = False) -> TaskModel:
    """Weighted mean of edge models at one satellite."""
    return _weighted_combine(models, weights, literal_prefactor)


def final_aggregate(direct_models: list[TaskModel],
                    relayed_models: list[TaskModel], weights: np.ndarray,
                    literal_prefactor: bool = False) -> TaskModel:
    """Combine direct UAV uploads with cloud models relayed over ISLs.

    ``weights`` covers the concatenation (direct first, then relayed) and
    must lie on the simplex.
    """
    return _weighted_combine(list(direct_models) + list(relayed_models),
                             weights, literal_prefactor)


def fedavg_weights(sizes: list[int] | np.ndarray) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    total = sizes.sum()
    if total <= 0:
        raise ValueError("need at least one non-empty dataset")
    return sizes / total


# ---------------------------------------------------------------------------
# transfers
# ---------------------------------------------------------------------------

def advance_transfers(jobs: list[TransferJob], rate_for, dt: float
                      ) -> tuple[list[TransferJob], list[TransferJob]]:
    """Progress every job by one slot at its link's current rate.

    ``rate_for(job) -> bits/s``.  A job completes exactly when its remaining
    bits reach zero; completion is reported at the slot boundary.  Returns
    ``(completed, still_active)`` preserving order.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    completed, active = [], []
    for job in jobs:
        rate = float(rate_for(job))
        if rate < 0.0:
            raise ValueError("link rate must be non-negative")
        job.bits_remaining = max(0.0, job.bits_remaining - rate * dt)
        (completed if job.bits_remaining == 0.0 else active).append(job)
    return completed, active


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model_checkpoint(model: TaskModel, path: str | Path) -> None:
    """Write a flat little-endian float64 checkpoint with a small header."""
    header = struct.pack("<4sHIQ", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                         model.task_id, len(model.params))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.params.astype("<f8").tobytes())


def load_model_checkpoint(path: str | Path) -> TaskModel:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sHIQ"))
        magic, version, task_id, dim = struct.unpack("<4sHIQ", header)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy()
    if len(params) != dim:
        raise ValueError("truncated checkpoint")
    return TaskModel(task_id=task_id, params=params)
