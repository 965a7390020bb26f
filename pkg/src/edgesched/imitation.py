"""Behavior-cloning fast path.

The expensive part of the two-stage scheduler is the outer search over node
roles. This module clones it: a small graph-convolution encoder plus one
two-layer perceptron head per node is trained on (state, role-assignment)
pairs collected from the two-stage scheduler, and at decision time the
predicted roles go straight to the flow-level harmony search.

The network and its reverse-mode gradients are implemented directly on
numpy arrays; the gradients are verified against central finite differences
in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import core, hierarchical
from .core import SchedulingDecision, SystemStateGraph
from .hierarchical import HsParams, PsoParams, harmony_search, run_hh
from .lyapunov import DppConfig
from .rng import child_seed, rng_for
from .scenario import ScenarioSpec, generate_slot_state
from .structure import ISOLATED, CategoryAssignment, categories_of, repair_labels

CHECKPOINT_VERSION = 1


class ModelMismatchError(ValueError):
    """Model was trained for a different node count than the input state."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass(frozen=True)
class FeatureScaler:
    """Normalization constants frozen when the dataset is built."""

    arrivals_max: float
    compute_max: float
    queue_max: float
    budget_ref: float
    bandwidth_min: float
    bandwidth_max: float
    cost_min: float
    cost_max: float

    def _minmax(self, x, lo, hi):
        span = hi - lo
        return (np.asarray(x, dtype=np.float64) - lo) / (span if span > 0 else 1.0)

    def _minmax_inv(self, z, lo, hi):
        span = hi - lo
        return np.asarray(z, dtype=np.float64) * (span if span > 0 else 1.0) + lo

    def normalize_arrivals(self, x):
        return np.asarray(x, dtype=np.float64) / self.arrivals_max

    def denormalize_arrivals(self, z):
        return np.asarray(z, dtype=np.float64) * self.arrivals_max

    def normalize_compute(self, x):
        return np.asarray(x, dtype=np.float64) / self.compute_max

    def denormalize_compute(self, z):
        return np.asarray(z, dtype=np.float64) * self.compute_max

    def normalize_queue(self, x):
        return np.asarray(x, dtype=np.float64) / self.queue_max

    def denormalize_queue(self, z):
        return np.asarray(z, dtype=np.float64) * self.queue_max

    def normalize_bandwidth(self, x):
        return self._minmax(x, self.bandwidth_min, self.bandwidth_max)

    def denormalize_bandwidth(self, z):
        return self._minmax_inv(z, self.bandwidth_min, self.bandwidth_max)

    def normalize_cost(self, x):
        return self._minmax(x, self.cost_min, self.cost_max)

    def denormalize_cost(self, z):
        return self._minmax_inv(z, self.cost_min, self.cost_max)

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in (
            "arrivals_max", "compute_max", "queue_max", "budget_ref",
            "bandwidth_min", "bandwidth_max", "cost_min", "cost_max")}


def scaler_from_samples(arrivals, compute, queue, budget, bandwidth, sched_cost) -> FeatureScaler:
    off = ~np.eye(np.asarray(bandwidth).shape[-1], dtype=bool)
    bw = np.asarray(bandwidth)[..., off]
    cost = np.asarray(sched_cost)[..., off]
    return FeatureScaler(
        arrivals_max=float(max(np.max(arrivals), 1.0)),
        compute_max=float(max(np.max(compute), 1.0)),
        queue_max=float(max(np.max(queue), 1.0)),
        budget_ref=float(budget),
        bandwidth_min=float(bw.min()), bandwidth_max=float(bw.max()),
        cost_min=float(cost.min()), cost_max=float(cost.max()),
    )


def featurize(state: SystemStateGraph, scaler: FeatureScaler):
    """Node features (arrivals, compute, backlog, budget; all normalized)
    plus the two normalized edge channels (bandwidth, scheduling cost)."""
    m = state.node_count
    x = np.stack([
        scaler.normalize_arrivals(state.arrivals),
        scaler.normalize_compute(state.compute),
        np.full(m, scaler.normalize_queue(state.queue_backlog)),
        np.full(m, state.budget / scaler.budget_ref),
    ], axis=1)
    off = ~np.eye(m, dtype=bool)
    bw = np.zeros((m, m))
    bw[off] = np.clip(scaler.normalize_bandwidth(state.bandwidth[off]), 0.0, None)
    cost = np.zeros((m, m))
    cost[off] = np.clip(scaler.normalize_cost(state.sched_cost[off]), 0.0, None)
    return x, np.stack([bw, cost])


def build_adjacency(bandwidth_norm: np.ndarray) -> np.ndarray:
    """Symmetric degree-normalized aggregation weights over the complete
    graph, weighted by normalized bandwidth with unit self-loops (the
    intra-node link is the strongest one)."""
    a = 0.5 * (bandwidth_norm + bandwidth_norm.T)
    a = a + np.eye(a.shape[-1])
    deg = a.sum(axis=-1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def _batch_adjacency(bw: np.ndarray) -> np.ndarray:
    a = 0.5 * (bw + np.swapaxes(bw, -1, -2))
    a = a + np.eye(a.shape[-1])[None]
    deg = a.sum(axis=-1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a * inv_sqrt[..., :, None] * inv_sqrt[..., None, :]


IN_FEATURES = 4
N_CLASSES = 3


@dataclass(frozen=True)
class GraphNetModel:
    """Parameter bundle: L graph-conv layers shared across nodes, then one
    two-layer perceptron head per node ending in a softmax."""

    params: dict
    scaler: FeatureScaler
    node_count: int
    hidden: int
    layers: int


def init_model(node_count: int, hidden: int = 32, layers: int = 2,
               scaler: FeatureScaler | None = None, seed: int = 0) -> GraphNetModel:
    if scaler is None:
        scaler = FeatureScaler(1, 1, 1, 1, 0, 1, 0, 1)
    rng = rng_for(seed, "init")

    def glorot(*shape):
        fan_in, fan_out = shape[-2], shape[-1]
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, shape)

    params = {}
    in_dim = IN_FEATURES
    for layer in range(layers):
        params[f"conv_w{layer}"] = glorot(in_dim, hidden)
        params[f"conv_b{layer}"] = np.zeros(hidden)
        in_dim = hidden
    params["head_w1"] = glorot(node_count, hidden, hidden)
    params["head_b1"] = np.zeros((node_count, hidden))
    params["head_w2"] = glorot(node_count, hidden, N_CLASSES)
    params["head_b2"] = np.zeros((node_count, N_CLASSES))
    return GraphNetModel(params, scaler, node_count, hidden, layers)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_batch(params: dict, layers: int, x: np.ndarray, adj: np.ndarray):
    """Batched forward pass; returns class probabilities and the caches
    needed for backprop. x: (B, M, F), adj: (B, M, M)."""
    h = x
    hidden_states = [h]
    propagated = []
    for layer in range(layers):
        ah = adj @ h
        propagated.append(ah)
        h = np.tanh(ah @ params[f"conv_w{layer}"] + params[f"conv_b{layer}"])
        hidden_states.append(h)
    u = np.tanh(np.einsum("bmh,mhj->bmj", h, params["head_w1"]) + params["head_b1"][None])
    logits = np.einsum("bmj,mjc->bmc", u, params["head_w2"]) + params["head_b2"][None]
    probs = _softmax(logits)
    return probs, (hidden_states, propagated, u)


def forward(model: GraphNetModel, features: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Per-node class probabilities for one state. `edges` is either the
    (2, M, M) channel stack from featurize or a ready (M, M) bandwidth
    channel."""
    bw = edges[0] if edges.ndim == 3 else edges
    adj = build_adjacency(bw)
    probs, _ = _forward_batch(model.params, model.layers, features[None], adj[None])
    return probs[0]


def loss_and_grads(params: dict, layers: int, x: np.ndarray, adj: np.ndarray,
                   labels: np.ndarray):
    """Mean per-sample cross-entropy (summed over nodes) and its gradients
    with respect to every parameter tensor."""
    batch, m, _ = x.shape
    probs, (hidden_states, propagated, u) = _forward_batch(params, layers, x, adj)
    idx_b = np.arange(batch)[:, None]
    idx_m = np.arange(m)[None, :]
    picked = probs[idx_b, idx_m, labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).sum() / batch)

    dlogits = probs.copy()
    np.add.at(dlogits, (idx_b, idx_m, labels), -1.0)
    dlogits /= batch

    grads = {}
    grads["head_w2"] = np.einsum("bmj,bmc->mjc", u, dlogits)
    grads["head_b2"] = dlogits.sum(axis=0)
    du = np.einsum("bmc,mjc->bmj", dlogits, params["head_w2"])
    dzu = du * (1.0 - u ** 2)
    top = hidden_states[-1]
    grads["head_w1"] = np.einsum("bmh,bmj->mhj", top, dzu)
    grads["head_b1"] = dzu.sum(axis=0)
    dh = np.einsum("bmj,mhj->bmh", dzu, params["head_w1"])
    for layer in reversed(range(layers)):
        h_out = hidden_states[layer + 1]
        dz = dh * (1.0 - h_out ** 2)
        grads[f"conv_w{layer}"] = np.einsum("bmi,bmh->ih", propagated[layer], dz)
        grads[f"conv_b{layer}"] = dz.sum(axis=(0, 1))
        dh = np.swapaxes(adj, -1, -2) @ (dz @ params[f"conv_w{layer}"].T)
    return loss, grads


def batch_loss(params: dict, layers: int, x: np.ndarray, adj: np.ndarray,
               labels: np.ndarray) -> float:
    batch, m, _ = x.shape
    probs, _ = _forward_batch(params, layers, x, adj)
    picked = probs[np.arange(batch)[:, None], np.arange(m)[None, :], labels]
    return float(-np.log(np.maximum(picked, 1e-300)).sum() / batch)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        cfg = self.cfg
        out = {}
        correction1 = 1.0 - cfg.beta1 ** self.t
        correction2 = 1.0 - cfg.beta2 ** self.t
        for key, value in params.items():
            g = grads[key]
            self.m[key] = cfg.beta1 * self.m[key] + (1 - cfg.beta1) * g
            self.v[key] = cfg.beta2 * self.v[key] + (1 - cfg.beta2) * g * g
            m_hat = self.m[key] / correction1
            v_hat = self.v[key] / correction2
            out[key] = value - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return out


@dataclass(frozen=True)
class ExpertDataset:
    """Collected (state, role-assignment) pairs with a frozen train/held-out
    partition and the normalization constants of the run."""

    arrivals: np.ndarray      # (S, M)
    compute: np.ndarray       # (S, M)
    queue: np.ndarray         # (S,)
    bandwidth: np.ndarray     # (S, M, M)
    sched_cost: np.ndarray    # (S, M, M)
    labels: np.ndarray        # (S, M) int8
    budget: float
    request_size: float
    cycles: float
    energy_coeff: np.ndarray  # (M,)
    train_idx: np.ndarray
    test_idx: np.ndarray
    scaler: FeatureScaler

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def node_count(self) -> int:
        return self.labels.shape[1]

    def features(self):
        scaler = self.scaler
        m = self.node_count
        x = np.stack([
            scaler.normalize_arrivals(self.arrivals),
            scaler.normalize_compute(self.compute),
            np.repeat(scaler.normalize_queue(self.queue)[:, None], m, axis=1),
            np.full((self.size, m), self.budget / scaler.budget_ref),
        ], axis=2)
        off = ~np.eye(m, dtype=bool)
        bw = np.zeros_like(self.bandwidth)
        bw[:, off] = np.clip(scaler.normalize_bandwidth(self.bandwidth[:, off]), 0.0, None)
        adj = _batch_adjacency(bw)
        return x, adj


def build_expert_dataset(spec: ScenarioSpec, cfg: DppConfig,
                         hs_params: HsParams = HsParams(), pso_params: PsoParams = PsoParams(),
                         mu: float | None = None, seed: int = 0, slots: int = 2000,
                         train_fraction: float = 0.8) -> ExpertDataset:
    """Run the two-stage scheduler for `slots` decision epochs (with the live
    backlog evolution) and record every (state, role labels) pair.

    Labels are read off the expert's realized decision rather than its swarm
    position: a nominal source that ends up sending nothing is the same
    decision as an isolated node, and collapsing such ties removes label
    noise the network could never resolve."""
    if slots < 1:
        raise ValueError("dataset needs at least one slot")
    m = spec.node_count
    arrivals = np.zeros((slots, m))
    compute = np.zeros((slots, m))
    queue_trace = np.zeros(slots)
    bandwidth = np.zeros((slots, m, m))
    sched_cost = np.zeros((slots, m, m))
    labels = np.zeros((slots, m), dtype=np.int8)
    backlog = 0.0
    state = None
    for slot in range(slots):
        state = generate_slot_state(spec, slot, backlog)
        result = run_hh(state, cfg, hs_params, pso_params, mu,
                        seed=child_seed(seed, "sched", slot))
        arrivals[slot] = state.arrivals
        compute[slot] = state.compute
        queue_trace[slot] = backlog
        bandwidth[slot] = state.bandwidth
        sched_cost[slot] = state.sched_cost
        labels[slot] = repair_labels(categories_of(result.decision).labels, state.compute)
        cost = core.total_cost(state, result.decision)
        backlog = max(backlog + cost - cfg.budget, 0.0)

    scaler = scaler_from_samples(arrivals, compute, queue_trace, cfg.budget,
                                 bandwidth, sched_cost)
    order = rng_for(seed, "split").permutation(slots)
    cut = int(round(slots * train_fraction))
    return ExpertDataset(arrivals, compute, queue_trace, bandwidth, sched_cost, labels,
                         cfg.budget, state.service.request_size_bits,
                         state.service.cycles_per_request,
                         np.asarray(state.energy_coeff), np.sort(order[:cut]),
                         np.sort(order[cut:]), scaler)


def save_dataset(dataset: ExpertDataset, path) -> None:
    np.savez_compressed(
        path, arrivals=dataset.arrivals, compute=dataset.compute, queue=dataset.queue,
        bandwidth=dataset.bandwidth, sched_cost=dataset.sched_cost, labels=dataset.labels,
        budget=dataset.budget, request_size=dataset.request_size, cycles=dataset.cycles,
        energy_coeff=dataset.energy_coeff, train_idx=dataset.train_idx,
        test_idx=dataset.test_idx,
        scaler=np.array([getattr(dataset.scaler, k) for k in _SCALER_KEYS]))


_SCALER_KEYS = ("arrivals_max", "compute_max", "queue_max", "budget_ref",
                "bandwidth_min", "bandwidth_max", "cost_min", "cost_max")


def load_dataset(path) -> ExpertDataset:
    with np.load(path) as data:
        scaler = FeatureScaler(**dict(zip(_SCALER_KEYS, data["scaler"].tolist())))
        return ExpertDataset(
            data["arrivals"], data["compute"], data["queue"], data["bandwidth"],
            data["sched_cost"], data["labels"], float(data["budget"]),
            float(data["request_size"]), float(data["cycles"]), data["energy_coeff"],
            data["train_idx"], data["test_idx"], scaler)


@dataclass(frozen=True)
class TrainingHistory:
    train_loss: tuple[float, ...]
    heldout_loss: tuple[float, ...]

    @property
    def final_train_loss(self) -> float:
        return self.train_loss[-1]


def train_bc(dataset: ExpertDataset, model: GraphNetModel,
             cfg: TrainConfig = TrainConfig()) -> tuple[GraphNetModel, TrainingHistory]:
    """Minimize the summed per-node negative log-likelihood of the expert
    labels with Adam; deterministic for a fixed config seed."""
    if dataset.size < 1:
        raise ValueError("dataset is empty")
    if dataset.node_count != model.node_count:
        raise ModelMismatchError(
            f"dataset has {dataset.node_count} nodes, model {model.node_count}")
    x, adj = dataset.features()
    y = dataset.labels.astype(np.int64)
    train_idx = dataset.train_idx
    test_idx = dataset.test_idx
    params = {k: v.copy() for k, v in model.params.items()}
    optimizer = Adam(params, cfg)
    rng = rng_for(cfg.seed, "epochs")
    train_curve, heldout_curve = [], []
    for _epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grads = loss_and_grads(params, model.layers, x[batch], adj[batch], y[batch])
            params = optimizer.step(params, grads)
        train_curve.append(batch_loss(params, model.layers, x[train_idx], adj[train_idx],
                                      y[train_idx]))
        if test_idx.size:
            heldout_curve.append(batch_loss(params, model.layers, x[test_idx], adj[test_idx],
                                            y[test_idx]))
        else:
            heldout_curve.append(float("nan"))
    trained = replace(model, params=params)
    return trained, TrainingHistory(tuple(train_curve), tuple(heldout_curve))


def predict_labels_batch(model: GraphNetModel, x: np.ndarray, adj: np.ndarray) -> np.ndarray:
    """Arg-max labels; exact ties prefer isolated, then sink, then source."""
    probs, _ = _forward_batch(model.params, model.layers, x, adj)
    return (2 - np.argmax(probs[..., ::-1], axis=-1)).astype(np.int8)


def predict_labels(model: GraphNetModel, state: SystemStateGraph) -> np.ndarray:
    if state.node_count != model.node_count:
        raise ModelMismatchError(
            f"model trained for {model.node_count} nodes, state has {state.node_count}")
    x, edges = featurize(state, model.scaler)
    adj = build_adjacency(edges[0])
    return predict_labels_batch(model, x[None], adj[None])[0]


def accuracy(model: GraphNetModel, dataset: ExpertDataset, indices=None) -> float:
    x, adj = dataset.features()
    if indices is None:
        indices = np.arange(dataset.size)
    predicted = predict_labels_batch(model, x[indices], adj[indices])
    return float((predicted == dataset.labels[indices]).mean())


def il_decide(state: SystemStateGraph, model: GraphNetModel, cfg: DppConfig,
              hs_params: HsParams = HsParams(), mu: float | None = None,
              seed: int = 0) -> SchedulingDecision:
    """Predict node roles, patch them feasible, and run the flow-level
    harmony search on the predicted assignment. An all-isolated prediction
    short-circuits to the all-local decision."""
    labels = repair_labels(predict_labels(model, state), state.compute)
    if np.all(labels == ISOLATED):
        return core.all_local_decision(state)
    return harmony_search(state, CategoryAssignment(labels), cfg, hs_params, mu,
                          seed=seed).decision


def save_checkpoint(model: GraphNetModel, path) -> None:
    meta = dict(format_version=CHECKPOINT_VERSION, node_count=model.node_count,
                hidden=model.hidden, layers=model.layers)
    np.savez(path, meta=np.array([meta["format_version"], meta["node_count"],
                                  meta["hidden"], meta["layers"]], dtype=np.int64),
             scaler=np.array([getattr(model.scaler, k) for k in _SCALER_KEYS]),
             **model.params)


def load_checkpoint(path) -> GraphNetModel:
    with np.load(path) as data:
        if "meta" not in data:
            raise CheckpointError(f"{path}: not a model checkpoint")
        version, node_count, hidden, layers = (int(v) for v in data["meta"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        params = {}
        for layer in range(layers):
            params[f"conv_w{layer}"] = data[f"conv_w{layer}"]
            params[f"conv_b{layer}"] = data[f"conv_b{layer}"]
        for key in ("head_w1", "head_b1", "head_w2", "head_b2"):
            params[key] = data[key]
        if params["head_w1"].shape[0] != node_count:
            raise CheckpointError(
                f"{path}: head count {params['head_w1'].shape[0]} does not match "
                f"declared node count {node_count}")
        scaler = FeatureScaler(**dict(zip(_SCALER_KEYS, data["scaler"].tolist())))
        return GraphNetModel(params, scaler, node_count, hidden, layers)


def gradient_check(model: GraphNetModel, x: np.ndarray, adj: np.ndarray,
                   labels: np.ndarray, step: float = 1e-5,
                   max_entries_per_tensor: int | None = None,
                   seed: int = 0) -> float:
    """Max relative error between analytic gradients and central finite
    differences over (a sample of) every parameter tensor's entries."""
    params = {k: v.copy() for k, v in model.params.items()}
    _, grads = loss_and_grads(params, model.layers, x, adj, labels)
    rng = rng_for(seed, "gradcheck")
    worst = 0.0
    for key, tensor in params.items():
        flat = tensor.reshape(-1)
        count = flat.size
        if max_entries_per_tensor is not None and count > max_entries_per_tensor:
            entries = rng.choice(count, size=max_entries_per_tensor, replace=False)
        else:
            entries = np.arange(count)
        for idx in entries:
            original = flat[idx]
            flat[idx] = original + step
            up = batch_loss(params, model.layers, x, adj, labels)
            flat[idx] = original - step
            down = batch_loss(params, model.layers, x, adj, labels)
            flat[idx] = original
            numeric = (up - down) / (2 * step)
            analytic = grads[key].reshape(-1)[idx]
            denom = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
