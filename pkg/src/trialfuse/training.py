"""Optimization of the fusion model: losses, exact reverse-mode gradients,
Adam updates, stratified splits, and best-validation-AUC checkpointing.

Gradients are written out by hand against the forward tape so they can be
checked against central finite differences without an autodiff dependency.
The discrete top-k selection is treated straight-through: non-selected
experts receive zero gradient, and the selection-count fractions f_i are
constants of the backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import auc_roc
from .smoe import (GATE_ALL, GATE_MODALITIES, ForwardResult, ModelConfig,
                   RoutingStats, SMoEModel, forward, load_balance_loss,
                   softplus)

PROB_CLAMP = 1e-7


class TrainingError(Exception):
    pass


class NonFiniteLoss(TrainingError):
    pass


class StratumTooSmall(TrainingError):
    def __init__(self, phase: str, size: int):
        super().__init__(f"phase {phase} stratum has only {size} records (< 10)")
        self.phase = phase
        self.size = size


@dataclass(frozen=True)
class TrainConfig:
    lambda_imp: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 20
    grad_clip: float | None = 5.0
    noisy_gating: bool = True

    def __post_init__(self):
        if self.lambda_imp < 0:
            raise ValueError("lambda_imp must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class Sample:
    sample_id: str
    inputs: dict[str, np.ndarray]
    label: int
    phase: str


def bce_loss(p: float, y: int) -> float:
    p = min(max(float(p), PROB_CLAMP), 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1 - y) * np.log(1.0 - p))


def _stack_batch(samples: list[Sample], modalities) -> tuple[dict, np.ndarray]:
    inputs: dict[str, np.ndarray] = {}
    for m in modalities:
        vecs = [s.inputs.get(m) for s in samples]
        if all(v is None for v in vecs):
            continue
        dim = next(v.shape[0] for v in vecs if v is not None)
        inputs[m] = np.stack([
            np.zeros(dim) if v is None else np.asarray(v, dtype=np.float64)
            for v in vecs])
    labels = np.array([s.label for s in samples], dtype=np.float64)
    return inputs, labels


def total_loss(batch: list[Sample], model: SMoEModel, config: TrainConfig,
               train_mode: bool = False,
               rng: np.random.Generator | None = None
               ) -> tuple[float, RoutingStats, ForwardResult]:
    if not batch:
        raise ValueError("empty batch")
    inputs, labels = _stack_batch(batch, model.config.modalities)
    result = forward(model, inputs, train_mode=train_mode, rng=rng)
    bce = float(np.mean([bce_loss(p, int(y)) for p, y in zip(result.probs, labels)]))
    loss = bce + config.lambda_imp * load_balance_loss(result.stats)
    return loss, result.stats, result


def backward(batch: list[Sample], model: SMoEModel, config: TrainConfig,
             result: ForwardResult) -> dict[str, np.ndarray]:
    """Exact gradients of total_loss w.r.t. every parameter, given the
    forward tape in ``result``."""
    cfg = model.config
    tape = result.tape
    B = len(batch)
    labels = np.array([s.label for s in batch], dtype=np.float64)

    grads = {name: np.zeros_like(model.params[name]) for name in model.parameter_names()}

    p = np.clip(result.probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    dlogit = (p - labels) / B                       # d(mean BCE)/d logit
    # zero gradient where the clamp is active (matches the clamped loss)
    active = (result.probs > PROB_CLAMP) & (result.probs < 1.0 - PROB_CLAMP)
    dlogit = np.where(active, dlogit, 0.0)

    u = tape["u"]
    grads["head.w"] += u.T @ dlogit
    grads["head.b"][0] += dlogit.sum()
    du = np.outer(dlogit, model.params["head.w"])

    d = cfg.embed_dim
    dy = du[:, :cfg.expert_out]
    dz: dict[str, np.ndarray] = {m: np.zeros((B, d)) for m in cfg.modalities}
    mol, onto = GATE_MODALITIES
    dz[mol] += du[:, cfg.expert_out:cfg.expert_out + d]
    dz[onto] += du[:, cfg.expert_out + d:]

    # expert path
    h = tape["h"]
    probs = tape["probs"]
    dh = np.zeros_like(h)
    dprobs = np.zeros_like(probs)
    for j, et in tape["experts"].items():
        rows, t, o = et["rows"], et["t"], et["o"]
        w = probs[rows, j][:, None]
        dprobs[rows, j] = np.sum(dy[rows] * o, axis=1)
        do = dy[rows] * w
        grads[f"expert{j}.W2"] += t.T @ do
        grads[f"expert{j}.b2"] += do.sum(axis=0)
        dt = do @ model.params[f"expert{j}.W2"].T
        da = dt * (1.0 - t * t)
        grads[f"expert{j}.W1"] += h[rows].T @ da
        grads[f"expert{j}.b1"] += da.sum(axis=0)
        dh[rows] += da @ model.params[f"expert{j}.W1"].T

    # sparse gate probabilities: softmax restricted to the top-k support
    mask = tape["mask"]
    dot = np.sum(dprobs * probs, axis=1, keepdims=True)
    dlogits = probs * (dprobs - dot)
    dlogits[~mask] = 0.0

    # load-balance term: L_imp = N * sum_i f_i * P_i with f constant and
    # P_i the batch mean of the dense softmax
    if config.lambda_imp > 0:
        stats = result.stats
        dense = tape["dense"]
        n = cfg.num_experts
        dP = config.lambda_imp * n * stats.f        # (N,)
        dsm = np.tile(dP / B, (B, 1))
        dot_imp = np.sum(dsm * dense, axis=1, keepdims=True)
        dlogits += dense * (dsm - dot_imp)

    # gate linear + noise path
    gate_x = tape["gate_x"]
    grads["gate.Wg"] += gate_x.T @ dlogits
    dgate_x = dlogits @ model.params["gate.Wg"].T
    if "eps" in tape:
        s = tape["noise_pre"]
        dnoise = dlogits * tape["eps"]              # eps treated as constant
        dpre = dnoise * (1.0 / (1.0 + np.exp(-s)))  # softplus' = sigmoid
        grads["gate.Wnoise"] += gate_x.T @ dpre
        dgate_x += dpre @ model.params["gate.Wnoise"].T

    if cfg.gate_mode == GATE_ALL:
        dh += dgate_x
    else:
        dz[mol] += dgate_x[:, :d]
        dz[onto] += dgate_x[:, d:]

    # split fusion-input gradient back to modality projections
    for idx, m in enumerate(cfg.modalities):
        dz[m] += dh[:, idx * d:(idx + 1) * d]
        grads[f"proj.{m}"] += dz[m].T @ tape["e"][m]

    return grads


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_auc: float
    expert_fractions: tuple[float, ...]

    def as_row(self) -> dict:
        row = {"epoch": self.epoch, "train_loss": self.train_loss,
               "val_auc": self.val_auc}
        for i, f in enumerate(self.expert_fractions):
            row[f"f_{i + 1}"] = f
        return row


def _adam_step(params, grads, state, config: TrainConfig) -> None:
    state["t"] += 1
    t = state["t"]
    if config.grad_clip is not None:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if norm > config.grad_clip:
            scale = config.grad_clip / norm
            grads = {k: g * scale for k, g in grads.items()}
    for name, g in grads.items():
        m = state["m"][name] = config.beta1 * state["m"][name] + (1 - config.beta1) * g
        v = state["v"][name] = config.beta2 * state["v"][name] + (1 - config.beta2) * g * g
        mhat = m / (1 - config.beta1 ** t)
        vhat = v / (1 - config.beta2 ** t)
        params[name] -= config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)


def evaluate_auc(model: SMoEModel, samples: list[Sample]) -> float:
    inputs, labels = _stack_batch(samples, model.config.modalities)
    result = forward(model, inputs, train_mode=False)
    return auc_roc(result.probs, labels.astype(int))


def train(train_set: list[Sample], val_set: list[Sample], model: SMoEModel,
          config: TrainConfig) -> tuple[SMoEModel, list[EpochLog]]:
    """Epoch loop with Adam updates; retains the checkpoint with the highest
    validation AUC and stops at max_epochs or patience exhaustion."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    state = {"t": 0,
             "m": {k: np.zeros_like(v) for k, v in model.params.items()},
             "v": {k: np.zeros_like(v) for k, v in model.params.items()}}
    history: list[EpochLog] = []
    best_auc = -np.inf
    best_params = model.copy_params()
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        counts = np.zeros(model.config.num_experts)
        selections = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            loss, stats, result = total_loss(
                batch, model, config,
                train_mode=config.noisy_gating, rng=rng)
            if not np.isfinite(loss):
                model.params = best_params
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
            grads = backward(batch, model, config, result)
            _adam_step(model.params, grads, state, config)
            epoch_losses.append(loss)
            counts += stats.selection_counts
            selections += stats.batch_size * stats.top_k

        val_auc = evaluate_auc(model, val_set)
        fractions = tuple(counts / max(selections, 1))
        history.append(EpochLog(epoch, float(np.mean(epoch_losses)), val_auc, fractions))

        if val_auc > best_auc:
            best_auc = val_auc
            best_params = model.copy_params()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    best = SMoEModel(config=model.config, params=best_params)
    return best, history


def primary_phase(sample: Sample) -> str:
    return sample.phase


def stratified_split(samples: list[Sample],
                     spec: SplitSpec = SplitSpec()
                     ) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Per-phase shuffled split; disjoint and exhaustive."""
    strata: dict[str, list[Sample]] = {}
    for s in samples:
        strata.setdefault(primary_phase(s), []).append(s)

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    train_set: list[Sample] = []
    val_set: list[Sample] = []
    test_set: list[Sample] = []
    for phase in sorted(strata):
        members = strata[phase]
        if len(members) < 10:
            raise StratumTooSmall(phase, len(members))
        order = rng.permutation(len(members))
        n = len(members)
        n_val = int(n * spec.fractions[1])
        n_test = int(n * spec.fractions[2])
        shuffled = [members[i] for i in order]
        test_set.extend(shuffled[:n_test])
        val_set.extend(shuffled[n_test:n_test + n_val])
        train_set.extend(shuffled[n_test + n_val:])
    return train_set, val_set, test_set


# --- finite-difference utilities (shared by tests and the gradient check) ---

def loss_at(batch: list[Sample], model: SMoEModel, config: TrainConfig) -> float:
    loss, _, _ = total_loss(batch, model, config, train_mode=False)
    return loss


def finite_difference_grad(batch, model, config, name: str, index: tuple,
                           step: float = 1e-4) -> float:
    """Central finite difference on a single parameter entry (eval mode)."""
    original = model.params[name][index]
    model.params[name][index] = original + step
    up = loss_at(batch, model, config)
    model.params[name][index] = original - step
    down = loss_at(batch, model, config)
    model.params[name][index] = original
    return (up - down) / (2 * step)
