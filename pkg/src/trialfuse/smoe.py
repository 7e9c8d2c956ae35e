"""Sparse Mixture-of-Experts fusion core: noisy top-k gating over expert
feedforward networks, load-balancing statistics, and the classifier head.

Gate probabilities live on exactly the top-k support (mask to -inf, then
softmax), so the selected weights always form a distribution. Expert
computation touches only the rows routed to each expert; tests compare this
sparse path against a dense compute-all-then-mask reference.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .embedding import EMBED_DIM, ELIG_DIM, DimMismatch

# Fixed fusion order: the three core modalities first, then the extra
# modalities of the seven-modality setting.
CORE_MODALITIES = ("smiles", "criteria", "diseases")
EXTRA_MODALITIES = ("summarization", "description", "enrollment", "drugs")
ALL_MODALITIES = CORE_MODALITIES + EXTRA_MODALITIES

# Gate conditioning: molecular (drug) and ontology (disease) slots.
GATE_MODALITIES = ("smiles", "diseases")

GATE_DRUG_DISEASE = "drug_disease"
GATE_ALL = "all_modalities"

CHECKPOINT_MAGIC = b"SMOECKP1"


def modality_source_dim(name: str, embed_dim: int = EMBED_DIM) -> int:
    # Eligibility criteria arrive as the concatenated inclusion/exclusion
    # pooled vector and are projected 2*d -> d in-model.
    return 2 * embed_dim if name == "criteria" else embed_dim


@dataclass(frozen=True)
class ModelConfig:
    modalities: tuple[str, ...] = ALL_MODALITIES
    num_experts: int = 4
    top_k: int = 2
    expert_hidden: int = 256
    expert_out: int = EMBED_DIM
    embed_dim: int = EMBED_DIM
    gate_mode: str = GATE_DRUG_DISEASE
    init_scale: float = 0.05
    gate_init_scale: float = 0.05

    def __post_init__(self):
        if not self.modalities:
            raise ValueError("modality list must be nonempty")
        if not 1 <= self.top_k <= self.num_experts:
            raise ValueError("need 1 <= top_k <= num_experts")
        if self.gate_mode not in (GATE_DRUG_DISEASE, GATE_ALL):
            raise ValueError(f"unknown gate_mode {self.gate_mode!r}")

    @property
    def fusion_dim(self) -> int:
        return len(self.modalities) * self.embed_dim

    @property
    def gate_input_dim(self) -> int:
        if self.gate_mode == GATE_ALL:
            return self.fusion_dim
        return 2 * self.embed_dim

    @property
    def head_input_dim(self) -> int:
        return self.expert_out + 2 * self.embed_dim


@dataclass
class SMoEModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def parameter_names(self) -> list[str]:
        """Declaration order; also the checkpoint tensor order."""
        cfg = self.config
        names = [f"proj.{m}" for m in cfg.modalities]
        names += ["gate.Wg", "gate.Wnoise"]
        for j in range(cfg.num_experts):
            names += [f"expert{j}.W1", f"expert{j}.b1",
                      f"expert{j}.W2", f"expert{j}.b2"]
        names += ["head.w", "head.b"]
        return names

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def init_model(config: ModelConfig, seed: int = 0) -> SMoEModel:
    rng = np.random.Generator(np.random.PCG64(seed))
    p: dict[str, np.ndarray] = {}
    d = config.embed_dim
    for m in config.modalities:
        src = modality_source_dim(m, d)
        p[f"proj.{m}"] = rng.standard_normal((d, src)) * config.init_scale
    p["gate.Wg"] = rng.standard_normal(
        (config.gate_input_dim, config.num_experts)) * config.gate_init_scale
    p["gate.Wnoise"] = rng.standard_normal(
        (config.gate_input_dim, config.num_experts)) * config.gate_init_scale
    for j in range(config.num_experts):
        p[f"expert{j}.W1"] = rng.standard_normal(
            (config.fusion_dim, config.expert_hidden)) * config.init_scale
        p[f"expert{j}.b1"] = np.zeros(config.expert_hidden)
        p[f"expert{j}.W2"] = rng.standard_normal(
            (config.expert_hidden, config.expert_out)) * config.init_scale
        p[f"expert{j}.b2"] = np.zeros(config.expert_out)
    p["head.w"] = rng.standard_normal(config.head_input_dim) * config.init_scale
    p["head.b"] = np.zeros(1)
    return SMoEModel(config=config, params=p)


@dataclass
class RoutingStats:
    """Per-expert selection fractions and mean gate probabilities.

    ``selection_counts`` counts top-k membership; ``f`` normalizes by
    batch_size * k (per-selection, sums to 1) or by batch_size (sums to k),
    depending on ``f_normalization``.
    """

    selection_counts: np.ndarray
    mean_probs: np.ndarray
    batch_size: int
    top_k: int
    f_normalization: str = "per_selection"
    missing_modalities: tuple[str, ...] = ()

    @property
    def f(self) -> np.ndarray:
        if self.f_normalization == "per_selection":
            return self.selection_counts / (self.batch_size * self.top_k)
        return self.selection_counts / self.batch_size

    @property
    def P(self) -> np.ndarray:
        return self.mean_probs


def build_fusion_input(z_mol: np.ndarray, z_proto: np.ndarray, z_onto: np.ndarray,
                       extra: list[np.ndarray] | None = None,
                       embed_dim: int = EMBED_DIM) -> np.ndarray:
    """Concatenate aligned modality vectors in fixed order."""
    parts = [z_mol, z_proto, z_onto] + list(extra or [])
    if not parts:
        raise DimMismatch(embed_dim, 0)
    for v in parts:
        v = np.asarray(v)
        if v.shape != (embed_dim,):
            raise DimMismatch(embed_dim, int(np.prod(v.shape)))
    return np.concatenate([np.asarray(v, dtype=np.float64) for v in parts])


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def gate(model: SMoEModel, gate_input: np.ndarray, train_mode: bool,
         rng: np.random.Generator | None = None):
    """Noisy top-k gating for a batch. Returns (sparse probs, top-k mask,
    dense softmax probs, tape dict for backward)."""
    cfg = model.config
    x = np.atleast_2d(np.asarray(gate_input, dtype=np.float64))
    if x.shape[1] != cfg.gate_input_dim:
        raise DimMismatch(cfg.gate_input_dim, x.shape[1])
    logits_clean = x @ model.params["gate.Wg"]
    tape = {"gate_x": x, "logits_clean": logits_clean}
    if train_mode:
        if rng is None:
            raise ValueError("train-mode gating requires an rng")
        s = x @ model.params["gate.Wnoise"]
        eps = rng.standard_normal(logits_clean.shape)
        logits = logits_clean + eps * softplus(s)
        tape.update(noise_pre=s, eps=eps)
    else:
        logits = logits_clean
    # top-k per row; stable argsort keeps tie-breaking deterministic
    order = np.argsort(-logits, axis=1, kind="stable")
    topk_idx = order[:, :cfg.top_k]
    mask = np.zeros_like(logits, dtype=bool)
    np.put_along_axis(mask, topk_idx, True, axis=1)
    masked = np.where(mask, logits, -np.inf)
    probs = _softmax(masked)
    dense = _softmax(logits)
    tape.update(logits=logits, mask=mask, probs=probs, dense=dense)
    return probs, mask, dense, tape


def expert_apply(model: SMoEModel, j: int, h_rows: np.ndarray):
    """Expert feedforward on the routed rows; returns (output, hidden tape)."""
    a = h_rows @ model.params[f"expert{j}.W1"] + model.params[f"expert{j}.b1"]
    t = np.tanh(a)
    o = t @ model.params[f"expert{j}.W2"] + model.params[f"expert{j}.b2"]
    return o, t


def fuse(h: np.ndarray, gate_input: np.ndarray, model: SMoEModel,
         train_mode: bool = False, rng: np.random.Generator | None = None):
    """Gate-weighted sum over the selected experts.

    y[b] = sum_{j in topk(b)} probs[b, j] * expert_j(h[b]).
    """
    cfg = model.config
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if h.shape[1] != cfg.fusion_dim:
        raise DimMismatch(cfg.fusion_dim, h.shape[1])
    probs, mask, dense, tape = gate(model, gate_input, train_mode, rng)
    B = h.shape[0]
    y = np.zeros((B, cfg.expert_out))
    expert_tapes = {}
    for j in range(cfg.num_experts):
        rows = np.nonzero(mask[:, j])[0]
        if rows.size == 0:
            continue
        o, t = expert_apply(model, j, h[rows])
        y[rows] += probs[rows, j][:, None] * o
        expert_tapes[j] = {"rows": rows, "t": t, "o": o}
    stats = RoutingStats(
        selection_counts=mask.sum(axis=0).astype(np.float64),
        mean_probs=dense.mean(axis=0),
        batch_size=B,
        top_k=cfg.top_k,
    )
    tape.update(h=h, y=y, experts=expert_tapes)
    return y, stats, tape


def load_balance_loss(stats: RoutingStats) -> float:
    """N * sum_i f_i * P_i; equals 1.0 under perfectly uniform routing with
    per-selection normalization, and N under single-expert collapse."""
    n = stats.selection_counts.shape[0]
    return float(n * np.sum(stats.f * stats.P))


def _gate_input_from(z: dict[str, np.ndarray], h: np.ndarray,
                     cfg: ModelConfig) -> np.ndarray:
    if cfg.gate_mode == GATE_ALL:
        return h
    mol, onto = GATE_MODALITIES
    return np.concatenate([z[mol], z[onto]], axis=1)


@dataclass
class ForwardResult:
    logits: np.ndarray        # (B,)
    probs: np.ndarray         # (B,)
    stats: RoutingStats
    tape: dict = field(repr=False, default_factory=dict)


def forward(model: SMoEModel, inputs: dict[str, np.ndarray],
            train_mode: bool = False,
            rng: np.random.Generator | None = None) -> ForwardResult:
    """Full fusion pass for a batch of per-modality source embeddings.

    ``inputs`` maps modality name -> (B, source_dim) array; a missing
    modality contributes a zero vector to the fusion input and is flagged in
    the routing stats.
    """
    cfg = model.config
    sizes = [np.atleast_2d(v).shape[0] for v in inputs.values() if v is not None]
    if not sizes:
        raise DimMismatch(cfg.embed_dim, 0)
    B = sizes[0]

    e: dict[str, np.ndarray] = {}
    z: dict[str, np.ndarray] = {}
    missing = []
    for m in cfg.modalities:
        src_dim = modality_source_dim(m, cfg.embed_dim)
        v = inputs.get(m)
        if v is None:
            missing.append(m)
            v = np.zeros((B, src_dim))
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        if v.shape != (B, src_dim):
            raise DimMismatch(src_dim, v.shape[1])
        e[m] = v
        z[m] = v @ model.params[f"proj.{m}"].T
    h = np.concatenate([z[m] for m in cfg.modalities], axis=1)
    gate_x = _gate_input_from(z, h, cfg)

    y, stats, tape = fuse(h, gate_x, model, train_mode, rng)
    stats = replace(stats, missing_modalities=tuple(missing))

    mol, onto = GATE_MODALITIES
    u = np.concatenate([y, z[mol], z[onto]], axis=1)
    logit = u @ model.params["head.w"] + model.params["head.b"][0]
    p = 1.0 / (1.0 + np.exp(-logit))
    tape.update(e=e, z=z, u=u, logit=logit, p=p)
    return ForwardResult(logits=logit, probs=p, stats=stats, tape=tape)


# --- checkpoint io ----------------------------------------------------------

def save_checkpoint(model: SMoEModel, path) -> None:
    """Versioned header, JSON hyperparameter block, then parameter tensors in
    declaration order as little-endian f32."""
    cfg = model.config
    hyper = json.dumps({
        "modalities": list(cfg.modalities),
        "num_experts": cfg.num_experts,
        "top_k": cfg.top_k,
        "expert_hidden": cfg.expert_hidden,
        "expert_out": cfg.expert_out,
        "embed_dim": cfg.embed_dim,
        "gate_mode": cfg.gate_mode,
        "init_scale": cfg.init_scale,
        "gate_init_scale": cfg.gate_init_scale,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hyper)))
        fh.write(hyper)
        for name in model.parameter_names():
            tensor = model.params[name].astype("<f4")
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(tensor.tobytes())


def load_checkpoint(path) -> SMoEModel:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise IOError(f"bad checkpoint magic in {path}")
        (hyper_len,) = struct.unpack("<I", fh.read(4))
        hyper = json.loads(fh.read(hyper_len).decode("utf-8"))
        hyper["modalities"] = tuple(hyper["modalities"])
        config = ModelConfig(**hyper)
        model = SMoEModel(config=config, params={})
        for name in model.parameter_names():
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            model.params[name] = data.reshape(shape).astype(np.float64)
    return model
