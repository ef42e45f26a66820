"""Graph transformer networks for appearance and motion modeling.

Two stacks share one parameter set:

* a self-attention stack over all graph nodes, where each head's raw
  score for an ordered pair (k, j) is the scaled triple product of the
  projected query, key and edge embeddings, and the pre-softmax scores
  also drive the edge-embedding update;
* a cross-attention stack where tracklet embeddings act as queries over
  detection embeddings, followed by linear heads that decode a location
  delta, a multiplicative size update, a yaw delta and class logits.

Edges are kept directed internally (including self pairs) so node
permutations commute exactly with the forward pass; the undirected edge
embedding exported to the graph is the mean of the two directions.

Forward passes are pure given parameters; a training step owns the
parameters exclusively.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .numeric import Tensor

CHECKPOINT_FORMAT = "mcmot-weights-v1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GtnConfig:
    """Dimensions and depths of both attention stacks."""

    feature_dim: int = 64
    num_cameras: int = 6
    model_dim: int = 64
    heads: int = 4
    self_layers: int = 2
    cross_layers: int = 3
    ffn_hidden: int = 128
    classes: tuple[str, ...] = ("car",)
    input_dim: int | None = None

    def __post_init__(self):
        if self.input_dim is None:
            object.__setattr__(self, "input_dim", self.feature_dim + self.num_cameras + 3)
        object.__setattr__(self, "classes", tuple(self.classes))
        for name in ("feature_dim", "num_cameras", "model_dim", "heads", "self_layers",
                     "cross_layers", "ffn_hidden", "input_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def logit_dim(self) -> int:
        # one extra "no object" class for set-based training
        return self.num_classes + 1

    def class_index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ConfigError(f"unknown class label {label!r}") from None

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "num_cameras": self.num_cameras,
            "model_dim": self.model_dim,
            "heads": self.heads,
            "self_layers": self.self_layers,
            "cross_layers": self.cross_layers,
            "ffn_hidden": self.ffn_hidden,
            "classes": list(self.classes),
            "input_dim": self.input_dim,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GtnConfig":
        return cls(**{**data, "classes": tuple(data.get("classes", ("car",)))})


class GtnParams:
    """All learnable weights, addressable by name."""

    def __init__(self, config: GtnConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


LOCATION_INIT_SCALE = 0.1  # meters enter the node input raw; see init_params


def init_params(config: GtnConfig, seed: int = 0) -> GtnParams:
    """Seeded initialization: Xavier-uniform matrices, zero biases, unit norms.

    Node inputs concatenate unit-scale appearance features with raw metric
    locations, so the first-layer projection columns that multiply the
    location segment start scaled down; training is free to move them.
    """
    rng = np.random.default_rng(seed)
    dz = config.model_dim
    tensors: dict[str, Tensor] = {}
    standard_layout = config.input_dim == config.feature_dim + config.num_cameras + 3

    def mat(name, rows, cols):
        value = nm.xavier_uniform(rng, rows, cols)
        if standard_layout and cols == config.input_dim and name.startswith("self0."):
            value[:, -3:] *= LOCATION_INIT_SCALE
        tensors[name] = Tensor(value, op="param")

    def bias(name, cols):
        tensors[name] = Tensor(np.zeros((1, cols)), op="param")

    def norm_pair(prefix):
        tensors[f"{prefix}.g"] = Tensor(np.ones((1, dz)), op="param")
        tensors[f"{prefix}.b"] = Tensor(np.zeros((1, dz)), op="param")

    def ffn(prefix):
        mat(f"{prefix}.w1", config.ffn_hidden, dz)
        bias(f"{prefix}.b1", config.ffn_hidden)
        mat(f"{prefix}.w2", dz, config.ffn_hidden)
        bias(f"{prefix}.b2", dz)

    mat("edge_embed.w", dz, 2)
    for layer in range(config.self_layers):
        in_dim = config.input_dim if layer == 0 else dz
        p = f"self{layer}"
        mat(f"{p}.q", dz, in_dim)
        mat(f"{p}.k", dz, in_dim)
        mat(f"{p}.v", dz, in_dim)
        mat(f"{p}.e", dz, dz)
        mat(f"{p}.o_h", dz, dz)
        mat(f"{p}.o_e", dz, config.heads)
        if layer == 0 and in_dim != dz:
            mat(f"{p}.skip", dz, in_dim)
        ffn(f"{p}.ffn_h")
        ffn(f"{p}.ffn_e")
        norm_pair(f"{p}.norm1_h")
        norm_pair(f"{p}.norm2_h")
        norm_pair(f"{p}.norm1_e")
        norm_pair(f"{p}.norm2_e")
    for layer in range(config.cross_layers):
        p = f"cross{layer}"
        mat(f"{p}.q", dz, dz)
        mat(f"{p}.k", dz, dz)
        mat(f"{p}.v", dz, dz)
        mat(f"{p}.o_z", dz, dz)
        ffn(f"{p}.ffn")
        norm_pair(f"{p}.norm1")
        norm_pair(f"{p}.norm2")
    mat("head.loc.w", 3, dz)
    bias("head.loc.b", 3)
    mat("head.size.w", 3, dz)
    bias("head.size.b", 3)
    mat("head.yaw.w", 1, dz)
    bias("head.yaw.b", 1)
    mat("head.cls.w", config.logit_dim, dz)
    bias("head.cls.b", config.logit_dim)
    mat("scorer.w", 2, 3 * dz)
    bias("scorer.b", 2)
    return GtnParams(config, tensors)


def _linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = nm.matmul(x, nm.transpose(w))
    return out if b is None else out + b


def _ffn(x: Tensor, params: GtnParams, prefix: str) -> Tensor:
    hidden = nm.relu(_linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return _linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _norm(x: Tensor, params: GtnParams, prefix: str) -> Tensor:
    return nm.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def feature_similarity_matrix(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of appearance features (zero-safe)."""
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    unit = features / np.maximum(norms, 1e-12)
    return unit @ unit.T


def initial_edge_embeddings(
    distances: np.ndarray, feature_sims: np.ndarray, params: GtnParams
) -> Tensor:
    """Map each pair's geometry distance and appearance similarity to a
    model_dim embedding.

    Both inputs are full N x N matrices (self pairs on the diagonal); rows
    of the result are ordered pairs (k, j) in row-major order.
    """
    n = distances.shape[0]
    pair_inputs = np.stack(
        [distances.reshape(n * n), feature_sims.reshape(n * n)], axis=1
    )
    return nm.matmul(Tensor(pair_inputs, op="edge_inputs"),
                     nm.transpose(params["edge_embed.w"]))


def self_attention_forward(
    h: Tensor, e: Tensor, params: GtnParams, layer: int
) -> tuple[Tensor, Tensor]:
    """One self-attention layer over node matrix `h` (N x d) and the
    directed-edge matrix `e` (N^2 x model_dim, row-major ordered pairs)."""
    config = params.config
    n = h.shape[0]
    if e.shape != (n * n, config.model_dim):
        raise nm.ShapeError(
            f"self-attention layer {layer}: edge matrix {e.shape} vs {n * n} pairs"
        )
    expected_in = config.input_dim if layer == 0 else config.model_dim
    if h.shape[1] != expected_in:
        raise nm.ShapeError(
            f"self-attention layer {layer}: node dim {h.shape[1]}, expected {expected_in}"
        )
    dh = config.head_dim
    idx_k = np.repeat(np.arange(n), n)
    idx_j = np.tile(np.arange(n), n)
    scale = 1.0 / np.sqrt(dh)

    head_values, head_scores = [], []
    for i in range(config.heads):
        lo, hi = i * dh, (i + 1) * dh
        qh = nm.matmul(h, nm.transpose(nm.slice_rows(params[f"self{layer}.q"], lo, hi)))
        kh = nm.matmul(h, nm.transpose(nm.slice_rows(params[f"self{layer}.k"], lo, hi)))
        vh = nm.matmul(h, nm.transpose(nm.slice_rows(params[f"self{layer}.v"], lo, hi)))
        ee = nm.matmul(e, nm.transpose(nm.slice_rows(params[f"self{layer}.e"], lo, hi)))
        pair_qk = nm.mul(nm.gather_rows(qh, idx_k), nm.gather_rows(kh, idx_j))
        raw = nm.sum_cols(nm.mul(pair_qk, ee)) * scale  # (N^2, 1)
        attn = nm.softmax_rows(nm.reshape(raw, n, n))
        head_values.append(nm.attention_apply(attn, vh))
        head_scores.append(raw)

    h_attn = _linear(nm.concat_cols(head_values), params[f"self{layer}.o_h"])
    e_attn = _linear(nm.concat_cols(head_scores), params[f"self{layer}.o_e"])

    skip_name = f"self{layer}.skip"
    skip = _linear(h, params[skip_name]) if skip_name in params else h
    h2 = _norm(h_attn + skip, params, f"self{layer}.norm1_h")
    h_out = _norm(h2 + _ffn(h2, params, f"self{layer}.ffn_h"), params, f"self{layer}.norm2_h")
    e2 = _norm(e_attn + e, params, f"self{layer}.norm1_e")
    e_out = _norm(e2 + _ffn(e2, params, f"self{layer}.ffn_e"), params, f"self{layer}.norm2_e")
    return h_out, e_out


def self_attention_stack(
    node_inputs: np.ndarray,
    distances: np.ndarray,
    feature_sims: np.ndarray,
    params: GtnParams,
) -> tuple[Tensor, Tensor]:
    """Run all self-attention layers; returns final node and directed-edge
    embedding matrices."""
    h = Tensor(node_inputs, op="node_inputs")
    e = initial_edge_embeddings(distances, feature_sims, params)
    for layer in range(params.config.self_layers):
        h, e = self_attention_forward(h, e, params, layer)
    return h, e


def symmetrize_edges(e: Tensor, n: int) -> Tensor:
    """Mean of the (k, j) and (j, k) rows for every ordered pair."""
    idx_k = np.repeat(np.arange(n), n)
    idx_j = np.tile(np.arange(n), n)
    swapped = idx_j * n + idx_k
    return (e + nm.gather_rows(e, swapped)) * 0.5


def cross_attention_forward(
    x_tracklets: Tensor, x_detections: Tensor | None, params: GtnParams, layer: int
) -> Tensor:
    """One cross-attention layer: tracklets query detections.

    With no detections the attention sublayer is skipped and the tracklet
    embeddings only pass through the layer's feed-forward block.
    """
    config = params.config
    dh = config.head_dim
    scale = 1.0 / np.sqrt(dh)
    if x_detections is None or x_detections.shape[0] == 0:
        z2 = x_tracklets
    else:
        outs = []
        for i in range(config.heads):
            lo, hi = i * dh, (i + 1) * dh
            qh = nm.matmul(
                x_tracklets, nm.transpose(nm.slice_rows(params[f"cross{layer}.q"], lo, hi))
            )
            kh = nm.matmul(
                x_detections, nm.transpose(nm.slice_rows(params[f"cross{layer}.k"], lo, hi))
            )
            vh = nm.matmul(
                x_detections, nm.transpose(nm.slice_rows(params[f"cross{layer}.v"], lo, hi))
            )
            attn = nm.softmax_rows(nm.matmul(qh, nm.transpose(kh)) * scale)
            outs.append(nm.attention_apply(attn, vh))
        z1 = _linear(nm.concat_cols(outs), params[f"cross{layer}.o_z"])
        z2 = _norm(z1 + x_tracklets, params, f"cross{layer}.norm1")
    return _norm(z2 + _ffn(z2, params, f"cross{layer}.ffn"), params, f"cross{layer}.norm2")


def cross_attention_stack(
    x_tracklets: Tensor, x_detections: Tensor | None, params: GtnParams
) -> Tensor:
    z = x_tracklets
    for layer in range(params.config.cross_layers):
        z = cross_attention_forward(z, x_detections, params, layer)
    return z


@dataclass
class TrackPrediction:
    """Decoded tracking boxes for a batch of embeddings (rows align)."""

    location: Tensor  # (N, 3)
    size: Tensor  # (N, 3), strictly positive by construction
    yaw: Tensor  # (N, 1)
    class_logits: Tensor  # (N, num_classes + 1)
    embedding: Tensor  # (N, model_dim)


def decode_track_outputs(
    z: Tensor,
    prev_location: np.ndarray,
    prev_size: np.ndarray,
    prev_yaw: np.ndarray,
    params: GtnParams,
) -> TrackPrediction:
    """Linear heads on top of embeddings: location/yaw deltas are added to
    the previous state and the size head is a multiplicative log update."""
    loc = Tensor(prev_location, op="prev_location") + _linear(
        z, params["head.loc.w"], params["head.loc.b"]
    )
    size = nm.mul(
        Tensor(prev_size, op="prev_size"),
        nm.exp(_linear(z, params["head.size.w"], params["head.size.b"])),
    )
    yaw = Tensor(np.asarray(prev_yaw).reshape(-1, 1), op="prev_yaw") + _linear(
        z, params["head.yaw.w"], params["head.yaw.b"]
    )
    logits = _linear(z, params["head.cls.w"], params["head.cls.b"])
    return TrackPrediction(location=loc, size=size, yaw=yaw, class_logits=logits, embedding=z)


def edge_score_logits(params: GtnParams, h_i: Tensor, h_j: Tensor, e_ij: Tensor) -> Tensor:
    """Raw 2-way logits of the link classifier for ordered pairs (rows)."""
    return _linear(nm.concat_cols([h_i, h_j, e_ij]), params["scorer.w"], params["scorer.b"])


def score_edges(params: GtnParams, h_i: Tensor, h_j: Tensor, e_ij: Tensor) -> Tensor:
    """Probability that each pair is linked, symmetrized over both orders."""
    p_fwd = nm.softmax_rows(edge_score_logits(params, h_i, h_j, e_ij))
    p_bwd = nm.softmax_rows(edge_score_logits(params, h_j, h_i, e_ij))
    return (nm.slice_cols(p_fwd, 1, 2) + nm.slice_cols(p_bwd, 1, 2)) * 0.5


def save_checkpoint(params: GtnParams, path: str | Path) -> None:
    """Single JSON file, name -> flat array + shape; round-trips bit-exact."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": params.config.to_dict(),
        "params": {
            name: {
                "shape": list(params[name].shape),
                "data": params[name].value.reshape(-1).tolist(),
            }
            for name in sorted(params.names())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> GtnParams:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {payload.get('format')!r}")
    config = GtnConfig.from_dict(payload["config"])
    reference = init_params(config, seed=0)
    tensors: dict[str, Tensor] = {}
    for name in reference.names():
        if name not in payload["params"]:
            raise ConfigError(f"checkpoint missing parameter {name!r}")
        entry = payload["params"][name]
        shape = tuple(entry["shape"])
        if shape != reference[name].shape:
            raise ConfigError(
                f"parameter {name!r} has shape {shape}, expected {reference[name].shape}"
            )
        tensors[name] = Tensor(np.asarray(entry["data"], dtype=np.float64).reshape(shape),
                               op="param")
    return GtnParams(config, tensors)
