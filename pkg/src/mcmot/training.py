"""Losses, two-frame-chunk batching, Adam, and gradient verification.

A training chunk holds the tracklets of one frame (seeded from ground
truth) and the detections of the next.  The forward pass mirrors the
tracker: self-attention over the joint graph, cross-attention motion
decoding for tracklets, detection refinement through the same heads.
Three losses are combined:

* an embedding loss pulling random-walk neighbours together and sampled
  non-neighbours apart;
* a binary cross-entropy on the link classifier, labeled by ground-truth
  identity;
* a set-prediction loss matching detection outputs to ground truth with
  an optimal bipartite assignment and tracklet outputs by identity, with
  an extra no-object class for unmatched predictions.

Negative sampling and random walks draw from a generator seeded per call,
so losses are bit-reproducible and finite differences see a frozen
objective.  One training step owns the parameters exclusively.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .association import giou_3d_parts, hungarian, wrap_angle
from .graph import Detection
from .gtn import (
    GtnParams,
    cross_attention_stack,
    decode_track_outputs,
    edge_score_logits,
    feature_similarity_matrix,
    self_attention_stack,
    symmetrize_edges,
)
from .numeric import Tensor
from .records import GroundTruthRow


@dataclass(frozen=True)
class LossWeights:
    """Combination weights of the set loss plus the negative-sampling ratio."""

    lambda_cls: float = 1.0
    lambda_box: float = 5.0
    lambda_iou: float = 2.0
    negative_ratio: float = 1.0  # weight of sampled non-neighbour pairs

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_box", "lambda_iou", "negative_ratio"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class WalkConfig:
    walk_length: int = 2
    walks_per_node: int = 2
    neighbor_edge_threshold: float = 10.0  # meters; shorter edges are walkable
    negatives_per_node: int = 2

    def __post_init__(self):
        if self.walk_length < 1:
            raise ValueError("walk_length must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    weights: LossWeights = LossWeights()
    walks: WalkConfig = WalkConfig()
    label_match_radius: float = 2.0  # detections are labeled by nearest gt

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
            "lambda_cls": self.weights.lambda_cls,
            "lambda_box": self.weights.lambda_box,
            "lambda_iou": self.weights.lambda_iou,
            "negative_ratio": self.weights.negative_ratio,
            "walk_length": self.walks.walk_length,
            "walks_per_node": self.walks.walks_per_node,
            "neighbor_edge_threshold": self.walks.neighbor_edge_threshold,
            "negatives_per_node": self.walks.negatives_per_node,
            "label_match_radius": self.label_match_radius,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(
            steps=int(data.get("steps", 200)),
            learning_rate=float(data.get("learning_rate", 1e-3)),
            beta1=float(data.get("beta1", 0.9)),
            beta2=float(data.get("beta2", 0.999)),
            adam_eps=float(data.get("adam_eps", 1e-8)),
            seed=int(data.get("seed", 0)),
            weights=LossWeights(
                lambda_cls=float(data.get("lambda_cls", 1.0)),
                lambda_box=float(data.get("lambda_box", 5.0)),
                lambda_iou=float(data.get("lambda_iou", 2.0)),
                negative_ratio=float(data.get("negative_ratio", 1.0)),
            ),
            walks=WalkConfig(
                walk_length=int(data.get("walk_length", 2)),
                walks_per_node=int(data.get("walks_per_node", 2)),
                neighbor_edge_threshold=float(data.get("neighbor_edge_threshold", 10.0)),
                negatives_per_node=int(data.get("negatives_per_node", 2)),
            ),
            label_match_radius=float(data.get("label_match_radius", 2.0)),
        )


@dataclass
class TrackletSeed:
    """Previous-frame state of one tracked object, taken from ground truth
    plus the appearance of a detection matched to it."""

    camera: str
    center: np.ndarray
    size: np.ndarray
    yaw: float
    feature: np.ndarray
    track_id: int
    label: str


@dataclass
class GtBox:
    track_id: int
    center: np.ndarray
    size: np.ndarray
    yaw: float
    label: str


@dataclass
class TrainChunk:
    """Two consecutive frames: seeded tracklets plus labeled detections."""

    frame_a: int
    frame_b: int
    camera_ids: list[str]
    tracklets: list[TrackletSeed]
    detections: list[Detection]
    det_gt_ids: list[int | None]
    gt_boxes: list[GtBox]

    def __post_init__(self):
        if self.frame_b != self.frame_a + 1:
            raise ValueError("chunk frames must be consecutive")


def build_chunks(
    detections: list[Detection],
    gt_rows: list[GroundTruthRow],
    camera_ids: list[str],
    label_match_radius: float = 2.0,
) -> list[TrainChunk]:
    """Slice a scene into two-consecutive-frame training chunks."""
    dets_by_frame: dict[int, list[Detection]] = {}
    for det in detections:
        dets_by_frame.setdefault(det.frame, []).append(det)
    gt_by_frame: dict[int, dict[int, GroundTruthRow]] = {}
    for row in gt_rows:
        gt_by_frame.setdefault(row.frame, {}).setdefault(row.track_id, row)

    def nearest_gt(det: Detection, frame: int) -> int | None:
        best_id, best_dist = None, label_match_radius
        for tid, row in sorted(gt_by_frame.get(frame, {}).items()):
            dist = float(np.linalg.norm(det.center - row.center))
            if dist < best_dist:
                best_id, best_dist = tid, dist
        return best_id

    chunks = []
    frames = sorted(gt_by_frame)
    for frame_a in frames:
        frame_b = frame_a + 1
        if frame_b not in gt_by_frame:
            continue
        # one seed per (object, camera): a camera's view of an object persists
        # as its own graph node at inference, so training mirrors that
        seeds = []
        for tid, row in sorted(gt_by_frame[frame_a].items()):
            by_camera: dict[str, Detection] = {}
            for d in dets_by_frame.get(frame_a, []):
                if float(np.linalg.norm(d.center - row.center)) < label_match_radius:
                    current = by_camera.get(d.camera)
                    if current is None or d.score > current.score:
                        by_camera[d.camera] = d
            for camera in sorted(by_camera):
                best = by_camera[camera]
                seeds.append(
                    TrackletSeed(
                        camera=camera,
                        center=row.center.copy(),
                        size=row.size.copy(),
                        yaw=row.yaw,
                        feature=best.feature.copy(),
                        track_id=tid,
                        label=row.label,
                    )
                )
        frame_dets = dets_by_frame.get(frame_b, [])
        if not seeds or not frame_dets:
            continue
        gt_boxes = [
            GtBox(track_id=tid, center=row.center.copy(), size=row.size.copy(),
                  yaw=row.yaw, label=row.label)
            for tid, row in sorted(gt_by_frame[frame_b].items())
        ]
        chunks.append(
            TrainChunk(
                frame_a=frame_a,
                frame_b=frame_b,
                camera_ids=list(camera_ids),
                tracklets=seeds,
                detections=list(frame_dets),
                det_gt_ids=[nearest_gt(d, frame_b) for d in frame_dets],
                gt_boxes=gt_boxes,
            )
        )
    return chunks


# ---------------------------------------------------------------------------
# forward pass over one chunk
# ---------------------------------------------------------------------------

def _one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def _chunk_node_arrays(chunk: TrainChunk):
    """Node inputs, pairwise distances/appearance similarities, bookkeeping."""
    cam_index = {cid: i for i, cid in enumerate(chunk.camera_ids)}
    rows, centers, features, gt_ids = [], [], [], []
    for seed in chunk.tracklets:
        rows.append(np.concatenate([
            seed.feature, _one_hot(cam_index[seed.camera], len(chunk.camera_ids)),
            seed.center,
        ]))
        centers.append(seed.center)
        features.append(seed.feature)
        gt_ids.append(seed.track_id)
    for det, gt_id in zip(chunk.detections, chunk.det_gt_ids):
        rows.append(np.concatenate([
            det.feature, _one_hot(cam_index[det.camera], len(chunk.camera_ids)), det.center,
        ]))
        centers.append(det.center)
        features.append(det.feature)
        gt_ids.append(gt_id)
    inputs = np.stack(rows)
    centers = np.stack(centers)
    diff = centers[:, None, :] - centers[None, :, :]
    distances = np.sqrt((diff**2).sum(axis=2))
    feature_sims = feature_similarity_matrix(np.stack(features))
    return inputs, distances, feature_sims, gt_ids


def random_walk_neighborhoods(
    distances: np.ndarray, walks: WalkConfig, rng: np.random.Generator
) -> list[list[int]]:
    """Fixed-length uniform random walks over edges shorter than the
    threshold; returns the visited set per start node (start excluded)."""
    n = distances.shape[0]
    adjacency = [
        [j for j in range(n) if j != k and distances[k, j] < walks.neighbor_edge_threshold]
        for k in range(n)
    ]
    neighborhoods = []
    for k in range(n):
        visited: set[int] = set()
        for _ in range(walks.walks_per_node):
            current = k
            for _ in range(walks.walk_length):
                options = adjacency[current]
                if not options:
                    break
                current = int(options[rng.integers(len(options))])
                visited.add(current)
        visited.discard(k)
        neighborhoods.append(sorted(visited))
    return neighborhoods


def embedding_loss(
    node_embeddings: Tensor,
    distances: np.ndarray,
    walks: WalkConfig,
    negative_ratio: float,
    rng: np.random.Generator,
) -> Tensor:
    """Pull walk neighbours together, push sampled strangers apart."""
    n = node_embeddings.shape[0]
    neighborhoods = random_walk_neighborhoods(distances, walks, rng)
    pos_pairs, neg_pairs = [], []
    for k in range(n):
        positives = neighborhoods[k]
        for j in positives:
            pos_pairs.append((k, j))
        complement = [j for j in range(n) if j != k and j not in positives]
        if complement and walks.negatives_per_node > 0:
            take = min(walks.negatives_per_node, len(complement))
            chosen = rng.choice(len(complement), size=take, replace=False)
            for idx in sorted(chosen.tolist()):
                neg_pairs.append((k, complement[idx]))

    def dots(pairs):
        ks = [p[0] for p in pairs]
        js = [p[1] for p in pairs]
        return nm.sum_cols(
            nm.mul(nm.gather_rows(node_embeddings, ks), nm.gather_rows(node_embeddings, js))
        )

    loss = nm.constant(0.0)
    if pos_pairs:
        loss = loss - nm.total(nm.log_sigmoid(dots(pos_pairs)))
    if neg_pairs and negative_ratio > 0:
        loss = loss - negative_ratio * nm.total(nm.log_sigmoid(-dots(neg_pairs)))
    return loss


def _cross_entropy_rows(logits: Tensor, targets: list[int]) -> Tensor:
    """Mean negative log-likelihood of the target column per row."""
    logp = nm.log_softmax_rows(logits)
    one_hot = np.zeros(logits.shape)
    for row, col in enumerate(targets):
        one_hot[row, col] = 1.0
    return -nm.total(nm.mul(logp, nm.constant(one_hot))) * (1.0 / len(targets))


def edge_scoring_loss(
    params: GtnParams,
    node_embeddings: Tensor,
    edge_embeddings: Tensor,
    gt_ids: list[int | None],
) -> Tensor:
    """Two-class cross-entropy on the link classifier over labeled pairs.

    A pair is labeled linked iff both nodes carry the same ground-truth
    identity; both pair orders contribute, matching the symmetrized scorer.
    Linked pairs are a small minority of a complete graph, so the loss
    averages per class and then across the two classes, keeping the
    classifier from collapsing onto the "not linked" prior.
    """
    n = len(gt_ids)
    pairs = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if gt_ids[i] is not None and gt_ids[j] is not None
    ]
    if not pairs:
        return nm.constant(0.0)
    labels = [1 if gt_ids[i] == gt_ids[j] else 0 for i, j in pairs]
    ks = [p[0] for p in pairs]
    js = [p[1] for p in pairs]
    edge_rows = [k * n + j for k, j in pairs]
    h_i = nm.gather_rows(node_embeddings, ks)
    h_j = nm.gather_rows(node_embeddings, js)
    e_ij = nm.gather_rows(edge_embeddings, edge_rows)
    logits_fwd = edge_score_logits(params, h_i, h_j, e_ij)
    logits_bwd = edge_score_logits(params, h_j, h_i, e_ij)
    logp_fwd = nm.log_softmax_rows(logits_fwd)
    logp_bwd = nm.log_softmax_rows(logits_bwd)
    per_class: list[Tensor] = []
    for label_value in (0, 1):
        rows = [row for row, label in enumerate(labels) if label == label_value]
        if not rows:
            continue
        col_lo, col_hi = label_value, label_value + 1
        picked = nm.concat_rows([
            nm.slice_cols(nm.gather_rows(logp_fwd, rows), col_lo, col_hi),
            nm.slice_cols(nm.gather_rows(logp_bwd, rows), col_lo, col_hi),
        ])
        per_class.append(-nm.mean_all(picked))
    total = per_class[0]
    for term in per_class[1:]:
        total = total + term
    return total * (1.0 / len(per_class))


def _scalar(t: Tensor, row: int, col: int) -> Tensor:
    return nm.slice_cols(nm.slice_rows(t, row, row + 1), col, col + 1)


def _gt_param_vector(gt: GtBox) -> np.ndarray:
    """(center, log-size, sin yaw, cos yaw) regression target."""
    return np.concatenate(
        [gt.center, np.log(gt.size), [np.sin(gt.yaw), np.cos(gt.yaw)]]
    )


def _pred_param_matrix(pred, rows: list[int]) -> Tensor:
    """Differentiable (len(rows) x 8) box-parameter matrix."""
    loc = nm.gather_rows(pred.location, rows)
    log_size = nm.log(nm.gather_rows(pred.size, rows))
    yaw = nm.gather_rows(pred.yaw, rows)
    return nm.concat_cols([loc, log_size, nm.sin(yaw), nm.cos(yaw)])


def _giou_term(pred, row: int, gt: GtBox) -> Tensor:
    value = giou_3d_parts(
        tuple(_scalar(pred.location, row, a) for a in range(3)),
        tuple(_scalar(pred.size, row, a) for a in range(3)),
        _scalar(pred.yaw, row, 0),
        tuple(gt.center),
        tuple(gt.size),
        gt.yaw,
    )
    return value if isinstance(value, Tensor) else nm.constant(value)


def _matching_cost(pred, gt_boxes: list[GtBox], weights: LossWeights, class_index) -> np.ndarray:
    """Value-only assignment costs between prediction rows and gt boxes."""
    n_pred = pred.class_logits.shape[0]
    logp = nm.log_softmax_rows(pred.class_logits).value
    pred_params = np.hstack([
        pred.location.value,
        np.log(pred.size.value),
        np.sin(pred.yaw.value),
        np.cos(pred.yaw.value),
    ])
    cost = np.zeros((n_pred, len(gt_boxes)))
    for j, gt in enumerate(gt_boxes):
        gt_params = _gt_param_vector(gt)
        for i in range(n_pred):
            ce = -logp[i, class_index(gt.label)]
            l1 = float(np.abs(pred_params[i] - gt_params).sum())
            giou = giou_3d_parts(
                tuple(pred.location.value[i]), tuple(pred.size.value[i]),
                float(pred.yaw.value[i, 0]), tuple(gt.center), tuple(gt.size), gt.yaw,
            )
            cost[i, j] = (
                weights.lambda_cls * ce + weights.lambda_box * l1
                + weights.lambda_iou * (1.0 - giou)
            )
    return cost


def _cross_entropy_sum(logits: Tensor, targets: list[int]) -> Tensor:
    """Summed negative log-likelihood of the target column per row."""
    logp = nm.log_softmax_rows(logits)
    one_hot = np.zeros(logits.shape)
    for row, col in enumerate(targets):
        one_hot[row, col] = 1.0
    return -nm.total(nm.mul(logp, nm.constant(one_hot)))


def _group_terms(pred, matched, unmatched, weights, class_index, no_object) -> Tensor:
    """Loss contribution of one prediction group (detections or tracklets)."""
    loss = nm.constant(0.0)
    if matched:
        rows = [row for row, _ in matched]
        targets = [class_index(gt.label) for _, gt in matched]
        loss = loss + weights.lambda_cls * _cross_entropy_sum(
            nm.gather_rows(pred.class_logits, rows), targets
        )
        if weights.lambda_box > 0:
            gt_params = np.stack([_gt_param_vector(gt) for _, gt in matched])
            diff = _pred_param_matrix(pred, rows) - nm.constant(gt_params)
            loss = loss + weights.lambda_box * nm.total(nm.absolute(diff))
        if weights.lambda_iou > 0:
            for row, gt in matched:
                loss = loss + weights.lambda_iou * (1.0 - _giou_term(pred, row, gt))
    if unmatched:
        loss = loss + weights.lambda_cls * _cross_entropy_sum(
            nm.gather_rows(pred.class_logits, unmatched), [no_object] * len(unmatched)
        )
    return loss


def set_loss(
    det_pred,
    tracklet_pred,
    chunk: TrainChunk,
    params: GtnParams,
    weights: LossWeights,
) -> Tensor:
    """Set-prediction loss over detections and tracklet predictions.

    Detections are assigned to ground truth by minimum-cost bipartite
    matching; tracklet predictions are matched by the identity they carry
    from the previous frame.  Unmatched predictions pay classification cost
    against the no-object class.
    """
    config = params.config
    no_object = config.num_classes
    loss = nm.constant(0.0)

    if det_pred is not None:
        matched = []
        if chunk.gt_boxes:
            cost = _matching_cost(det_pred, chunk.gt_boxes, weights, config.class_index)
            matched = [(row, chunk.gt_boxes[gt_idx]) for row, gt_idx in hungarian(cost).pairs]
        matched_rows = {row for row, _ in matched}
        unmatched = [
            row for row in range(det_pred.class_logits.shape[0]) if row not in matched_rows
        ]
        loss = loss + _group_terms(det_pred, matched, unmatched, weights,
                                   config.class_index, no_object)

    if tracklet_pred is not None:
        gt_by_id = {gt.track_id: gt for gt in chunk.gt_boxes}
        matched, unmatched = [], []
        for row, seed in enumerate(chunk.tracklets):
            gt = gt_by_id.get(seed.track_id)
            if gt is None:
                unmatched.append(row)
            else:
                matched.append((row, gt))
        loss = loss + _group_terms(tracklet_pred, matched, unmatched, weights,
                                   config.class_index, no_object)
    return loss


@dataclass
class ChunkLoss:
    total: Tensor
    embedding: float
    edge_scoring: float
    set_prediction: float
    tracklet_pred: object
    detection_pred: object


def chunk_loss(params: GtnParams, chunk: TrainChunk, config: TrainConfig, seed: int) -> ChunkLoss:
    """Full differentiable forward pass over one two-frame chunk.

    The sampling generator is freshly seeded per call so repeated
    evaluations (finite differences, reruns) see an identical objective.
    """
    rng = np.random.default_rng(seed)
    inputs, distances, feature_sims, gt_ids = _chunk_node_arrays(chunk)
    n = inputs.shape[0]
    n_tracklets = len(chunk.tracklets)

    node_emb, edge_dir = self_attention_stack(inputs, distances, feature_sims, params)
    edge_sym = symmetrize_edges(edge_dir, n)

    l_emb = embedding_loss(
        node_emb, distances, config.walks, config.weights.negative_ratio, rng
    )
    l_edge = edge_scoring_loss(params, node_emb, edge_sym, gt_ids)

    tracklet_pred = None
    if n_tracklets:
        xt = nm.slice_rows(node_emb, 0, n_tracklets)
        xo = nm.slice_rows(node_emb, n_tracklets, n) if n > n_tracklets else None
        z = cross_attention_stack(xt, xo, params)
        tracklet_pred = decode_track_outputs(
            z,
            np.stack([s.center for s in chunk.tracklets]),
            np.stack([s.size for s in chunk.tracklets]),
            np.array([s.yaw for s in chunk.tracklets]),
            params,
        )
    detection_pred = None
    if chunk.detections:
        xo_nodes = nm.slice_rows(node_emb, n_tracklets, n)
        detection_pred = decode_track_outputs(
            xo_nodes,
            np.stack([d.center for d in chunk.detections]),
            np.stack([d.size for d in chunk.detections]),
            np.array([d.yaw for d in chunk.detections]),
            params,
        )
    l_set = set_loss(detection_pred, tracklet_pred, chunk, params, config.weights)

    total = l_emb + l_edge + l_set
    return ChunkLoss(
        total=total,
        embedding=l_emb.item(),
        edge_scoring=l_edge.item(),
        set_prediction=l_set.item(),
        tracklet_pred=tracklet_pred,
        detection_pred=detection_pred,
    )


def total_loss(params: GtnParams, chunk: TrainChunk, config: TrainConfig, seed: int) -> Tensor:
    return chunk_loss(params, chunk, config, seed).total


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment accumulators plus the step counter."""

    def __init__(self, params: GtnParams):
        self.m = {name: np.zeros(params[name].shape) for name in params.names()}
        self.v = {name: np.zeros(params[name].shape) for name in params.names()}
        self.t = 0


def adam_step(
    params: GtnParams,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update from the tensors' .grad slots."""
    state.t += 1
    for name in params.names():
        tensor = params[name]
        grad = tensor.grad
        if grad.shape != tensor.value.shape:
            raise ValueError(f"gradient shape {grad.shape} != value {tensor.value.shape}")
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * grad
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * grad**2
        m_hat = state.m[name] / (1 - beta1**state.t)
        v_hat = state.v[name] / (1 - beta2**state.t)
        tensor.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainStepLog:
    step: int
    chunk_index: int
    total: float
    embedding: float
    edge_scoring: float
    set_prediction: float


def train(
    params: GtnParams, chunks: list[TrainChunk], config: TrainConfig
) -> list[TrainStepLog]:
    """Cycle through chunks for the configured number of Adam steps."""
    if not chunks:
        raise ValueError("no training chunks")
    state = AdamState(params)
    history = []
    for step in range(config.steps):
        chunk_index = step % len(chunks)
        params.zero_grads()
        result = chunk_loss(params, chunks[chunk_index], config,
                            seed=config.seed * 100003 + step)
        nm.backward(result.total)
        adam_step(params, state, lr=config.learning_rate, beta1=config.beta1,
                  beta2=config.beta2, eps=config.adam_eps)
        history.append(
            TrainStepLog(
                step=step,
                chunk_index=chunk_index,
                total=result.total.item(),
                embedding=result.embedding,
                edge_scoring=result.edge_scoring,
                set_prediction=result.set_prediction,
            )
        )
    return history


def evaluate_mean_loss(params: GtnParams, chunks: list[TrainChunk], config: TrainConfig,
                       seed: int) -> float:
    return float(np.mean([
        chunk_loss(params, chunk, config, seed=seed + i).total.item()
        for i, chunk in enumerate(chunks)
    ]))


def write_loss_csv(history: list[TrainStepLog], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,chunk,total,embedding,edge_scoring,set_prediction\n")
        for entry in history:
            fh.write(
                f"{entry.step},{entry.chunk_index},{entry.total!r},{entry.embedding!r},"
                f"{entry.edge_scoring!r},{entry.set_prediction!r}\n"
            )


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(
    params: GtnParams,
    chunk: TrainChunk,
    config: TrainConfig,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central finite-difference gradients
    over every parameter entry.

    Entries where both gradients are below 1e-6 in magnitude count as
    matching zeros (finite differences sit in rounding noise there).
    """
    params.zero_grads()
    result = chunk_loss(params, chunk, config, seed)
    nm.backward(result.total)
    analytic = {name: params[name].grad.copy() for name in params.names()}

    worst = 0.0
    for name in params.names():
        value = params[name].value
        flat = value.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            hi = chunk_loss(params, chunk, config, seed).total.item()
            flat[idx] = original - eps
            lo = chunk_loss(params, chunk, config, seed).total.item()
            flat[idx] = original
            fd = (hi - lo) / (2 * eps)
            a = analytic[name].reshape(-1)[idx]
            scale = max(abs(a), abs(fd))
            if scale > 1e-6:
                worst = max(worst, abs(a - fd) / scale)
    return worst
