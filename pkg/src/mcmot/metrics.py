"""Detection and tracking evaluation.

Detection metrics follow the center-distance family: predictions are
matched per (frame, camera, class) to ground truth by 2D ground-plane
distance, greedily in descending score order, and AP is integrated from
the interpolated precision-recall curve.  Tracking metrics are the CLEAR
family (MOTA, MOTP, IDS, FRAG, MT, ML) over global per-frame tracks,
plus recall-averaged AMOTA/AMOTP.

All functions are pure over their inputs; nothing here draws randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .association import hungarian
from .graph import Detection
from .records import GroundTruthRow, TrackRecord

NDS_ERROR_KEYS = ("mATE", "mASE", "mAOE", "mAVE", "mAAE")


@dataclass(frozen=True)
class DetEvalConfig:
    center_dist_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    tp_threshold: float = 2.0

    def __post_init__(self):
        thresholds = tuple(float(t) for t in self.center_dist_thresholds)
        object.__setattr__(self, "center_dist_thresholds", thresholds)
        if any(t <= 0 for t in thresholds) or list(thresholds) != sorted(thresholds):
            raise ValueError("thresholds must be positive and ascending")


@dataclass
class MetricReport:
    """Named metric values plus per-class breakdown and raw counts."""

    kind: str
    metrics: dict[str, float | None]
    per_class: dict[str, dict] = field(default_factory=dict)
    counts: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "type": self.kind,
            "metrics": self.metrics,
            "per_class": self.per_class,
            "counts": self.counts,
            "notes": self.notes,
        }


def _bev_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


def _pred_sort_key(p: Detection):
    return (-p.score, p.frame, p.camera, p.center[0], p.center[1], p.center[2])


def _greedy_match(preds: list[Detection], gt_rows: list[GroundTruthRow], threshold: float):
    """Score-ranked greedy matching within (frame, camera) groups.

    Returns per-prediction TP flags (in the given, already sorted order)
    and the matched (pred, gt, distance) triples.
    """
    gt_by_group: dict[tuple[int, str], list[tuple[int, GroundTruthRow]]] = {}
    for idx, row in enumerate(gt_rows):
        gt_by_group.setdefault((row.frame, row.camera), []).append((idx, row))
    taken: set[int] = set()
    tp_flags = []
    matches = []
    for pred in preds:
        best_idx, best_row, best_dist = None, None, threshold
        for idx, row in gt_by_group.get((pred.frame, pred.camera), []):
            if idx in taken:
                continue
            dist = _bev_distance(pred.center, row.center)
            if dist <= best_dist:
                best_idx, best_row, best_dist = idx, row, dist
        if best_idx is None:
            tp_flags.append(False)
        else:
            taken.add(best_idx)
            tp_flags.append(True)
            matches.append((pred, best_row, best_dist))
    return tp_flags, matches


def _average_precision(tp_flags: list[bool], n_gt: int) -> float:
    """Area under the interpolated precision-recall curve."""
    if n_gt == 0:
        return 0.0
    tp_cum = fp_cum = 0
    recalls, precisions = [], []
    for flag in tp_flags:
        tp_cum += int(flag)
        fp_cum += int(not flag)
        recalls.append(tp_cum / n_gt)
        precisions.append(tp_cum / (tp_cum + fp_cum))
    # right-to-left running max interpolates the precision envelope
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for recall, precision, flag in zip(recalls, precisions, tp_flags):
        if flag:
            ap += (recall - prev_recall) * precision
            prev_recall = recall
    return ap


def _aligned_iou(size_a: np.ndarray, size_b: np.ndarray) -> float:
    inter = float(np.prod(np.minimum(size_a, size_b)))
    union = float(np.prod(size_a) + np.prod(size_b) - inter)
    return inter / union


def _yaw_error(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def eval_detection(
    preds: list[Detection], gt_rows: list[GroundTruthRow], config: DetEvalConfig | None = None
) -> MetricReport:
    """AP over the distance thresholds plus the true-positive error family."""
    config = config or DetEvalConfig()
    notes: list[str] = []
    gt_classes = sorted({g.label for g in gt_rows})
    pred_only = sorted({p.label for p in preds} - set(gt_classes))
    for label in pred_only:
        notes.append(f"class {label!r} has predictions but no ground truth; skipped")

    per_class: dict[str, dict] = {}
    tp_total = fp_total = fn_total = 0
    for label in gt_classes:
        cls_gt = [g for g in gt_rows if g.label == label]
        cls_preds = sorted((p for p in preds if p.label == label), key=_pred_sort_key)
        ap_by_threshold = {}
        for threshold in config.center_dist_thresholds:
            flags, _ = _greedy_match(cls_preds, cls_gt, threshold)
            ap_by_threshold[f"{threshold:g}"] = _average_precision(flags, len(cls_gt))
        flags, matches = _greedy_match(cls_preds, cls_gt, config.tp_threshold)
        tp = sum(flags)
        fp = len(flags) - tp
        fn = len(cls_gt) - tp
        tp_total, fp_total, fn_total = tp_total + tp, fp_total + fp, fn_total + fn

        entry: dict = {
            "ap": ap_by_threshold,
            "counts": {"tp": tp, "fp": fp, "fn": fn, "gt": len(cls_gt)},
        }
        if matches:
            entry["ate"] = float(np.mean([d for _, _, d in matches]))
            entry["ase"] = float(
                np.mean([1.0 - _aligned_iou(p.size, g.size) for p, g, _ in matches])
            )
            entry["aoe"] = float(np.mean([_yaw_error(p.yaw, g.yaw) for p, g, _ in matches]))
            velocity_errors = [
                _bev_distance(getattr(p, "velocity"), g.velocity)
                for p, g, _ in matches
                if getattr(p, "velocity", None) is not None and g.velocity is not None
            ]
            entry["ave"] = float(np.mean(velocity_errors)) if velocity_errors else None
            entry["aae"] = None  # attribute labels are not part of this artifact's inputs
        else:
            entry.update({"ate": None, "ase": None, "aoe": None, "ave": None, "aae": None})
        per_class[label] = entry

    def mean_over_classes(key: str) -> float | None:
        values = [per_class[c][key] for c in gt_classes if per_class[c][key] is not None]
        return float(np.mean(values)) if values else None

    if gt_classes:
        m_ap = float(np.mean([
            np.mean(list(per_class[c]["ap"].values())) for c in gt_classes
        ]))
    else:
        m_ap = 0.0
        notes.append("no ground-truth objects; mAP reported as 0")

    metrics: dict[str, float | None] = {
        "mAP": m_ap,
        "mATE": mean_over_classes("ate"),
        "mASE": mean_over_classes("ase"),
        "mAOE": mean_over_classes("aoe"),
        "mAVE": mean_over_classes("ave"),
        "mAAE": mean_over_classes("aae"),
    }
    gt_count = tp_total + fn_total
    counts = {
        "tp": tp_total,
        "fp": fp_total,
        "fn": fn_total,
        "gt": gt_count,
        "recall": tp_total / gt_count if gt_count else 0.0,
        "precision": tp_total / (tp_total + fp_total) if (tp_total + fp_total) else 0.0,
    }
    report = MetricReport(kind="detection", metrics=metrics, per_class=per_class,
                          counts=counts, notes=notes)
    try:
        report.metrics["NDS"] = compute_nds(report)
    except ValueError:
        report.metrics["NDS"] = None
        report.notes.append("NDS unavailable: missing true-positive error components")
    return report


def nds_from_components(m_ap: float, errors: dict[str, float]) -> float:
    """Additive weighting: (5*mAP + sum over errors of (1 - min(1, e))) / 10."""
    missing = [k for k in NDS_ERROR_KEYS if errors.get(k) is None]
    if missing:
        raise ValueError(f"NDS needs {', '.join(missing)}")
    total = 5.0 * m_ap
    for key in NDS_ERROR_KEYS:
        total += 1.0 - min(1.0, errors[key])
    return total / 10.0


def compute_nds(report: MetricReport) -> float:
    if report.metrics.get("mAP") is None:
        raise ValueError("NDS needs mAP")
    return nds_from_components(
        report.metrics["mAP"], {k: report.metrics.get(k) for k in NDS_ERROR_KEYS}
    )


# ---------------------------------------------------------------------------
# CLEAR MOT
# ---------------------------------------------------------------------------

def _dedupe_gt(gt_rows: list[GroundTruthRow]) -> dict[int, dict[int, GroundTruthRow]]:
    """frame -> track_id -> one world-space row (camera copies collapse)."""
    frames: dict[int, dict[int, GroundTruthRow]] = {}
    for row in gt_rows:
        frames.setdefault(row.frame, {}).setdefault(row.track_id, row)
    return frames


def eval_clearmot(
    pred_tracks: list[TrackRecord],
    gt_rows: list[GroundTruthRow],
    dist_threshold: float = 2.0,
) -> MetricReport:
    """Frame-by-frame gated matching with identity persistence.

    Existing correspondences are kept while still within the gate; the
    remainder is matched by minimum total distance.  A ground-truth object
    re-acquired under a different track id counts one identity switch; a
    coverage gap counts one fragmentation when tracking resumes.
    """
    gt_frames = _dedupe_gt(gt_rows)
    pred_frames: dict[int, dict[int, TrackRecord]] = {}
    for rec in pred_tracks:
        pred_frames.setdefault(rec.frame, {}).setdefault(rec.track_id, rec)

    frames = sorted(set(gt_frames) | set(pred_frames))
    last_match: dict[int, int] = {}  # gt id -> last matched pred id
    was_matched: dict[int, bool] = {}  # gt id -> matched at previous visible frame
    coverage: dict[int, int] = {}
    lifetime: dict[int, int] = {}
    tp = fp = fn = ids = frag = 0
    dist_sum = 0.0

    for frame in frames:
        gts = gt_frames.get(frame, {})
        preds = pred_frames.get(frame, {})
        gt_ids = sorted(gts)
        pred_ids = sorted(preds)
        for gid in gt_ids:
            lifetime[gid] = lifetime.get(gid, 0) + 1

        matched_gt: dict[int, int] = {}
        free_preds = set(pred_ids)
        # keep last frame's correspondence while it stays within the gate
        for gid in gt_ids:
            pid = last_match.get(gid)
            if pid in free_preds:
                dist = _bev_distance(gts[gid].center, preds[pid].center)
                if dist <= dist_threshold:
                    matched_gt[gid] = pid
                    free_preds.discard(pid)
                    dist_sum += dist
        # assign the remainder by minimum total distance
        rest_gt = [g for g in gt_ids if g not in matched_gt]
        rest_pred = sorted(free_preds)
        if rest_gt and rest_pred:
            big = 1e6
            cost = np.full((len(rest_gt), len(rest_pred)), big)
            for i, gid in enumerate(rest_gt):
                for j, pid in enumerate(rest_pred):
                    dist = _bev_distance(gts[gid].center, preds[pid].center)
                    if dist <= dist_threshold:
                        cost[i, j] = dist
            for i, j in hungarian(cost).pairs:
                if cost[i, j] < big:
                    gid, pid = rest_gt[i], rest_pred[j]
                    matched_gt[gid] = pid
                    free_preds.discard(pid)
                    dist_sum += cost[i, j]

        tp += len(matched_gt)
        fn += len(gt_ids) - len(matched_gt)
        fp += len(free_preds)
        for gid in gt_ids:
            pid = matched_gt.get(gid)
            if pid is not None:
                if gid in last_match and last_match[gid] != pid:
                    ids += 1
                if gid in was_matched and not was_matched[gid] and gid in last_match:
                    frag += 1
                last_match[gid] = pid
                coverage[gid] = coverage.get(gid, 0) + 1
                was_matched[gid] = True
            else:
                was_matched[gid] = False

    gt_total = sum(lifetime.values())
    mostly_tracked = sum(
        1 for gid in lifetime if coverage.get(gid, 0) / lifetime[gid] >= 0.8
    )
    mostly_lost = sum(
        1 for gid in lifetime if coverage.get(gid, 0) / lifetime[gid] <= 0.2
    )
    metrics = {
        "MOTA": 1.0 - (fn + fp + ids) / gt_total if gt_total else None,
        "MOTP": dist_sum / tp if tp else 0.0,
        "IDS": float(ids),
        "FRAG": float(frag),
        "MT": float(mostly_tracked),
        "ML": float(mostly_lost),
    }
    counts = {"tp": tp, "fp": fp, "fn": fn, "ids": ids, "frag": frag,
              "gt": gt_total, "tracks_gt": len(lifetime)}
    return MetricReport(kind="tracking", metrics=metrics, counts=counts)


def track_confidences(pred_tracks: list[TrackRecord]) -> dict[int, float]:
    """Per-track confidence: mean record score."""
    scores: dict[int, list[float]] = {}
    for rec in pred_tracks:
        scores.setdefault(rec.track_id, []).append(rec.score)
    return {tid: float(np.mean(v)) for tid, v in scores.items()}


def eval_amota_amotp(
    pred_tracks: list[TrackRecord],
    gt_rows: list[GroundTruthRow],
    dist_threshold: float = 2.0,
    recall_points: int = 40,
) -> tuple[float, float]:
    """Recall-averaged MOTA / MOTP over a confidence sweep.

    For each of `recall_points` evenly spaced recall targets the sweep
    picks the lowest-recall operating point at or above the target and
    scores the recall-normalized MOTA (clamped to [0, 1]); unreachable
    targets contribute 0 (and the gate distance for AMOTP).
    """
    gt_total = sum(len(v) for v in _dedupe_gt(gt_rows).values())
    if gt_total == 0:
        raise ValueError("AMOTA needs ground-truth objects")
    confidences = track_confidences(pred_tracks)
    operating_points = []
    for threshold in sorted(set(confidences.values()), reverse=True):
        kept = [r for r in pred_tracks if confidences[r.track_id] >= threshold]
        report = eval_clearmot(kept, gt_rows, dist_threshold)
        recall = report.counts["tp"] / gt_total
        operating_points.append(
            {
                "recall": recall,
                "ids": report.counts["ids"],
                "fp": report.counts["fp"],
                "fn": report.counts["fn"],
                "motp": report.metrics["MOTP"],
            }
        )

    motar_values, motp_values = [], []
    for target in np.linspace(1.0 / recall_points, 1.0, recall_points):
        feasible = [p for p in operating_points if p["recall"] >= target]
        if not feasible:
            motar_values.append(0.0)
            motp_values.append(dist_threshold)
            continue
        point = min(feasible, key=lambda p: p["recall"])
        numerator = point["ids"] + point["fp"] + point["fn"] - (1.0 - target) * gt_total
        motar = 1.0 - numerator / (target * gt_total)
        motar_values.append(float(np.clip(motar, 0.0, 1.0)))
        motp_values.append(point["motp"])
    return float(np.mean(motar_values)), float(np.mean(motp_values))


def detection_pr_points(
    preds: list[Detection], gt_rows: list[GroundTruthRow], threshold: float
) -> list[dict]:
    """Cumulative (recall, fp, precision) points along the score ranking."""
    ordered = sorted(preds, key=_pred_sort_key)
    flags, _ = _greedy_match(ordered, gt_rows, threshold)
    n_gt = len(gt_rows)
    points = []
    tp_cum = fp_cum = 0
    for flag in flags:
        tp_cum += int(flag)
        fp_cum += int(not flag)
        points.append(
            {
                "recall": tp_cum / n_gt if n_gt else 0.0,
                "fp": fp_cum,
                "precision": tp_cum / (tp_cum + fp_cum),
            }
        )
    return points


def false_positives_at_recall(points: list[dict], recall: float) -> float:
    """Smallest false-positive count among points reaching the recall level."""
    feasible = [p["fp"] for p in points if p["recall"] >= recall - 1e-12]
    return float(min(feasible)) if feasible else float("inf")
