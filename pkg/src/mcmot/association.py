"""Edge scoring, node merging, ID assignment and the matching primitives.

Matching for tracklet/detection suppression is greedy by descending link
score (ties broken by detection score, then node id); the optimal
bipartite solver is reserved for the set-prediction loss and metrics.
Same-camera duplicate removal works like non-maximum suppression driven
by the learned link scores.  All graph mutation here is single-threaded
per frame; scoring of independent pairs is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import numeric as nm
from .graph import DETECTION, TRACKLET, GlobalGraph, TrackletNode, edge_key
from .gtn import GtnParams, score_edges
from .numeric import Tensor


@dataclass(frozen=True)
class Assignment:
    """Minimum-cost bipartite matching result."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float


@dataclass
class MergeEvent:
    """One absorbed node: either a detection merged into a tracklet or a
    duplicate suppressed in favour of a surviving node."""

    absorbed: int
    survivor: int
    score: float
    camera: str
    virtual: bool = False


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost assignment of min(n, m) pairs."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return Assignment(pairs=(), total_cost=0.0)
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarian requires finite costs")
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple(sorted(zip(rows.tolist(), cols.tolist())))
    return Assignment(pairs=pairs, total_cost=float(cost[rows, cols].sum()))


# ---------------------------------------------------------------------------
# 3D generalized IoU
#
# The arithmetic below is generic over plain floats and 1x1 autodiff
# tensors: branch decisions read values, the surviving expressions stay
# differentiable.
# ---------------------------------------------------------------------------

def _sval(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def _smax(a, b):
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        a = a if isinstance(a, Tensor) else nm.constant(a)
        return nm.maximum(a, b)
    return max(a, b)


def _smin(a, b):
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        a = a if isinstance(a, Tensor) else nm.constant(a)
        return nm.minimum(a, b)
    return min(a, b)


def _sabs(a):
    return nm.absolute(a) if isinstance(a, Tensor) else abs(a)


def _scos(a):
    return nm.cos(a) if isinstance(a, Tensor) else math.cos(a)


def _ssin(a):
    return nm.sin(a) if isinstance(a, Tensor) else math.sin(a)


def wrap_angle(yaw: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = (yaw + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class Box3D:
    """Upright 3D box: center, (w, l, h) extents, yaw about the vertical."""

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        size = np.asarray(self.size, dtype=np.float64)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if center.shape != (3,) or size.shape != (3,):
            raise ValueError("Box3D needs 3-vector center and size")
        if np.any(size <= 0):
            raise ValueError(f"Box3D size must be positive, got {size}")


def _bev_corners(cx, cy, w, l, yaw):
    """Counter-clockwise footprint corners; length is along the heading."""
    c, s = _scos(yaw), _ssin(yaw)
    hx, hy = c * l * 0.5, s * l * 0.5  # half-length along heading
    wx, wy = -s * w * 0.5, c * w * 0.5  # half-width, perpendicular
    return [
        (cx + hx + wx, cy + hy + wy),
        (cx - hx + wx, cy - hy + wy),
        (cx - hx - wx, cy - hy - wy),
        (cx + hx - wx, cy + hy - wy),
    ]


def _side(a, b, p):
    """Signed area-like term: > 0 when p lies left of the directed line a->b."""
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])


def _side_value(a, b, p) -> float:
    """Value-only variant of _side for branch decisions."""
    ax, ay = _sval(a[0]), _sval(a[1])
    return (_sval(b[0]) - ax) * (_sval(p[1]) - ay) - (_sval(b[1]) - ay) * (_sval(p[0]) - ax)


_CLIP_EPS = 1e-9


def _clip_polygon(subject, clip):
    """Sutherland-Hodgman clip of a polygon by a convex CCW clip polygon.

    Vertices within a thin epsilon band of a clip line count as inside and
    crossings are only synthesized for unambiguous sign changes, which keeps
    the intersection parameter well conditioned when boxes share edges.
    """
    output = subject
    m = len(clip)
    for i in range(m):
        if not output:
            return []
        a, b = clip[i], clip[(i + 1) % m]
        polygon, output = output, []
        n = len(polygon)
        side_values = [_side_value(a, b, p) for p in polygon]
        for j in range(n):
            cur, nxt = polygon[j], polygon[(j + 1) % n]
            v_cur, v_nxt = side_values[j], side_values[(j + 1) % n]
            if v_cur >= -_CLIP_EPS:
                output.append(cur)
            crosses = (v_cur > _CLIP_EPS and v_nxt < -_CLIP_EPS) or (
                v_cur < -_CLIP_EPS and v_nxt > _CLIP_EPS
            )
            if crosses:
                s_cur = _side(a, b, cur)
                s_nxt = _side(a, b, nxt)
                t = s_cur / (s_cur - s_nxt)
                output.append(
                    (cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1]))
                )
    return output


def _polygon_area(points):
    """Absolute shoelace area; plain-float input is summed exactly rounded
    so congruent polygons in different cyclic order agree bitwise."""
    if len(points) < 3:
        return 0.0
    n = len(points)
    terms = []
    for i in range(n):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % n]
        terms.append(x1 * y2 - x2 * y1)
    if all(not isinstance(t, Tensor) for t in terms):
        return abs(math.fsum(terms) * 0.5)
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return _sabs(acc * 0.5)


def _convex_hull(points):
    """Andrew's monotone chain over scalar points (CCW output).

    Sorting, deduplication and turn tests read values only; the surviving
    vertices keep their (possibly differentiable) coordinates.
    """
    deduped = []
    seen = set()
    for p in points:
        key = (_sval(p[0]), _sval(p[1]))
        if key not in seen:
            seen.add(key)
            deduped.append(p)
    pts = sorted(deduped, key=lambda p: (_sval(p[0]), _sval(p[1])))
    if len(pts) <= 2:
        return pts

    def build(sequence):
        chain = []
        for p in sequence:
            while len(chain) >= 2 and _side_value(chain[-2], chain[-1], p) <= 0.0:
                chain.pop()
            chain.append(p)
        return chain

    lower = build(pts)
    upper = build(reversed(pts))
    return lower[:-1] + upper[:-1]


def giou_3d_parts(a_center, a_size, a_yaw, b_center, b_size, b_yaw):
    """Generalized IoU of two upright boxes given as scalar parts.

    IoU is the rotated footprint intersection times the vertical overlap
    over the union; the enclosing hull is the convex hull of both
    footprints times the joint height range.  Volumes are derived from the
    same footprint/extent primitives, so identical boxes give exactly 1.
    """
    (ax, ay, az), (aw, al, ah) = a_center, a_size
    (bx, by, bz), (bw, bl, bh) = b_center, b_size
    if _sval(aw) * _sval(al) * _sval(ah) <= 0 or _sval(bw) * _sval(bl) * _sval(bh) <= 0:
        raise ValueError("giou_3d: degenerate zero-volume box")
    corners_a = _bev_corners(ax, ay, aw, al, a_yaw)
    corners_b = _bev_corners(bx, by, bw, bl, b_yaw)
    area_a = _polygon_area(corners_a)
    area_b = _polygon_area(corners_b)
    bev_inter = _polygon_area(_clip_polygon(corners_a, corners_b))

    top_a, bot_a = az + ah * 0.5, az - ah * 0.5
    top_b, bot_b = bz + bh * 0.5, bz - bh * 0.5
    z_overlap = _smax(0.0, _smin(top_a, top_b) - _smax(bot_a, bot_b))

    inter = bev_inter * z_overlap
    union = area_a * (top_a - bot_a) + area_b * (top_b - bot_b) - inter
    hull = _polygon_area(_convex_hull(corners_a + corners_b)) * (
        _smax(top_a, top_b) - _smin(bot_a, bot_b)
    )
    return inter / union - (hull - union) / hull


def giou_3d(a: Box3D, b: Box3D) -> float:
    value = giou_3d_parts(
        tuple(a.center), tuple(a.size), a.yaw, tuple(b.center), tuple(b.size), b.yaw
    )
    return float(value)


# ---------------------------------------------------------------------------
# graph-level scoring and merging
# ---------------------------------------------------------------------------

def score_graph_edges(graph: GlobalGraph, params: GtnParams) -> dict[tuple[int, int], float]:
    """Link probability for every edge whose endpoints carry embeddings.

    Scores are symmetrized over pair order and written back onto the edges
    as the new edge weights.
    """
    keys = sorted(k for k, e in graph.edges.items() if e.edge_embedding is not None)
    keys = [
        k
        for k in keys
        if graph.nodes[k[0]].embedding is not None and graph.nodes[k[1]].embedding is not None
    ]
    if not keys:
        return {}
    h_i = Tensor(np.stack([graph.nodes[a].embedding for a, _ in keys]))
    h_j = Tensor(np.stack([graph.nodes[b].embedding for _, b in keys]))
    e_ij = Tensor(np.stack([graph.edges[k].edge_embedding for k in keys]))
    s = score_edges(params, h_i, h_j, e_ij).value[:, 0]
    scores = {}
    for key, value in zip(keys, s):
        scores[key] = float(value)
        graph.edges[key].similarity = float(value)
    return scores


def _merge_detection_into_tracklet(
    graph: GlobalGraph, tracklet: TrackletNode, det: TrackletNode
) -> None:
    tracklet.feature = det.feature.copy()
    tracklet.location = det.location.copy()
    tracklet.size = det.size.copy()
    tracklet.yaw = det.yaw
    tracklet.camera = det.camera
    tracklet.camera_encoding = det.camera_encoding.copy()
    tracklet.score = det.score
    tracklet.label = det.label
    if det.embedding is not None:
        tracklet.embedding = det.embedding.copy()
    tracklet.age = 0
    tracklet.hits += 1


def suppress_matched_detections(
    graph: GlobalGraph, scores: dict[tuple[int, int], float], threshold_match: float
) -> list[MergeEvent]:
    """Merge detections into tracklets, greedily by descending link score.

    Each tracklet absorbs at most one detection per frame.  Real detections
    are matched first; a virtual observation from motion propagation only
    back-fills its own parent tracklet when that found no real match, so a
    propagated guess can never outcompete image evidence or jump tracks.
    """
    events: list[MergeEvent] = []
    used_tracklets: set[int] = set()
    used_detections: set[int] = set()

    def run_pass(virtual: bool):
        candidates = []
        for tid in graph.tracklet_ids():
            for did in graph.detection_ids():
                node = graph.nodes[did]
                if node.is_virtual != virtual:
                    continue
                if virtual and node.propagated_from != tid:
                    continue
                s = scores.get(edge_key(tid, did))
                if s is not None and s >= threshold_match:
                    candidates.append((s, node.score, did, tid))
        candidates.sort(key=lambda c: (-c[0], -c[1], c[2], c[3]))
        for s, _, did, tid in candidates:
            if tid in used_tracklets or did in used_detections:
                continue
            det = graph.nodes[did]
            _merge_detection_into_tracklet(graph, graph.nodes[tid], det)
            graph.remove_node(did)
            used_tracklets.add(tid)
            used_detections.add(did)
            events.append(
                MergeEvent(absorbed=did, survivor=tid, score=s, camera=det.camera,
                           virtual=virtual)
            )

    run_pass(virtual=False)
    run_pass(virtual=True)
    return events


def drop_virtual_detections(graph: GlobalGraph) -> list[int]:
    """Remove leftover propagated observations; they never become tracks."""
    dropped = [did for did in graph.detection_ids() if graph.nodes[did].is_virtual]
    for did in dropped:
        graph.remove_node(did)
    return dropped


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self) -> list[list[int]]:
        by_root: dict[int, list[int]] = {}
        for item in self.parent:
            by_root.setdefault(self.find(item), []).append(item)
        return [sorted(v) for _, v in sorted(by_root.items())]


def merge_same_camera_nodes(
    graph: GlobalGraph, scores: dict[tuple[int, int], float], threshold_dup: float
) -> list[MergeEvent]:
    """NMS-like fusion of same-camera duplicate detections.

    High-similarity same-camera detections are grouped transitively and the
    best-scored node of each group survives.
    """
    det_ids = graph.detection_ids()
    uf = _UnionFind(det_ids)
    for i, a in enumerate(det_ids):
        for b in det_ids[i + 1 :]:
            if graph.nodes[a].camera != graph.nodes[b].camera:
                continue
            s = scores.get(edge_key(a, b))
            if s is not None and s >= threshold_dup:
                uf.union(a, b)
    events = []
    for group in uf.groups():
        if len(group) < 2:
            continue
        survivor = max(group, key=lambda nid: (graph.nodes[nid].score, -nid))
        for nid in group:
            if nid == survivor:
                continue
            s = scores.get(edge_key(nid, survivor), threshold_dup)
            events.append(
                MergeEvent(absorbed=nid, survivor=survivor, score=float(s),
                           camera=graph.nodes[nid].camera)
            )
            graph.remove_node(nid)
    return events


def assign_ids(
    graph: GlobalGraph, scores: dict[tuple[int, int], float], threshold_global: float
) -> dict[int, int]:
    """Promote surviving detections to tracklets and unify cross-camera ids.

    Cross-camera tracklet pairs scoring at or above the threshold adopt the
    smaller track id permanently; a unification is skipped when it would
    leave two same-camera tracklets sharing an id.
    """
    for did in graph.detection_ids():
        node = graph.nodes[did]
        node.kind = TRACKLET
        node.track_id = graph.allocate_track_id()
        node.age = 0
        node.hits = max(node.hits, 1)

    tracklet_ids = graph.tracklet_ids()
    uf = _UnionFind(tracklet_ids)
    pairs = []
    for i, a in enumerate(tracklet_ids):
        for b in tracklet_ids[i + 1 :]:
            if graph.nodes[a].camera == graph.nodes[b].camera:
                continue
            s = scores.get(edge_key(a, b))
            if s is not None and s >= threshold_global:
                pairs.append((s, a, b))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    for _, a, b in pairs:
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        cameras_a = {graph.nodes[n].camera for n in tracklet_ids if uf.find(n) == ra}
        cameras_b = {graph.nodes[n].camera for n in tracklet_ids if uf.find(n) == rb}
        if cameras_a & cameras_b:
            continue
        uf.union(a, b)

    mapping: dict[int, int] = {}
    for group in uf.groups():
        shared = min(graph.nodes[n].track_id for n in group)
        for n in group:
            graph.nodes[n].track_id = shared
            mapping[n] = shared
    return mapping
