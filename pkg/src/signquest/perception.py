"""Signage understanding: the fused 3D text-instance bank and similarity
retrieval against the offline feature pool.

Instance features are stored as the exact running mean of the raw observed
unit features (never re-normalized); cosine similarity downstream is scale
invariant, so the mean is kept verbatim to preserve the fusion arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeaturePool
from .venue import TopoGraph, h_hop_neighbors
from .world import Detection2D

__all__ = [
    "TextInstance3D",
    "SignageMap",
    "fuse_detection",
    "periodic_merge",
    "retrieve_label",
    "recognition_scope",
]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return -1.0
    return float(np.dot(a, b) / (na * nb))


@dataclass
class TextInstance3D:
    """A fused 3D text instance: union of surface points plus the running
    mean of the contributing features."""

    uid: int
    points: list[tuple[float, float, float]]
    feature: np.ndarray
    n_views: int = 1
    label: int | None = None
    score: float = -1.0
    view_dir: np.ndarray = field(default_factory=lambda: np.zeros(2))
    sources: set[int] = field(default_factory=set)

    @property
    def centroid(self) -> np.ndarray:
        return np.mean(np.asarray(self.points, dtype=np.float64), axis=0)

    def centroid_2d(self) -> tuple[float, float]:
        c = self.centroid
        return (float(c[0]), float(c[1]))

    def outward_normal(self) -> tuple[float, float]:
        """Estimated sign normal from the located region's geometry: the
        minor principal axis of the surface points in the plane, signed
        toward the side the sign was observed from. Falls back to the mean
        observation direction when the points are degenerate."""
        pts = np.asarray(self.points, dtype=np.float64)[:, :2]
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered
        evals, evecs = np.linalg.eigh(cov)
        normal = evecs[:, 0]  # eigh sorts ascending; column 0 = minor axis
        if evals[1] < 1e-12:  # points collapse to one location
            normal = self.view_dir
        n = float(np.linalg.norm(normal))
        if n < 1e-12:
            return (1.0, 0.0)
        nx_, ny_ = normal[0] / n, normal[1] / n
        if nx_ * self.view_dir[0] + ny_ * self.view_dir[1] < 0:
            nx_, ny_ = -nx_, -ny_
        return (float(nx_), float(ny_))


class SignageMap:
    """The online 3D text bank."""

    def __init__(self) -> None:
        self.instances: list[TextInstance3D] = []
        self._next_uid = 0

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def by_uid(self, uid: int) -> TextInstance3D:
        for inst in self.instances:
            if inst.uid == uid:
                return inst
        raise KeyError(uid)

    def new_instance(self, det: Detection2D) -> int:
        inst = TextInstance3D(
            uid=self._next_uid,
            points=_point_set(det.surface_points),
            feature=np.array(det.feature, dtype=np.float64),
            n_views=1,
            view_dir=np.array(det.view_dir, dtype=np.float64),
            sources={det.signage_id},
        )
        self._next_uid += 1
        self.instances.append(inst)
        return len(self.instances) - 1

    def export(self) -> list[dict]:
        out = []
        for inst in self.instances:
            c = inst.centroid
            out.append(
                {
                    "centroid": [float(c[0]), float(c[1]), float(c[2])],
                    "n_views": inst.n_views,
                    "label": inst.label,
                    "score": float(inst.score),
                    "points_count": len(inst.points),
                }
            )
        return out


def _point_set(points: np.ndarray) -> list[tuple[float, float, float]]:
    return [(float(p[0]), float(p[1]), float(p[2])) for p in points]


def _union_points(
    a: list[tuple[float, float, float]], b: list[tuple[float, float, float]]
) -> list[tuple[float, float, float]]:
    seen = set(a)
    out = list(a)
    for p in b:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


def fuse_detection(
    bank: SignageMap, det: Detection2D, gamma_s: float = 0.5, gamma_d: float = 3.0
) -> int:
    """Fuse a detection into the best-matching bank instance, or create a
    new one. Returns the index of the touched instance.

    A match requires cosine similarity >= gamma_s AND centroid distance
    <= gamma_d; among matches the highest similarity wins, ties broken by
    smaller distance then lower index.
    """
    det_centroid = np.mean(det.surface_points, axis=0)
    best: tuple[float, float, int] | None = None  # (-cos, dist, index)
    for j, inst in enumerate(bank.instances):
        cos = _cosine(det.feature, inst.feature)
        if cos < gamma_s:
            continue
        dist = float(np.linalg.norm(det_centroid - inst.centroid))
        if dist > gamma_d:
            continue
        key = (-cos, dist, j)
        if best is None or key < best:
            best = key
    if best is None:
        return bank.new_instance(det)
    j = best[2]
    inst = bank.instances[j]
    n = inst.n_views
    inst.points = _union_points(inst.points, _point_set(det.surface_points))
    inst.feature = (n * inst.feature + det.feature) / (n + 1)
    inst.view_dir = (n * inst.view_dir + np.asarray(det.view_dir)) / (n + 1)
    inst.n_views = n + 1
    inst.sources.add(det.signage_id)
    return j


def periodic_merge(bank: SignageMap, gamma_s: float = 0.5, gamma_d: float = 3.0) -> SignageMap:
    """Merge redundant instances until no pair satisfies both fusion gates.

    Pairs are scanned lowest-index-first; the merged feature is the
    view-count-weighted mean, so it remains the exact running mean of all
    raw features that ever contributed.
    """
    merged = True
    while merged:
        merged = False
        n_inst = len(bank.instances)
        for i in range(n_inst):
            for j in range(i + 1, n_inst):
                a, b = bank.instances[i], bank.instances[j]
                if _cosine(a.feature, b.feature) < gamma_s:
                    continue
                if float(np.linalg.norm(a.centroid - b.centroid)) > gamma_d:
                    continue
                total = a.n_views + b.n_views
                a.feature = (a.n_views * a.feature + b.n_views * b.feature) / total
                a.view_dir = (a.n_views * a.view_dir + b.n_views * b.view_dir) / total
                a.points = _union_points(a.points, b.points)
                a.n_views = total
                a.sources |= b.sources
                if b.score > a.score:
                    a.label, a.score = b.label, b.score
                del bank.instances[j]
                merged = True
                break
            if merged:
                break
    return bank


def retrieve_label(
    instance: TextInstance3D,
    pool: FeaturePool,
    scope: set[int],
    gamma_recall: float = 0.3,
) -> tuple[int | None, float]:
    """Best-matching landmark for the instance feature within the scope.

    Returns (landmark index, score); the label is None when the best score
    falls below gamma_recall. Ties break toward the lowest landmark index.
    With multi-entry pools, a landmark scores its best entry.
    """
    if not scope:
        raise ValueError("retrieval scope must be non-empty")
    best_per: dict[int, float] = {}
    for idx, feat in pool.entries:
        if idx not in scope:
            continue
        cos = _cosine(instance.feature, feat)
        if idx not in best_per or cos > best_per[idx]:
            best_per[idx] = cos
    if not best_per:
        raise ValueError("scope contains no landmarks present in the pool")
    label = min(best_per, key=lambda k: (-best_per[k], k))
    score = best_per[label]
    if score < gamma_recall:
        return None, score
    return label, score


def recognition_scope(
    g: TopoGraph, prev_landmark: int | None, h: int = 1
) -> set[int]:
    """Landmarks eligible for retrieval: everything before the first
    recognition, afterwards the h-hop neighborhood of the previous one."""
    if prev_landmark is None:
        return set(range(g.n))
    return h_hop_neighbors(g, prev_landmark, h)
