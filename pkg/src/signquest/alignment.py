"""Venue-map to world alignment: a 2D similarity transform estimated from
recognized-landmark correspondences.

The model is world = alpha * (R(theta) @ venue + t), fit by minimizing the
mean squared residual over RANSAC inliers with a closed-form least-squares
solution followed by Levenberg-Marquardt polish.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .perception import SignageMap
from .venue import VenueMap

__all__ = [
    "AlignmentError",
    "Correspondence",
    "MapTransform",
    "estimate_transform",
    "backproject_landmark",
    "correspondences_from_bank",
    "refresh_transform",
]


class AlignmentError(ValueError):
    """Raised when a transform cannot be estimated."""


@dataclass(frozen=True)
class Correspondence:
    venue_pos: tuple[float, float]
    world_pos: tuple[float, float]


@dataclass(frozen=True)
class MapTransform:
    rotation: float  # radians
    translation: tuple[float, float]  # map units
    scale: float
    inlier_count: int = 0
    rms_error: float = 0.0

    def apply(self, venue_pos: tuple[float, float]) -> tuple[float, float]:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        x, y = venue_pos
        tx, ty = self.translation
        return (
            self.scale * (c * x - s * y + tx),
            self.scale * (s * x + c * y + ty),
        )

    def invert_point(self, world_pos: tuple[float, float]) -> tuple[float, float]:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        tx, ty = self.translation
        ux = world_pos[0] / self.scale - tx
        uy = world_pos[1] / self.scale - ty
        return (c * ux + s * uy, -s * ux + c * uy)


def _params_apply(params: np.ndarray, venue: np.ndarray) -> np.ndarray:
    theta, tx, ty, alpha = params
    c, s = math.cos(theta), math.sin(theta)
    out = np.empty_like(venue)
    out[:, 0] = alpha * (c * venue[:, 0] - s * venue[:, 1] + tx)
    out[:, 1] = alpha * (s * venue[:, 0] + c * venue[:, 1] + ty)
    return out


def _fit_similarity(venue: np.ndarray, world: np.ndarray) -> np.ndarray:
    """Closed-form least squares for world ~ alpha(R venue + t).

    Returns [theta, tx, ty, alpha]. Raises AlignmentError when the venue
    points are (numerically) coincident.
    """
    va = venue.mean(axis=0)
    wa = world.mean(axis=0)
    a = venue - va
    b = world - wa
    denom = float(np.sum(a * a))
    if denom < 1e-18:
        raise AlignmentError("degenerate sample: coincident venue points")
    p = float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])) / denom
    q = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])) / denom
    alpha = math.hypot(p, q)
    if alpha < 1e-15:
        raise AlignmentError("degenerate sample: zero scale")
    theta = math.atan2(q, p)
    c, s = math.cos(theta), math.sin(theta)
    # world offset wa = alpha * (R va + t)  =>  t = wa/alpha - R va
    tx = wa[0] / alpha - (c * va[0] - s * va[1])
    ty = wa[1] / alpha - (s * va[0] + c * va[1])
    return np.array([theta, tx, ty, alpha])


def _lm_refine(
    params: np.ndarray,
    venue: np.ndarray,
    world: np.ndarray,
    max_iter: int = 50,
    gtol: float = 1e-10,
    diff_step: float = 1e-6,
) -> np.ndarray:
    """Levenberg-Marquardt on (theta, tx, ty, alpha) with a central-difference
    Jacobian."""

    def residuals(p: np.ndarray) -> np.ndarray:
        return (_params_apply(p, venue) - world).ravel()

    p = params.astype(np.float64).copy()
    r = residuals(p)
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        jac = np.empty((len(r), 4))
        for k in range(4):
            dp = np.zeros(4)
            dp[k] = diff_step
            jac[:, k] = (residuals(p + dp) - residuals(p - dp)) / (2.0 * diff_step)
        g = jac.T @ r
        if float(np.max(np.abs(g))) < gtol:
            break
        h = jac.T @ jac
        stepped = False
        for _ in range(10):
            try:
                delta = np.linalg.solve(h + lam * np.diag(np.diag(h)) + 1e-15 * np.eye(4), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_new = p + delta
            r_new = residuals(p_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                p, r, cost = p_new, r_new, cost_new
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                break
            lam *= 10.0
        if not stepped:
            break
    return p


def estimate_transform(
    corrs: list[Correspondence],
    iterations: int = 200,
    inlier_radius: float = 1.0,
    seed: int = 0,
) -> MapTransform:
    """RANSAC over minimal 2-point samples, then least squares + LM over the
    best inlier set.

    When the number of point pairs is small enough, every pair is tried
    (deterministic and seed independent); otherwise ``iterations`` pairs are
    drawn from a seeded generator.
    """
    n = len(corrs)
    if n < 2:
        raise AlignmentError("at least two correspondences are required")
    venue = np.array([c.venue_pos for c in corrs], dtype=np.float64)
    world = np.array([c.world_pos for c in corrs], dtype=np.float64)

    all_pairs = list(itertools.combinations(range(n), 2))
    if len(all_pairs) <= iterations:
        samples = all_pairs
    else:
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, len(all_pairs), size=iterations)
        samples = [all_pairs[int(k)] for k in picks]

    best_key: tuple[int, float] | None = None  # (-inliers, sq err)
    best_mask: np.ndarray | None = None
    for i, j in samples:
        sub_v = venue[[i, j]]
        sub_w = world[[i, j]]
        try:
            params = _fit_similarity(sub_v, sub_w)
        except AlignmentError:
            continue
        res = np.linalg.norm(_params_apply(params, venue) - world, axis=1)
        mask = res <= inlier_radius
        count = int(mask.sum())
        if count < 2:
            continue
        key = (-count, float(np.sum(res[mask] ** 2)))
        if best_key is None or key < best_key:
            best_key, best_mask = key, mask
    if best_mask is None:
        raise AlignmentError("all RANSAC hypotheses were degenerate")

    in_v, in_w = venue[best_mask], world[best_mask]
    params = _fit_similarity(in_v, in_w)
    params = _lm_refine(params, in_v, in_w)
    res = np.linalg.norm(_params_apply(params, in_v) - in_w, axis=1)
    theta, tx, ty, alpha = (float(v) for v in params)
    return MapTransform(
        rotation=theta,
        translation=(tx, ty),
        scale=alpha,
        inlier_count=int(best_mask.sum()),
        rms_error=float(np.sqrt(np.mean(res**2))),
    )


def backproject_landmark(
    tf: MapTransform, venue_pos: tuple[float, float]
) -> tuple[float, float]:
    """Venue-map position in world coordinates under the fitted transform."""
    return tf.apply(venue_pos)


def correspondences_from_bank(bank: SignageMap, vm: VenueMap) -> list[Correspondence]:
    """One correspondence per confidently labeled landmark: the venue
    position paired with the highest-score instance centroid."""
    by_label: dict[int, list] = {}
    for inst in bank.instances:
        if inst.label is None:
            continue
        by_label.setdefault(inst.label, []).append(inst)
    corrs = []
    for label in sorted(by_label):
        inst = min(by_label[label], key=lambda i: (-i.score, i.uid))
        cx, cy = inst.centroid_2d()
        corrs.append(
            Correspondence(venue_pos=vm.landmarks[label].map_pos, world_pos=(cx, cy))
        )
    return corrs


def refresh_transform(
    bank: SignageMap,
    vm: VenueMap,
    iterations: int = 200,
    inlier_radius: float = 1.0,
    seed: int = 0,
) -> MapTransform | None:
    """Re-estimate the transform from the current bank; None until at least
    two distinct landmarks are confidently recognized."""
    corrs = correspondences_from_bank(bank, vm)
    if len(corrs) < 2:
        return None
    try:
        return estimate_transform(
            corrs, iterations=iterations, inlier_radius=inlier_radius, seed=seed
        )
    except AlignmentError:
        return None
