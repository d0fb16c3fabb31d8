"""
Spatial pattern score
=====================

Each foreground anchor gets a loss weight built from the ground-truth
centers that fall in a square window of side ``window`` around the anchor
center. Every neighbor contributes one rotated, axis-scaled Gaussian per
orientation::

    dx, dy = neighbor - center
    x' =  cos(t) * dx + sin(t) * dy
    y' = -sin(t) * dx + cos(t) * dy
    G  = alpha * exp(-(x'^2 / (2 sx^2) + y'^2 / (2 sy^2)))

and the score is the sum of G over neighbors and orientations. Anchors that
are not foreground score exactly 1, as do foreground anchors with an empty
window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .anchors import FOREGROUND


def default_orientations(r: int = 4) -> tuple[float, ...]:
    """``r`` angles ``k * pi / r`` for ``k = 0 .. r-1``, covering ``[0, pi)``."""
    return tuple(k * math.pi / r for k in range(r))


@dataclass(frozen=True)
class SpatialKernelConfig:
    alpha: float = 1.0
    sigma_x: float = 42.5
    sigma_y: float = 10.0
    orientations: tuple[float, ...] = field(default_factory=default_orientations)
    window: float = 255.0
    normalize: bool = False  # rescale fg scores to mean one per image

    def __post_init__(self):
        object.__setattr__(self, "orientations", tuple(float(t) for t in self.orientations))
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError(f"sigmas must be positive, got {self.sigma_x}, {self.sigma_y}")
        if self.window <= 0:
            raise ValueError(f"window must be positive, got {self.window}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not self.orientations:
            raise ValueError("need at least one orientation")
        if any(not 0.0 <= t < math.pi for t in self.orientations):
            raise ValueError(f"orientations must lie in [0, pi): {self.orientations}")

    @property
    def r(self) -> int:
        return len(self.orientations)


@dataclass(frozen=True)
class NeighborSet:
    center: tuple[float, float]
    neighbors: np.ndarray  # (m, 2) gt centers, in input order

    @property
    def m(self) -> int:
        return len(self.neighbors)


def collect_neighbors(c, gt_centers, window: float) -> NeighborSet:
    """Ground-truth centers inside the closed square of side ``window`` centered at ``c``."""
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    pts = np.asarray(gt_centers, dtype=np.float64).reshape(-1, 2)
    half = window / 2.0
    cx, cy = float(c[0]), float(c[1])
    inside = (np.abs(pts[:, 0] - cx) <= half) & (np.abs(pts[:, 1] - cy) <= half)
    return NeighborSet((cx, cy), pts[inside])


def gaussian_g(c, gt, theta: float, cfg: SpatialKernelConfig) -> float:
    dx = gt[0] - c[0]
    dy = gt[1] - c[1]
    ct, st = math.cos(theta), math.sin(theta)
    xr = ct * dx + st * dy
    yr = -st * dx + ct * dy
    return cfg.alpha * math.exp(-(xr * xr / (2 * cfg.sigma_x**2) + yr * yr / (2 * cfg.sigma_y**2)))


def pattern_score(anchor_label: int, neighbors: NeighborSet, cfg: SpatialKernelConfig) -> float:
    if anchor_label != FOREGROUND or neighbors.m == 0:
        return 1.0
    total = 0.0
    for j in range(neighbors.m):
        for theta in cfg.orientations:
            total += gaussian_g(neighbors.center, neighbors.neighbors[j], theta, cfg)
    return total


def pattern_scores(centers, labels, gt_centers, cfg: SpatialKernelConfig) -> np.ndarray:
    """Vectorized :func:`pattern_score` for every anchor of an image.

    Summation runs neighbor index ascending, then orientation ascending, the
    same order as the scalar path. The two paths can still differ in the last
    bit because ``np.exp`` and ``math.exp`` round differently.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    labels = np.asarray(labels)
    gt = np.asarray(gt_centers, dtype=np.float64).reshape(-1, 2)
    k = np.ones(len(centers))
    fg = np.flatnonzero(labels == FOREGROUND)
    if len(fg) == 0 or len(gt) == 0:
        return k

    c = centers[fg]
    dx = gt[None, :, 0] - c[:, None, 0]
    dy = gt[None, :, 1] - c[:, None, 1]
    half = cfg.window / 2.0
    inside = (np.abs(dx) <= half) & (np.abs(dy) <= half)

    # (n_fg, m, r) terms, then a sequential reduction to pin the float order
    terms = np.zeros(dx.shape + (cfg.r,))
    for t, theta in enumerate(cfg.orientations):
        ct, st = math.cos(theta), math.sin(theta)
        xr = ct * dx + st * dy
        yr = -st * dx + ct * dy
        terms[..., t] = cfg.alpha * np.exp(
            -(xr * xr / (2 * cfg.sigma_x**2) + yr * yr / (2 * cfg.sigma_y**2))
        )
    terms[~inside] = 0.0
    flat = terms.reshape(len(fg), -1)
    total = np.zeros(len(fg))
    for col in range(flat.shape[1]):
        total += flat[:, col]
    total[~inside.any(axis=1)] = 1.0
    k[fg] = total

    if cfg.normalize:
        k[fg] = k[fg] / k[fg].mean()
    return k


def score_map(gt_centers, cfg: SpatialKernelConfig, image_w: int, image_h: int, step: int = 8):
    """Dense foreground score on the lattice ``(i + 0.5) * step``; shape (ny, nx)."""
    xs = (np.arange(math.ceil(image_w / step)) + 0.5) * step
    ys = (np.arange(math.ceil(image_h / step)) + 0.5) * step
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
    labels = np.full(len(centers), FOREGROUND)
    plain = SpatialKernelConfig(
        cfg.alpha, cfg.sigma_x, cfg.sigma_y, cfg.orientations, cfg.window, normalize=False
    )
    return pattern_scores(centers, labels, gt_centers, plain).reshape(cy.shape)
