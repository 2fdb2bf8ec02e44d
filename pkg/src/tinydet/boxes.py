"""Axis-aligned box geometry: IoU, Gaussian box modeling, squared
2-Wasserstein distance, normalized Wasserstein similarity, and the
regression loss with analytic gradients.

Two normalization modes exist.  `canonical-exp` is the default:
NWD = exp(-sqrt(W2^2)/C) and loss = 1 - NWD, which increases with distance
and can supervise regression.  `paper-linear` keeps the literal linear
normalization W2^2/C (clamped to [0, 1]) and uses the clamped value itself
as the loss; it is retained for fidelity studies only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEGENERATE_FLOOR = 1e-6
_SQRT_EPS = 1e-12  # keeps d(sqrt)/dW2sq finite at exact overlap

# Default C: near the mean synthetic defect side length at 256x256 input.
DEFAULT_C_NORM = 12.8
DEFAULT_INPUT_SIDE = 256


@dataclass(frozen=True)
class BBox:
    """Center-format box in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise ValueError(f"non-finite box {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got w={self.w} h={self.h}")

    @property
    def x1(self):
        return self.cx - self.w / 2

    @property
    def y1(self):
        return self.cy - self.h / 2

    @property
    def x2(self):
        return self.cx + self.w / 2

    @property
    def y2(self):
        return self.cy + self.h / 2

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class Gaussian2D:
    """Diagonal-covariance Gaussian modeling a box: mu in pixels,
    sigma_diag = (w^2/4, h^2/4) in pixels^2."""

    mu: tuple[float, float]
    sigma_diag: tuple[float, float]

    def __post_init__(self):
        if self.sigma_diag[0] <= 0 or self.sigma_diag[1] <= 0:
            raise ValueError(f"sigma_diag must be positive, got {self.sigma_diag}")


@dataclass(frozen=True)
class NwdConfig:
    c_norm: float = DEFAULT_C_NORM
    mode: str = "canonical-exp"

    def __post_init__(self):
        if self.c_norm <= 0:
            raise ValueError(f"c_norm must be positive, got {self.c_norm}")
        if self.mode not in ("canonical-exp", "paper-linear"):
            raise ValueError(f"unknown NWD mode '{self.mode}'")

    @classmethod
    def for_input_side(cls, side: int, mode: str = "canonical-exp") -> "NwdConfig":
        """Scale the default C linearly with training resolution."""
        return cls(c_norm=DEFAULT_C_NORM * side / DEFAULT_INPUT_SIDE, mode=mode)


def iou(bp: BBox, bg: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    iw = max(0.0, min(bp.x2, bg.x2) - max(bp.x1, bg.x1))
    ih = max(0.0, min(bp.y2, bg.y2) - max(bp.y1, bg.y1))
    inter = iw * ih
    union = bp.area + bg.area - inter
    return inter / union if union > 0 else 0.0


def gaussian_of_box(b: BBox) -> Gaussian2D:
    return Gaussian2D(mu=(b.cx, b.cy), sigma_diag=(b.w * b.w / 4, b.h * b.h / 4))


def wasserstein2_sq(g1: Gaussian2D, g2: Gaussian2D) -> float:
    """Squared 2-Wasserstein distance between diagonal Gaussians:
    ||mu1 - mu2||^2 + ||Sigma1^(1/2) - Sigma2^(1/2)||_F^2."""
    dmu = (g1.mu[0] - g2.mu[0]) ** 2 + (g1.mu[1] - g2.mu[1]) ** 2
    dsig = (math.sqrt(g1.sigma_diag[0]) - math.sqrt(g2.sigma_diag[0])) ** 2 + (
        math.sqrt(g1.sigma_diag[1]) - math.sqrt(g2.sigma_diag[1])
    ) ** 2
    return dmu + dsig


def nwd(g1: Gaussian2D, g2: Gaussian2D, cfg: NwdConfig) -> float:
    """Normalized Wasserstein similarity/distance in [0, 1]."""
    w2sq = wasserstein2_sq(g1, g2)
    if cfg.mode == "canonical-exp":
        return math.exp(-math.sqrt(w2sq) / cfg.c_norm)
    return min(max(w2sq / cfg.c_norm, 0.0), 1.0)


@dataclass
class NwdLossResult:
    loss: float
    grads: tuple[float, float, float, float]  # d loss / d (cx, cy, w, h) of bp
    clamped: bool = False  # predicted box hit the degeneracy floor


def nwd_loss(bp: BBox, bg: BBox, cfg: NwdConfig) -> NwdLossResult:
    """Regression loss and its analytic gradient w.r.t. the predicted box."""
    arr, clamped = _nwd_loss_array(
        np.array([[bp.cx, bp.cy, bp.w, bp.h]], dtype=np.float64),
        np.array([[bg.cx, bg.cy, bg.w, bg.h]], dtype=np.float64),
        cfg,
    )
    loss, g = arr
    return NwdLossResult(float(loss[0]), tuple(g[0]), clamped)


def nwd_loss_batch(
    pred: np.ndarray, gt: np.ndarray, cfg: NwdConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized loss over (N, 4) cxcywh arrays.  Returns (loss (N,),
    grads (N, 4) w.r.t. pred)."""
    (loss, grads), _ = _nwd_loss_array(pred, gt, cfg)
    return loss, grads


def _nwd_loss_array(pred, gt, cfg):
    pred = np.asarray(pred, dtype=np.float64)
    clamped = bool(np.any(pred[:, 2:] <= DEGENERATE_FLOOR))
    pw = np.maximum(pred[:, 2], DEGENERATE_FLOOR)
    ph = np.maximum(pred[:, 3], DEGENERATE_FLOOR)
    dcx = pred[:, 0] - gt[:, 0]
    dcy = pred[:, 1] - gt[:, 1]
    dw = (pw - gt[:, 2]) / 2
    dh = (ph - gt[:, 3]) / 2
    w2sq = dcx**2 + dcy**2 + dw**2 + dh**2
    # d w2sq / d (cx, cy, w, h)
    dw2 = np.stack([2 * dcx, 2 * dcy, dw, dh], axis=1)
    if cfg.mode == "canonical-exp":
        dist = np.sqrt(w2sq + _SQRT_EPS)
        e = np.exp(-dist / cfg.c_norm)
        loss = 1.0 - e
        scale = e / (cfg.c_norm * 2 * dist)
    else:
        raw = w2sq / cfg.c_norm
        loss = np.clip(raw, 0.0, 1.0)
        scale = np.where((raw > 0.0) & (raw < 1.0), 1.0 / cfg.c_norm, 0.0)
    grads = dw2 * scale[:, None]
    # gradient does not flow through the degeneracy clamp
    grads[:, 2] *= pred[:, 2] > DEGENERATE_FLOOR
    grads[:, 3] *= pred[:, 3] > DEGENERATE_FLOOR
    return (loss, grads), clamped


def iou_loss_batch(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1 - IoU over (N, 4) cxcywh arrays with analytic gradients w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    px1, px2 = pred[:, 0] - pred[:, 2] / 2, pred[:, 0] + pred[:, 2] / 2
    py1, py2 = pred[:, 1] - pred[:, 3] / 2, pred[:, 1] + pred[:, 3] / 2
    gx1, gx2 = gt[:, 0] - gt[:, 2] / 2, gt[:, 0] + gt[:, 2] / 2
    gy1, gy2 = gt[:, 1] - gt[:, 3] / 2, gt[:, 1] + gt[:, 3] / 2

    ix1, ix2 = np.maximum(px1, gx1), np.minimum(px2, gx2)
    iy1, iy2 = np.maximum(py1, gy1), np.minimum(py2, gy2)
    iw, ih = np.maximum(ix2 - ix1, 0.0), np.maximum(iy2 - iy1, 0.0)
    inter = iw * ih
    pa = pred[:, 2] * pred[:, 3]
    ga = gt[:, 2] * gt[:, 3]
    union = pa + ga - inter
    val = np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)
    loss = 1.0 - val

    # d inter / d pred via the active min/max edges
    pos = iw * ih > 0
    d_ix1 = np.where(px1 > gx1, 1.0, 0.0)
    d_ix2 = np.where(px2 < gx2, 1.0, 0.0)
    d_iy1 = np.where(py1 > gy1, 1.0, 0.0)
    d_iy2 = np.where(py2 < gy2, 1.0, 0.0)
    # edges in terms of (cx, w): x1 = cx - w/2, x2 = cx + w/2
    di_dcx = pos * ih * (d_ix2 - d_ix1)
    di_dw = pos * ih * (d_ix2 + d_ix1) / 2
    di_dcy = pos * iw * (d_iy2 - d_iy1)
    di_dh = pos * iw * (d_iy2 + d_iy1) / 2
    da_dw = pred[:, 3]
    da_dh = pred[:, 2]
    inv_u = 1.0 / np.maximum(union, 1e-12)
    # d iou = (union * d inter - inter * d union) / union^2; d union = d area - d inter
    def diou(dinter, darea):
        return (union * dinter - inter * (darea - dinter)) * inv_u * inv_u

    grads = -np.stack(
        [
            diou(di_dcx, 0.0),
            diou(di_dcy, 0.0),
            diou(di_dw, da_dw),
            diou(di_dh, da_dh),
        ],
        axis=1,
    )
    grads[union <= 0] = 0.0
    return loss, grads


def sensitivity_sweep(
    size_list: list[float], offsets: list[float], cfg: NwdConfig | None = None
) -> list[dict]:
    """IoU and NWD for square boxes translated along x.

    For each side s in size_list and offset d, compares a box of side s at
    the origin with its copy shifted by d.  Returns rows with keys
    size_px, offset_px, iou, nwd_canonical, nwd_paper_linear.
    """
    cfg = cfg or NwdConfig()
    rows = []
    for s in size_list:
        if s <= 0:
            raise ValueError(f"box side must be positive, got {s}")
        a = BBox(0.0, 0.0, s, s)
        ga = gaussian_of_box(a)
        for d in offsets:
            b = BBox(d, 0.0, s, s)
            gb = gaussian_of_box(b)
            rows.append(
                {
                    "size_px": s,
                    "offset_px": d,
                    "iou": iou(a, b),
                    "nwd_canonical": nwd(ga, gb, NwdConfig(cfg.c_norm, "canonical-exp")),
                    "nwd_paper_linear": nwd(ga, gb, NwdConfig(cfg.c_norm, "paper-linear")),
                }
            )
    return rows


def sensitivity_csv(rows: list[dict]) -> str:
    lines = ["size_px,offset_px,iou,nwd_canonical,nwd_paper_linear"]
    for r in rows:
        lines.append(
            f"{r['size_px']:g},{r['offset_px']:g},{r['iou']:.9f},"
            f"{r['nwd_canonical']:.9f},{r['nwd_paper_linear']:.9f}"
        )
    return "\n".join(lines) + "\n"
