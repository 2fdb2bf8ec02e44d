"""Deterministic synthetic tiny-defect dataset generator and statistics.

Images are 8-bit grayscale PGM files showing a repetitive trace grid
(bright copper lines on a dark substrate).  Each image carries 1-6 defects
drawn as class-specific primitives whose bounding-box area is calibrated so
the per-class mean area fraction converges to its configured target.
Annotations are one text file per image with lines
`class_id cx cy w h` in [0,1]-normalized coordinates.

Every image draws its randomness from an independent seed stream keyed by
(seed, split, index), so generation order or parallelism cannot change a
single byte of the output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_CLASSES = (
    "missing_hole",
    "mouse_bite",
    "open_circuit",
    "short",
    "spur",
    "spurious_copper",
)
# per-class target mean bbox-area fraction of the image
DEFAULT_AREA_FRACTIONS = (0.0008, 0.0007, 0.0005, 0.0013, 0.0009, 0.0009)

SUBSTRATE = 40
COPPER = 160
HOLE = 22

_SPLIT_KEYS = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 256
    images: dict = field(
        default_factory=lambda: {"train": 400, "val": 50, "test": 50}
    )
    classes: tuple[str, ...] = DEFAULT_CLASSES
    area_fractions: tuple[float, ...] = DEFAULT_AREA_FRACTIONS
    trace_pitch: int = 16
    trace_width: int = 3
    max_defects: int = 6
    seed: int = 0

    def __post_init__(self):
        if len(self.classes) != len(self.area_fractions):
            raise ValueError("classes and area_fractions lengths differ")
        for f in self.area_fractions:
            if not (0.0 < f < 0.05):
                raise ValueError(f"area fraction {f} outside (0, 0.05)")


@dataclass
class ClassStats:
    name: str
    count: int
    proportion: float
    mean_area_px: float
    mean_area_fraction: float


@dataclass
class DatasetStats:
    per_class: list[ClassStats]
    total: int
    area_fractions: list[float]  # one entry per annotation, for histograms

    def to_csv(self) -> str:
        lines = ["class,count,proportion,mean_area_px2,mean_area_fraction"]
        for c in self.per_class:
            lines.append(
                f"{c.name},{c.count},{c.proportion:.6f},"
                f"{c.mean_area_px:.4f},{c.mean_area_fraction:.8f}"
            )
        return "\n".join(lines) + "\n"


# --- PGM io -----------------------------------------------------------------


def write_pgm(path, img: np.ndarray) -> None:
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    # header: magic, dims, maxval, separated by whitespace (no comments emitted)
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    raw = parts[3]
    return np.frombuffer(raw[: w * h], dtype=np.uint8).reshape(h, w)


# --- rendering --------------------------------------------------------------


def _background(cfg: SynthConfig, rng) -> np.ndarray:
    s, p, t = cfg.image_size, cfg.trace_pitch, cfg.trace_width
    img = np.full((s, s), SUBSTRATE, dtype=np.float64)
    offset = int(rng.integers(0, p))
    for x0 in range(offset, s, p):
        img[:, x0 : x0 + t] = COPPER
    for y0 in range(offset, s, p):
        img[y0 : y0 + t, :] = COPPER
    img += rng.normal(0.0, 5.0, size=img.shape)
    return img, offset


def _disc_mask(s, cx, cy, r):
    yy, xx = np.ogrid[:s, :s]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _render_defect(img, cfg: SynthConfig, class_name, area_px, offset, rng):
    """Draw one defect; returns the boolean mask of touched pixels or None
    when no valid placement exists for this image's geometry."""
    s, p, t = cfg.image_size, cfg.trace_pitch, cfg.trace_width
    margin = 12
    trace_xs = [x for x in range(offset, s, p) if margin < x < s - margin]
    if not trace_xs:
        return None
    if class_name == "missing_hole":
        r = np.sqrt(area_px) / 2
        cx = rng.choice(trace_xs) + t / 2
        cy = rng.choice(trace_xs) + t / 2  # grid is symmetric; reuse positions
        mask = _disc_mask(s, cx, cy, r)
        img[mask] = HOLE
    elif class_name == "mouse_bite":
        r = np.sqrt(area_px / 2)
        cx = rng.choice(trace_xs)  # left edge of a vertical trace
        cy = rng.integers(margin, s - margin)
        mask = _disc_mask(s, cx, cy, r)
        half = np.zeros_like(mask)
        half[:, int(cx) :] = True  # keep the half biting into the trace copper
        mask &= half
        img[mask] = SUBSTRATE
    elif class_name == "open_circuit":
        length = max(2, int(round(area_px / t)))
        cx = rng.choice(trace_xs)
        y0 = int(rng.integers(margin, s - margin - length))
        mask = np.zeros((s, s), dtype=bool)
        mask[y0 : y0 + length, cx : cx + t] = True
        img[mask] = SUBSTRATE
    elif class_name == "short":
        gap = p - t
        thick = max(2, int(round(area_px / gap)))
        cx = rng.choice(trace_xs[:-1]) if len(trace_xs) > 1 else trace_xs[0]
        y0 = int(rng.integers(margin, s - margin - thick))
        mask = np.zeros((s, s), dtype=bool)
        mask[y0 : y0 + thick, cx + t : cx + t + gap] = True
        img[mask] = COPPER
    elif class_name == "spur":
        thick = max(2, int(round(np.sqrt(area_px / 2))))
        length = max(2, int(round(area_px / thick)))
        cx = rng.choice(trace_xs)
        y0 = int(rng.integers(margin, s - margin - thick))
        x0 = cx + t
        mask = np.zeros((s, s), dtype=bool)
        mask[y0 : y0 + thick, x0 : min(x0 + length, s)] = True
        img[mask] = COPPER
    elif class_name == "spurious_copper":
        r = np.sqrt(area_px) / 2
        cx = rng.choice(trace_xs) + p / 2  # between traces
        cy = rng.integers(margin, s - margin)
        mask = _disc_mask(s, cx, cy, r)
        img[mask] = COPPER
    else:
        raise ValueError(f"unknown defect class '{class_name}'")
    return mask


def _mask_bbox(mask) -> tuple[float, float, float, float] | None:
    """Tight center-format bbox (pixels) of the touched pixels."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    x1, x2 = xs.min(), xs.max() + 1
    y1, y2 = ys.min(), ys.max() + 1
    return ((x1 + x2) / 2, (y1 + y2) / 2, float(x2 - x1), float(y2 - y1))


def _boxes_overlap(a, b, pad=2.0):
    ax1, ay1 = a[0] - a[2] / 2 - pad, a[1] - a[3] / 2 - pad
    ax2, ay2 = a[0] + a[2] / 2 + pad, a[1] + a[3] / 2 + pad
    bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2
    bx2, by2 = b[0] + b[2] / 2, b[1] + b[3] / 2
    return ax1 < bx2 and bx1 < ax2 and ay1 < by2 and by1 < ay2


def render_image(cfg: SynthConfig, split: str, index: int):
    """Deterministically render one image; returns (uint8 image, annotations)
    where annotations are (class_id, cx, cy, w, h) in pixels."""
    rng = np.random.default_rng([cfg.seed, _SPLIT_KEYS[split], index])
    img, offset = _background(cfg, rng)
    n_defects = int(rng.integers(1, cfg.max_defects + 1))
    anns = []
    placed = []
    s2 = cfg.image_size**2
    for _ in range(n_defects):
        cid = int(rng.integers(0, len(cfg.classes)))
        frac = cfg.area_fractions[cid] * float(rng.uniform(0.7, 1.3))
        area_px = frac * s2
        bbox = None
        for _attempt in range(20):
            trial = img.copy()
            mask = _render_defect(trial, cfg, cfg.classes[cid], area_px, offset, rng)
            if mask is None:
                break
            bbox = _mask_bbox(mask)
            if bbox is None:
                continue
            if any(_boxes_overlap(bbox, q) for q in placed):
                bbox = None
                continue
            img = trial
            break
        if bbox is None:
            log.info("skipping defect placement in %s_%04d (no room)", split, index)
            continue
        placed.append(bbox)
        anns.append((cid,) + bbox)
    return np.clip(img, 0, 255).astype(np.uint8), anns


def generate_dataset(cfg: SynthConfig, out_dir) -> dict:
    """Write images/, labels/ and split manifests; returns per-split counts."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    s = cfg.image_size
    counts = {}
    for split, n in cfg.images.items():
        if split not in _SPLIT_KEYS:
            raise ValueError(f"unknown split '{split}'")
        paths = []
        for i in range(n):
            stem = f"{split}_{i:04d}"
            img, anns = render_image(cfg, split, i)
            write_pgm(out / "images" / f"{stem}.pgm", img)
            lines = []
            for cid, cx, cy, w, h in anns:
                lines.append(
                    f"{cid} {cx / s:.6f} {cy / s:.6f} {w / s:.6f} {h / s:.6f}"
                )
            (out / "labels" / f"{stem}.txt").write_text(
                "".join(ln + "\n" for ln in lines)
            )
            paths.append(f"images/{stem}.pgm")
        (out / f"{split}.txt").write_text("".join(p + "\n" for p in paths))
        counts[split] = n
    return counts


def parse_annotations(label_path) -> list[tuple[int, float, float, float, float]]:
    out = []
    for lineno, ln in enumerate(Path(label_path).read_text().splitlines(), 1):
        if not ln.strip():
            continue
        parts = ln.split()
        if len(parts) != 5:
            raise ValueError(f"{label_path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            cid = int(parts[0])
            vals = [float(v) for v in parts[1:]]
        except ValueError as e:
            raise ValueError(f"{label_path}:{lineno}: {e}") from None
        out.append((cid, *vals))
    return out


def dataset_stats(
    dataset_dir, classes: tuple[str, ...] = DEFAULT_CLASSES
) -> DatasetStats:
    """Per-class sample count, proportion, mean bbox area (px^2) and mean
    area fraction over all annotations under <dataset_dir>/labels."""
    root = Path(dataset_dir)
    label_dir = root / "labels"
    if not label_dir.is_dir():
        raise FileNotFoundError(f"no labels/ directory under {dataset_dir}")
    counts = [0] * len(classes)
    area_px = [0.0] * len(classes)
    area_frac = [0.0] * len(classes)
    all_fracs = []
    for lp in sorted(label_dir.glob("*.txt")):
        img_path = root / "images" / (lp.stem + ".pgm")
        side = read_pgm(img_path).shape[0] if img_path.exists() else None
        for cid, cx, cy, w, h in parse_annotations(lp):
            if not (0 <= cid < len(classes)):
                raise ValueError(f"{lp}: class id {cid} out of range")
            frac = w * h
            counts[cid] += 1
            area_frac[cid] += frac
            if side is not None:
                area_px[cid] += frac * side * side
            all_fracs.append(frac)
    total = sum(counts)
    per_class = []
    for k, name in enumerate(classes):
        c = counts[k]
        per_class.append(
            ClassStats(
                name=name,
                count=c,
                proportion=c / total if total else 0.0,
                mean_area_px=area_px[k] / c if c else 0.0,
                mean_area_fraction=area_frac[k] / c if c else 0.0,
            )
        )
    return DatasetStats(per_class=per_class, total=total, area_fractions=all_fracs)


def area_fraction_histogram(stats: DatasetStats, edges: list[float]) -> list[int]:
    """Counts of annotations per fraction bin; edges are bin boundaries."""
    hist, _ = np.histogram(stats.area_fractions, bins=edges)
    return hist.tolist()
