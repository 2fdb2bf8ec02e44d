"""Minimal anchor-free single-head detector assembling the three blocks.

Layout: a stride-2 conv stem down to stride 8, a deep stage (plain conv or
the multi-branch attention block), a neck that upsamples the stride-8 map
back to stride 4 (bare upsample or the upsampling conv block), channel
concatenation with the stride-4 skip, a 1x1 fuse, and a dense per-cell head
predicting objectness, class logits, and box offsets.

Target assignment is center-cell: each ground-truth box supervises exactly
the cell containing its center.  Box regression decodes as
cx = (col + sigmoid(tx)) * stride, w = stride * exp(tw).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .boxes import BBox, NwdConfig, iou_loss_batch, nwd_loss_batch
from .checkpoint import array_to_text, load_checkpoint, save_checkpoint, text_to_array
from .eucb import EucbBlock, eucb_flops
from .layers import Conv2d, Layer, ReLU, Sequential, uniform_conv_init
from .metrics import Detection, EvalReport, GroundTruth, map_report, nms
from .msfa import MsfaBlock, msfa_flops
from .synth import parse_annotations, read_pgm

log = logging.getLogger(__name__)

STRIDE = 4
TW_CLIP = 8.0


@dataclass
class DetectorConfig:
    input_size: int = 256
    in_channels: int = 1
    width_stem: int = 8
    width: int = 16  # stride-4 and stride-8 feature width
    num_classes: int = 6
    deep_block: str = "plain-conv"  # or "msfa"
    upsampler: str = "plain"  # or "eucb"
    box_loss: str = "iou"  # or "nwd"
    box_weight: float = 3.0  # scales the box term against obj and cls
    nwd_mode: str = "canonical-exp"
    nwd_c_norm: float = 0.0  # 0 derives C from the input size
    upsample_mode: str = "nearest"
    lr: float = 2e-3
    lr_final_scale: float = 0.1  # <1 enables cosine decay to lr * scale
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 60
    batch_size: int = 8
    patience: int = 0  # 0 disables early stopping
    seed: int = 0
    decode_threshold: float = 0.05
    score_threshold: float = 0.25
    nms_iou: float = 0.5
    max_detections: int = 50

    def __post_init__(self):
        if self.deep_block not in ("plain-conv", "msfa"):
            raise ValueError(f"unknown deep_block '{self.deep_block}'")
        if self.upsampler not in ("plain", "eucb"):
            raise ValueError(f"unknown upsampler '{self.upsampler}'")
        if self.box_loss not in ("iou", "nwd"):
            raise ValueError(f"unknown box_loss '{self.box_loss}'")
        if self.input_size % 8 != 0:
            raise ValueError("input_size must be divisible by 8")

    @property
    def grid(self) -> int:
        return self.input_size // STRIDE

    def nwd_config(self) -> NwdConfig:
        if self.nwd_c_norm > 0:
            return NwdConfig(c_norm=self.nwd_c_norm, mode=self.nwd_mode)
        return NwdConfig.for_input_side(self.input_size, self.nwd_mode)


class _PlainUpsample(Layer):
    def __init__(self, mode):
        from .layers import Upsample2x

        self.up = Upsample2x(mode)

    def forward(self, x):
        return self.up.forward(x)

    def backward(self, g):
        return self.up.backward(g)


class TinyDetector(Layer):
    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0xD0])
        w0, w = cfg.width_stem, cfg.width
        self.stem4 = Sequential(
            Conv2d("stem.c1", uniform_conv_init(rng, w0, cfg.in_channels, 3, 3, padding=(1, 1)), stride=2),
            ReLU(),
            Conv2d("stem.c2", uniform_conv_init(rng, w, w0, 3, 3, padding=(1, 1)), stride=2),
            ReLU(),
        )
        self.stem8 = Sequential(
            Conv2d("stem.c3", uniform_conv_init(rng, w, w, 3, 3, padding=(1, 1)), stride=2),
            ReLU(),
        )
        if cfg.deep_block == "msfa":
            self.deep: Layer = MsfaBlock(w, rng, name="msfa")
        else:
            self.deep = Sequential(
                Conv2d("deep.conv", uniform_conv_init(rng, w, w, 3, 3, padding=(1, 1))),
                ReLU(),
            )
        if cfg.upsampler == "eucb":
            self.up: Layer = EucbBlock(w, w, rng, upsample_mode=cfg.upsample_mode, name="eucb")
        else:
            self.up = _PlainUpsample(cfg.upsample_mode)
        self.fuse = Sequential(
            Conv2d("neck.fuse", uniform_conv_init(rng, 2 * w, 2 * w, 1, 1)),
            ReLU(),
        )
        head_out = 1 + cfg.num_classes + 4
        self.head = Conv2d("head.conv", uniform_conv_init(rng, head_out, 2 * w, 1, 1))
        # prior init: start objectness near the rate of positive cells so the
        # focal negative term does not swamp the first updates
        self.head.bias.value[0] = -4.0
        self._w = w

    def _sections(self):
        return [self.stem4, self.stem8, self.deep, self.up, self.fuse, self.head]

    def params(self):
        return [p for s in self._sections() for p in s.params()]

    def state_arrays(self):
        return [a for s in self._sections() for a in s.state_arrays()]

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def set_mode(self, mode: str):
        if isinstance(self.up, EucbBlock):
            self.up.set_mode(mode)

    def forward(self, x):
        s4 = self.stem4.forward(x)
        s8 = self.stem8.forward(s4)
        d = self.deep.forward(s8)
        u = self.up.forward(d)
        cat = T.concat_channels([u, s4])
        f = self.fuse.forward(cat)
        return self.head.forward(f)

    def backward(self, grad_out):
        gf = self.head.backward(grad_out)
        gcat = self.fuse.backward(gf)
        w = self._w
        gu, gs4_skip = gcat[:, :w], gcat[:, w:]
        gd = self.up.backward(gu)
        gs8 = self.deep.backward(gd)
        gs4 = self.stem8.backward(gs8) + gs4_skip
        return self.stem4.backward(gs4)

    def _cast_state(self, dtype):
        for s in self._sections():
            s.astype(dtype)


def model_flops(cfg: DetectorConfig) -> int:
    """Exact MAC count of one forward pass at the configured input size."""
    s = cfg.input_size
    w0, w, k = cfg.width_stem, cfg.width, cfg.num_classes
    macs = 9 * cfg.in_channels * w0 * (s // 2) ** 2
    macs += 9 * w0 * w * (s // 4) ** 2
    macs += 9 * w * w * (s // 8) ** 2
    d8 = s // 8
    if cfg.deep_block == "msfa":
        macs += msfa_flops(w, d8, d8)
    else:
        macs += 9 * w * w * d8 * d8
    if cfg.upsampler == "eucb":
        macs += eucb_flops(w, w, d8, d8)
    d4 = s // 4
    macs += (2 * w) * (2 * w) * d4 * d4  # fuse 1x1
    macs += (2 * w) * (1 + k + 4) * d4 * d4  # head 1x1
    return macs


# --- loss -------------------------------------------------------------------


def _bce_with_logits(z, t):
    """Stable elementwise BCE and its gradient d/dz = sigmoid(z) - t."""
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    grad = T.sigmoid(z) - t
    return loss, grad


def assign_targets(targets_px, cfg: DetectorConfig):
    """Center-cell assignment.  Returns (cells, classes, boxes) where cells
    is a list of (image, row, col) with one positive cell per ground truth;
    later boxes landing on an occupied cell are dropped."""
    g = cfg.grid
    taken = set()
    cells, classes, boxes = [], [], []
    for n, anns in enumerate(targets_px):
        for cid, cx, cy, w, h in anns:
            col = min(int(cx / STRIDE), g - 1)
            row = min(int(cy / STRIDE), g - 1)
            if (n, row, col) in taken:
                continue
            taken.add((n, row, col))
            cells.append((n, row, col))
            classes.append(cid)
            boxes.append((cx, cy, w, h))
    return cells, classes, np.array(boxes, dtype=np.float64).reshape(-1, 4)


def compute_loss(head_out: np.ndarray, targets_px, cfg: DetectorConfig):
    """Objectness BCE + class BCE + box loss over positive cells, equal
    weights.  Returns (loss, breakdown dict, grad w.r.t. head_out)."""
    n, ch, g, _ = head_out.shape
    k = cfg.num_classes
    assert ch == 1 + k + 4
    grad = np.zeros_like(head_out)

    cells, classes, gt_boxes = assign_targets(targets_px, cfg)
    obj_t = np.zeros((n, g, g), dtype=head_out.dtype)
    for (ni, r, c) in cells:
        obj_t[ni, r, c] = 1.0
    # objectness: positives get plain BCE, negatives get focal-weighted BCE
    # (weight sigma^2) so the few near-positive neighbor cells dominate the
    # sea of easy background cells; normalized by the positive count
    obj_z = head_out[:, 0]
    pos = obj_t > 0
    sp = np.maximum(obj_z, 0) + np.log1p(np.exp(-np.abs(obj_z)))  # softplus(z)
    sig = T.sigmoid(obj_z)
    pos_loss = sp - obj_z  # -log sigmoid(z)
    neg_loss = sig * sig * sp  # -sigma^2 log(1 - sigmoid(z))
    pos_grad = sig - 1.0
    neg_grad = 2 * sig * sig * (1 - sig) * sp + sig**3
    norm = 1.0 / max(int(pos.sum()), 1)
    obj_loss = float(np.where(pos, pos_loss, neg_loss).sum() * norm)
    grad[:, 0] = np.where(pos, pos_grad, neg_grad) * norm

    npos = len(cells)
    if npos == 0:
        log.warning("batch contains no positive cells; box and class terms are 0")
        breakdown = {"obj": float(obj_loss), "cls": 0.0, "box": 0.0}
        total = float(obj_loss)
        return total, breakdown, grad

    idx = tuple(np.array([c[i] for c in cells]) for i in range(3))
    ni, ri, ci = idx

    cls_z = head_out[:, 1 : 1 + k][ni, :, ri, ci]  # (npos, k)
    cls_t = np.zeros_like(cls_z)
    cls_t[np.arange(npos), classes] = 1.0
    cls_loss_map, cls_grad = _bce_with_logits(cls_z, cls_t)
    cls_loss = cls_loss_map.mean()
    for j in range(k):
        np.add.at(grad[:, 1 + j], (ni, ri, ci), cls_grad[:, j] / cls_loss_map.size)

    tx = head_out[:, 1 + k][ni, ri, ci]
    ty = head_out[:, 2 + k][ni, ri, ci]
    tw = np.clip(head_out[:, 3 + k][ni, ri, ci], -TW_CLIP, TW_CLIP)
    th = np.clip(head_out[:, 4 + k][ni, ri, ci], -TW_CLIP, TW_CLIP)
    sx, sy = T.sigmoid(tx), T.sigmoid(ty)
    pw, ph = STRIDE * np.exp(tw), STRIDE * np.exp(th)
    pred = np.stack([(ci + sx) * STRIDE, (ri + sy) * STRIDE, pw, ph], axis=1)
    if cfg.box_loss == "nwd":
        box_losses, box_grads = nwd_loss_batch(pred, gt_boxes, cfg.nwd_config())
    else:
        box_losses, box_grads = iou_loss_batch(pred, gt_boxes)
    box_loss = cfg.box_weight * box_losses.mean()
    scale = cfg.box_weight / npos
    # chain through the decode
    gtx = box_grads[:, 0] * STRIDE * sx * (1 - sx) * scale
    gty = box_grads[:, 1] * STRIDE * sy * (1 - sy) * scale
    raw_w = head_out[:, 3 + k][ni, ri, ci]
    raw_h = head_out[:, 4 + k][ni, ri, ci]
    gtw = box_grads[:, 2] * pw * (np.abs(raw_w) < TW_CLIP) * scale
    gth = box_grads[:, 3] * ph * (np.abs(raw_h) < TW_CLIP) * scale
    np.add.at(grad[:, 1 + k], (ni, ri, ci), gtx)
    np.add.at(grad[:, 2 + k], (ni, ri, ci), gty)
    np.add.at(grad[:, 3 + k], (ni, ri, ci), gtw)
    np.add.at(grad[:, 4 + k], (ni, ri, ci), gth)

    total = float(obj_loss + cls_loss + box_loss)
    breakdown = {"obj": float(obj_loss), "cls": float(cls_loss), "box": float(box_loss)}
    return total, breakdown, grad


def decode_predictions(head_out: np.ndarray, image_ids, cfg: DetectorConfig):
    """Head map -> thresholded, NMS-filtered detections per batch."""
    n, ch, g, _ = head_out.shape
    k = cfg.num_classes
    obj = T.sigmoid(head_out[:, 0])
    cls = head_out[:, 1 : 1 + k]
    best_cls = np.argmax(cls, axis=1)  # (n, g, g)
    best_p = T.sigmoid(np.max(cls, axis=1))
    score = obj * best_p
    dets = []
    for b in range(n):
        ys, xs = np.nonzero(score[b] >= cfg.decode_threshold)
        if len(ys) > cfg.max_detections:
            order = np.argsort(-score[b][ys, xs], kind="stable")[: cfg.max_detections]
            ys, xs = ys[order], xs[order]
        cand = []
        for r, c in zip(ys.tolist(), xs.tolist()):
            tx = head_out[b, 1 + k, r, c]
            ty = head_out[b, 2 + k, r, c]
            tw = np.clip(head_out[b, 3 + k, r, c], -TW_CLIP, TW_CLIP)
            th = np.clip(head_out[b, 4 + k, r, c], -TW_CLIP, TW_CLIP)
            box = BBox(
                (c + float(T.sigmoid(np.array([tx]))[0])) * STRIDE,
                (r + float(T.sigmoid(np.array([ty]))[0])) * STRIDE,
                STRIDE * float(np.exp(tw)),
                STRIDE * float(np.exp(th)),
            )
            cand.append(
                Detection(image_ids[b], int(best_cls[b, r, c]), box, float(score[b, r, c]))
            )
        dets.extend(nms(cand, cfg.nms_iou))
    return dets


# --- data loading -----------------------------------------------------------


def load_split(dataset_dir, split: str, cfg: DetectorConfig):
    """Returns (image_ids, images (n,1,s,s) float32 in [-0.5, 0.5], targets
    per image in pixels, ground truths for the evaluator)."""
    root = Path(dataset_dir)
    manifest = root / f"{split}.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"missing split manifest {manifest}")
    ids, imgs, targets, gts = [], [], [], []
    s = cfg.input_size
    for rel in manifest.read_text().split():
        img = read_pgm(root / rel)
        if img.shape != (s, s):
            raise ValueError(f"{rel}: expected {s}x{s} image, got {img.shape}")
        stem = Path(rel).stem
        ids.append(stem)
        imgs.append(img.astype(np.float32) / 255.0 - 0.5)
        anns = parse_annotations(root / "labels" / f"{stem}.txt")
        t = [(cid, cx * s, cy * s, w * s, h * s) for cid, cx, cy, w, h in anns]
        targets.append(t)
        for cid, cx, cy, w, h in t:
            gts.append(GroundTruth(stem, cid, BBox(cx, cy, w, h)))
    images = np.stack(imgs)[:, None] if imgs else np.zeros((0, 1, s, s), np.float32)
    return ids, images, targets, gts


# --- optimizer and training -------------------------------------------------


class Adam:
    def __init__(self, params, cfg: DetectorConfig):
        self.params = params
        self.cfg = cfg
        self.lr = cfg.lr
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        c = self.cfg
        bc1 = 1 - c.beta1**self.t
        bc2 = 1 - c.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * p.grad
            v *= c.beta2
            v += (1 - c.beta2) * p.grad**2
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


METRICS_HEADER = "epoch,train_loss,box_loss,obj_loss,cls_loss,val_mAP50"


def train(cfg: DetectorConfig, dataset_dir, out_dir) -> dict:
    """Deterministic training loop.  Writes metrics.csv, best.ckpt and
    final.ckpt under out_dir; returns a summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = TinyDetector(cfg)
    ids, images, targets, _ = load_split(dataset_dir, "train", cfg)
    val = load_split(dataset_dir, "val", cfg)
    opt = Adam(model.params(), cfg)
    n = len(ids)
    history = []
    best_map, best_epoch = -1.0, -1
    lines = [METRICS_HEADER]
    for epoch in range(cfg.epochs):
        if cfg.lr_final_scale < 1.0 and cfg.epochs > 1:
            cos = 0.5 * (1 + np.cos(np.pi * epoch / (cfg.epochs - 1)))
            opt.lr = cfg.lr * (cfg.lr_final_scale + (1 - cfg.lr_final_scale) * cos)
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n)
        sums = {"total": 0.0, "obj": 0.0, "cls": 0.0, "box": 0.0}
        nb = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = images[batch]
            t = [targets[i] for i in batch]
            model.set_mode("train")
            y = model.forward(x)
            loss, breakdown, grad = compute_loss(y, t, cfg)
            if not np.isfinite(loss):
                dump = out / "diverged_batch.npz"
                np.savez(dump, x=x, head=y)
                raise T.NumericError(
                    f"non-finite loss {loss} at epoch {epoch} batch {nb}; "
                    f"offending batch dumped to {dump}"
                )
            model.zero_grad()
            model.backward(grad)
            opt.step()
            sums["total"] += loss
            for key in ("obj", "cls", "box"):
                sums[key] += breakdown[key]
            nb += 1
        val_map = evaluate_model(model, val, cfg).map50 if val[0] else 0.0
        row = [
            epoch,
            sums["total"] / nb,
            sums["box"] / nb,
            sums["obj"] / nb,
            sums["cls"] / nb,
            val_map,
        ]
        history.append(row)
        lines.append(
            f"{epoch},{row[1]:.9f},{row[2]:.9f},{row[3]:.9f},{row[4]:.9f},{row[5]:.9f}"
        )
        log.info("epoch %d loss %.4f val mAP50 %.4f", epoch, row[1], val_map)
        if val_map > best_map:
            best_map, best_epoch = val_map, epoch
            save_model(out / "best.ckpt", model, opt, cfg, history)
        if cfg.patience and epoch - best_epoch >= cfg.patience:
            log.info("early stop at epoch %d (patience %d)", epoch, cfg.patience)
            break
    save_model(out / "final.ckpt", model, opt, cfg, history)
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    return {
        "epochs_run": len(history),
        "first_loss": history[0][1],
        "final_loss": history[-1][1],
        "best_val_map50": best_map,
        "model": model,
    }


def evaluate_model(model: TinyDetector, split_data, cfg: DetectorConfig) -> EvalReport:
    ids, images, _, gts = split_data
    model.set_mode("eval")
    dets = []
    bs = max(1, cfg.batch_size)
    for start in range(0, len(ids), bs):
        y = model.forward(images[start : start + bs])
        dets.extend(decode_predictions(y, ids[start : start + bs], cfg))
    model.set_mode("train")
    return map_report(
        dets, gts, cfg.num_classes, score_threshold=cfg.score_threshold
    )


def evaluate(checkpoint_path, dataset_dir, split: str) -> EvalReport:
    model, cfg = load_model(checkpoint_path)
    data = load_split(dataset_dir, split, cfg)
    return evaluate_model(model, data, cfg)


# --- checkpointing ----------------------------------------------------------


def save_model(path, model: TinyDetector, opt: Adam | None, cfg: DetectorConfig, history):
    sections = {"config": text_to_array(json.dumps(asdict(cfg), sort_keys=True))}
    sections["seed"] = np.array([cfg.seed], dtype=np.float32)
    for p in model.params():
        sections[f"param/{p.name}"] = p.value
    for i, a in enumerate(model.state_arrays()):
        sections[f"bnstate/{i}"] = a
    if opt is not None:
        for p, m, v in zip(model.params(), opt.m, opt.v):
            sections[f"adam_m/{p.name}"] = m
            sections[f"adam_v/{p.name}"] = v
        sections["adam_t"] = np.array([opt.t], dtype=np.float32)
    if history:
        sections["history"] = np.array(history, dtype=np.float32)
    save_checkpoint(path, sections)


def load_model(path) -> tuple[TinyDetector, DetectorConfig]:
    sections = load_checkpoint(path)
    cfg = DetectorConfig(**json.loads(array_to_text(sections["config"])))
    model = TinyDetector(cfg)
    for p in model.params():
        p.value[...] = sections[f"param/{p.name}"]
    for i, a in enumerate(model.state_arrays()):
        a[...] = sections[f"bnstate/{i}"]
    return model, cfg


def load_optimizer(path, model: TinyDetector, cfg: DetectorConfig) -> Adam | None:
    sections = load_checkpoint(path)
    if "adam_t" not in sections:
        return None
    opt = Adam(model.params(), cfg)
    opt.t = int(sections["adam_t"][0])
    for i, p in enumerate(model.params()):
        opt.m[i][...] = sections[f"adam_m/{p.name}"]
        opt.v[i][...] = sections[f"adam_v/{p.name}"]
    return opt


# --- ablation ---------------------------------------------------------------

ABLATION_ROWS = [
    ("baseline", {"box_loss": "iou", "upsampler": "plain", "deep_block": "plain-conv"}),
    ("+nwd", {"box_loss": "nwd", "upsampler": "plain", "deep_block": "plain-conv"}),
    ("+nwd+eucb", {"box_loss": "nwd", "upsampler": "eucb", "deep_block": "plain-conv"}),
    ("+nwd+eucb+msfa", {"box_loss": "nwd", "upsampler": "eucb", "deep_block": "msfa"}),
]

ABLATION_HEADER = "variant,precision,recall,map50,map50_95,macs"


def run_ablation(base_cfg: DetectorConfig, dataset_dir, out_dir) -> list[dict]:
    """Train the four ablation rows with a shared seed; emits ablation.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, toggles in ABLATION_ROWS:
        cfg = DetectorConfig(**{**asdict(base_cfg), **toggles})
        run_dir = out / name.replace("+", "_").strip("_")
        train(cfg, dataset_dir, run_dir)
        # model selection by validation mAP: evaluate the best checkpoint
        model, _ = load_model(run_dir / "best.ckpt")
        test = load_split(dataset_dir, "test", cfg)
        report = evaluate_model(model, test, cfg)
        rows.append(
            {
                "variant": name,
                "precision": report.precision,
                "recall": report.recall,
                "map50": report.map50,
                "map50_95": report.map50_95,
                "macs": model_flops(cfg),
            }
        )
    lines = [ABLATION_HEADER]
    for r in rows:
        lines.append(
            f"{r['variant']},{r['precision']:.9f},{r['recall']:.9f},"
            f"{r['map50']:.9f},{r['map50_95']:.9f},{r['macs']}"
        )
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return rows
