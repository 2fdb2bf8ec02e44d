"""Command-line entry point wiring all modules together.

Subcommands: gen-data | stats | gradcheck | sensitivity | train | eval |
ablate | flops.  Every subcommand writes its outputs plus a machine-readable
summary.csv and an echo of the effective configuration under --out.

Configuration files are INI-style sections of `key = value` lines; unknown
sections or keys are rejected rather than silently ignored.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .boxes import NwdConfig, sensitivity_csv, sensitivity_sweep
from .detector import (
    ABLATION_ROWS,
    DetectorConfig,
    evaluate,
    model_flops,
    run_ablation,
    train,
)
from .msfa import DEFAULT_BRANCH_TAPS, msfa_flops
from .svgplot import RefLine, Series, emit_svg_plot
from .synth import SynthConfig, dataset_stats, generate_dataset
from .verify import gradcheck_suite, suite_csv

log = logging.getLogger(__name__)

# IoU drop reported for a pixel-level offset on a normal-sized face vs a
# tiny defect; plotted as reference annotations, never asserted.
FIG2_REFERENCE = [
    ("large target, aligned", 0.81),
    ("large target, offset", 0.66),
    ("tiny target, aligned", 0.39),
    ("tiny target, offset", 0.14),
]

_DATA_KEYS = {
    "image_size": int,
    "train_images": int,
    "val_images": int,
    "test_images": int,
    "trace_pitch": int,
    "trace_width": int,
    "max_defects": int,
    "seed": int,
}
_DETECTOR_KEYS = {
    f.name: (type(f.default) if f.default is not dataclasses.MISSING else int)
    for f in dataclasses.fields(DetectorConfig)
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict[str, dict]:
    """Parse and validate the run configuration file."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    known = {"data": _DATA_KEYS, "detector": _DETECTOR_KEYS}
    out: dict[str, dict] = {}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        out[section] = {}
        for key, raw in cp[section].items():
            if key not in known[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            typ = known[section][key]
            try:
                out[section][key] = typ(raw) if typ is not bool else raw.lower() == "true"
            except ValueError:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from None
    return out


def _synth_config(cfg: dict, seed: int | None) -> SynthConfig:
    d = dict(cfg.get("data", {}))
    images = {
        "train": d.pop("train_images", 400),
        "val": d.pop("val_images", 50),
        "test": d.pop("test_images", 50),
    }
    if seed is not None:
        d["seed"] = seed
    return SynthConfig(images=images, **d)


def _detector_config(cfg: dict, seed: int | None) -> DetectorConfig:
    d = dict(cfg.get("detector", {}))
    if seed is not None:
        d["seed"] = seed
    return DetectorConfig(**d)


def _echo_config(out_dir: Path, objs: dict) -> None:
    lines = []
    for section, obj in objs.items():
        lines.append(f"[{section}]")
        data = dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else dict(obj)
        for k in sorted(data):
            lines.append(f"{k} = {data[k]}")
        lines.append("")
    (out_dir / "config_echo.txt").write_text("\n".join(lines))


def _write_summary(out_dir: Path, rows: list[tuple]) -> None:
    lines = ["key,value"] + [f"{k},{v}" for k, v in rows]
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args, cfg) -> int:
    out = _out_dir(args)
    sc = _synth_config(cfg, args.seed)
    counts = generate_dataset(sc, out / "dataset")
    _echo_config(out, {"data": sc})
    _write_summary(out, [(f"{k}_images", v) for k, v in counts.items()])
    return 0


def cmd_stats(args, cfg) -> int:
    out = _out_dir(args)
    stats = dataset_stats(args.data)
    (out / "stats.csv").write_text(stats.to_csv())
    edges = [i * 2e-4 for i in range(26)]
    hist = np.histogram(stats.area_fractions, bins=edges)[0]
    hist_lines = ["fraction_lo,fraction_hi,count"] + [
        f"{edges[i]:.6f},{edges[i + 1]:.6f},{hist[i]}" for i in range(len(hist))
    ]
    (out / "area_fraction_histogram.csv").write_text("\n".join(hist_lines) + "\n")
    _echo_config(out, {"stats": {"data": args.data}})
    _write_summary(out, [("annotations", stats.total)])
    return 0


def cmd_gradcheck(args, cfg) -> int:
    out = _out_dir(args)
    entries = gradcheck_suite()
    (out / "summary.csv").write_text(suite_csv(entries))
    _echo_config(out, {"gradcheck": {"instances": 20}})
    for e in entries:
        status = "PASS" if e.passed else "FAIL"
        print(f"{status} {e.name}: {e.report} (tolerance {e.tolerance:g})")
    return 0 if all(e.passed for e in entries) else 1


def cmd_sensitivity(args, cfg) -> int:
    out = _out_dir(args)
    sizes = [float(s) for s in args.sizes.split(",")]
    offsets = [float(d) for d in range(0, int(args.max_offset) + 1)]
    nwd_cfg = NwdConfig()
    rows = sensitivity_sweep(sizes, offsets, nwd_cfg)
    (out / "sensitivity.csv").write_text(sensitivity_csv(rows))
    if args.plot:
        iou_series = []
        nwd_series = []
        for s in sizes:
            sub = [r for r in rows if r["size_px"] == s]
            xs = [r["offset_px"] for r in sub]
            iou_series.append(Series(f"IoU side={s:g}", xs, [r["iou"] for r in sub]))
            nwd_series.append(
                Series(f"NWD side={s:g}", xs, [r["nwd_canonical"] for r in sub])
            )
        refs = [RefLine(label, y) for label, y in FIG2_REFERENCE]
        emit_svg_plot(
            iou_series,
            out / "sensitivity_iou.svg",
            title="IoU vs center offset",
            xlabel="offset (px)",
            ylabel="IoU",
            ref_lines=refs,
        )
        emit_svg_plot(
            nwd_series,
            out / "sensitivity_nwd.svg",
            title="NWD vs center offset",
            xlabel="offset (px)",
            ylabel="NWD",
        )
    _echo_config(out, {"sensitivity": {"sizes": args.sizes, "max_offset": args.max_offset,
                                       "c_norm": nwd_cfg.c_norm}})
    _write_summary(out, [("rows", len(rows))])
    return 0


def cmd_train(args, cfg) -> int:
    out = _out_dir(args)
    dc = _detector_config(cfg, args.seed)
    summary = train(dc, args.data, out)
    _echo_config(out, {"detector": dc})
    _write_summary(
        out,
        [
            ("epochs_run", summary["epochs_run"]),
            ("first_loss", f"{summary['first_loss']:.9f}"),
            ("final_loss", f"{summary['final_loss']:.9f}"),
            ("best_val_map50", f"{summary['best_val_map50']:.9f}"),
        ],
    )
    return 0


def cmd_eval(args, cfg) -> int:
    out = _out_dir(args)
    report = evaluate(args.ckpt, args.data, args.split)
    (out / "report.csv").write_text(report.to_csv())
    _echo_config(out, {"eval": {"ckpt": args.ckpt, "split": args.split}})
    _write_summary(
        out,
        [
            ("map50", f"{report.map50:.9f}"),
            ("map50_95", f"{report.map50_95:.9f}"),
            ("precision", f"{report.precision:.9f}"),
            ("recall", f"{report.recall:.9f}"),
        ],
    )
    return 0


def cmd_ablate(args, cfg) -> int:
    out = _out_dir(args)
    dc = _detector_config(cfg, args.seed)
    rows = run_ablation(dc, args.data, out)
    _echo_config(out, {"detector": dc})
    _write_summary(
        out, [(r["variant"], f"{r['map50']:.9f}") for r in rows]
    )
    return 0


def cmd_flops(args, cfg) -> int:
    out = _out_dir(args)
    dc = _detector_config(cfg, args.seed)
    rows = [("key", "macs")]
    for name, toggles in ABLATION_ROWS:
        c = DetectorConfig(**{**dataclasses.asdict(dc), **toggles})
        rows.append((f"model/{name}", model_flops(c)))
    d8 = dc.input_size // 8
    rows.append(("msfa/default", msfa_flops(dc.width, d8, d8)))
    rows.append(
        ("msfa/with_21_branch", msfa_flops(dc.width, d8, d8, DEFAULT_BRANCH_TAPS + (21,)))
    )
    (out / "flops.csv").write_text("\n".join(f"{k},{v}" for k, v in rows) + "\n")
    _echo_config(out, {"detector": dc})
    _write_summary(out, rows[1:])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tinydet",
        description="Tiny-defect detection blocks: data, training, evaluation, analysis.",
    )
    ap.add_argument("--config", help="INI config file (sections [data], [detector])")
    ap.add_argument("--seed", type=int, default=None, help="global seed override")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic defect dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("stats", help="dataset statistics report")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sensitivity", help="IoU/NWD offset sensitivity study")
    p.add_argument("--sizes", default="6,36", help="comma-separated box sides (px)")
    p.add_argument("--max-offset", type=float, default=12)
    p.add_argument("--plot", action="store_true", help="also emit SVG plots")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the four-variant ablation ladder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("flops", help="MAC accounting per variant")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flops)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        return args.func(args, cfg)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
