"""CLI dispatch: exit codes, config validation, output artifacts, and the
determinism contract of every subcommand; SVG plot contracts."""

import numpy as np
import pytest

from tinydet.cli import ConfigError, load_config, main
from tinydet.svgplot import RefLine, Series, render_svg


def run(*argv):
    return main(list(argv))


# --- argument and config handling ------------------------------------------


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        run("frobnicate")
    assert e.value.code == 2


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        run("gen-data")
    assert e.value.code == 2


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        run("--help")
    assert e.value.code == 0
    text = capsys.readouterr().out
    for cmd in ("gen-data", "stats", "gradcheck", "sensitivity", "train", "eval", "ablate", "flops"):
        assert cmd in text


def test_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[data]\nimage_sise = 128\n")
    with pytest.raises(ConfigError, match="image_sise"):
        load_config(p)


def test_config_rejects_unknown_section(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[dataa]\nseed = 1\n")
    with pytest.raises(ConfigError, match="dataa"):
        load_config(p)


def test_config_parses_sections(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[data]\nimage_size = 128\nseed = 9\n\n[detector]\nepochs = 3\nlr = 0.01\n")
    cfg = load_config(p)
    assert cfg["data"] == {"image_size": 128, "seed": 9}
    assert cfg["detector"]["epochs"] == 3
    assert cfg["detector"]["lr"] == pytest.approx(0.01)


def test_bad_config_path_exits_1(tmp_path, capsys):
    assert run("--config", str(tmp_path / "absent.ini"), "flops", "--out", str(tmp_path)) == 1
    assert "config" in capsys.readouterr().err


# --- subcommands ------------------------------------------------------------


def _ini(tmp_path, text):
    p = tmp_path / "cfg.ini"
    p.write_text(text)
    return str(p)


def test_gen_data_and_stats(tmp_path):
    cfg = _ini(tmp_path, "[data]\ntrain_images = 4\nval_images = 2\ntest_images = 2\n")
    out = tmp_path / "o"
    assert run("--config", cfg, "gen-data", "--out", str(out)) == 0
    assert (out / "dataset" / "train.txt").exists()
    assert (out / "summary.csv").exists()
    assert (out / "config_echo.txt").exists()

    stats_out = tmp_path / "s"
    assert run("stats", "--data", str(out / "dataset"), "--out", str(stats_out)) == 0
    assert (stats_out / "stats.csv").exists()
    assert (stats_out / "area_fraction_histogram.csv").exists()


def test_gen_data_deterministic_summary(tmp_path):
    cfg = _ini(tmp_path, "[data]\ntrain_images = 3\nval_images = 1\ntest_images = 1\n")
    a, b = tmp_path / "a", tmp_path / "b"
    run("--config", cfg, "gen-data", "--out", str(a))
    run("--config", cfg, "gen-data", "--out", str(b))
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_sensitivity_outputs(tmp_path):
    out = tmp_path / "sens"
    assert run("sensitivity", "--sizes", "6,36", "--max-offset", "4", "--plot", "--out", str(out)) == 0
    csv = (out / "sensitivity.csv").read_text()
    assert csv.splitlines()[0] == "size_px,offset_px,iou,nwd_canonical,nwd_paper_linear"
    assert len(csv.strip().splitlines()) == 1 + 2 * 5
    assert (out / "sensitivity_iou.svg").exists()
    assert (out / "sensitivity_nwd.svg").exists()

    again = tmp_path / "sens2"
    run("sensitivity", "--sizes", "6,36", "--max-offset", "4", "--plot", "--out", str(again))
    assert (out / "sensitivity_iou.svg").read_bytes() == (again / "sensitivity_iou.svg").read_bytes()


def test_flops_subcommand(tmp_path):
    out = tmp_path / "f"
    assert run("flops", "--out", str(out)) == 0
    lines = (out / "flops.csv").read_text().strip().splitlines()
    rows = dict(ln.split(",") for ln in lines[1:])
    assert int(rows["model/+nwd+eucb+msfa"]) > int(rows["model/baseline"])
    assert int(rows["msfa/with_21_branch"]) > int(rows["msfa/default"])


def test_train_and_eval_subcommands(tiny_dataset, tmp_path):
    cfg = _ini(tmp_path, "[detector]\nepochs = 1\nbatch_size = 4\n")
    out = tmp_path / "t"
    assert run("--config", cfg, "--seed", "3", "train", "--data", str(tiny_dataset), "--out", str(out)) == 0
    assert (out / "metrics.csv").exists()
    echo = (out / "config_echo.txt").read_text()
    assert "seed = 3" in echo

    ev = tmp_path / "e"
    assert run("eval", "--ckpt", str(out / "final.ckpt"), "--data", str(tiny_dataset),
               "--split", "val", "--out", str(ev)) == 0
    assert (ev / "report.csv").exists()
    summary = (ev / "summary.csv").read_text()
    assert summary.startswith("key,value\nmap50,")


def test_ablate_subcommand(tiny_dataset, tmp_path):
    cfg = _ini(tmp_path, "[detector]\nepochs = 1\nbatch_size = 4\n")
    out = tmp_path / "abl"
    assert run("--config", cfg, "ablate", "--data", str(tiny_dataset), "--out", str(out)) == 0
    lines = (out / "ablation.csv").read_text().strip().splitlines()
    assert lines[0] == "variant,precision,recall,map50,map50_95,macs"
    variants = [ln.split(",")[0] for ln in lines[1:]]
    assert variants == ["baseline", "+nwd", "+nwd+eucb", "+nwd+eucb+msfa"]


def test_eval_missing_checkpoint_exits_1(tmp_path, capsys):
    assert run("eval", "--ckpt", str(tmp_path / "no.ckpt"), "--data", str(tmp_path),
               "--out", str(tmp_path / "o")) == 1
    assert "error" in capsys.readouterr().err


# --- SVG plots --------------------------------------------------------------


def test_svg_single_series_single_polyline():
    svg = render_svg([Series("s", [0.0, 1.0], [0.0, 1.0])])
    assert svg.count("<polyline") == 1
    assert svg.startswith("<svg ")


def test_svg_deterministic():
    s = [Series("a", [0, 1, 2], [3.0, 1.0, 2.0])]
    assert render_svg(s, title="t") == render_svg(s, title="t")


def test_svg_axes_enclose_data():
    import re

    svg = render_svg([Series("a", [0.0, 10.0], [-1.0, 5.0])])
    pts = re.search(r'points="([^"]+)"', svg).group(1)
    coords = [tuple(map(float, p.split(","))) for p in pts.split()]
    from tinydet.svgplot import H, MARGIN, W

    for x, y in coords:
        assert MARGIN <= x <= W - MARGIN
        assert MARGIN <= y <= H - MARGIN


def test_svg_ref_lines_render_dashed():
    svg = render_svg(
        [Series("a", [0, 1], [0.0, 1.0])], ref_lines=[RefLine("lit", 0.5)]
    )
    assert "stroke-dasharray" in svg and "lit" in svg


def test_svg_empty_series_rejected():
    with pytest.raises(ValueError):
        render_svg([])
    with pytest.raises(ValueError):
        render_svg([Series("a", [], [])])
