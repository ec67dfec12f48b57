import json
import shutil

import numpy as np
import pytest

from nightflare import raster
from nightflare.cli import main

FAST = {"solver": {"iterations": 30, "mse_only_iters": 10, "kernel_size": 9, "patch_radius": 2}}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "fast.json"
    p.write_text(json.dumps(FAST))
    return str(p)


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def small_clean(path, seed=0):
    rng = np.random.default_rng(seed)
    img = raster.gaussian_blur(rng.random((48, 48, 3)), 2.0) * 0.3
    img[8:13, 10:15] = 1.0
    raster.save_image(img, path)
    return path


@pytest.fixture
def dataset(tmp_path, capsys, cfg):
    clean = tmp_path / "clean"
    clean.mkdir()
    for i in range(3):
        small_clean(clean / f"im{i}.png", i)
    out = tmp_path / "data"
    code, *_ = run_cli(capsys, "synth", clean, "--out", out, "--config", cfg)
    assert code == 0
    return out


def test_synth_writes_triplets_and_is_reproducible(dataset, tmp_path, capsys, cfg):
    names = sorted(p.name for p in dataset.iterdir())
    assert len(names) == 9
    for i in range(3):
        assert {f"im{i}_flare.png", f"im{i}_gt.png", f"im{i}_meta.json"} <= set(names)
        meta = json.loads((dataset / f"im{i}_meta.json").read_text())
        assert 1.4 <= meta["gamma"] <= 1.8 and meta["seed"] == i and meta["rng"] == "PCG64"
        assert "scatter_alpha" in meta["optics"]
    again = tmp_path / "again"
    run_cli(capsys, "synth", tmp_path / "clean", "--out", again, "--config", cfg)
    for name in names:
        assert (dataset / name).read_bytes() == (again / name).read_bytes()


def test_synth_generate(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "synth", "--generate", 2, "--out", tmp_path / "g", "--json")
    assert code == 0
    doc = json.loads(out)
    assert [r["input"] for r in doc["images"]] == ["scene_00", "scene_01"]
    assert raster.load_image(tmp_path / "g" / "scene_00_flare.png").shape == (128, 128, 3)


def test_usage_errors_exit_2(tmp_path, capsys, dataset, cfg):
    assert run_cli(capsys, "synth", "--out", tmp_path / "x")[0] == 2
    assert run_cli(capsys, "joint", tmp_path / "missing.png")[0] == 2
    code, _, err = run_cli(capsys, "synth", tmp_path / "clean", "--out", dataset, "--config", cfg)
    assert code == 2 and "--force" in err
    assert run_cli(capsys, "synth", tmp_path / "clean", "--out", dataset, "--config", cfg, "--force")[0] == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"solver": {"iterations": 5, "mse_only_iters": 10}}))
    assert run_cli(capsys, "masks", dataset / "im0_flare.png", "--config", bad)[0] == 2
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_pipeline_errors_exit_1(tmp_path, capsys):
    broken = tmp_path / "broken.png"
    broken.write_bytes(b"not an image")
    code, _, err = run_cli(capsys, "masks", broken, "--out", tmp_path / "m")
    assert code == 1 and err.startswith("nightflare:")


def test_masks(dataset, tmp_path, capsys, cfg):
    code, out, _ = run_cli(capsys, "masks", dataset / "im0_flare.png", "--out", tmp_path / "m", "--json",
                           "--config", cfg)
    assert code == 0
    rec = json.loads(out)["images"][0]
    ms = raster.load_image(tmp_path / "m" / "im0_flare_ms.png")
    assert set(np.unique(ms)) <= {0.0, 1.0}
    assert rec["source_pixels"] == int(ms[..., 0].sum()) and rec["n_sources"] >= 1


def test_joint_outputs_and_reports(dataset, tmp_path, capsys, cfg):
    out = tmp_path / "res"
    code, stdout, _ = run_cli(capsys, "joint", dataset / "im0_flare.png", "--gt", dataset, "--out", out,
                              "--config", cfg, "--json")
    assert code == 0
    for suffix in ("_D.png", "_L.png", "_y.png", "_kernel.json", "_report.json"):
        assert (out / f"im0{suffix}").is_file()
    rep = json.loads((out / "im0_report.json").read_text())
    assert len(rep["loss_history"]) == 30 and rep["seed"] == 0
    assert rep["psnr_in"] is not None and rep["psnr_out"] is not None
    assert rep["wall_ms_per_stage"] is None
    agg = json.loads((out / "report.json").read_text())
    assert agg["mean"]["psnr_out"] == pytest.approx(rep["psnr_out"])
    assert json.loads(stdout)["command"] == "joint"

    code, *_ = run_cli(capsys, "joint", dataset / "im1_flare.png", "--out", tmp_path / "nogt", "--config", cfg)
    rep = json.loads((tmp_path / "nogt" / "im1_report.json").read_text())
    assert code == 0 and rep["psnr_out"] is None and rep["ssim_in"] is None
    assert (tmp_path / "nogt" / "im1_D.png").is_file()


def test_joint_on_flare_free_input(tmp_path, capsys):
    rng = np.random.default_rng(5)
    img = raster.gaussian_blur(rng.random((40, 40, 3)), 2.0) * 0.5
    src = tmp_path / "in"
    src.mkdir()
    raster.save_image(img, src / "calm.png")
    code, *_ = run_cli(capsys, "joint", src / "calm.png", "--gt", src, "--out", tmp_path / "o")
    rep = json.loads((tmp_path / "o" / "calm_report.json").read_text())
    assert code == 0 and rep["psnr_out"] >= 40


def test_joint_is_deterministic_and_parallel_safe(dataset, tmp_path, capsys, cfg):
    inputs = [dataset / f"im{i}_flare.png" for i in range(2)]
    run_cli(capsys, "joint", *inputs, "--out", tmp_path / "a", "--config", cfg)
    run_cli(capsys, "joint", *inputs, "--out", tmp_path / "b", "--config", cfg, "--jobs", 2)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_deglow_and_deghost(dataset, tmp_path, capsys, cfg):
    code, *_ = run_cli(capsys, "deglow", dataset / "im2_flare.png", "--out", tmp_path / "dg", "--config", cfg)
    assert code == 0
    # with the ghost stage off the pseudo-target is the input itself
    y = raster.load_image(tmp_path / "dg" / "im2_y.png")
    assert np.array_equal(y, raster.load_image(dataset / "im2_flare.png"))

    code, out, _ = run_cli(capsys, "deghost", dataset / "im2_flare.png", "--out", tmp_path / "dh",
                           "--config", cfg, "--debug-dumps", "--gt", dataset, "--json")
    assert code == 0
    assert (tmp_path / "dh" / "im2_y.png").is_file()
    dumps = list((tmp_path / "dh" / "im2_flare_debug").glob("front_*.png"))
    assert dumps
    assert json.loads(out)["images"][0]["psnr_out"] is not None


def test_eval_examples(dataset, tmp_path, capsys, caplog):
    same = tmp_path / "same"
    same.mkdir()
    shutil.copy(dataset / "im0_gt.png", same / "im0_gt.png")
    code, out, _ = run_cli(capsys, "eval", same / "im0_gt.png", "--gt", dataset, "--out", tmp_path / "e1", "--json")
    assert code == 0
    doc = json.loads((tmp_path / "e1" / "metrics.json").read_text())
    assert doc["images"][0]["psnr"] == "inf" and doc["images"][0]["ssim"] == 1.0
    assert "inf" in (tmp_path / "e1" / "metrics.txt").read_text()

    res = tmp_path / "res"
    res.mkdir()
    for i in range(2):
        shutil.copy(dataset / f"im{i}_flare.png", res / f"im{i}_D.png")
    raster.save_image(np.zeros((8, 8, 3)), res / "orphan_D.png")
    code, out, _ = run_cli(capsys, "eval", res, "--gt", dataset, "--out", tmp_path / "e2", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["warnings"] == 1 and len(doc["images"]) == 2
    psnrs = [r["psnr"] for r in doc["images"]]
    assert doc["mean"]["psnr"] == pytest.approx((psnrs[0] + psnrs[1]) / 2, abs=1e-12)
    text = (tmp_path / "e2" / "metrics.txt").read_text().splitlines()
    assert text[0].split() == ["image", "PSNR", "SSIM"] and text[-1].startswith("mean")

    only = tmp_path / "only"
    only.mkdir()
    raster.save_image(np.zeros((8, 8, 3)), only / "orphan.png")
    assert run_cli(capsys, "eval", only, "--gt", dataset, "--out", tmp_path / "e3")[0] == 2


def test_flare_log_env_sets_level(monkeypatch, tmp_path, capsys, dataset):
    import logging
    monkeypatch.setenv("FLARE_LOG", "debug")
    monkeypatch.setattr(logging.getLogger(), "handlers", [])
    run_cli(capsys, "masks", dataset / "im0_flare.png", "--out", tmp_path / "m")
    assert logging.getLogger().level == logging.DEBUG
