import json

import numpy as np
import pytest

from dualsparse.cli import RunManifest, build_denoise_config, main
from dualsparse.image import Image
from dualsparse.io import load_dictionary, read_image, save_codes, save_dictionary, write_image
from dualsparse.metrics import add_awgn
from dualsparse.pipeline import denoise
from dualsparse.sparse import SparseCodes

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")

SMALL = ["--patch", "4", "--atoms", "16", "--gamma", "12", "--window", "10", "--iters", "2"]


@pytest.fixture
def noisy_file(tmp_path):
    yy, xx = np.mgrid[:24, :24]
    clean = 120 + 50 * np.sin(xx / 3.0) + 30 * (yy > 12)
    path = tmp_path / "noisy.dsf"
    write_image(path, Image(add_awgn(clean, 20, seed=2)))
    return path


def test_denoise_defaults_in_manifest(tmp_path, noisy_file, capsys):
    out = tmp_path / "out.dsf"
    assert main(["denoise", "--in", str(noisy_file), "--sigma", "35", "--out", str(out), "--iters", "1"]) == 0
    manifest = json.loads((tmp_path / "out.dsf.manifest.json").read_text())
    resolved = manifest["config"]["resolved"]
    assert resolved["resolved_epsilon"] == 35.0
    assert resolved["grouping"]["gamma"] == 90
    assert resolved["patch_edge"] == 8
    assert resolved["dict_atoms"] == 256
    assert manifest["status"] == "ok"
    assert "groups=" in capsys.readouterr().out
    assert (tmp_path / "out.dsf.report.txt").exists()
    assert read_image(out).shape == (24, 24)


def test_missing_input_exit_3(tmp_path, capsys):
    missing = tmp_path / "nope.pgm"
    code = main(["denoise", "--in", str(missing), "--out", str(tmp_path / "o.pgm")])
    assert code == 3
    assert str(missing) in capsys.readouterr().err
    manifest = json.loads((tmp_path / "o.pgm.manifest.json").read_text())
    assert manifest["status"] == "failed" and "nope.pgm" in manifest["error"]


def test_bad_arguments_exit_2(tmp_path, noisy_file):
    with pytest.raises(SystemExit) as exc:
        main(["denoise", "--in", str(noisy_file)])
    assert exc.value.code == 2
    assert main(["denoise", "--in", str(noisy_file), "--out", str(tmp_path / "o.dsf"), "--patch", "0"]) == 2


def test_pipeline_failure_exit_4(tmp_path):
    flat = tmp_path / "flat.dsf"
    write_image(flat, Image(np.zeros((12, 12))))
    assert main(["despeckle", "--in", str(flat), "--out", str(tmp_path / "o.dsf"), *SMALL]) == 4


@pytest.mark.parametrize("argv", [["denoise", "--mode", "speckle", "--looks", "1"], ["despeckle"]])
def test_speckle_dispatch(tmp_path, argv):
    src = tmp_path / "clean.dsf"
    write_image(src, Image(np.full((20, 20), 80.0)))
    noisy = tmp_path / "sp.dsf"
    assert main(["simulate", "--in", str(src), "--out", str(noisy), "--noise", "speckle", "--seed", "1"]) == 0
    out = tmp_path / "o.dsf"
    assert main([argv[0], "--in", str(noisy), "--out", str(out), *argv[1:], *SMALL]) == 0
    resolved = json.loads((tmp_path / "o.dsf.manifest.json").read_text())["config"]["resolved"]
    assert resolved["mode"] == "speckle"
    assert resolved["grouping"]["metric"] == "ppb"
    assert np.all(read_image(out).values > 0)


def test_simulate_byte_identical(tmp_path, noisy_file):
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    for dst in (a, b):
        assert main(["simulate", "--in", str(noisy_file), "--out", str(dst), "--sigma", "35", "--seed", "7"]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.pgm"
    main(["simulate", "--in", str(noisy_file), "--out", str(c), "--sigma", "35", "--seed", "8"])
    assert c.read_bytes() != a.read_bytes()


def test_metrics_identical_files(noisy_file, capsys):
    assert main(["metrics", "--ref", str(noisy_file), "--test", str(noisy_file)]) == 0
    lines = capsys.readouterr().out.split()
    assert "psnr_db=inf" in lines and "ssim=1" in lines


def test_metrics_values(tmp_path, capsys):
    ref, test = tmp_path / "r.dsf", tmp_path / "t.dsf"
    write_image(ref, Image(np.array([[0.0, 255.0]])))
    write_image(test, Image(np.array([[0.0, 254.0]])))
    main(["metrics", "--ref", str(ref), "--test", str(test)])
    out = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert float(out["psnr_db"]) == pytest.approx(10 * np.log10(255**2 / 0.5), abs=1e-6)


def test_split_dict_hand_counts(tmp_path, capsys):
    D = np.eye(5)[:, :5]
    # frequencies 3, 1, 1, 0, 5 over six patches
    A = np.zeros((5, 6))
    A[0, :3] = 1
    A[1, 0] = 2
    A[2, 4] = -1
    A[4, :5] = 0.5
    dpath, cpath = tmp_path / "d.dsdd", tmp_path / "c.dsdc"
    save_dictionary(dpath, D)
    save_codes(cpath, SparseCodes.from_dense(A))
    assert main(["split-dict", "--dict", str(dpath), "--codes", str(cpath)]) == 0
    assert capsys.readouterr().out.split() == ["modal_frequency=1", "cut=2"]
    lines = (tmp_path / "d.dsdd.split.txt").read_text().splitlines()
    assert lines[:4] == ["atoms=5", "patches=6", "modal_frequency=1", "cut=2"]
    table = [line.split("\t") for line in lines[5:]]
    assert [(r[1], r[2], r[3]) for r in table] == [
        ("4", "5", "principal"),
        ("0", "3", "principal"),
        ("1", "1", "noise"),
        ("2", "1", "noise"),
        ("3", "0", "noise"),
    ]
    assert np.array_equal(load_dictionary(tmp_path / "d.principal.dsdd"), D[:, [4, 0]])
    assert np.array_equal(load_dictionary(tmp_path / "d.noise.dsdd"), D[:, [1, 2, 3]])


def test_learn_dict_then_split(tmp_path, noisy_file):
    d, c = tmp_path / "d.dsdd", tmp_path / "c.dsdc"
    argv = ["learn-dict", "--in", str(noisy_file), "--out", str(d), "--codes-out", str(c)]
    assert main([*argv, "--atoms", "12", "--patch", "4", "--iters", "2", "--sigma", "20"]) == 0
    D = load_dictionary(d)
    assert D.shape == (16, 12)
    assert np.allclose(np.linalg.norm(D, axis=0), 1)
    assert main(["split-dict", "--dict", str(d), "--codes", str(c)]) == 0


def test_config_precedence(tmp_path, noisy_file):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tuned\natoms = 12\ngamma=8\npatch=4\niters=1\nseed=3\n")
    out = tmp_path / "o.dsf"
    assert main(["--config", str(cfg), "denoise", "--in", str(noisy_file), "--out", str(out), "--gamma", "10"]) == 0
    resolved = json.loads((tmp_path / "o.dsf.manifest.json").read_text())["config"]["resolved"]
    assert resolved["dict_atoms"] == 12
    assert resolved["grouping"]["gamma"] == 10
    assert resolved["seed"] == 3
    assert resolved["grouping"]["window"] == 39


def test_config_unknown_key_exit_2(tmp_path, noisy_file):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour=red\n")
    assert main(["--config", str(cfg), "denoise", "--in", str(noisy_file), "--out", str(tmp_path / "o.dsf")]) == 2


def test_manifest_round_trip_and_rerun(tmp_path, noisy_file):
    out = tmp_path / "o.dsf"
    assert main(["denoise", "--in", str(noisy_file), "--out", str(out), "--sigma", "20", *SMALL]) == 0
    text = (tmp_path / "o.dsf.manifest.json").read_text()
    manifest = RunManifest.from_json(text)
    assert manifest.to_json() == text.rstrip("\n")
    cfg = build_denoise_config(manifest.config["cli"])
    again, _ = denoise(read_image(manifest.inputs["image"]), cfg)
    assert np.array_equal(again, read_image(out).values)
