from __future__ import annotations

import numpy as np
import pytest

from trifocal_sync import fileio
from trifocal_sync.block_tensor import build_block_tensor
from trifocal_sync.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from trifocal_sync.scenegen import CorruptionConfig, SceneConfig, corrupt_blocks, generate_scene


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def generated(tmp_path):
    out = tmp_path / "gen"
    code = run("generate", "--out-dir", out, "--seed", 3, "--set", "n_cameras=8", "--set", "scale_law=log_uniform",
               "--set", "mask_law=bernoulli", "--set", "mask_p=0.8")
    assert code == EXIT_OK
    return out


def write_rewrite_identical(tmp_path, name, reader, writer):
    a = tmp_path / name
    b = tmp_path / ("again_" + name)
    writer(b, reader(a))
    return a.read_bytes() == b.read_bytes()


class TestGenerate:
    def test_files_and_round_trip(self, generated, tmp_path):
        for name in ("cameras_gt.txt", "tensor.txt", "scales.txt", "meta.txt"):
            assert (generated / name).is_file()
        # the written tensor equals the in-memory objects built from the same configs
        scene = generate_scene(SceneConfig(n_cameras=8, seed=3))
        bt, lam, mask = corrupt_blocks(build_block_tensor(scene.cameras),
                                       CorruptionConfig(scale_law="log_uniform", mask_law="bernoulli", mask_p=0.8,
                                                        seed=3))
        loaded = fileio.read_block_tensor(generated / "tensor.txt")
        assert np.array_equal(loaded.tensor, bt.tensor) and np.array_equal(loaded.mask, mask)
        assert np.array_equal(fileio.read_scales(generated / "scales.txt"), lam)
        cams = fileio.read_cameras(generated / "cameras_gt.txt")
        assert all(np.array_equal(a.P, b.P) and np.array_equal(a.R, b.R) for a, b in zip(cams, scene.cameras))

    def test_byte_identical_rewrite(self, generated):
        assert write_rewrite_identical(generated, "tensor.txt", fileio.read_block_tensor, fileio.write_block_tensor)
        assert write_rewrite_identical(generated, "cameras_gt.txt", fileio.read_cameras, fileio.write_cameras)
        assert write_rewrite_identical(generated, "scales.txt", fileio.read_scales, fileio.write_scales)

    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run("generate", "--out-dir", tmp_path / d, "--seed", 5, "--set", "n_cameras=5") == EXIT_OK
        for name in ("cameras_gt.txt", "tensor.txt", "scales.txt", "meta.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_layout_in_metadata(self, tmp_path):
        assert run("generate", "--out-dir", tmp_path, "--set", "layout=collinear") == EXIT_OK
        assert fileio.read_key_values(tmp_path / "meta.txt")["layout"] == "collinear"

    def test_config_file_and_precedence(self, tmp_path, monkeypatch):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# scene\nn_cameras = 4\nlayout = collinear\n")
        monkeypatch.setenv("TRIFOCAL_SYNC_N_CAMERAS", "5")
        assert run("generate", "--config", cfg, "--out-dir", tmp_path, "--set", "n_cameras=6") == EXIT_OK
        meta = fileio.read_key_values(tmp_path / "meta.txt")
        assert meta["n_cameras"] == "6" and meta["layout"] == "collinear"
        assert run("generate", "--config", cfg, "--out-dir", tmp_path) == EXIT_OK
        assert fileio.read_key_values(tmp_path / "meta.txt")["n_cameras"] == "5"

    def test_line_source(self, tmp_path):
        assert run("generate", "--out-dir", tmp_path, "--set", "source=lines", "--set", "n_cameras=4",
                   "--set", "n_lines=13") == EXIT_OK
        assert fileio.read_block_tensor(tmp_path / "tensor.txt").n == 4

    @pytest.mark.parametrize("bad", ["n_cameras=2", "unknown_key=1", "n_cameras=three", "source=images",
                                     "noise_rel=loud"])
    def test_validation(self, tmp_path, bad):
        assert run("generate", "--out-dir", tmp_path, "--set", bad) == EXIT_VALIDATION


class TestCheck:
    def test_ground_truth_passes(self, generated, tmp_path, capsys):
        assert run("build", "--cameras", generated / "cameras_gt.txt", "--out-dir", tmp_path) == EXIT_OK
        code = run("check", "--tensor", tmp_path / "tensor.txt", "--cameras", generated / "cameras_gt.txt",
                   "--out-dir", tmp_path, "--strict")
        assert code == EXIT_OK
        assert "6x4x4" in capsys.readouterr().out
        rows = {r["check"]: r["result"] for r in fileio.read_csv(tmp_path / "check.csv")}
        assert rows["multilinear_rank"] == "6x4x4"
        assert all(v == "pass" for k, v in rows.items() if k != "multilinear_rank")

    def test_corrupted_names_failures(self, tmp_path, capsys):
        cams = generate_scene(SceneConfig(n_cameras=5, seed=1)).cameras
        bt = build_block_tensor(cams)
        bt.tensor[0, 0, 0] = 1.0
        bt.tensor[4, 5, 7] += 0.3
        fileio.write_block_tensor(tmp_path / "t.txt", bt)
        assert run("check", "--tensor", tmp_path / "t.txt", "--out-dir", tmp_path, "--strict") == EXIT_NUMERICAL
        out = capsys.readouterr().out
        assert "FAIL (i) block (0,0,0)" in out and "FAIL (iii)" in out

    def test_uncalibrated_skips_sv_check(self, generated, tmp_path):
        assert run("build", "--cameras", generated / "cameras_gt.txt", "--out-dir", tmp_path) == EXIT_OK
        assert run("check", "--tensor", tmp_path / "tensor.txt", "--out-dir", tmp_path, "--uncalibrated") == EXIT_OK
        rows = {r["check"]: r["result"] for r in fileio.read_csv(tmp_path / "check.csv")}
        assert rows["iv_three_equal_sv"] == "skipped"

    def test_masked_tensor_rejected(self, generated, tmp_path):
        assert run("check", "--tensor", generated / "tensor.txt", "--out-dir", tmp_path) == EXIT_VALIDATION


class TestSyncAndEval:
    def test_pipeline(self, generated, tmp_path):
        out = tmp_path / "sync"
        assert run("sync", "--tensor", generated / "tensor.txt", "--out-dir", out) == EXIT_OK
        info = fileio.read_key_values(out / "sync_info.txt")
        rows = fileio.read_csv(out / "diagnostics.csv")
        assert len(rows) == int(info["iterations"]) + 1
        assert [int(r["iteration"]) for r in rows] == list(range(len(rows)))
        assert run("eval", "--cameras", out / "cameras.txt", "--groundtruth", generated / "cameras_gt.txt",
                   "--out-dir", out) == EXIT_OK
        summary = fileio.read_csv(out / "eval_summary.csv")[0]
        assert list(summary) == ["meanR_deg", "medianR_deg", "meanT", "medianT", "alignment_residual"]
        assert float(summary["meanR_deg"]) <= 1e-3 and float(summary["meanT"]) <= 1e-4

    def test_sync_deterministic(self, generated, tmp_path):
        for d in ("a", "b"):
            assert run("sync", "--tensor", generated / "tensor.txt", "--out-dir", tmp_path / d,
                       "--set", "max_iters=5") == EXIT_OK
        for name in ("cameras.txt", "diagnostics.csv", "sync_info.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_horste_projector(self, generated, tmp_path):
        assert run("sync", "--tensor", generated / "tensor.txt", "--out-dir", tmp_path,
                   "--set", "projector=horste", "--set", "max_iters=2") == EXIT_OK
        assert fileio.read_key_values(tmp_path / "sync_info.txt")["iterations"] == "2"

    @pytest.mark.parametrize("bad", ["max_iters=0", "projector=svd", "svd_mode=fast", "bogus=1"])
    def test_sync_validation(self, generated, tmp_path, bad):
        assert run("sync", "--tensor", generated / "tensor.txt", "--out-dir", tmp_path, "--set", bad) == EXIT_VALIDATION

    def test_orphan_camera(self, tmp_path, capsys):
        bt = build_block_tensor(generate_scene(SceneConfig(n_cameras=5, seed=2)).cameras)
        bt.mask[:] = True
        bt.mask[3] = bt.mask[:, 3] = bt.mask[:, :, 3] = False
        fileio.write_block_tensor(tmp_path / "t.txt", bt)
        assert run("sync", "--tensor", tmp_path / "t.txt", "--out-dir", tmp_path) == EXIT_VALIDATION
        assert "[3]" in capsys.readouterr().err

    def test_projection_failure_is_numerical(self, generated, tmp_path):
        assert run("sync", "--tensor", generated / "tensor.txt", "--out-dir", tmp_path, "--set",
                   "threshold_rule=explicit", "--set", "thresholds=1e9,1e9,1e9") == EXIT_NUMERICAL

    def test_eval_ground_truth_is_zero(self, generated, tmp_path):
        gt = generated / "cameras_gt.txt"
        assert run("eval", "--cameras", gt, "--groundtruth", gt, "--out-dir", tmp_path) == EXIT_OK
        summary = fileio.read_csv(tmp_path / "eval_summary.csv")[0]
        assert all(float(v) <= 1e-9 for v in summary.values())

    def test_eval_single_defect_localized(self, generated, tmp_path):
        cams = fileio.read_cameras(generated / "cameras_gt.txt")
        C = np.vstack([c.P for c in cams])
        C[3 * 5:3 * 5 + 3, 3] += 0.3
        fileio.write_cameras(tmp_path / "est.txt", C)
        assert run("eval", "--cameras", tmp_path / "est.txt", "--groundtruth", generated / "cameras_gt.txt",
                   "--out-dir", tmp_path) == EXIT_OK
        per = fileio.read_csv(tmp_path / "eval_cameras.csv")
        loc = [float(r["location"]) for r in per]
        assert int(np.argmax(loc)) == 5

    def test_eval_csv_round_trip(self, generated, tmp_path):
        gt = generated / "cameras_gt.txt"
        assert run("eval", "--cameras", gt, "--groundtruth", gt, "--out-dir", tmp_path) == EXIT_OK
        first = (tmp_path / "eval_summary.csv").read_bytes()
        rows = fileio.read_csv(tmp_path / "eval_summary.csv")
        fileio.write_csv(tmp_path / "again.csv", rows, rows[0].keys())
        assert (tmp_path / "again.csv").read_bytes() == first

    def test_eval_size_mismatch(self, generated, tmp_path):
        cams = fileio.read_cameras(generated / "cameras_gt.txt")
        fileio.write_cameras(tmp_path / "few.txt", cams[:5])
        assert run("eval", "--cameras", tmp_path / "few.txt", "--groundtruth", generated / "cameras_gt.txt",
                   "--out-dir", tmp_path) == EXIT_VALIDATION

    def test_oneshot(self, tmp_path):
        cams = generate_scene(SceneConfig(n_cameras=6, seed=4)).cameras
        fileio.write_cameras(tmp_path / "gt.txt", cams)
        fileio.write_block_tensor(tmp_path / "t.txt", build_block_tensor(cams))
        for mode in (2, 3):
            assert run("oneshot", "--tensor", tmp_path / "t.txt", "--mode", mode, "--out-dir", tmp_path) == EXIT_OK
            assert run("eval", "--cameras", tmp_path / "cameras.txt", "--groundtruth", tmp_path / "gt.txt",
                       "--out-dir", tmp_path) == EXIT_OK
            assert float(fileio.read_csv(tmp_path / "eval_summary.csv")[0]["meanR_deg"]) <= 1e-6


class TestFiles:
    def test_missing_input(self, tmp_path):
        assert run("sync", "--tensor", tmp_path / "nope.txt", "--out-dir", tmp_path) == EXIT_VALIDATION

    @pytest.mark.parametrize("text", ["BLOCKTENSOR 3\nMASK 1\n", "CAMERAS 3\n1 2 3\n", "BLOCKTENSOR x\n",
                                      "BLOCKTENSOR 3\n0 0 0 1\nMASK 0\n"])
    def test_malformed(self, tmp_path, text):
        (tmp_path / "bad.txt").write_text(text)
        assert run("sync", "--tensor", tmp_path / "bad.txt", "--out-dir", tmp_path) == EXIT_VALIDATION

    def test_unknown_subcommand_and_threads(self, tmp_path):
        assert run("render") == EXIT_VALIDATION
        assert run("generate", "--threads", -1, "--out-dir", tmp_path) == EXIT_VALIDATION
        assert run("generate", "--threads", 1, "--out-dir", tmp_path) == EXIT_OK
