import json

import numpy as np
import pytest

from uqdvr.cli import main, run_experiment
from uqdvr.volcore import load_qvol


def run_cli(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestDiffCommand:
    def test_identical_images_print_rmse_zero(self, tmp_path, capsys):
        from uqdvr.render import Image, save_image

        img = Image(4, 3, np.random.default_rng(0).random((3, 4, 4)).astype(np.float32))
        save_image(img, tmp_path / "a.ppm")
        code, out, _ = run_cli(
            ["diff", "--img", str(tmp_path / "a.ppm.f32"), "--ref", str(tmp_path / "a.ppm.f32")],
            capsys)
        assert code == 0
        assert "rmse=0" in out


class TestPipelineSmoke:
    def test_gen_estimate_constant_gives_flat_qvol(self, tmp_path, capsys):
        ens_dir = tmp_path / "ens"
        code, _, _ = run_cli(["gen", "--field", "constant(0.5)", "--dims", "6,6,6",
                              "--members", "4", "--noise", "gaussian:sigma=0",
                              "--seed", "1", "--out", str(ens_dir)], capsys)
        assert code == 0
        qvol_path = tmp_path / "c.qvol"
        code, _, _ = run_cli(["estimate", "--ensemble", str(ens_dir), "--model", "quantile",
                              "--qval", "0.25", "--out", str(qvol_path)], capsys)
        assert code == 0
        vol = load_qvol(qvol_path)
        assert np.all(vol.model.boundaries == 0.5)

    def test_render_and_quartiles(self, tmp_path, capsys):
        ens_dir = tmp_path / "ens"
        run_cli(["gen", "--field", "tangle", "--dims", "8,8,8", "--members", "6",
                 "--noise", "bimodal:sigma=0.05,offset=0.7", "--seed", "2",
                 "--out", str(ens_dir)], capsys)
        qvol_path = tmp_path / "t.qvol"
        run_cli(["estimate", "--ensemble", str(ens_dir), "--model", "quantile",
                 "--qval", "0.125", "--out", str(qvol_path)], capsys)
        img = tmp_path / "img.ppm"
        code, _, _ = run_cli(["render", "--scheme", "quantile-mean", "--volume", str(qvol_path),
                              "--tf", "preset:tangle", "--camera", "preset:tangle",
                              "--size", "16x12", "--out", str(img)], capsys)
        assert code == 0
        assert img.exists() and img.with_suffix(".ppm.f32").exists()
        qimg = tmp_path / "quart.ppm"
        code, _, _ = run_cli(["quartiles", "--volume", str(qvol_path),
                              "--tf", "preset:tangle", "--camera", "preset:tangle",
                              "--size", "12x10", "--out", str(qimg)], capsys)
        assert code == 0
        for name in ("lower", "middle", "upper"):
            assert (tmp_path / f"quart.{name}.ppm").exists()

    def test_idempotent_outputs(self, tmp_path, capsys):
        ens_dir = tmp_path / "ens"
        run_cli(["gen", "--field", "tangle", "--dims", "6,6,6", "--members", "5",
                 "--noise", "bimodal", "--seed", "3", "--out", str(ens_dir)], capsys)
        member = (ens_dir / "member_000.f32raw").read_bytes()
        run_cli(["gen", "--field", "tangle", "--dims", "6,6,6", "--members", "5",
                 "--noise", "bimodal", "--seed", "3", "--out", str(ens_dir)], capsys)
        assert (ens_dir / "member_000.f32raw").read_bytes() == member

    def test_unknown_flag_is_hard_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--field", "tangle", "--dims", "4,4,4", "--out", "/tmp/x",
                  "--frobnicate"])
        assert exc.value.code != 0

    def test_every_subcommand_has_help(self, capsys):
        for sub in ("gen", "estimate", "render", "quartiles", "diff", "experiment"):
            with pytest.raises(SystemExit) as exc:
                main([sub, "--help"])
            assert exc.value.code == 0
            out = capsys.readouterr().out
            assert "--out" in out or "--manifest" in out or "--img" in out

    def test_hixel_estimate(self, tmp_path, capsys):
        from uqdvr.synth import sample_field
        from uqdvr.volcore import save_raw

        hi = sample_field("nested-spheres", (16, 16, 16))
        raw = tmp_path / "hi.f32raw"
        save_raw(hi, raw, "f32")
        out = tmp_path / "hix.qvol"
        code, _, _ = run_cli(["estimate", "--volume", str(raw), "--dims", "16,16,16",
                              "--brick", "4,4,4", "--model", "quantile", "--qval", "0.25",
                              "--out", str(out)], capsys)
        assert code == 0
        vol = load_qvol(out)
        assert vol.dims == (4, 4, 4)
        assert out.with_suffix(".mean.f32raw").exists()

    def test_missing_input_fails_nonzero(self, tmp_path, capsys):
        code, _, err = run_cli(["render", "--scheme", "mean", "--volume",
                                str(tmp_path / "nope.dvol"), "--tf", "preset:tangle",
                                "--size", "8x8", "--out", str(tmp_path / "o.ppm")], capsys)
        assert code != 0


class TestExperimentCommand:
    def test_small_manifest_writes_csv(self, tmp_path, capsys):
        manifest = {
            "mode": "ensemble",
            "field": "tangle",
            "dims": [8, 8, 8],
            "noise": {"kind": "bimodal", "sigma": 0.05, "offset": 0.7},
            "members": [6],
            "models": ["mean"],
            "qvals": [0.25],
            "quantile_schemes": ["quantile-mean"],
            "tf": "preset:tangle",
            "camera": "preset:tangle",
            "size": [16, 12],
            "seed": 4,
        }
        mpath = tmp_path / "m.json"
        mpath.write_text(json.dumps(manifest))
        outdir = tmp_path / "exp"
        code, out, _ = run_cli(["experiment", "--manifest", str(mpath),
                                "--out", str(outdir)], capsys)
        assert code == 0
        csv_text = (outdir / "results.csv").read_text()
        assert csv_text.splitlines()[0] == "scheme,q,M,rmse"
        assert "quantile-mean" in csv_text
        assert "rmse=" in out

    def test_experiment_deterministic(self, tmp_path):
        manifest = {
            "mode": "ensemble", "field": "tangle", "dims": [6, 6, 6],
            "noise": {"kind": "gaussian", "sigma": 0.05}, "members": [4],
            "models": ["mean"], "qvals": [], "tf": "preset:tangle",
            "camera": "preset:tangle", "size": [10, 8], "seed": 5,
        }
        a = run_experiment(manifest, tmp_path / "a")
        b = run_experiment(manifest, tmp_path / "b")
        assert a == b
        assert ((tmp_path / "a" / "results.csv").read_bytes()
                == (tmp_path / "b" / "results.csv").read_bytes())
