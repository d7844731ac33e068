import csv
import json

import pytest

from pbiharmonic.cli import DEFAULT_CONFIG, load_config, main
from pbiharmonic.discretization import RadialProfile, build_grid
from pbiharmonic.errors import ConfigError
from pbiharmonic.minimizer import SWEEP_HEADER

from conftest import bump_profile


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


def snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "metadata.json"}


class TestConstants:
    def test_624(self, capsys):
        code, out = run(["constants", "--N", 6, "--p", 2, "--q", 4], capsys)
        assert code == 0
        doc = json.loads(out.out)
        assert doc["f_t0"] == -18.75
        assert doc["remark_threshold"] == -18.5
        assert doc["rellich_constant"] == 9.0

    def test_regime_violation(self, capsys):
        code, out = run(["constants", "--N", 4, "--p", 2, "--q", 3], capsys)
        assert code == 2
        assert "N ≤ 2p" in out.err

    def test_critical_beta(self, capsys):
        code, out = run(["constants", "--N", 6, "--p", 2, "--q", 6], capsys)
        assert code == 0 and json.loads(out.out)["beta"] == 0

    def test_small_p_has_no_thresholds(self, capsys):
        code, out = run(["constants", "--N", 6, "--p", 1.5, "--q", 3], capsys)
        doc = json.loads(out.out)
        assert code == 0 and doc["t0"] is None and "note" in doc


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"params": {"N": 6, "bogus": 1}}))
        code, out = run(["minimize-radial", "--config", cfg, "--output-dir", tmp_path / "o"], capsys)
        assert code == 2 and "bogus" in out.err

    def test_unknown_top_level_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"nope": 1}))
        with pytest.raises(ConfigError, match="nope"):
            load_config(cfg)

    def test_unreadable(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code, _ = run(["verify", "--config", bad, "--output-dir", tmp_path / "o"], capsys)
        assert code == 2

    def test_invalid_params(self, tmp_path, capsys):
        code, _ = run(["minimize-radial", "--lambda", 10, "--output-dir", tmp_path], capsys)
        assert code == 2

    def test_bad_grid(self, tmp_path, capsys):
        code, _ = run(["minimize-radial", "--M", 5, "--output-dir", tmp_path], capsys)
        assert code == 2

    def test_overrides_win(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"grid": {"M": 300}}))
        c = load_config(cfg, {"grid.M": 400})
        assert c["grid"]["M"] == 400 and c["grid"]["K"] == DEFAULT_CONFIG["grid"]["K"]


class TestRuns:
    def test_minimize_radial_outputs(self, tmp_path):
        out = tmp_path / "o"
        code, _ = run(["minimize-radial", "--M", 513, "--output-dir", out])
        assert code == 0
        rep = json.loads((out / "radial_report.json").read_text())
        assert rep["converged"] and rep["config"]["grid"]["M"] == 513
        prof = RadialProfile.from_json((out / "radial_profile.json").read_text())
        assert prof.grid.M == 513
        assert json.loads((out / "radial_profile.json").read_text())["config"]["params"]["q"] == 4.0
        text = RadialProfile.from_text((out / "radial_profile.dat").read_text())
        assert (text.values == prof.values).all()
        meta = json.loads((out / "metadata.json").read_text())
        assert "timestamp" in meta and meta["command"] == "minimize-radial"

    def test_nonconvergence_exit(self, tmp_path):
        code, _ = run(["minimize-radial", "--M", 513, "--max-iters", 1, "--output-dir", tmp_path])
        assert code == 3
        rep = json.loads((tmp_path / "radial_report.json").read_text())
        assert rep["status"] == "max_iters"

    def test_sweep_five_rows(self, tmp_path):
        code, _ = run(["sweep", "--M", 513, "--lambdas", 0, -5, -10, -20, -30,
                       "--output-dir", tmp_path])
        assert code == 0
        rows = list(csv.reader((tmp_path / "sweep.csv").read_text().splitlines()))
        assert tuple(rows[0]) == SWEEP_HEADER
        assert len(rows) == 6
        dat = (tmp_path / "S_rad.dat").read_text().splitlines()
        assert dat[0].startswith("#") and len(dat) == 6
        assert all(len(line.split()) == 2 for line in dat[1:])
        S = [float(r[1]) for r in rows[1:]]
        assert all(b >= a * (1 - 1e-3) for a, b in zip(S, S[1:]))

    def test_stability_large_residual(self, tmp_path):
        g = build_grid(1e-4, 1e4, 513)
        prof = tmp_path / "bump.json"
        prof.write_text(bump_profile(g, 0.0, 1.0).to_json())
        code, _ = run(["stability", "--M", 513, "--profile", prof, "--output-dir", tmp_path / "o"])
        assert code == 3
        rep = json.loads((tmp_path / "o" / "stability_report.json").read_text())
        assert rep["stability"]["verdict"] == "inconclusive"
        assert rep["status"] == "inconclusive"

    def test_stability_bad_profile(self, tmp_path):
        prof = tmp_path / "x.json"
        prof.write_text(json.dumps({"format": "nope"}))
        code, _ = run(["stability", "--profile", prof, "--output-dir", tmp_path / "o"])
        assert code == 2

    def test_stability_at_breaking_lambda(self, tmp_path):
        code, _ = run(["stability", "--lambda", -23.75, "--output-dir", tmp_path])
        assert code == 0
        rep = json.loads((tmp_path / "stability_report.json").read_text())
        assert rep["stability"]["verdict"] == "unstable"

    def test_verify_rellich(self, tmp_path):
        cfg = tmp_path / "rellich.json"
        cfg.write_text(json.dumps({"params": {"N": 6, "p": 2, "q": 4, "lambda": 0},
                                   "grid": {"M": 2048},
                                   "verify": {"checks": ["rellich"], "n_samples": 500}}))
        code, _ = run(["verify", "--config", cfg, "--output-dir", tmp_path / "o"])
        assert code == 0
        rep = json.loads((tmp_path / "o" / "verify_report.json").read_text())
        assert rep["min_quotient"] >= 8.91
        assert rep["passed"] and rep["checks"]["rellich"]["passed"]

    def test_byte_identical_reruns(self, tmp_path):
        out = tmp_path / "o"
        argv = ["verify", "--checks", "rellich", "rearrangement", "--n-samples", 20,
                "--seed", 5, "--output-dir", out]
        assert run(argv)[0] == 0
        first = snapshot(out)
        assert run(argv)[0] == 0
        assert snapshot(out) == first
        argv = ["minimize-radial", "--M", 513, "--output-dir", out]
        run(argv)
        first = snapshot(out)
        run(argv)
        assert snapshot(out) == first

    def test_seed_changes_samples(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["verify", "--n-samples", 5, "--seed", 1, "--output-dir", a])
        run(["verify", "--n-samples", 5, "--seed", 2, "--output-dir", b])
        assert (a / "verify_rellich.csv").read_bytes() != (b / "verify_rellich.csv").read_bytes()

    def test_json_only_format(self, tmp_path):
        run(["verify", "--n-samples", 5, "--format", "json", "--output-dir", tmp_path])
        assert (tmp_path / "verify_report.json").exists()
        assert not (tmp_path / "verify_rellich.csv").exists()
