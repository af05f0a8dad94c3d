import json

import numpy as np
import pytest

from mortboost import PoissonTree, parse_hmd_1x1
from mortboost.backtest import grid_features
from mortboost.cli import main
from mortboost.grids import rate_surface_from_csv

SIM_SPEC = """
ages = 0:9
years = 2000:2009
seed = 404
exposure = 50000
base_rate = 2e-3
age_slope = 0.12
year_drift = -0.01
male_factor = 1.4
causes = 3
buckets = 0-4;5-9
"""


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    spec = root / "sim.cfg"
    spec.write_text(SIM_SPEC)
    out = root / "data"
    assert main(["simulate", "--spec", str(spec), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def lc_fit_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("lcfit")
    code = main(
        [
            "fit", "lc",
            "--deaths", str(sim_dir / "deaths.txt"),
            "--exposures", str(sim_dir / "exposures.txt"),
            "--ages", "0:9", "--years", "2000:2009",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


class TestSimulate:
    def test_rerun_is_byte_identical(self, sim_dir, tmp_path):
        spec = tmp_path / "sim.cfg"
        spec.write_text(SIM_SPEC)
        again = tmp_path / "data2"
        assert main(["simulate", "--spec", str(spec), "--out", str(again)]) == 0
        for name in ("deaths.txt", "exposures.txt", "cod.csv"):
            assert (again / name).read_bytes() == (sim_dir / name).read_bytes(), name

    def test_outputs_reingest_cleanly(self, sim_dir):
        deaths = parse_hmd_1x1((sim_dir / "deaths.txt").read_text(), "deaths")
        exposures = parse_hmd_1x1((sim_dir / "exposures.txt").read_text(), "exposures")
        assert not np.any(np.isnan(deaths.female))
        assert not np.any(np.isnan(exposures.male))
        manifest = json.loads((sim_dir / "manifest.json").read_text())
        assert manifest["warnings"] == []


class TestFit:
    def test_outputs_and_manifest(self, lc_fit_dir):
        assert (lc_fit_dir / "params.csv").exists()
        qfit_lines = (lc_fit_dir / "qfit.csv").read_text().splitlines()
        assert len(qfit_lines) == 1 + 2 * 10 * 10
        manifest = json.loads((lc_fit_dir / "manifest.json").read_text())
        assert manifest["converged"] == {"female": True, "male": True}

    def test_check_passes_on_fit_params(self, lc_fit_dir, capsys):
        code = main(["check", "--params", str(lc_fit_dir / "params.csv"), "--kind", "lc"])
        assert code == 0
        out = capsys.readouterr().out
        assert "[ok]" in out and "FAIL" not in out

    def test_fit_is_idempotent(self, sim_dir, lc_fit_dir, tmp_path):
        out2 = tmp_path / "again"
        main(
            [
                "fit", "lc",
                "--deaths", str(sim_dir / "deaths.txt"),
                "--exposures", str(sim_dir / "exposures.txt"),
                "--ages", "0:9", "--years", "2000:2009",
                "--out", str(out2),
            ]
        )
        for name in ("params.csv", "qfit.csv", "manifest.json"):
            assert (out2 / name).read_bytes() == (lc_fit_dir / name).read_bytes(), name

    def test_rh_warm_start_nests(self, sim_dir, lc_fit_dir, tmp_path):
        out = tmp_path / "rh"
        code = main(
            [
                "fit", "rh",
                "--deaths", str(sim_dir / "deaths.txt"),
                "--exposures", str(sim_dir / "exposures.txt"),
                "--ages", "0:9", "--years", "2000:2009",
                "--out", str(out),
                "--warm-start", str(lc_fit_dir / "params.csv"),
                "--max-iter", "150",
            ]
        )
        assert code in (0, 4)  # capped iterations may stop before the tolerance
        rh_manifest = json.loads((out / "manifest.json").read_text())
        lc_manifest = json.loads((lc_fit_dir / "manifest.json").read_text())
        assert lc_manifest["config"]["deviance_tol"] == 1e-10
        assert rh_manifest["config"]["deviance_tol"] == 1e-8  # rh-specific default
        for g in ("female", "male"):
            assert rh_manifest["deviance"][g] <= lc_manifest["deviance"][g] + 1e-8
        assert main(["check", "--params", str(out / "params.csv"), "--kind", "rh"]) == 0

    def test_non_convergence_exit_code(self, sim_dir, tmp_path):
        out = tmp_path / "noconv"
        code = main(
            [
                "fit", "lc",
                "--deaths", str(sim_dir / "deaths.txt"),
                "--exposures", str(sim_dir / "exposures.txt"),
                "--ages", "0:9", "--years", "2000:2009",
                "--out", str(out),
                "--max-iter", "1",
            ]
        )
        assert code == 4
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["converged"] == {"female": False, "male": False}
        assert (out / "qfit.csv").exists()


@pytest.fixture(scope="module")
def backtest_dir(sim_dir, lc_fit_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("backtest")
    code = main(
        [
            "backtest",
            "--qfit", str(lc_fit_dir / "qfit.csv"),
            "--deaths", str(sim_dir / "deaths.txt"),
            "--exposures", str(sim_dir / "exposures.txt"),
            "--out", str(out),
            "--cp", "2e-3", "--min-bucket", "5",
            "--svg", "--years-to-plot", "2000,2009",
            "--tag", "LC",
        ]
    )
    assert code == 0
    return out


class TestBacktest:
    def test_delta_csv_schema(self, backtest_dir):
        lines = (backtest_dir / "delta.csv").read_text().splitlines()
        assert lines[0] == "gender,age,year,cohort,delta"
        assert len(lines) == 1 + 200

    def test_tree_text_round_trip(self, backtest_dir, lc_fit_dir):
        tree = PoissonTree.from_text((backtest_dir / "tree.txt").read_text())
        q = rate_surface_from_csv((lc_fit_dir / "qfit.csv").read_text())
        mu = tree.predict(grid_features(q.space))
        deltas = {}
        for line in (backtest_dir / "delta.csv").read_text().splitlines()[1:]:
            g, a, t, c, d = line.split(",")
            deltas[(g, int(a), int(t))] = float(d)
        grid = np.array(
            [deltas[(g, a, t)] for g in ("female", "male") for a in range(10) for t in range(2000, 2010)]
        )
        assert np.array_equal(mu, grid + 1.0)

    def test_svg_outputs_exist(self, backtest_dir):
        import xml.etree.ElementTree as ET

        for name in ("delta_female.svg", "delta_male.svg", "rates_female.svg", "rates_male.svg"):
            ET.fromstring((backtest_dir / name).read_text())

    def test_manifest_has_split_info(self, backtest_dir):
        manifest = json.loads((backtest_dir / "manifest.json").read_text())
        assert manifest["config"]["white_band"] == 0.05
        assert "n_splits" in manifest


class TestCod:
    def test_end_to_end_with_missing_cells(self, sim_dir, lc_fit_dir, tmp_path):
        # inject MISSING cells for cause 2 in the first year
        cod_text = (sim_dir / "cod.csv").read_text().splitlines()
        out_lines = [cod_text[0]]
        blanked = []
        for line in cod_text[1:]:
            g, b, t, k, d = line.split(",")
            if t == "2000" and k == "2":
                line = f"{g},{b},{t},{k},"
                blanked.append((g, int(b), int(t), int(k)))
            out_lines.append(line)
        cod_path = tmp_path / "cod.csv"
        cod_path.write_text("\n".join(out_lines) + "\n")

        out = tmp_path / "cod_out"
        code = main(
            [
                "cod",
                "--cod", str(cod_path),
                "--qfit", str(lc_fit_dir / "qfit.csv"),
                "--exposures", str(sim_dir / "exposures.txt"),
                "--buckets", "0-4;5-9",
                "--causes", "3",
                "--out", str(out),
                "--cp", "1e-3",
                "--min-bucket", "2",
                "--smooth-window", "5",
                "--svg",
            ]
        )
        assert code == 0
        theta_lines = (out / "theta.csv").read_text().splitlines()
        assert theta_lines[0] == "gender,age_group,year,cause,theta_raw,theta_norm,theta_raw_smooth"
        assert len(theta_lines) == 1 + 2 * 2 * 10 * 3

        residuals = {}
        for line in (out / "residuals.csv").read_text().splitlines()[1:]:
            g, b, t, k, d = line.split(",")
            residuals[(g, int(b), int(t), int(k))] = float(d)
        for key in blanked:
            assert residuals[key] == 0.0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["theta_init_value"] == pytest.approx(1 / 3)

    def test_bucket_mismatch_is_data_error(self, sim_dir, lc_fit_dir, tmp_path):
        code = main(
            [
                "cod",
                "--cod", str(sim_dir / "cod.csv"),
                "--qfit", str(lc_fit_dir / "qfit.csv"),
                "--exposures", str(sim_dir / "exposures.txt"),
                "--buckets", "0-2;3-5;6-9",
                "--causes", "3",
                "--out", str(tmp_path / "x"),
            ]
        )
        assert code == 3


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, sim_dir, lc_fit_dir, tmp_path):
        cfg = tmp_path / "mort.cfg"
        cfg.write_text("cp = 0.5\nmin_bucket = 7\n")
        out = tmp_path / "bt"
        code = main(
            [
                "--config", str(cfg),
                "backtest",
                "--qfit", str(lc_fit_dir / "qfit.csv"),
                "--deaths", str(sim_dir / "deaths.txt"),
                "--exposures", str(sim_dir / "exposures.txt"),
                "--out", str(out),
                "--cp", "1e-3",  # flag wins over the config value
            ]
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["cp"] == 1e-3
        assert manifest["config"]["min_bucket"] == 7

    def test_unknown_config_key_is_data_error(self, tmp_path):
        cfg = tmp_path / "mort.cfg"
        cfg.write_text("bogus = 1\n")
        code = main(["--config", str(cfg), "check", "--params", "x", "--kind", "lc"])
        assert code == 3


def test_default_buckets_follow_the_six_group_scheme():
    from mortboost.cli import DEFAULT_BUCKETS, build_parser

    assert DEFAULT_BUCKETS == "0;1-14;15-44;45-64;65-84;85+"
    parser = build_parser()
    args = parser.parse_args(
        ["cod", "--cod", "x", "--qfit", "y", "--exposures", "z", "--out", "o"]
    )
    assert args.buckets == DEFAULT_BUCKETS
    assert args.theta_init == "uniform"
    assert args.cp == 2e-3


class TestErrorPaths:
    def test_parse_error_exit_code(self, tmp_path, sim_dir):
        bad = tmp_path / "bad.txt"
        bad.write_text("garbage\n\nYear Age F M T\nnot numbers at all\n")
        code = main(
            [
                "fit", "lc",
                "--deaths", str(bad),
                "--exposures", str(sim_dir / "exposures.txt"),
                "--ages", "0:9", "--years", "2000:2009",
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code == 3

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "lc"])  # missing required flags
        assert exc.value.code == 2

    def test_missing_file_is_data_error(self, tmp_path):
        code = main(["simulate", "--spec", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")])
        assert code == 3
