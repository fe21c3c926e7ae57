import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oscint import cli, harness
from oscint.harness import (ConfigError, InsufficientPoints, config_from_dict, converge,
                            fit_order, parse_config, quad_demo, serialize_config)


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_defaults_filled(self):
        cfg = config_from_dict({"problem": {"kind": "ode"}})
        assert cfg.scheme["l"] == 2 and cfg.scheme["gamma"] == 0.5
        assert cfg.problem["potential"] == "quartic"
        assert cfg.reference["method"] == "auto"

    def test_round_trip(self):
        text = json.dumps({"problem": {"kind": "kg", "n_modes": 16},
                           "scheme": {"l": 3, "c": 50.0, "m": 2, "N": 12},
                           "t_final": 0.5, "output": "x"})
        cfg = parse_config(text)
        again = parse_config(serialize_config(cfg))
        assert again.to_dict() == cfg.to_dict()
        assert serialize_config(again) == serialize_config(cfg)

    @settings(max_examples=50, deadline=None)
    @given(l=st.integers(1, 4), N=st.integers(1, 64), m=st.integers(1, 100),
           c=st.floats(1.0, 1e6), t=st.floats(0.0, 10.0))
    def test_round_trip_property(self, l, N, m, c, t):
        cfg = config_from_dict({"problem": {"kind": "ode"}, "t_final": t,
                                "scheme": {"l": l, "N": N, "m": m, "c": c}})
        assert parse_config(serialize_config(cfg)).to_dict() == cfg.to_dict()

    @pytest.mark.parametrize("data", [
        [], {"problem": {"kind": "heat"}}, {"problem": {}}, {"scheme": {}},
        {"problem": {"kind": "ode"}, "bogus": 1},
        {"problem": {"kind": "ode"}, "scheme": {"l": 5}},
        {"problem": {"kind": "ode"}, "scheme": {"l": 0}},
        {"problem": {"kind": "ode"}, "scheme": {"N": 65}},
        {"problem": {"kind": "ode"}, "scheme": {"N": 2.5}},
        {"problem": {"kind": "ode"}, "scheme": {"c": 0.5}},
        {"problem": {"kind": "ode"}, "scheme": {"m": 0}},
        {"problem": {"kind": "ode"}, "scheme": {"gamma": 1.0}},
        {"problem": {"kind": "ode"}, "scheme": {"M": 0}},
        {"problem": {"kind": "ode"}, "scheme": {"inner_split": "x"}},
        {"problem": {"kind": "ode"}, "scheme": {"q": 1}},
        {"problem": {"kind": "ode"}, "t_final": -1},
        {"problem": {"kind": "ode"}, "reference": {"method": "rk4"}},
    ])
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_invalid_json(self):
        with pytest.raises(ConfigError):
            parse_config("{not json")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            harness.load_config(tmp_path / "absent.json")


class TestFitOrder:
    taus = np.array([0.1, 0.05, 0.025, 0.0125, 0.00625])

    def test_linear(self):
        assert fit_order(zip(self.taus, 3.0 * self.taus)) == pytest.approx(1.0, abs=1e-10)

    def test_cubic(self):
        assert fit_order(zip(self.taus, 0.2 * self.taus ** 3)) == pytest.approx(3.0, abs=1e-10)

    def test_floor_filter(self):
        taus = 2.0 ** -np.arange(1, 24)
        errs = 0.7 * (taus ** 2 + 1e-10)
        assert 1.9 <= fit_order(zip(taus, errs), floor=1e-10) <= 2.1
        assert fit_order(zip(taus, errs)) < 1.8

    def test_insufficient(self):
        with pytest.raises(InsufficientPoints):
            fit_order([(0.1, 1.0), (0.05, 0.5)])
        with pytest.raises(InsufficientPoints):
            fit_order([(0.1, 1.0), (0.05, 0.0), (0.02, math.nan), (0.01, 0.1)])
        with pytest.raises(InsufficientPoints):
            fit_order(zip(self.taus, self.taus), floor=1.0)

    @settings(max_examples=50, deadline=None)
    @given(p=st.floats(0.5, 6.0), C=st.floats(1e-3, 1e3))
    def test_recovers_power(self, p, C):
        assert fit_order(zip(self.taus, C * self.taus ** p)) == pytest.approx(p, abs=1e-8)


class TestSweeps:
    def test_first_and_second_order(self):
        cfg = config_from_dict({"problem": {"kind": "ode"}, "t_final": 1.0,
                                "scheme": {"N": 16, "c": 100.0}})
        report = converge(cfg, {"l": [1, 2], "m": [1, 2, 4, 8, 16]})
        assert 0.7 <= report.slope(100.0, 1) <= 1.4
        assert 1.6 <= report.slope(100.0, 2) <= 2.4
        assert all(r["error"] >= 0 for r in report.cells)
        assert [(r["l"], r["m"]) for r in report.cells] == \
            [(l, m) for l in (1, 2) for m in (1, 2, 4, 8, 16)]

    @pytest.mark.parametrize("N", [
        pytest.param(8, marks=pytest.mark.xfail(
            strict=True, reason="c = 1000 error sits at the N = 8 quadrature floor")),
        16])
    def test_uniform_in_c(self, N):
        cfg = config_from_dict({"problem": {"kind": "ode"}, "t_final": 1.0,
                                "scheme": {"N": N, "l": 2, "m": 4}})
        report = converge(cfg, {"c": [10.0, 100.0, 1000.0]})
        u = report.uniformity[f"l=2,N={N}"]
        assert u["c_values"] == [10.0, 100.0, 1000.0]
        assert u["ratio"] <= 3.0

    def test_invalid_cell_is_flagged(self):
        cfg = config_from_dict({"problem": {"kind": "ode"}, "t_final": 1.0})
        cell = harness.run_cell(cfg, 1.0, 1, 1, 4)
        assert cell["status"].startswith("invalid") and math.isnan(cell["error"])

    def test_empty_sweep(self):
        cfg = config_from_dict({"problem": {"kind": "ode"}})
        with pytest.raises(ConfigError):
            converge(cfg, {"m": []})


class TestQuadDemo:
    def test_trapezoid_monotone_exponential(self):
        rows = quad_demo("trapezoid")
        errs = np.array([r[-1] for r in rows])
        Ns = np.array([r[3] for r in rows])
        assert Ns[0] == 2 and Ns[-1] == 24
        above = errs > 1e-15
        assert np.all(np.diff(errs[above]) < 0)
        assert np.polyfit(Ns[above], np.log(errs[above]), 1)[0] < -1.0

    def test_gauss_superexponential(self):
        errs = np.array([r[-1] for r in quad_demo("gauss")])
        assert len(errs) == 10
        ratios = errs[1:6] / errs[:5]
        assert np.all(np.diff(ratios) < 0)
        assert errs[-1] < 1e-14

    def test_gram_exact(self):
        rows = quad_demo("gram")
        assert len(rows) == 6
        assert max(r[-1] for r in rows) < 1e-11

    def test_double(self):
        rows = quad_demo("double", 10)
        assert rows[-1][3] == 10
        assert rows[0][-1] > rows[-1][-1]

    def test_unknown(self):
        with pytest.raises(ConfigError):
            quad_demo("simpson")


class TestCLI:
    def test_solve_row_count(self, tmp_path, capsys):
        path = write_config(tmp_path, {"problem": {"kind": "ode"}, "t_final": 0.2,
                                       "scheme": {"l": 2, "c": 10.0, "m": 1, "N": 8}})
        assert cli.main(["solve", "--config", path, "--out", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "trajectory.csv")
        tau = 2 * math.pi / 100.0
        n = int(0.2 / tau)
        assert rows[0] == harness.TRAJECTORY_COLUMNS
        assert len(rows) == 1 + n + 1
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["status"] == "ok" and summary["n_steps"] == n
        assert float(rows[-1][3]) < 1e-2

    def test_free_problem_constant_norm(self, tmp_path):
        path = write_config(tmp_path, {"problem": {"kind": "free"}, "t_final": 0.5,
                                       "scheme": {"l": 3, "c": 30.0, "m": 5, "N": 4}})
        assert cli.main(["solve", "--config", path, "--out", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "trajectory.csv")[1:]
        norms = np.array([float(r[2]) for r in rows])
        assert np.ptp(norms) <= 1e-13 * norms[0]

    def test_solve_deterministic(self, tmp_path):
        data = {"problem": {"kind": "kg", "n_modes": 8}, "t_final": 0.3,
                "scheme": {"l": 2, "c": 10.0, "m": 1, "N": 6}}
        path = write_config(tmp_path, data)
        texts = []
        for k in range(2):
            assert cli.main(["solve", "--config", path, "--out", str(tmp_path / str(k))]) == 0
            texts.append((tmp_path / str(k) / "trajectory.csv").read_bytes())
        assert texts[0] == texts[1]
        assert b"\r" not in texts[0]

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["solve", "--config", str(tmp_path / "nope.json")]) == 1
        assert "configuration error" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        path = write_config(tmp_path, {"problem": {"kind": "ode"}, "scheme": {"l": 9}})
        assert cli.main(["solve", "--config", path]) == 1

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["solve"])
        assert info.value.code == 1

    def test_blowup_exit_code(self, tmp_path):
        path = write_config(tmp_path, {"problem": {"kind": "kg", "n_modes": 8, "amplitude": 60.0},
                                       "t_final": 0.9,
                                       "scheme": {"l": 1, "c": 10.0, "m": 1, "N": 4}})
        with np.errstate(all="ignore"):
            code = cli.main(["solve", "--config", path, "--out", str(tmp_path / "o")])
        assert code == 2
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["status"] in ("blowup", "numerical_failure")

    def test_converge_outputs(self, tmp_path, capsys):
        path = write_config(tmp_path, {"problem": {"kind": "ode"}, "t_final": 0.5,
                                       "scheme": {"N": 12, "c": 100.0, "l": 1}})
        out = tmp_path / "conv"
        args = ["converge", "--config", path, "--sweep", "m=2,4,8,16", "--out", str(out)]
        assert cli.main(args) == 0
        first = (out / "convergence.csv").read_bytes()
        rows = read_csv(out / "convergence.csv")
        assert rows[0] == harness.CELL_COLUMNS and len(rows) == 5
        assert read_csv(out / "slopes.csv")[0] == harness.SLOPE_COLUMNS
        assert "slope=" in capsys.readouterr().out
        assert cli.main(args) == 0
        assert (out / "convergence.csv").read_bytes() == first

    def test_converge_bad_sweep(self, tmp_path):
        path = write_config(tmp_path, {"problem": {"kind": "ode"}})
        assert cli.main(["converge", "--config", path, "--sweep", "q=1,2"]) == 1
        assert cli.main(["converge", "--config", path, "--sweep", "m=a"]) == 1
        assert cli.main(["converge", "--config", path, "--sweep", "m="]) == 1

    def test_quad_demo_columns(self, capsys):
        assert cli.main(["quad-demo", "--rule", "gauss", "--max-n", "6"]) == 0
        out = capsys.readouterr().out
        body = [line for line in out.splitlines() if not line.startswith("#")]
        rows = list(csv.reader(io.StringIO("\n".join(body))))
        assert rows[0] == harness.QUAD_COLUMNS
        assert len(rows) == 7
        assert float(rows[-1][-1]) < 1e-10

    def test_quad_demo_bad_max_n(self):
        assert cli.main(["quad-demo", "--rule", "gram", "--max-n", "0"]) == 1

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "oscint", "quad-demo", "--rule", "gram"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0
        assert "gram,3,30" in proc.stdout
