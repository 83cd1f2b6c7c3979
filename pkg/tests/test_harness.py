import math
from pathlib import Path

import numpy as np
import pytest

from qgexpand.dynamics import DiagnosticsRow, InitialDataSpec, ModelSpec, SimConfig, run
from qgexpand.harness.cli import main
from qgexpand.harness.config import ConfigError, load_config, parse_config
from qgexpand.harness.experiments import (
    ExperimentPlan,
    ProfileParameters,
    estimate_ambiguous,
    fit_rows,
    level_flags,
    residual_norms,
    run_experiment,
)
from qgexpand.harness.fitting import FloorError, fit_decay
from qgexpand.harness.io import (
    RESIDUAL_COLUMNS,
    read_residuals,
    read_snapshot,
    read_steps,
    write_residuals,
    write_snapshot,
    write_steps,
)
from qgexpand.profiles import ExpansionFlags, gauss, logshift_coefficient
from qgexpand.spectral import make_grid

SMALL_CFG = """
[grid]
N = 128
L = 40

[model]
kind = {kind}
a = {a}

[time]
t_end = 4
snapshots = geom 0.5 4 8

[report]
levels = raw, 0, 1
q = 1, 2, inf
fit_window = 0.5, 4
"""


def small_cfg(kind="CD", a="1, 0"):
    return SMALL_CFG.format(kind=kind, a=a)


class TestFit:
    def test_exact_power(self):
        t = np.geomspace(1, 100, 10)
        f = fit_decay(t, 3.0 / t)
        assert f.slope == pytest.approx(-1.0, abs=1e-12)
        assert f.intercept == pytest.approx(math.log(3.0), abs=1e-12)
        assert f.stderr < 1e-12 and f.n_points == 10

    def test_log_contamination(self):
        t = np.geomspace(10, 1000, 12)
        f = fit_decay(t, np.log(t) / t)
        # the log factor biases the slope upward by the regression slope of log log t
        bias = np.polyfit(np.log(t), np.log(np.log(t)), 1)[0]
        assert f.slope == pytest.approx(-1.0 + bias, abs=1e-12)
        assert -1.0 < f.slope < -0.7

    def test_floor(self):
        t = np.geomspace(1, 10, 8)
        with pytest.raises(FloorError):
            fit_decay(t, np.r_[np.ones(7), 0.0])

    @pytest.mark.parametrize(
        "times,norms",
        [
            (np.arange(1.0, 8.0), np.ones(7)),
            (np.r_[2.0, np.arange(1.0, 8.0)], np.ones(8)),
            (np.arange(0.0, 8.0), np.ones(8)),
        ],
    )
    def test_rejects(self, times, norms):
        with pytest.raises(ValueError):
            fit_decay(times, norms)

    def test_within(self):
        f = fit_decay(np.geomspace(1, 10, 8), np.geomspace(1, 10, 8) ** -1.5)
        assert f.within(-1.45, 0.1) and not f.within(-1.0, 0.1)


class TestLevels:
    def test_flags(self):
        assert level_flags("QG", "raw") is None
        assert level_flags("QG", "0") == ExpansionFlags(True, False, False, False)
        assert level_flags("CD", "1-nolog") == ExpansionFlags(True, True, False, True)
        assert level_flags("FR", "1-noj1") == ExpansionFlags(True, True, False, False)

    @pytest.mark.parametrize("kind,level", [("QG", "1-nolog"), ("QG", "1-noj1"), ("FR", "1-nolog"), ("CD", "2")])
    def test_bad(self, kind, level):
        with pytest.raises(ValueError):
            level_flags(kind, level)

    def test_plan_needs_points(self):
        cfg = SimConfig(32, 10.0, ModelSpec("QG"), 2.0, (1.0, 2.0))
        with pytest.raises(ValueError):
            ExperimentPlan("x", cfg, fit_window=(0.5, 2.0))


class TestResiduals:
    def test_linear_heat_shifted_is_exact(self):
        # a wide box keeps periodic images of G(1 + t) below the tolerance
        g = make_grid(256, 80.0)
        u0 = g.sample(lambda X, Y: gauss(1.0, np.stack([X, Y])))
        times = tuple(np.geomspace(0.5, 4.0, 8))
        cfg = SimConfig(256, 80.0, ModelSpec.linear(), 4.0, times)
        out = run(cfg, initial=u0)
        plan = ExperimentPlan("heat", cfg, ("0",), (1.0, 2.0, math.inf), (0.5, 4.0), 1.0, False)
        rows = residual_norms(out.snapshots, times, plan, ProfileParameters(1.0, (0.0, 0.0), 1.0))
        assert max(r.norm for r in rows) <= 1e-10

    def test_linear_heat_second_order(self):
        # the t^(-3/2) correction is still visible before t ~ 5
        times = tuple(np.geomspace(5.0, 50.0, 10))
        cfg = SimConfig(256, 120.0, ModelSpec.linear(), 50.0, times)
        plan = ExperimentPlan("heat", cfg, ("0", "1"), (1.0,), (5.0, 50.0), 0.0, False)
        exp = run_experiment(plan)
        assert exp.fit("1", 1.0).slope <= -0.95
        # the t^(-1) second-moment term still bends the level-0 curve here
        assert -0.7 <= exp.fit("0", 1.0).slope <= -0.5

    def test_grid_mismatch(self):
        cfg = SimConfig(32, 10.0, ModelSpec("QG"), 8.0, tuple(range(1, 9)))
        plan = ExperimentPlan("x", cfg, fit_window=(1, 8))
        wrong = [make_grid(64, 10.0).zeros()]
        with pytest.raises(ValueError):
            residual_norms(wrong, (1.0,), plan, ProfileParameters(1.0, (0, 0), 0.0))


def _rows(ts, flux_fn, a, beta):
    q = np.zeros(2)
    rows = []
    prev = None
    for t in ts:
        f = np.array(flux_fn(t))
        if prev is not None:
            q = q + 0.5 * (f + prev[1]) * (t - prev[0])
        rows.append(DiagnosticsRow(t, 0, 0, 0, 1.0, (0, 0), 0, tuple(f), tuple(q)))
        prev = (t, f)
    return rows


class TestAmbiguous:
    def test_recovers_constant(self):
        a = np.array([1.0, 0.0])
        beta = logshift_coefficient(1.0)
        c = 0.02
        ts = np.linspace(0, 200, 20001)
        # integrand: β a/(1+s) + c/(1+s)^2, whose excess integrates to c
        rows = _rows(ts, lambda s: beta * a / (1 + s) + np.array([c, 0]) / (1 + s) ** 2, a, beta)
        est = estimate_ambiguous(rows, a, 1.0)
        assert est.value[0] == pytest.approx(c, rel=1e-3)
        assert est.value[1] == 0.0
        assert est.exponent[0] == pytest.approx(-2.0, abs=0.05)
        assert 0 < est.tail[0] < 1e-3


class TestConfig:
    def test_parse(self):
        cfg = parse_config(small_cfg(), "demo")
        assert cfg.sim.N == 128 and cfg.sim.model.a == (1.0, 0.0)
        assert len(cfg.sim.snapshot_times) == 8
        assert cfg.report.q_list[-1] == math.inf
        assert cfg.plan().name == "demo"

    def test_initial_section(self):
        text = small_cfg() + "\n[initial]\nbumps = 1 0.5 0 1; 1 -0.5 0.5 1.2\nM0 = 2\n"
        cfg = parse_config(text)
        assert cfg.sim.initial.amplitudes().sum() == pytest.approx(2.0)

    @pytest.mark.parametrize("kind", ["QG", "CD", "CD2", "FR"])
    def test_shipped_configs(self, kind):
        path = Path(__file__).resolve().parents[1] / "configs" / f"{kind.lower()}.cfg"
        cfg = load_config(path)
        assert cfg.sim.model.kind.value == kind
        assert cfg.sim.L == 200.0 and cfg.sim.t_end == 100.0
        assert cfg.plan().fit_window == (10.0, 100.0)

    @pytest.mark.parametrize(
        "text",
        [
            "[grid]\nN = 100\nL = 10\n[model]\nkind = QG\n",
            "[grid]\nN = 64\nL = 10\n[model]\nkind = ZZ\n",
            "[grid]\nN = 64\nL = 10\n[model]\nkind = QG\na = 1, 0\n",
            "[grid]\nN = 64\nL = 10\n",
            "[grid]\nN = 64\nL = 10\n[model]\nkind = QG\n[extra]\nx = 1\n",
            "[grid]\nN = 64\nL = 10\n[model]\nkind = QG\n[initial]\nbumps = 1 2 3\n",
            "[grid]\nN = 64\nL = 10\n[model]\nkind = QG\n[report]\nlevels = raw, 7\n",
            "not an ini file",
        ],
    )
    def test_bad(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)


class TestIO:
    def test_residual_round_trip(self, tmp_path):
        cfg = parse_config(small_cfg())
        exp = run_experiment(cfg.plan())
        path = write_residuals(exp.rows, tmp_path / "r.csv")
        header = path.read_text().splitlines()[0]
        assert header == ",".join(RESIDUAL_COLUMNS)
        back = read_residuals(path)
        assert back == exp.rows

    def test_seventeen_digits(self, tmp_path):
        from qgexpand.harness.experiments import ResidualRow

        r = ResidualRow(1 / 3, math.inf, "0", 0.1, 1.0, 0.0, -0.0, 0.0)
        line = write_residuals([r], tmp_path / "x.csv").read_text().splitlines()[1]
        first = line.split(",")[0]
        assert first == "3.3333333333333331e-01"
        assert line.split(",")[1] == "inf"

    def test_steps(self, tmp_path):
        out = run(SimConfig(128, 40.0, ModelSpec("CD", (1, 0)), 0.5, (0.5,)))
        path = write_steps(out.diagnostics, tmp_path / "s.csv")
        tab = read_steps(path)
        assert tab["t"][0] == 0.0 and tab["t"][-1] == 0.5
        np.testing.assert_array_equal(tab["flux_int_x"][-1], out.diagnostics[-1].flux_integral[0])

    def test_snapshot(self, tmp_path):
        g = make_grid(16, 5.0)
        f = InitialDataSpec.default().sample(g)
        p = write_snapshot(f, 2.5, "QG", tmp_path / "s.txt")
        assert p.read_text().splitlines()[0] == "16 5.0000000000000000e+00 2.5000000000000000e+00 QG"
        back, t, model = read_snapshot(p)
        np.testing.assert_array_equal(back.values, f.values)
        assert (t, model) == (2.5, "QG")


class TestCLI:
    def write_cfg(self, tmp_path, text):
        p = tmp_path / "run.cfg"
        p.write_text(text)
        return p

    def test_simulate_and_fit(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, small_cfg("QG", "0, 0"))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        rows = read_residuals(tmp_path / "a" / "diagnostics.csv")
        ts = sorted({r.t for r in rows})
        assert ts == sorted(ts) and len(ts) == 8
        code = main(["fit", "--input", str(tmp_path / "a" / "diagnostics.csv"), "--level", "raw",
                     "--q", "inf", "--window", "0.5", "4"])
        assert code == 0
        assert "slope" in capsys.readouterr().out

    def test_fit_expectation(self, tmp_path):
        cfg = self.write_cfg(tmp_path, small_cfg("QG", "0, 0"))
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
        csv = str(tmp_path / "diagnostics.csv")
        assert main(["fit", "--input", csv, "--level", "raw", "--q", "1", "--window", "0.5", "4",
                     "--expect", "0", "--tol", "0.01"]) == 0
        assert main(["fit", "--input", csv, "--level", "raw", "--q", "1", "--window", "0.5", "4",
                     "--expect", "-3"]) == 1

    def test_deterministic(self, tmp_path):
        cfg = self.write_cfg(tmp_path, small_cfg())
        for d in ("x", "y"):
            assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
        for name in ("diagnostics.csv", "steps.csv"):
            assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()

    def test_snapshots_written(self, tmp_path):
        cfg = self.write_cfg(tmp_path, small_cfg() + "write_snapshots = yes\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("snapshot_*.txt"))) == 8

    def test_bad_config_exit(self, tmp_path):
        cfg = self.write_cfg(tmp_path, "[grid]\nN = 7\n")
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2

    def test_bad_arguments_exit(self):
        with pytest.raises(SystemExit) as exc:
            main(["nonsense"])
        assert exc.value.code == 2

    def test_run_abort_exit(self, tmp_path):
        text = "[grid]\nN = 32\nL = 8\n[model]\nkind = QG\n[time]\nt_end = 20\nsnapshots = geom 1 20 8\n" \
               "[report]\nfit_window = 1, 20\n"
        cfg = self.write_cfg(tmp_path, text)
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1

    def test_verify_subordination(self, capsys):
        assert main(["verify", "--suite", "subordination"]) == 0
        assert capsys.readouterr().out.startswith("PASS")

    def test_profile_eval(self, tmp_path):
        out = tmp_path / "p.csv"
        assert main(["profile-eval", "--term", "j1_fr", "--N", "16", "--L", "8", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "x,y,value" and len(lines) == 257

    def test_accept_unknown_criterion(self):
        assert main(["accept", "--criteria", "42"]) == 2
