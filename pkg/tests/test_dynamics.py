import math

import numpy as np
import pytest

from qgexpand.dynamics import (
    Bump,
    InitialDataSpec,
    ModelSpec,
    SimConfig,
    StabilityError,
    TailMassError,
    _guard,
    default_snapshot_times,
    linear_reference,
    march,
    nonlinear_flux,
    run,
    step,
)
from qgexpand.profiles import gauss
from qgexpand.spectral import apply_multiplier, gradient, lq_norm, make_grid, moments

ALL_KINDS = ("QG", "CD", "CD2", "FR")


def drift_for(kind):
    return (1.0, 0.5) if kind in ("CD", "CD2") else (0.0, 0.0)


def sampled_gauss(g, t=1.0):
    return g.sample(lambda X, Y: gauss(t, np.stack([X, Y])))


@pytest.fixture(scope="module")
def grid():
    return make_grid(128, 40.0)


class TestModelSpec:
    def test_kinds(self):
        for k in ALL_KINDS:
            assert ModelSpec(k, drift_for(k)).kind.value == k

    @pytest.mark.parametrize("kind", ["QG", "FR"])
    def test_drift_rejected(self, kind):
        with pytest.raises(ValueError):
            ModelSpec(kind, (1.0, 0.0))

    def test_nonfinite_drift(self):
        with pytest.raises(ValueError):
            ModelSpec("CD", (math.nan, 0.0))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ModelSpec("XY")


class TestInitialData:
    def test_default_moments(self, grid):
        u0 = InitialDataSpec.default().sample(grid)
        m = moments(u0)
        assert m.M0 == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(m.M1, (0.4, 0.2), atol=1e-12)
        assert m.tail_mass < 1e-8

    def test_target_moments(self, grid):
        spec = InitialDataSpec(
            (Bump(1.0, (0.5, 0.0), 1.0), Bump(1.0, (-1.0, 1.0), 0.8), Bump(1.0, (0.0, -1.0), 1.1)),
            target_M0=1.5,
            target_M1=(0.3, -0.2),
        )
        m = moments(spec.sample(grid))
        assert m.M0 == pytest.approx(1.5, abs=1e-8)
        np.testing.assert_allclose(m.M1, (0.3, -0.2), atol=1e-8)

    def test_unreachable_moments(self):
        spec = InitialDataSpec((Bump(1.0, (0.0, 0.0), 1.0),), target_M0=1.0, target_M1=(1.0, 0.0))
        with pytest.raises(ValueError):
            spec.amplitudes()

    def test_bad_width(self):
        with pytest.raises(ValueError):
            Bump(1.0, (0, 0), 0.0)


class TestFlux:
    def test_qg_radial(self, grid):
        f = nonlinear_flux(ModelSpec("QG"), sampled_gauss(grid))
        for comp in f:
            assert abs(comp.integral()) <= 1e-10
        div = apply_multiplier(gradient(), f[0])[0] + apply_multiplier(gradient(), f[1])[1]
        assert abs(div.integral()) <= 1e-10

    def test_cd_gauss(self, grid):
        f = nonlinear_flux(ModelSpec("CD", (1.0, 0.0)), sampled_gauss(grid))
        assert f[0].integral() == pytest.approx(1 / (8 * np.pi), abs=1e-6)
        assert abs(f[1].integral()) <= 1e-12

    def test_cd2_matches_cd_for_positive_data(self, grid):
        u = sampled_gauss(grid)
        a = (0.3, -0.7)
        f1 = nonlinear_flux(ModelSpec("CD", a), u)
        f2 = nonlinear_flux(ModelSpec("CD2", a), u)
        for c1, c2 in zip(f1, f2):
            np.testing.assert_allclose(c1.values, c2.values, atol=1e-15)

    def test_fr_gauss(self, grid):
        f = nonlinear_flux(ModelSpec("FR"), sampled_gauss(grid))
        for comp in f:
            assert abs(comp.integral()) <= 1e-10


class TestStep:
    def test_linear_exact(self, grid):
        u0 = InitialDataSpec.default().sample(grid)
        out = step(u0, ModelSpec.linear(), 0.7)
        ref = linear_reference(u0, 0.7)
        assert lq_norm(out - ref, math.inf) <= 1e-12 * lq_norm(ref, math.inf)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_mass_conserved(self, grid, kind):
        u0 = InitialDataSpec.default().sample(grid)
        u1 = step(u0, ModelSpec(kind, drift_for(kind)), 0.1)
        assert u1.integral() == pytest.approx(u0.integral(), rel=1e-13)

    def test_qg_first_moment(self):
        # N = 256 keeps the dealiasing cutoff clear of the product spectrum
        grid = make_grid(256, 40.0)
        spec = InitialDataSpec(tuple(Bump(4 * b.amplitude, b.center, b.width) for b in InitialDataSpec.default().bumps))
        u0 = spec.sample(grid)
        dt = 0.05
        u1 = step(u0, ModelSpec("QG"), dt)
        m0, m1 = np.array(moments(u0).M1), np.array(moments(u1).M1)
        assert np.max(np.abs(m1 - m0)) <= 1e-8 * np.max(np.abs(m0)) * dt

    def test_rejects_bad_dt(self, grid):
        with pytest.raises(ValueError):
            step(grid.zeros(), ModelSpec("QG"), 0.0)

    def test_guard(self):
        with pytest.raises(StabilityError):
            _guard(np.ones((4, 4)), 11 * np.ones((4, 4)))
        with pytest.raises(StabilityError):
            _guard(np.ones((4, 4)), np.full((4, 4), np.inf))
        _guard(np.ones((4, 4)), 9 * np.ones((4, 4)))

    def test_march_matches_single_steps(self, grid):
        u0 = InitialDataSpec.default().sample(grid)
        model = ModelSpec("FR")
        a = march(u0, model, 0.1, 2)
        b = step(step(u0, model, 0.1), model, 0.1)
        np.testing.assert_allclose(a.values, b.values, atol=1e-15)


class TestRun:
    def test_zero_data(self):
        cfg = SimConfig(32, 20.0, ModelSpec("QG"), 2.0, (1.0, 2.0), InitialDataSpec.zero())
        snaps, rows = run(cfg)
        assert all(np.all(s.values == 0) for s in snaps)
        assert len(snaps) == 2

    def test_linear_semigroup(self, grid):
        cfg = SimConfig(128, 40.0, ModelSpec.linear(), 3.0, (0.5, 1.7, 3.0))
        u0 = sampled_gauss(grid)
        out = run(cfg, initial=u0)
        for t, snap in zip(cfg.snapshot_times, out.snapshots):
            ref = sampled_gauss(grid, 1.0 + t)
            assert lq_norm(snap - ref, math.inf) <= 1e-10 * lq_norm(ref, math.inf)

    def test_rows_and_landing(self):
        times = (0.3, 1.0, 2.5)
        cfg = SimConfig(128, 40.0, ModelSpec("QG"), 3.0, times)
        out = run(cfg)
        ts = [r.t for r in out.diagnostics]
        assert ts[0] == 0.0 and ts[-1] == 3.0
        assert all(b > a for a, b in zip(ts, ts[1:]))
        for t in times:
            assert t in ts
        assert out.snapshot_at(1.0) is out.snapshots[1]

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_mass_over_run(self, kind):
        cfg = SimConfig(128, 40.0, ModelSpec(kind, drift_for(kind)), 3.0, (3.0,))
        rows = run(cfg).diagnostics
        m = np.array([r.M0 for r in rows])
        assert np.max(np.abs(m - m[0])) <= 1e-10 * abs(m[0])

    def test_cd_first_moment_budget(self):
        cfg = SimConfig(128, 40.0, ModelSpec("CD", (1.0, 0.0)), 3.0, (3.0,))
        rows = run(cfg).diagnostics
        dm = np.array(rows[-1].M1) - np.array(rows[0].M1)
        np.testing.assert_allclose(dm, rows[-1].flux_integral, rtol=0, atol=1e-4)

    def test_norms_non_increasing(self):
        cfg = SimConfig(128, 40.0, ModelSpec("QG"), 3.0, (3.0,))
        rows = run(cfg).diagnostics
        for name in ("l1", "l2", "linf"):
            v = np.array([getattr(r, name) for r in rows])
            # slack for the faint ringing of dealiased products
            assert np.all(np.diff(v) <= 1e-9 * v[0]), name

    def test_tail_abort(self):
        cfg = SimConfig(32, 8.0, ModelSpec("QG"), 20.0, (20.0,))
        with pytest.raises(TailMassError):
            run(cfg)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(snapshot_times=(2.0, 1.0)),
            dict(snapshot_times=(0.0,)),
            dict(snapshot_times=(5.0,)),
            dict(dt_cfl=1.5),
            dict(t_end=-1.0),
            dict(dt_max=0.0),
        ],
    )
    def test_config_validation(self, kwargs):
        base = dict(N=32, L=10.0, model=ModelSpec("QG"), t_end=3.0, snapshot_times=(1.0,))
        base.update(kwargs)
        with pytest.raises(ValueError):
            SimConfig(**base)

    def test_snapshot_times_helper(self):
        t = default_snapshot_times(10, 100, 12)
        assert len(t) == 12 and t[0] == 10 and t[-1] == pytest.approx(100)
        ratios = np.diff(np.log(t))
        np.testing.assert_allclose(ratios, ratios[0])
