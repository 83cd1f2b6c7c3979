"""INI-style run configuration.

Sections and keys (everything except ``[grid]`` and ``[model] kind`` is optional)::

    [grid]
    N = 512
    L = 200

    [model]
    kind = CD            ; QG | CD | CD2 | FR
    a = 1.0, 0.0         ; drift, CD/CD2 only

    [time]
    t_end = 100
    snapshots = geom 10 100 12      ; or an explicit list "10, 20, 50"
    dt_cfl = 0.5
    dt_max = 1.0
    dt_rel = 0.05

    [initial]
    bumps = 0.7 -1.0 -0.5 0.9; 0.3 1.0 0.5 1.2   ; amplitude cx cy width
    M0 =                 ; optional target moments
    M1 =

    [report]
    levels = raw, 0, 1
    q = 1, 2, inf
    fit_window = 10, 100
    time_shift = auto    ; or a number
    ambiguous = yes      ; estimate the CD first-moment correction
    write_snapshots = no
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from qgexpand.dynamics import Bump, InitialDataSpec, ModelSpec, SimConfig, default_snapshot_times
from qgexpand.harness.experiments import LEVELS, ExperimentPlan

SECTIONS = ("grid", "model", "time", "initial", "report")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class ReportSettings:
    levels: tuple = ("raw", "0", "1")
    q_list: tuple = (1.0, 2.0, math.inf)
    fit_window: tuple = (10.0, 100.0)
    time_shift: object = "auto"
    ambiguous: bool = True
    write_snapshots: bool = False


@dataclass(frozen=True)
class RunConfig:
    name: str
    sim: SimConfig
    report: ReportSettings

    def plan(self) -> ExperimentPlan:
        r = self.report
        return ExperimentPlan(self.name, self.sim, r.levels, r.q_list, r.fit_window, r.time_shift, r.ambiguous)


def _floats(text: str, sep: str = ",") -> tuple:
    parts = [p.strip() for p in text.split(sep) if p.strip()]
    return tuple(float(p) for p in parts)


def _snapshots(text: str) -> tuple:
    words = text.split()
    if words and words[0] == "geom":
        if len(words) != 4:
            raise ConfigError("snapshots = geom <t_lo> <t_hi> <count>")
        return default_snapshot_times(float(words[1]), float(words[2]), int(words[3]))
    return _floats(text)


def _bumps(text: str) -> tuple:
    out = []
    for chunk in text.split(";"):
        vals = chunk.split()
        if not vals:
            continue
        if len(vals) != 4:
            raise ConfigError(f"bump needs 'amplitude cx cy width', got {chunk.strip()!r}")
        amp, cx, cy, w = (float(v) for v in vals)
        out.append(Bump(amp, (cx, cy), w))
    return tuple(out)


def parse_config(text: str, name: str = "run") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
        unknown = set(cp.sections()) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        for sec in ("grid", "model"):
            if not cp.has_section(sec):
                raise ConfigError(f"missing section [{sec}]")
        N = cp.getint("grid", "N")
        L = cp.getfloat("grid", "L")
        kind = cp.get("model", "kind").strip().upper()
        a = _floats(cp.get("model", "a", fallback="0, 0"))
        model = ModelSpec(kind, a)

        t_end = cp.getfloat("time", "t_end", fallback=100.0)
        snaps = _snapshots(cp.get("time", "snapshots", fallback=f"geom 10 {t_end} 12"))

        init = InitialDataSpec.default()
        if cp.has_section("initial"):
            bumps = cp.get("initial", "bumps", fallback="").strip()
            m0 = cp.get("initial", "M0", fallback="").strip()
            m1 = cp.get("initial", "M1", fallback="").strip()
            init = InitialDataSpec(
                _bumps(bumps) if bumps else init.bumps,
                float(m0) if m0 else None,
                _floats(m1) if m1 else None,
            )
            init.amplitudes()

        sim = SimConfig(
            N, L, model, t_end, snaps, init,
            dt_cfl=cp.getfloat("time", "dt_cfl", fallback=0.5),
            dt_max=cp.getfloat("time", "dt_max", fallback=1.0),
            dt_rel=cp.getfloat("time", "dt_rel", fallback=0.05),
        )
        sim.grid

        rep = ReportSettings()
        if cp.has_section("report"):
            levels = tuple(s.strip() for s in cp.get("report", "levels", fallback=",".join(rep.levels)).split(","))
            bad = [lv for lv in levels if lv not in LEVELS]
            if bad:
                raise ConfigError(f"unknown level(s) {bad}")
            shift = cp.get("report", "time_shift", fallback="auto").strip()
            rep = ReportSettings(
                levels,
                _floats(cp.get("report", "q", fallback="1, 2, inf")),
                _floats(cp.get("report", "fit_window", fallback="10, 100")),
                shift if shift == "auto" else float(shift),
                cp.getboolean("report", "ambiguous", fallback=True),
                cp.getboolean("report", "write_snapshots", fallback=False),
            )
            if len(rep.fit_window) != 2:
                raise ConfigError("fit_window needs two numbers")
            if any(not (q >= 1) for q in rep.q_list):
                raise ConfigError("q values must lie in [1, inf]")
        cfg = RunConfig(name, sim, rep)
        cfg.plan()
        return cfg
    except ConfigError:
        raise
    except (configparser.Error, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, name=path.stem)
