"""``snb-lab`` command-line front end.

Usage::

    snb-lab <command> --config <path> [--out <path>] [--series-n <int>] [--grid <int>]

Commands: ``analyze`` (JSON report), ``splot``, ``lplot``, ``sweep``,
``simulate`` and ``boundary`` (CSV).  Exit status is 0 on success, 2 for
configuration errors and 3 for numerical failures; errors are reported as
one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import critical, switching_sim
from .converter import CMC, VMC, ConverterSpec, Custom, StateFeedback, build_loop_gain
from .errors import ConfigError, ConverterSpecError, SNBError
from .tf_core import RationalTF, dc_gain

COMMANDS = ("analyze", "splot", "lplot", "sweep", "simulate", "boundary")

# key -> required?  Units are SI; f_s_hz may replace T.
_CONVERTER_KEYS = {
    "v_s": True, "R": True, "L": True, "C": True, "R_c": False,
    "T": False, "f_s_hz": False, "V_m": True, "v_r": True,
}
_SCHEME_KEYS = {
    "cmc": {},
    "state_feedback": {"k_i": True, "k_v": True},
    "vmc": {"gc_num": True, "gc_den": True},
    "custom": {"num": True, "den": True, "dc_offset_gain": False},
}
_SECTION_KEYS = {
    "analyze": {"grid"},
    "splot": {"d_min", "d_max", "points"},
    "lplot": {"d_min", "d_max", "points"},
    "sweep": {"v_s_min", "v_s_max", "steps", "settle_cycles"},
    "simulate": {"cycles", "points_per_cycle", "skip_cycles", "x0"},
    "boundary": {"x", "x_min", "x_max", "x_points", "y", "y_min", "y_max", "y_samples"},
}
_TOP_KEYS = {"command", "converter", "scheme", *_SECTION_KEYS}


@dataclass
class RunConfig:
    converter: ConverterSpec
    command: Optional[str] = None
    options: dict = field(default_factory=dict)
    out: Optional[str] = None
    series_n: int = critical.N_SS
    grid: Optional[int] = None


def _number(section: str, key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number")
    return float(value)


def _check_keys(section: str, data: dict, allowed: Iterable[str]):
    allowed = set(allowed)
    for k in data:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in [{section}]")


def _parse_converter(raw: dict) -> ConverterSpec:
    conv = raw.get("converter")
    if not isinstance(conv, dict):
        raise ConfigError("missing [converter] section")
    _check_keys("converter", conv, _CONVERTER_KEYS)
    for k, req in _CONVERTER_KEYS.items():
        if req and k not in conv:
            raise ConfigError(f"missing required key {k!r} in [converter]")
    vals = {k: _number("converter", k, v) for k, v in conv.items()}
    if ("T" in vals) == ("f_s_hz" in vals):
        raise ConfigError("[converter] needs exactly one of 'T' (s) or 'f_s_hz' (Hz)")
    if "f_s_hz" in vals:
        f = vals.pop("f_s_hz")
        if f <= 0:
            raise ConfigError("f_s_hz must be positive")
        vals["T"] = 1.0 / f

    sch = raw.get("scheme", {"type": "cmc"})
    if not isinstance(sch, dict) or "type" not in sch:
        raise ConfigError("missing key 'type' in [scheme]")
    kind = sch["type"]
    if kind not in _SCHEME_KEYS:
        raise ConfigError(f"unknown scheme type {kind!r}")
    _check_keys("scheme", sch, {"type", *_SCHEME_KEYS[kind]})
    for k, req in _SCHEME_KEYS[kind].items():
        if req and k not in sch:
            raise ConfigError(f"missing required key {k!r} in [scheme]")

    def poly(key):
        v = sch[key]
        if not isinstance(v, list) or not v:
            raise ConfigError(f"[scheme] {key} must be a non-empty list (ascending powers of s)")
        return [_number("scheme", key, c) for c in v]

    try:
        if kind == "cmc":
            scheme = CMC()
        elif kind == "state_feedback":
            scheme = StateFeedback(_number("scheme", "k_i", sch["k_i"]),
                                   _number("scheme", "k_v", sch["k_v"]))
        elif kind == "vmc":
            scheme = VMC(RationalTF(poly("gc_num"), poly("gc_den")))
        else:
            scheme = Custom(RationalTF(poly("num"), poly("den")),
                            _number("scheme", "dc_offset_gain", sch.get("dc_offset_gain", 1.0)))
        return ConverterSpec(scheme=scheme, **vals)
    except ConfigError:
        raise
    except (ConverterSpecError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(raw: dict, command: Optional[str] = None) -> RunConfig:
    """Validate a decoded TOML/JSON document."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table/object at top level")
    _check_keys("top level", raw, _TOP_KEYS)
    spec = _parse_converter(raw)
    cmd = command or raw.get("command")
    if cmd is not None and cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}")
    options = {}
    for sec, keys in _SECTION_KEYS.items():
        if sec in raw:
            if not isinstance(raw[sec], dict):
                raise ConfigError(f"[{sec}] must be a table")
            _check_keys(sec, raw[sec], keys)
            options[sec] = dict(raw[sec])
    return RunConfig(spec, cmd, options)


def load_config(path, command: Optional[str] = None) -> RunConfig:
    """Read a TOML (or ``.json``) configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(text)
        else:
            raw = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return parse_config(raw, command)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            return ""
        return format(float(v), ".13g")
    return str(v)


def emit_csv(rows: Iterable[Sequence[Any]], path, header: Sequence[str]) -> None:
    """Write rows as CSV with a header; None/NaN become empty fields.

    ``path=None`` writes to stdout.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())


def _opt(cfg: RunConfig, sec: str, key: str, default):
    v = cfg.options.get(sec, {}).get(key, default)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
            raise ConfigError(f"[{sec}] {key} must be a positive integer")
    elif isinstance(default, float):
        v = _number(sec, key, v)
    return v


def _d_grid(cfg, sec):
    spec = cfg.converter
    n = cfg.grid or _opt(cfg, sec, "points", 400)
    lo = _opt(cfg, sec, "d_min", 0.5 / n)
    hi = _opt(cfg, sec, "d_max", 1 - 0.5 / n)
    if not 0 < lo < hi < 1:
        raise ConfigError(f"[{sec}] needs 0 < d_min < d_max < 1 (duty ratios)")
    return np.linspace(lo, hi, n) * spec.T


def _analyze(cfg: RunConfig) -> dict:
    spec = cfg.converter
    grid = cfg.grid or _opt(cfg, "analyze", "grid", critical.GRID)
    lg = build_loop_gain(spec)
    report = {
        "m_a": spec.m_a,
        "K": spec.K,
        "G0": dc_gain(lg.G),
        "T0": None if lg.infinite_gain else dc_gain(lg.T),
        "infinite_loop_gain": lg.infinite_gain,
    }
    sols = critical.find_snb(spec, grid=grid, N=cfg.series_n)
    report["snb"] = [
        {"D": s.D_star, "d": s.d_star, "v_s": s.v_s_star, "method": s.method,
         "balance_residual": s.balance_residual, "slope_residual": s.slope_residual}
        for s in sols
    ]
    report["min_stabilizing_ramp"] = critical.min_stabilizing_ramp(spec, grid=grid, N=cfg.series_n)
    closed = {}
    sch = spec.scheme
    if isinstance(sch, (StateFeedback, CMC)) and sch.k_i != 0:
        closed["critical_duty"] = critical.closed_form_state_feedback(spec).critical_duty
    if isinstance(sch, CMC):
        closed["critical_duty_cmc"] = critical.closed_form_cmc(spec)
    report["closed_form"] = closed
    return report


def _sweep_range(cfg):
    spec = cfg.converter
    lo = _opt(cfg, "sweep", "v_s_min", 0.9 * spec.v_s)
    hi = _opt(cfg, "sweep", "v_s_max", 1.1 * spec.v_s)
    steps = _opt(cfg, "sweep", "steps", 50)
    if not 0 < lo < hi:
        raise ConfigError("[sweep] needs 0 < v_s_min < v_s_max")
    return np.linspace(lo, hi, steps), _opt(cfg, "sweep", "settle_cycles", 400)


def _out_variant(out: Optional[str], suffix: str, default_stem: str) -> str:
    p = Path(out) if out else Path(default_stem + ".csv")
    return str(p.with_name(f"{p.stem}_{suffix}{p.suffix or '.csv'}"))


def run(cfg: RunConfig) -> int:
    """Execute one command; artifacts go to ``cfg.out`` (stdout when None)."""
    spec = cfg.converter
    cmd = cfg.command
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}")

    if cmd == "analyze":
        text = json.dumps(_analyze(cfg), indent=2) + "\n"
        if cfg.out:
            Path(cfg.out).write_text(text)
        else:
            sys.stdout.write(text)

    elif cmd == "splot":
        pts = critical.s_curve(spec, _d_grid(cfg, "splot"), N=cfg.series_n)
        emit_csv(((p.D, p.v_s_implied, p.s_value, p.stable_hint) for p in pts), cfg.out,
                 ["D", "v_s_implied", "s_value", "stable_hint"])

    elif cmd == "lplot":
        pts = critical.l_curve(spec, _d_grid(cfg, "lplot"), N=cfg.series_n)
        emit_csv(((p.D, p.v_s_implied, p.l_value, p.criterion, p.stable_hint) for p in pts),
                 cfg.out, ["D", "v_s_implied", "l_value", "T0_plus_1", "stable_hint"])

    elif cmd == "sweep":
        vals, settle = _sweep_range(cfg)
        up = switching_sim.sweep_hysteresis(spec, vals, "up", settle)
        down = switching_sim.sweep_hysteresis(spec, vals, "down", settle)
        header = ["v_s", "v_o_avg", "duty", "classification"]
        for tag, pts in (("up", up), ("down", down)):
            emit_csv(((p.v_s, p.v_o_avg, p.duty, p.classification) for p in pts),
                     _out_variant(cfg.out, tag, "sweep"), header)

    elif cmd == "simulate":
        syst = switching_sim.build_pwl(spec)
        cycles = _opt(cfg, "simulate", "cycles", 5)
        ppc = _opt(cfg, "simulate", "points_per_cycle", 100)
        skip = cfg.options.get("simulate", {}).get("skip_cycles", 0)
        x0 = cfg.options.get("simulate", {}).get("x0", [0.0] * syst.state_dim)
        if not isinstance(skip, int) or skip < 0:
            raise ConfigError("[simulate] skip_cycles must be a non-negative integer")
        if not isinstance(x0, list) or len(x0) != syst.state_dim:
            raise ConfigError(f"[simulate] x0 must be a list of {syst.state_dim} numbers")
        x = np.array([_number("simulate", "x0", v) for v in x0])
        if skip:
            x = switching_sim.simulate_cycles(syst, spec, x, skip).states[-1]
        rows = switching_sim.sample_waveform(syst, spec, x, cycles, ppc)
        iL, vC = syst.iL_index, syst.vC_index
        emit_csv(
            ((t, None if iL is None else xt[iL], None if vC is None else xt[vC], y, h, st)
             for t, xt, y, h, st in rows),
            cfg.out, ["t", "i_L", "v_C", "y", "h", "stage"],
        )

    elif cmd == "boundary":
        b = cfg.options.get("boundary")
        if not b:
            raise ConfigError("boundary needs a [boundary] section")
        for k in ("x", "x_min", "x_max", "y", "y_min", "y_max"):
            if k not in b:
                raise ConfigError(f"missing required key {k!r} in [boundary]")
        px = (b["x"], _number("boundary", "x_min", b["x_min"]), _number("boundary", "x_max", b["x_max"]))
        py = (b["y"], _number("boundary", "y_min", b["y_min"]), _number("boundary", "y_max", b["y_max"]))
        for name in (px[0], py[0]):
            if name not in _CONVERTER_KEYS or name == "f_s_hz":
                raise ConfigError(f"[boundary] unknown parameter {name!r}")
        pts = critical.trace_boundary(
            spec, px, py, resolution=_opt(cfg, "boundary", "x_points", 20),
            y_samples=_opt(cfg, "boundary", "y_samples", 16), grid=cfg.grid or critical.GRID,
        )
        emit_csv(((p.x, p.y, p.stable_side) for p in pts), cfg.out, ["x", "y", "stable_side"])
    return 0


def _error(exc: BaseException, code: int) -> int:
    cat = getattr(exc, "category", "internal")
    sys.stderr.write(json.dumps({"error": cat, "type": type(exc).__name__,
                                 "message": str(exc)}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="snb-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="TOML or JSON configuration file")
    ap.add_argument("--out", help="output path (sweep: prefix for _up/_down files)")
    ap.add_argument("--series-n", type=int, default=critical.N_SS,
                    help="harmonics kept in the steady-state sums")
    ap.add_argument("--grid", type=int, help="duty-ratio grid size")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, args.command)
        cfg.out = args.out
        if args.series_n < 100:
            raise ConfigError("--series-n must be at least 100")
        cfg.series_n = args.series_n
        if args.grid is not None and args.grid < 10:
            raise ConfigError("--grid must be at least 10")
        cfg.grid = args.grid
        return run(cfg)
    except SNBError as exc:
        return _error(exc, 2 if exc.category == "config" else 3)
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        return _error(exc, 3)
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "type": type(exc).__name__,
                                     "message": str(exc)}) + "\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
