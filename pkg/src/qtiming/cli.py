"""Command-line front end.

Every subcommand reads an optional JSON configuration, applies the
``--seed``, ``--out-dir`` and ``--threads`` overrides, writes its outputs to
the output directory and finishes with ``manifest.json``. The manifest holds
the fully resolved configuration, so ``qtiming replay manifest.json``
recomputes the same files and checks their hashes.

Exit codes: 0 success, 1 usage, 2 configuration, 3 numerical failure.

Grid specifications (times in the unit of ``sigma``)::

    {"tau0": [0.0], "tau": {"start": 0, "stop": 2, "num": 21}, "q": [0.125, 0.5]}
    {"points": [[tau0, tau, q], ...]}

An axis is a number, a list, or ``{"start", "stop", "num"}`` with optional
``"spacing": "log"``. Points run with ``q`` slowest, then ``tau0``, then
``tau``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .estimation import (
    DEFAULT_BOUNDS,
    DEFAULT_CAL_COUNTS,
    CalibrationError,
    RankDeficientError,
    default_calibration_grid,
    fit_response_model,
    invert_gls,
    ml_estimate,
    simulate_calibration,
    write_estimates,
)
from .frog import FrogGrid, FrogGridError, incoherent_spectrogram, rayleigh_scan, write_rayleigh
from .measurement import PARAM_NAMES, DomainError, ExactForward, ResponseModel, channel_probabilities
from .pulse_modes import PulseParams, PulseShape, QuadratureError
from .simulation import (
    CALIBRATION_STREAM,
    DEFAULT_QS,
    DEFAULT_SEED,
    DEFAULT_TAUS,
    ExperimentConfig,
    InsufficientCountsError,
    rng_stream,
    run_experiment,
    truth_bounds,
    write_runs,
    write_sidecar,
    write_summary,
    write_tracks,
)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
MANIFEST = "manifest.json"

NUMERICAL_ERRORS = (QuadratureError, RankDeficientError, CalibrationError, FrogGridError, DomainError,
                    InsufficientCountsError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError)


class ConfigError(Exception):
    """Malformed or inconsistent configuration; the message names the field."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- configuration helpers ----------------------------------------------------

def _number(v, field) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{field}: expected a number, got {v!r}")
    return float(v)


def _integer(v, field, minimum=None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{field}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{field}: must be >= {minimum}")
    return int(v)


def _choice(v, field, options) -> str:
    if v not in options:
        raise ConfigError(f"{field}: expected one of {list(options)}, got {v!r}")
    return v


def _axis(spec, field) -> list[float]:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return [float(spec)]
    if isinstance(spec, list):
        return [_number(v, f"{field}[{i}]") for i, v in enumerate(spec)]
    if isinstance(spec, dict):
        extra = set(spec) - {"start", "stop", "num", "spacing"}
        if extra:
            raise ConfigError(f"{field}: unknown field '{sorted(extra)[0]}'")
        try:
            start, stop = _number(spec["start"], f"{field}.start"), _number(spec["stop"], f"{field}.stop")
            num = _integer(spec["num"], f"{field}.num", 0)
        except KeyError as exc:
            raise ConfigError(f"{field}: missing field '{exc.args[0]}'") from None
        spacing = _choice(spec.get("spacing", "linear"), f"{field}.spacing", ("linear", "log"))
        if spacing == "log":
            if start <= 0 or stop <= 0:
                raise ConfigError(f"{field}: log spacing needs positive start and stop")
            return [float(v) for v in np.geomspace(start, stop, num)]
        return [float(v) for v in np.linspace(start, stop, num)]
    raise ConfigError(f"{field}: expected a number, list or range object")


def parse_grid(spec, sigma: float, field: str = "grid") -> list[PulseParams]:
    if not isinstance(spec, dict):
        raise ConfigError(f"{field}: expected an object")
    shape = PulseShape(sigma)
    try:
        if "points" in spec:
            if set(spec) != {"points"}:
                raise ConfigError(f"{field}: 'points' excludes other fields")
            pts = spec["points"]
            if not isinstance(pts, list) or any(not isinstance(p, list) or len(p) != 3 for p in pts):
                raise ConfigError(f"{field}.points: expected a list of [tau0, tau, q] triples")
            return [PulseParams(*(_number(v, f"{field}.points[{i}]") for v in p), shape)
                    for i, p in enumerate(pts)]
        extra = set(spec) - set(PARAM_NAMES)
        if extra:
            raise ConfigError(f"{field}: unknown field '{sorted(extra)[0]}'")
        missing = [k for k in PARAM_NAMES if k not in spec]
        if missing:
            raise ConfigError(f"{field}: missing field '{missing[0]}'")
        axes = {k: _axis(spec[k], f"{field}.{k}") for k in PARAM_NAMES}
        return [PulseParams(t0, t, q, shape) for q in axes["q"] for t0 in axes["tau0"] for t in axes["tau"]]
    except ValueError as exc:
        raise ConfigError(f"{field}: {exc}") from None


def _bounds(spec, field="bounds"):
    if spec is None:
        return None
    if (not isinstance(spec, list) or len(spec) != 3
            or any(not isinstance(b, list) or len(b) != 2 for b in spec)):
        raise ConfigError(f"{field}: expected [[lo, hi], [lo, hi], [lo, hi]] for (tau0, tau, q)")
    out = [(_number(b[0], f"{field}[{i}]"), _number(b[1], f"{field}[{i}]")) for i, b in enumerate(spec)]
    if any(lo > hi for lo, hi in out) or out[1][0] < 0 or out[2][0] < 0 or out[2][1] > 1:
        raise ConfigError(f"{field}: need lo <= hi, tau >= 0 and 0 <= q <= 1")
    return out


def _sigma(cfg) -> float:
    s = _number(cfg["sigma"], "sigma")
    if not s > 0:
        raise ConfigError("sigma: must be positive")
    return s


def _efficiency(v, field) -> float:
    v = _number(v, field)
    if not 0 < v <= 1:
        raise ConfigError(f"{field}: must lie in (0, 1]")
    return v


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# --- commands -------------------------------------------------------------------

class Context:
    def __init__(self, out_dir: Path, threads: int):
        self.out_dir = out_dir
        self.threads = threads
        self.outputs: list[str] = []
        self.flags: list[str] = []

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name


def _fig_grid(qs) -> dict:
    return {"tau0": [0.0], "tau": {"start": 0.0, "stop": 2.0, "num": 21}, "q": list(qs)}


def cmd_probabilities(cfg, ctx: Context) -> None:
    grid = parse_grid(cfg["grid"], _sigma(cfg))
    rows = []
    for p in grid:
        c = channel_probabilities(p)
        rows.append([p.tau0, p.tau, p.q, *c.p, c.p_sink])
    _write_csv(ctx.path("probabilities.csv"), ["tau0", "tau", "q", "p0", "p1", "p2", "p3", "p_sink"], rows)


def cmd_bounds(cfg, ctx: Context) -> None:
    grid = parse_grid(cfg["grid"], _sigma(cfg))
    n = _integer(cfg["photons"], "photons", 1)
    counting = _choice(cfg["counting"], "counting", ("multinomial", "sequential"))
    eta = _efficiency(cfg["efficiency"], "efficiency")
    nuisance = _choice(cfg["nuisance"], "nuisance", ("joint", "fixed"))
    header = ["tau0", "tau", "q"] + [f"crlb_{k}_{p}" for k in ("direct", "povm", "quantum") for p in PARAM_NAMES]
    header.append("flags")
    rows = []
    for p in grid:
        flags: list[str] = []
        b = truth_bounds(p, n, counting, eta, nuisance, flags)
        rows.append([p.tau0, p.tau, p.q] + [b[k][name] for k in ("direct", "povm", "quantum") for name in PARAM_NAMES]
                    + [";".join(flags)])
        ctx.flags.extend(f for f in flags if f not in ctx.flags)
    _write_csv(ctx.path("bounds.csv"), header, rows)


def cmd_calibrate(cfg, ctx: Context) -> None:
    sigma = _sigma(cfg)
    shape = PulseShape(sigma)
    if cfg["grid"] is None:
        theta = default_calibration_grid()
    else:
        theta = np.array([p.dimensionless() for p in parse_grid(cfg["grid"], sigma)])
    if len(theta) == 0:
        raise ConfigError("grid: empty calibration grid")
    total = _number(cfg["total_counts"], "total_counts")
    if not total >= len(theta):
        raise ConfigError("total_counts: need at least one count per grid point")
    eta = _efficiency(cfg["efficiency"], "efficiency")
    if not isinstance(cfg["noiseless"], bool):
        raise ConfigError("noiseless: expected true or false")
    rng = None if cfg["noiseless"] else rng_stream(cfg["seed"], CALIBRATION_STREAM)
    cal = simulate_calibration(theta, total, rng, ExactForward(efficiency=eta), shape)
    fit = fit_response_model(cal)
    cal.to_csv(ctx.path("calibration.csv"))
    fit.model.save(ctx.path("response_model.json"))
    diag = fit.diagnostics()
    diag["n_points"] = len(cal)
    ctx.path("calibration_fit.json").write_text(json.dumps(diag, indent=2) + "\n", encoding="utf-8")
    if np.any(fit.r_squared < 0.999):
        ctx.flags.append("r_squared_below_0.999")


def _read_counts_file(path: Path) -> list[list[float]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            cols = [c for c in ("n0", "n1", "n2", "n3", "n_sink") if c in (reader.fieldnames or [])]
            if cols[:4] != ["n0", "n1", "n2", "n3"]:
                raise ConfigError(f"counts_file: {path} needs columns n0..n3 (and optionally n_sink)")
            return [[float(r[c]) for c in cols] for r in reader]
    except OSError as exc:
        raise ConfigError(f"counts_file: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"counts_file: {exc}") from None


def cmd_estimate(cfg, ctx: Context) -> None:
    shape = PulseShape(_sigma(cfg))
    estimator = _choice(cfg["estimator"], "estimator", ("ml", "gls", "gls-calibrated"))
    counting = _choice(cfg["counting"], "counting", ("multinomial", "sequential"))
    bounds = _bounds(cfg["bounds"])
    if bounds is not None:
        bounds = [(lo / shape.sigma, hi / shape.sigma) if i < 2 else (lo, hi) for i, (lo, hi) in enumerate(bounds)]
    if (cfg["counts"] is None) == (cfg["counts_file"] is None):
        raise ConfigError("counts: give exactly one of 'counts' and 'counts_file'")
    if cfg["counts"] is not None:
        if not isinstance(cfg["counts"], list):
            raise ConfigError("counts: expected a list of count rows")
        rows = [[_number(v, f"counts[{i}]") for v in r] if isinstance(r, list) else None
                for i, r in enumerate(cfg["counts"])]
        if any(r is None for r in rows):
            raise ConfigError("counts: every row must be a list")
    else:
        rows = _read_counts_file(Path(cfg["counts_file"]))
    need = 5 if counting == "multinomial" else 4
    for i, r in enumerate(rows):
        if len(r) < need or len(r) > 5 or any(v < 0 or v != int(v) for v in r):
            raise ConfigError(f"counts[{i}]: expected {need} non-negative integer counts")
    trials = None
    if counting == "sequential":
        if cfg["trials"] is None:
            raise ConfigError("trials: required for sequential counting")
        trials = _integer(cfg["trials"], "trials", 1)
        if any(max(r[:4]) > trials for r in rows):
            raise ConfigError("counts: a channel count exceeds 'trials'")
    elif any(sum(r) <= 0 for r in rows):
        raise ConfigError("counts: every multinomial row needs a positive total")
    if estimator != "ml" and counting != "multinomial":
        raise ConfigError("estimator: GLS needs multinomial counts")

    forward = ExactForward(efficiency=_efficiency(cfg["efficiency"], "efficiency"))
    if estimator == "gls-calibrated":
        if cfg["model"] is None:
            raise ConfigError("model: required for the gls-calibrated estimator")
        try:
            model = ResponseModel.load(cfg["model"])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from None
    weighting = _choice(cfg["weighting"], "weighting", ("observed", "iterated"))

    estimates = []
    for r in rows:
        c = np.array(r)
        if estimator == "ml":
            estimates.append(ml_estimate(forward, c, counting, trials, bounds, shape))
        else:
            n = c.sum()
            target = forward if estimator == "gls" else model
            estimates.append(invert_gls(target, c[:4] / n, n, weighting, bounds, shape))
    n_flagged = sum(e.flagged for e in estimates)
    if n_flagged:
        ctx.flags.append(f"flagged_estimates={n_flagged}")
    write_estimates(ctx.path("estimates.csv"), estimates, [{"row": i} for i in range(len(estimates))])


def cmd_montecarlo(cfg, ctx: Context) -> None:
    sigma = _sigma(cfg)
    grid = parse_grid(cfg["grid"], sigma)
    if not grid:
        raise ConfigError("grid: empty truth grid")
    bounds = _bounds(cfg["bounds"]) or [tuple(b) for b in DEFAULT_BOUNDS]
    bounds = [(lo / sigma, hi / sigma) if i < 2 else (lo, hi) for i, (lo, hi) in enumerate(bounds)]
    if not isinstance(cfg["write_runs"], bool):
        raise ConfigError("write_runs: expected true or false")
    try:
        exp = ExperimentConfig(
            truth_grid=tuple(grid),
            photons_per_run=_integer(cfg["photons_per_run"], "photons_per_run", 1),
            repetitions=_integer(cfg["repetitions"], "repetitions", 2),
            seed=cfg["seed"],
            counting_mode=cfg["counting_mode"],
            detection_efficiency=_number(cfg["detection_efficiency"], "detection_efficiency"),
            estimator=cfg["estimator"],
            mixing=cfg["mixing"],
            bounds=tuple(bounds),
            calibration_counts=_number(cfg["calibration_counts"], "calibration_counts"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = run_experiment(exp, threads=ctx.threads)
    write_summary(ctx.path("summary.csv"), result)
    write_tracks(ctx.path("tracks.csv"), result)
    if cfg["write_runs"]:
        write_runs(ctx.path("runs.csv"), result)
    write_sidecar(ctx.path("experiment.json"), exp)
    n_flagged = sum(r.estimate.flagged for r in result.runs)
    if n_flagged:
        ctx.flags.append(f"flagged_estimates={n_flagged}")


def cmd_frog(cfg, ctx: Context) -> None:
    sigma = _sigma(cfg)
    try:
        grid = FrogGrid(_integer(cfg["n_samples"], "n_samples", 16), _number(cfg["half_width"], "half_width"),
                        _number(cfg["max_delay"], "max_delay"), PulseShape(sigma))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    taus = _axis(cfg["taus"], "taus")
    probe = cfg["probe"]
    if not isinstance(probe, list) or len(probe) != 2:
        raise ConfigError("probe: expected [omega, T]")
    probe = (_number(probe[0], "probe[0]"), _number(probe[1], "probe[1]"))
    n_phases = _integer(cfg["n_phases"], "n_phases", 5)
    noise = _number(cfg["noise_var"], "noise_var")
    if not noise > 0:
        raise ConfigError("noise_var: must be positive")
    if any(t <= 0 for t in taus) or any(b <= a for a, b in zip(taus, taus[1:])):
        raise ConfigError("taus: separations must be positive and increasing")
    fmt = _choice(cfg["spectrogram_format"], "spectrogram_format", ("binary", "csv", "both"))
    exports = _axis(cfg["spectrograms"], "spectrograms")
    try:
        rows = rayleigh_scan(taus, probe, noise, grid, n_phases)
    except FrogGridError:
        raise
    except ValueError as exc:
        raise ConfigError(f"probe: {exc}") from None
    write_rayleigh(ctx.path("rayleigh.csv"), rows)
    for i, tau in enumerate(exports):
        spec = incoherent_spectrogram(tau, grid, n_phases)
        if fmt in ("binary", "both"):
            spec.save_binary(ctx.path(f"spectrogram_{i:02d}.bin"))
        if fmt in ("csv", "both"):
            spec.to_csv(ctx.path(f"spectrogram_{i:02d}.csv"))


COMMANDS = {
    "probabilities": (cmd_probabilities, {"grid": _fig_grid(DEFAULT_QS), "sigma": 1.0}),
    "bounds": (cmd_bounds, {"grid": _fig_grid((0.125,)), "sigma": 1.0, "photons": 69000,
                            "counting": "multinomial", "efficiency": 1.0, "nuisance": "joint"}),
    "calibrate": (cmd_calibrate, {"grid": None, "sigma": 1.0, "total_counts": DEFAULT_CAL_COUNTS,
                                  "noiseless": False, "efficiency": 1.0}),
    "estimate": (cmd_estimate, {"counts": None, "counts_file": None, "estimator": "ml",
                                "counting": "multinomial", "trials": None, "model": None, "bounds": None,
                                "sigma": 1.0, "efficiency": 1.0, "weighting": "observed"}),
    "montecarlo": (cmd_montecarlo, {"grid": {"tau0": [0.0], "tau": list(DEFAULT_TAUS), "q": list(DEFAULT_QS)},
                                    "sigma": 1.0, "photons_per_run": 69000, "repetitions": 100,
                                    "counting_mode": "multinomial", "detection_efficiency": 1.0,
                                    "estimator": "ml", "mixing": "direct",
                                    "bounds": [list(b) for b in DEFAULT_BOUNDS],
                                    "calibration_counts": DEFAULT_CAL_COUNTS, "write_runs": True}),
    "frog": (cmd_frog, {"taus": {"start": 0.01, "stop": 1.0, "num": 9, "spacing": "log"},
                        "probe": [0.0, 1.0], "noise_var": 1.0, "n_phases": 5, "n_samples": 1024,
                        "half_width": 16.0, "max_delay": 8.0, "sigma": 1.0, "spectrograms": [],
                        "spectrogram_format": "binary"}),
}
_PATH_FIELDS = ("counts_file", "model")


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def resolve_config(command: str, user: dict, base_dir: Path | None = None, seed=None) -> dict:
    """Defaults merged with ``user``; relative input paths made absolute."""
    cfg = copy.deepcopy(COMMANDS[command][1])
    cfg["seed"] = DEFAULT_SEED
    for k, v in user.items():
        if k not in cfg:
            raise ConfigError(f"unknown field '{k}' for command '{command}'")
        cfg[k] = v
    if seed is not None:
        cfg["seed"] = seed
    cfg["seed"] = _integer(cfg["seed"], "seed", 0)
    if cfg["seed"] >= 2 ** 64:
        raise ConfigError("seed: must fit in 64 bits")
    for k in _PATH_FIELDS:
        if cfg.get(k) is not None:
            if not isinstance(cfg[k], str):
                raise ConfigError(f"{k}: expected a path")
            p = Path(cfg[k])
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            cfg[k] = str(p.resolve())
    return cfg


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def execute(command: str, cfg: dict, out_dir: Path, threads: int = 1) -> dict:
    """Run one command with a resolved configuration and write its manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(out_dir, threads)
    start = time.perf_counter()
    COMMANDS[command][0](cfg, ctx)
    duration = time.perf_counter() - start
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "version": __version__,
        "numpy": np.__version__,
        "backend": kernels.BACKEND,
        "threads": threads,
        "outputs": [{"path": name, "sha256": _sha256(out_dir / name)} for name in ctx.outputs],
        "duration_s": duration,
        "flags": ctx.flags,
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def replay(manifest_path, out_dir: Path | None = None, threads: int | None = None) -> tuple[dict, list[str]]:
    """Re-run a manifest; returns the new manifest and the mismatching files."""
    try:
        old = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        command, cfg = old["command"], old["config"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"manifest: {exc}") from None
    if command not in COMMANDS:
        raise ConfigError(f"manifest: unknown command {command!r}")
    out_dir = out_dir or Path(manifest_path).parent / "replay"
    new = execute(command, cfg, out_dir, threads or old.get("threads", 1))
    before = {o["path"]: o["sha256"] for o in old["outputs"]}
    after = {o["path"]: o["sha256"] for o in new["outputs"]}
    mismatched = sorted(k for k in before.keys() | after.keys() if before.get(k) != after.get(k))
    return new, mismatched


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qtiming", description="Multiparameter timing estimation toolkit.")
    parser.add_argument("--version", action="version", version=f"qtiming {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} step")
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out-dir", type=Path, help=f"output directory (default qtiming_{name})")
        p.add_argument("--threads", type=int, default=1, help="worker processes (montecarlo)")
    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out-dir", type=Path, help="output directory (default <manifest dir>/replay)")
    p.add_argument("--threads", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        if args.command == "replay":
            manifest, mismatched = replay(args.manifest, args.out_dir, args.threads)
            for o in manifest["outputs"]:
                print(f"{'MISMATCH' if o['path'] in mismatched else 'ok':8s} {o['path']}")
            if mismatched:
                print(f"qtiming: {len(mismatched)} output(s) differ from the manifest", file=sys.stderr)
                return EXIT_NUMERICAL
            return EXIT_OK
        user = load_config(args.config) if args.config else {}
        base = args.config.resolve().parent if args.config else Path(os.getcwd())
        cfg = resolve_config(args.command, user, base, args.seed)
        out_dir = args.out_dir or Path(f"qtiming_{args.command}")
        manifest = execute(args.command, cfg, out_dir, args.threads)
    except ConfigError as exc:
        print(f"qtiming: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"qtiming: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for o in manifest["outputs"]:
        print(out_dir / o["path"])
    for f in manifest["flags"]:
        print(f"flag: {f}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
