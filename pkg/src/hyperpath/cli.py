"""Experiment driver: subcommands over TOML configs with CSV/JSON outputs.

Five modes: solve (one MAP estimate), follow (continuation along a
hyperparameter path), envelope (repeated randomly initialized alternating
runs), threepath (the three canonical deconvolution paths), diagnose
(follow with condition-number instrumentation). Every run writes its
results plus a timing breakdown into the output directory; identical
config and seed give byte-identical CSVs apart from timing.csv.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from ._timing import PhaseTimer
from .errors import ConfigError, HyperPathError, InvalidHyperParameterError
from .model import HyperParameters, optimal_theta
from .path import TRACE_COLUMNS, HyperPath, follow_path
from .problems import (
    DeconvolutionConfig,
    ImageConfig,
    build_deconvolution,
    build_impulse_image,
)
from .solvers import SolverOptions, map_estimate

MODES = ("solve", "follow", "envelope", "threepath", "diagnose")

TIMING_COLUMNS = ("build_system", "precondition", "krylov", "backtrack",
                  "total")

# the three deconvolution paths share endpoints and vary one
# hyperparameter at a time toward its target: r first, eta first,
# vartheta first
THREE_PATHS = (
    ((1.5, 1.5, 1e-5), (0.5, 1.5, 1e-5), (0.5, 1e-5, 1e-6)),
    ((1.5, 1.5, 1e-5), (1.5, 1e-5, 1e-5), (0.5, 1e-5, 1e-6)),
    ((1.5, 1.5, 1e-5), (1.5, 1.5, 1e-6), (0.5, 1e-5, 1e-6)),
)


# ---------------------------------------------------------------- CSV layer

def _fmt_value(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    """Write rows of cells; floats via repr so values survive reloading
    bit for bit."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt_value(c) for c in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_cell(cell):
    if cell == "":
        return None
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def load_csv(path):
    """Inverse of write_csv: list of per-row dicts with ints, floats, and
    None restored from the textual cells."""
    text = Path(path).read_text()
    lines = text.splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, map(_parse_cell, ln.split(","))))
            for ln in lines[1:]]


def load_trace(path):
    """Load a trace.csv written by PathTrace.to_csv."""
    return load_csv(path)


def load_solution(path):
    """Load a solution/final-state CSV (component, x, theta, truth)."""
    return load_csv(path)


def load_history(path):
    """Load an iteration history CSV."""
    return load_csv(path)


def load_envelope(path):
    """Load the per-component envelope CSV (component, x_min, x_max)."""
    return load_csv(path)


def load_finals(path):
    """Load per-repetition final states (rep, component, x)."""
    return load_csv(path)


def load_endpoints(path):
    """Load the three-path endpoint distance table."""
    return load_csv(path)


def load_timing(path):
    """Load a timing breakdown CSV (single row of seconds per phase)."""
    return load_csv(path)


def _write_timing(out, timer_totals):
    row = [float(timer_totals.get(c, 0.0)) for c in TIMING_COLUMNS]
    write_csv(out / "timing.csv", TIMING_COLUMNS, [row])


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True)
                          + "\n")


# ------------------------------------------------------------ config layer

def _section(cfg, name, required=True):
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"config is missing the [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(sec)


def _take(sec, key, default=None):
    return sec.pop(key, default)


def _reject_unknown(sec, name):
    if sec:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(sec)}")


def _build_problem(cfg, seed):
    sec = _section(cfg, "problem")
    kind = _take(sec, "kind")
    if kind not in ("deconvolution", "image"):
        raise ConfigError("problem.kind must be 'deconvolution' or 'image'")
    if kind == "deconvolution":
        cls, builder = DeconvolutionConfig, build_deconvolution
    else:
        cls, builder = ImageConfig, build_impulse_image
    kwargs = {}
    valid = {f.name for f in fields(cls)}
    for key in list(sec):
        if key not in valid:
            raise ConfigError(f"unknown problem.{key} for kind '{kind}'")
        value = sec.pop(key)
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    _reject_unknown(sec, "problem")
    return builder(cls(**kwargs), seed=seed)


def _hyper_triple(value, where):
    try:
        r, eta, vartheta = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a [r, eta, vartheta] triple") \
            from None
    try:
        return HyperParameters(r, eta, np.asarray(vartheta))
    except InvalidHyperParameterError as exc:
        # a bad triple in the config is a validation problem, not a
        # solver failure
        raise ConfigError(f"{where}: {exc}") from None


def _build_hyper(cfg, *, want):
    """want is 'point' or 'path'; the other form is rejected so configs
    cannot silently run the wrong experiment."""
    sec = _section(cfg, "hyper")
    point = _take(sec, "point")
    waypoints = _take(sec, "waypoints")
    steps = _take(sec, "steps", 60)
    _reject_unknown(sec, "hyper")
    if want == "point":
        if point is None:
            raise ConfigError("this mode needs hyper.point")
        return _hyper_triple(point, "hyper.point")
    if waypoints is None:
        raise ConfigError("this mode needs hyper.waypoints")
    if point is not None:
        raise ConfigError("give hyper.point or hyper.waypoints, not both")
    wps = tuple(_hyper_triple(w, "hyper.waypoints entries")
                for w in waypoints)
    try:
        return HyperPath(wps, tuple(steps) if isinstance(steps, list)
                         else int(steps))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _build_options(cfg):
    sec = _section(cfg, "solver", required=False)
    valid = {f.name: f.type for f in fields(SolverOptions)}
    kwargs = {}
    for key in list(sec):
        if key not in valid:
            raise ConfigError(f"unknown solver.{key}")
        kwargs[key] = sec.pop(key)
    try:
        return SolverOptions(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _run_section(cfg, mode):
    sec = _section(cfg, "run", required=False)
    declared = _take(sec, "mode")
    if declared is not None and declared != mode:
        raise ConfigError(
            f"config declares run.mode = {declared!r} but the {mode} "
            "subcommand was invoked")
    return sec


def load_config(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None


# -------------------------------------------------------------- mode runs

def _state_rows(state, truth):
    rows = []
    for j in range(state.n):
        rows.append([j, float(state.x[j]), float(state.theta[j]),
                     float(truth[j]) if truth is not None else None])
    return rows


def _dump_state(out, name, state, problem):
    write_csv(out / name, ("component", "x", "theta", "truth"),
              _state_rows(state, problem.truth))


def _history_rows(history):
    rows = []
    for k, h in enumerate(history):
        rows.append([k, h["kind"], h["objective"], h["grad_norm"],
                     h.get("krylov_iters"), h.get("alpha"),
                     None if h.get("used_ias") is None
                     else int(h["used_ias"])])
    return rows


def run_solve(cfg, out, seed, threads):
    problem = _build_problem(cfg, seed)
    hyper = _build_hyper(cfg, want="point")
    opts = _build_options(cfg)
    run = _run_section(cfg, "solve")
    strategy = _take(run, "strategy", "ias_then_newton")
    ias_iters = int(_take(run, "ias_iters", 3))
    precond_epsilon = float(_take(run, "precond_epsilon", 0.5))
    _reject_unknown(run, "run")

    timer = PhaseTimer()
    with timer.section("total"):
        report = map_estimate(problem, hyper, strategy=strategy,
                              ias_iters=ias_iters, options=opts,
                              precond_epsilon=precond_epsilon, timer=timer)
    _dump_state(out, "solution.csv", report.state, problem)
    write_csv(out / "history.csv",
              ("step", "kind", "objective", "grad_norm", "krylov_iters",
               "alpha", "used_ias"),
              _history_rows(report.history))
    _write_json(out / "summary.json", {
        "mode": "solve",
        "converged": bool(report.converged),
        "iterations": int(report.iterations),
        "objective": float(report.objective),
        "grad_norm": float(report.grad_norm),
    })
    _write_timing(out, timer.as_dict())
    return 0


def _follow_once(problem, path, opts, run, *, diagnostics, timer):
    corrector = _take(run, "corrector", "newton")
    correction_steps = int(_take(run, "correction_steps", 1))
    predictor = bool(_take(run, "predictor", True))
    precond_epsilon = float(_take(run, "precond_epsilon", 0.5))
    rebuild_every = int(_take(run, "rebuild_every", 1))
    init_ias_iters = int(_take(run, "init_ias_iters", 3))
    _reject_unknown(run, "run")
    return follow_path(problem, path, options=opts, corrector=corrector,
                       predictor=predictor,
                       correction_steps=correction_steps,
                       precond_epsilon=precond_epsilon,
                       rebuild_every=rebuild_every,
                       diagnostics=diagnostics,
                       init_ias_iters=init_ias_iters, timer=timer)


def _trace_summary(trace, problem):
    x = trace.final_state.x
    info = {
        "aborted": bool(trace.aborted),
        "steps": len(trace.rows) - 1,
        "final_objective": float(trace.rows[-1]["objective"]),
        "final_grad_norm": float(trace.rows[-1]["grad_norm"]),
    }
    if problem.truth is not None:
        tn = float(np.linalg.norm(problem.truth))
        if tn > 0:
            info["rel_error_to_truth"] = float(
                np.linalg.norm(x - problem.truth) / tn)
    return info


def run_follow(cfg, out, seed, threads, *, diagnostics=False,
               mode="follow"):
    problem = _build_problem(cfg, seed)
    path = _build_hyper(cfg, want="path")
    opts = _build_options(cfg)
    run = _run_section(cfg, mode)

    timer = PhaseTimer()
    trace = _follow_once(problem, path, opts, run, diagnostics=diagnostics,
                         timer=timer)
    trace.to_csv(out / "trace.csv")
    _dump_state(out, "final.csv", trace.final_state, problem)
    _write_json(out / "summary.json",
                {"mode": mode, **_trace_summary(trace, problem)})
    _write_timing(out, timer.as_dict())
    return 0


def run_diagnose(cfg, out, seed, threads):
    return run_follow(cfg, out, seed, threads, diagnostics=True,
                      mode="diagnose")


def _envelope_rep(problem, hyper, opts, ias_iters, seed, rep):
    rng = np.random.default_rng([seed, rep])
    x0 = rng.standard_normal(problem.n)
    theta0 = optimal_theta(x0, hyper)
    timer = PhaseTimer()
    with timer.section("total"):
        report = map_estimate(problem, hyper, strategy="ias", x0=x0,
                              theta0=theta0, ias_iters=ias_iters,
                              options=opts, timer=timer)
    return report, timer.as_dict()


def _distinct_count(finals, rtol=1e-3):
    reps = []
    for x in finals:
        for ref in reps:
            if np.linalg.norm(x - ref) <= rtol * max(np.linalg.norm(ref),
                                                     1.0):
                break
        else:
            reps.append(x)
    return len(reps)


def run_envelope(cfg, out, seed, threads):
    problem = _build_problem(cfg, seed)
    hyper = _build_hyper(cfg, want="point")
    opts = _build_options(cfg)
    run = _run_section(cfg, "envelope")
    repetitions = int(_take(run, "repetitions", 100))
    ias_iters = int(_take(run, "ias_iters", 150))
    _reject_unknown(run, "run")
    if repetitions < 1:
        raise ConfigError("run.repetitions must be positive")

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_envelope_rep, problem, hyper, opts,
                               ias_iters, seed, rep)
                   for rep in range(repetitions)]
        results = [f.result() for f in futures]  # repetition order

    totals = {}
    finals = []
    final_rows = []
    for rep, (report, timing) in enumerate(results):
        for key, val in timing.items():
            totals[key] = totals.get(key, 0.0) + val
        finals.append(report.state.x)
        for j in range(problem.n):
            final_rows.append([rep, j, float(report.state.x[j])])
    stacked = np.vstack(finals)
    env_rows = [[j, float(stacked[:, j].min()), float(stacked[:, j].max())]
                for j in range(problem.n)]

    write_csv(out / "finals.csv", ("rep", "component", "x"), final_rows)
    write_csv(out / "envelope.csv", ("component", "x_min", "x_max"),
              env_rows)
    _write_json(out / "summary.json", {
        "mode": "envelope",
        "repetitions": repetitions,
        "distinct_minima": _distinct_count(finals),
    })
    _write_timing(out, totals)
    return 0


def _threepath_one(problem, waypoints, steps, opts, run_template):
    wps = tuple(HyperParameters(r, eta, np.asarray(vartheta))
                for r, eta, vartheta in waypoints)
    path = HyperPath(wps, steps)
    timer = PhaseTimer()
    trace = _follow_once(problem, path, opts, dict(run_template),
                         diagnostics=False, timer=timer)
    return trace, timer.as_dict()


def run_threepath(cfg, out, seed, threads):
    problem = _build_problem(cfg, seed)
    if "hyper" in cfg:
        raise ConfigError(
            "threepath uses the three built-in paths; drop the [hyper] "
            "section")
    opts = _build_options(cfg)
    run = _run_section(cfg, "threepath")
    steps = int(_take(run, "steps_per_segment", 30))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_threepath_one, problem, wps, steps, opts,
                               run)
                   for wps in THREE_PATHS]
        results = [f.result() for f in futures]  # path order

    totals = {}
    endpoints = []
    for idx, (trace, timing) in enumerate(results):
        for key, val in timing.items():
            totals[key] = totals.get(key, 0.0) + val
        trace.to_csv(out / f"trace_{idx + 1}.csv")
        endpoints.append(trace.final_state.x)

    rows = []
    worst = 0.0
    for i in range(3):
        for j in range(i + 1, 3):
            rel = float(np.linalg.norm(endpoints[i] - endpoints[j])
                        / max(np.linalg.norm(endpoints[i]),
                              np.linalg.norm(endpoints[j])))
            worst = max(worst, rel)
            rows.append([i + 1, j + 1, rel])
    write_csv(out / "endpoints.csv", ("path_a", "path_b", "rel_distance"),
              rows)
    _write_json(out / "summary.json", {
        "mode": "threepath",
        "max_pairwise_rel_distance": worst,
        "aborted": [bool(tr.aborted) for tr, _ in results],
    })
    _write_timing(out, totals)
    return 0


RUNNERS = {
    "solve": run_solve,
    "follow": run_follow,
    "envelope": run_envelope,
    "threepath": run_threepath,
    "diagnose": run_diagnose,
}


# -------------------------------------------------------------- CLI plumb

class _Parser(argparse.ArgumentParser):
    """Argument errors exit 1 (validation), matching config errors."""

    def error(self, message):
        _emit_error("UsageError", message)
        raise SystemExit(1)


def _emit_error(kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message)})
                     + "\n")


def build_parser():
    parser = _Parser(prog="hyperpath",
                     description="MAP estimation and hyperparameter "
                                 "path-following experiments")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} experiment")
        p.add_argument("--config", required=True,
                       help="TOML experiment configuration")
        p.add_argument("--out", default=".",
                       help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.seed from the config")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for envelope/threepath")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 1

    try:
        cfg = load_config(args.config)
        run = cfg.get("run", {})
        seed = args.seed if args.seed is not None else \
            int(run.get("seed", 0))
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit value")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg.setdefault("run", {}).pop("seed", None)
        return RUNNERS[args.mode](cfg, out, seed, args.threads)
    except ConfigError as exc:
        _emit_error("ConfigError", exc)
        return 1
    except HyperPathError as exc:
        _emit_error(type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
