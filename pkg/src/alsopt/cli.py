"""Experiment runner: JSON configs in, per-replication trace CSVs plus
quantile summaries and a reproduction manifest out.

Verbs:
    run        --config cfg.json [--out dir] [--seed N] [--workers W]
    rate       --config cfg.json [--out dir]
    summarize  --in 'glob' --column name [--out file]

Exit codes: 0 success, 2 configuration error, 3 partial failures.
"""

from __future__ import annotations

import argparse
import csv
import glob as globmod
import io
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import __version__
from .baselines import (
    BaselineOptions,
    EquilibriumMethodConfig,
    MethodNotApplicable,
    po_lr_run,
    spg_run,
    spp_run,
)
from .core import BoxDomain
from .diagnostics import SampleAverageObjective, estimation_rate_experiment
from .driver import DriverOptions, ParameterSchedule, run_als
from .simulate import OracleConfig, default_bandwidth_rule

PROBLEMS = ("production_pricing", "facility", "spam", "synthetic")
METHODS = ("als", "spg", "spp", "po_lr")


class ConfigError(ValueError):
    """Configuration rejected; the message carries a JSON pointer."""


def _type_name(v) -> str:
    return type(v).__name__


class _Schema:
    """Tiny strict validator: unknown keys are rejected with their path."""

    def __init__(self, doc: dict, path: str = ""):
        if not isinstance(doc, dict):
            raise ConfigError(f"{path or '/'}: expected an object, got {_type_name(doc)}")
        self.doc = dict(doc)
        self.path = path
        self.seen: set[str] = set()

    def take(self, key, default=None, kind=None, required=False, choices=None):
        self.seen.add(key)
        if key not in self.doc or self.doc[key] is None:  # null == absent
            if required:
                raise ConfigError(f"{self.path}/{key}: required key missing")
            return default
        value = self.doc[key]
        if kind is not None and not isinstance(value, kind):
            raise ConfigError(
                f"{self.path}/{key}: expected {getattr(kind, '__name__', kind)}, "
                f"got {_type_name(value)}")
        if choices is not None and value not in choices:
            raise ConfigError(f"{self.path}/{key}: must be one of {sorted(choices)}")
        return value

    def number(self, key, default=None, required=False, minimum=None):
        value = self.take(key, default, (int, float), required)
        if isinstance(value, bool):
            raise ConfigError(f"{self.path}/{key}: expected a number, got bool")
        if value is not None and minimum is not None and value < minimum:
            raise ConfigError(f"{self.path}/{key}: must be >= {minimum}")
        return value

    def integer(self, key, default=None, required=False, minimum=None):
        value = self.take(key, default, int, required)
        if isinstance(value, bool):
            raise ConfigError(f"{self.path}/{key}: expected an integer, got bool")
        if value is not None and minimum is not None and value < minimum:
            raise ConfigError(f"{self.path}/{key}: must be >= {minimum}")
        return value

    def subobject(self, key) -> Optional["_Schema"]:
        self.seen.add(key)
        if key not in self.doc:
            return None
        return _Schema(self.doc[key], f"{self.path}/{key}")

    def finish(self):
        unknown = sorted(set(self.doc) - self.seen)
        if unknown:
            raise ConfigError(f"{self.path}/{unknown[0]}: unknown key")


@dataclass
class ExperimentConfig:
    problem: str
    methods: list[str]
    T: int
    seed: int
    replications: int = 1
    oracle: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    problem_params: dict = field(default_factory=dict)
    equilibrium: dict = field(default_factory=dict)
    po: dict = field(default_factory=dict)
    output_dir: Optional[str] = None
    workers: int = 1

    def to_json(self) -> dict:
        return {
            "problem": self.problem, "methods": self.methods, "T": self.T,
            "seed": self.seed, "replications": self.replications,
            "oracle": self.oracle, "schedule": self.schedule,
            "evaluation": self.evaluation, "problem_params": self.problem_params,
            "equilibrium": self.equilibrium, "po": self.po,
            "output_dir": self.output_dir, "workers": self.workers,
        }


_SCHEDULE_DEFAULTS = {
    "production_pricing": dict(rho0=1.0, alpha0=3.0, alpha_power=0.7, m0=1, n0=10,
                               tau=0.0, h0=3.5),
    "facility": dict(rho0=1.0, alpha0=2.0, alpha_power=0.7, m0=5, n0=20,
                     tau=0.0, h0=2.0),
    "spam": dict(rho0=0.05, alpha0=0.1, alpha_power=0.5, m0=10, n0=30,
                 tau=0.0, h0=1.0),
    "synthetic": dict(rho0=1.0, alpha0=3.0, alpha_power=0.5, m0=2, n0=30,
                      tau=0.0, h0=1.0),
}


def parse_config(source) -> ExperimentConfig:
    """Parse and strictly validate an experiment config (path or dict)."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"/: invalid JSON ({exc})") from None
    else:
        doc = source
    top = _Schema(doc)
    problem = top.take("problem", required=True, kind=str, choices=PROBLEMS)
    methods = top.take("methods", default=["als"], kind=list)
    for i, m in enumerate(methods):
        if m not in METHODS:
            raise ConfigError(f"/methods/{i}: must be one of {sorted(METHODS)}")
    T = top.integer("T", required=True, minimum=0)
    seed = top.integer("seed", required=True, minimum=0)
    replications = top.integer("replications", default=1, minimum=1)
    output_dir = top.take("output_dir", default=None, kind=str)
    workers = top.integer("workers", default=1, minimum=1)

    oracle = {"kind": "adaptive", "shape_density": "uniform_cube",
              "h0": None, "static_center": None, "static_sd": None,
              "fixed_dataset_path": None}
    sub = top.subobject("oracle")
    if sub is not None:
        oracle["kind"] = sub.take("kind", default="adaptive", kind=str,
                                  choices=("adaptive", "static", "fixed"))
        oracle["shape_density"] = sub.take("shape_density", default="uniform_cube",
                                           kind=str,
                                           choices=("uniform_cube", "truncated_normal"))
        oracle["h0"] = sub.number("h0", default=None, minimum=1e-12)
        oracle["static_center"] = sub.take("static_center", default=None, kind=list)
        oracle["static_sd"] = sub.number("static_sd", default=None, minimum=0.0)
        oracle["fixed_dataset_path"] = sub.take("fixed_dataset_path", default=None, kind=str)
        sub.finish()

    schedule = dict(_SCHEDULE_DEFAULTS[problem])
    sub = top.subobject("schedule")
    if sub is not None:
        for key in ("rho0", "alpha0", "tau", "h0", "rho_power", "alpha_power",
                    "m_power", "n_power"):
            value = sub.number(key, default=None)
            if value is not None:
                schedule[key] = float(value)
        for key in ("m0", "n0"):
            value = sub.integer(key, default=None, minimum=1)
            if value is not None:
                schedule[key] = value
        sub.finish()

    evaluation = {"saa_samples": 2000, "saa_every": 1, "crn": True,
                  "moreau_every": 0, "moreau_samples": 20000}
    sub = top.subobject("evaluation")
    if sub is not None:
        evaluation["saa_samples"] = sub.integer("saa_samples", default=2000, minimum=0)
        evaluation["saa_every"] = sub.integer("saa_every", default=1, minimum=1)
        evaluation["crn"] = bool(sub.take("crn", default=True, kind=bool))
        evaluation["moreau_every"] = sub.integer("moreau_every", default=0, minimum=0)
        evaluation["moreau_samples"] = sub.integer("moreau_samples", default=20000,
                                                   minimum=2)
        sub.finish()

    problem_params = {}
    sub = top.subobject("problem_params")
    if sub is not None:
        if problem == "spam":
            problem_params["kappa"] = sub.number("kappa", default=0.5)
            problem_params["dataset"] = sub.take("dataset", default=None, kind=str)
        elif problem == "facility":
            problem_params["instance_seed"] = sub.integer("instance_seed", default=42)
            problem_params["instance_path"] = sub.take("instance_path", default=None,
                                                       kind=str)
            problem_params["heteroscedastic"] = bool(
                sub.take("heteroscedastic", default=False, kind=bool))
        sub.finish()

    equilibrium = {"alpha0": 0.1, "batch": 10}
    sub = top.subobject("equilibrium")
    if sub is not None:
        equilibrium["alpha0"] = sub.number("alpha0", default=0.1, minimum=1e-12)
        equilibrium["batch"] = sub.integer("batch", default=10, minimum=1)
        sub.finish()

    po = {"train_size": 600, "restarts": 10}
    sub = top.subobject("po")
    if sub is not None:
        po["train_size"] = sub.integer("train_size", default=600, minimum=2)
        po["restarts"] = sub.integer("restarts", default=10, minimum=1)
        sub.finish()

    top.finish()
    return ExperimentConfig(
        problem=problem, methods=list(methods), T=T, seed=seed,
        replications=replications, oracle=oracle, schedule=schedule,
        evaluation=evaluation, problem_params=problem_params,
        equilibrium=equilibrium, po=po, output_dir=output_dir, workers=workers,
    )


def build_problem(config: ExperimentConfig):
    """Instantiate the benchmark named by the config."""
    params = config.problem_params
    if config.problem == "production_pricing":
        from .problems.pricing import make_pricing_problem
        return make_pricing_problem()
    if config.problem == "facility":
        from .problems.facility import FacilitySpec, make_facility_problem
        if params.get("instance_path"):
            with open(params["instance_path"], encoding="utf-8") as fh:
                spec = FacilitySpec.from_json(fh.read())
        else:
            spec = FacilitySpec.sample(
                np.random.default_rng(params.get("instance_seed", 42)))
        return make_facility_problem(spec)
    if config.problem == "spam":
        from .problems.spam import SpamSpec, make_spam_problem, spam_ingest
        path = params.get("dataset") or _bundled_spam_path()
        data = spam_ingest(path)
        spec = SpamSpec.for_kappa(params.get("kappa", 0.5))
        return make_spam_problem(spec, data)
    return _synthetic_problem()


def _bundled_spam_path() -> str:
    return os.path.join(os.path.dirname(__file__), "data", "spambase_synthetic.csv")


def _synthetic_problem():
    from .core import CostFunction, DDUProblem, GroundTruthModel

    SQRT3 = float(np.sqrt(3.0))

    def mean(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([np.exp(0.4 * x1 + 0.25 * x2),
                         np.sin(1.3 * x1) + 0.5 * x2 * x2], axis=-1)

    def mean_jacobian(x):
        x1, x2 = float(x[0]), float(x[1])
        e = np.exp(0.4 * x1 + 0.25 * x2)
        return np.array([[0.4 * e, 0.25 * e], [1.3 * np.cos(1.3 * x1), x2]])

    def sd_diag(x):
        x = np.asarray(x, dtype=float)
        return np.stack([0.6 + 0.1 * x[..., 0], 0.5 + 0.15 * x[..., 1]], axis=-1)

    def sd_jacobian(x):
        return np.array([[0.1, 0.0], [0.0, 0.15]])

    def sampler(rng, size):
        return rng.uniform(-SQRT3, SQRT3, size=(size, 2)), None

    truth = GroundTruthModel(response_dim=2, mean=mean, mean_jacobian=mean_jacobian,
                             sd_diag=sd_diag, residual_sampler=sampler,
                             sd_jacobian=sd_jacobian)
    target = np.array([1.5, 1.0])

    def value(x, S, aux=None, product=None):
        diff = np.atleast_2d(S) - target
        return np.sum(diff * diff, axis=1)

    def subgrad(x, S, aux=None, product=None):
        S = np.atleast_2d(S)
        return np.zeros((S.shape[0], 2)), 2.0 * (S - target), None

    problem = DDUProblem(
        domain=BoxDomain(np.zeros(2), np.full(2, 2.0)), response_dim=2,
        cost=CostFunction(value=value, subgrad=subgrad, smooth=True))
    return problem, truth


def _run_one(config_json: dict, method: str, rep: int):
    """Worker entry: rebuild the problem and run one replication."""
    config = parse_config(config_json)
    if config.problem == "synthetic":
        problem, truth = _synthetic_problem()
    else:
        problem, truth = build_problem(config)
    rep_seed = int(np.random.SeedSequence([config.seed, rep]).generate_state(1)[0])
    z0 = problem.domain.sample(np.random.default_rng(rep_seed))
    ev = config.evaluation
    if method == "als":
        sched = ParameterSchedule(**config.schedule)
        h0 = config.oracle.get("h0")
        oracle = OracleConfig(
            kind=config.oracle["kind"],
            shape_density=config.oracle["shape_density"],
            bandwidth_rule=None if h0 is None else default_bandwidth_rule(h0),
            static_center=config.oracle.get("static_center"),
            static_sd=config.oracle.get("static_sd"),
            fixed_dataset_path=config.oracle.get("fixed_dataset_path"),
        )
        options = DriverOptions(
            heteroscedastic=bool(config.problem_params.get("heteroscedastic", False)),
            saa_samples=ev["saa_samples"], saa_every=ev["saa_every"],
            saa_crn=ev["crn"],
            moreau_every=ev["moreau_every"], moreau_samples=ev["moreau_samples"],
        )
        trace = run_als(problem, truth, oracle, sched, config.T, rep_seed,
                        options=options, z0=z0)
        return trace.to_csv(), trace.failure
    if method in ("spg", "spp"):
        cfg = EquilibriumMethodConfig(method=method,
                                      alpha0=config.equilibrium["alpha0"],
                                      batch=config.equilibrium["batch"], T=config.T)
        options = BaselineOptions(saa_samples=ev["saa_samples"],
                                  saa_every=ev["saa_every"])
        runner = spg_run if method == "spg" else spp_run
        trace = runner(problem, truth, cfg, rep_seed, options=options, x0=z0)
        return trace.to_csv(), None
    if method == "po_lr":
        result = po_lr_run(problem, truth, train_size=config.po["train_size"],
                           restarts=config.po["restarts"], seed=rep_seed)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, rep, 7]))
        n_eval = max(ev["saa_samples"], 2)
        f = SampleAverageObjective(problem, truth, n_eval, rng)
        mean, stderr = f.estimate(result.solution)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        d = result.solution.shape[0]
        writer.writerow(["t"] + [f"z_{i}" for i in range(d)]
                        + ["rho", "alpha", "m", "n", "h", "f_saa", "step_norm",
                           "moreau_dist", "moreau_grad", "solver_iters"])
        writer.writerow([0] + [repr(float(v)) for v in result.solution]
                        + ["", "", "", str(result.train_size), "", repr(mean),
                           "", "", "", ""])
        return buf.getvalue(), None
    raise ConfigError(f"/methods: unsupported method {method!r}")


def run_experiment(config: ExperimentConfig, out_dir: str) -> int:
    """Execute every method x replication; returns the process exit code."""
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    manifest: dict[str, Any] = {
        "config": config.to_json(),
        "versions": {
            "alsopt": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "runs": [],
    }
    from . import recourse
    manifest["recourse_backend"] = recourse.backend_name()
    failures = 0
    jobs = [(method, rep) for method in config.methods
            for rep in range(config.replications)]
    results: dict[tuple, tuple] = {}

    def record(method, rep, outcome):
        results[(method, rep)] = outcome

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {(m, r): pool.submit(_run_one, config.to_json(), m, r)
                       for m, r in jobs}
            for key, fut in futures.items():
                try:
                    record(*key, fut.result())
                except MethodNotApplicable as exc:
                    record(*key, (None, f"not applicable: {exc}"))
                except Exception as exc:  # noqa: BLE001 - recorded, run continues
                    record(*key, (None, f"error: {exc}"))
    else:
        for m, r in jobs:
            try:
                record(m, r, _run_one(config.to_json(), m, r))
            except MethodNotApplicable as exc:
                record(m, r, (None, f"not applicable: {exc}"))
            except Exception as exc:  # noqa: BLE001
                record(m, r, (None, f"error: {exc}"))

    trace_paths: dict[str, list[str]] = {}
    for (method, rep) in jobs:
        text, failure = results[(method, rep)]
        entry = {"method": method, "replication": rep, "status": "ok"}
        if text is None:
            entry["status"] = failure
            failures += 1
        else:
            path = os.path.join(out_dir, f"trace_{method}_{rep:03d}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
            entry["trace"] = os.path.basename(path)
            if failure:
                entry["status"] = f"partial: {failure}"
                failures += 1
            trace_paths.setdefault(method, []).append(path)
        manifest["runs"].append(entry)

    summary_rows = []
    for method, paths in sorted(trace_paths.items()):
        if not paths:
            continue
        try:
            table = summarize(paths, "f_saa")
        except ConfigError:
            continue
        for t, med, q1, q3 in table:
            summary_rows.append([method, t, repr(med), repr(q1), repr(q3)])
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="",
              encoding="utf-8") as fh:
        fh.write("# per-iteration quantiles of f_saa across replications; "
                 "linear-interpolation rule\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "t", "median", "q1", "q3"])
        writer.writerows(summary_rows)

    manifest["wall_clock_seconds"] = time.time() - started
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return 3 if failures else 0


def _read_trace(path: str):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return header, body


def summarize(paths: list[str], column: str):
    """Per-iteration median/Q1/Q3 of a trace column across replications."""
    if not paths:
        raise ConfigError("/in: no trace files matched")
    series = []
    for path in paths:
        header, body = _read_trace(path)
        if column not in header:
            raise ConfigError(f"{path}: no column named {column!r}")
        idx = header.index(column)
        tcol = header.index("t")
        values = {}
        for row in body:
            if row[idx] != "":
                values[int(row[tcol])] = float(row[idx])
        series.append(values)
    common = sorted(set.intersection(*(set(s) for s in series)))
    if len(common) < max(len(s) for s in series):
        print("warning: ragged traces aligned on the common iteration index",
              file=sys.stderr)
    table = []
    for t in common:
        vals = np.array([s[t] for s in series])
        table.append((t, float(np.median(vals)),
                      float(np.percentile(vals, 25, method="linear")),
                      float(np.percentile(vals, 75, method="linear"))))
    return table


def _cmd_run(args) -> int:
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config.seed = args.seed
    out_dir = args.out or config.output_dir or "runs"
    return run_experiment(config, out_dir)


def _cmd_rate(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        top = _Schema(doc)
        n_grid = top.take("n_grid", default=[250, 1000, 4000], kind=list)
        reps = top.integer("reps", default=50, minimum=1)
        seed = top.integer("seed", default=0, minimum=0)
        h0 = top.number("h0", default=1.0, minimum=1e-12)
        oracle = top.take("oracle", default="adaptive", kind=str,
                          choices=("adaptive", "static", "both"))
        z = top.take("z", default=[1.0, 1.0], kind=list)
        top.finish()
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    problem, truth = _synthetic_problem()
    rule = default_bandwidth_rule(h0)
    kinds = ("adaptive", "static") if oracle == "both" else (oracle,)
    os.makedirs(args.out or ".", exist_ok=True)
    for kind in kinds:
        rng = np.random.default_rng(seed)
        table = estimation_rate_experiment(truth, problem.domain,
                                           np.asarray(z, dtype=float),
                                           [int(n) for n in n_grid], rule,
                                           reps, rng, oracle_kind=kind)
        path = os.path.join(args.out or ".", f"rate_{kind}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(table.to_csv())
        print(f"{kind}: mean-MSE slope {table.slope_mean():+.3f}, "
              f"jacobian-MSE slope {table.slope_jac():+.3f} -> {path}")
    return 0


def _cmd_summarize(args) -> int:
    paths = sorted(globmod.glob(args.inputs))
    try:
        table = summarize(paths, args.column)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    buf = io.StringIO()
    buf.write(f"# per-iteration quantiles of {args.column}; "
              "linear-interpolation rule\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "median", "q1", "q3"])
    for row in table:
        writer.writerow([row[0]] + [repr(v) for v in row[1:]])
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="alsopt", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(fn=_cmd_run)
    p_rate = sub.add_parser("rate", help="estimation-rate experiment")
    p_rate.add_argument("--config", required=True)
    p_rate.add_argument("--out", default=None)
    p_rate.set_defaults(fn=_cmd_rate)
    p_sum = sub.add_parser("summarize", help="quantile summary of trace CSVs")
    p_sum.add_argument("--in", dest="inputs", required=True)
    p_sum.add_argument("--column", required=True)
    p_sum.add_argument("--out", default=None)
    p_sum.set_defaults(fn=_cmd_summarize)
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
