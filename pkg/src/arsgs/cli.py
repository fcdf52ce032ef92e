"""Command-line entry point: ``arsgs optimize | sample | diagnose``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__, blockmodel, diagnostics, gapcore, targets
from .adapt import Schedule, StepRule
from .errors import (
    ConfigError,
    InvalidEpsilon,
    NoConvergence,
    NotPositiveDefinite,
    NumericalUnderflow,
    TooShort,
    WorkerPanic,
    ZeroVariance,
)
from .samplers import ALGORITHMS, RunConfig, run

log = logging.getLogger("arsgs")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONVERGENCE, EXIT_DATA = 0, 1, 2, 3, 4, 5

_number = {"type": "number"}
_bound = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]}
_step_rule = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["log", "harmonic", "constant"]},
        "offset": _number,
        "scale": _number,
        "value": _number,
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["target", "sampler", "output"],
    "properties": {
        "target": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["gaussian", "tmvn", "msm", "example1", "example2", "tmvn_generated", "arrowhead"]},
                "covariance": {"type": "string"},
                "precision": {"type": "string"},
                "mean": {"type": "array", "items": _number},
                "partition": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "sigma0": {"type": "string"},
                "lower": _bound,
                "upper": _bound,
                "observations": {"type": "string"},
                "a1": _number,
                "a2": _number,
                "sigma0_sq": _number,
                "sigma1_sq": _number,
                "beta_sq": _number,
                "rho": {"type": "array", "items": _number, "minItems": 1},
                "d": {"type": "integer", "minimum": 1},
                "c": _bound,
                "variant": {"enum": [1, 2]},
                "generator_seed": {"type": "integer"},
                "radius": _number,
            },
            "allOf": [
                {"if": {"properties": {"kind": {"const": "gaussian"}}},
                 "then": {"oneOf": [{"required": ["covariance"]}, {"required": ["precision"]}]}},
                {"if": {"properties": {"kind": {"const": "tmvn"}}}, "then": {"required": ["sigma0", "lower", "upper"]}},
                {"if": {"properties": {"kind": {"const": "msm"}}},
                 "then": {"required": ["observations", "a1", "a2", "sigma0_sq", "sigma1_sq", "beta_sq"]}},
                {"if": {"properties": {"kind": {"const": "example1"}}}, "then": {"required": ["rho"]}},
                {"if": {"properties": {"kind": {"const": "example2"}}}, "then": {"required": ["d", "c"]}},
                {"if": {"properties": {"kind": {"const": "tmvn_generated"}}},
                 "then": {"required": ["d", "lower", "upper", "generator_seed"]}},
                {"if": {"properties": {"kind": {"const": "arrowhead"}}}, "then": {"required": ["d", "generator_seed"]}},
            ],
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "required": ["algorithm", "total_samples", "seed"],
            "properties": {
                "algorithm": {"enum": list(ALGORITHMS)},
                "total_samples": {"type": "integer", "minimum": 1},
                "thinning": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "epoch_length": {"type": "integer", "minimum": 1},
                "variant": {"enum": ["z", "y"]},
                "ridge": {"type": "number", "minimum": 0},
                "initial_p": {"type": "array", "items": _number},
                "parallel": {"type": "boolean"},
                "exact_sigma": {"type": "boolean"},
                "schedule": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"eps": _number, "step": _step_rule, "perturbation": _step_rule},
                },
                "gate": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lower", "upper"],
                    "properties": {"lower": _bound, "upper": _bound},
                },
                "proposal": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "beta0": {"type": "number", "exclusiveMinimum": 0},
                        "q_mix": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "sigma_fallback": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dir"],
            "properties": {"dir": {"type": "string"}},
        },
    },
}


# serialisation ---------------------------------------------------------------


def _json_text(obj, indent: int = 0) -> str:
    """JSON with floats written to 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_json_text(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json_text(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + _json_text(v, indent + 1) for v in seq) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        return format(v, ".17g")
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def write_json(path, obj) -> None:
    Path(path).write_text(_json_text(obj) + "\n")


def header_line(config_hash: str) -> str:
    return f"# arsgs {__version__} config={config_hash}"


def _meta(config_hash: str) -> dict:
    return {"version": __version__, "config_sha256": config_hash}


def write_chain_csv(path, chain, config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header_line(config_hash) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + list(chain.columns))
        n_cont = len(chain.columns)
        discrete = [j for j, name in enumerate(chain.columns) if name.startswith("r_")]
        for step, row in zip(chain.steps, chain.states):
            cells = [repr(float(v)) for v in row[:n_cont]]
            for j in discrete:
                cells[j] = str(int(row[j]))
            w.writerow([int(step)] + cells)


def write_trace_csv(path, trace, s: int, config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header_line(config_hash) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "n"] + [f"w_{i + 1}" for i in range(s)] + [f"p_{i + 1}" for i in range(s)] + ["pg_estimate"])
        for r in trace.records:
            w.writerow([r.epoch, r.n] + [repr(float(v)) for v in r.w] + [repr(float(v)) for v in r.p] + [repr(float(r.pg_estimate))])


def read_chain_csv(path):
    """Return ``(names, states)`` from a chain CSV (the ``step`` column is dropped)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no header")
    rows = list(csv.reader(lines))
    header = rows[0]
    if not header or header[0] != "step" or len(header) < 2:
        raise ValueError(f"{path}: header must start with 'step'")
    body = rows[1:]
    if any(len(r) != len(header) for r in body):
        raise ValueError(f"{path}: ragged rows")
    try:
        data = np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(len(body), len(header) - 1)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry") from exc
    return header[1:], data


# config ----------------------------------------------------------------------


def load_config(path):
    """Parse and schema-validate a YAML or JSON document; returns ``(config, sha256)``."""
    raw = Path(path).read_bytes()
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}") from exc
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from exc
    return doc, hashlib.sha256(raw).hexdigest()


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def build_target(spec: dict, base: Path, outdir: Path):
    """Construct the target; generated matrices are written next to the outputs."""
    kind = spec["kind"]
    part_spec = spec.get("partition")
    generated = {}
    if kind == "gaussian":
        if "precision" in spec:
            q = blockmodel.read_matrix_csv(_resolve(base, spec["precision"]))
            target = targets.GaussianTarget(q, spec.get("mean"), blockmodel.partition_from_spec(part_spec, q.shape[0]))
        else:
            sig = blockmodel.read_matrix_csv(_resolve(base, spec["covariance"]))
            target = targets.GaussianTarget.from_covariance(
                sig, spec.get("mean"), blockmodel.partition_from_spec(part_spec, sig.shape[0])
            )
    elif kind == "example1":
        q = targets.make_example1(spec["rho"])
        target = targets.GaussianTarget(q, None, blockmodel.partition_from_spec(part_spec, q.shape[0]))
        generated["precision"] = q
    elif kind in ("example2", "arrowhead"):
        d = spec["d"]
        if kind == "example2":
            sig = targets.make_example2(d, spec["c"])
        else:
            rng = np.random.default_rng(spec["generator_seed"])
            sig = targets.random_arrowhead(d, rng, spec.get("radius", 0.95))
        target = targets.GaussianTarget.from_covariance(sig, None, blockmodel.partition_from_spec(part_spec, d))
        generated["covariance"] = sig
    elif kind == "tmvn":
        sig = blockmodel.read_matrix_csv(_resolve(base, spec["sigma0"]))
        target = targets.TmvnTarget(sig, spec["lower"], spec["upper"])
    elif kind == "tmvn_generated":
        rng = np.random.default_rng(spec["generator_seed"])
        sig = targets.make_tmvn_sigma(spec["d"], rng, spec.get("variant", 1))
        target = targets.TmvnTarget(sig, spec["lower"], spec["upper"])
        generated["sigma0"] = sig
    elif kind == "msm":
        y = blockmodel.read_matrix_csv(_resolve(base, spec["observations"])).ravel()
        target = targets.MsmTarget(y, spec["a1"], spec["a2"], spec["sigma0_sq"], spec["sigma1_sq"], spec["beta_sq"])
    else:  # pragma: no cover - schema guards this
        raise ConfigError(f"unknown target kind {kind}")
    return target, generated


def _rule(d: dict) -> StepRule:
    return StepRule(d["kind"], d.get("offset", 0.0), d.get("scale", 1.0), d.get("value", 0.0))


def build_run_config(spec: dict, target) -> RunConfig:
    epoch_length = spec.get("epoch_length", 5000)
    sched = None
    if "schedule" in spec:
        base = Schedule.default(target.d, target.partition.s, epoch_length)
        sd = spec["schedule"]
        sched = Schedule(
            eps=sd.get("eps", base.eps),
            step=_rule(sd["step"]) if "step" in sd else base.step,
            perturbation=_rule(sd["perturbation"]) if "perturbation" in sd else base.perturbation,
            epoch_length=epoch_length,
        )
    exact = None
    if spec.get("exact_sigma"):
        cov = getattr(target, "covariance", None)
        if cov is None:
            raise ConfigError("exact_sigma is only available for Gaussian targets")
        exact = cov()
    gate = spec.get("gate", {})
    prop = spec.get("proposal", {})
    return RunConfig(
        algorithm=spec["algorithm"],
        total_samples=spec["total_samples"],
        thinning=spec.get("thinning", 1),
        seed=spec["seed"],
        schedule=sched,
        epoch_length=epoch_length,
        gate_lower=gate.get("lower"),
        gate_upper=gate.get("upper"),
        variant=spec.get("variant", "z"),
        ridge=spec.get("ridge"),
        exact_sigma=exact,
        initial_p=spec.get("initial_p"),
        beta0=prop.get("beta0", 1.0),
        q_mix=prop.get("q_mix", 1.0),
        sigma_fallback=prop.get("sigma_fallback", 5.0),
        parallel=spec.get("parallel", False),
    )


# commands --------------------------------------------------------------------


def cmd_optimize(args) -> int:
    sigma = blockmodel.read_matrix_csv(args.covariance)
    d = sigma.shape[0]
    if sigma.shape != (d, d):
        raise ValueError("covariance must be square")
    part = blockmodel.partition_from_spec(blockmodel.sizes_from_string(args.partition) if args.partition else None, d)
    report = gapcore.pseudo_optimal_exact(sigma, part, eps=args.eps, tol=args.tol, max_iter=args.max_iter)
    problem = gapcore.GapProblem.from_covariance(sigma, part)
    pg_uniform = problem.pg(np.full(part.s, 1.0 / part.s))
    out = {
        "p_opt": report.weights,
        "pg_opt": report.gap_value,
        "pg_uniform": pg_uniform,
        "improvement_ratio": report.gap_value / pg_uniform,
        "iterations": report.iterations,
        "converged": report.converged,
        "eps": args.eps if args.eps is not None else gapcore.default_epsilon(d, part.s),
        "meta": _meta(hashlib.sha256(Path(args.covariance).read_bytes()).hexdigest()),
    }
    text = _json_text(out) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if not report.converged:
        raise NoConvergence(f"optimiser did not stabilise within {args.max_iter} iterations")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg_path = Path(args.config)
    doc, digest = load_config(cfg_path)
    base = cfg_path.resolve().parent
    outdir = _resolve(base, doc["output"]["dir"])
    target, generated = build_target(doc["target"], base, outdir)
    run_cfg = build_run_config(doc["sampler"], target)
    run_cfg.validate()
    outdir.mkdir(parents=True, exist_ok=True)
    for name, mat in generated.items():
        blockmodel.write_matrix_csv(outdir / f"{name}.csv", mat)
    summary_path = outdir / "summary.json"
    try:
        chain, trace = run(target, run_cfg)
    except Exception as exc:
        write_json(summary_path, {"status": "failed", "error": f"{type(exc).__name__}: {exc}", "meta": _meta(digest)})
        raise
    write_chain_csv(outdir / "chain.csv", chain, digest)
    write_trace_csv(outdir / "trace.csv", trace, target.partition.s, digest)
    last = trace[-1] if len(trace) else None
    summary = {
        "status": "ok",
        "algorithm": run_cfg.algorithm,
        "steps": chain.n_steps,
        "recorded": int(chain.states.shape[0]),
        "epochs": len(trace),
        "skipped_epochs": chain.skipped_epochs,
        "final_p": chain.final_p,
        "final_w": None if last is None else last.w,
        "pg_estimate": None if last is None else last.pg_estimate,
        "final_beta": chain.final_beta,
        "acceptance_rates": chain.acceptance_rates(),
        "meta": _meta(digest),
    }
    write_json(summary_path, summary)
    timing = {
        "sampling_seconds": chain.sample_seconds,
        "adaptation_seconds": chain.adapt_seconds,
        "per_epoch": [{"epoch": r.epoch, "sampling": r.sample_seconds, "adaptation": r.adapt_seconds} for r in trace],
        "meta": _meta(digest),
    }
    write_json(outdir / "timing.json", timing)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    names, states = read_chain_csv(args.chain)
    report = diagnostics.worst_linear_asvar(states, names)
    out = {"n": int(states.shape[0]), "asvar": report.to_dict()}
    if args.acf_lags:
        wanted = args.acf_columns.split(",") if args.acf_columns else names
        curves = {}
        for name in wanted:
            if name not in names:
                raise ValueError(f"unknown column {name}")
            j = names.index(name)
            try:
                curves[name] = diagnostics.acf(states[:, j], args.acf_lags)
            except ZeroVariance:
                continue
        out["acf"] = {k: v.values for k, v in curves.items()}
        if args.acf_csv and curves:
            diagnostics.write_acf_csv(args.acf_csv, curves)
    if args.gap is not None and report.max_index >= 0:
        kv = diagnostics.kv_bound_check(report.max_value, args.gap, 1.0, args.slack)
        out["kv"] = {"lhs": kv.lhs, "rhs": kv.rhs, "slack": args.slack, "satisfied": kv.satisfied}
    out["meta"] = _meta(hashlib.sha256(Path(args.chain).read_bytes()).hexdigest())
    text = _json_text(out) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="arsgs", description=__doc__)
    ap.add_argument("--version", action="version", version=f"arsgs {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    op = sub.add_parser("optimize", help="pseudo-optimal selection probabilities for a covariance matrix")
    op.add_argument("covariance", help="covariance matrix CSV")
    op.add_argument("--partition", help="comma-separated block sizes (default: coordinatewise)")
    op.add_argument("--eps", type=float, default=None)
    op.add_argument("--tol", type=float, default=1e-5)
    op.add_argument("--max-iter", type=int, default=100_000)
    op.add_argument("--out", help="JSON output path (default: stdout)")
    op.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("sample", help="run a sampler from a YAML/JSON config")
    sp.add_argument("config")
    sp.set_defaults(func=cmd_sample)

    dp = sub.add_parser("diagnose", help="asymptotic variances and ACFs of a recorded chain")
    dp.add_argument("chain")
    dp.add_argument("--acf-lags", type=int, default=0)
    dp.add_argument("--acf-columns", help="comma-separated column names (default: all)")
    dp.add_argument("--acf-csv", help="write ACF curves to this CSV")
    dp.add_argument("--gap", type=float, help="spectral gap for the Kipnis-Varadhan check")
    dp.add_argument("--slack", type=float, default=0.2)
    dp.add_argument("--out", help="JSON output path (default: stdout)")
    dp.set_defaults(func=cmd_diagnose)
    return ap


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, WorkerPanic) and exc.__cause__ is not None:
        exc = exc.__cause__
    if isinstance(exc, (NotPositiveDefinite, NumericalUnderflow)):
        return EXIT_NUMERIC
    if isinstance(exc, NoConvergence):
        return EXIT_CONVERGENCE
    if isinstance(exc, (TooShort, ZeroVariance)):
        return EXIT_DATA
    if isinstance(exc, (ConfigError, InvalidEpsilon, ValueError, OSError)):
        return EXIT_INPUT
    return EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = exit_code_for(exc)
        if code == EXIT_FAIL:
            log.exception("unexpected failure")
        else:
            print(f"arsgs: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
