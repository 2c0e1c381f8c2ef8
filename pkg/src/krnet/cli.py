"""Command-line interface.

Exit status: 0 on success, 2 for invalid input, 3 for numerical failures.
Run ``krnet <command> --help`` for the options of each command; the JSON
config keys are described in the README.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .datasets import generate_dataset
from .demos import DEMOS
from .errors import InputError, InvalidParameter, NumericalError
from .experiments import ROW_FIELDS, ExperimentConfig, large_data_experiment
from .io import read_dataset_csv, read_json, read_measure, resolve, write_csv, write_json
from .measure import PointedSpace, p_moment, to_json_dict, tv_norm
from .network import Activation, uniform_error
from .problem import Problem
from .regularizer import RegParams, g_alpha_beta
from .solver import SolveReport, conditional_gradient_solve, solve_distillation, solve_fusion
from .transport import kr_norm, kru_distance, kru_norm, w1_distance

CONFIG_KEYS = {"data", "activation", "loss", "alpha", "beta", "p", "mode", "q", "metric_exponent",
               "seed", "max_outer", "data_weight", "teacher", "references", "output", "trace_csv",
               "evaluate"}


def _now() -> str:
    return _dt.datetime.now(tz=_dt.timezone.utc).isoformat()


def cmd_norm(args) -> int:
    m = read_measure(args.measure)
    if args.which == "kru":
        val = kru_norm(m)
    elif args.which == "kr":
        val = kr_norm(m)
    elif args.which == "tv":
        val = tv_norm(m)
    else:
        val = p_moment(m, args.p)
    print(repr(float(val)))
    return 0


def cmd_w1(args) -> int:
    res = w1_distance(read_measure(args.a), read_measure(args.b))
    print(repr(float(res.cost)))
    if args.plan:
        C = res.sources.space.pairwise(res.sources.locations, res.sinks.locations)
        rows = [(i, j, mass, float(C[i, j])) for i, j, mass in sorted(res.plan)]
        write_csv(args.plan, ("i", "j", "mass", "cost_edge"), rows)
    return 0


def _load_data(cfg: dict, base: Path, act: Activation):
    data_cfg = cfg.get("data")
    if not isinstance(data_cfg, dict):
        raise InvalidParameter("config needs a 'data' object with 'csv' or 'generate'")
    if "csv" in data_cfg:
        return read_dataset_csv(resolve(base, data_cfg["csv"]))
    if "generate" in data_cfg:
        g = dict(data_cfg["generate"])
        teacher = read_measure(resolve(base, g.pop("teacher")))
        return generate_dataset(teacher, act, int(g.get("N", 100)), float(g.get("noise_std", 0.0)),
                                g.get("input_distribution", "gaussian"), int(g.get("seed", 0)))
    raise InvalidParameter("'data' must contain 'csv' or 'generate'")


def _build_problem(cfg: dict, base: Path, args, kind: str) -> tuple[Problem, dict]:
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
    act = Activation.parse(cfg.get("activation", "relu"))
    refs = []
    moment_on = "solution"
    if kind == "distill":
        if "teacher" not in cfg:
            raise InvalidParameter("distill config needs 'teacher'")
        refs = [(1.0, read_measure(resolve(base, cfg["teacher"])))]
        moment_on = "solution_minus_first_reference"
    elif kind == "fuse":
        entries = cfg.get("references", [])
        if not isinstance(entries, list) or len(entries) < 2:
            raise InvalidParameter("fuse config needs a list of at least two 'references'")
        refs = [(float(e.get("coefficient", 1.0)), read_measure(resolve(base, e["measure"])))
                for e in entries]
    elif "references" in cfg or "teacher" in cfg:
        raise InvalidParameter("train takes no references; use distill or fuse")
    data = _load_data(cfg, base, act)
    space = refs[0][1].space if refs else PointedSpace(
        data.input_dim + 1, metric_exponent=float(cfg.get("metric_exponent", 1.0)))
    par = {k: cfg[k] for k in ("alpha", "beta", "p", "mode", "q") if k in cfg}
    for k in ("alpha", "beta", "p", "mode", "q"):
        v = getattr(args, k, None)
        if v is not None:
            par[k] = v
    params = RegParams(**par)
    prob = Problem(data, act, cfg.get("loss", "squared"), params, tuple(refs), moment_on,
                   float(cfg.get("data_weight", 1.0)), space)
    return prob, cfg


def report_dict(rep: SolveReport, prob: Problem) -> dict:
    return {
        "measure": to_json_dict(rep.measure),
        "objective": rep.objective,
        "objective_trace": rep.objective_trace,
        "certificate_gap": rep.certificate_gap,
        "certificate_is_heuristic": rep.certificate_is_heuristic,
        "iterations": rep.iterations,
        "atom_count": rep.atom_count,
        "stop_reason": rep.stop_reason,
        "inner_converged": rep.inner_converged,
        "warnings": rep.warnings,
        "penalty_value": g_alpha_beta(rep.measure, prob.params),
        "metadata": {"wall_time": rep.wall_time, "timestamp": _now()},
    }


def _evaluate(cfg: dict, base: Path, rep: SolveReport, prob: Problem) -> dict:
    ev = cfg.get("evaluate")
    if not ev:
        return {}
    ref = read_measure(resolve(base, ev["reference"]))
    return {
        "kru_distance_to_reference": kru_distance(rep.measure, ref),
        "uniform_error": uniform_error(rep.measure, ref, prob.activation,
                                       float(ev.get("radius", 1.0)), int(ev.get("grid_size", 4096))),
        "reference_penalty_value": g_alpha_beta(ref, prob.params),
    }


def cmd_solve(args, kind: str) -> int:
    cfg_path = Path(args.config)
    base = cfg_path.parent
    cfg = read_json(cfg_path)
    if not isinstance(cfg, dict):
        raise InvalidParameter("config must be a JSON object")
    prob, cfg = _build_problem(cfg, base, args, kind)
    seed = int(cfg.get("seed", 0))
    max_outer = int(cfg.get("max_outer", 200))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # recorded in the report instead
        if kind == "distill":
            rep = solve_distillation(prob, max_outer, seed=seed)
        elif kind == "fuse":
            rep = solve_fusion(prob, max_outer, seed=seed)
        else:
            rep = conditional_gradient_solve(prob, max_outer, seed=seed)
    out = report_dict(rep, prob)
    out["evaluation"] = _evaluate(cfg, base, rep, prob)
    out_path = resolve(base, cfg.get("output", f"{cfg_path.stem}.report.json"))
    write_json(out_path, out)
    if cfg.get("trace_csv"):
        write_csv(resolve(base, cfg["trace_csv"]), ("iteration", "objective"),
                  enumerate(rep.objective_trace))
    print(f"objective {rep.objective!r} atoms {rep.atom_count} stop {rep.stop_reason} -> {out_path}")
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if cfg.output_dir is None:
        cfg = replace(cfg, output_dir=str(Path(args.config).parent))
    rows = large_data_experiment(cfg)
    for r in rows:
        print(",".join(str(r[k]) for k in ROW_FIELDS[:7]) + f",{r['status']}")
    failed = [r for r in rows if r["status"] != "ok"]
    return 3 if failed and len(failed) == len(rows) else 0


def cmd_demo(args) -> int:
    report = DEMOS[args.name]()
    report["metadata"] = {"timestamp": _now()}
    out = Path(args.out) if args.out else Path(f"demo_{args.name.replace('-', '_')}.json")
    write_json(out, report)
    print(f"demo {args.name} passed -> {out}")
    return 0


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--mode", choices=("kru_moment", "weighted_tv"))
    p.add_argument("--q", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="krnet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("norm", help="norm of a measure JSON")
    p.add_argument("measure")
    p.add_argument("--which", choices=("kru", "kr", "tv", "moment"), default="kru")
    p.add_argument("--p", type=float, default=1.0)
    p = sub.add_parser("w1", help="Wasserstein-1 distance between two nonnegative measures")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--plan", help="write the optimal plan as CSV")
    for name in ("train", "distill", "fuse"):
        p = sub.add_parser(name, help=f"{name} from a JSON config")
        p.add_argument("config")
        _add_param_flags(p)
    p = sub.add_parser("experiment", help="large-data sweep from a JSON config")
    p.add_argument("config")
    p = sub.add_parser("demo", help="run a reproduction demo")
    p.add_argument("name", choices=sorted(DEMOS))
    p.add_argument("--out", help="report JSON path")
    return ap


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    try:
        if args.command == "norm":
            return cmd_norm(args)
        if args.command == "w1":
            return cmd_w1(args)
        if args.command in ("train", "distill", "fuse"):
            return cmd_solve(args, args.command)
        if args.command == "experiment":
            return cmd_experiment(args)
        return cmd_demo(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc!r}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
