"""Command-line entry point: ``ocfsense <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    ExperimentConfig,
    iteration_cdf,
    run_single,
    run_sweep,
    write_cdf,
    write_sweep,
)
from .ocf import state_from_outcome, verify_t_stable
from .outcome import MODES, MechanismOutcome
from .scenario import GlobalParams, Scenario, generate_scenario


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _number_list(text: str) -> list[float]:
    return [json.loads(v) for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig/GlobalParams keys")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; VALUE is parsed as JSON when possible")
    p.add_argument("--n-users", type=int)
    p.add_argument("--n-tasks", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ocfsense", description="Crowdsensing market simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="emit a random scenario as JSON")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("run", help="run one mechanism on one scenario")
    _common(p)
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, help="alpha1 for noncoop, alpha2 for OCF modes")
    p.add_argument("--scenario", type=Path, help="scenario JSON instead of --seed")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep", help="Monte Carlo sweep; writes CSV and sidecar JSON")
    _common(p)
    p.add_argument("--var", required=True, choices=("alpha1", "alpha2", "users", "tasks"))
    p.add_argument("--grid", type=_number_list, help="comma-separated grid values")
    p.add_argument("--instances", type=int)
    p.add_argument("--seed-base", type=int)
    p.add_argument("--out-dir", type=Path)

    p = sub.add_parser("cdf-iterations", help="CDF of OCF iterations per user count")
    _common(p)
    p.add_argument("--grid", type=_number_list, help="comma-separated user counts")
    p.add_argument("--instances", type=int)
    p.add_argument("--seed-base", type=int)
    p.add_argument("--out-dir", type=Path)

    p = sub.add_parser("stability-check", help="check an OCF outcome for T-stability")
    p.add_argument("outcome", type=Path)
    p.add_argument("--scenario", type=Path, help="scenario JSON the outcome was run on")
    p.add_argument("--require-stable", action="store_true", help="fail when the OCS is not stable")
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        data = json.loads(args.config.read_text())
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        data[key] = _parse_value(value)
    flags = {
        "n_users": getattr(args, "n_users", None),
        "n_tasks": getattr(args, "n_tasks", None),
        "instances_per_point": getattr(args, "instances", None),
        "seed_base": getattr(args, "seed_base", None),
        "output_dir": str(args.out_dir) if getattr(args, "out_dir", None) else None,
        "grid": getattr(args, "grid", None),
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text + "\n")
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
        sys.stdout.write(json.dumps({"written": [str(out)]}) + "\n")


def _scenario(args, config: ExperimentConfig) -> Scenario:
    if getattr(args, "scenario", None):
        return Scenario.from_dict(json.loads(args.scenario.read_text()))
    params = config.params.replace(rng_seed=args.seed)
    return generate_scenario(params, config.n_tasks, config.n_users)


def cmd_generate(args):
    config = load_config(args)
    _emit(json.dumps(_scenario(args, config).to_dict(), indent=2, sort_keys=True), args.out)


def cmd_run(args):
    config = load_config(args)
    out = run_single(args.mode, _scenario(args, config), args.alpha, config)
    _emit(out.to_json(), args.out)


def cmd_sweep(args):
    config = load_config(args)
    if args.var in ("users", "tasks") and not config.grid:
        raise UsageError(f"--grid is required for a {args.var} sweep")
    config = config.replace(sweep_var=args.var)
    paths = write_sweep(run_sweep(config), config)
    _emit(json.dumps({"written": [str(p) for p in paths]}), None)


def cmd_cdf(args):
    config = load_config(args)
    if config.grid:
        config = config.replace(sweep_var="users")
    paths = write_cdf(iteration_cdf(config), config)
    _emit(json.dumps({"written": [str(p) for p in paths]}), None)


def cmd_stability(args):
    outcome = MechanismOutcome.from_dict(json.loads(args.outcome.read_text()))
    if outcome.alpha is None or not outcome.mode.startswith("ocf"):
        raise ValueError(f"stability-check needs an OCF outcome, got mode {outcome.mode!r}")
    if args.scenario:
        scenario = Scenario.from_dict(json.loads(args.scenario.read_text()))
    else:
        meta = outcome.scenario_meta
        scenario = generate_scenario(GlobalParams.from_dict(meta["params"]), meta["n_tasks"], meta["n_users"])
    state = state_from_outcome(scenario, outcome)
    stable, witness = verify_t_stable(state, scenario, outcome.alpha)
    report = {"stable": stable, "counterexample": witness, "mode": outcome.mode, "seed": outcome.seed}
    if not stable and args.require_stable:
        raise RuntimeError(f"outcome is not T-stable: {json.dumps(witness)}")
    _emit(json.dumps(report, sort_keys=True), None)


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "cdf-iterations": cmd_cdf,
    "stability-check": cmd_stability,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING)
        COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 2
    except Exception as exc:  # report every failure as JSON
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
