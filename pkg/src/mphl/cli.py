"""Command-line entry point: ``mphl generate | run | sweep``.

Every flag has a key of the same name (dashes as underscores) in the JSON
``--config`` file; values given on the command line win.  Angles are given
in degrees here and stored in radians everywhere else.

Exit codes: 0 success, 2 configuration error, 3 scenario or connectivity error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .baselines import IncompleteDistanceMatrixError, grid_posterior_oracle, mds_localize
from .engine import ScheduleConfig, ScheduleStarvationError
from .experiments import METHODS, derive_seed, run_method, run_sweep
from .metrics import localization_errors, write_sweep_csv
from .netgraph import Scenario, ScenarioError, build_factor_graph, connectivity_report
from .sampler import SamplerConfig, SamplerInitializationError
from .simulator import GeneratorConfig, InfeasibleConfigError, generate_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCENARIO = 3

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# flag defaults, overridden by the config file and then the command line
OPTIONS: Dict[str, Any] = {
    "scenario": None,
    "methods": ["mphl_hybrid"],
    "particles": 1000,
    "message_size": 50,
    "burn_in": SamplerConfig.burn_in,
    "thin": SamplerConfig.thin,
    "gamma": 3,
    "nu_factor": 3,
    "max_iterations": 50,
    "run_to_max": False,
    "sigma_m": None,
    "zeta_deg": None,
    "replicates": 1,
    "seed": 0,
    "out": ".",
    "workers": 1,
    "fixed_scenario": False,
    "oracle": False,
    "generator": {},
}


def _csv_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mphl", description="Cooperative range/bearing localization by "
                                "particle message passing.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON file with defaults for any flag")
        sp.add_argument("--seed", type=int, default=None, help="master seed")
        sp.add_argument("--out", type=Path, default=None, help="output directory")
        sp.add_argument("--sigma-m", type=_float_list, default=None, metavar="S[,S...]",
                        help="range noise std in meters")
        sp.add_argument("--zeta-deg", type=_float_list, default=None, metavar="Z[,Z...]",
                        help="bearing noise std in degrees")
        sp.add_argument("-v", "--verbose", action="store_true")

    def engine(sp):
        sp.add_argument("--methods", type=_csv_list, default=None, help=f"comma-separated subset of {METHODS}")
        sp.add_argument("--particles", type=int, default=None, metavar="N", help="samples per belief")
        sp.add_argument("--message-size", type=int, default=None, metavar="M", help="particles per message")
        sp.add_argument("--burn-in", type=int, default=None)
        sp.add_argument("--thin", type=int, default=None, help="keep every k-th chain state")
        sp.add_argument("--gamma", type=int, default=None, help="messages needed to join the schedule")
        sp.add_argument("--nu-factor", type=int, default=None, help="transmissions per node, times the diameter")
        sp.add_argument("--max-iterations", type=int, default=None)
        sp.add_argument("--run-to-max", action="store_const", const=True, default=None,
                        help="keep iterating to --max-iterations after the schedule completes")
        sp.add_argument("--workers", type=int, default=None, help="threads")

    g = sub.add_parser("generate", help="draw a random scenario")
    common(g)
    r = sub.add_parser("run", help="localize one scenario")
    common(r)
    engine(r)
    r.add_argument("--scenario", type=Path, default=None, help="scenario JSON (omit to generate one)")
    r.add_argument("--oracle", action="store_const", const=True, default=None,
                   help="also dump the exact grid posterior (one or two targets only)")
    s = sub.add_parser("sweep", help="Monte Carlo sweep over a noise level")
    common(s)
    engine(s)
    s.add_argument("--scenario", type=Path, default=None,
                   help="keep this network fixed and redraw only the noise")
    s.add_argument("--replicates", type=int, default=None)
    s.add_argument("--fixed-scenario", action="store_const", const=True, default=None,
                   help="one generated network, fresh noise per replicate")
    return p


def resolve_options(args: argparse.Namespace) -> Dict[str, Any]:
    """Merge defaults, the config file and the command line, in that order."""
    opts = {k: (dict(v) if isinstance(v, dict) else list(v) if isinstance(v, list) else v)
            for k, v in OPTIONS.items()}
    if getattr(args, "config", None) is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = set(doc) - set(OPTIONS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        opts.update(doc)
    for k in OPTIONS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    for k in ("sigma_m", "zeta_deg"):
        if opts[k] is not None and not isinstance(opts[k], list):
            opts[k] = [opts[k]]
    if isinstance(opts["methods"], str):
        opts["methods"] = _csv_list(opts["methods"])
    _validate(opts)
    return opts


def _validate(o: Dict[str, Any]) -> None:
    bad = [m for m in o["methods"] if m not in METHODS]
    if bad or not o["methods"]:
        raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
    for k in ("particles", "message_size", "gamma", "nu_factor", "max_iterations", "replicates", "workers",
              "thin"):
        if not isinstance(o[k], int) or o[k] < 1:
            raise ConfigError(f"{k} must be a positive integer, got {o[k]!r}")
    if not isinstance(o["burn_in"], int) or o["burn_in"] < 0:
        raise ConfigError("burn_in must be a non-negative integer")
    if o["message_size"] > o["particles"]:
        raise ConfigError(f"message size M={o['message_size']} exceeds particle count N={o['particles']}")
    for k in ("sigma_m", "zeta_deg"):
        if o[k] is not None and (not o[k] or any(not v > 0 for v in o[k])):
            raise ConfigError(f"{k} values must be positive")
    if not isinstance(o["generator"], dict):
        raise ConfigError("generator must be an object of generator settings")


def generator_config(opts: Dict[str, Any], sigma: Optional[float] = None,
                     zeta_deg: Optional[float] = None) -> GeneratorConfig:
    doc = dict(opts["generator"])
    if "zeta_direction_deg" in doc:
        doc["zeta_direction"] = math.radians(doc.pop("zeta_direction_deg"))
    doc.setdefault("rng_seed", opts["seed"])
    if sigma is not None:
        doc["sigma_distance"] = sigma
    if zeta_deg is not None:
        doc["zeta_direction"] = math.radians(zeta_deg)
    try:
        return GeneratorConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"generator config: {exc}") from exc


def _single(opts, key):
    vals = opts[key]
    if vals is None:
        return None
    if len(vals) != 1:
        raise ConfigError(f"{key} takes a single value here")
    return vals[0]


def sampler_config(opts) -> SamplerConfig:
    return SamplerConfig(n_samples=opts["particles"], burn_in=opts["burn_in"], thin=opts["thin"])


def schedule_config(opts) -> ScheduleConfig:
    return ScheduleConfig(gamma=opts["gamma"], nu_factor=opts["nu_factor"],
                          max_iterations=opts["max_iterations"], run_to_max=bool(opts["run_to_max"]))


def _out_dir(opts) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(opts) -> int:
    cfg = generator_config(opts, _single(opts, "sigma_m"), _single(opts, "zeta_deg"))
    scenario = generate_scenario(cfg)
    path = _out_dir(opts) / "scenario.json"
    scenario.save(path)
    print(connectivity_report(scenario).format())
    print(f"wrote {path}")
    return EXIT_OK


def _load_scenario(opts) -> Scenario:
    if opts["scenario"] is not None:
        try:
            return Scenario.load(opts["scenario"])
        except OSError as exc:
            raise ConfigError(f"cannot read scenario: {exc}") from exc
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"malformed scenario file {opts['scenario']}: {exc}") from exc
    cfg = generator_config(opts, _single(opts, "sigma_m"), _single(opts, "zeta_deg"))
    return generate_scenario(cfg)


def cmd_run(opts) -> int:
    scenario = _load_scenario(opts)
    report = connectivity_report(scenario)
    if report.disconnected:
        raise ScenarioError("scenario is disconnected:\n" + report.format())
    out = _out_dir(opts)
    summary: Dict[str, Any] = {"scenario": str(opts["scenario"]) if opts["scenario"] else None, "methods": {}}
    truth = {t: scenario.nodes[t] for t in scenario.targets}
    for method in opts["methods"]:
        if method == "mds":
            est = mds_localize(scenario)
            errors = localization_errors(est, truth)
            summary["methods"][method] = {
                "estimates": {str(k): [v.x, v.y] for k, v in est.items()},
                "errors": {str(k): v for k, v in errors.items()},
                "avg_error": float(np.mean(list(errors.values()))),
            }
        else:
            run = run_method(scenario, method, sampler_config(opts), schedule_config(opts),
                             opts["message_size"], derive_seed(opts["seed"], METHODS.index(method)),
                             opts["workers"])
            res = run.result
            res.write_trace_csv(out / f"trace_{method}.csv")
            res.write_summary_json(out / f"summary_{method}.json", scenario)
            _write_particles(out / f"particles_{method}.csv", res.particles)
            summary["methods"][method] = res.summary(scenario)
        print(f"{method}: average error {summary['methods'][method]['avg_error']:.4f} m")
    if opts["oracle"]:
        if not 1 <= len(scenario.targets) <= 2:
            raise ConfigError(f"the grid oracle needs one or two targets, scenario has {len(scenario.targets)}")
        oracle = grid_posterior_oracle(build_factor_graph(scenario))
        summary["oracle"] = {str(t): {"mean": list(oracle.mean[t]), "std": oracle.std[t],
                                      "modes": [list(m) for m in oracle.modes[t]]} for t in oracle.targets}
        for t in oracle.targets:
            oracle.write_csv(out / f"oracle_{t}.csv", t)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _write_particles(path, particles) -> None:
    with open(path, "w") as fh:
        fh.write("node_id,x,y\n")
        for node, ps in particles.items():
            for x, y in ps.particles:
                fh.write(f"{node},{float(x)!r},{float(y)!r}\n")


def cmd_sweep(opts) -> int:
    sig, zet = opts["sigma_m"], opts["zeta_deg"]
    multi = [k for k, v in (("sigma_m", sig), ("zeta_deg", zet)) if v is not None and len(v) > 1]
    if len(multi) > 1:
        raise ConfigError("sweep one axis at a time: give a list for --sigma-m or --zeta-deg, not both")
    if multi == ["zeta_deg"]:
        axis, values = "zeta_direction", [math.radians(z) for z in zet]
        gen = generator_config(opts, _single(opts, "sigma_m"), None)
    else:
        if sig is None:
            raise ConfigError("sweep needs values: --sigma-m S1,S2,... or --zeta-deg Z1,Z2,...")
        axis, values = "sigma_distance", list(sig)
        gen = generator_config(opts, None, _single(opts, "zeta_deg"))
    fixed = None
    if opts["scenario"] is not None:
        fixed = _load_scenario(opts)
        if connectivity_report(fixed).disconnected:
            raise ScenarioError("scenario is disconnected:\n" + connectivity_report(fixed).format())
    rows = run_sweep(gen, axis, values, opts["methods"], opts["replicates"], opts["seed"],
                     sampler_config(opts), schedule_config(opts), opts["message_size"],
                     fixed_scenario=bool(opts["fixed_scenario"]), workers=opts["workers"],
                     base_scenario=fixed)
    path = _out_dir(opts) / f"sweep_{axis}.csv"
    write_sweep_csv(rows, path)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except (ConfigError, InfeasibleConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, IncompleteDistanceMatrixError, ScheduleStarvationError,
            SamplerInitializationError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
