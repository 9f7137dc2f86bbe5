"""Command-line runner: ``feedaudit <command> --config path [--seed-override u64] [--out path]``.

Every command reads one JSON config, writes one JSON report (stdout when
``--out`` is omitted) and exits with 0 for YES or success, 1 for NO, and 2
for any error. Reports hold only deterministic content; wall-clock time goes
to a ``<out>.timing.json`` sidecar so reruns produce identical report bytes.
Relative paths in a config are resolved against the config file's directory.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import io
from .calibration import GridPoint, calibrate_constant, default_grid, load_calibration
from .counterfactual import CounterfactualConfig, counterfactual_tester
from .errors import ConfigInvalid, FeedAuditError
from .iid import Decision, IIDTestConfig, iid_tester
from .markov import estimate_cover_time, validate_chain
from .oracle import iid_trial, regulatory_trial, verdict_probability
from .regulatory import RegulatoryConfig, regulatory_tester, required_horizon
from .rng import derive_seed
from .sim import ScenarioSpec, generate_feeds, make_scenario

COMMANDS = ("simulate", "test-iid", "test-regulatory", "test-counterfactual", "calibrate", "cover-time", "sweep")
EXIT_YES, EXIT_NO, EXIT_ERROR = 0, 1, 2
_MISSING = object()


@dataclass
class Context:
    config: dict
    seed: int
    base: Path
    inputs: dict

    def path(self, section: dict, key: str, where: str, must_exist: bool = True) -> Path:
        raw = get(section, key, where, str)
        field = f"{where}.{key}" if where else key
        p = Path(raw) if Path(raw).is_absolute() else self.base / raw
        if must_exist:
            if not p.is_file():
                raise ConfigInvalid(field, f"file not found: {raw}")
            self.inputs[field] = io.file_sha1(p)
        return p


def get(section: dict, key: str, where: str, kind=None, default=_MISSING):
    """Fetch ``section[key]``, type-checked; missing keys without a default are a ConfigInvalid."""
    field = f"{where}.{key}" if where else key
    if not isinstance(section, dict):
        raise ConfigInvalid(where or "config", "expected a JSON object")
    if key not in section:
        if default is _MISSING:
            raise ConfigInvalid(field, "missing required field")
        return default
    value = section[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigInvalid(field, f"expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(field, f"expected an integer, got {value!r}")
        return value
    if kind is not None and not isinstance(value, kind):
        raise ConfigInvalid(field, f"expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _build(where: str, factory, *args, **kwargs):
    """Construct a validated object, turning its ValueError into a ConfigInvalid naming the section."""
    try:
        return factory(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(where, str(exc)) from None


def _regulatory(ctx: Context, sec: dict, U: int, M: int, T: int, where: str = "regulatory") -> RegulatoryConfig:
    c = get(sec, "c", where, float, None)
    C = get(sec, "C", where, float, None)
    if "calibration" in sec:
        cal = load_calibration(ctx.path(sec, "calibration", where))
        c = cal.c if c is None else c
        C = cal.C if C is None else C
    return _build(where, RegulatoryConfig,
                  n=get(sec, "n", where, int), U=U, M=M, T=T,
                  eps1=get(sec, "eps1", where, float), eps2=get(sec, "eps2", where, float),
                  delta=get(sec, "delta", where, float), m_bar=get(sec, "m_bar", where, int, None),
                  poissonize=get(sec, "poissonize", where, bool, False),
                  early_exit=get(sec, "early_exit", where, bool, True), c=c, C=C,
                  regime_ratio=get(sec, "regime_ratio", where, float, 0.5))


def _spec(sec: dict, where: str = "scenario") -> ScenarioSpec:
    known = {"n", "U", "gap", "self_loop", "epochs", "adversarial", "placement", "reference", "row", "eps1", "eps2"}
    extra = sorted(set(sec) - known) if isinstance(sec, dict) else []
    if extra:
        raise ConfigInvalid(f"{where}.{extra[0]}", "unknown field")
    get(sec, "n", where, int)
    get(sec, "U", where, int)
    return _build(where, ScenarioSpec, **sec)


def _batch_shape(batches, where: str) -> tuple[int, int]:
    if not batches:
        raise ConfigInvalid(where, "no trajectories found")
    Ms, Ts = {b.M for b in batches}, {b.T for b in batches}
    if len(Ms) != 1 or len(Ts) != 1:
        raise ConfigInvalid(where, f"batches differ in shape: M in {sorted(Ms)}, T in {sorted(Ts)}")
    return Ms.pop(), Ts.pop()


def _world(ctx: Context, inputs: dict, key: str, world: str, n: int):
    batches = io.read_trajectories(ctx.path(inputs, key, "inputs"), n)
    other = sorted(set(batches) - {world})
    if other:
        raise ConfigInvalid(f"inputs.{key}", f"expected only world {world!r} records, found {other}")
    return batches.get(world, [])


def cmd_simulate(ctx: Context):
    cfg = ctx.config
    spec = _spec(get(cfg, "scenario", "", dict))
    M = get(cfg, "M", "", int)
    epoch = get(cfg, "epoch", "", int, 0)
    if not 0 <= epoch < spec.epochs:
        raise ConfigInvalid("epoch", f"must lie in [0, {spec.epochs})")
    scenario = make_scenario(spec, ctx.seed)
    T = get(cfg, "T", "")
    if T == "auto":
        reg = _regulatory(ctx, get(cfg, "regulatory", "", dict), scenario.U, M, 1)
        T = required_horizon(scenario.epochs[epoch], reg, trials=get(cfg, "cover_trials", "", int, 200),
                             seed=derive_seed(ctx.seed, "horizon"))
    elif isinstance(T, bool) or not isinstance(T, int) or T < 1:
        raise ConfigInvalid("T", "expected a positive integer or \"auto\"")
    outputs = get(cfg, "outputs", "", dict)
    filtered, reference = generate_feeds(scenario, M, T, ctx.seed, epoch)
    written = {}
    for key, batches in (("filtered", filtered), ("reference", reference)):
        p = ctx.path(outputs, key, "outputs", must_exist=False)
        io.write_trajectories(p, batches)
        written[key] = io.file_sha1(p)
    truth = scenario.truth(epoch)
    if "truth" in outputs:
        p = ctx.path(outputs, "truth", "outputs", must_exist=False)
        io.save_truth(p, truth)
        written["truth"] = io.file_sha1(p)
    result = {"U": scenario.U, "M": M, "T": T, "epoch": epoch, "distances": list(scenario.distances[epoch]),
              "average_variability": scenario.average_variability(epoch), "regime": truth.regime,
              "adversarial_users": list(scenario.adversarial_users), "outputs": written}
    return result, EXIT_YES


def cmd_test_regulatory(ctx: Context):
    cfg = ctx.config
    inputs = get(cfg, "inputs", "", dict)
    sec = get(cfg, "regulatory", "", dict)
    n = get(sec, "n", "regulatory", int)
    filtered = _world(ctx, inputs, "filtered", "F", n)
    reference = _world(ctx, inputs, "reference", "R", n)
    M, T = _batch_shape(filtered + reference, "inputs")
    config = _regulatory(ctx, sec, len(filtered), M, T)
    verdict = regulatory_tester(filtered, reference, config, derive_seed(ctx.seed, "regulatory"))
    result = {"m_bar": config.successor_budget(), "U": config.U, "M": M, "T": T, **verdict.to_json()}
    return result, EXIT_YES if verdict.decision is Decision.YES else EXIT_NO


def cmd_test_counterfactual(ctx: Context):
    cfg = ctx.config
    inputs = get(cfg, "inputs", "", dict)
    sec = get(cfg, "regulatory", "", dict)
    n = get(sec, "n", "regulatory", int)
    pairing = _build("inputs.pairing", io.load_pairing, ctx.path(inputs, "pairing", "inputs"))
    filtered = _world(ctx, inputs, "filtered", "F", n)
    reference = _world(ctx, inputs, "reference", "R", n)
    M, T = _batch_shape(filtered + reference, "inputs")
    base = _regulatory(ctx, sec, len(pairing), M, T)
    config = _build("", CounterfactualConfig, base, get(cfg, "delta_b1", "", float), get(cfg, "delta_b2", "", float))
    verdict = counterfactual_tester(pairing, {b.user: b for b in filtered}, {b.user: b for b in reference}, config,
                                    derive_seed(ctx.seed, "counterfactual"))
    result = {"pairs": [list(p) for p in pairing.pairs], "m_bar": config.block_config(len(pairing), 1).m_bar,
              "M": M, "T": T, **verdict.to_json()}
    return result, EXIT_YES if verdict.decision is Decision.YES else EXIT_NO


def _iid_config(sec: dict, U: int, m: int, where: str = "iid") -> IIDTestConfig:
    c = get(sec, "c", where, float, None)
    if c is None:
        from .calibration import default_calibration
        c = default_calibration().c
    return _build(where, IIDTestConfig, U=U, n=get(sec, "n", where, int), m=m,
                  eps1=get(sec, "eps1", where, float), eps2=get(sec, "eps2", where, float),
                  delta=get(sec, "delta", where, float), c=c, poissonize=get(sec, "poissonize", where, bool, True))


def cmd_test_iid(ctx: Context):
    cfg = ctx.config
    sec = get(cfg, "iid", "", dict)
    n = get(sec, "n", "iid", int)
    samples_p, samples_q = _build("inputs.samples", io.read_samples,
                                  ctx.path(get(cfg, "inputs", "", dict), "samples", "inputs"), n)
    smallest = min(len(h) for s in samples_p + samples_q for h in s)
    m = get(sec, "m", "iid", int, smallest)
    config = _iid_config(sec, len(samples_p), m)
    v = iid_tester(samples_p, samples_q, config, derive_seed(ctx.seed, "iid"))
    result = {"decision": v.decision.value, "G": v.G, "tau": v.tau, "m": m, "U": config.U,
              "truncated": v.truncated, "per_pair_terms": v.statistic.per_pair_terms.tolist()}
    return result, EXIT_YES if v.decision is Decision.YES else EXIT_NO


def cmd_calibrate(ctx: Context):
    cfg = ctx.config
    grid_cfg = get(cfg, "grid", "", default="default")
    if grid_cfg == "default":
        grid = default_grid()
    elif isinstance(grid_cfg, list) and grid_cfg:
        grid = [_build(f"grid[{i}]", GridPoint.from_json, p) for i, p in enumerate(grid_cfg)]
    else:
        raise ConfigInvalid("grid", "expected \"default\" or a non-empty list of grid points")
    cal = calibrate_constant(grid, get(cfg, "trials", "", int, 2000), derive_seed(ctx.seed, "calibrate"),
                             margin=get(cfg, "margin", "", float, 1.0), C_start=get(cfg, "C_start", "", float, 1.0),
                             rel_tol=get(cfg, "rel_tol", "", float, 0.02))
    out = get(cfg, "outputs", "", dict, {})
    result = {**cal.to_json(), "per_point": cal.per_point}
    if "calibration" in out:
        p = ctx.path(out, "calibration", "outputs", must_exist=False)
        io.write_json(p, cal.to_json())
        result["written"] = io.file_sha1(p)
    return result, EXIT_YES


def cmd_cover_time(ctx: Context):
    cfg = ctx.config
    if "chain" in cfg:
        chain = _build("chain", io.chain_from_json, get(cfg, "chain", "", dict))
    else:
        chain = io.load_chain(ctx.path(get(cfg, "inputs", "", dict), "chain", "inputs"))
    est = estimate_cover_time(chain, get(cfg, "m", "", int, 1), get(cfg, "k", "", int, 1),
                              get(cfg, "trials", "", int, 1000), derive_seed(ctx.seed, "cover-time"),
                              budget=get(cfg, "budget", "", int, 10**7), workers=get(cfg, "workers", "", int, 1))
    result = {"m": est.m, "k": est.k, "trials": est.trials, "t_hat": est.t_hat, "t_hat_se": est.t_hat_se,
              "worst_profile": est.worst_profile,
              "profiles": {name: {"mean": mu, "se": se} for name, (mu, se) in est.profiles.items()}}
    return result, EXIT_YES


def _sweep_point(ctx: Context, point: dict, i: int, default_tester: str, trials: int):
    where = f"grid[{i}]"
    tester = get(point, "tester", where, str, default_tester)
    if "truth" in point:
        truth = _build(f"{where}.truth", io.load_truth, ctx.path(point, "truth", where))
        pairs = None
    else:
        spec = _spec(get(point, "scenario", where, dict), f"{where}.scenario")
        scenario = make_scenario(spec, derive_seed(ctx.seed, "sweep", i, "scenario"))
        truth, pairs = scenario.truth(), scenario.users
    seed = derive_seed(ctx.seed, "sweep", i)
    if tester == "iid":
        sec = get(point, "iid", where, dict)
        cfg = _iid_config(sec, truth.U, get(sec, "m", f"{where}.iid", int), f"{where}.iid")
        run = iid_trial(cfg, get(sec, "row", f"{where}.iid", int, 0))
    elif tester == "regulatory":
        sec = get(point, "regulatory", where, dict)
        M = get(sec, "M", f"{where}.regulatory", int)
        T = get(sec, "T", f"{where}.regulatory")
        reg = _regulatory(ctx, sec, truth.U, M, 1, f"{where}.regulatory")
        if T == "auto":
            chains = pairs or [(validate_chain(p), validate_chain(q)) for p, q in truth.users]
            T = required_horizon(chains, reg, seed=derive_seed(seed, "horizon"))
        elif isinstance(T, bool) or not isinstance(T, int) or T < 1:
            raise ConfigInvalid(f"{where}.regulatory.T", "expected a positive integer or \"auto\"")
        run = regulatory_trial(replace(reg, T=T))
    else:
        raise ConfigInvalid(f"{where}.tester", f"unknown tester {tester!r}")
    rate, se = verdict_probability(truth, run, trials, seed)
    return {"scenario_id": get(point, "id", where, str, f"point-{i}"), "tester": tester, "trials": trials,
            "yes_rate": rate, "se": se, "seed": seed, "regime": truth.regime}


def cmd_sweep(ctx: Context):
    cfg = ctx.config
    grid = get(cfg, "grid", "", list)
    if not grid:
        raise ConfigInvalid("grid", "sweep grid is empty")
    trials = get(cfg, "trials", "", int, 200)
    tester = get(cfg, "tester", "", str, "regulatory")
    workers = get(cfg, "workers", "", int, 1)
    csv_path = ctx.path(cfg, "csv", "", must_exist=False)
    jobs = [lambda i=i, p=p: _sweep_point(ctx, p, i, tester, trials) for i, p in enumerate(grid)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda job: job(), jobs))
    else:
        rows = [job() for job in jobs]
    io.append_results(csv_path, rows)
    return {"rows": rows}, EXIT_YES


HANDLERS = {
    "simulate": cmd_simulate,
    "test-iid": cmd_test_iid,
    "test-regulatory": cmd_test_regulatory,
    "test-counterfactual": cmd_test_counterfactual,
    "calibrate": cmd_calibrate,
    "cover-time": cmd_cover_time,
    "sweep": cmd_sweep,
}


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def run(command: str, config_path, seed_override: int | None = None) -> tuple[dict, int]:
    """Execute one command and return ``(report, exit_code)``; raises on invalid configs."""
    config_path = Path(config_path)
    try:
        config = io.read_json(config_path)
    except FileNotFoundError:
        raise ConfigInvalid("config", f"file not found: {config_path}") from None
    except ValueError as exc:
        raise ConfigInvalid("config", f"not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigInvalid("config", "expected a JSON object")
    declared = config.get("command", command)
    if declared != command:
        raise ConfigInvalid("command", f"config is for {declared!r}, invoked as {command!r}")
    if seed_override is not None:
        config = {**config, "seed": seed_override}
    seed = get(config, "seed", "", int)
    if not 0 <= seed < 2**64:
        raise ConfigInvalid("seed", "must be an unsigned 64-bit integer")
    ctx = Context(config=config, seed=seed, base=config_path.resolve().parent, inputs={})
    result, code = HANDLERS[command](ctx)
    report = {"command": command, "config": {**config, "command": command}, "inputs": dict(sorted(ctx.inputs.items())),
              "result": result}
    return report, code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="feedaudit", description="Audit algorithmic filtering of Markov feeds.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed-override", type=_u64, help="replace the config's root seed")
    parser.add_argument("--out", help="report path (stdout if omitted)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_YES
    started = time.perf_counter()
    try:
        report, code = run(args.command, args.config, args.seed_override)
    except ConfigInvalid as exc:
        print(f"feedaudit: invalid config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (FeedAuditError, ValueError, OSError) as exc:
        print(f"feedaudit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    elapsed = time.perf_counter() - started
    text = io.dumps(report)
    if args.out:
        Path(args.out).write_text(text)
        io.write_json(f"{args.out}.timing.json", {"wall_clock_s": elapsed})
    else:
        sys.stdout.write(text)
        print(f"wall-clock: {elapsed:.3f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
