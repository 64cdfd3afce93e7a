"""Command line entry point: ``licra {train,oracle,evaluate,verify,sweep}``.

Exit status is 0 on success, 1 on a runtime or numerical failure and 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import runner, textfmt
from .budget import ProductSizeError
from .config import ConfigError, ExperimentConfig, build_tabular, load, resolve
from .exact import NonConvergenceError, evaluate_policy, policy_from_blocks
from .linear import DivergenceError, RankDeficientError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
RUNTIME_ERRORS = (runner.RunError, DivergenceError, RankDeficientError, NonConvergenceError, ProductSizeError,
                  np.linalg.LinAlgError, ArithmeticError)


def _err(msg: str) -> None:
    print(f"licra: {msg}", file=sys.stderr)


def _load(args) -> ExperimentConfig:
    cfg = load(args.config)
    if args.seed is not None:
        cfg = cfg.with_value("experiment", "seeds", [args.seed])
    return cfg


def _train(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else cfg.out_dir
    results = runner.cmd_train(cfg, out, args.jobs)
    for r in results:
        s = r["summary"]
        print(f"seed {r['seed']}: mean return {s['mean_return']:.6g}, interventions {s['mean_interventions']:.4g}")
    print(f"wrote {out}")
    return EXIT_OK


def _oracle(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else cfg.out_dir
    res = runner.cmd_oracle(cfg, out)
    v = res["values"]
    print(f"converged in {res['iterations']} iterations; {int(res['policy'].intervene.sum())} intervention states")
    print("v* = " + ", ".join(f"{x:.8g}" for x in v[:10]) + (" ..." if v.size > 10 else ""))
    if "classical_gap" in res:
        print(f"classical value iteration agrees to {res['classical_gap']:.3e}")
    print(f"wrote {out}")
    return EXIT_OK


def _evaluate(args) -> int:
    cfg = _load(args)
    built = build_tabular(cfg)
    try:
        pol = policy_from_blocks(textfmt.read(args.policy))
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"cannot read policy file {args.policy}: {exc}") from exc
    if pol.n_states != built.mdp.n_states:
        raise ConfigError(f"policy has {pol.n_states} states, model has {built.mdp.n_states}")
    v = evaluate_policy(built.mdp, built.cost, pol)
    out = Path(args.out) if args.out else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    runner.write_csv(out / "policy_values.csv", ("state", "value"), ((s, float(x)) for s, x in enumerate(v)))
    print(f"expected return from the initial distribution: {float(built.mdp.initial @ v):.10g}")
    return EXIT_OK


def _verify(args) -> int:
    from . import verify

    if args.suite != "all" and args.suite not in verify.SUITES:
        raise ConfigError(f"unknown suite {args.suite!r} (expected one of {sorted(verify.SUITES)} or 'all')")
    results = verify.run(args.suite)
    for res in results:
        for c in res.checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {res.name}.{c.name}: {c.value} (limit {c.limit})")
    report = {"schema_version": runner.SCHEMA_VERSION, "passed": all(r.passed for r in results),
              "suites": [r.to_dict() for r in results]}
    out = Path(args.out) if args.out else Path("runs") / "verify"
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"verify_{args.suite}.json"
    path.write_text(json.dumps(report, indent=2, default=float) + "\n", encoding="utf-8")
    print(f"wrote {path}")
    return EXIT_OK if report["passed"] else EXIT_RUNTIME


def sweep_configs(path: str | Path, axis: str, seed: int | None = None) -> list[tuple[object, ExperimentConfig]]:
    """One resolved config per value listed at ``axis`` (``block.key``) in the raw file."""
    text = Path(path).read_text(encoding="utf-8")
    raw = textfmt.loads(text)
    block, _, key = axis.partition(".")
    if not key or block not in raw or key not in raw[block]:
        raise ConfigError(f"sweep axis {axis!r} not found in {path}", textfmt.locate(text, block) if block in raw
                          else None, block, key or None)
    values = raw[block][key]
    if not isinstance(values, list) or not values:
        raise ConfigError(f"sweep axis {axis!r} needs a nonempty list of values",
                          textfmt.locate(text, block, key), block, key)
    out = []
    for value in values:
        blocks = copy.deepcopy(raw)
        blocks[block][key] = value
        if seed is not None:
            blocks.setdefault("experiment", {})["seeds"] = [seed]
        out.append((value, resolve(blocks, text)))
    return out


def _sweep(args) -> int:
    cfgs = sweep_configs(args.config, args.axis, args.seed)
    out = Path(args.out) if args.out else cfgs[0][1].out_dir
    rows = runner.cmd_sweep(cfgs, args.axis, out, args.jobs)
    for row in rows:
        print(" ".join(runner._cell(x) for x in row))
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="licra", description="Impulse-control reinforcement learning experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, jobs=False):
        if config:
            sp.add_argument("config", help="experiment config file")
        sp.add_argument("--seed", type=int, default=None, help="run this single seed instead of the config's list")
        sp.add_argument("--out", default=None, help="output directory")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        return sp

    common(sub.add_parser("train", help="train learners and write learning curves"), jobs=True).set_defaults(fn=_train)
    common(sub.add_parser("oracle", help="solve the tabular model exactly")).set_defaults(fn=_oracle)
    ev = common(sub.add_parser("evaluate", help="value of a saved policy under the tabular model"))
    ev.add_argument("--policy", required=True, help="policy file written by train or oracle")
    ev.set_defaults(fn=_evaluate)
    ver = common(sub.add_parser("verify", help="run a property suite"), config=False)
    ver.add_argument("suite", help="suite name or 'all'")
    ver.set_defaults(fn=_verify)
    sw = common(sub.add_parser("sweep", help="train across the values of one config field"), jobs=True)
    sw.add_argument("--axis", required=True, help="block.key holding a list of values")
    sw.set_defaults(fn=_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "jobs", 1) < 1:
        _err("--jobs must be >= 1")
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except (ConfigError, textfmt.FormatError) as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except RUNTIME_ERRORS as exc:
        diag = getattr(exc, "diagnostics", None)
        _err(f"{type(exc).__name__}: {exc}" + (f" (diagnostics: {diag})" if diag else ""))
        return EXIT_RUNTIME
    except ValueError as exc:
        # parameter validation inside environment or cost constructors
        _err(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
