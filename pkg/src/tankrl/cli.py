"""Command-line entry point: ``tankrl {train,eval,trace,compare}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
The environment variable TANKRL_OUTPUT_ROOT overrides ``[run] output_dir``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import traceback
from pathlib import Path

from . import evalkit
from .config import ConfigError, RunConfig, dump_config, load_config
from .policy import CheckpointError, InputNormalizer, load_checkpoint
from .tank import write_trace_csv
from .trainer import MODES, init_params, make_prior, stream, train

log = logging.getLogger("tankrl")

OUTPUT_ROOT_ENV = "TANKRL_OUTPUT_ROOT"
DEFAULT_SETPOINTS = (2.0, 6.0, 9.0, 4.0, 1.0)


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value
    for attr, key in (("seed", "train.seed"), ("mode", "train.mode"), ("steps", "train.total_env_steps")):
        if getattr(args, attr, None) is not None:
            out[key] = str(getattr(args, attr))
    return out


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _output_root(cfg: RunConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or cfg.run.output_dir)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def run_training(cfg: RunConfig, run_dir: Path) -> dict:
    """Train one (mode, seed) cell into `run_dir` and evaluate the final policy."""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.resolved").write_text(dump_config(cfg))
    result = train(cfg.env, cfg.prior, cfg.ppo, cfg.train, out_dir=run_dir, eval_baseline=True)
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(exist_ok=True)
    ctl = _policy_controller(cfg, result.params, cfg.train.mode)
    report = evalkit.evaluate(ctl, cfg.env, cfg.train.eval_setpoints, stream(cfg.train.seed, "eval"),
                              seed=cfg.train.seed)
    report.to_csv(eval_dir / "final.csv")
    base = evalkit.evaluate(cfg.prior, cfg.env, cfg.train.eval_setpoints, stream(cfg.train.seed, "eval"),
                            seed=cfg.train.seed)
    base.to_csv(eval_dir / "prior.csv")
    return {"result": result, "report": report, "baseline": base}


def _policy_controller(cfg: RunConfig, params, mode: str):
    p = cfg.env.params
    return evalkit.PolicyController(params, make_prior(mode, cfg.prior),
                                    InputNormalizer(cfg.env.goal_min, cfg.env.goal_max),
                                    p.input_min, p.input_max, mode)


def _controller(args, cfg: RunConfig):
    if args.controller == "prior":
        return cfg.prior
    if args.checkpoint is None:
        raise ConfigError("--controller policy needs --checkpoint")
    expect = init_params(cfg.train)
    ckpt = load_checkpoint(args.checkpoint, expect=expect)
    mode = args.mode or ckpt.mode or cfg.train.mode
    return _policy_controller(cfg, ckpt.params, mode)


def cmd_train(args) -> int:
    cfg = _config(args)
    t = cfg.train
    run_dir = Path(args.out) if args.out else _output_root(cfg) / f"{cfg.run.label}-{t.mode}-seed{t.seed}"
    out = run_training(cfg, run_dir)
    print(f"{run_dir}: final mean return {out['report'].mean:.6g} "
          f"(prior {out['baseline'].mean:.6g}) after {out['result'].env_steps} env steps")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    seed = cfg.train.seed
    ctl = _controller(args, cfg)
    report = evalkit.evaluate(ctl, cfg.env, args.n, stream(seed, "eval"), seed=seed)
    report.to_csv(args.out or sys.stdout)
    print(f"controller={report.controller} n={args.n} seed={seed} "
          f"mean_return={report.mean!r} std_return={report.std!r}", file=sys.stderr)
    return 0


def cmd_trace(args) -> int:
    cfg = _config(args)
    ctl = _controller(args, cfg)
    setpoints = _float_list(args.setpoints)
    if not setpoints:
        raise ConfigError("--setpoints must name at least one level")
    rows = evalkit.tracking_trace(ctl, setpoints, cfg.env, stream(cfg.train.seed, "eval"))
    write_trace_csv(args.out or sys.stdout, rows)
    errs = evalkit.segment_final_errors(rows, cfg.env.steps_per_goal)
    print("final |y - y_ref| per segment: " + ", ".join(f"{e:.4f}" for e in errs), file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    base_cfg = _config(args)
    seeds = _int_list(args.seeds)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if not seeds:
        raise ConfigError("--seeds must not be empty")
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; choose from {MODES}")
    root = Path(args.out) if args.out else _output_root(base_cfg) / f"{base_cfg.run.label}-compare"
    root.mkdir(parents=True, exist_ok=True)
    failures = []
    curves: dict[str, list] = {m: [] for m in modes}
    finals: dict[str, list] = {m: [] for m in modes}
    baselines: dict[int, float] = {}
    for mode in modes:
        for seed in seeds:
            overrides = {**_overrides(args), "train.mode": mode, "train.seed": str(seed)}
            try:
                cfg = load_config(args.config, overrides)
                out = run_training(cfg, root / f"{mode}-seed{seed}")
            except Exception as exc:  # noqa: BLE001 - keep the remaining cells running
                failures.append(f"{mode} seed {seed}: {exc!r}")
                log.error("cell %s/%s failed:\n%s", mode, seed, traceback.format_exc())
                continue
            curves[mode].append([(s, m) for s, m, *_ in out["result"].curve])
            finals[mode].append(out["report"])
            baselines[seed] = out["baseline"].mean

    baseline = sum(baselines.values()) / len(baselines) if baselines else float("nan")
    with open(root / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("env_steps", "mode", "mean_return", "std_return", "n_seeds", "prior_mean_return"))
        for mode in modes:
            if curves[mode]:
                for steps, mean, std, n in evalkit.aggregate_curves(curves[mode]):
                    w.writerow([steps, mode, repr(mean), repr(std), n, repr(baseline)])
    lines = [f"{'mode':<14}{'seeds':>6}{'final mean':>14}{'std':>10}{'prior':>12}"]
    for mode in modes:
        if finals[mode]:
            agg = evalkit.aggregate(finals[mode])
            evalkit.write_aggregate_csv(root / f"aggregate_{mode}.csv", agg)
            lines.append(f"{mode:<14}{len(finals[mode]):>6}{agg.mean:>14.3f}{agg.std:>10.3f}{baseline:>12.3f}")
    (root / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if failures:
        (root / "failures.txt").write_text("\n".join(failures) + "\n")
        print(f"{len(failures)} cell(s) failed; see {root / 'failures.txt'}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tankrl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI run configuration (defaults used when omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a configuration value (repeatable)")

    p = sub.add_parser("train", help="train one policy")
    common(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--steps", type=int, help="total env-step budget")
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "Monte Carlo evaluation over random set points"),
                                 ("trace", cmd_trace, "continuous tracking trace over a set-point sequence")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--controller", choices=("prior", "policy"), default="policy")
        p.add_argument("--checkpoint")
        p.add_argument("--mode", choices=MODES, help="override the mode stored in the checkpoint")
        p.add_argument("--out", help="output CSV (stdout when omitted)")
        if name == "eval":
            p.add_argument("--n", type=int, default=100, help="number of random set points")
        else:
            p.add_argument("--setpoints", default=",".join(f"{v:g}" for v in DEFAULT_SETPOINTS))
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="train and evaluate every (mode, seed) cell")
    common(p)
    p.add_argument("--seeds", default="1,2,3,4,5,6,7,8,9,10")
    p.add_argument("--modes", default=",".join(MODES))
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"tankrl: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"tankrl: runtime failure: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
