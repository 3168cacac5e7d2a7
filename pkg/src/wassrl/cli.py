"""``wassrl`` command line: solve / train / sweep / verify.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
failure, 3 value iteration did not converge.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, Manifest, RunConfig, load_config, make_run_dir, output_root, with_overrides, write_snapshot
from .evaluation import DEFAULT_GRIDS, SWEEP_PARAMETERS, emit_report, run_sweep
from .mdp_io import MDPFileError, format_solution, load_mdp
from .neural import save_checkpoint
from .robust_mdp import solve_value_iteration
from .training import TrainingDiverged, train, write_records_csv
from .verify import format_report, run_checks

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_NOT_CONVERGED = 0, 1, 2, 3

log = logging.getLogger("wassrl")


def _grid(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated numbers, got {text!r}") from None


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wassrl", description="Wasserstein-robust MDP solver and actor-critic trainer")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output root (default: $WASSRL_OUTPUT_ROOT or ./runs)")

    p = sub.add_parser("solve", help="robust value iteration on an MDP text file")
    p.add_argument("mdp_file", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--delta", type=float)
    p.add_argument("--order-p", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--out", type=Path, help="solution file (default: <mdp_file>.solution)")

    p = sub.add_parser("train", help="train WRAAC or the A2C baseline on Cart-Pole")
    common(p)
    p.add_argument("--delta", type=float)
    p.add_argument("--order-p", type=float)
    p.add_argument("--robust", type=_on_off, metavar="{on,off}")
    p.add_argument("--steps", type=int, help="total training steps")

    p = sub.add_parser("sweep", help="evaluate checkpoints over a Cart-Pole parameter grid")
    common(p)
    p.add_argument("--param", choices=SWEEP_PARAMETERS)
    p.add_argument("--grid", type=_grid, metavar="v1,v2,...")
    p.add_argument("--episodes", type=int)
    p.add_argument("--checkpoint", action="append", default=[], metavar="LABEL=PATH",
                   help="actor checkpoint to evaluate (repeatable)")

    p = sub.add_parser("verify", help="run the fast self-check suite")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def _config(args, overrides: dict) -> RunConfig:
    base = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return with_overrides(base, overrides)


def cmd_solve(args) -> int:
    cfg = _config(args, {"solve.delta": args.delta, "solve.order_p": args.order_p,
                         "solve.tol": args.tol, "solve.max_iter": args.max_iter})
    mdp = load_mdp(args.mdp_file)
    ball = cfg.solve.ball()
    solution = solve_value_iteration(mdp, ball, tol=cfg.solve.tol, max_iter=cfg.solve.max_iter)
    out = args.out or args.mdp_file.with_name(args.mdp_file.name + ".solution")
    out.write_text(format_solution(solution, ball))
    print(f"wrote {out} (iterations={solution.iterations}, residual={solution.residual:.3g})")
    return EXIT_OK if solution.converged else EXIT_NOT_CONVERGED


def cmd_train(args) -> int:
    cfg = _config(args, {"seed": args.seed, "train.delta": args.delta, "train.order_p": args.order_p,
                         "train.robust": args.robust, "train.total_steps": args.steps})
    run_dir = make_run_dir(output_root(args.out), cfg)
    manifest = Manifest("train", cfg)
    manifest.add_output(write_snapshot(cfg, run_dir), run_dir)
    ckpt_dir = run_dir / "checkpoints"

    def on_checkpoint(step, actor, critic):
        ckpt_dir.mkdir(exist_ok=True)
        for name, net in (("actor", actor), ("critic", critic)):
            manifest.add_output(save_checkpoint(net, ckpt_dir / f"{name}_{step:08d}.ckpt"), run_dir)

    def on_record(rec):
        log.info("step %d return %.1f e %.4g lambda %.4g", rec.step, rec.episode_return, rec.mean_e, rec.lam)

    try:
        actor, critic, records = train(cfg.train, cfg.env, on_record=on_record, on_checkpoint=on_checkpoint,
                                       checkpoint_every=cfg.checkpoint_every)
    except TrainingDiverged as exc:
        manifest.write(run_dir, status="diverged", failure=exc.record)
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest.add_output(write_records_csv(records, run_dir / "train.csv"), run_dir)
    for name, net in (("actor", actor), ("critic", critic)):
        manifest.add_output(save_checkpoint(net, run_dir / f"{name}.ckpt"), run_dir)
    manifest.write(run_dir, status="ok", algorithm="wraac" if cfg.train.robust else "a2c")
    print(run_dir)
    return EXIT_OK


def _parse_checkpoints(items) -> dict:
    out = {}
    for item in items:
        label, sep, path = item.partition("=")
        if not sep or not label or not path:
            raise ConfigError(f"--checkpoint expects LABEL=PATH, got {item!r}")
        out[label] = path
    return out


def cmd_sweep(args) -> int:
    grid = args.grid
    if args.param and grid is None:
        grid = list(DEFAULT_GRIDS[args.param])  # a new axis never inherits the old axis' grid
    cfg = _config(args, {"seed": args.seed, "sweep.parameter": args.param, "sweep.episodes": args.episodes,
                         "sweep.grid": grid})
    checkpoints = {**cfg.sweep.checkpoints, **_parse_checkpoints(args.checkpoint)}
    if not checkpoints:
        raise ConfigError("no checkpoints given (use --checkpoint LABEL=PATH or sweep.checkpoints)")
    cfg = with_overrides(cfg, {"sweep.checkpoints": checkpoints})
    for label, path in checkpoints.items():
        if not Path(path).is_file():
            raise ConfigError(f"checkpoint {label!r} not found: {path}")
    run_dir = make_run_dir(output_root(args.out), cfg)
    manifest = Manifest("sweep", cfg)
    manifest.add_output(write_snapshot(cfg, run_dir), run_dir)
    report = run_sweep(cfg.sweep.spec(checkpoints, cfg.env))
    for path in emit_report(report, run_dir):
        manifest.add_output(path, run_dir)
    manifest.write(run_dir, status="ok")
    print(run_dir)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_checks(corrupt_gradient=args.corrupt_gradient)
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {"solve": cmd_solve, "train": cmd_train, "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MDPFileError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
