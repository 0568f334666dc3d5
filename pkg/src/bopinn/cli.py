"""``bopinn`` command line: run experiments, generate snapshots, export fields.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, build_config, known_keys, parse_value, read_config_file

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# short flags and the dotted key each one sets
_SHORTCUTS = {
    "runs": "experiment.runs",
    "scale": "experiment.scale",
    "forward": "experiment.forward",
    "seed": "experiment.seed_base",
    "out": "experiment.out",
}


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI-style config file with dotted section keys")
    p.add_argument("--case", type=float, action="append", dest="case",
                   help="c_true to run (repeatable); replaces experiment.cases")
    p.add_argument("--runs", type=int)
    p.add_argument("--scale", choices=("desk", "paper"))
    p.add_argument("--forward", choices=("pinn", "analytic"))
    p.add_argument("--seed", type=int, help="seed base")
    p.add_argument("--out", help="output directory")
    group = p.add_argument_group("config keys", "any config key, e.g. --bo.kappa 2.45")
    for key in known_keys():
        group.add_argument(f"--{key}", dest=key, metavar="VALUE", help=argparse.SUPPRESS)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bopinn", description="Wave-speed inversion with a PINN forward model and GP-UCB.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run BO experiments and write summaries")
    _add_config_args(run)

    snap = sub.add_parser("snapshot", help="write a noisy synthetic snapshot CSV")
    _add_config_args(snap)
    snap.add_argument("--c", type=float, required=True, help="true scaled wave speed")
    snap.add_argument("--path", help="output CSV (default: <out>/snapshot_c<c>.csv)")

    fld = sub.add_parser("field", help="train one PINN and export it on a grid")
    _add_config_args(fld)
    fld.add_argument("--c", type=float, required=True, help="scaled wave speed")
    fld.add_argument("--grid", type=int, nargs=2, default=(101, 101), metavar=("NX", "NT"))
    return p


def resolve_config(args: argparse.Namespace):
    """Config file, then dotted-key flags, then shortcut flags."""
    flat = read_config_file(args.config) if args.config else {}
    for key in known_keys():
        value = getattr(args, key, None)
        if value is not None:
            flat[key] = parse_value(value)
    for name, key in _SHORTCUTS.items():
        value = getattr(args, name, None)
        if value is not None:
            flat[key] = value
    if args.case:
        flat["experiment.cases"] = tuple(args.case)
    return build_config(flat)


def _cmd_run(cfg):
    from .harness import run_all

    _, table = run_all(cfg)
    print(table)
    print(f"wrote {cfg.out_dir / 'summary.csv'}")


def _cmd_snapshot(cfg, args):
    from .harness import snapshot_seed
    from .wave import make_snapshot, save_snapshot

    s = cfg.snapshot
    snap = make_snapshot(args.c, s.t_obs, s.n_sensors, s.snr_db, snapshot_seed(cfg.seed_base, args.c), cfg.domain)
    path = args.path or cfg.out_dir / f"snapshot_c{args.c:.4f}.csv"
    print(f"wrote {save_snapshot(snap, path)}")


def _cmd_field(cfg, args):
    from .harness import export_field
    from .pinn import relative_l2_error, sample_collocation, train_pinn

    colloc = sample_collocation(cfg.domain, cfg.pinn.n_f, cfg.pinn.n_0, cfg.pinn.n_b, seed=cfg.seed_base)
    trained = train_pinn(args.c, colloc, tuple(cfg.pinn.arch), cfg.lbfgs, cfg.seed_base, cfg.pinn.dropout_rate)
    path = export_field(trained, tuple(args.grid), cfg.out_dir / f"field_c{args.c:.4f}")
    print(f"final loss {trained.final_loss.j_total:.3e}, relative L2 error "
          f"{relative_l2_error(trained):.3%}; wrote {path}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            _cmd_run(cfg)
        elif args.command == "snapshot":
            _cmd_snapshot(cfg, args)
        else:
            _cmd_field(cfg, args)
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
