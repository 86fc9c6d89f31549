"""Command-line entry point: ``seqpas <subcommand> [--config PATH] [--seed U64] [--out PATH] [--jobs N]``.

Exit codes: 0 success, 2 configuration error, 3 invariant failure.
"""

import argparse
import logging
import os
import sys
import time

from . import experiments as ex
from .config import ExperimentConfig, load_config
from .exceptions import ConfigurationError, InvariantError
from .source_models import save_model
from .training import gradient_check

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


def _config(args):
    return load_config(args.config) if args.config else ExperimentConfig()


def _seed(args, cfg):
    return cfg.seed if args.seed is None else args.seed


def _out(args, default):
    return args.out or default


def cmd_rateloss(args):
    cfg = _config(args)
    rows = ex.run_rateloss(cfg, _seed(args, cfg))
    ex.write_csv(_out(args, "rateloss.csv"), ex.RATELOSS_HEADER, rows)
    for row in rows:
        print("n={:<6d} L_bar={:9.2f} R_loss_adm={:.5f} R_loss_theory={:.5f}".format(*row))
    return EXIT_OK


def cmd_airsweep(args):
    cfg = _config(args)
    rows, errors = ex.run_airsweep(cfg, _seed(args, cfg), jobs=args.jobs)
    header, table = ex.air_rows_for_csv(rows)
    ex.write_csv(_out(args, "airsweep.csv"), header, table)
    for row in rows:
        print(f"{row['scheme']:<11s} {row['launch_power_dbm']:6.1f} dBm  net AIR {row['net_air']:.4f} +- {row['ci']:.4f}")
    for scheme, message in errors:
        print(f"scheme {scheme} failed: {message}", file=sys.stderr)
    if any("ConfigurationError" in m for _, m in errors):
        return EXIT_CONFIG
    return EXIT_INVARIANT if errors else EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    changes = {"objective": args.objective} if args.objective else {}
    cfg = cfg.replace_section("train", **changes) if changes else cfg
    model, trace = ex.run_train(cfg, seed=args.seed)
    out = _out(args, "trace.csv")
    trace.to_csv(out)
    model_path = os.path.splitext(out)[0] + ".model"
    save_model(model, model_path)
    first, last = trace.records[0], trace.records[-1]
    print(f"objective {cfg.train.objective}: R_loss {first['R_loss']:.5f} -> {last['R_loss']:.5f}, model {model_path}")
    return EXIT_OK


def cmd_gradcheck(args):
    result = gradient_check()
    rows = [
        ("L_plus_plus", result.max_rel_error, result.tolerance),
        ("rate_loss", result.rate_loss_error, result.term_tolerance),
        ("kl_mb", result.kl_error, result.term_tolerance),
    ]
    ex.write_csv(_out(args, "gradcheck.csv"), ("term", "max_rel_error", "tolerance"), [(t, f"{e:.3e}", f"{tol:.0e}") for t, e, tol in rows])
    print(f"max relative error {result.max_rel_error:.3e} (rate loss {result.rate_loss_error:.3e}, KL {result.kl_error:.3e})")
    if not result.passed:
        print(f"gradient check failed; worst coordinate {result.worst_coordinate}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest

    results = run_selftest(seed=0 if args.seed is None else args.seed)
    ex.write_csv(_out(args, "selftest.csv"), ("module", "invariant", "passed"), [(m, i, int(ok)) for m, i, ok in results])
    failed = [(m, i) for m, i, ok in results if not ok]
    for module, invariant, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {module}: {invariant}")
    return EXIT_INVARIANT if failed else EXIT_OK


def cmd_ess_info(args):
    cfg = _config(args)
    rows = ex.run_ess_info(cfg)
    ex.write_csv(_out(args, "ess_info.csv"), ex.ESS_HEADER, rows)
    b, e_max, k, rate, loss = rows[0][:5]
    print(f"N={b} E_max={e_max} k={k} rate={rate:.4f} bits/1D rate loss={loss:.4f} bits/1D")
    return EXIT_OK


def cmd_adm_roundtrip(args):
    cfg = _config(args)
    rows = ex.run_adm_roundtrip(cfg, _seed(args, cfg))
    ex.write_csv(_out(args, "adm_roundtrip.csv"), ex.ROUNDTRIP_HEADER, rows)
    for n, trials, failures, mean_len in rows:
        print(f"n={n}: {failures} failures in {trials} round trips (mean length {mean_len:.1f})")
    return EXIT_INVARIANT if any(r[2] for r in rows) else EXIT_OK


COMMANDS = {
    "rateloss": (cmd_rateloss, "empirical ADM rate loss versus payload length"),
    "airsweep": (cmd_airsweep, "net AIR versus launch power for each scheme"),
    "train": (cmd_train, "train a table source model on the perturbation surrogate"),
    "gradcheck": (cmd_gradcheck, "analytic versus finite-difference gradients"),
    "selftest": (cmd_selftest, "fast invariant checks"),
    "ess-info": (cmd_ess_info, "ESS energy bound, rate and amplitude marginal"),
    "adm-roundtrip": (cmd_adm_roundtrip, "ADM encode/decode round trips"),
}


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="seqpas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="experiment configuration file")
        p.add_argument("--seed", type=_u64, metavar="U64", help="root seed (overrides the configuration)")
        p.add_argument("--out", metavar="PATH", help="output CSV")
        p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--objective", choices=("L", "Lpp"))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = COMMANDS[args.command][0]
    start = time.perf_counter()
    try:
        code = handler(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    logging.getLogger(__name__).info("%s finished in %.1f s", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
