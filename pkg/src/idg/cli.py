"""Command line: ``idg gen-data | train | eval | regret | reproduce``.

Exit codes: 0 success, 2 configuration error (including bad flags),
3 data error, 4 numeric failure.
"""

import argparse
import csv
import os
import sys

from .errors import ConfigError, IDGError, NumericError

REPRODUCE_TARGETS = ("table1-synthetic", "table1-bike", "fig2")


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="override the first configured seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="cap on numerical library threads")


def build_parser():
    parser = argparse.ArgumentParser(prog="idg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate or load the configured domains and export them as CSV")
    _common(p)
    p = sub.add_parser("train", help="train one model and write its checkpoint and trace")
    _common(p)
    p = sub.add_parser("eval", help="risk curve of a checkpoint on the test domains")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--label", default="model")
    p = sub.add_parser("regret", help="max-regret of every curve in a curves.csv against the ideal")
    p.add_argument("--curves", required=True)
    p.add_argument("--ideal-label", default="ideal")
    p.add_argument("--out", help="output directory (default: next to the curves file)")
    p.add_argument("--threads", type=int)
    p = sub.add_parser("reproduce", help="regret tables and curve figures")
    p.add_argument("target", choices=REPRODUCE_TARGETS)
    _common(p, config_required=False)
    p.add_argument("--scale", type=float, default=1.0,
                   help="multiplies domain counts (synthetic) or training rows (bike)")
    return parser


def _config(args):
    from .experiments import load_config

    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seeds=[args.seed])
    return config


def _out_dir(args, default):
    path = args.out or default
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc.strerror}") from None
    return path


def cmd_gen_data(args):
    from .data import export_csv
    from .experiments import load_domains, manifest, write_json

    config = _config(args)
    seed = config.seeds[0]
    out = _out_dir(args, os.path.join(config.output_dir, f"data-{config.experiment}-seed{seed}"))
    train, test = load_domains(config, seed)
    export_csv(train, os.path.join(out, "train.csv"))
    export_csv(test, os.path.join(out, "test.csv"))
    write_json(os.path.join(out, "manifest.json"),
               manifest("gen-data", config, seed, ["train.csv", "test.csv"]))
    print(f"wrote {len(train)} train and {len(test)} test domains to {out}")


def cmd_train(args):
    from .experiments import load_domains, manifest, train_method, write_json
    from .models import save_checkpoint
    from .plotting import plot_trace

    config = _config(args)
    seed = config.seeds[0]
    out = _out_dir(args, os.path.join(config.output_dir, f"train-{config.method}-seed{seed}"))
    train, _ = load_domains(config, seed)
    outputs = ["checkpoint.json", "trace.csv", "trace.png"]
    try:
        model, trace = train_method(config, train, seed)
    except NumericError as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            trace.write_csv(os.path.join(out, "trace.csv"))
        raise
    save_checkpoint(model, os.path.join(out, "checkpoint.json"))
    trace.write_csv(os.path.join(out, "trace.csv"))
    plot_trace(trace, os.path.join(out, "trace.png"))
    write_json(os.path.join(out, "manifest.json"), manifest("train", config, seed, outputs))
    last = trace.rows[-1]
    print("step,alpha,beta,grad_norm")
    print(f"{last[0]},{last[1]!r},{last[2]!r},{last[3]!r}")


def cmd_eval(args):
    from .eval import emit_report, risk_curve
    from .experiments import load_domains, manifest, write_json
    from .models import load_checkpoint

    config = _config(args)
    seed = config.seeds[0]
    model = load_checkpoint(args.checkpoint)
    _, test = load_domains(config, seed)
    out = _out_dir(args, os.path.join(os.path.dirname(args.checkpoint) or ".", "eval"))
    tc = config.iro_config(seed)
    curve = risk_curve(model, test, config.lambda_grid, tc.risk_measure, label=args.label,
                       loss_kind=tc.loss_kind)
    paths = emit_report([curve], None, out)
    write_json(os.path.join(out, "manifest.json"),
               manifest("eval", config, seed, [os.path.basename(p) for p in paths.values()]))
    _print_curves([curve])


def cmd_regret(args):
    from .eval import max_regret, read_curves_csv

    curves = {c.label: c for c in read_curves_csv(args.curves)}
    if args.ideal_label not in curves:
        raise ConfigError(f"{args.curves} has no curve labelled {args.ideal_label!r}")
    ideal = curves[args.ideal_label]
    out = _out_dir(args, os.path.dirname(os.path.abspath(args.curves)))
    rows = [(label, max_regret(c, ideal)) for label, c in curves.items()]
    with open(os.path.join(out, "regret.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "max_regret"])
        for label, r in rows:
            w.writerow([label, repr(r)])
    print("label,max_regret")
    for label, r in rows:
        print(f"{label},{r:.6g}")


def _print_curves(curves):
    print("label,lambda,value")
    for c in curves:
        for lam, v in zip(c.lambda_grid, c.values):
            print(f"{c.label},{lam:g},{v:.6g}")


def _reproduce_config(args, target):
    from .experiments import load_config, preset

    name = "bike" if target == "table1-bike" else "synthetic"
    config = load_config(args.config) if args.config else preset(name)
    if args.scale <= 0:
        raise ConfigError("--scale must be positive")
    if name == "synthetic":
        n = max(2, int(round(250 * args.scale)))
        config = config.replace(num_train_domains=n, num_test_domains=n)
    else:
        config = config.replace(bike_fraction=min(1.0, args.scale))
    if args.seed is not None:
        k = len(config.seeds)
        config = config.replace(seeds=list(range(args.seed, args.seed + k)))
    return config


def cmd_reproduce(args):
    from .eval import emit_report
    from .experiments import (BIKE_LEARNERS, SYNTHETIC_LEARNERS, compare_learners, manifest,
                              regret_table, standard_error, write_json)

    target = args.target
    config = _reproduce_config(args, target)
    out = _out_dir(args, os.path.join(config.output_dir, target))
    if target == "fig2":
        seed = config.seeds[0]
        curves = compare_learners(config, SYNTHETIC_LEARNERS, seed, _log)
        panels = {
            "vs-plf": ["IL", "PL-f(0)", "PL-f(1)", "PL-f(U)", "ideal"],
            "vs-plh": ["IL", "PL-h(5,5)", "PL-h(5,1)", "INF-TASK(1,1)", "ideal"],
        }
        outputs = []
        from .eval import max_regret

        for panel, labels in panels.items():
            chosen = [curves[k] for k in labels]
            regrets = {c.label: max_regret(c, curves["ideal"]) for c in chosen}
            paths = emit_report(chosen, regrets, os.path.join(out, panel))
            outputs += [os.path.join(panel, os.path.basename(p)) for p in paths.values()]
        write_json(os.path.join(out, "manifest.json"), manifest("reproduce fig2", config, seed, outputs))
        _print_curves(curves.values())
        return
    learners = BIKE_LEARNERS if target == "table1-bike" else SYNTHETIC_LEARNERS
    curves, regrets, per_seed = regret_table(config, learners, _log)
    paths = emit_report(curves, regrets, out)
    with open(os.path.join(out, "regret_by_seed.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "seed", "max_regret"])
        for label, values in per_seed.items():
            for seed, r in zip(config.seeds, values):
                w.writerow([label, seed, repr(r)])
    outputs = [os.path.basename(p) for p in paths.values()] + ["regret_by_seed.csv"]
    write_json(os.path.join(out, "manifest.json"),
               manifest(f"reproduce {target} --scale {args.scale:g}", config, config.seeds[0], outputs))
    print("label,max_regret,standard_error")
    for label, values in per_seed.items():
        print(f"{label},{regrets[label]:.6g},{standard_error(values):.3g}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "regret": cmd_regret,
    "reproduce": cmd_reproduce,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                COMMANDS[args.command](args)
        else:
            COMMANDS[args.command](args)
    except IDGError as exc:
        print(f"idg: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
