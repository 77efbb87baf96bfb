"""Command line front end.

Every subcommand writes its outputs under a run directory together
with a manifest.json listing the files produced and the exact
configuration used, so a result on disk can always be traced back to
the invocation that made it.

Exit codes: 0 success, 1 a check or run failed, 2 usage error,
3 numeric instability.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, netdata, neurons, quant, tape, training, verify

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_UNSTABLE = 3


def _parse_overrides(args) -> dict:
    """Merge --config file pairs with --set pairs; --set wins."""
    out = {}
    if getattr(args, "config", None):
        text = Path(args.config).read_text()
        raw = neurons.parse_kv_text(text, source=args.config)
        out.update(raw)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set wants key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    # leave type coercion to default_cell's casts; strings for str
    # fields pass through, numerics are parsed here
    for k, v in out.items():
        if isinstance(v, str):
            try:
                out[k] = float(v) if ("." in v or "e" in v.lower()) else int(v)
            except ValueError:
                pass
    return out


class _RunDir:
    def __init__(self, root, command: str, config: dict):
        self.path = Path(root)
        self.path.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.outputs: list[str] = []
        self.t0 = time.time()

    def file(self, name: str) -> Path:
        self.outputs.append(name)
        return self.path / name

    def finish(self, status: str = "ok") -> None:
        manifest = {
            "command": self.command,
            "argv": sys.argv[1:],
            "config": self.config,
            "outputs": self.outputs,
            "status": status,
            "wall_s": round(time.time() - self.t0, 3),
        }
        with open(self.path / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
            fh.write("\n")


def _dataset(args, cfg_overrides: dict | None = None):
    if getattr(args, "data", None):
        return netdata.load_dataset(args.data)
    spec = netdata.DatasetSpec(samples_per_class=args.samples_per_class,
                               seed=args.data_seed)
    return netdata.generate_dataset(spec)


def _add_data_args(p):
    p.add_argument("--data", help="dataset manifest.json (default: built-in "
                   "synthetic task)")
    p.add_argument("--samples-per-class", type=int, default=40)
    p.add_argument("--data-seed", type=int, default=0)


def _add_config_args(p):
    p.add_argument("--config", help="key=value file of cell overrides")
    p.add_argument("--set", action="append", metavar="KEY=VAL",
                   help="single override, repeatable; wins over --config")


# --- subcommands ------------------------------------------------------


def cmd_verify(args) -> int:
    checks = verify.run_all(fast=args.fast)
    ok = all(c.passed for c in checks)
    if args.out:
        run = _RunDir(args.out, "verify", {"fast": args.fast})
        with open(run.file("report.json"), "w") as fh:
            json.dump([{"name": c.name, "passed": c.passed,
                        "detail": c.detail} for c in checks], fh, indent=2)
            fh.write("\n")
        run.finish("ok" if ok else "failed")
    if args.json:
        json.dump([{"name": c.name, "passed": c.passed, "detail": c.detail}
                   for c in checks], sys.stdout, indent=2)
        print()
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    t_list = [int(s) for s in args.t_steps.split(",")]
    modes = args.modes.split(",")
    for m in modes:
        if m not in ("bruno", "vanilla"):
            raise ValueError(f"unknown mode {m!r}")
    rows = bench.bench_sweep(sizes, t_list, modes, substeps=args.substeps,
                             seed=args.seed, repeats=args.repeats)
    text = bench.rows_to_csv(rows)
    print(text, end="")
    run = _RunDir(args.out, "bench", vars(args))
    run.file("bench.csv").write_text(text)
    run.finish()
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = _parse_overrides(args)
    overrides.setdefault("seed", args.seed)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.mode:
        overrides["mode"] = args.mode
    cfg, spec = training.default_cell(args.arch, args.bits,
                                      overrides=overrides)
    net = netdata.build_network(spec, seed=cfg.seed)
    ds = _dataset(args)
    run = _RunDir(args.out, "train",
                  {"arch": args.arch, "bits": args.bits, **overrides})
    result = training.train(net, ds, cfg,
                            log_path=run.file("train.jsonl"),
                            verbose=not args.quiet)
    if spec.quant is not None:
        quant.save_quantized(net.weights, spec.quant,
                             run.file("weights_quantized.json"))
    neurons.save_params(spec.out_felif if args.arch == "felif"
                        else spec.out_lif, run.file("out_params.kv"))
    print(f"status={result.status} test_acc={result.test_acc:.4f} "
          f"wall={result.wall_s:.1f}s")
    exploded = result.status.startswith(("gradient-explosion",
                                         "numeric-instability"))
    run.finish(result.status)
    if exploded:
        return EXIT_UNSTABLE
    return EXIT_OK


def cmd_grid(args) -> int:
    overrides = _parse_overrides(args)
    archs = args.archs.split(",")
    bits_list = [int(b) for b in args.bits.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    ds = _dataset(args)
    run = _RunDir(args.out, "grid", {"archs": archs, "bits": bits_list,
                                     "seeds": seeds, **overrides})

    def progress(r):
        print(f"  {r.arch} bits={r.bits} seed={r.seed}: "
              f"{r.status} test={r.test_acc:.3f}", flush=True)
        r.write_jsonl(run.file(f"cell_{r.arch}_{r.bits}_{r.seed}.jsonl"))

    runs = bench.grid_run(archs, bits_list, seeds, ds,
                          base_config=overrides, progress=progress)
    summary = bench.summarize_grid(runs)
    text = bench.grid_to_csv(summary)
    print(text, end="")
    run.file("grid.csv").write_text(text)
    run.finish()
    return EXIT_OK


def cmd_hpo(args) -> int:
    if args.trials < 1:
        raise ValueError("--trials must be >= 1")
    spec = bench.HpoSpec(arch=args.arch, bits=args.bits, trials=args.trials,
                         epochs=args.epochs, seed=args.seed)
    ds = _dataset(args)
    run = _RunDir(args.out, "hpo", vars(args))
    log_fh = open(run.file("trials.jsonl"), "w")

    def progress(entry):
        print(f"  trial {entry['trial']}: val={entry['val_acc']:.3f} "
              f"{entry['status']}", flush=True)
        log_fh.write(json.dumps(entry) + "\n")
        log_fh.flush()

    best, log = bench.random_search(spec, ds, progress=progress)
    log_fh.close()
    if best is None:
        print("no successful trial")
        run.finish("failed")
        return EXIT_FAIL
    best_path = run.file("best.kv")
    best_path.write_text(neurons.format_kv(best))
    print(f"best (reusable via train --config {best_path}):")
    print(neurons.format_kv(best), end="")
    run.finish()
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = netdata.DatasetSpec(classes=args.classes, channels=args.channels,
                               duration_ms=args.duration_ms,
                               samples_per_class=args.samples_per_class,
                               seed=args.seed)
    ds = netdata.generate_dataset(spec)
    manifest = netdata.write_dataset(ds, args.out)
    print(manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bruno",
        description="dual-timescale training for ferroelectric spiking nets")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the self-check battery")
    p.add_argument("--fast", action="store_true",
                   help="100 ns reference instead of 10 ns")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", help="optional run directory for report.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time/graph-size sweep")
    p.add_argument("--sizes", default="64")
    p.add_argument("--t-steps", default="10,50,100,200", dest="t_steps")
    p.add_argument("--modes", default="bruno,vanilla")
    p.add_argument("--substeps", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/bench")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="train one cell")
    p.add_argument("--arch", default="felif",
                   choices=sorted(netdata.ARCHS))
    p.add_argument("--bits", type=int, default=0)
    p.add_argument("--mode", choices=["bruno", "vanilla"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", default="runs/train")
    _add_config_args(p)
    _add_data_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="architecture x quantization accuracy grid")
    p.add_argument("--archs", default="lif,felif")
    p.add_argument("--bits", default="0,3")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", default="runs/grid")
    _add_config_args(p)
    _add_data_args(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("hpo", help="random-search hyperparameters")
    p.add_argument("--arch", default="felif",
                   choices=sorted(netdata.ARCHS))
    p.add_argument("--bits", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/hpo")
    _add_data_args(p)
    p.set_defaults(func=cmd_hpo)

    p = sub.add_parser("gen-data", help="write a synthetic event dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--channels", type=int, default=12)
    p.add_argument("--duration-ms", type=float, default=200.0,
                   dest="duration_ms")
    p.add_argument("--samples-per-class", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except tape.NumericInstabilityError as err:
        print(f"numeric instability: {err}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (ValueError, FileNotFoundError, netdata.EventFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
