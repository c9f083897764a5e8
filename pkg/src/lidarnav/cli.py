"""Command line: gen-data, train, run, bench-kernel, gradcheck."""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path
import sys
import time

from .config import ConfigError, load_config

FUSION_MODES = ("none", "uniform", "evidential")
SUMMARY_FIELDS = ("track", "mode", "seed", "interventions", "distance", "failure_ticks",
                  "max_abs_cross_track")


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidarnav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="INI config file")
        sp.add_argument("--seed", type=int, help="override the command's seed")
        sp.add_argument("--out", type=Path, help="output directory")
        return sp

    g = common(sub.add_parser("gen-data", help="drive the oracle and write a dataset"))
    g.add_argument("--frames", type=int, help="number of frames to write")

    t = common(sub.add_parser("train", help="train a network on a dataset"))
    t.add_argument("--data", type=Path, help="dataset directory (default [paths] dataset)")
    t.add_argument("--mode", choices=("hybrid", "deterministic"))
    t.add_argument("--frames", type=int, help="train on the first N frames only")
    t.add_argument("--epochs", type=int)

    r = common(sub.add_parser("run", help="closed-loop episodes over seeds and fusion modes"))
    r.add_argument("--checkpoint", type=Path, help="network checkpoint (default [paths] checkpoint)")
    r.add_argument("--mode", choices=FUSION_MODES + ("all",))

    common(sub.add_parser("bench-kernel", help="time naive vs gather-GEMM sparse convolution"))
    common(sub.add_parser("gradcheck", help="finite-difference check of every layer and loss"))
    sub.add_parser("config-schema", help="print every config key with its default")
    return p


# ---------------------------------------------------------------------------- commands
def cmd_gen_data(args, cfg) -> int:
    from .sim.dataset import DataGenConfig, gen_dataset
    data = cfg["data"]
    out = args.out or Path(cfg["paths"]["dataset"])
    frames = args.frames if args.frames is not None else data["frames"]
    seed = args.seed if args.seed is not None else data["seed"]
    try:
        manifest = gen_dataset(data["tracks"], frames, seed, out, DataGenConfig(K=data["K"]))
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"dataset generation failed: {exc}")
    print(f"wrote {manifest['n_frames']} frames to {out}")
    for tag, n in sorted(manifest["tag_counts"].items()):
        print(f"{tag}\t{n}")
    return 0


def cmd_train(args, cfg) -> int:
    from .formats import save_network
    from .sim.dataset import DatasetError, load_dataset
    from .trainer import TrainConfig, evaluate, select_frames, train
    tc = cfg["train"]
    data_dir = args.data or Path(cfg["paths"]["dataset"])
    try:
        manifest, frames = load_dataset(data_dir)
    except DatasetError as exc:
        return _fail(str(exc))
    if args.frames is not None:
        frames = frames[:args.frames]
    config = TrainConfig(
        epochs=args.epochs if args.epochs is not None else tc["epochs"],
        batch_size=tc["batch_size"], lr0=tc["lr0"], weight_decay=tc["weight_decay"],
        seed=args.seed if args.seed is not None else tc["seed"],
        K=manifest["K"], mode=args.mode or tc["mode"], navigation=tc["navigation"],
        rotate=tc["rotate"], scale=tc["scale"], d_recover=tc["d_recover"])
    out = args.out or Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.tsv", "w") as log:
        log.write("epoch\tlr\tloss_total\tloss_mae\tloss_nll\tloss_r\n")

        def emit(line):
            log.write(line + "\n")
            log.flush()
            print(line)

        try:
            result = train(frames, config, log=emit)
        except (ValueError, FloatingPointError) as exc:
            return _fail(f"training failed: {exc}")
    save_network(result.net, out / "model.sevw")
    metrics = evaluate(result.net, select_frames(frames, config.navigation), config)
    (out / "eval.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    print(f"curvature MAE {metrics['mae']:.6f} 1/m  (k=0: {metrics['mae_k0']:.6f})")
    print(f"checkpoint {out / 'model.sevw'}")
    return 0


def cmd_run(args, cfg) -> int:
    from .formats import FormatError, format_trace, load_network
    from .sim.episode import EpisodeConfig, NetworkPolicy
    from .sim.protocol import median_interventions, recovery_sweep, success_rate, sweep
    from .sim.scanner import FailureSchedule
    ckpt = args.checkpoint or Path(cfg["paths"]["checkpoint"])
    try:
        net = load_network(ckpt)
    except (OSError, FormatError) as exc:
        return _fail(f"cannot load checkpoint {ckpt}: {exc}")
    mode = args.mode or cfg["fusion"]["mode"]
    modes = FUSION_MODES if mode == "all" else (mode,)
    sim, fail, run = cfg["sim"], cfg["failure"], cfg["run"]
    base = args.seed if args.seed is not None else run["seed"]
    seeds = list(range(base, base + run["seeds"]))
    econf = EpisodeConfig(dt=sim["dt"], speed=sim["speed"], distance=sim["distance"] or None,
                          cte_max=sim["cte_max"], heading_max=math.radians(sim["heading_max_deg"]),
                          max_hold=sim["max_hold"], speed_noise=sim["speed_noise"],
                          literal_division=cfg["fusion"]["literal_division"])
    try:
        schedule = FailureSchedule(fail["period"], fail["duration"], fail["kind"]) if fail["enabled"] else None
    except ValueError as exc:
        return _fail(f"[failure] {exc}")
    policy = NetworkPolicy(net, fuse_gamma=cfg["fusion"]["fuse_gamma"])
    out = args.out or Path(cfg["paths"]["out"])
    (out / "traces").mkdir(parents=True, exist_ok=True)
    traces = sweep(policy, sim["tracks"], modes, seeds, schedule, econf, run["workers"])
    rows = ["\t".join(SUMMARY_FIELDS)]
    for tr in traces:
        (out / "traces" / f"{tr.track}_{tr.mode}_{tr.seed}.tsv").write_text(format_trace(tr))
        s = tr.summary()
        rows.append("\t".join(str(s[k]) for k in SUMMARY_FIELDS))
    for track in sim["tracks"]:
        for m in modes:
            rows.append(f"# median\t{track}\t{m}\t{median_interventions(traces, m, track):g}")
    if run["recovery_trials"]:
        rows.append("# recovery\ttrack\tmode\ttrials\tsuccess_rate")
        for track in sim["tracks"]:
            for m in modes:
                res = recovery_sweep(policy, track, run["recovery_deg"], run["recovery_trials"], m, econf, base)
                rows.append(f"# recovery\t{track}\t{m}\t{len(res)}\t{success_rate(res):.3f}")
    text = "\n".join(rows) + "\n"
    (out / "summary.tsv").write_text(text)
    print(text, end="")
    return 0


def cmd_bench_kernel(args, cfg) -> int:
    import jsonschema
    from .bench import REPORT_SCHEMA, CorrectnessGateError, bench_kernel
    b = cfg["bench"]
    try:
        report = bench_kernel(b["sizes"], b["channels"], b["warmups"], b["reps"],
                              args.seed if args.seed is not None else b["seed"], log=print)
    except CorrectnessGateError as exc:
        return _fail(f"correctness gate failed: {exc}")
    jsonschema.validate(report, REPORT_SCHEMA)
    out = args.out or Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(report, indent=1) + "\n")
    print(f"report {out / 'bench.json'}")
    return 0


def cmd_gradcheck(args, cfg) -> int:
    from .gradcheck import TOLERANCE, run_all
    g = cfg["gradcheck"]
    results = run_all(g["points"], args.seed if args.seed is not None else g["seed"])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<18s} points {r.points:5d}  "
              f"max rel err {r.max_rel_err:.3e}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.json").write_text(json.dumps(
            {"tolerance": TOLERANCE, "checks": [r.__dict__ for r in results]}, indent=1) + "\n")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "run": cmd_run,
            "bench-kernel": cmd_bench_kernel, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "config-schema":
        from .config import schema_text
        print(schema_text())
        return 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc))
    t0 = time.perf_counter()
    code = COMMANDS[args.command](args, cfg)
    print(f"[{args.command}] {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
