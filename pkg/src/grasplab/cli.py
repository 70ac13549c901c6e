"""Command-line entry point: pretraining, benchmarks, replay, and serving."""

from __future__ import annotations

import argparse
import json
import sys

from . import bench
from .demo import Thresholds, load_demo
from .learner import TrainConfig, load_model
from .scene import CATEGORIES, generate_scene, load_scene
from .server import TeleopServer, build_server_state, configure_logging

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BENCH_FAIL = 3


def _add_pretrain(sub) -> None:
    p = sub.add_parser("pretrain", help="train the contrastive model on procedural shapes")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--families", nargs="+", default=list(CATEGORIES), choices=CATEGORIES)
    p.add_argument("--samples", type=int, default=24, help="clouds per family")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=0.002)
    p.add_argument("--freeze-encoder", action="store_true",
                   help="train only the projection head")


def _add_bench_normal(sub) -> None:
    p = sub.add_parser("bench-normal", help="grasp benchmark with no demonstrations")
    p.add_argument("--model", required=True)
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--objects-per-scene", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--assert", dest="assert_", action="store_true",
                   help="exit 3 unless plate rate is 0 and box rate >= 0.9")


def _add_bench_demo(sub) -> None:
    p = sub.add_parser("bench-demo", help="benchmark after scripted demonstrations")
    p.add_argument("--model", required=True)
    p.add_argument("--demos-per-category", type=int, default=3, choices=(0, 1, 2, 3))
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--objects-per-scene", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--export-demos", help="directory for the recorded demo files")
    p.add_argument("--assert", dest="assert_", action="store_true",
                   help="exit 3 unless the demo-count trend criteria hold")


def _add_replay(sub) -> None:
    p = sub.add_parser("replay", help="replay a recorded session transcript")
    p.add_argument("--session", required=True)


def _add_serve(sub) -> None:
    p = sub.add_parser("serve", help="run the teleoperation server")
    p.add_argument("--listen", default="127.0.0.1:7460", help="host:port")
    p.add_argument("--scene", help="scene file; generated from --seed when omitted")
    p.add_argument("--model", help="model file; random weights when omitted")
    p.add_argument("--tr", type=float, default=0.7, help="rotation-learning threshold")
    p.add_argument("--tl", type=float, default=0.9, help="translation-learning threshold")
    p.add_argument("--m-points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ui-dir", help="static asset directory for the browser client")
    p.add_argument("--demo", action="append", default=[],
                   help="demonstration file to preload (repeatable)")


def main(argv=None) -> int:
    configure_logging()
    parser = argparse.ArgumentParser(prog="grasplab")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_pretrain(sub)
    _add_bench_normal(sub)
    _add_bench_demo(sub)
    _add_replay(sub)
    _add_serve(sub)
    args = parser.parse_args(argv)
    return {
        "pretrain": _cmd_pretrain,
        "bench-normal": _cmd_bench_normal,
        "bench-demo": _cmd_bench_demo,
        "replay": _cmd_replay,
        "serve": _cmd_serve,
    }[args.command](args)


def _cmd_pretrain(args) -> int:
    cfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.learning_rate,
                      epochs=args.epochs, seed=args.seed,
                      freeze_encoder=args.freeze_encoder)
    _, curve = bench.pretrain(args.out, families=tuple(args.families),
                              samples_per_family=args.samples, epochs=args.epochs,
                              seed=args.seed, cfg=cfg)
    print(f"wrote {args.out}; final epoch loss {curve[-1]:.4f}")
    return EXIT_OK


def _cmd_bench_normal(args) -> int:
    params = load_model(args.model)
    cfg = bench.BenchConfig(scenes=args.scenes, objects_per_scene=args.objects_per_scene,
                            seed=args.seed)
    report = bench.run_benchmark(params, cfg)
    if args.out:
        bench.save_report(report, args.out)
    print(json.dumps({"overall": report["overall"],
                      "categories": {c: r["attempt_rate"]
                                     for c, r in report["categories"].items()}},
                     indent=1, sort_keys=True))
    if args.assert_:
        plates = report["categories"].get("plate", {"attempt_rate": 0.0})["attempt_rate"]
        boxes = report["categories"].get("box", {"attempt_rate": 1.0})["attempt_rate"]
        if plates != 0.0 or boxes < 0.9:
            print(f"assertion failed: plate={plates} box={boxes}", file=sys.stderr)
            return EXIT_BENCH_FAIL
    return EXIT_OK


def _cmd_bench_demo(args) -> int:
    params = load_model(args.model)
    cfg = bench.BenchConfig(scenes=args.scenes, objects_per_scene=args.objects_per_scene,
                            seed=args.seed)
    report = bench.run_demo_benchmark(params, cfg,
                                      demos_per_category=args.demos_per_category)
    if args.out:
        bench.save_report(report, args.out)
    if args.export_demos:
        _export_demos(report, args.export_demos)
    print(bench.format_demo_table(report))
    if args.assert_ and not _demo_trend_holds(report):
        print("assertion failed: demo-count trend criteria unmet", file=sys.stderr)
        return EXIT_BENCH_FAIL
    return EXIT_OK


def _export_demos(report: dict, out_dir: str) -> None:
    import os

    from .demo import DemonstrationStore, save_demo
    from .bench import record_scripted_demo

    os.makedirs(out_dir, exist_ok=True)
    store = DemonstrationStore()
    for category, seed in report["demo_seeds"]:
        record_scripted_demo(store, category, seed)
    for i, record in enumerate(store.records()):
        save_demo(record, os.path.join(out_dir, f"demo_{i:03d}_{record.category}.json"))


def _demo_trend_holds(report: dict) -> bool:
    counts = sorted(report["by_demo_count"], key=int)
    overall = [report["by_demo_count"][k]["overall"]["attempt_rate"] for k in counts]
    monotone = all(a <= b + 1e-12 for a, b in zip(overall, overall[1:]))
    plates0 = report["by_demo_count"]["0"]["categories"].get("plate")
    plate_zero = plates0 is None or plates0["attempt_rate"] == 0.0
    plate_one = True
    if "1" in report["by_demo_count"]:
        p1 = report["by_demo_count"]["1"]["categories"].get("plate")
        plate_one = p1 is None or p1["attempt_rate"] >= 0.7
    return monotone and plate_zero and plate_one


def _cmd_replay(args) -> int:
    with open(args.session, encoding="utf-8") as fh:
        transcript = json.load(fh)
    divergences = bench.replay_transcript(transcript)
    if divergences:
        for d in divergences:
            print(f"divergence at message {d['index']}", file=sys.stderr)
        return EXIT_BENCH_FAIL
    print(f"replayed {len(transcript['messages'])} messages, no divergence")
    return EXIT_OK


def _cmd_serve(args) -> int:
    host, _, port = args.listen.rpartition(":")
    scene = load_scene(args.scene) if args.scene else generate_scene(args.seed, 5)
    params = load_model(args.model) if args.model else None
    state = build_server_state(scene=scene, params=params,
                               thresholds=Thresholds(args.tr, args.tl),
                               m_points=args.m_points, seed=args.seed)
    for path in args.demo:
        state.store.add(load_demo(path))
    server = TeleopServer(state, host=host or "127.0.0.1", port=int(port),
                          ui_dir=args.ui_dir)
    print(f"listening on {server.address[0]}:{server.address[1]}"
          + (f", serving UI from {args.ui_dir}" if args.ui_dir else ""))
    server.serve_forever()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
