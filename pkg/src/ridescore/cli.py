"""Command-line client.

All commands are thin wrappers over the pipeline layer; ``run`` and
``rate`` can alternatively target a running service with --server.
Every command is deterministic given its flags and seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import mtl, pipeline
from .synth import load_scenario
from .trips import TripParseError, TripValidationError, parse_trip


def _load_config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig.load(args.config) if args.config else pipeline.PipelineConfig()
    if getattr(args, "detector", None):
        cfg = replace(cfg, detector=args.detector)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _load_dataset(dataset_dir: str) -> list:
    paths = sorted(Path(dataset_dir).glob("*.trip"))
    if not paths:
        raise FileNotFoundError(f"no .trip files under {dataset_dir}")
    return [parse_trip(p) for p in paths]


def cmd_synth(args) -> int:
    script = load_scenario(args.scenario)
    paths = pipeline.synth_batch(script, args.count, args.seed, args.out)
    for p in paths:
        print(p)
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args)
    trip = parse_trip(args.trip)
    csv = pipeline.features_csv(trip, cfg)
    if args.out:
        _write(Path(args.out), csv)
    else:
        sys.stdout.write(csv)
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    trip = parse_trip(args.trip)
    csv = pipeline.trace_csv(trip, cfg)
    if args.out:
        _write(Path(args.out), csv)
    else:
        sys.stdout.write(csv)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    trips = _load_dataset(args.dataset)
    outcome = pipeline.train_pipeline(trips, cfg)
    model_path = Path(args.out) / f"{args.model_name}.json"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    mtl.save_model(outcome.model, model_path)
    print(f"model = {model_path}")
    print(f"commuters = {len(outcome.model.registry)}")
    print(f"train_trips = {len(outcome.train_trips)}")
    print(f"val_trips = {len(outcome.val_trips)}")
    print(f"test_trips = {len(outcome.test_trips)}")
    print(f"final_train_loss = {outcome.result.train_loss[-1]!r}")
    finite_val = [v for v in outcome.result.val_loss if v == v]
    if finite_val:
        print(f"final_val_loss = {finite_val[-1]!r}")
    return 0


def _report_via_server(args) -> pipeline.TripReport:
    import httpx

    content = Path(args.trip).read_text(encoding="utf-8")
    payload = {"trip": content, "model": args.model, "seed": args.seed or 0}
    if args.detector:
        payload["detector"] = args.detector
    response = httpx.post(f"{args.server.rstrip('/')}/trips/report", json=payload, timeout=600.0)
    if response.status_code != 200:
        raise RuntimeError(f"server error {response.status_code}: {response.text}")
    data = response.json()
    return pipeline.TripReport(
        trip_id=data["trip_id"],
        commuter_id=data["commuter_id"],
        detector=data["detector"],
        rating=data["rating"],
        impacts={
            "speed": data["impacts"]["speed"],
            "congestion": data["impacts"]["congestion"],
            "jerkiness": data["impacts"]["jerkiness"],
        },
        results=tuple(
            pipeline.WindowResult(
                window_index=w["window_index"],
                t_mid=w["t_mid"],
                level=w["level"],
                queried=w["queried"],
            )
            for w in data["levels"]
        ),
        bootstrap_windows=data["bootstrap_windows"],
        total_windows=data["windows"],
    )


def _report_locally(args) -> pipeline.TripReport:
    cfg = _load_config(args)
    trip = parse_trip(args.trip)
    model = mtl.load_model(args.model)
    queue = mtl.FeedbackQueue()
    report = pipeline.run_trip(trip, model, cfg, queue=queue)
    # Synthetic trips carry their own labels: answer the queries from them.
    if trip.labels:
        for query in list(queue.pending):
            queue.answer(query, pipeline.prevailing_level(trip.labels, query.t_mid))
    return report


def cmd_run(args) -> int:
    report = _report_via_server(args) if args.server else _report_locally(args)
    sys.stdout.write(report.to_kv_text())
    if args.out:
        out_dir = Path(args.out)
        _write(out_dir / f"{report.trip_id}.report.txt", report.to_kv_text())
        if not args.server:
            cfg = _load_config(args)
            trip = parse_trip(args.trip)
            _write(out_dir / f"{report.trip_id}.trace.csv", pipeline.trace_csv(trip, cfg))
    return 0


def cmd_rate(args) -> int:
    report = _report_via_server(args) if args.server else _report_locally(args)
    print(f"trip_id = {report.trip_id}")
    print(f"rating = {report.rating}")
    print(f"impact_speed = {report.impacts['speed']:.3f}")
    print(f"impact_congestion = {report.impacts['congestion']:.3f}")
    print(f"impact_jerkiness = {report.impacts['jerkiness']:.3f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    trips = _load_dataset(args.dataset)
    model = mtl.load_model(args.model)
    _, _, test_set = pipeline.split_trips(trips, cfg.train.split, cfg.train.seed)
    values = pipeline.eval_pipeline(test_set, model, cfg)
    text = pipeline.metrics_kv_text(values)
    sys.stdout.write(text)
    if args.out:
        _write(Path(args.out), text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _load_config(args)
    uvicorn.run(create_app(models_dir=args.models_dir, config=cfg), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ridescore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, detector=True):
        p.add_argument("--seed", type=int, default=None, help="override the pipeline seed")
        p.add_argument("--config", help="pipeline config JSON path")
        if detector:
            p.add_argument("--detector", choices=pipeline.DETECTOR_CHOICES, default=None)

    p = sub.add_parser("synth", help="render synthetic trips from a scenario script")
    p.add_argument("scenario", help="scenario script path")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for .trip files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="per-window feature CSV for a trip")
    p.add_argument("trip")
    p.add_argument("--out")
    common(p, detector=False)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("detect", help="per-window likelihood trace for a trip")
    p.add_argument("trip")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("train", help="train a comfort model on a trip dataset directory")
    p.add_argument("dataset", help="directory of .trip files")
    p.add_argument("--model-name", default="model")
    p.add_argument("--out", default="models", help="models directory")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="score one trip and emit its report")
    p.add_argument("trip")
    p.add_argument("--model", required=True, help="model checkpoint path (or name with --server)")
    p.add_argument("--out", help="directory for report and trace files")
    p.add_argument("--server", help="service base URL; runs remotely when set")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="metrics report on the dataset's held-out split")
    p.add_argument("dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rate", help="trip rating plus per-feature impact shares")
    p.add_argument("trip")
    p.add_argument("--model", required=True)
    p.add_argument("--server", help="service base URL; runs remotely when set")
    common(p)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--models-dir", default="models")
    common(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TripParseError, TripValidationError, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
