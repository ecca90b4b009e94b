"""HTTP service wrapping the scoring pipeline.

The server owns a models directory; clients post trip file contents and
refer to models by name.  Retraining swaps the stored checkpoint
atomically, matching the one-writer feedback flow.
"""

from __future__ import annotations

import os
import re
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI, HTTPException

from . import __version__, mtl, pipeline, schemas
from .synth import SeededRng, derive_seed, parse_scenario, render_trip
from .trips import TripParseError, TripValidationError, format_trip, parse_trip_text

_MODEL_NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")


def _model_path(models_dir: Path, name: str) -> Path:
    if not _MODEL_NAME_RE.match(name):
        raise HTTPException(status_code=400, detail=f"invalid model name {name!r}")
    return models_dir / f"{name}.json"


def _load_model(models_dir: Path, name: str) -> mtl.MtlModel:
    path = _model_path(models_dir, name)
    if not path.exists():
        raise HTTPException(status_code=404, detail=f"model {name!r} not found")
    return mtl.load_model(path)


def _parse_trip_or_400(content: str):
    try:
        return parse_trip_text(content)
    except (TripParseError, TripValidationError) as exc:
        raise HTTPException(status_code=400, detail=f"bad trip file: {exc}") from exc


def _config(base: pipeline.PipelineConfig, detector: str | None, seed: int | None) -> pipeline.PipelineConfig:
    cfg = base
    if detector is not None:
        cfg = replace(cfg, detector=detector)
    if seed is not None:
        cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
    return cfg


def create_app(
    models_dir: str | os.PathLike = "models",
    config: pipeline.PipelineConfig | None = None,
) -> FastAPI:
    base_config = config or pipeline.PipelineConfig()
    app = FastAPI(title="ridescore", version=__version__)
    app.state.models_dir = Path(models_dir)
    app.state.config = base_config

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
        try:
            script = parse_scenario(req.scenario)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"bad scenario: {exc}") from exc
        trips = []
        for i in range(req.count):
            seed = derive_seed(req.seed, i)
            trip_script = replace(script, trip_id=f"{script.trip_id}_{i:03d}")
            record = render_trip(trip_script, SeededRng(seed))
            trips.append(
                schemas.TripFile(name=f"{trip_script.trip_id}.trip", content=format_trip(record))
            )
        return schemas.SynthResponse(trips=trips)

    @app.post("/trips/extract", response_model=schemas.CsvResponse)
    def extract(req: schemas.ExtractRequest) -> schemas.CsvResponse:
        trip = _parse_trip_or_400(req.trip)
        return schemas.CsvResponse(csv=pipeline.features_csv(trip, app.state.config))

    @app.post("/trips/detect", response_model=schemas.CsvResponse)
    def detect(req: schemas.DetectRequest) -> schemas.CsvResponse:
        trip = _parse_trip_or_400(req.trip)
        cfg = _config(app.state.config, req.detector, req.seed)
        return schemas.CsvResponse(csv=pipeline.trace_csv(trip, cfg))

    @app.post("/trips/report", response_model=schemas.TripReportResponse)
    def report(req: schemas.ScoreRequest) -> schemas.TripReportResponse:
        trip = _parse_trip_or_400(req.trip)
        model = _load_model(app.state.models_dir, req.model)
        cfg = _config(app.state.config, req.detector, req.seed)
        queue = mtl.FeedbackQueue()
        try:
            result = pipeline.run_trip(trip, model, cfg, queue=queue)
        except pipeline.InsufficientTripLengthError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except mtl.UnknownCommuterError as exc:
            raise HTTPException(
                status_code=400,
                detail=f"{exc.args[0]}; retrain the model with this commuter's labeled trips",
            ) from exc
        return schemas.TripReportResponse(
            trip_id=result.trip_id,
            commuter_id=result.commuter_id,
            detector=result.detector,
            rating=result.rating,
            impacts=schemas.ImpactBreakdown(
                speed=result.impacts["speed"],
                congestion=result.impacts["congestion"],
                jerkiness=result.impacts["jerkiness"],
            ),
            windows=result.total_windows,
            bootstrap_windows=result.bootstrap_windows,
            queries=result.query_count(),
            levels=[
                schemas.WindowLevel(
                    window_index=r.window_index, t_mid=r.t_mid, level=r.level, queried=r.queried
                )
                for r in result.results
            ],
        )

    @app.post("/models/{name}/train", response_model=schemas.TrainResponse)
    def train_model(name: str, req: schemas.TrainRequest) -> schemas.TrainResponse:
        trips = [_parse_trip_or_400(t) for t in req.trips]
        cfg = _config(app.state.config, req.detector, req.seed)
        if req.hidden is not None:
            cfg = replace(cfg, hidden=req.hidden)
        if req.epochs is not None:
            cfg = replace(cfg, train=replace(cfg.train, epochs=req.epochs))
        try:
            outcome = pipeline.train_pipeline(trips, cfg)
        except (ValueError, pipeline.InsufficientTripLengthError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        path = _model_path(app.state.models_dir, name)
        path.parent.mkdir(parents=True, exist_ok=True)
        mtl.save_model(outcome.model, path)
        val_losses = [v for v in outcome.result.val_loss if v == v]
        return schemas.TrainResponse(
            model=name,
            commuters=sorted(outcome.model.registry),
            train_trips=outcome.train_trips,
            val_trips=outcome.val_trips,
            test_trips=outcome.test_trips,
            final_train_loss=outcome.result.train_loss[-1],
            final_val_loss=val_losses[-1] if val_losses else None,
        )

    @app.post("/models/{name}/eval", response_model=schemas.EvalResponse)
    def eval_model(name: str, req: schemas.EvalRequest) -> schemas.EvalResponse:
        trips = [_parse_trip_or_400(t) for t in req.trips]
        model = _load_model(app.state.models_dir, name)
        cfg = _config(app.state.config, req.detector, req.seed)
        try:
            values = pipeline.eval_pipeline(trips, model, cfg)
        except (ValueError, mtl.UnknownCommuterError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return schemas.EvalResponse(metrics=values)

    @app.post("/models/{name}/feedback", response_model=schemas.FeedbackResponse)
    def feedback(name: str, req: schemas.FeedbackRequest) -> schemas.FeedbackResponse:
        trips = [_parse_trip_or_400(t) for t in req.trips]
        model = _load_model(app.state.models_dir, name)
        cfg = _config(app.state.config, req.detector, req.seed)
        train_cfg = cfg.train
        if req.epochs is not None:
            train_cfg = replace(train_cfg, epochs=req.epochs)
        base_rows = []
        for content in req.base_trips:
            base_rows.extend(pipeline.trip_rows(_parse_trip_or_400(content), cfg))
        queue = pipeline.feedback_pass(trips, model, cfg)
        before = set(model.registry)
        updated, _ = mtl.retrain(model, queue, train_cfg, base_rows=base_rows)
        path = _model_path(app.state.models_dir, name)
        mtl.save_model(updated, path)
        return schemas.FeedbackResponse(
            model=name,
            answered=len(queue.answered),
            new_commuters=sorted(set(updated.registry) - before),
        )

    @app.get("/models", response_model=schemas.ModelsResponse)
    def list_models() -> schemas.ModelsResponse:
        root = app.state.models_dir
        names = sorted(p.stem for p in root.glob("*.json")) if root.exists() else []
        return schemas.ModelsResponse(models=names)

    @app.get("/models/{name}", response_model=schemas.ModelInfo)
    def model_info(name: str) -> schemas.ModelInfo:
        model = _load_model(app.state.models_dir, name)
        return schemas.ModelInfo(
            name=name,
            commuters=sorted(model.registry),
            hidden=model.hidden,
            t_max=model.t_max,
            d_max=model.d_max,
        )

    return app


app = create_app(models_dir=os.environ.get("RIDESCORE_MODELS_DIR", "models"))
