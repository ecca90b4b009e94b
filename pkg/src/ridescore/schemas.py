"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class TripFile(BaseModel):
    name: str
    content: str


class SynthRequest(BaseModel):
    scenario: str = Field(description="Scenario script text (key = value lines)")
    count: int = Field(ge=0, le=1000)
    seed: int = 0


class SynthResponse(BaseModel):
    trips: list[TripFile]


class ExtractRequest(BaseModel):
    trip: str = Field(description="Trip file content")


class CsvResponse(BaseModel):
    csv: str


class DetectRequest(BaseModel):
    trip: str
    detector: str = "htm"
    seed: int = 0


class ScoreRequest(BaseModel):
    trip: str
    model: str
    detector: Optional[str] = None
    seed: int = 0


class ImpactBreakdown(BaseModel):
    speed: float
    congestion: float
    jerkiness: float


class WindowLevel(BaseModel):
    window_index: int
    t_mid: float
    level: int
    queried: bool


class TripReportResponse(BaseModel):
    trip_id: str
    commuter_id: str
    detector: str
    rating: int = Field(ge=1, le=5)
    impacts: ImpactBreakdown
    windows: int
    bootstrap_windows: int
    queries: int
    levels: list[WindowLevel]


class TrainRequest(BaseModel):
    trips: list[str] = Field(min_length=1, description="Trip file contents")
    seed: int = 0
    detector: str = "htm"
    epochs: Optional[int] = None
    hidden: Optional[int] = None


class TrainResponse(BaseModel):
    model: str
    commuters: list[str]
    train_trips: list[str]
    val_trips: list[str]
    test_trips: list[str]
    final_train_loss: float
    final_val_loss: Optional[float] = None


class EvalRequest(BaseModel):
    trips: list[str] = Field(min_length=1)
    detector: str = "htm"
    seed: int = 0


class EvalResponse(BaseModel):
    metrics: dict[str, float]


class FeedbackRequest(BaseModel):
    trips: list[str] = Field(min_length=1, description="Labeled trips to collect feedback from")
    base_trips: list[str] = Field(
        default_factory=list, description="Existing dataset to retain during retraining"
    )
    detector: str = "htm"
    seed: int = 0
    epochs: Optional[int] = None


class FeedbackResponse(BaseModel):
    model: str
    answered: int
    new_commuters: list[str]


class ModelsResponse(BaseModel):
    models: list[str]


class ModelInfo(BaseModel):
    name: str
    commuters: list[str]
    hidden: int
    t_max: float
    d_max: float
