"""Request/response models for the HTTP service."""

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    output_dir: str
    classes: int = 8
    d_1: int = 16
    d_2: int = 24
    per_class_count: int = 200
    per_class_test: int = 50
    separation_1: float = 1.0
    separation_2: float = 1.0
    noise_1: float = 1.0
    noise_2: float = 1.0
    seed: int = 0


class SynthResponse(BaseModel):
    paths: dict[str, str]
    n_samples: int
    n_classes: int


class RunRequest(BaseModel):
    config_path: str | None = None
    config_text: str | None = None
    overrides: list[str] = Field(default_factory=list)
    output_dir: str | None = None


class MapRow(BaseModel):
    mode: str
    direction: str
    r: int
    map: float
    seed: int


class HistoryRow(BaseModel):
    seed: int
    iteration: int
    cf_1: float
    cf_2: float
    active_modality: int
    pool_size: int
    pool_accuracy: float | None
    n_out_of_class: int


class RunResponse(BaseModel):
    output_dir: str
    files: list[str]
    map_rows: list[MapRow]
    history_rows: list[HistoryRow]
    summary: str


class ReportRequest(BaseModel):
    artifact_dir: str


class ReportResponse(BaseModel):
    summary: str
    map_rows: list[MapRow]
    history_rows: list[HistoryRow]


class CheckItem(BaseModel):
    name: str
    passed: bool
    detail: str


class CheckResponse(BaseModel):
    passed: bool
    checks: list[CheckItem]
