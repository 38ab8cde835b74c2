"""HTTP face of the package: run experiments, re-render reports, generate
synthetic datasets and run the sanity battery over a small JSON API.

All verbs the CLI exposes go through these endpoints, so local and remote
use follow exactly the same code path.
"""

import math

from fastapi import FastAPI, HTTPException

from . import __version__, experiment, selfcheck
from .config import DEFAULTS, parse_config, load_config
from .schemas import (CheckItem, CheckResponse, HealthResponse, HistoryRow,
                      MapRow, ReportRequest, ReportResponse, RunRequest,
                      RunResponse, SynthRequest, SynthResponse)

app = FastAPI(title="pairlabel", version=__version__)


def _bad_request(exc: Exception):
    return HTTPException(status_code=400, detail=str(exc))


def _map_rows(rows) -> list:
    return [MapRow(**row) for row in rows]


def _history_rows(rows) -> list:
    out = []
    for row in rows:
        row = dict(row)
        acc = row["pool_accuracy"]
        row["pool_accuracy"] = None if (acc is None or math.isnan(acc)) else acc
        out.append(HistoryRow(**row))
    return out


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/synth", response_model=SynthResponse)
def synth(req: SynthRequest) -> SynthResponse:
    overrides = [
        f"run.seed={req.seed}",
        f"data.classes={req.classes}",
        f"data.d_1={req.d_1}",
        f"data.d_2={req.d_2}",
        f"data.per_class_count={req.per_class_count}",
        f"data.per_class_test={req.per_class_test}",
        f"data.separation_1={req.separation_1}",
        f"data.separation_2={req.separation_2}",
        f"data.noise_1={req.noise_1}",
        f"data.noise_2={req.noise_2}",
    ]
    try:
        cfg = parse_config("", overrides)
        info = experiment.generate_synth_files(cfg, req.output_dir)
    except (ValueError, OSError) as exc:
        raise _bad_request(exc) from None
    return SynthResponse(**info)


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest) -> RunResponse:
    if req.config_path and req.config_text:
        raise _bad_request(ValueError(
            "give either config_path or config_text, not both"))
    try:
        if req.config_path:
            cfg = load_config(req.config_path, req.overrides)
        else:
            cfg = parse_config(req.config_text or "", req.overrides)
        result = experiment.run_experiment(cfg, req.output_dir)
    except (ValueError, OSError) as exc:
        raise _bad_request(exc) from None
    return RunResponse(output_dir=result.output_dir, files=result.files,
                       map_rows=_map_rows(result.map_rows),
                       history_rows=_history_rows(result.history_rows),
                       summary=result.summary)


@app.post("/report", response_model=ReportResponse)
def report(req: ReportRequest) -> ReportResponse:
    try:
        summary = experiment.render_report(req.artifact_dir)
        outdir = req.artifact_dir
        map_rows = experiment.load_rows(f"{outdir}/{experiment.MAP_FILE}")
        history_rows = experiment.load_rows(f"{outdir}/{experiment.HISTORY_FILE}")
    except (ValueError, OSError) as exc:
        raise _bad_request(exc) from None
    return ReportResponse(summary=summary, map_rows=_map_rows(map_rows),
                          history_rows=_history_rows(history_rows))


@app.post("/check", response_model=CheckResponse)
def check() -> CheckResponse:
    results = selfcheck.run_all()
    return CheckResponse(
        passed=all(r.passed for r in results),
        checks=[CheckItem(name=r.name, passed=r.passed, detail=r.detail)
                for r in results])
