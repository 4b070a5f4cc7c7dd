"""
HTTP 前端：以 JSON 接口提交模拟、对比、扫描，管理预设与运行历史。

启动：uv run hybrid-cdn serve
"""

import logging
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, File, Form, HTTPException, Query, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .chunking import DEFAULT_PIECE_SIZE, make_pieces, piece_rows
from .config import ConfigStore, ExperimentConfig, RunHistory, build_config
from .errors import ChunkError, ConfigError, SimulationError, TopologyError
from .experiments import AggregateReport, compare_models, run_experiment, sweep
from .topology import BUILTIN_TOPOLOGIES, serialize_topology

logger = logging.getLogger(__name__)

app = FastAPI(title="Hybrid CDN Simulator", version="0.1.0")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

config_store = ConfigStore()
run_history = RunHistory()


class ExperimentRequest(BaseModel):
    """preset 为预设名称或 id；config 中的字段覆盖预设"""

    preset: Optional[str] = None
    config: Dict[str, Any] = Field(default_factory=dict)


class CompareRequest(ExperimentRequest):
    models: List[str] = Field(default_factory=lambda: ["www", "p2p", "hybrid"])


class PresetRequest(BaseModel):
    name: str = Field(..., min_length=1)
    config: Dict[str, Any] = Field(default_factory=dict)


def _resolve(request: ExperimentRequest) -> ExperimentConfig:
    data: Dict[str, Any] = {}
    if request.preset:
        data = config_store.get(request.preset).model_dump(mode="json")
    data.update(request.config)
    return build_config(data)


def _report_json(report: AggregateReport) -> Dict[str, Any]:
    return {
        **report.headline(),
        "min_completion_s": report.min_completion,
        "max_completion_s": report.max_completion,
        "mean_core_content_bytes": report.mean_core_content_bytes,
        "excluded_runs": report.excluded,
        "out_dir": report.out_dir,
    }


def _http_error(e: Exception) -> HTTPException:
    if isinstance(e, (ConfigError, TopologyError, ChunkError)):
        return HTTPException(status_code=400, detail=str(e))
    logger.exception("模拟运行失败")
    return HTTPException(status_code=500, detail=f"模拟运行失败: {e}")


@app.post("/api/simulate")
def simulate(request: ExperimentRequest):
    try:
        config = _resolve(request)
        if config.swept_axis() is not None:
            raise ConfigError("loss / cbr 是列表时请使用 /api/sweep")
        report = run_experiment(config)
    except SimulationError as e:
        raise _http_error(e)
    record_id = run_history.append("simulate", config, report.out_dir, report.headline())
    return JSONResponse({"ok": True, "history_id": record_id, "report": _report_json(report)})


@app.post("/api/compare")
def compare(request: CompareRequest):
    try:
        config = _resolve(request)
        result = compare_models(config, request.models)
    except SimulationError as e:
        raise _http_error(e)
    headline = {m: r.headline() for m, r in result.reports.items()}
    record_id = run_history.append("compare", config, result.out_dir, headline)
    return JSONResponse({
        "ok": True,
        "history_id": record_id,
        "reports": {m: _report_json(r) for m, r in result.reports.items()},
        "rows": result.rows(),
    })


@app.post("/api/sweep")
def run_sweep(request: ExperimentRequest):
    try:
        config = _resolve(request)
        reports = sweep(config)
    except SimulationError as e:
        raise _http_error(e)
    record_id = run_history.append("sweep", config, config.out_dir, {"points": [r.headline() for r in reports]})
    return JSONResponse({"ok": True, "history_id": record_id, "points": [_report_json(r) for r in reports]})


@app.get("/api/topology/builtin")
async def builtin_topology(name: str = Query("paper")):
    if name not in BUILTIN_TOPOLOGIES:
        raise HTTPException(status_code=404, detail=f"未知内置拓扑: {name}")
    return JSONResponse({"ok": True, "name": name, "text": serialize_topology(BUILTIN_TOPOLOGIES[name]())})


@app.post("/api/pieces")
async def pieces(
    file: UploadFile = File(..., description="任意文件"),
    piece_size: int = Form(DEFAULT_PIECE_SIZE, description="分块大小（字节）"),
    algorithm: str = Form("sha1", description="摘要算法: sha1, sha256, md5"),
):
    """为上传的文件生成分块表"""
    data = await file.read()
    try:
        spec, chunks = make_pieces(data, piece_size, name=file.filename or "upload", algorithm=algorithm)
    except ChunkError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return JSONResponse({
        "ok": True,
        "name": spec.name,
        "size": spec.size,
        "piece_count": spec.piece_count,
        "pieces": piece_rows(spec, chunks),
    })


# 预设接口
@app.get("/api/configs")
async def get_configs():
    return JSONResponse({"ok": True, "configs": config_store.load()})


@app.post("/api/configs")
async def save_config(request: PresetRequest):
    try:
        preset_id = config_store.add(request.name, build_config(request.config))
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return JSONResponse({"ok": True, "id": preset_id, "message": "配置保存成功"})


@app.delete("/api/configs")
async def delete_config(config_id: str = Query(...)):
    if not config_store.delete(config_id):
        raise HTTPException(status_code=404, detail=f"未找到预设: {config_id}")
    return JSONResponse({"ok": True, "message": "配置删除成功"})


# 历史记录接口
@app.get("/api/history")
async def get_history():
    return JSONResponse({"ok": True, "history": run_history.load()})


@app.delete("/api/history")
async def delete_history_record(record_id: str = Query(...)):
    if not run_history.delete(record_id):
        raise HTTPException(status_code=404, detail=f"未找到历史记录: {record_id}")
    return JSONResponse({"ok": True})
