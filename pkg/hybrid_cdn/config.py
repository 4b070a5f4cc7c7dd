"""
配置层：引擎/协议参数、实验配置，以及预设与运行历史的 JSON 存储
"""

import json
import logging
import os
import tempfile
import time
import uuid
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

APP_ROOT = Path(__file__).resolve().parent.parent
CONFIG_FILE = APP_ROOT / "saved_configs.json"
HISTORY_FILE = APP_ROOT / "history.json"

MiB = 1 << 20
KiB = 1 << 10


class ModelName(str, Enum):
    WWW = "www"
    P2P = "p2p"
    HYBRID = "hybrid"


class EngineSettings(BaseModel):
    """分组大小与可靠流（TCP 替身）参数"""

    model_config = ConfigDict(extra="forbid")

    header_bytes: int = Field(50, gt=0)
    payload_bytes: int = Field(1250, gt=0)
    window: int = Field(8, ge=1)
    rto_factor: float = Field(4.0, gt=0)
    rto_backoff: float = Field(2.0, ge=1.0)
    rto_backoff_cap: float = Field(64.0, ge=1.0)
    max_retries: int = Field(16, ge=1)
    queue_capacity: int = Field(50, ge=1)


class ProtocolSettings(BaseModel):
    """握手、批次、端口池、选块和多播相关参数（单位：模拟秒）"""

    model_config = ConfigDict(extra="forbid")

    handshake_timeout: float = Field(2.0, gt=0)
    retry_backoff: float = Field(5.0, gt=0)
    global_attempt_limit: int = Field(32, ge=1)
    batch_size: int = Field(4, ge=1)
    port_pool: int = Field(4, ge=1)
    upload_slots: int = Field(4, ge=1)
    rechoke_interval: float = Field(10.0, gt=0)
    peer_list_size: int = Field(20, ge=1)
    multicast_ttl: int = Field(3, ge=0)
    multicast_holdoff: float = Field(0.5, ge=0)
    multicast_grace: float = Field(1.0, ge=0)
    claim_timeout: float = Field(20.0, gt=0)
    control_bytes: int = Field(64, gt=0)
    transfer_stall: float = Field(30.0, gt=0)
    start_jitter: float = Field(1.0, ge=0)
    max_sim_time: float = Field(1800.0, gt=0)


class ExperimentConfig(BaseModel):
    """一次实验（或扫描）的完整配置；loss / cbr 以比例存储"""

    model_config = ConfigDict(extra="forbid")

    model: ModelName = ModelName.HYBRID
    topology: str = "builtin:paper"
    file_size: int = Field(MiB, gt=0)
    piece_size: int = Field(256 * KiB, ge=1)
    runs: int = Field(5, ge=1)
    base_seed: int = 0
    loss: List[float] = Field(default_factory=lambda: [0.0])
    cbr: List[float] = Field(default_factory=lambda: [0.0])
    loss_scope: Literal["spokes", "lan", "all"] = "spokes"
    out_dir: str = "outputs"
    workers: int = Field(1, ge=1)
    engine: EngineSettings = Field(default_factory=EngineSettings)
    protocol: ProtocolSettings = Field(default_factory=ProtocolSettings)

    @field_validator("loss", "cbr")
    @classmethod
    def _check_axis(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("列表不能为空")
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"取值 {v} 超出 [0, 1]")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("列表必须严格升序")
        return values

    def swept_axis(self) -> Optional[str]:
        """返回被扫描的轴；两个轴同时为多值时报错"""
        multi = [name for name in ("loss", "cbr") if len(getattr(self, name)) > 1]
        if len(multi) > 1:
            raise ConfigError("一次只能扫描一个轴（loss 或 cbr）")
        return multi[0] if multi else None

    def at_point(self, loss: float, cbr: float) -> "ExperimentConfig":
        return self.model_copy(update={"loss": [loss], "cbr": [cbr]})


def build_config(data: Optional[Dict[str, Any]] = None, **overrides: Any) -> ExperimentConfig:
    """从字典构建配置，pydantic 校验错误统一转为 ConfigError"""
    merged = dict(data or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"配置无效: {e}") from e


def parse_percent_list(text: str) -> List[float]:
    """'0,1,2.5' -> [0.0, 0.01, 0.025]"""
    try:
        values = [float(part) / 100.0 for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"无法解析百分比列表: {text!r}") from e
    if not values:
        raise ConfigError("百分比列表为空")
    return values


def _write_json_atomic(path: Path, data: Any, max_retries: int = 3, retry_delay: float = 0.2) -> None:
    """写临时文件后原子替换，并回读校验"""
    content = json.dumps(data, ensure_ascii=False, indent=2)
    for attempt in range(max_retries):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(
                mode="w", encoding="utf-8", suffix=".tmp", dir=str(path.parent), delete=False
            ) as tmp:
                tmp.write(content)
                tmp.flush()
                os.fsync(tmp.fileno())
                tmp_name = tmp.name
            os.replace(tmp_name, path)
            with open(path, "r", encoding="utf-8") as f:
                if json.load(f) == data:
                    return
            raise OSError("文件验证失败")
        except OSError as e:
            if attempt < max_retries - 1:
                time.sleep(retry_delay * (2 ** attempt))
                continue
            msg = str(e)
            if "Permission denied" in msg:
                msg = "权限不足 - 检查目录写权限"
            elif "read-only" in msg.lower():
                msg = "目录只读"
            raise ConfigError(f"无法保存 {path.name}: {msg}") from e


def _load_json(path: Path, default: Any) -> Any:
    try:
        if path.exists():
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
    except (OSError, json.JSONDecodeError):
        logger.warning("无法读取 %s，使用空内容", path)
    return default


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class ConfigStore:
    """实验预设（saved_configs.json）"""

    def __init__(self, path: Path = CONFIG_FILE):
        self.path = Path(path)

    def load(self) -> Dict[str, List[dict]]:
        data = _load_json(self.path, {"experiments": []})
        if not isinstance(data, dict) or not isinstance(data.get("experiments"), list):
            return {"experiments": []}
        return data

    def add(self, name: str, config: ExperimentConfig) -> str:
        data = self.load()
        preset_id = str(uuid.uuid4())
        data["experiments"].append({
            "id": preset_id,
            "name": name,
            "config": config.model_dump(mode="json"),
            "created_at": _now(),
        })
        _write_json_atomic(self.path, data)
        return preset_id

    def get(self, key: str) -> ExperimentConfig:
        """按 id 或名称查找预设"""
        for preset in self.load()["experiments"]:
            if preset.get("id") == key or preset.get("name") == key:
                return build_config(preset.get("config", {}))
        raise ConfigError(f"未找到预设: {key}")

    def delete(self, preset_id: str) -> bool:
        data = self.load()
        kept = [p for p in data["experiments"] if p.get("id") != preset_id]
        if len(kept) == len(data["experiments"]):
            return False
        data["experiments"] = kept
        _write_json_atomic(self.path, data)
        return True


class RunHistory:
    """实验运行记录（history.json）"""

    def __init__(self, path: Path = HISTORY_FILE):
        self.path = Path(path)

    def load(self) -> List[dict]:
        data = _load_json(self.path, [])
        return data if isinstance(data, list) else []

    def append(self, kind: str, config: ExperimentConfig, out_dir: str, headline: Dict[str, Any]) -> str:
        history = self.load()
        record_id = str(uuid.uuid4())
        history.append({
            "id": record_id,
            "kind": kind,
            "config": config.model_dump(mode="json"),
            "out_dir": out_dir,
            "headline": headline,
            "created_at": _now(),
        })
        _write_json_atomic(self.path, history)
        return record_id

    def delete(self, record_id: str) -> bool:
        history = self.load()
        kept = [h for h in history if h.get("id") != record_id]
        if len(kept) == len(history):
            return False
        _write_json_atomic(self.path, kept)
        return True
