"""
报告存储

- 单次运行报告: JSON Lines，每行一个记录，"record" 字段区分类型
    manifest  种子、配置哈希、全部生效配置
    cycle     每个适配 cycle 的诊断
    result    各阶段指标与最终快照 id
  不写时间戳，相同 (配置, 种子) 得到相同字节。
- 汇总表: 制表符分隔 (summary.tsv / ablation.tsv)
- 消融单元存储: SQLite，主键 (config_hash, seed)，重跑时跳过已完成单元
"""

import json
import logging
import sqlite3
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ValidationError

from app.exceptions import DatasetFormatError
from app.models.schemas import CycleDiagnostics, RunManifest, RunReport

logger = logging.getLogger(__name__)

RESULT_FIELDS = (
    "seed", "config_hash", "reweigh", "pretrain_snapshot_id", "snapshot_id",
    "source_train", "source_only", "adapted",
)


def _line(record: str, payload: Dict[str, Any]) -> str:
    return json.dumps({"record": record, **payload}, sort_keys=True, separators=(",", ":"))


def report_lines(report: RunReport, manifest: RunManifest) -> List[str]:
    """报告 -> JSONL 行"""
    dumped = report.model_dump(mode="json")
    lines = [_line("manifest", manifest.model_dump(mode="json"))]
    lines.extend(_line("cycle", cycle) for cycle in dumped["cycles"])
    lines.append(_line("result", {key: dumped[key] for key in RESULT_FIELDS}))
    return lines


def write_report(report: RunReport, manifest: RunManifest, path: Union[str, Path]) -> Path:
    """写入一次运行的 JSONL 报告"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(report_lines(report, manifest)) + "\n")
    logger.info(f"Report written: {path}")
    return path


def read_report(path: Union[str, Path]) -> Tuple[RunManifest, RunReport]:
    """读取 JSONL 报告"""
    path = Path(path)
    manifest, result, cycles = None, None, []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                kind = record.pop("record")
                if kind == "manifest":
                    manifest = RunManifest.model_validate(record)
                elif kind == "cycle":
                    cycles.append(CycleDiagnostics.model_validate(record))
                elif kind == "result":
                    result = record
    except (OSError, ValueError, KeyError, ValidationError) as e:
        raise DatasetFormatError(f"{path}: cannot read report: {e}") from e
    if manifest is None or result is None:
        raise DatasetFormatError(f"{path}: report is missing its manifest or result record")
    return manifest, RunReport.model_validate({**result, "cycles": [c.model_dump() for c in cycles]})


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    if isinstance(value, (list, tuple)):
        return ",".join(_cell(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def write_table(rows: Sequence[BaseModel], path: Union[str, Path]) -> Path:
    """把同类型的 pydantic 记录写成 TSV，列顺序即字段顺序"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if rows:
        columns = list(type(rows[0]).model_fields)
        lines.append("\t".join(columns))
        for row in rows:
            lines.append("\t".join(_cell(getattr(row, column)) for column in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    logger.info(f"Table written: {path} ({len(rows)} rows)")
    return path


class AblationStore:
    """
    消融单元存储 (SQLite)

    每个 (config_hash, seed) 保存一份完整的 RunReport JSON；
    网格重跑时已完成的单元直接读取。
    """

    def __init__(self, db_path: Union[str, Path]):
        self._db_path = str(db_path)
        self._lock = threading.Lock()
        Path(self._db_path).parent.mkdir(parents=True, exist_ok=True)
        self._init_db()

    @contextmanager
    def _get_connection(self):
        """获取数据库连接的上下文管理器"""
        conn = sqlite3.connect(self._db_path, timeout=30.0)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
        finally:
            conn.close()

    def _init_db(self):
        with self._get_connection() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS ablation_cells (
                    config_hash TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    label TEXT NOT NULL,
                    report TEXT NOT NULL,
                    created_at TEXT DEFAULT CURRENT_TIMESTAMP,
                    PRIMARY KEY (config_hash, seed)
                )
            """)
            conn.commit()
        logger.debug(f"Ablation store ready: {self._db_path}")

    def get(self, config_hash: str, seed: int) -> Optional[RunReport]:
        with self._get_connection() as conn:
            row = conn.execute(
                "SELECT report FROM ablation_cells WHERE config_hash = ? AND seed = ?",
                (config_hash, seed),
            ).fetchone()
        if row is None:
            return None
        return RunReport.model_validate_json(row["report"])

    def put(self, report: RunReport, label: str = "") -> None:
        with self._lock:
            with self._get_connection() as conn:
                conn.execute(
                    "INSERT OR REPLACE INTO ablation_cells (config_hash, seed, label, report) VALUES (?, ?, ?, ?)",
                    (report.config_hash, report.seed, label, report.model_dump_json()),
                )
                conn.commit()

    def completed(self) -> List[Tuple[str, int]]:
        with self._get_connection() as conn:
            rows = conn.execute("SELECT config_hash, seed FROM ablation_cells ORDER BY config_hash, seed").fetchall()
        return [(row["config_hash"], int(row["seed"])) for row in rows]

    @property
    def total_cells(self) -> int:
        with self._get_connection() as conn:
            return conn.execute("SELECT COUNT(*) FROM ablation_cells").fetchone()[0]
