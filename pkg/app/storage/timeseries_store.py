"""
时间序列文件读写
CSV：首行为通道名，每行一个样本，UTF-8，小数点为 '.'；
raw-f64：小端 64 位浮点、行优先，JSON 侧车 <path>.meta.json = {rows, cols, fs_hz, labels}
"""
import json
import os
from typing import Dict, Optional
import numpy as np
import pandas as pd
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, DataError, ParseError
from app.utils.logger import logger

FORMATS = ("csv", "raw-f64")


class TimeSeriesRepository:
    """时间序列文件仓库"""

    @staticmethod
    def meta_path(path: str) -> str:
        return f"{path}.meta.json"

    @staticmethod
    def read_meta(path: str, required: bool) -> Optional[Dict]:
        """读取侧车元数据"""
        meta_file = TimeSeriesRepository.meta_path(path)
        if not os.path.exists(meta_file):
            if required:
                raise ParseError(f"缺少侧车元数据: {meta_file}")
            return None
        try:
            with open(meta_file, "r", encoding="utf-8") as f:
                meta = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"侧车元数据解析失败: {meta_file} 第{e.lineno}行第{e.colno}列: {e.msg}") from e
        if not isinstance(meta, dict):
            raise ParseError(f"侧车元数据必须是JSON对象: {meta_file}")
        return meta

    @staticmethod
    def write_meta(X: TimeSeriesMatrix, path: str) -> None:
        meta = {
            "rows": X.n_samples,
            "cols": X.n_channels,
            "fs_hz": X.fs_hz,
            "labels": X.labels(),
        }
        with open(TimeSeriesRepository.meta_path(path), "w", encoding="utf-8") as f:
            json.dump(meta, f, ensure_ascii=False, indent=2)

    @staticmethod
    def ingest(path: str, fmt: str = "csv", fs_hz: Optional[float] = None) -> TimeSeriesMatrix:
        """
        读取时间序列

        Args:
            path: 文件路径
            fmt: csv 或 raw-f64
            fs_hz: 采样率；CSV 无侧车时必须提供，显式提供时优先于侧车

        Returns:
            TimeSeriesMatrix
        """
        if fmt not in FORMATS:
            raise ConfigError(f"不支持的格式: {fmt}，可选: {FORMATS}")
        if not os.path.exists(path):
            raise DataError(f"文件不存在: {path}")
        if fmt == "csv":
            X = TimeSeriesRepository._read_csv(path, fs_hz)
        else:
            X = TimeSeriesRepository._read_raw(path, fs_hz)
        logger.debug(f"读取 {path}: {X.n_samples}×{X.n_channels}, {X.fs_hz}Hz")
        return X

    @staticmethod
    def _read_csv(path: str, fs_hz: Optional[float]) -> TimeSeriesMatrix:
        try:
            df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
        except pd.errors.EmptyDataError as e:
            raise ParseError(f"CSV 为空或缺少表头: {path}") from e
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise ParseError(f"CSV 解析失败: {path}: {e}") from e
        labels = [str(c) for c in df.columns]
        for j, label in enumerate(labels):
            if label.startswith("Unnamed:") or not label.strip():
                raise ParseError(f"CSV 表头第{j + 1}列缺少通道名: {path} 第1行")
        if df.empty:
            raise ParseError(f"CSV 没有数据行: {path}")

        numeric = df.apply(pd.to_numeric, errors="coerce")
        bad = numeric.isna() & df.notna()
        if bad.to_numpy().any():
            row, col = np.argwhere(bad.to_numpy())[0]
            raise ParseError(
                f"CSV 单元格不是数值: {path} 第{row + 2}行, 列 '{labels[col]}': {df.iat[row, col]!r}"
            )
        data = numeric.to_numpy(dtype=np.float64)
        missing = ~np.isfinite(data)
        if missing.any():
            row, col = np.argwhere(missing)[0]
            raise DataError(f"数据包含非有限值: {path} 数据行={row}, 列='{labels[col]}'")

        if fs_hz is None:
            meta = TimeSeriesRepository.read_meta(path, required=False)
            if meta is None or "fs_hz" not in meta:
                raise ConfigError(f"CSV 缺少采样率: 请提供 --fs 或侧车元数据 ({path})")
            fs_hz = float(meta["fs_hz"])
        return TimeSeriesMatrix(data, fs_hz, labels)

    @staticmethod
    def _read_raw(path: str, fs_hz: Optional[float]) -> TimeSeriesMatrix:
        meta = TimeSeriesRepository.read_meta(path, required=True)
        for key in ("rows", "cols", "fs_hz"):
            if key not in meta:
                raise ParseError(f"侧车元数据缺少字段 '{key}': {TimeSeriesRepository.meta_path(path)}")
        rows, cols = int(meta["rows"]), int(meta["cols"])
        expected = rows * cols * 8
        actual = os.path.getsize(path)
        if actual != expected:
            raise ParseError(
                f"raw-f64 文件大小不匹配: {path} 期望 {expected} 字节 ({rows}×{cols}×8)，实际 {actual} 字节"
            )
        data = np.fromfile(path, dtype="<f8").reshape(rows, cols)
        labels = meta.get("labels")
        if labels is not None and len(labels) != cols:
            raise ParseError(f"侧车 labels 数量({len(labels)})与列数({cols})不一致")
        return TimeSeriesMatrix(data, fs_hz if fs_hz is not None else float(meta["fs_hz"]), labels)

    @staticmethod
    def write(X: TimeSeriesMatrix, path: str, fmt: str = "csv") -> str:
        """写出时间序列（同时写侧车元数据），返回路径"""
        if fmt not in FORMATS:
            raise ConfigError(f"不支持的格式: {fmt}，可选: {FORMATS}")
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        if fmt == "csv":
            df = pd.DataFrame(X.data, columns=X.labels())
            df.to_csv(path, index=False, encoding="utf-8", float_format="%.17g")
        else:
            np.ascontiguousarray(X.data, dtype="<f8").tofile(path)
        TimeSeriesRepository.write_meta(X, path)
        return path
