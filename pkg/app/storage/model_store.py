"""
模型检查点读写（JSON）
"""
import json
import os
from typing import Any, Dict
from app.utils.errors import ParseError
from app.utils.logger import logger


class ModelRepository:
    """模型检查点仓库：所有模型以 to_dict/from_dict 序列化为 JSON"""

    @staticmethod
    def _registry() -> Dict[str, Any]:
        from app.layers.deep_cca import DccaModel
        from app.layers.deep_mcca import DmccaModel
        from app.layers.linear_cca import LinearCcaModel
        from app.layers.linear_mcca import MccaModel
        from app.pipeline.pipeline_manager import StageBundle
        return {
            "lcca": LinearCcaModel,
            "lmcca": MccaModel,
            "dcca": DccaModel,
            "dmcca": DmccaModel,
            "stage_bundle": StageBundle,
        }

    @staticmethod
    def save_dict(payload: Dict, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False)
        return path

    @staticmethod
    def load_dict(path: str) -> Dict:
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except FileNotFoundError as e:
            raise ParseError(f"模型文件不存在: {path}") from e
        except json.JSONDecodeError as e:
            raise ParseError(f"模型文件解析失败: {path} 第{e.lineno}行第{e.colno}列: {e.msg}") from e

    @staticmethod
    def save(model, path: str) -> str:
        """保存模型"""
        ModelRepository.save_dict(model.to_dict(), path)
        logger.debug(f"模型已保存: {path}")
        return path

    @staticmethod
    def from_dict(payload: Dict):
        """按 kind 字段还原模型"""
        kind = payload.get("kind") if isinstance(payload, dict) else None
        registry = ModelRepository._registry()
        if kind not in registry:
            raise ParseError(f"未知的模型类型: {kind}，可选: {sorted(registry)}")
        try:
            return registry[kind].from_dict(payload)
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"模型字段不完整或非法 ({kind}): {e}") from e

    @staticmethod
    def load(path: str):
        """读取模型"""
        return ModelRepository.from_dict(ModelRepository.load_dict(path))
