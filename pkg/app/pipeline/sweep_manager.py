"""
超参数扫描
在固定的折划分上对单个参数逐值运行流水线
"""
import os
from typing import Any, Dict, List, Optional, Sequence
from app.pipeline.pipeline_config import PipelineConfig, validate_config
from app.pipeline.pipeline_manager import PipelineManager
from app.pipeline.report_builder import ReportBuilder
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, NumericError, PipelineStageError
from app.utils.logger import logger

SWEEP_PARAMETERS = ("dropout", "batch", "d", "d_s", "mse_weight", "depth")


class SweepManager:
    """超参数扫描管理器"""

    def __init__(self, config: PipelineConfig, threads: Optional[int] = None,
                 out_dir: Optional[str] = None):
        self.config = config
        self.threads = threads
        self.out_dir = out_dir

    def apply(self, parameter: str, value: Any) -> PipelineConfig:
        """返回设置了该参数值的新配置（重新校验）"""
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"未知的扫描参数: {parameter}，可选: {SWEEP_PARAMETERS}")
        data = self.config.model_dump(mode="json")
        model = data["model"]
        if parameter == "dropout":
            model["dropout"] = value
        elif parameter == "batch":
            model["batch"] = value
        elif parameter == "d":
            model["d_mcca" if self.config.is_multiway else "d_cca"] = value
        elif parameter == "d_s":
            data["stimulus"]["lags"] = value
        elif parameter == "mse_weight":
            model["mse_weight"] = value
        else:
            depth = int(value)
            if depth < 1 or depth != value:
                raise ConfigError(f"隐层数必须是正整数: {value}")
            for key in ("hidden_dcca", "hidden_encoder", "hidden_decoder"):
                if not model[key]:
                    raise ConfigError(f"{key} 为空，无法按首层宽度设置隐层数")
                model[key] = [model[key][0]] * depth
        return validate_config(data)

    def sweep(self, parameter: str, values: Sequence[Any], stimulus: TimeSeriesMatrix,
              responses: Sequence[TimeSeriesMatrix]) -> Dict:
        """
        逐值运行流水线

        折划分只取决于主种子与有效样本数，d_s 改变烧入期时由显式 burn_in 固定划分；
        训练发散的取值记为 overall=None 并附错误信息，不中断其余取值
        """
        if not values:
            raise ConfigError("扫描取值不能为空")
        configs = [self.apply(parameter, v) for v in values]
        if parameter == "d_s" and self.config.preprocessing.burn_in is None:
            burn_in = max(PipelineManager(c).burn_in() for c in configs)
            configs = [c.model_copy(update={
                "preprocessing": c.preprocessing.model_copy(update={"burn_in": burn_in})
            }) for c in configs]

        rows: List[Dict] = []
        for value, cfg in zip(values, configs):
            logger.info(f"扫描 {parameter}={value}")
            try:
                report = PipelineManager(cfg, self.threads).run(stimulus, responses).report
            except PipelineStageError as e:
                if not isinstance(e.cause, NumericError):
                    raise
                logger.warning(f"扫描 {parameter}={value} 训练发散，记为空结果: {e}")
                rows.append({"value": value, "overall": None, "per_subject": {}, "entries": [], "error": str(e)})
                continue
            rows.append({
                "value": value,
                "overall": report["overall"],
                "per_subject": report["per_subject"],
                "entries": report["entries"],
            })
        result = {
            "parameter": parameter,
            "pipeline": self.config.pipeline,
            "config": self.config.model_dump(mode="json"),
            "rows": rows,
        }
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            ReportBuilder.write_json(result, os.path.join(self.out_dir, f"sweep_{parameter}.json"))
            ReportBuilder.plot_sweep(result, os.path.join(self.out_dir, f"sweep_{parameter}.svg"))
        return result
