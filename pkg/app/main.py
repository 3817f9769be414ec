"""
命令行入口
python -m app.main <fit|evaluate|sweep|synth|features|report> [选项]
退出码：0 成功，2 配置错误，3 数据错误，4 数值失败
"""
import argparse
import dataclasses
import json
import os
import sys
from typing import Dict, List, Optional, Tuple
import librosa
from app.components.acoustic_feature_calculator import AcousticFeatureCalculator
from app.components.signal_processor import SignalProcessor
from app.components.synth_generator import SynthGenerator
from app.config import settings
from app.pipeline.pipeline_config import PipelineConfig, load_pipeline_config, validate_config
from app.pipeline.pipeline_manager import PipelineManager, StageBundle
from app.pipeline.report_builder import ReportBuilder
from app.pipeline.sweep_manager import SweepManager
from app.storage.model_store import ModelRepository
from app.storage.models import SynthSpec, TimeSeriesMatrix
from app.storage.timeseries_store import FORMATS, TimeSeriesRepository
from app.utils.errors import ConfigError, CorrDecodeError, InputError
from app.utils.logger import logger


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrdecode", description=f"{settings.APP_NAME} v{settings.APP_VERSION}")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="流水线配置JSON")
        p.add_argument("--out-dir", help="输出目录")
        p.add_argument("--seed", type=int, help="主随机种子（覆盖配置）")
        p.add_argument("--threads", type=int, default=settings.DEFAULT_THREADS, help="并行线程数")

    def data(p: argparse.ArgumentParser, multi: bool = True) -> None:
        p.add_argument("--stimulus", required=True, help="刺激时间序列文件")
        p.add_argument("--response", required=True, action="append" if multi else "store",
                       help="响应时间序列文件" + ("（可重复，每个被试一个）" if multi else ""))
        p.add_argument("--format", choices=FORMATS, default="csv", help="文件格式")
        p.add_argument("--fs", type=float, help="采样率（CSV 无侧车元数据时必需）")

    p = sub.add_parser("fit", help="运行流水线交叉验证")
    common(p)
    data(p)

    p = sub.add_parser("evaluate", help="用保存的处理链评估新数据")
    common(p)
    data(p, multi=False)
    p.add_argument("--bundle", required=True, help="fit 输出的 bundles/subjectN.json")

    p = sub.add_parser("sweep", help="超参数扫描")
    common(p)
    data(p)
    p.add_argument("--param", required=True, help="dropout|batch|d|d_s|mse_weight|depth")
    p.add_argument("--values", required=True, help="逗号分隔的取值，如 0,0.1,1")

    p = sub.add_parser("synth", help="生成合成数据")
    common(p)
    p.add_argument("--spec", help="合成规格JSON（SynthSpec 字段）")
    p.add_argument("--format", choices=FORMATS, default="csv")

    p = sub.add_parser("features", help="从音频提取声学特征与包络")
    common(p)
    p.add_argument("--audio", required=True, help="音频文件（librosa 可读）")

    p = sub.add_parser("report", help="由报告JSON重绘图表、可选与基线对比")
    common(p)
    p.add_argument("--report", required=True, help="report.json")
    p.add_argument("--baseline", help="基线 report.json")
    return parser


def load_config(args) -> PipelineConfig:
    """读取配置文件（缺省为默认配置），命令行种子覆盖配置"""
    cfg = load_pipeline_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        data = cfg.model_dump(mode="json")
        data["seed"] = args.seed
        cfg = validate_config(data)
    return cfg


def ingest_inputs(args) -> Tuple[TimeSeriesMatrix, List[TimeSeriesMatrix]]:
    stim = TimeSeriesRepository.ingest(args.stimulus, args.format, args.fs)
    paths = args.response if isinstance(args.response, list) else [args.response]
    return stim, [TimeSeriesRepository.ingest(p, args.format, args.fs) for p in paths]


def emit(payload: Dict) -> None:
    print(ReportBuilder.dumps(payload))


def cmd_fit(args) -> int:
    cfg = load_config(args)
    stim, responses = ingest_inputs(args)
    result = PipelineManager(cfg, args.threads, args.out_dir).run(stim, responses)
    if args.out_dir:
        emit({"overall": result.report["overall"], "per_subject": result.report["per_subject"],
              "out_dir": args.out_dir})
    else:
        emit(result.report)
    return 0


def cmd_evaluate(args) -> int:
    bundle = ModelRepository.load(args.bundle)
    if not isinstance(bundle, StageBundle):
        raise ConfigError(f"不是处理链文件: {args.bundle}")
    stim, responses = ingest_inputs(args)
    result = PipelineManager(bundle.config, args.threads).evaluate(bundle, stim, responses[0])
    if args.out_dir:
        ReportBuilder.write_json(result, os.path.join(args.out_dir, "evaluate.json"))
    emit(result)
    return 0


def parse_values(text: str) -> List:
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            values.append(json.loads(item))
        except json.JSONDecodeError as e:
            raise ConfigError(f"扫描取值无法解析: {item!r}") from e
    return values


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    stim, responses = ingest_inputs(args)
    result = SweepManager(cfg, args.threads, args.out_dir).sweep(args.param, parse_values(args.values), stim, responses)
    emit({"parameter": result["parameter"],
          "rows": [{"value": r["value"], "overall": r["overall"]} for r in result["rows"]]})
    return 0


def load_synth_spec(path: Optional[str], seed: Optional[int]) -> SynthSpec:
    data = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"合成规格文件不存在: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"合成规格解析失败: {path} 第{e.lineno}行第{e.colno}列: {e.msg}") from e
    known = {f.name for f in dataclasses.fields(SynthSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"合成规格包含未知字段: {unknown}")
    if seed is not None:
        data["seed"] = seed
    return SynthSpec(**data)


def cmd_synth(args) -> int:
    if not args.out_dir:
        raise ConfigError("synth 需要 --out-dir")
    spec = load_synth_spec(args.spec, args.seed)
    generator = SynthGenerator()
    bundle = generator.generate(spec)
    ext = "csv" if args.format == "csv" else "f64"
    files = []
    for n, view in enumerate(bundle.views):
        files.append(TimeSeriesRepository.write(view, os.path.join(args.out_dir, f"view{n}.{ext}"), args.format))
    TimeSeriesRepository.write(bundle.latent, os.path.join(args.out_dir, f"latent.{ext}"), args.format)
    summary = {
        "spec": dataclasses.asdict(spec),
        "population_corr": bundle.population_corr,
        "empirical_snr_db": [generator.empirical_snr_db(bundle, n) for n in range(spec.n_views)],
        "views": files,
    }
    ReportBuilder.write_json(summary, os.path.join(args.out_dir, "bundle.json"))
    emit(summary)
    return 0


def cmd_features(args) -> int:
    if not args.out_dir:
        raise ConfigError("features 需要 --out-dir")
    cfg = load_config(args)
    try:
        audio, sr = librosa.load(args.audio, sr=None, mono=True)
    except Exception as e:
        raise InputError(f"音频读取失败: {args.audio}: {e}") from e
    calculator = AcousticFeatureCalculator()
    features = calculator.extract_features(audio, sr)
    stim3d = calculator.stimulus_3d(features)
    env = SignalProcessor().envelope(audio, sr, fs_out=cfg.preprocessing.fs_hz)
    out = {
        "features": TimeSeriesRepository.write(features, os.path.join(args.out_dir, "features.csv")),
        "stimulus_3d": TimeSeriesRepository.write(stim3d, os.path.join(args.out_dir, "stimulus_3d.csv")),
        "envelope": TimeSeriesRepository.write(env, os.path.join(args.out_dir, "envelope.csv")),
        "frame_rate_hz": features.fs_hz,
        "n_frames": features.n_samples,
    }
    emit(out)
    return 0


def cmd_report(args) -> int:
    report = ReportBuilder.load_json(args.report)
    summary = ReportBuilder.aggregate(report["entries"])
    summary["pipeline"] = report.get("pipeline")
    if args.baseline:
        baseline = ReportBuilder.load_json(args.baseline)
        ev = report.get("config", {}).get("eval", {})
        summary["comparison"] = ReportBuilder.compare_reports(
            report, baseline, ev.get("alpha", 0.05), ev.get("bonferroni_tests", 2)
        )
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        ReportBuilder.write_fold_csv(report, os.path.join(args.out_dir, "folds.csv"))
        ReportBuilder.plot_subjects(report, os.path.join(args.out_dir, "subjects.svg"))
        ReportBuilder.plot_d_prime(report, os.path.join(args.out_dir, "d_prime.svg"))
    emit(summary)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "features": cmd_features,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except CorrDecodeError as e:
        logger.error(f"{args.verb} 失败: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.verb} 发生未预期错误: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
