"""
运行报告
汇总每折每被试的相关、z 平均、d′ 表、配对 t 检验，写出 JSON/CSV/SVG
"""
import json
import os
from typing import Dict, List, Optional
import numpy as np
import pandas as pd
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from app import __version__
from app.layers.eval_metrics import bonferroni_alpha, clip_for_average, paired_t_test, z_average
from app.utils.errors import CorrDecodeError, ParseError
from app.utils.logger import logger

REPORT_SCHEMA_VERSION = 1

plt.rcParams["svg.hashsalt"] = "corrdecode"


def primary_corr(entry: Dict) -> float:
    """条目的主相关：第一典型维"""
    return float(entry["correlations"][0])


class ReportBuilder:
    """运行报告构建器"""

    @staticmethod
    def aggregate(entries: List[Dict]) -> Dict:
        """按被试与整体做 z 平均（由条目即可复算）"""
        subjects = sorted({e["subject"] for e in entries})
        per_subject = {}
        for s in subjects:
            corrs = [primary_corr(e) for e in entries if e["subject"] == s]
            per_subject[str(s)] = z_average(clip_for_average(corrs))
        overall = z_average(clip_for_average([primary_corr(e) for e in entries]))
        return {"per_subject": per_subject, "overall": overall}

    @staticmethod
    def build(config_echo: Dict, pipeline: str, entries: List[Dict], stage_dims: Dict,
              d_prime: List[Dict], wall_clock: float, comparison: Optional[Dict] = None) -> Dict:
        """组装 RunReport"""
        entries = sorted(entries, key=lambda e: (e["fold"], e["subject"]))
        agg = ReportBuilder.aggregate(entries)
        report = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "library_version": __version__,
            "pipeline": pipeline,
            "config": config_echo,
            "stage_dims": stage_dims,
            "entries": entries,
            "per_subject": agg["per_subject"],
            "overall": agg["overall"],
            "d_prime": d_prime,
            "wall_clock_seconds": round(float(wall_clock), 3),
        }
        if comparison is not None:
            report["comparison"] = comparison
        return report

    @staticmethod
    def compare_reports(report: Dict, baseline: Dict, alpha: float = 0.05, n_tests: int = 2) -> Dict:
        """
        单尾配对 t 检验（当前 > 基线），按 (折, 被试) 配对；整体与逐被试，Bonferroni 校正
        """
        threshold = bonferroni_alpha(alpha, n_tests)
        base = {(e["fold"], e["subject"]): primary_corr(e) for e in baseline["entries"]}
        pairs = [(e["subject"], primary_corr(e), base[(e["fold"], e["subject"])])
                 for e in report["entries"] if (e["fold"], e["subject"]) in base]

        def test(items) -> Dict:
            a = [x[1] for x in items]
            b = [x[2] for x in items]
            try:
                res = paired_t_test(a, b, "greater")
            except CorrDecodeError as e:
                return {"n": len(items), "t": None, "p": None, "significant": False, "note": str(e)}
            return {"n": res.n, "t": res.t, "p": res.p, "significant": res.significant(threshold)}

        per_subject = {}
        for s in sorted({p[0] for p in pairs}):
            per_subject[str(s)] = test([p for p in pairs if p[0] == s])
        return {
            "proposed": report["pipeline"],
            "baseline": baseline["pipeline"],
            "alpha": alpha,
            "bonferroni_tests": n_tests,
            "alpha_corrected": threshold,
            "overall": test(pairs),
            "per_subject": per_subject,
        }

    @staticmethod
    def dumps(report: Dict) -> str:
        return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False)

    @staticmethod
    def write_json(report: Dict, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(ReportBuilder.dumps(report))
            f.write("\n")
        return path

    @staticmethod
    def load_json(path: str) -> Dict:
        try:
            with open(path, "r", encoding="utf-8") as f:
                report = json.load(f)
        except FileNotFoundError as e:
            raise ParseError(f"报告文件不存在: {path}") from e
        except json.JSONDecodeError as e:
            raise ParseError(f"报告解析失败: {path} 第{e.lineno}行第{e.colno}列: {e.msg}") from e
        if not isinstance(report, dict) or "entries" not in report:
            raise ParseError(f"不是有效的运行报告: {path}")
        return report

    @staticmethod
    def fold_table(report: Dict) -> pd.DataFrame:
        """每折每被试相关表（每个典型维一列）"""
        rows = []
        for e in report["entries"]:
            row = {"fold": e["fold"], "subject": e["subject"], "rho": e["rho"], "n_test": e["n_test"]}
            for i, r in enumerate(e["correlations"]):
                row[f"corr_dim{i + 1}"] = r
            rows.append(row)
        return pd.DataFrame(rows)

    @staticmethod
    def write_fold_csv(report: Dict, path: str) -> str:
        ReportBuilder.fold_table(report).to_csv(path, index=False, float_format="%.17g")
        return path

    @staticmethod
    def plot_subjects(report: Dict, path: str) -> str:
        """被试相关柱状图（含整体 z 平均）"""
        labels = [f"Sub{int(s) + 1}" for s in report["per_subject"]] + ["Overall"]
        values = list(report["per_subject"].values()) + [report["overall"]]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(labels, values, color=["#4c72b0"] * (len(values) - 1) + ["#dd8452"])
        ax.set_ylabel("correlation")
        ax.set_title(report["pipeline"].upper())
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path

    @staticmethod
    def plot_d_prime(report: Dict, path: str) -> Optional[str]:
        """d′ 随片段长度变化曲线"""
        rows = [r for r in report["d_prime"] if r["mean"] is not None]
        if not rows:
            logger.warning("没有可绘制的 d′ 数据")
            return None
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([r["segment_seconds"] for r in rows], [r["mean"] for r in rows], marker="o")
        ax.set_xlabel("segment length (s)")
        ax.set_ylabel("d'")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path

    @staticmethod
    def plot_sweep(sweep: Dict, path: str) -> str:
        """超参数扫描曲线"""
        rows = sweep["rows"]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        xs = np.arange(len(rows))
        ax.plot(xs, [np.nan if r["overall"] is None else r["overall"] for r in rows], marker="o")
        ax.set_xticks(xs)
        ax.set_xticklabels([str(r["value"]) for r in rows])
        ax.set_xlabel(sweep["parameter"])
        ax.set_ylabel("overall correlation")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path
