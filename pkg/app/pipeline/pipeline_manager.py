"""
流水线管理器
预处理 → （可选）MCCA/DMCCA 去噪 → 逐被试 PCA/滤波器组 → LCCA/DCCA → 交叉验证 → 报告
"""
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import numpy as np
from app.components.signal_processor import FilterBank, PcaTransform, SignalProcessor
from app.config import settings
from app.layers.deep_cca import DccaHyper, DeepCcaTrainer
from app.layers.deep_mcca import DeepMccaTrainer, DmccaHyper
from app.layers.eval_metrics import pearson, segment_classify
from app.layers.linear_cca import LinearCcaModel, fit_cca, project
from app.layers.linear_mcca import MccaModel, denoise, fit_mcca
from app.layers.training_support import DataSplit, seed_for
from app.pipeline.pipeline_config import PipelineConfig, validate_config
from app.pipeline.report_builder import ReportBuilder
from app.storage.model_store import ModelRepository
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import ConfigError, DataError, InputError, PipelineStageError
from app.utils.logger import logger


@dataclass
class StageBundle:
    """单个被试的已拟合处理链，可直接作用于新的刺激/响应文件"""
    config: PipelineConfig
    subject: int
    n_subjects: int
    m_model: Optional[object] = None
    stim_pca: Optional[PcaTransform] = None
    pca_first: Optional[PcaTransform] = None
    pca_second: Optional[PcaTransform] = None
    cca_model: Optional[object] = None
    _filterbank: Optional[FilterBank] = field(default=None, init=False, repr=False)

    @property
    def processor(self) -> SignalProcessor:
        return SignalProcessor()

    @property
    def filterbank(self) -> FilterBank:
        if self._filterbank is None:
            pre = self.config.preprocessing
            self._filterbank = self.processor.design_filterbank(pre.fs_hz, order=pre.filterbank_order)
        return self._filterbank

    def m_response(self, X: TimeSeriesMatrix) -> TimeSeriesMatrix:
        """响应经 M 阶段去噪（无 M 阶段时原样返回）"""
        if self.m_model is None:
            return X
        if isinstance(self.m_model, MccaModel):
            return denoise(self.m_model, self.subject, X, back_project=True)
        return DeepMccaTrainer().encode(self.m_model, self.subject, X)

    def m_stimulus(self, stim: TimeSeriesMatrix) -> TimeSeriesMatrix:
        """时间延迟后的刺激经 M 阶段去噪（刺激是最后一路视图）"""
        lagged = self.processor.time_lag(stim, self.config.stimulus.lags)
        if isinstance(self.m_model, MccaModel):
            return denoise(self.m_model, self.n_subjects, lagged, back_project=True)
        return DeepMccaTrainer().encode(self.m_model, self.n_subjects, lagged)

    def reduce_stimulus(self, stim: TimeSeriesMatrix) -> TimeSeriesMatrix:
        """M 阶段输出再经 PCA 回到1维"""
        if self.m_model is None:
            return stim
        return self.processor.apply_pca(self.stim_pca, self.m_stimulus(stim))

    def filter(self, X: TimeSeriesMatrix) -> TimeSeriesMatrix:
        if not self.config.preprocessing.filterbank:
            return X
        return self.processor.apply_filterbank(X, self.filterbank)

    def transform_response(self, X: TimeSeriesMatrix) -> TimeSeriesMatrix:
        p = self.processor
        reduced = p.apply_pca(self.pca_first, self.m_response(X))
        return p.apply_pca(self.pca_second, self.filter(reduced))

    def transform_stimulus(self, stim: TimeSeriesMatrix) -> TimeSeriesMatrix:
        return self.filter(self.reduce_stimulus(stim))

    def project(self, stim_t: TimeSeriesMatrix, resp_t: TimeSeriesMatrix
                ) -> Tuple[TimeSeriesMatrix, TimeSeriesMatrix]:
        """CCA 阶段投影"""
        if isinstance(self.cca_model, LinearCcaModel):
            return project(self.cca_model, stim_t, "stimulus"), project(self.cca_model, resp_t, "response")
        trainer = DeepCcaTrainer()
        return trainer.transform(self.cca_model, stim_t, "stimulus"), trainer.transform(self.cca_model, resp_t, "response")

    def to_dict(self) -> Dict:
        return {
            "kind": "stage_bundle",
            "config": self.config.model_dump(mode="json"),
            "subject": self.subject,
            "n_subjects": self.n_subjects,
            "m_model": self.m_model.to_dict() if self.m_model is not None else None,
            "stim_pca": self.stim_pca.to_dict() if self.stim_pca is not None else None,
            "pca_first": self.pca_first.to_dict(),
            "pca_second": self.pca_second.to_dict(),
            "cca_model": self.cca_model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "StageBundle":
        return cls(
            config=validate_config(d["config"]),
            subject=int(d["subject"]),
            n_subjects=int(d["n_subjects"]),
            m_model=ModelRepository.from_dict(d["m_model"]) if d.get("m_model") else None,
            stim_pca=PcaTransform.from_dict(d["stim_pca"]) if d.get("stim_pca") else None,
            pca_first=PcaTransform.from_dict(d["pca_first"]),
            pca_second=PcaTransform.from_dict(d["pca_second"]),
            cca_model=ModelRepository.from_dict(d["cca_model"]),
        )


@dataclass
class PreparedData:
    """对齐到同一采样率与长度的刺激和各被试响应"""
    stimulus: TimeSeriesMatrix
    responses: List[TimeSeriesMatrix]
    burn_in: int
    burn_out: int = 0

    @property
    def n_samples(self) -> int:
        return self.stimulus.n_samples

    @property
    def valid(self) -> np.ndarray:
        """去掉两端滤波瞬态后参与统计的样本索引"""
        return np.arange(self.burn_in, self.n_samples - self.burn_out)


@dataclass
class FoldResult:
    fold: int
    entries: List[Dict]
    projections: Dict[int, Tuple[np.ndarray, np.ndarray]]
    stage_dims: Dict[str, int]
    bundles: List[StageBundle]


@dataclass
class RunResult:
    report: Dict
    bundles: List[StageBundle]


class PipelineManager:
    """六种流水线（lcca/dcca/lmlc/lmdc/dmlc/dmdc）的交叉验证运行器"""

    def __init__(self, config: PipelineConfig, threads: Optional[int] = None,
                 out_dir: Optional[str] = None):
        self.config = config
        self.threads = max(1, threads or settings.DEFAULT_THREADS)
        self.out_dir = out_dir
        self.processor = SignalProcessor()

    # ============================================
    # 预处理与划分
    # ============================================
    def select_feature(self, stimulus: TimeSeriesMatrix) -> TimeSeriesMatrix:
        """按配置选取刺激特征列；envelope 找不到同名列时取第0列"""
        feature = self.config.stimulus.feature
        labels = stimulus.labels()
        if feature in labels:
            return stimulus.column(feature)
        if feature == "envelope":
            return TimeSeriesMatrix(stimulus.data[:, :1], stimulus.fs_hz, [labels[0]])
        raise DataError(f"刺激文件缺少特征列 '{feature}'，现有列: {labels}")

    def filter_edge(self) -> int:
        """带通与滤波器组在序列两端各自留下的零填充瞬态长度之和"""
        pre = self.config.preprocessing
        edge = 0
        if pre.bandpass is not None:
            edge += self.processor.bandpass_edge(pre.fs_hz, *pre.bandpass)
        if pre.filterbank:
            edge += self.processor.design_filterbank(pre.fs_hz, order=pre.filterbank_order).edge
        return edge

    def burn_in(self) -> int:
        """前端丢弃：滤波瞬态 + 多路流水线的延迟数，显式配置优先；基线流水线一并考虑"""
        pre = self.config.preprocessing
        if pre.burn_in is not None:
            return pre.burn_in
        multiway = self.config.is_multiway or self.config.eval.baseline in ("lmlc", "lmdc", "dmlc", "dmdc")
        lags = self.config.stimulus.lags if multiway else 0
        return self.filter_edge() + lags

    def burn_out(self) -> int:
        """末端丢弃：滤波瞬态"""
        return self.filter_edge()

    def prepare(self, stimulus: TimeSeriesMatrix, responses: Sequence[TimeSeriesMatrix]) -> PreparedData:
        """选特征、重采样到公共采样率、截断到公共长度、带通滤波"""
        if not responses:
            raise InputError("至少需要一个被试的响应数据")
        pre = self.config.preprocessing
        stim = self.processor.resample(self.select_feature(stimulus), pre.fs_hz)
        resp = [self.processor.resample(r, pre.fs_hz) for r in responses]
        lengths = [stim.n_samples] + [r.n_samples for r in resp]
        m = min(lengths)
        if max(lengths) != m:
            logger.warning(f"重采样后长度不一致 {lengths}，统一截断到 {m}")
            stim = stim.rows(slice(0, m))
            resp = [r.rows(slice(0, m)) for r in resp]
        if pre.bandpass is not None:
            low, high = pre.bandpass
            stim = self.processor.bandpass(stim, low, high)
            resp = [self.processor.bandpass(r, low, high) for r in resp]
        burn_in, burn_out = self.burn_in(), self.burn_out()
        if m - burn_in - burn_out < 4:
            raise InputError(f"有效样本数不足: 长度={m}, 前端丢弃={burn_in}, 末端丢弃={burn_out}")
        logger.info(f"预处理完成: 被试={len(resp)}, 样本={m}, 前端丢弃={burn_in}, "
                    f"末端丢弃={burn_out}, 采样率={pre.fs_hz}Hz")
        return PreparedData(stimulus=stim, responses=resp, burn_in=burn_in, burn_out=burn_out)

    def make_folds(self, prepared: PreparedData) -> List[DataSplit]:
        """
        kfold：有效样本切成 k 个连续块，第 i 折以块 i 测试、块 i+1 验证、其余训练；
        holdout：按比例划分一次，contiguous=false 时先按种子打乱
        """
        cv = self.config.cv
        valid = prepared.valid
        if cv.scheme == "kfold":
            if len(valid) < 2 * cv.folds:
                raise InputError(f"有效样本({len(valid)})不足以划分 {cv.folds} 折")
            blocks = np.array_split(valid, cv.folds)
            folds = []
            for i in range(cv.folds):
                j = (i + 1) % cv.folds
                train = np.concatenate([b for k, b in enumerate(blocks) if k not in (i, j)])
                folds.append(DataSplit(train=train, val=blocks[j], test=blocks[i]))
            return folds

        n = len(valid)
        n_train = int(round(cv.fractions[0] * n))
        n_val = int(round(cv.fractions[1] * n))
        if n_train < 2 or n_val < 2 or n - n_train - n_val < 2:
            raise InputError(f"有效样本({n})不足以按 {cv.fractions} 划分")
        order = valid if cv.contiguous else np.random.default_rng(self.config.seed).permutation(valid)
        return [DataSplit(
            train=np.sort(order[:n_train]),
            val=np.sort(order[n_train:n_train + n_val]),
            test=np.sort(order[n_train + n_val:]),
        )]

    # ============================================
    # 阶段
    # ============================================
    @contextmanager
    def _stage(self, name: str, fold: Optional[int]):
        try:
            yield
        except PipelineStageError:
            raise
        except Exception as e:
            logger.error(f"流水线阶段失败: 阶段={name}, 折={fold}: {e}", exc_info=True)
            raise PipelineStageError(name, fold, e) from e

    def _history_path(self, name: str) -> Optional[str]:
        if not self.out_dir:
            return None
        directory = os.path.join(self.out_dir, "history")
        os.makedirs(directory, exist_ok=True)
        return os.path.join(directory, f"{self.config.pipeline}_{name}.jsonl")

    def _dcca_hyper(self, seed: int) -> DccaHyper:
        mc = self.config.model
        return DccaHyper(
            d=mc.d_cca, eta=mc.eta, batch=mc.batch, dropout=mc.dropout, epochs=mc.epochs,
            seeds_tried=mc.seeds, hidden=list(mc.hidden_dcca), activation=mc.activation,
            slope=mc.leaky_slope, patience=mc.patience, corr_ridge=mc.corr_ridge, seed=seed,
        )

    def _dmcca_hyper(self, seed: int) -> DmccaHyper:
        mc = self.config.model
        return DmccaHyper(
            d=mc.d_mcca, eta=mc.eta, batch=mc.batch, dropout=mc.dropout, epochs=mc.epochs,
            seeds_tried=mc.seeds, mse_weight=mc.mse_weight, encoder_hidden=list(mc.hidden_encoder),
            decoder_hidden=list(mc.hidden_decoder), activation=mc.activation, slope=mc.leaky_slope,
            patience=mc.patience, corr_ridge=mc.corr_ridge, seed=seed,
        )

    def _fit_m_stage(self, fold: int, fold_seed: int, split: DataSplit,
                     prepared: PreparedData) -> object:
        """各被试响应 + 时间延迟刺激 作为 N 路视图拟合 MCCA/DMCCA"""
        lagged = self.processor.time_lag(prepared.stimulus, self.config.stimulus.lags)
        views = list(prepared.responses) + [lagged]
        if self.config.m_stage == "lmcca":
            return fit_mcca([v.rows(split.train) for v in views], self.config.model.d_mcca,
                            self.config.model.ridge)
        trainer = DeepMccaTrainer(self._dmcca_hyper(fold_seed), history_path=self._history_path(f"fold{fold}_dmcca"))
        return trainer.train(views, split)

    def _fit_cca_stage(self, fold: int, subject: int, fold_seed: int, split: DataSplit,
                       stim_t: TimeSeriesMatrix, resp_t: TimeSeriesMatrix) -> object:
        if self.config.cca_stage == "lcca":
            return fit_cca(stim_t.rows(split.train), resp_t.rows(split.train),
                           self.config.model.d_cca, self.config.model.ridge)
        hyper = self._dcca_hyper(seed_for(fold_seed, 100 + subject))
        trainer = DeepCcaTrainer(hyper, history_path=self._history_path(f"fold{fold}_subject{subject}"))
        return trainer.train(stim_t, resp_t, split)

    def _run_fold(self, fold: int, split: DataSplit, prepared: PreparedData) -> FoldResult:
        cfg = self.config
        pre = cfg.preprocessing
        p = self.processor
        fold_seed = seed_for(cfg.seed, fold)
        n_subjects = len(prepared.responses)
        logger.info(f"折{fold}: 训练={len(split.train)}, 验证={len(split.val)}, 测试={len(split.test)}")

        m_model, stim_pca = None, None
        if cfg.is_multiway:
            with self._stage(cfg.m_stage, fold):
                m_model = self._fit_m_stage(fold, fold_seed, split, prepared)
                stim_m = StageBundle(cfg, 0, n_subjects, m_model=m_model).m_stimulus(prepared.stimulus)
                stim_pca = p.fit_pca(stim_m.rows(split.train), 1)

        with self._stage("stimulus", fold):
            shared = StageBundle(cfg, 0, n_subjects, m_model=m_model, stim_pca=stim_pca)
            stim_reduced = shared.reduce_stimulus(prepared.stimulus)
            stim_t = shared.filter(stim_reduced)

        entries, projections, bundles, stage_dims = [], {}, [], {}
        for s, response in enumerate(prepared.responses):
            bundle = StageBundle(cfg, s, n_subjects, m_model=m_model, stim_pca=stim_pca)
            bundle._filterbank = shared._filterbank
            with self._stage("response", fold):
                resp_m = bundle.m_response(response)
                bundle.pca_first = p.fit_pca(resp_m.rows(split.train), min(pre.pca_first, resp_m.n_channels))
                resp_fb = bundle.filter(p.apply_pca(bundle.pca_first, resp_m))
                bundle.pca_second = p.fit_pca(resp_fb.rows(split.train), min(pre.pca_second, resp_fb.n_channels))
                resp_t = p.apply_pca(bundle.pca_second, resp_fb)

            with self._stage(cfg.cca_stage, fold):
                bundle.cca_model = self._fit_cca_stage(fold, s, fold_seed, split, stim_t, resp_t)
                zs, zr = bundle.project(stim_t.rows(split.test), resp_t.rows(split.test))
                corrs = [pearson(zs.data[:, i], zr.data[:, i]) for i in range(zs.n_channels)]

            entries.append({
                "fold": fold,
                "subject": s,
                "correlations": corrs,
                "rho": float(np.sum(corrs)),
                "n_test": int(len(split.test)),
            })
            projections[s] = (zs.data[:, 0], zr.data[:, 0])
            bundles.append(bundle)
            if s == 0:
                stage_dims = {
                    "response_input": response.n_channels,
                    "response_mstage": resp_m.n_channels,
                    "response_pca_first": bundle.pca_first.k,
                    "response_filterbank": resp_fb.n_channels,
                    "response_pca_second": bundle.pca_second.k,
                    "stimulus_input": prepared.stimulus.n_channels,
                    "stimulus_reduced": stim_reduced.n_channels,
                    "stimulus_filterbank": stim_t.n_channels,
                    "cca_dims": zs.n_channels,
                }
            logger.info(f"折{fold} 被试{s}: 测试相关={[round(c, 4) for c in corrs]}")
        return FoldResult(fold=fold, entries=entries, projections=projections,
                          stage_dims=stage_dims, bundles=bundles)

    # ============================================
    # 运行
    # ============================================
    def run_folds(self, prepared: PreparedData, folds: List[DataSplit]) -> List[FoldResult]:
        """折间并行；结果按折编号顺序返回"""
        if self.config.is_multiway and len(prepared.responses) < 2:
            raise InputError(f"多路流水线 {self.config.pipeline} 至少需要2个被试，实际: {len(prepared.responses)}")
        workers = min(self.threads, len(folds))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda item: self._run_fold(item[0], item[1], prepared), enumerate(folds)))

    def d_prime_table(self, projections: Dict[int, Tuple[np.ndarray, np.ndarray]]) -> List[Dict]:
        """按片段长度计算各被试的 d′；记录太短时该格为 null 并附原因"""
        cfg = self.config
        rows = []
        for i, seconds in enumerate(cfg.eval.segment_seconds):
            per_subject, notes = {}, {}
            for s, (zs, zr) in sorted(projections.items()):
                try:
                    res = segment_classify(zs, zr, seconds, cfg.eval.n_segments,
                                           rng_seed=seed_for(cfg.seed, 1000 + i),
                                           fs_hz=cfg.preprocessing.fs_hz)
                    per_subject[str(s)] = res.d_prime
                except DataError as e:
                    per_subject[str(s)] = None
                    notes[str(s)] = str(e)
            values = [v for v in per_subject.values() if v is not None]
            row = {
                "segment_seconds": float(seconds),
                "per_subject": per_subject,
                "mean": float(np.mean(values)) if values else None,
            }
            if notes:
                row["notes"] = notes
            rows.append(row)
        return rows

    def run(self, stimulus: TimeSeriesMatrix, responses: Sequence[TimeSeriesMatrix]) -> RunResult:
        """
        运行完整流水线

        Returns:
            RunResult：报告字典与第0折各被试的处理链
        """
        start = time.time()
        cfg = self.config
        with self._stage("prepare", None):
            prepared = self.prepare(stimulus, responses)
            folds = self.make_folds(prepared)
        logger.info(f"开始运行 {cfg.pipeline}: {len(folds)} 折, 线程={self.threads}")
        results = self.run_folds(prepared, folds)

        entries = [e for r in results for e in r.entries]
        projections: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        for s in range(len(prepared.responses)):
            projections[s] = (
                np.concatenate([r.projections[s][0] for r in results]),
                np.concatenate([r.projections[s][1] for r in results]),
            )
        with self._stage("evaluate", None):
            d_prime = self.d_prime_table(projections)

        comparison = None
        if cfg.eval.baseline is not None:
            comparison = self._compare_baseline(prepared, folds, entries)

        report = ReportBuilder.build(
            config_echo=cfg.model_dump(mode="json"),
            pipeline=cfg.pipeline,
            entries=entries,
            stage_dims=results[0].stage_dims,
            d_prime=d_prime,
            wall_clock=time.time() - start,
            comparison=comparison,
        )
        logger.info(f"{cfg.pipeline} 完成: 整体相关={report['overall']:.4f}, 用时={report['wall_clock_seconds']}s")
        result = RunResult(report=report, bundles=results[0].bundles)
        if self.out_dir:
            self.write_outputs(result, self.out_dir)
        return result

    def _compare_baseline(self, prepared: PreparedData, folds: List[DataSplit], entries: List[Dict]) -> Dict:
        """在相同折上运行基线流水线并做配对 t 检验"""
        cfg = self.config
        base_cfg = cfg.model_copy(update={
            "pipeline": cfg.eval.baseline,
            "eval": cfg.eval.model_copy(update={"baseline": None}),
        })
        logger.info(f"运行基线流水线 {base_cfg.pipeline}")
        base_results = PipelineManager(base_cfg, self.threads).run_folds(prepared, folds)
        base_entries = sorted((e for r in base_results for e in r.entries), key=lambda e: (e["fold"], e["subject"]))
        baseline = {"pipeline": base_cfg.pipeline, "entries": base_entries}
        comparison = ReportBuilder.compare_reports(
            {"pipeline": cfg.pipeline, "entries": entries}, baseline,
            cfg.eval.alpha, cfg.eval.bonferroni_tests,
        )
        comparison["baseline_entries"] = base_entries
        comparison.update({f"baseline_{k}": v for k, v in ReportBuilder.aggregate(base_entries).items()})
        return comparison

    def write_outputs(self, result: RunResult, out_dir: str) -> None:
        """写出 report.json、folds.csv、SVG 图与第0折处理链"""
        os.makedirs(out_dir, exist_ok=True)
        ReportBuilder.write_json(result.report, os.path.join(out_dir, "report.json"))
        ReportBuilder.write_fold_csv(result.report, os.path.join(out_dir, "folds.csv"))
        ReportBuilder.plot_subjects(result.report, os.path.join(out_dir, "subjects.svg"))
        ReportBuilder.plot_d_prime(result.report, os.path.join(out_dir, "d_prime.svg"))
        for bundle in result.bundles:
            ModelRepository.save(bundle, os.path.join(out_dir, "bundles", f"subject{bundle.subject}.json"))
        logger.info(f"输出已写入 {out_dir}")

    # ============================================
    # 评估已保存的处理链
    # ============================================
    def evaluate(self, bundle: StageBundle, stimulus: TimeSeriesMatrix,
                 response: TimeSeriesMatrix) -> Dict:
        """把保存的处理链作用于新数据，报告逐维相关与 d′ 表"""
        if bundle.config.pipeline != self.config.pipeline:
            raise ConfigError(f"处理链属于 {bundle.config.pipeline}，与当前配置 {self.config.pipeline} 不一致")
        with self._stage("prepare", None):
            prepared = self.prepare(stimulus, [response])
        with self._stage(self.config.cca_stage, None):
            stim_t = bundle.transform_stimulus(prepared.stimulus)
            resp_t = bundle.transform_response(prepared.responses[0])
            zs, zr = bundle.project(stim_t.rows(prepared.valid), resp_t.rows(prepared.valid))
            corrs = [pearson(zs.data[:, i], zr.data[:, i]) for i in range(zs.n_channels)]
        d_prime = self.d_prime_table({bundle.subject: (zs.data[:, 0], zr.data[:, 0])})
        return {
            "pipeline": self.config.pipeline,
            "subject": bundle.subject,
            "n_samples": int(len(prepared.valid)),
            "correlations": corrs,
            "rho": float(np.sum(corrs)),
            "d_prime": d_prime,
        }
