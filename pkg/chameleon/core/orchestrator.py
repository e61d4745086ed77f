import json
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from chameleon.core.encoder import EncoderParams, heatmap, recovery_rate
from chameleon.core.errors import ChameleonError, DependencyError
from chameleon.core.experiment import ExperimentConfig, deviations
from chameleon.core.logger import setup_logger
from chameleon.core.meta.evaluation import EvalReport, adaptation_curve, evaluate
from chameleon.core.meta.models import VARIANT_POLICY, CombinedInit, fresh_encoder, initial_params
from chameleon.core.meta.persistence import (
    load_checkpoint, load_encoder, pretrain_rows, save_checkpoint, write_manifest, write_report,
    write_trace,
)
from chameleon.core.meta.training import meta_train
from chameleon.core.reorder import reorder_train
from chameleon.core.sampler import (
    load_table, load_task_cache, make_split, sample_eval_tasks, save_task_cache, task_cache_key,
)
from chameleon.core.schemas import DatasetTable, SplitSpec, StageResult, Task, Variant
from chameleon.core.stats import RunReport, aggregate, improvement_over, significance_table
from chameleon.core.utils import atomic_write_csv, derive_rng, format_summary_table

logger = setup_logger(__name__)

# =================================================================================================
# TOUR HEADER: Orchestrator
# =================================================================================================
#
# WHAT THIS FILE DOES:
# Drives the experiment pipeline for the CLI. It does no numerical work itself (see meta/ and
# reorder.py); it decides what runs in which order, where the results go and what a failure means:
# Ingest -> Split -> Evaluation tasks -> Pretrain encoder -> Meta-train per variant -> Evaluate
#   -> Aggregate over seeds -> Significance over datasets.
#
# OUTPUT LAYOUT:
# <out>/<dataset>/<mode>/<seed>/
#     tasks-<dataset>-<mode>-<seed>-<n>.npz    evaluation tasks shared by every variant
#     pretrain/   checkpoint.npz trace.csv manifest.json [heatmap.csv heatmap.json]
#     <variant>/  checkpoint.npz trace.csv manifest.json report.json tasks.csv [curve.csv]
# <out>/<dataset>/<mode>/summary.json, summary.csv     RunReports over seeds
# <out>/significance-<mode>.json, manifest.json       comparison over datasets
#
# FAILURE POLICY:
# A failing variant is logged and recorded under `failures`; the other variants carry on. The
# stage's status is the highest exit code among its failures (0 if none).
#
# KEY CONCEPTS:
# - Stages read their inputs from disk when run on their own (cmd_eval reads the checkpoint
#   cmd_metatrain wrote) and raise DependencyError naming the missing file.
# - All variants of a (dataset, seed) share one split and one evaluation-task list.
#
# =================================================================================================

PRETRAIN_DIR = "pretrain"


class Pipeline:
    def __init__(self, config: ExperimentConfig):
        config.validate()
        self.config = config
        self.out = Path(config.out)
        self.flat_config = config.flat()
        self.deviations = deviations(config)
        self.failures: List[Dict] = []
        self.artifacts: List[str] = []
        self._tables: Dict[str, DatasetTable] = {}

    # --- Paths ---

    def seed_dir(self, table: DatasetTable, seed: int) -> Path:
        return self.out / table.name / self.config.mode.value / str(seed)

    def variant_dir(self, table: DatasetTable, seed: int, variant: Variant) -> Path:
        return self.seed_dir(table, seed) / variant.value

    def pretrain_dir(self, table: DatasetTable, seed: int) -> Path:
        return self.seed_dir(table, seed) / PRETRAIN_DIR

    def cache_path(self, table: DatasetTable, seed: int) -> Path:
        name = f"tasks-{table.name}-{self.config.mode.value}-{seed}-{self.config.eval_tasks}.npz"
        return self.seed_dir(table, seed) / name

    # --- Shared inputs ---

    def table(self, path: str) -> DatasetTable:
        if path not in self._tables:
            self._tables[path] = load_table(path)
        return self._tables[path]

    def tables(self) -> List[DatasetTable]:
        return [self.table(p) for p in self.config.datasets]

    def dims(self, table: DatasetTable) -> Tuple[int, int, int]:
        """(N, K, C): encoder instance width, position count, class count."""
        return self.config.sampler.shots_train * table.n_classes, table.n_features, table.n_classes

    def split(self, table: DatasetTable, seed: int) -> SplitSpec:
        return make_split(table, self.config.mode, seed, self.config.sampler)

    def cache_key(self, table: DatasetTable, seed: int) -> Dict:
        key = {'dataset': table.name, 'mode': self.config.mode.value, 'seed': seed,
               'n': self.config.eval_tasks, 'sampler': asdict(self.config.sampler)}
        # Compared against the JSON header, so normalize through the same encoding.
        return json.loads(json.dumps(key, sort_keys=True))

    def eval_tasks(self, table: DatasetTable, split: SplitSpec) -> List[Task]:
        path = self.cache_path(table, split.seed)
        key = self.cache_key(table, split.seed)
        if self.config.cache and path.exists():
            if task_cache_key(path) == key:
                logger.info(f"Reusing evaluation tasks from {path}")
                return load_task_cache(path)
            logger.warning(f"{path} was sampled with different settings; resampling")
        tasks = sample_eval_tasks(table, split, self.config.eval_tasks, self.config.sampler)
        if self.config.cache:
            self.artifacts.append(save_task_cache(tasks, path, key))
        return tasks

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise DependencyError(path, stage)
        return path

    def pretrained_encoder(self, table: DatasetTable, seed: int) -> EncoderParams:
        path = self.require(self.pretrain_dir(table, seed) / "checkpoint.npz", "pretrain")
        return load_encoder(path)[0]

    def variant_init(self, table: DatasetTable, seed: int, variant: Variant) -> CombinedInit:
        path = self.variant_dir(table, seed, variant) / "checkpoint.npz"
        if variant is Variant.RANDOM and not path.exists():
            # The Glorot init of a seed is fully determined; no training run is needed.
            n, k, c = self.dims(table)
            return initial_params(variant, n, k, c, seed)
        return load_checkpoint(self.require(path, "metatrain"))[0]

    def record(self, context: Dict, error: ChameleonError) -> None:
        logger.error(f"{context}: {type(error).__name__}: {error}")
        self.failures.append({**context, 'error': type(error).__name__, 'message': str(error),
                              'exit_code': error.exit_code})

    def guarded(self, context: Dict, fn: Callable):
        """Runs one unit of work; a ChameleonError is recorded and None returned."""
        try:
            return fn()
        except ChameleonError as e:
            self.record(context, e)
            return None

    def prepare(self, table: DatasetTable, seed: int) -> Tuple[SplitSpec, List[Task]]:
        split = self.split(table, seed)
        return split, self.eval_tasks(table, split)

    def manifest(self, directory: Path, stage: str, inputs=(), outputs=(), failures=()) -> str:
        path = write_manifest(directory / "manifest.json", stage, self.flat_config, self.deviations,
                              inputs, outputs, failures)
        self.artifacts.append(path)
        return path

    def result(self) -> StageResult:
        status = max((f['exit_code'] for f in self.failures), default=0)
        return StageResult(status=status, artifacts=sorted(self.artifacts), failures=list(self.failures))

    # --- Stages ---

    def pretrain(self, table: DatasetTable, split: SplitSpec) -> EncoderParams:
        seed_config = self.config.for_seed(split.seed)
        n, k, _ = self.dims(table)
        start = fresh_encoder(n, k, split.seed)
        logger.info(f"[{table.name}/{split.seed}] reordering pretraining for {seed_config.reorder.pretrain_epochs} epochs")
        encoder, trace = reorder_train(start, table, split, seed_config.reorder, self.config.sampler)

        directory = self.pretrain_dir(table, split.seed)
        outputs = [
            save_checkpoint(directory / "checkpoint.npz", encoder, "pretrain", split.seed,
                            config=self.flat_config),
            write_trace(directory / "trace.csv", pretrain_rows(trace), "pretrain"),
        ]
        self.artifacts.extend(outputs)
        self.manifest(directory, "pretrain", inputs=[table.name], outputs=outputs)
        return encoder

    def metatrain(self, table: DatasetTable, split: SplitSpec, variant: Variant,
                  pretrained: Optional[EncoderParams], monitor: List[Task]) -> CombinedInit:
        seed_config = self.config.for_seed(split.seed)
        init, trace = meta_train(
            variant, table, split, seed_config.meta, self.config.sampler,
            pretrained=pretrained, monitor_tasks=monitor, threads=self.config.threads,
        )
        directory = self.variant_dir(table, split.seed, variant)
        outputs = [
            save_checkpoint(directory / "checkpoint.npz", init, variant.value, split.seed,
                            meta_epoch=len(trace), config=self.flat_config),
            write_trace(directory / "trace.csv", trace, "meta"),
        ]
        self.artifacts.extend(outputs)
        inputs = []
        if pretrained is not None:
            inputs.append(str((self.pretrain_dir(table, split.seed) / "checkpoint.npz").relative_to(self.out)))
        self.manifest(directory, "metatrain", inputs=inputs, outputs=outputs)
        return init

    def evaluate(self, table: DatasetTable, split: SplitSpec, variant: Variant,
                 init: CombinedInit, tasks: List[Task]) -> EvalReport:
        meta = self.config.meta
        report = evaluate(init, tasks, variant, meta.eval_steps, meta.inner_lr,
                          meta.inner_optimizer, self.config.threads)
        directory = self.variant_dir(table, split.seed, variant)
        payload = {**report.to_dict(), 'dataset': table.name, 'mode': self.config.mode.value,
                   'seed': split.seed}
        outputs = [
            write_report(directory / "report.json", payload),
            atomic_write_csv(directory / "tasks.csv", report.per_task, ['task', 'loss', 'accuracy']),
        ]
        self.artifacts.extend(outputs)
        logger.info(
            f"[{table.name}/{split.seed}/{variant.value}] accuracy {report.mean_accuracy:.4f}, "
            f"loss {report.mean_loss:.4f} over {len(tasks)} tasks"
        )
        return report

    def summarize(self, table: DatasetTable, per_variant: Dict[Variant, List[Dict]]) -> Dict[str, RunReport]:
        reports = {
            v.value: aggregate(rows, table.name, self.config.mode.value, v.value)
            for v, rows in per_variant.items() if rows
        }
        if not reports:
            return reports
        directory = self.out / table.name / self.config.mode.value
        rows = [r.to_dict() for r in reports.values()]
        outputs = [
            write_report(directory / "summary.json", {
                'dataset': table.name,
                'mode': self.config.mode.value,
                'reports': {name: r.to_dict() for name, r in reports.items()},
                'improvement_over_random': improvement_over(reports),
            }),
            atomic_write_csv(directory / "summary.csv", rows, list(rows[0].keys())),
        ]
        self.artifacts.extend(outputs)
        logger.info(f"{table.name} ({self.config.mode.value}):\n{format_summary_table(rows)}")
        return reports

    def compare(self, all_reports: Dict[str, Dict[str, RunReport]]) -> None:
        """Significance tables over every variant that has a result on every dataset."""
        datasets = sorted(all_reports)
        variants = [v.value for v in self.config.variants
                    if all(v.value in all_reports[d] for d in datasets)]
        if not datasets or len(variants) < 2:
            logger.info("Fewer than two complete variants; skipping the significance tables")
            return
        tables = {}
        for metric, higher in (("accuracy", True), ("loss", False)):
            scores = np.array([[getattr(all_reports[d][v], f"mean_{metric}") for v in variants]
                               for d in datasets])
            tables[metric] = significance_table(scores, variants, datasets, metric=metric,
                                                higher_is_better=higher).to_dict()
        path = write_report(self.out / f"significance-{self.config.mode.value}.json", tables)
        self.artifacts.append(path)


# --- Commands ---

def cmd_run(config: ExperimentConfig) -> StageResult:
    """The full pipeline over every dataset, seed and variant."""
    pipe = Pipeline(config)
    needs_encoder = any(VARIANT_POLICY[v].needs_pretrained for v in config.variants)
    all_reports: Dict[str, Dict[str, RunReport]] = {}

    for table in pipe.tables():
        per_variant: Dict[Variant, List[Dict]] = {v: [] for v in config.variants}
        for seed in config.seeds:
            ctx = {'dataset': table.name, 'seed': seed}
            prepared = pipe.guarded(ctx, lambda: pipe.prepare(table, seed))
            if prepared is None:
                continue
            split, tasks = prepared

            encoder = None
            if needs_encoder:
                encoder = pipe.guarded({**ctx, 'variant': PRETRAIN_DIR}, lambda: pipe.pretrain(table, split))

            for variant in config.variants:
                if VARIANT_POLICY[variant].needs_pretrained and encoder is None:
                    missing = pipe.pretrain_dir(table, seed) / "checkpoint.npz"
                    pipe.record({**ctx, 'variant': variant.value}, DependencyError(missing, "pretrain"))
                    continue

                def job(variant=variant):
                    pretrained = encoder if VARIANT_POLICY[variant].needs_pretrained else None
                    init = pipe.metatrain(table, split, variant, pretrained, tasks)
                    return pipe.evaluate(table, split, variant, init, tasks)

                report = pipe.guarded({**ctx, 'variant': variant.value}, job)
                if report is not None:
                    per_variant[variant].append(
                        {'seed': seed, 'loss': report.mean_loss, 'accuracy': report.mean_accuracy})

        reports = pipe.summarize(table, per_variant)
        if reports:
            all_reports[table.name] = reports

    pipe.compare(all_reports)
    pipe.manifest(pipe.out, "run", inputs=config.datasets, outputs=list(pipe.artifacts),
                  failures=pipe.failures)
    return pipe.result()


def cmd_pretrain(config: ExperimentConfig) -> StageResult:
    pipe = Pipeline(config)
    for table in pipe.tables():
        for seed in config.seeds:
            pipe.guarded({'dataset': table.name, 'seed': seed, 'variant': PRETRAIN_DIR},
                         lambda: pipe.pretrain(table, pipe.split(table, seed)))
    return pipe.result()


def cmd_metatrain(config: ExperimentConfig) -> StageResult:
    pipe = Pipeline(config)
    for table in pipe.tables():
        for seed in config.seeds:
            split, tasks = pipe.prepare(table, seed)
            for variant in config.variants:
                def job(variant=variant):
                    pretrained = None
                    if VARIANT_POLICY[variant].needs_pretrained:
                        pretrained = pipe.pretrained_encoder(table, seed)
                    return pipe.metatrain(table, split, variant, pretrained, tasks)

                pipe.guarded({'dataset': table.name, 'seed': seed, 'variant': variant.value}, job)
    return pipe.result()


def cmd_eval(config: ExperimentConfig) -> StageResult:
    pipe = Pipeline(config)
    for table in pipe.tables():
        per_variant: Dict[Variant, List[Dict]] = {v: [] for v in config.variants}
        for seed in config.seeds:
            split, tasks = pipe.prepare(table, seed)
            for variant in config.variants:
                def job(variant=variant):
                    init = pipe.variant_init(table, seed, variant)
                    return pipe.evaluate(table, split, variant, init, tasks)

                report = pipe.guarded({'dataset': table.name, 'seed': seed, 'variant': variant.value}, job)
                if report is not None:
                    per_variant[variant].append(
                        {'seed': seed, 'loss': report.mean_loss, 'accuracy': report.mean_accuracy})
        pipe.summarize(table, per_variant)
    return pipe.result()


def cmd_heatmap(config: ExperimentConfig) -> StageResult:
    """Average feature-shift grid of the pretrained encoder, plus its recovery rate."""
    pipe = Pipeline(config)
    for table in pipe.tables():
        for seed in config.seeds:
            def job(seed=seed):
                encoder = pipe.pretrained_encoder(table, seed)
                split = pipe.split(table, seed)
                grid = heatmap(table, split, encoder, config.heatmap_tasks,
                               derive_rng(seed, "heatmap"), config.sampler)
                tasks = pipe.eval_tasks(table, split)
                directory = pipe.pretrain_dir(table, seed)
                columns = ['feature'] + [f"pos_{j}" for j in range(grid.shape[1])]
                rows = [{'feature': table.feature_names[i], **{f"pos_{j}": v for j, v in enumerate(row)}}
                        for i, row in enumerate(grid)]
                rate = recovery_rate(tasks, encoder)
                outputs = [
                    atomic_write_csv(directory / "heatmap.csv", rows, columns),
                    write_report(directory / "heatmap.json", {
                        'dataset': table.name, 'seed': seed, 'n_tasks': config.heatmap_tasks,
                        'recovery_rate': rate, 'grid': grid,
                    }),
                ]
                pipe.artifacts.extend(outputs)
                logger.info(f"[{table.name}/{seed}] encoder recovers {rate:.1%} of feature positions")

            pipe.guarded({'dataset': table.name, 'seed': seed, 'variant': PRETRAIN_DIR}, job)
    return pipe.result()


def reference_init(variant: Variant, n: int, k: int, c: int, seed: int) -> CombinedInit:
    """Untrained starting point of a variant; pretrained-encoder variants get a Glorot encoder."""
    if VARIANT_POLICY[variant].needs_pretrained:
        return initial_params(Variant.UNTRAIN, n, k, c, seed)
    return initial_params(variant, n, k, c, seed)


def cmd_curve(config: ExperimentConfig) -> StageResult:
    """
    Test loss after 0..curve_steps adaptation steps, from the meta-learned init and from the
    untrained init, averaged over the first `monitor_tasks` evaluation tasks.
    """
    pipe = Pipeline(config)
    meta = config.meta
    for table in pipe.tables():
        n, k, c = pipe.dims(table)
        for seed in config.seeds:
            split = pipe.split(table, seed)
            tasks = pipe.eval_tasks(table, split)[:meta.monitor_tasks]
            for variant in config.variants:
                def job(variant=variant):
                    init = pipe.variant_init(table, seed, variant)
                    reference = reference_init(variant, n, k, c, seed)
                    curves = [adaptation_curve(init, reference, t, config.curve_steps, variant,
                                               meta.inner_lr, meta.inner_optimizer) for t in tasks]
                    learned = np.mean([cv['learned'] for cv in curves], axis=0)
                    untrained = np.mean([cv['reference'] for cv in curves], axis=0)
                    rows = [{'step': s, 'learned': float(a), 'reference': float(b)}
                            for s, (a, b) in enumerate(zip(learned, untrained))]
                    path = atomic_write_csv(pipe.variant_dir(table, seed, variant) / "curve.csv",
                                            rows, ['step', 'learned', 'reference'])
                    pipe.artifacts.append(path)

                pipe.guarded({'dataset': table.name, 'seed': seed, 'variant': variant.value}, job)
    return pipe.result()
