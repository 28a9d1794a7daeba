"""
Yield Pipeline
Stage orchestration: each stage caches its result and writes its artifacts under the output directory
"""
import json
import logging
import os
from typing import Dict, Optional, Tuple

from core.baseline import KnnResult, knn_grid_search
from core.config import RunConfig
from core.dataset import (
    Dataset,
    PreprocessReport,
    SplitAssignment,
    load_plots_csv,
    preprocess,
    select_timepoint,
    split_train_test,
    write_plots_csv,
)
from core.embedding import (
    export_actual_vs_predicted,
    export_embeddings,
    tsne_embed,
    write_tsne_csv,
)
from core.graph import AgriGraph, build_graph, graph_summary, write_edges_csv
from core.model import AgriGnnModel, load_checkpoint, save_checkpoint
from core.synthetic import generate_synthetic_trial
from core.trainer import (
    GridSearchResult,
    Metrics,
    TrainResult,
    evaluate,
    hyper_grid_search,
    predict,
    train,
)
from core.vegindex import index_correlation_matrix, write_correlation_csv, write_indices_csv

logger = logging.getLogger(__name__)

# Artifact file names
PLOTS_CSV = 'plots.csv'
PREPROCESS_REPORT = 'preprocess_report.json'
INDICES_CSV = 'indices.csv'
CORRELATION_CSV = 'index_correlation.csv'
EDGES_CSV = 'edges.csv'
GRAPH_SUMMARY = 'graph_summary.json'
CHECKPOINT = 'model.json'
LOSS_HISTORY = 'loss_history.csv'
METRICS = 'metrics.json'
BASELINE_METRICS = 'baseline_metrics.json'
EMBEDDINGS_CSV = 'embeddings.csv'
TSNE_CSV = 'tsne.csv'
ACTUAL_VS_PREDICTED = 'actual_vs_predicted.csv'
GRID_RESULTS = 'grid_results.csv'
RUN_CONFIG = 'run_config.txt'


def _write_json(path: str, payload: Dict):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


class YieldPipeline:
    """Runs the ingest -> preprocess -> graph -> train -> evaluate chain for one RunConfig"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = config.out_dir
        self.stage = 'setup'
        os.makedirs(self.out_dir, exist_ok=True)
        config.write(self.path(RUN_CONFIG))

        self._raw: Optional[Dataset] = None
        self._prepared: Optional[Tuple[Dataset, PreprocessReport]] = None
        self._graph: Optional[AgriGraph] = None
        self._split: Optional[SplitAssignment] = None
        self._model: Optional[AgriGnnModel] = None

        logger.info(f"Pipeline initialized (seed {config.seed}, output {self.out_dir})")

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _enter(self, stage: str):
        self.stage = stage
        logger.info(f"=== Stage: {stage} ===")

    # === Data ===
    def simulate(self) -> Dataset:
        self._enter('simulate')
        ds = generate_synthetic_trial(self.config.simulate, seed=self.config.seed)
        write_plots_csv(ds, self.path(PLOTS_CSV))
        return ds

    def raw_dataset(self) -> Dataset:
        if self._raw is None:
            source = self.config.data.input
            if source:
                self._enter('ingest')
                ds = load_plots_csv(source)
            else:
                logger.info("No input CSV configured; simulating a trial")
                ds = self.simulate()
            if self.config.data.timepoint:
                ds = select_timepoint(ds, self.config.data.timepoint)
            self._raw = ds
        return self._raw

    def prepared(self) -> Tuple[Dataset, PreprocessReport]:
        if self._prepared is None:
            raw = self.raw_dataset()
            self._enter('preprocess')
            ds, report = preprocess(raw)
            report.write(self.path(PREPROCESS_REPORT))
            self._prepared = (ds, report)
        return self._prepared

    @property
    def dataset(self) -> Dataset:
        return self.prepared()[0]

    def ingest(self) -> PreprocessReport:
        return self.prepared()[1]

    def indices(self):
        ds = self.dataset
        self._enter('indices')
        write_indices_csv(ds, self.path(INDICES_CSV))
        corr = index_correlation_matrix(ds)
        write_correlation_csv(corr, self.path(CORRELATION_CSV))
        return corr

    # === Graph ===
    def graph(self) -> AgriGraph:
        if self._graph is None:
            ds = self.dataset
            self._enter('graph')
            g = build_graph(ds, self.config.graph)
            write_edges_csv(g, self.path(EDGES_CSV))
            _write_json(self.path(GRAPH_SUMMARY), graph_summary(g))
            self._graph = g
        return self._graph

    def split(self) -> SplitAssignment:
        if self._split is None:
            train_config = self.config.train_config
            self._split = split_train_test(self.dataset, train_config.split_fraction, train_config.seed)
        return self._split

    # === Model ===
    def train(self) -> TrainResult:
        ds, g, split = self.dataset, self.graph(), self.split()
        self._enter('train')
        result = train(ds, g, self.config.train_config, split)
        save_checkpoint(result.model, self.path(CHECKPOINT))
        result.history_frame().to_csv(self.path(LOSS_HISTORY), index=False, lineterminator='\n')
        self._model = result.model
        self._write_metrics(result.model, result.test_metrics, result.full_metrics)
        return result

    def model(self) -> AgriGnnModel:
        if self._model is None:
            checkpoint = self.path(CHECKPOINT)
            if os.path.isfile(checkpoint):
                self._model = load_checkpoint(checkpoint)
            else:
                logger.info("No checkpoint found; training a model first")
                self.train()
        return self._model

    def _write_metrics(self, model: AgriGnnModel, test: Metrics, full: Metrics):
        split = self.split()
        _write_json(self.path(METRICS), {
            **test.to_dict(),
            'full_graph': full.to_dict(),
            'n_train': len(split.train_indices),
            'n_test': len(split.test_indices),
            'split_seed': split.seed,
            'config': {
                'seed': self.config.seed,
                'hidden_channels': model.config.hidden_channels,
                'dropout_rate': model.config.dropout_rate,
                'final_activation': model.config.final_activation,
                'learning_rate': self.config.train.learning_rate,
                'epochs': self.config.train.epochs,
                'split_fraction': self.config.train.split_fraction,
                'edge_mode': self.config.graph.mode,
                'percentile': self.config.graph.percentile,
                'threshold_closed': self.config.graph.closed,
                'metric': self.config.graph.metric,
            },
        })

    def evaluate(self) -> Metrics:
        model = self.model()
        ds, g, split = self.dataset, self.graph(), self.split()
        self._enter('evaluate')
        pred = predict(model, ds, g)
        test = evaluate(pred, ds.target, split.test_indices)
        full = evaluate(pred, ds.target, ds.labeled_indices)
        self._write_metrics(model, test, full)
        export_actual_vs_predicted(model, ds, g, split, self.path(ACTUAL_VS_PREDICTED))
        logger.info(f"Test RMSE {test.rmse:.3f}, MAE {test.mae:.3f}, R2 {test.r2:.4f}")
        return test

    def baseline(self) -> KnnResult:
        ds, split = self.dataset, self.split()
        self._enter('baseline')
        settings = self.config.baseline
        result = knn_grid_search(ds, split, settings.k_range, settings.folds, self.config.seed)
        result.write(self.path(BASELINE_METRICS))
        return result

    def export_embeddings(self):
        model, ds, g = self.model(), self.dataset, self.graph()
        self._enter('embed')
        return export_embeddings(model, ds, g, self.path(EMBEDDINGS_CSV), self.config.embed.layer)

    def embed(self):
        frame = self.export_embeddings()
        embed = self.config.embed
        coords = frame.drop(columns=['plot_id']).to_numpy()
        result = tsne_embed(coords, perplexity=embed.perplexity, iterations=embed.iterations, seed=self.config.seed)
        write_tsne_csv(self.dataset, result, self.path(TSNE_CSV),
                       predictions=predict(self.model(), self.dataset, self.graph()))
        return result

    def grid(self) -> GridSearchResult:
        ds, g = self.dataset, self.graph()
        self._enter('grid')
        result = hyper_grid_search(ds, g, self.config.grid, self.config.train_config)
        result.table.to_csv(self.path(GRID_RESULTS), index=False, lineterminator='\n')
        return result

    def run_all(self) -> Dict:
        """Every stage except the t-SNE projection and the grid search"""
        self.ingest()
        self.indices()
        self.graph()
        result = self.train()
        test = self.evaluate()
        knn = self.baseline()
        self.export_embeddings()
        self._enter('done')
        logger.info(f"Pipeline finished: GNN R2 {test.r2:.4f} vs KNN R2 {knn.metrics.r2:.4f} (k={knn.best_k})")
        return {'metrics': test, 'baseline': knn, 'train': result}
