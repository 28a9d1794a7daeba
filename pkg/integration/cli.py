"""
Command-Line Integration
Connects the yield pipeline to argparse subcommands and maps failures to exit codes
"""
import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from core.config import RunConfig, load_run_config
from core.errors import AgriGnnError
from core.pipeline import YieldPipeline

logger = logging.getLogger(__name__)

COMMANDS: Dict[str, Callable[[YieldPipeline], object]] = {}
HELP: Dict[str, str] = {}


def command(name: str, help_text: str):
    """Register a subcommand handler"""
    def register(fn: Callable[[YieldPipeline], object]):
        COMMANDS[name] = fn
        HELP[name] = help_text
        return fn
    return register


# =====================
# COMMANDS
# =====================
@command('simulate', 'Generate a synthetic trial and write plots.csv')
def cmd_simulate(pipeline: YieldPipeline):
    return pipeline.simulate()


@command('ingest', 'Load and preprocess plots; write preprocess_report.json')
def cmd_ingest(pipeline: YieldPipeline):
    return pipeline.ingest()


@command('indices', 'Compute the 52 vegetation indices and their correlation matrix')
def cmd_indices(pipeline: YieldPipeline):
    return pipeline.indices()


@command('graph', 'Build the spatial + genotypic plot graph')
def cmd_graph(pipeline: YieldPipeline):
    return pipeline.graph()


@command('train', 'Train the GNN and write the checkpoint and loss history')
def cmd_train(pipeline: YieldPipeline):
    return pipeline.train()


@command('evaluate', 'Score the trained model and export actual vs predicted yields')
def cmd_evaluate(pipeline: YieldPipeline):
    return pipeline.evaluate()


@command('baseline', 'Run the coordinate K-NN baseline with cross-validated k')
def cmd_baseline(pipeline: YieldPipeline):
    return pipeline.baseline()


@command('embed', 'Export hidden-layer embeddings and their t-SNE projection')
def cmd_embed(pipeline: YieldPipeline):
    return pipeline.embed()


@command('grid', 'Run the hyperparameter grid search')
def cmd_grid(pipeline: YieldPipeline):
    return pipeline.grid()


@command('pipeline', 'Run ingest, indices, graph, train, evaluate, baseline and embeddings')
def cmd_pipeline(pipeline: YieldPipeline):
    return pipeline.run_all()


# =====================
# PARSER
# =====================
def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subparser from overwriting a flag given before the subcommand
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--config', default=argparse.SUPPRESS, help='Run configuration file (key=value)')
    parent.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='Global random seed')
    parent.add_argument('--out', default=argparse.SUPPRESS, help='Output directory')
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(
        prog='agri-gnn',
        description='Graph neural network crop-yield pipeline',
        parents=[common],
    )
    subparsers = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    for name, help_text in HELP.items():
        sub = subparsers.add_parser(name, help=help_text, parents=[common])
        if name == 'simulate':
            sub.add_argument('--fields', type=int, help='Number of fields')
            sub.add_argument('--plots', type=int, help='Plots per field')
        else:
            sub.add_argument('--input', help='Plot CSV in the ingest schema (default: simulate)')
        if name in ('graph', 'pipeline', 'train', 'evaluate', 'embed', 'grid'):
            sub.add_argument('--edge-mode', choices=['global', 'per-node'], help='Spatial threshold mode')
            sub.add_argument('--percentile', type=float, help='Spatial distance percentile')
            sub.add_argument('--threshold-closed', action='store_true', default=None,
                             help='Connect pairs at exactly the threshold distance')
        if name in ('train', 'pipeline', 'grid'):
            sub.add_argument('--epochs', type=int, help='Training epochs')
    return parser


def _plots_override(config: RunConfig, fields: Optional[int], plots: Optional[int]) -> Optional[str]:
    if fields is None and plots is None:
        return None
    current = config.simulate.plots_per_field
    if fields is None:
        counts = [plots] * len(current)
    elif plots is None:
        counts = [current[i % len(current)] for i in range(fields)]
    else:
        counts = [plots] * fields
    return ','.join(str(c) for c in counts)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then explicit flags"""
    config = load_run_config(getattr(args, 'config', None))
    overrides: Dict[str, Optional[str]] = {}
    flag_keys = {
        'seed': 'run.seed',
        'out': 'run.out',
        'input': 'data.input',
        'edge_mode': 'graph.mode',
        'percentile': 'graph.percentile',
        'epochs': 'train.epochs',
    }
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, 'threshold_closed', None):
        overrides['graph.closed'] = 'true'
    plots = _plots_override(config, getattr(args, 'fields', None), getattr(args, 'plots', None))
    if plots is not None:
        overrides['simulate.plots'] = plots
    return config.with_overrides(overrides)


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Parse, run one subcommand and return the process exit code"""
    args = build_parser().parse_args(argv)

    stage = 'config'
    pipeline: Optional[YieldPipeline] = None
    try:
        config = resolve_config(args)
        pipeline = YieldPipeline(config)
        stage = args.command
        COMMANDS[args.command](pipeline)
        logger.info(f"Command '{args.command}' finished; outputs in {config.out_dir}")
        return 0
    except AgriGnnError as e:
        if pipeline is not None:
            stage = pipeline.stage
        logger.error(f"Stage '{stage}' failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        print(f"agri-gnn: stage '{stage}' failed: {e}", file=sys.stderr)
        return e.exit_code
