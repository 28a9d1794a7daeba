"""
End-to-end tests for the command-line surface and pipeline artifacts
"""
import pytest
import json
import os
import sys
import tempfile
import shutil

import pandas as pd

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from integration.cli import COMMANDS, build_parser, run_cli


@pytest.fixture
def temp_dir():
    """Create temporary output directory"""
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path, ignore_errors=True)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv('AGRIGNN_CONFIG', raising=False)
    monkeypatch.delenv('AGRIGNN_OUT', raising=False)


@pytest.fixture
def plots_csv(temp_dir):
    """A simulated 60-plot single-field trial"""
    out = os.path.join(temp_dir, 'sim')
    assert run_cli(['simulate', '--fields', '1', '--plots', '60', '--seed', '0', '--out', out]) == 0
    return os.path.join(out, 'plots.csv')


def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


# === Parser ===
def test_all_commands_registered():
    """Test every subcommand has a handler"""
    assert set(COMMANDS) == {
        'simulate', 'ingest', 'indices', 'graph', 'train', 'evaluate', 'baseline', 'embed', 'grid', 'pipeline',
    }


def test_help_exits_zero(capsys):
    """Test --help prints usage and exits cleanly"""
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(['--help'])
    assert exc.value.code == 0
    assert 'pipeline' in capsys.readouterr().out


def test_unknown_flag_exits_two():
    """Test argparse usage errors"""
    with pytest.raises(SystemExit) as exc:
        run_cli(['train', '--no-such-flag'])
    assert exc.value.code == 2


def test_global_flags_before_and_after_command():
    """Test --seed is accepted on either side of the subcommand"""
    parser = build_parser()
    assert parser.parse_args(['--seed', '4', 'graph']).seed == 4
    assert parser.parse_args(['graph', '--seed', '5']).seed == 5


# === Commands ===
def test_simulate_writes_requested_plots(plots_csv):
    """Test one field of 60 plots"""
    frame = pd.read_csv(plots_csv)
    assert len(frame) == 60
    assert {'plot_id', 'latitude', 'longitude', 'population', 'yield'} <= set(frame.columns)


def test_corrupt_csv_exits_two(temp_dir, capsys):
    """Test an unparsable coordinate is reported with the failing stage"""
    path = os.path.join(temp_dir, 'bad.csv')
    with open(path, 'w', encoding='utf-8') as f:
        f.write("plot_id,latitude,longitude,population,yield\nP1,abc,-93.6,A,3000\n")
    code = run_cli(['ingest', '--input', path, '--out', os.path.join(temp_dir, 'out')])
    assert code == 2
    assert "stage 'ingest' failed" in capsys.readouterr().err


@pytest.mark.parametrize("content", [
    b"plot_id,latitude,longitude,population,yield\nP1,42.0,-93.6,A,\xff\n",
    b"",
    b"plot_id,latitude,longitude,population,yield\nP1,42.0,-93.6,A,3000\nP2,42.0,-93.6,A,3000,7,8\n",
])
def test_unreadable_csv_exits_two(temp_dir, capsys, content):
    """Test bad encoding, empty files and ragged rows map to the input exit code"""
    path = os.path.join(temp_dir, 'bad.csv')
    with open(path, 'wb') as f:
        f.write(content)
    code = run_cli(['ingest', '--input', path, '--out', os.path.join(temp_dir, 'out')])
    assert code == 2
    assert "stage 'ingest' failed" in capsys.readouterr().err


def test_missing_input_file_exits_two(temp_dir, capsys):
    """Test an --input path that does not exist"""
    code = run_cli(['ingest', '--input', os.path.join(temp_dir, 'none.csv'), '--out', os.path.join(temp_dir, 'out')])
    assert code == 2
    assert "stage 'ingest' failed" in capsys.readouterr().err


def test_missing_column_exits_two(temp_dir):
    """Test a CSV without the yield column"""
    path = os.path.join(temp_dir, 'bad.csv')
    with open(path, 'w', encoding='utf-8') as f:
        f.write("plot_id,latitude,longitude,population\nP1,42.0,-93.6,A\n")
    assert run_cli(['ingest', '--input', path, '--out', os.path.join(temp_dir, 'out')]) == 2


def test_missing_config_exits_four(temp_dir, capsys):
    """Test a config path that does not exist"""
    code = run_cli(['graph', '--config', os.path.join(temp_dir, 'none.cfg')])
    assert code == 4
    assert "stage 'config' failed" in capsys.readouterr().err


def test_invalid_config_value_exits_four(temp_dir):
    """Test an out-of-range setting in the config file"""
    path = os.path.join(temp_dir, 'run.cfg')
    with open(path, 'w', encoding='utf-8') as f:
        f.write("graph.percentile=150\n")
    assert run_cli(['graph', '--config', path, '--out', os.path.join(temp_dir, 'out')]) == 4


def test_ingest_and_graph_artifacts(plots_csv, temp_dir):
    """Test the preprocessing report and graph outputs"""
    out = os.path.join(temp_dir, 'graph')
    assert run_cli(['graph', '--input', plots_csv, '--out', out, '--edge-mode', 'per-node']) == 0
    with open(os.path.join(out, 'preprocess_report.json'), 'r', encoding='utf-8') as f:
        report = json.load(f)
    assert report['rows_in'] == 60
    with open(os.path.join(out, 'graph_summary.json'), 'r', encoding='utf-8') as f:
        summary = json.load(f)
    assert summary['nodes'] == 60
    edges = pd.read_csv(os.path.join(out, 'edges.csv'))
    assert len(edges) == summary['edges']
    with open(os.path.join(out, 'run_config.txt'), 'r', encoding='utf-8') as f:
        assert 'graph.mode=per-node' in f.read().splitlines()


def test_indices_command(plots_csv, temp_dir):
    """Test the index table and correlation matrix"""
    out = os.path.join(temp_dir, 'idx')
    assert run_cli(['indices', '--input', plots_csv, '--out', out]) == 0
    corr = pd.read_csv(os.path.join(out, 'index_correlation.csv'), index_col=0)
    assert corr.shape[0] == corr.shape[1]
    assert os.path.isfile(os.path.join(out, 'indices.csv'))


def test_pipeline_small_run(plots_csv, temp_dir):
    """Test a short full run writes metrics, the checkpoint and the baseline"""
    out = os.path.join(temp_dir, 'run')
    assert run_cli(['pipeline', '--input', plots_csv, '--out', out, '--epochs', '20']) == 0

    with open(os.path.join(out, 'metrics.json'), 'r', encoding='utf-8') as f:
        metrics = json.load(f)
    assert {'rmse', 'mae', 'r2', 'full_graph', 'n_train', 'n_test'} <= set(metrics)
    assert metrics['n_train'] + metrics['n_test'] == 60
    assert metrics['rmse'] >= metrics['mae']
    assert metrics['config']['epochs'] == 20
    assert metrics['config']['edge_mode'] == 'global'
    assert 'epochs' not in metrics

    with open(os.path.join(out, 'baseline_metrics.json'), 'r', encoding='utf-8') as f:
        baseline = json.load(f)
    assert set(baseline) == {'k', 'rmse', 'mae', 'r2'}
    assert 1 <= baseline['k'] <= 20

    history = pd.read_csv(os.path.join(out, 'loss_history.csv'))
    assert len(history) == 20
    for name in ('model.json', 'embeddings.csv', 'actual_vs_predicted.csv', 'edges.csv'):
        assert os.path.isfile(os.path.join(out, name))
    assert not os.path.exists(os.path.join(out, 'tsne.csv'))

    # Reuses the checkpoint written above
    assert run_cli(['embed', '--input', plots_csv, '--out', out]) == 0
    tsne = pd.read_csv(os.path.join(out, 'tsne.csv'))
    assert len(tsne) == 60


def test_pipeline_is_byte_identical(plots_csv, temp_dir):
    """Test two runs with the same seed produce identical artifacts"""
    outs = [os.path.join(temp_dir, name) for name in ('a', 'b')]
    for out in outs:
        assert run_cli(['pipeline', '--input', plots_csv, '--out', out, '--epochs', '10', '--seed', '3']) == 0
    for name in ('metrics.json', 'loss_history.csv', 'model.json', 'baseline_metrics.json'):
        assert read_bytes(os.path.join(outs[0], name)) == read_bytes(os.path.join(outs[1], name))


def test_grid_command(plots_csv, temp_dir):
    """Test a reduced grid from the config file"""
    path = os.path.join(temp_dir, 'grid.cfg')
    with open(path, 'w', encoding='utf-8') as f:
        f.write("grid.lr=0.01,0.02\ngrid.hidden=4\ngrid.dropout=0.3\n")
    out = os.path.join(temp_dir, 'grid')
    assert run_cli(['grid', '--config', path, '--input', plots_csv, '--out', out, '--epochs', '3']) == 0
    table = pd.read_csv(os.path.join(out, 'grid_results.csv'))
    assert len(table) == 2
    assert list(table.columns) == ['cell', 'learning_rate', 'hidden_channels', 'dropout_rate', 'rmse', 'mae', 'r2']


@pytest.mark.skipif(not os.getenv('AGRIGNN_RUN_BENCHMARK'), reason="set AGRIGNN_RUN_BENCHMARK=1 to run")
def test_default_trial_benchmark(temp_dir):
    """Test the GNN beats the coordinate baseline on the default simulated trial"""
    out = os.path.join(temp_dir, 'bench')
    assert run_cli(['pipeline', '--out', out]) == 0
    with open(os.path.join(out, 'metrics.json'), 'r', encoding='utf-8') as f:
        gnn = json.load(f)
    with open(os.path.join(out, 'baseline_metrics.json'), 'r', encoding='utf-8') as f:
        knn = json.load(f)
    assert gnn['r2'] >= 0.70
    assert gnn['r2'] >= knn['r2'] + 0.10


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
