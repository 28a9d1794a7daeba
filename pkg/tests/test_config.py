"""
Unit tests for run configuration layering
"""
import pytest
import os
import sys
import tempfile
import shutil

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.config import CONFIG_KEYS, RunConfig, apply_settings, load_run_config
from core.errors import ConfigError


@pytest.fixture
def temp_dir():
    """Create temporary config directory"""
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path, ignore_errors=True)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv('AGRIGNN_CONFIG', raising=False)
    monkeypatch.delenv('AGRIGNN_OUT', raising=False)


def write_config(directory, text):
    path = os.path.join(directory, 'run.cfg')
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def test_defaults():
    """Test the built-in defaults"""
    config = load_run_config()
    assert config.seed == 0
    assert config.graph.mode == 'global'
    assert config.graph.percentile == 3.0
    assert config.train.learning_rate == 0.02
    assert config.train.epochs == 500
    assert config.simulate.plots_per_field == (770, 912, 800, 679)
    assert config.data.input is None


def test_file_then_overrides(temp_dir):
    """Test the config file applies first and explicit overrides win"""
    path = write_config(temp_dir, "# comment\nrun.seed=7\ngraph.mode=per-node\ntrain.epochs=30\ndata.input=\n")
    config = load_run_config(path, overrides={'train.epochs': '40'})
    assert config.seed == 7
    assert config.graph.mode == 'per-node'
    assert config.train.epochs == 40
    assert config.data.input is None


def test_seed_flows_into_training():
    """Test the global seed replaces the training seed"""
    config = apply_settings(RunConfig(), {'run.seed': '11', 'model.hidden': '64'})
    assert config.train_config.seed == 11
    assert config.train_config.hidden_channels == 64


def test_environment_file_and_output(temp_dir, monkeypatch):
    """Test AGRIGNN_CONFIG and AGRIGNN_OUT are honored"""
    path = write_config(temp_dir, "graph.percentile=5\n")
    monkeypatch.setenv('AGRIGNN_CONFIG', path)
    monkeypatch.setenv('AGRIGNN_OUT', os.path.join(temp_dir, 'out'))
    config = load_run_config()
    assert config.graph.percentile == 5.0
    assert config.out_dir == os.path.join(temp_dir, 'out')


def test_list_values():
    """Test comma-separated settings"""
    config = apply_settings(RunConfig(), {'simulate.plots': '10,20', 'grid.hidden': '8,16'})
    assert config.simulate.plots_per_field == (10, 20)
    assert config.grid.hidden_channels == (8, 16)


@pytest.mark.parametrize("values", [
    {'train.momentum': '0.9'},
    {'train.epochs': 'many'},
    {'train.epochs': '0'},
    {'graph.mode': 'knn'},
    {'graph.closed': 'maybe'},
    {'model.dropout': '1.5'},
    {'embed.layer': '4'},
])
def test_invalid_settings(values):
    """Test unknown keys, unparsable values and out-of-range values"""
    with pytest.raises(ConfigError) as exc:
        apply_settings(RunConfig(), values)
    assert exc.value.exit_code == 4


def test_missing_file():
    """Test a config path that does not exist"""
    with pytest.raises(ConfigError):
        load_run_config('/nonexistent/run.cfg')


def test_key_without_value(temp_dir):
    """Test a bare key line is rejected"""
    path = write_config(temp_dir, "run.seed\n")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_written_config_reloads(temp_dir):
    """Test the resolved config file round-trips through the loader"""
    config = apply_settings(RunConfig(), {'run.seed': '3', 'graph.closed': 'true', 'grid.lr': '0.1,0.2'})
    path = os.path.join(temp_dir, 'run_config.txt')
    config.write(path)
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    assert len(lines) == len(CONFIG_KEYS)
    assert lines == sorted(lines)
    assert load_run_config(path) == config


def test_shipped_default_config_matches_defaults():
    """Test configs/default.cfg restates the built-in defaults"""
    path = os.path.join(os.path.dirname(__file__), '..', 'configs', 'default.cfg')
    assert load_run_config(path) == RunConfig()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
