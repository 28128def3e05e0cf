"""
Shared fixtures: the Flask app for pytest-flask and synthetic datasets.
"""

import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app import create_app  # noqa: E402
from config import Config  # noqa: E402
from services.dataset import TimeSeriesDataset  # noqa: E402

SAMPLE_DIR = os.path.join(os.path.dirname(__file__), '..', 'sample')


class TestingConfig(Config):
    TESTING = True
    DEBUG = False
    WORKERS = 1
    BENCH_MAX_SEEDS = 3
    BENCH_MAX_T = 5000
    DATA_DIR = os.path.abspath(SAMPLE_DIR)


@pytest.fixture
def app(tmp_path):
    """Flask application consumed by pytest-flask's client fixture."""
    application = create_app(TestingConfig)
    application.config['OUTPUT_DIR'] = str(tmp_path / 'runs')
    application.cache.clear()
    yield application
    application.cache.clear()


@pytest.fixture
def make_dataset():
    """Build a TimeSeriesDataset on a business-day calendar from a T x n array."""
    def build(values, names=None, start='2022-01-03'):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        names = names or [f"x{j}" for j in range(values.shape[1])]
        dates = pd.bdate_range(start, periods=values.shape[0])
        return TimeSeriesDataset(tuple(names), tuple(dates), values)
    return build


@pytest.fixture
def write_csv(tmp_path):
    """Write rows to a CSV file under tmp_path and return its path."""
    def write(name, header, rows):
        path = tmp_path / name
        lines = [','.join(header)] + [','.join(str(v) for v in row) for row in rows]
        path.write_text('\n'.join(lines) + '\n')
        return str(path)
    return write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sample_dir():
    return os.path.abspath(SAMPLE_DIR)
