"""
API tests for configuration validation, runs and benchmarks.
The client fixture comes from pytest-flask and the app fixture in conftest.
"""

import json
import os

import pytest

pytestmark = pytest.mark.api

VARIABLES = ['USD', 'Close_Nikkei', 'Close_SP', 'Close_US10Y', 'Close_JGBF', 'Close_JGB']


def run_document(**overrides):
    """Run body with paths relative to the data directory."""
    doc = {
        'data': {'files': ['sample_markets.csv'],
                 'variables': {v: v for v in VARIABLES},
                 'start': '2022-01-03', 'end': '2023-06-30'},
        'algorithms': ['lpcmci'],
        'lpcmci': {'tau_max': 1},
        'var': {'max_p': 2},
    }
    doc.update(overrides)
    return doc


def test_validate_accepts_sample(client):
    response = client.post('/api/config/validate', json=run_document())
    assert response.status_code == 200
    data = json.loads(response.data)
    assert data == {'valid': True, 'diagnostics': []}


def test_validate_reports_date_order(client):
    doc = run_document()
    doc['data']['start'] = '2024-01-01'
    data = json.loads(client.post('/api/config/validate', json=doc).data)
    assert data['valid'] is False
    assert data['diagnostics'] == ["data: start date must be before end date"]


def test_body_must_be_object(client):
    response = client.post('/api/config/validate', json=['not', 'an', 'object'])
    assert response.status_code == 400


def test_run_rejects_invalid_config(client):
    response = client.post('/api/runs', json=run_document(algorithms=['pc']))
    assert response.status_code == 400
    data = json.loads(response.data)
    assert data['message'] == 'Invalid run configuration'
    assert len(data['diagnostics']) == 1


def test_run_reports_failed_stage(client):
    doc = run_document()
    doc['data']['files'] = ['absent.csv']
    response = client.post('/api/runs', json=doc)
    assert response.status_code == 400
    data = json.loads(response.data)
    assert data['stage'] == 'ingest'
    assert 'data file not found' in data['cause']


def test_run_rejects_client_output_dir(client, tmp_path):
    response = client.post('/api/runs', json=run_document(output_dir=str(tmp_path / 'elsewhere')))
    assert response.status_code == 400
    assert 'output_dir' in json.loads(response.data)['message']
    assert not (tmp_path / 'elsewhere').exists()


@pytest.mark.parametrize('path', ['../config.py', '/etc/hosts', 'sub/../../app.py'])
def test_run_rejects_files_outside_data_dir(client, path):
    doc = run_document()
    doc['data']['files'] = [path]
    response = client.post('/api/runs', json=doc)
    assert response.status_code == 400
    assert 'outside the data directory' in json.loads(response.data)['message']


def test_run_rejects_knowledge_outside_data_dir(client):
    response = client.post('/api/runs', json=run_document(knowledge='../tests/conftest.py'))
    assert response.status_code == 400
    assert 'outside the data directory' in json.loads(response.data)['message']


@pytest.mark.integration
def test_run_returns_report(client, app, monkeypatch):
    monkeypatch.delenv('OUTPUT_DIR', raising=False)
    response = client.post('/api/runs', json=run_document(knowledge='market_knowledge.yaml'))
    assert response.status_code == 200
    data = json.loads(response.data)
    assert 'report.json' in data['artifacts']
    assert 'with_knowledge' in data['lpcmci']
    run_dir = os.path.join(app.config['OUTPUT_DIR'], data['run_id'])
    assert os.path.exists(os.path.join(run_dir, 'report.md'))


def test_bench_unknown_suite(client):
    response = client.post('/api/bench/equities', json={'seeds': 1})
    assert response.status_code == 404


@pytest.mark.parametrize('seeds', [0, 4, 'two', None])
def test_bench_seed_limits(client, seeds):
    response = client.post('/api/bench/null', json={'seeds': seeds})
    assert response.status_code == 400


def test_bench_unknown_algorithm(client):
    response = client.post('/api/bench/null', json={'seeds': 1, 'algorithms': ['pc']})
    assert response.status_code == 400


def test_bench_null_suite(client):
    response = client.post('/api/bench/null', json={'seeds': 1, 'T': 300, 'algorithms': ['varlingam']})
    assert response.status_code == 200
    data = json.loads(response.data)
    assert [row['truth'] for row in data['rows']] == ['null-uniform', 'null-laplace']
    assert len(data['summary']) == 2


@pytest.mark.parametrize('T', [0, 5001, '300', True])
def test_bench_length_limits(client, T):
    response = client.post('/api/bench/null', json={'seeds': 1, 'T': T})
    assert response.status_code == 400
