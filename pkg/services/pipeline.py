"""
Pipeline Service
Run configuration, validation and the end-to-end analysis: ingest, align,
stationarity testing, differencing, VAR, VAR-LiNGAM, LPCMCI and exports.
"""

import json
import logging
import os
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import jsonschema
import yaml

from services import graphs, lpcmci, synthbench, var, varlingam
from services.dataset import (TimeSeriesDataset, TransformLog, align, describe, difference, ingest_csv,
                              linearity_diagnostics)
from services.errors import ConfigError, PipelineStageError
from services.knowledge import Knowledge, load_knowledge
from services.stattests import ADF_SPECS, adf_table, jarque_bera

logger = logging.getLogger(__name__)

ALGORITHMS = ('varlingam', 'lpcmci')
CRITERIA = ('hqic', 'bic')
DATE_PATTERN = r'^\d{4}-\d{2}-\d{2}$'

RUN_CONFIG_SCHEMA: Dict[str, Any] = {
    '$schema': 'http://json-schema.org/draft-07/schema#',
    'type': 'object',
    'additionalProperties': False,
    'required': ['data'],
    'properties': {
        'data': {
            'type': 'object',
            'additionalProperties': False,
            'required': ['files', 'variables'],
            'properties': {
                'files': {'type': 'array', 'minItems': 1, 'items': {'type': 'string'}},
                'variables': {'type': 'object', 'minProperties': 2,
                              'additionalProperties': {'type': 'string'}},
                'date_column': {'type': 'string'},
                'start': {'type': ['string', 'null'], 'pattern': DATE_PATTERN},
                'end': {'type': ['string', 'null'], 'pattern': DATE_PATTERN},
                'fill': {'enum': [None, 'ffill']},
            },
        },
        'preprocess': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'difference': {'type': 'boolean'},
                'standardize': {'type': 'boolean'},
                'adf_alpha': {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1},
                'adf_max_lag': {'type': ['integer', 'null'], 'minimum': 0},
                'linearity_max_lag': {'type': 'integer', 'minimum': 0},
            },
        },
        'var': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'criterion': {'enum': list(CRITERIA)},
                'max_p': {'type': 'integer', 'minimum': 1},
            },
        },
        'algorithms': {'type': 'array', 'minItems': 1, 'uniqueItems': True,
                       'items': {'enum': list(ALGORITHMS)}},
        'knowledge': {'type': ['string', 'null']},
        'compare_without_knowledge': {'type': 'boolean'},
        'lpcmci': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'tau_max': {'type': 'integer', 'minimum': 1},
                'alpha': {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1},
                'prelim_iters': {'type': 'integer', 'minimum': 0},
                'max_cond_dim': {'type': ['integer', 'null'], 'minimum': 0},
            },
        },
        'varlingam': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'prune_threshold': {'type': 'number', 'minimum': 0},
            },
        },
        'seed': {'type': 'integer', 'minimum': 0},
        'workers': {'type': ['integer', 'null'], 'minimum': 1},
        'output_dir': {'type': 'string'},
    },
}


@dataclass(frozen=True)
class RunConfig:
    files: Tuple[str, ...]
    variables: Dict[str, str]
    date_column: str = 'Date'
    start: Optional[date] = None
    end: Optional[date] = None
    fill: Optional[str] = None
    difference: bool = True
    standardize: bool = True
    adf_alpha: float = 0.05
    adf_max_lag: Optional[int] = None
    linearity_max_lag: int = 1
    criterion: str = 'hqic'
    max_p: int = 10
    algorithms: Tuple[str, ...] = ALGORITHMS
    knowledge: Optional[str] = None
    compare_without_knowledge: bool = True
    tau_max: int = lpcmci.DEFAULT_TAU_MAX
    alpha: float = lpcmci.DEFAULT_ALPHA
    prelim_iters: int = 1
    max_cond_dim: Optional[int] = None
    prune_threshold: float = 0.05
    seed: int = 0
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    output_dir: str = 'output'

    @classmethod
    def from_document(cls, doc: Dict[str, Any], base_dir: str = '.') -> 'RunConfig':
        """Build a config from a validated document; relative paths resolve against base_dir."""
        def resolve(path: str) -> str:
            return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))

        data = doc['data']
        pre = doc.get('preprocess', {})
        var_doc = doc.get('var', {})
        lp = doc.get('lpcmci', {})
        knowledge = doc.get('knowledge')
        values = dict(
            files=tuple(resolve(f) for f in data['files']),
            variables=dict(data['variables']),
            date_column=data.get('date_column', 'Date'),
            start=date.fromisoformat(data['start']) if data.get('start') else None,
            end=date.fromisoformat(data['end']) if data.get('end') else None,
            fill=data.get('fill'),
            difference=pre.get('difference', True),
            standardize=pre.get('standardize', True),
            adf_alpha=pre.get('adf_alpha', 0.05),
            adf_max_lag=pre.get('adf_max_lag'),
            linearity_max_lag=pre.get('linearity_max_lag', 1),
            criterion=var_doc.get('criterion', 'hqic'),
            max_p=var_doc.get('max_p', 10),
            algorithms=tuple(doc.get('algorithms', ALGORITHMS)),
            knowledge=resolve(knowledge) if knowledge else None,
            compare_without_knowledge=doc.get('compare_without_knowledge', True),
            tau_max=lp.get('tau_max', lpcmci.DEFAULT_TAU_MAX),
            alpha=lp.get('alpha', lpcmci.DEFAULT_ALPHA),
            prelim_iters=lp.get('prelim_iters', 1),
            max_cond_dim=lp.get('max_cond_dim'),
            prune_threshold=doc.get('varlingam', {}).get('prune_threshold', 0.05),
            seed=doc.get('seed', 0),
            output_dir=os.environ.get('OUTPUT_DIR') or resolve(doc.get('output_dir', 'output')),
        )
        if doc.get('workers'):
            values['workers'] = doc['workers']
        return cls(**values)


def _normalize(value: Any) -> Any:
    """YAML dates become ISO strings so the schema sees plain JSON types."""
    if isinstance(value, (date, datetime)):
        return value.isoformat()[:10]
    if isinstance(value, dict):
        return {str(k): _normalize(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_normalize(v) for v in value]
    return value


def validate_document(doc: Any) -> List[str]:
    """Schema and invariant diagnostics for a parsed config document; empty when valid."""
    doc = _normalize(doc)
    validator = jsonschema.Draft7Validator(RUN_CONFIG_SCHEMA)
    diagnostics = []
    for error in sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path]):
        location = '.'.join(str(p) for p in error.absolute_path) or '<root>'
        diagnostics.append(f"{location}: {error.message}")
    if diagnostics or not isinstance(doc, dict):
        return diagnostics
    data = doc['data']
    if data.get('start') and data.get('end'):
        try:
            if date.fromisoformat(data['start']) >= date.fromisoformat(data['end']):
                diagnostics.append("data: start date must be before end date")
        except ValueError as e:
            diagnostics.append(f"data: invalid date ({e})")
    return diagnostics


def _read_document(path: str) -> Any:
    with open(path, 'r') as f:
        return yaml.safe_load(f)


def validate(config_path: str) -> List[str]:
    """Diagnostics for a config file without running anything."""
    try:
        doc = _read_document(config_path)
    except (OSError, yaml.YAMLError) as e:
        return [f"cannot read config {config_path}: {e}"]
    return validate_document(doc)


def load_config(config_path: str) -> RunConfig:
    try:
        doc = _read_document(config_path)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {config_path}: {e}") from e
    diagnostics = validate_document(doc)
    if diagnostics:
        raise ConfigError(f"invalid config {config_path}: {len(diagnostics)} problem(s)", diagnostics)
    return RunConfig.from_document(_normalize(doc), os.path.dirname(os.path.abspath(config_path)))


@dataclass
class RunReport:
    document: Dict[str, Any]
    artifacts: List[str]
    output_dir: str


def _dump(document: Dict[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, indent=2)


class _Run:
    """Report state for one pipeline execution; failures flush what exists."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.report: Dict[str, Any] = {'config': _config_document(config)}
        self.artifacts: List[str] = []
        os.makedirs(config.output_dir, exist_ok=True)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        logger.info(f"Stage {name}")
        try:
            yield
        except Exception as e:
            self.report['failed_stage'] = {'stage': name, 'cause': str(e)}
            self.flush()
            logger.error(f"Stage {name} failed: {e}")
            raise PipelineStageError(name, e) from e

    def write(self, filename: str, text: str):
        with open(os.path.join(self.config.output_dir, filename), 'w') as f:
            f.write(text)
        if filename not in self.artifacts:
            self.artifacts.append(filename)

    def flush(self):
        self.report['artifacts'] = sorted(self.artifacts + ['report.json', 'report.md'])
        self.write('report.json', _dump(self.report))
        self.write('report.md', render_markdown(self.report))


def _config_document(config: RunConfig) -> Dict[str, Any]:
    return {
        'variables': dict(config.variables),
        'start': config.start.isoformat() if config.start else None,
        'end': config.end.isoformat() if config.end else None,
        'fill': config.fill,
        'difference': config.difference,
        'standardize': config.standardize,
        'adf_alpha': config.adf_alpha,
        'criterion': config.criterion,
        'max_p': config.max_p,
        'algorithms': list(config.algorithms),
        'knowledge': os.path.basename(config.knowledge) if config.knowledge else None,
        'lpcmci': {'tau_max': config.tau_max, 'alpha': config.alpha,
                   'prelim_iters': config.prelim_iters, 'max_cond_dim': config.max_cond_dim},
        'prune_threshold': config.prune_threshold,
        'seed': config.seed,
    }


def _export_graph(run: _Run, stem: str, graph) -> None:
    run.write(f"{stem}.dot", graphs.export(graph, 'dot'))
    run.write(f"{stem}.graph.json", graphs.export(graph, 'json'))


def run(config: RunConfig) -> RunReport:
    """
    Execute the full analysis and write report.json, report.md and graph files.

    Raises:
        PipelineStageError naming the failing stage; a partial report is
        written before it propagates.
    """
    state = _Run(config)
    report = state.report

    with state.stage('knowledge'):
        knowledge = load_knowledge(config.knowledge) if config.knowledge else Knowledge.empty()
        knowledge.check_names(list(config.variables))
        report['knowledge'] = knowledge.to_document()

    with state.stage('ingest'):
        ingested = ingest_csv(config.files, config.variables, config.date_column)
        report['ingest'] = {'unparsed': [{'file': os.path.basename(r.path), 'row': r.row,
                                          'column': r.column, 'raw': r.raw} for r in ingested.unparsed]}

    with state.stage('align'):
        levels = align(ingested.series, config.fill)
        levels = levels.select(list(config.variables))
        if config.start or config.end:
            levels = levels.slice(config.start, config.end)
        report['overview'] = {'observations': levels.n_obs, 'first_date': levels.dates[0].isoformat(),
                              'last_date': levels.dates[-1].isoformat(), 'variables': describe(levels)}

    with state.stage('adf.levels'):
        level_adf = adf_table(levels, config.adf_alpha, config.adf_max_lag)
        report['adf'] = {'levels': level_adf.to_document()}

    with state.stage('difference'):
        processed, transform = levels, TransformLog()
        if config.difference and level_adf.nonstationary:
            processed, transform = difference(levels)
            logger.info(f"Differencing all variables; nonstationary: {level_adf.nonstationary}")
        report['transform_log'] = transform.to_document()
        report['differenced'] = processed is not levels

    with state.stage('adf.processed'):
        report['adf']['processed'] = adf_table(processed, config.adf_alpha, config.adf_max_lag).to_document()

    with state.stage('linearity'):
        report['linearity'] = [s.to_document() for s in
                               linearity_diagnostics(processed, config.linearity_max_lag)]

    with state.stage('var'):
        selection = var.select_order(processed, varlingam.max_feasible_order(
            processed.n_obs, processed.n_vars, config.max_p))
        p = selection.chosen(config.criterion)
        model = var.fit(processed, p, workers=config.workers)
        radius = var.stability(model)
        report['var'] = {
            'order_selection': selection.to_document(),
            'criterion': config.criterion,
            'model': model.to_document(),
            'normality': jarque_bera(model.residuals).to_document(list(processed.variable_names)),
            'stability': {'spectral_radius': radius, 'stable': radius < 1.0},
        }

    variants = [('with_knowledge', knowledge)]
    if knowledge and config.compare_without_knowledge:
        variants.append(('without_knowledge', Knowledge.empty()))

    summaries: Dict[str, graphs.SummaryGraph] = {}
    if 'varlingam' in config.algorithms:
        with state.stage('varlingam'):
            report['varlingam'] = _run_varlingam(state, processed, transform, p, variants, summaries)

    if 'lpcmci' in config.algorithms:
        with state.stage('lpcmci'):
            report['lpcmci'] = {}
            for label, kn in variants:
                pag = lpcmci.discover(processed, tau_max=config.tau_max, alpha=config.alpha, knowledge=kn,
                                      prelim_iters=config.prelim_iters, max_cond_dim=config.max_cond_dim,
                                      workers=config.workers)
                summary = graphs.collapse(pag)
                summaries[f"lpcmci:{label}"] = summary
                report['lpcmci'][label] = {'links': pag.links(), 'summary': graphs.to_document(summary)}
                suffix = '' if label == 'with_knowledge' else '_nok'
                _export_graph(state, f"lpcmci{suffix}", pag)
                _export_graph(state, f"lpcmci_summary{suffix}", summary)

    if 'varlingam:with_knowledge' in summaries and 'lpcmci:with_knowledge' in summaries:
        with state.stage('comparison'):
            report['comparison'] = graphs.compare_summaries(summaries['varlingam:with_knowledge'],
                                                            summaries['lpcmci:with_knowledge'])

    with state.stage('export'):
        state.flush()
    logger.info(f"Run complete: {len(state.artifacts)} artifacts in {config.output_dir}")
    return RunReport(report, sorted(state.artifacts), config.output_dir)


def _run_varlingam(state: _Run, processed: TimeSeriesDataset, transform: TransformLog, p: int,
                   variants: Sequence[Tuple[str, Knowledge]],
                   summaries: Dict[str, graphs.SummaryGraph]) -> Dict[str, Any]:
    config = state.config
    scales = [False, True] if config.standardize else [False]
    jobs = [(label, kn, flag) for label, kn in variants for flag in scales]

    def fit(job):
        label, kn, flag = job
        return varlingam.fit_var_lingam(processed, p=p, knowledge=kn, standardize_flag=flag,
                                        prune_threshold=config.prune_threshold, seed=config.seed)

    if config.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=min(config.workers, len(jobs))) as pool:
            models = list(pool.map(fit, jobs))
    else:
        models = [fit(job) for job in jobs]

    out: Dict[str, Any] = {}
    for (label, _, flag), model in zip(jobs, models):
        out.setdefault(label, {})['standardized' if flag else 'raw'] = model.to_document()
        if model.transform is not None:
            state.report['transform_log_standardized'] = transform.then(model.transform).to_document()
    for label, _ in variants:
        suffix = '' if label == 'with_knowledge' else '_nok'
        by_scale = {flag: m for (lab, _, flag), m in zip(jobs, models) if lab == label}
        display = by_scale.get(True, by_scale[False])
        summary = (graphs.varlingam_to_lpcmci_form(display) if display.standardized
                   else graphs.collapse(display.to_lagged_dag()))
        summaries[f"varlingam:{label}"] = summary
        out[label]['summary'] = graphs.to_document(summary)
        _export_graph(state, f"varlingam{suffix}", display.to_lagged_dag())
        _export_graph(state, f"varlingam_summary{suffix}", summary)
    return out


def _markdown_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    def cell(value):
        return f"{value:.4f}" if isinstance(value, float) else str(value)
    lines = ['| ' + ' | '.join(headers) + ' |', '|' + '---|' * len(headers)]
    lines.extend('| ' + ' | '.join(cell(v) for v in row) + ' |' for row in rows)
    return '\n'.join(lines)


def _adf_section(title: str, doc: Dict[str, Any]) -> List[str]:
    specs = list(ADF_SPECS)
    rows = [[name] + [by_spec.get(s) for s in specs] for name, by_spec in doc['p_values'].items()]
    return [f"### {title}", '', _markdown_table(['variable'] + specs, rows), '']


def render_markdown(report: Dict[str, Any]) -> str:
    """Human-readable rendering of a report document."""
    lines = ['# Market causality report', '']
    if 'failed_stage' in report:
        failure = report['failed_stage']
        lines += [f"**Run failed at stage `{failure['stage']}`:** {failure['cause']}", '']
    overview = report.get('overview')
    if overview:
        lines += ['## Overview', '', f"{overview['observations']} observations from "
                  f"{overview['first_date']} to {overview['last_date']}.", '']
        rows = [[name] + [s[k] for k in ('count', 'mean', 'std', 'min', 'max')]
                for name, s in overview['variables'].items()]
        lines += [_markdown_table(['variable', 'count', 'mean', 'std', 'min', 'max'], rows), '']
    adf = report.get('adf', {})
    if adf:
        lines += ['## ADF test p-values', '']
        if 'levels' in adf:
            lines += _adf_section('Levels', adf['levels'])
        if 'processed' in adf:
            lines += _adf_section('Processed', adf['processed'])
    if 'var' in report:
        v = report['var']
        rows = [[r['p'], r['aic'], r['bic'], r['hqic']] for r in v['order_selection']['table']]
        lines += ['## VAR', '', f"Order {v['model']['order']} selected by {v['criterion'].upper()}; "
                  f"companion spectral radius {v['stability']['spectral_radius']:.4f}.", '',
                  _markdown_table(['p', 'aic', 'bic', 'hqic'], rows), '']
        rows = [[name, c['skewness'], c['kurtosis'], c['jb_statistic'], c['p_value']]
                for name, c in v['normality']['columns'].items()]
        lines += ['### Residual normality', '',
                  _markdown_table(['variable', 'skewness', 'kurtosis', 'JB', 'p-value'], rows), '']
    for label, runs in (report.get('varlingam') or {}).items():
        lines += [f"## VAR-LiNGAM ({label.replace('_', ' ')})", '']
        for scale in ('raw', 'standardized'):
            if scale not in runs:
                continue
            doc = runs[scale]
            names = doc['variables']
            lines += [f"### {scale.capitalize()} coefficients", '',
                      f"Causal order: {' -> '.join(doc['causal_order'])}", '']
            for entry in doc['adjacency']:
                rows = [[names[i]] + list(row) for i, row in enumerate(entry['matrix'])]
                lines += [f"Lag {entry['lag']}", '', _markdown_table(['effect \\ cause'] + names, rows), '']
    for label, doc in (report.get('lpcmci') or {}).items():
        rows = [[l['source'], l['lag'], l['link'], l['target'], l['statistic'], l['p_value']]
                for l in doc['links']]
        lines += [f"## LPCMCI ({label.replace('_', ' ')})", '',
                  _markdown_table(['source', 'lag', 'link', 'target', 'statistic', 'p-value'], rows), '']
    comparison = report.get('comparison')
    if comparison:
        rows = [[' - '.join(s['pair']), s['direction_agrees'], s['sign_agrees']] for s in comparison['shared']]
        lines += ['## Model comparison', '', _markdown_table(['pair', 'direction agrees', 'sign agrees'], rows),
                  '', f"Only VAR-LiNGAM: {len(comparison['only_a'])}; only LPCMCI: {len(comparison['only_b'])}.", '']
    return '\n'.join(lines)


def run_bench(suite_name: str, seeds: int, T: int = 2000, algorithms: Sequence[str] = ALGORITHMS,
              output_dir: Optional[str] = None, workers: int = 1, seed: int = 0) -> synthbench.BenchmarkResult:
    """Run a named benchmark suite and optionally write bench_<suite>.json."""
    truths = synthbench.suite(suite_name, seed)
    result = synthbench.run_benchmark(truths, algorithms, T=T, seeds=seeds, workers=workers)
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, f"bench_{suite_name}.json")
        with open(path, 'w') as f:
            f.write(_dump(result.to_document()))
        logger.info(f"Wrote {path}")
    return result


__all__ = ['RUN_CONFIG_SCHEMA', 'RunConfig', 'RunReport', 'load_config', 'run',
           'run_bench', 'render_markdown', 'validate', 'validate_document']
