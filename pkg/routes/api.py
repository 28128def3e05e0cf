"""
API routes with OpenAPI/Swagger documentation
"""

from flask import current_app, request
from flask_restx import Api, Resource, fields
from functools import wraps
import dataclasses
import os
import uuid

from . import api_bp
from config import Config
from services import pipeline, synthbench
from services.errors import BenchmarkError, CausalPortalError, ConfigError, PipelineStageError

# Initialize Flask-RESTX API with Swagger documentation
api = Api(
    api_bp,
    version=Config.VERSION,
    title='Market Causality Portal API',
    description='Time-series causal discovery runs (VAR-LiNGAM, LPCMCI) and synthetic benchmarks',
    doc='/docs',  # Swagger UI will be at /api/docs
    license='MIT'
)


def cache_response(timeout=300):
    """
    Decorator to cache API responses.

    Args:
        timeout: Cache timeout in seconds (default 5 minutes)
    """
    def decorator(f):
        @wraps(f)
        def decorated_function(*args, **kwargs):
            cache = current_app.cache
            cache_key = f"{f.__name__}:{str(args[1:])}:{str(kwargs)}"

            cached = cache.get(cache_key)
            if cached is not None:
                return cached

            response = f(*args, **kwargs)
            cache.set(cache_key, response, timeout=timeout)
            return response

        return decorated_function
    return decorator


ns_runs = api.namespace('runs', description='End-to-end analysis runs')
ns_config = api.namespace('config', description='Run configuration validation')
ns_bench = api.namespace('bench', description='Synthetic benchmarks')

diagnostics_response = api.model('Diagnostics', {
    'valid': fields.Boolean(description='True when the configuration has no problems'),
    'diagnostics': fields.List(fields.String, description='Schema and invariant problems')
})

suite_info = api.model('SuiteInfo', {
    'name': fields.String(required=True, description='Suite name'),
    'description': fields.String(description='What the suite exercises'),
    'truths': fields.Raw(description='Ground truths of the suite')
})

suites_response = api.model('SuitesResponse', {
    'suites': fields.List(fields.Nested(suite_info)),
    'total_suites': fields.Integer(description='Number of named suites')
})

bench_request = api.model('BenchRequest', {
    'seeds': fields.Integer(required=True, description='Simulated datasets per truth', min=1),
    'T': fields.Integer(description='Observations per dataset', default=2000),
    'algorithms': fields.List(fields.String, description='Subset of varlingam, lpcmci'),
})


def _json_body():
    body = request.get_json(silent=True)
    if not isinstance(body, dict):
        api.abort(400, 'Request body must be a JSON object')
    return body


def _confine(path, root):
    """Absolute form of path resolved under root; aborts when it escapes root."""
    root = os.path.realpath(root)
    full = os.path.realpath(os.path.join(root, path))
    if os.path.commonpath([full, root]) != root:
        api.abort(400, f"Path '{path}' is outside the data directory")
    return full


@ns_config.route('/validate')
class ConfigValidate(Resource):
    """Run configuration validation endpoint"""

    @ns_config.doc('validate_config')
    @ns_config.marshal_with(diagnostics_response)
    @ns_config.response(200, 'Success')
    def post(self):
        """
        Validate a run configuration without executing it.

        The body is the configuration document as JSON.
        """
        diagnostics = pipeline.validate_document(_json_body())
        return {'valid': not diagnostics, 'diagnostics': diagnostics}


@ns_runs.route('')
class Runs(Resource):
    """Analysis run endpoint"""

    @ns_runs.doc('create_run')
    @ns_runs.response(200, 'Run finished; body is the report document')
    @ns_runs.response(400, 'Invalid configuration or failed stage')
    def post(self):
        """
        Run the full pipeline for a configuration and return its report.

        Data and knowledge paths resolve under the service data directory.
        Each run writes to its own directory under the output directory;
        the response carries its run_id.
        """
        body = _json_body()
        diagnostics = pipeline.validate_document(body)
        if diagnostics:
            api.abort(400, 'Invalid run configuration', diagnostics=diagnostics)
        if 'output_dir' in body:
            api.abort(400, 'output_dir is chosen by the server')
        data_dir = current_app.config['DATA_DIR']
        body['data']['files'] = [_confine(f, data_dir) for f in body['data']['files']]
        if body.get('knowledge'):
            body['knowledge'] = _confine(body['knowledge'], data_dir)
        body.setdefault('workers', current_app.config['WORKERS'])
        run_id = uuid.uuid4().hex
        config = dataclasses.replace(
            pipeline.RunConfig.from_document(body, data_dir),
            output_dir=os.path.join(current_app.config['OUTPUT_DIR'], run_id))
        try:
            result = pipeline.run(config)
        except PipelineStageError as e:
            current_app.logger.warning(f"Run failed: {e}")
            api.abort(400, str(e), stage=e.stage, cause=str(e.cause))
        except (ConfigError, CausalPortalError) as e:
            api.abort(400, str(e))
        return dict(result.document, run_id=run_id)


@ns_bench.route('/suites')
class BenchSuites(Resource):
    """Benchmark suite listing endpoint"""

    @ns_bench.doc('list_suites')
    @ns_bench.marshal_with(suites_response)
    @ns_bench.response(200, 'Success')
    @cache_response(timeout=300)
    def get(self):
        """
        List the named benchmark suites with their ground truths.

        This endpoint is cached for 5 minutes.
        """
        suites = synthbench.describe_suites()
        return {'suites': suites, 'total_suites': len(suites)}


@ns_bench.route('/<string:suite>')
@ns_bench.param('suite', 'Suite name (nongaussian, null, bonds, market)')
class BenchRun(Resource):
    """Benchmark execution endpoint"""

    @ns_bench.doc('run_bench')
    @ns_bench.expect(bench_request)
    @ns_bench.response(200, 'Success')
    @ns_bench.response(400, 'Invalid request')
    @ns_bench.response(404, 'Suite not found')
    def post(self, suite):
        """
        Run a named suite and return the metrics table.
        """
        if suite not in synthbench.SUITES:
            api.abort(404, f"Suite '{suite}' not found")
        body = _json_body()
        seeds = body.get('seeds')
        max_seeds = current_app.config['BENCH_MAX_SEEDS']
        if not isinstance(seeds, int) or not 1 <= seeds <= max_seeds:
            api.abort(400, f"seeds must be an integer between 1 and {max_seeds}")
        T = body.get('T', 2000)
        max_T = current_app.config['BENCH_MAX_T']
        if not isinstance(T, int) or isinstance(T, bool) or not 1 <= T <= max_T:
            api.abort(400, f"T must be an integer between 1 and {max_T}")
        try:
            result = pipeline.run_bench(suite, seeds, T=T,
                                        algorithms=body.get('algorithms') or synthbench.ALGORITHMS,
                                        workers=current_app.config['WORKERS'])
        except (BenchmarkError, CausalPortalError) as e:
            api.abort(400, str(e))
        return result.to_document()
