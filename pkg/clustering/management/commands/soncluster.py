import json
import logging

from django.core.management.base import BaseCommand, CommandError

from clustering.exceptions import ClusteringException, InvalidArgument
from clustering.readers import load_config
from clustering.serializers import RUN_MODES, RunConfigSerializer
from clustering.tasks import RUN_STATUS_OK, RunConfig, error_message, run

logger = logging.getLogger('clustering')

# option dest -> RunConfig field
OPTION_FIELDS = {
    'input': 'input',
    'generate': 'generate',
    'graph': 'graph',
    'weights': 'weights',
    'gamma': 'gamma',
    'out': 'out',
    'seed': 'seed',
    'method': 'method',
    'path_mode': 'path_mode',
    'mode_strict': 'strict',
    'columns_are_observations': 'columns_are_observations',
    'standardize': 'standardize',
    'labels': 'labels',
    'criterion': 'criterion',
    'zeta': 'zeta',
    'max_clusters': 'max_clusters',
    'holdout_fraction': 'holdout_fraction',
    'trials': 'trials',
}


class Command(BaseCommand):
    help = 'Sum-of-norms convex clustering: fit, path, select, theory and stability runs'

    def add_arguments(self, parser):
        parser.add_argument('mode', choices=RUN_MODES)
        parser.add_argument('--input', help='numeric CSV, one observation per row')
        parser.add_argument('--generate', help='synthetic data, e.g. half_moons:sizes=20x20,noise=0.05')
        parser.add_argument('--graph', help='mst, full, knn:k, mst+knn:k or dmsts:M')
        parser.add_argument('--weights', help='uniform, inverse_euclidean, gaussian[:m] or convex_combo:alpha[:m]')
        parser.add_argument('--gamma', help='value, comma separated values or geom:count[:ratio]')
        parser.add_argument('--out', help='output directory')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--config', help='YAML file with the same keys as these flags')
        parser.add_argument('--method', help='ama, ama_accelerated or admm')
        parser.add_argument('--path-mode', dest='path_mode', help='exact or carp')
        parser.add_argument('--mode-strict', dest='mode_strict', action='store_true', default=None,
                            help='exact path without compression')
        parser.add_argument('--columns-are-observations', dest='columns_are_observations', action='store_true',
                            default=None)
        parser.add_argument('--standardize', action='store_true', default=None)
        parser.add_argument('--labels', help='ground-truth labels CSV')
        parser.add_argument('--criterion', help='ebic or holdout')
        parser.add_argument('--zeta', type=float)
        parser.add_argument('--max-clusters', dest='max_clusters', type=int,
                            help='only snapshots with at most this many clusters compete under eBIC')
        parser.add_argument('--holdout-fraction', dest='holdout_fraction', type=float)
        parser.add_argument('--trials', type=int)

    @staticmethod
    def merged_options(options) -> dict:
        values = {}
        if options.get('config'):
            values.update(load_config(options['config']))
            unknown = set(values) - set(RunConfigSerializer().fields)
            if unknown:
                raise InvalidArgument('Unknown configuration keys: %s' % ', '.join(sorted(unknown)))
        for option, name in OPTION_FIELDS.items():
            if options.get(option) is not None:
                values[name] = options[option]
        values['mode'] = options['mode']
        return values

    def handle(self, *args, **options):
        try:
            serializer = RunConfigSerializer(data=self.merged_options(options))
            if not serializer.is_valid():
                raise InvalidArgument(json.dumps(serializer.errors))
            result = run(RunConfig(**serializer.validated_data))
        except ClusteringException as e:
            logger.error('Command - %s: %s' % (type(e).__name__, str(e)))
            raise CommandError(json.dumps(error_message(e)))
        except (OSError, ValueError) as e:
            logger.error('Command - %s: %s' % (type(e).__name__, str(e)))
            raise CommandError(json.dumps({'error': type(e).__name__, 'message': str(e)}))
        if result.status != RUN_STATUS_OK:
            raise CommandError(json.dumps({'error': 'RunFailed', 'status': result.status,
                                           'artifacts': [str(path) for path in result.artifacts]}))
        self.stdout.write('Wrote %i artifacts to %s' % (len(result.artifacts), serializer.validated_data['out']))
