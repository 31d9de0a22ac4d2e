from rest_framework import serializers

from clustering.path import PATH_MODES
from clustering.solvers.abstracts import METHODS

RUN_MODES = ('fit', 'path', 'select', 'theory', 'stability')
SELECTION_CRITERIA = ('ebic', 'holdout')
UNBOUNDED = 'unbounded'


class RunConfigSerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=RUN_MODES)
    input = serializers.CharField(required=False, allow_null=True, default=None)
    generate = serializers.CharField(required=False, allow_null=True, default=None)
    graph = serializers.CharField(required=False, default='mst+knn:3')
    weights = serializers.CharField(required=False, default='gaussian')
    gamma = serializers.CharField(required=False, allow_null=True, default=None)
    out = serializers.CharField()
    seed = serializers.IntegerField(required=False, default=0, min_value=0, max_value=2 ** 64 - 1)
    method = serializers.ChoiceField(choices=METHODS, required=False, allow_null=True, default=None)
    path_mode = serializers.ChoiceField(choices=PATH_MODES, required=False, default='exact')
    strict = serializers.BooleanField(required=False, default=False)
    columns_are_observations = serializers.BooleanField(required=False, default=False)
    standardize = serializers.BooleanField(required=False, default=False)
    labels = serializers.CharField(required=False, allow_null=True, default=None)
    criterion = serializers.ChoiceField(choices=SELECTION_CRITERIA, required=False, default='ebic')
    zeta = serializers.FloatField(required=False, allow_null=True, default=None, min_value=0.0, max_value=1.0)
    max_clusters = serializers.IntegerField(required=False, allow_null=True, default=None, min_value=1)
    holdout_fraction = serializers.FloatField(required=False, allow_null=True, default=None)
    trials = serializers.IntegerField(required=False, default=5, min_value=1)

    def validate_holdout_fraction(self, value):
        if value is not None and not 0 < value < 1:
            raise serializers.ValidationError('Hold-out fraction must lie in (0, 1).')
        return value

    def validate(self, attrs):
        if (attrs.get('input') is None) == (attrs.get('generate') is None):
            raise serializers.ValidationError('Exactly one of input and generate is required.')
        if attrs['mode'] == 'theory' and attrs.get('input') is not None and attrs.get('labels') is None:
            raise serializers.ValidationError('Theory mode on a CSV input needs a labels file.')
        return attrs


class RecoveryIntervalSerializer(serializers.Serializer):
    family = serializers.CharField()
    lower = serializers.SerializerMethodField()
    upper = serializers.SerializerMethodField()
    feasible = serializers.BooleanField()

    def get_lower(self, interval):
        return interval.lower if interval.lower != float('inf') else UNBOUNDED

    def get_upper(self, interval):
        return UNBOUNDED if interval.upper is None else interval.upper


class RecoveryReportSerializer(serializers.Serializer):
    family = serializers.CharField()
    lower = serializers.SerializerMethodField()
    upper = serializers.SerializerMethodField()
    feasible = serializers.BooleanField()
    gammas = serializers.ListField(child=serializers.FloatField())
    recovered = serializers.ListField(child=serializers.BooleanField())
    pass_rate = serializers.FloatField()
    empirical_lower = serializers.FloatField(allow_null=True)
    empirical_upper = serializers.FloatField(allow_null=True)

    def get_lower(self, report):
        return report['lower'] if report['lower'] != float('inf') else UNBOUNDED

    def get_upper(self, report):
        return UNBOUNDED if report['upper'] is None else report['upper']


class SelectionReportSerializer(serializers.Serializer):
    criterion = serializers.CharField()
    chosen_gamma = serializers.FloatField()
    chosen_K = serializers.IntegerField()
    scores = serializers.SerializerMethodField()
    flags = serializers.DictField()

    def get_scores(self, report):
        return [dict(row, eligible=eligible) for row, eligible in zip(report.rows(), report.eligible)]


class LipschitzReportSerializer(serializers.Serializer):
    gamma = serializers.FloatField()
    trials = serializers.IntegerField()
    max_ratio = serializers.FloatField()
    violations = serializers.IntegerField()
    ratios = serializers.ListField(child=serializers.FloatField())


class ScalingSerializer(serializers.Serializer):
    edges = serializers.IntegerField()
    seconds_per_iteration = serializers.FloatField()
    ratio = serializers.FloatField(allow_null=True)
