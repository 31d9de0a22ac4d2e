from django.apps import AppConfig


class ClusteringConfig(AppConfig):
    name = 'clustering'
    verbose_name = 'Sum-of-norms convex clustering'
