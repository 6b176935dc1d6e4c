from django.apps import AppConfig


class EvidenceAppConfig(AppConfig):
    name = 'evidence_app'
