from django.apps import AppConfig


class ProofAppConfig(AppConfig):
    name = 'proof_app'
