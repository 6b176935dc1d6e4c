"""
URL configuration for proof endpoints.

Provides routes for:
- Re-verifying a proof transcript against published evidence
"""
from django.urls import path
from proof_app.api.views import TranscriptVerifyView

urlpatterns = [
    path('transcripts/verify/', TranscriptVerifyView.as_view(), name='transcript_verify'),
]
