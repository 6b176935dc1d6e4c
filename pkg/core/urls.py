"""
URL configuration for core project.

All endpoints live under ``/api/`` and serve public values only:
evidence records, chain audits and transcript re-verification.
"""
from django.urls import path, include

urlpatterns = [
    path('api/', include('ledger_app.api.urls')),
    path('api/', include('proof_app.api.urls')),
]
