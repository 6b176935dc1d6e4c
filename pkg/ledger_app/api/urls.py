"""
URL configuration for the public ledger endpoints.

Provides routes for:
- Looking up the evidence record of a contract
- Auditing the hash chain
"""
from django.urls import path
from ledger_app.api.views import EvidenceDetailView, LedgerAuditView

urlpatterns = [
    path('evidence/<str:contract_id>/', EvidenceDetailView.as_view(), name='evidence_detail'),
    path('ledger/audit/', LedgerAuditView.as_view(), name='ledger_audit'),
]
