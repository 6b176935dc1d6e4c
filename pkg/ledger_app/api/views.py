from django.conf import settings
from rest_framework import status
from rest_framework.response import Response
from rest_framework.views import APIView

from evidence_app.api.serializers import EvidenceRecordSerializer
from evidence_app.exceptions import EvidenceNotFound, IntegrityError
from ledger_app.api.serializers import ChainReportSerializer
from ledger_app.api.services import LedgerService


class EvidenceDetailView(APIView):
    """
    API view for the public bulletin board.

    GET: Returns the evidence record published under a contract id.
         Only public values are ever stored, so no authentication is needed.
    """

    def get(self, request, contract_id):
        """
        Retrieve a published evidence record.

        Args:
            contract_id: Identifier the record was registered under

        Returns:
            Response: Record data (200), 404 if unknown, 409 if the ledger does not verify
        """
        try:
            ledger = LedgerService.open_ledger(settings.LEDGER_PATH)
            record = LedgerService.get_evidence(ledger, contract_id)
        except EvidenceNotFound as e:
            return Response({"error": str(e)}, status=status.HTTP_404_NOT_FOUND)
        except IntegrityError as e:
            return Response({"error": str(e), "block_index": e.block_index}, status=status.HTTP_409_CONFLICT)

        return Response(EvidenceRecordSerializer(record).data, status=status.HTTP_200_OK)


class LedgerAuditView(APIView):
    """
    API view for auditing the chain.

    GET: Re-verifies every block and returns the chain report.
    """

    def get(self, request):
        try:
            ledger = LedgerService.open_ledger(settings.LEDGER_PATH)
        except IntegrityError as e:
            report = {"valid": False, "blocks": None, "block_index": e.block_index, "reason": str(e)}
            return Response(report, status=status.HTTP_409_CONFLICT)

        report = LedgerService.verify_chain(ledger)
        return Response(ChainReportSerializer(report).data, status=status.HTTP_200_OK)
