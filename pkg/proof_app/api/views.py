from django.conf import settings
from rest_framework import status
from rest_framework.response import Response
from rest_framework.views import APIView

from evidence_app.exceptions import DecodeError, EvidenceNotFound, IntegrityError, LabelError, ParameterError
from evidence_app.group import resolve_params
from ledger_app.api.services import LedgerService
from proof_app.api.serializers import TranscriptReportSerializer, parse_transcript
from proof_app.api.services import ProofService


class TranscriptVerifyView(APIView):
    """
    API view for arbitrators.

    POST: Re-verifies a proof transcript against the evidence published on
          the ledger. Only public values are involved, so anyone may ask.
    """

    def post(self, request):
        """
        Check a posted transcript round by round.

        Returns:
            Response: Transcript report (200), 400 if the transcript is malformed,
                404 if the contract or term is unknown, 409 if the ledger does not verify
        """
        try:
            transcript = parse_transcript(request.data)
        except DecodeError as e:
            return Response({"error": str(e)}, status=status.HTTP_400_BAD_REQUEST)

        try:
            params = resolve_params(settings.PARAMS_PROFILE)
            ledger = LedgerService.open_ledger(settings.LEDGER_PATH)
            record = LedgerService.get_evidence(ledger, transcript.contract_id)
            report = ProofService.verify_transcript(transcript, record, params)
        except (EvidenceNotFound, LabelError) as e:
            return Response({"error": str(e)}, status=status.HTTP_404_NOT_FOUND)
        except ParameterError as e:
            return Response({"error": str(e)}, status=status.HTTP_400_BAD_REQUEST)
        except IntegrityError as e:
            return Response({"error": str(e), "block_index": e.block_index}, status=status.HTTP_409_CONFLICT)

        return Response(TranscriptReportSerializer(report).data, status=status.HTTP_200_OK)
