from core.cli import EXIT_FAILED, EXIT_IO, EXIT_USAGE, SvpBaseCommand
from evidence_app.exceptions import DecodeError, EvidenceNotFound, LabelError, ParameterError
from ledger_app.api.services import LedgerService
from proof_app.api.serializers import TranscriptReportSerializer
from proof_app.api.services import ProofService


class Command(SvpBaseCommand):
    help = "Re-verify a stored proof transcript using only the evidence published on the ledger."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--transcript', required=True, help='Transcript file written by prove or verify_serve.')

    def handle(self, *args, **options):
        params = self.params(options)
        try:
            transcript = ProofService.load_transcript(options['transcript'])
        except DecodeError as e:
            self.fail(str(e), EXIT_FAILED)
        except OSError as e:
            self.fail(f"Cannot read {options['transcript']}: {e.strerror or e}", EXIT_IO)

        ledger = self.open_ledger(options)
        try:
            record = LedgerService.get_evidence(ledger, transcript.contract_id)
            report = ProofService.verify_transcript(transcript, record, params)
        except (EvidenceNotFound, LabelError) as e:
            self.fail(str(e), EXIT_FAILED)
        except ParameterError as e:
            self.fail(str(e), EXIT_USAGE)

        self.emit(
            options,
            TranscriptReportSerializer(report).data,
            f"{'VALID' if report.valid else 'INVALID'}: {transcript.contract_id} "
            f"[{transcript.target or 'contract'}], {report.rounds_checked} rounds"
            + (f" ({report.reason})" if report.reason else ""),
        )
        if not report.valid:
            self.fail("Transcript does not verify.", EXIT_FAILED)
