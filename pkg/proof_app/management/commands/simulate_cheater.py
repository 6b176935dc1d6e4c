from django.conf import settings

from core.cli import EXIT_FAILED, EXIT_USAGE, SvpBaseCommand
from evidence_app.exceptions import EvidenceNotFound, LabelError, ParameterError
from ledger_app.api.services import LedgerService
from proof_app.api.serializers import CheaterReportSerializer
from proof_app.api.services import ProofService


class Command(SvpBaseCommand):
    help = (
        "Run a prover that does not know the witness against an honest verifier, "
        "and compare its acceptance rate with the 2^-k bound."
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--contract-id', required=True)
        parser.add_argument('-k', '--rounds', type=int, default=None)
        parser.add_argument('--trials', type=int, default=10000)
        parser.add_argument('--term', default=None, help='Cheat on this term instead of the whole contract.')

    def handle(self, *args, **options):
        k = options['rounds'] if options['rounds'] is not None else settings.PROOF_ROUNDS
        if k < 1:
            self.fail("--rounds must be at least 1.", EXIT_USAGE)
        if options['trials'] < 1:
            self.fail("--trials must be at least 1.", EXIT_USAGE)

        params = self.params(options)
        ledger = self.open_ledger(options)
        try:
            record = LedgerService.get_evidence(ledger, options['contract_id'])
            report = ProofService.simulate_cheater(
                record, params, k, options['trials'], self.rng(options), options['term'],
            )
        except (EvidenceNotFound, LabelError) as e:
            self.fail(str(e), EXIT_FAILED)
        except ParameterError as e:
            self.fail(str(e), EXIT_USAGE)

        self.emit(
            options,
            CheaterReportSerializer(report).data,
            f"k={report.k} trials={report.trials}\n"
            f"per-round acceptance: {report.round_rate:.4f} (expected 0.5)\n"
            f"overall acceptance:   {report.overall_rate:.6f} "
            f"({report.proofs_accepted} accepted, bound 2^-{report.k} = {report.bound:.3g})",
        )
