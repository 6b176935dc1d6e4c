from pathlib import Path

from django.conf import settings
from django.utils.text import slugify

from core.cli import EXIT_FAILED, EXIT_IO, EXIT_USAGE, SvpBaseCommand, parse_address
from evidence_app.api.services import EvidenceService
from evidence_app.exceptions import ContentError, LabelError, SaltError, SessionError, SvpError, TransportError
from proof_app.api.services import ContractProver, ProofService, ProverKnowledge
from proof_app.protocol import Verdict


class Command(SvpBaseCommand):
    help = (
        "Prove knowledge of a registered contract to a listening verifier. "
        "Runs one session for the whole contract, or one per --term."
    )
    uses_ledger = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--connect', default=None, help='Verifier address, host:port.')
        parser.add_argument('--content', required=True, help='Contract container file.')
        parser.add_argument('--contract-id', required=True)
        parser.add_argument('-k', '--rounds', type=int, default=None, help='Rounds to request.')
        parser.add_argument('--term', action='append', default=None,
                            help='Prove this term instead of the whole contract; repeatable.')
        parser.add_argument('--transcript-out', default=None, help='Write the transcript here.')
        parser.add_argument('--timeout', type=float, default=None, help='Seconds to wait per message.')

    def handle(self, *args, **options):
        k = options['rounds'] if options['rounds'] is not None else settings.PROOF_ROUNDS
        if k < 1:
            self.fail("--rounds must be at least 1.", EXIT_USAGE)
        try:
            address = parse_address(options['connect'] or settings.VERIFIER_ADDRESS)
        except ValueError as e:
            self.fail(str(e), EXIT_USAGE)

        params = self.params(options)
        contract_id = options['contract_id']
        salt = self.read_salt(contract_id)
        try:
            content = EvidenceService.load_content(options['content'])
            witness = EvidenceService.derive_witness(content, salt, params)
        except (ContentError, SaltError) as e:
            self.fail(str(e), EXIT_USAGE)
        except OSError as e:
            self.fail(f"Cannot read {options['content']}: {e.strerror or e}", EXIT_IO)

        prover = ContractProver(params, ProverKnowledge.from_witness(witness), self.rng(options))
        targets = options['term'] or [None]
        timeout = options['timeout'] or settings.MESSAGE_TIMEOUT

        results = []
        for target in targets:
            try:
                verdict, transcript = ProofService.run_prover(
                    address, prover, contract_id, target, k, timeout, settings.MAX_FRAME_BYTES,
                )
            except LabelError as e:
                self.fail(str(e), EXIT_USAGE)
            except TransportError as e:
                self.fail(str(e), EXIT_IO)
            except SessionError as e:
                self.fail(str(e), EXIT_FAILED)
            except SvpError as e:
                self.fail(f"Session failed: {e}", EXIT_FAILED)

            if options['transcript_out']:
                self._write(transcript, options['transcript_out'], target, len(targets) > 1)
            results.append((target, verdict, transcript))

        self.emit(
            options,
            {
                'contract_id': contract_id,
                'results': [
                    {'target': target, 'k': transcript.k, 'verdict': verdict.value}
                    for target, verdict, transcript in results
                ],
            },
            "\n".join(
                f"{target or 'contract'}: {verdict.value} ({transcript.k} rounds)"
                for target, verdict, transcript in results
            ),
        )
        if any(verdict is not Verdict.ACCEPT for _, verdict, _ in results):
            self.fail("Proof rejected.", EXIT_FAILED)

    def _write(self, transcript, out, target, per_term):
        path = Path(out)
        if per_term:
            path = path.with_name(f"{path.stem}-{slugify(target)}{path.suffix}")
        try:
            ProofService.write_transcript(transcript, path)
        except OSError as e:
            self.fail(f"Cannot write transcript {path}: {e.strerror or e}", EXIT_IO)
