from pathlib import Path

from django.conf import settings

from core.cli import EXIT_USAGE, SvpBaseCommand, parse_address
from proof_app.api.services import ProofService, VerifierPolicy


class Command(SvpBaseCommand):
    help = (
        "Listen for provers and verify their proofs against the ledger. "
        "Each connection is an independent session; finished transcripts are stored."
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--listen', default=None, help='Address to listen on, host:port.')
        parser.add_argument('-k', '--rounds', type=int, default=None, help='Minimum rounds per proof.')
        parser.add_argument('--term', action='append', default=None,
                            help='Only accept proofs for this term; repeatable.')
        parser.add_argument('--transcript-dir', default=None)
        parser.add_argument('--max-sessions', type=int, default=None,
                            help='Stop after this many finished sessions.')
        parser.add_argument('--timeout', type=float, default=None, help='Seconds to wait per message.')

    def handle(self, *args, **options):
        k = options['rounds'] if options['rounds'] is not None else settings.PROOF_ROUNDS
        if k < 1:
            self.fail("--rounds must be at least 1.", EXIT_USAGE)
        if options['max_sessions'] is not None and options['max_sessions'] < 1:
            self.fail("--max-sessions must be at least 1.", EXIT_USAGE)
        try:
            address = parse_address(options['listen'] or settings.VERIFIER_ADDRESS)
        except ValueError as e:
            self.fail(str(e), EXIT_USAGE)

        params = self.params(options)
        ledger = self.open_ledger(options)
        policy = VerifierPolicy(
            k=k,
            targets=frozenset(options['term']) if options['term'] else None,
            timeout=options['timeout'] or settings.MESSAGE_TIMEOUT,
            transcript_dir=Path(options['transcript_dir'] or settings.TRANSCRIPT_DIR),
            max_frame=settings.MAX_FRAME_BYTES,
        )

        sessions = ProofService.serve_verifier(
            address, ledger, params, policy, self.rng_factory(options), options['max_sessions'],
        )
        try:
            for transcript in sessions:
                self.emit(
                    options,
                    {
                        'contract_id': transcript.contract_id,
                        'target': transcript.target,
                        'k': transcript.k,
                        'overall': transcript.overall.value,
                    },
                    f"{transcript.contract_id} [{transcript.target or 'contract'}]: "
                    f"{transcript.overall.value} ({transcript.k} rounds)",
                )
        except KeyboardInterrupt:
            pass
        finally:
            sessions.close()
