from pathlib import Path

from django.core.management.base import CommandError

from core.cli import EXIT_FAILED, EXIT_IO, EXIT_USAGE, SvpBaseCommand
from evidence_app.exceptions import ParameterError
from evidence_app.group import PROFILES, dump_params, generate_params, validate_params


class Command(SvpBaseCommand):
    help = "Write a group parameter file for a named profile or a freshly generated safe-prime group."
    uses_params = False
    uses_ledger = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--profile', choices=sorted(PROFILES), default='production')
        parser.add_argument('--bits', type=int, default=None,
                            help='Generate a new safe-prime group of this size instead of using a profile.')
        parser.add_argument('--out', required=True, help='Parameter file to write.')

    def handle(self, *args, **options):
        if options['seed'] is not None and options['bits'] is None and options['profile'] != 'toy':
            self.fail("--seed is only accepted with the toy profile or --bits.", EXIT_USAGE)

        if options['bits'] is not None:
            try:
                params = generate_params(options['bits'], self.rng(options))
            except ParameterError as e:
                self.fail(str(e), EXIT_USAGE)
            report = validate_params(params)
        else:
            params = PROFILES[options['profile']]
            report = validate_params(params, production=options['profile'] == 'production')

        if not report.valid:
            self.fail(f"Refusing to write invalid parameters: {report.reason}.", EXIT_FAILED)

        out = Path(options['out'])
        try:
            out.write_text(dump_params(params), encoding="ascii")
        except OSError as e:
            raise CommandError(f"Cannot write {out}: {e.strerror or e}", returncode=EXIT_IO)

        self.emit(
            options,
            {'path': str(out), 'params_id': params.params_id, 'bits': params.p.bit_length(), 'name': params.name},
            f"Wrote {params.p.bit_length()}-bit parameters {params.params_id} to {out}",
        )
