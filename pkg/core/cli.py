"""
Shared plumbing for the project's management commands.

Every command supports ``--json`` for machine-readable output and exits with
a stable code: 0 success, 1 verification or audit failure, 2 usage error,
3 I/O error. Salts are read from an environment variable or prompted for,
never taken from the command line.
"""
import getpass
import os
import time

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from evidence_app.api.serializers import RegisterEvidenceSerializer
from evidence_app.api.utils import canonical_dumps
from evidence_app.exceptions import IntegrityError, ParameterError
from evidence_app.group import GroupParams, RandomSource, resolve_params, seeded_rng, system_rng
from ledger_app.api.services import LedgerService
from ledger_app.chain import Ledger


EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

SEEDABLE_PROFILES = ("toy",)


def parse_address(text: str) -> tuple[str, int]:
    """
    Split ``host:port``.

    Raises:
        ValueError: If the port is missing or not a number in 0..65535
    """
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or int(port) > 65535:
        raise ValueError(f"Expected host:port, got {text!r}.")
    return host, int(port)


class SvpBaseCommand(BaseCommand):
    """
    Base class for commands working with group parameters and the ledger.

    Subclasses call ``super().add_arguments(parser)`` and then use the
    helpers below instead of touching settings directly.
    """
    uses_params = True
    uses_ledger = True

    def add_arguments(self, parser):
        parser.add_argument('--json', action='store_true', help='Write machine-readable JSON to stdout.')
        parser.add_argument('--seed', type=int, default=None,
                            help='Deterministic randomness and clock; toy profile only.')
        if self.uses_params:
            parser.add_argument('--params', default=None,
                                help='Profile name (toy, production) or path to a parameter file.')
        if self.uses_ledger:
            parser.add_argument('--ledger', default=None, help='Ledger file path.')

    def fail(self, message: str, code: int = EXIT_FAILED):
        raise CommandError(message, returncode=code)

    def params(self, options) -> GroupParams:
        try:
            params = resolve_params(options.get('params') or settings.PARAMS_PROFILE)
        except ParameterError as e:
            self.fail(str(e), EXIT_USAGE)
        if options.get('seed') is not None and params.name not in SEEDABLE_PROFILES:
            self.fail("--seed is only accepted with the toy profile.", EXIT_USAGE)
        return params

    def rng(self, options) -> RandomSource:
        seed = options.get('seed')
        return system_rng() if seed is None else seeded_rng(seed)

    def rng_factory(self, options):
        seed = options.get('seed')
        return system_rng if seed is None else (lambda: seeded_rng(seed))

    def clock(self, options):
        if options.get('seed') is None:
            return time.time
        return lambda: settings.TEST_PROFILE_EPOCH

    def ledger_path(self, options):
        return options.get('ledger') or settings.LEDGER_PATH

    def open_ledger(self, options, must_exist: bool = True) -> Ledger:
        """
        Load the ledger, mapping a missing file to exit 3 and a corrupt one to exit 1.
        """
        path = self.ledger_path(options)
        try:
            if must_exist:
                return LedgerService.load_ledger(path)
            return LedgerService.open_ledger(path)
        except IntegrityError as e:
            self.fail(f"Ledger {path} does not verify: {e}", EXIT_FAILED)
        except OSError as e:
            self.fail(f"Cannot read ledger {path}: {e.strerror or e}", EXIT_IO)

    def read_salt(self, contract_id: str) -> bytes:
        """
        Salt as hex from the configured environment variable, or from a
        hidden prompt when it is not set.
        """
        salt_hex = os.environ.get(settings.SALT_ENV_VAR)
        if salt_hex is None:
            try:
                salt_hex = getpass.getpass("Contract salt (hex): ")
            except (EOFError, KeyboardInterrupt):
                self.fail(f"No salt given; set {settings.SALT_ENV_VAR}.", EXIT_USAGE)

        serializer = RegisterEvidenceSerializer(data={'contract_id': contract_id, 'salt': salt_hex.strip()})
        if not serializer.is_valid():
            errors = "; ".join(f"{field}: {' '.join(map(str, messages))}"
                               for field, messages in serializer.errors.items())
            self.fail(errors, EXIT_USAGE)
        return serializer.validated_data['salt']

    def emit(self, options, data: dict, human: str):
        """Write one result: canonical JSON with --json, otherwise the human text."""
        self.stdout.write(canonical_dumps(data) if options.get('json') else human)
