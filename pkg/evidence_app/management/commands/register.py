from django.core.management.base import CommandError
from filelock import Timeout

from core.cli import EXIT_FAILED, EXIT_IO, EXIT_USAGE, SvpBaseCommand
from evidence_app.api.services import EvidenceService
from evidence_app.exceptions import (
    ContentError,
    DecodeError,
    DuplicateContractError,
    ParameterError,
    SaltError,
)
from evidence_app.group import int_to_hex
from ledger_app.api.services import LedgerService


class Command(SvpBaseCommand):
    help = (
        "Derive evidence for a contract file and append it to the ledger. "
        "The salt is read from the environment (see SVP_SALT_ENV) or prompted for."
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--content', required=True, help='Contract container file.')
        parser.add_argument('--contract-id', required=True)

    def handle(self, *args, **options):
        params = self.params(options)
        contract_id = options['contract_id']
        salt = self.read_salt(contract_id)

        try:
            content = EvidenceService.load_content(options['content'])
        except ContentError as e:
            self.fail(f"Invalid contract file: {e}", EXIT_USAGE)
        except OSError as e:
            self.fail(f"Cannot read {options['content']}: {e.strerror or e}", EXIT_IO)

        path = self.ledger_path(options)
        try:
            with LedgerService.writer_lock(path):
                record, ref = self._append(content, salt, contract_id, params, options)
        except Timeout:
            self.fail(f"Ledger {path} is locked by another writer.", EXIT_IO)
        except OSError as e:
            self.fail(f"Cannot lock ledger {path}: {e.strerror or e}", EXIT_IO)

        self.emit(
            options,
            {
                'contract_id': record.contract_id,
                'e': int_to_hex(record.e),
                'block_index': ref.block_index,
                'terms': list(record.labels),
                'params_id': record.params_id,
            },
            f"Registered {record.contract_id} in block {ref.block_index}\ne = {int_to_hex(record.e)}",
        )

    def _append(self, content, salt, contract_id, params, options):
        # Caller holds the writer lock: load, append and save see one ledger state.
        ledger = self.open_ledger(options, must_exist=False)
        try:
            record, ref = EvidenceService.register(content, salt, contract_id, ledger, params, self.clock(options))
        except DuplicateContractError as e:
            self.fail(str(e), EXIT_FAILED)
        except (SaltError, ContentError, DecodeError, ParameterError) as e:
            self.fail(str(e), EXIT_USAGE)

        try:
            LedgerService.save_ledger(ledger, self.ledger_path(options))
        except OSError as e:
            raise CommandError(f"Cannot write ledger: {e.strerror or e}", returncode=EXIT_IO)
        return record, ref
