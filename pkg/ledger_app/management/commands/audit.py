from pathlib import Path

from core.cli import EXIT_FAILED, EXIT_IO, SvpBaseCommand
from evidence_app.exceptions import IntegrityError
from ledger_app.api.serializers import ChainReportSerializer
from ledger_app.api.services import LedgerService


class Command(SvpBaseCommand):
    help = "Re-verify every block hash and link of the ledger. Exits 1 naming the first broken block."
    uses_params = False

    def handle(self, *args, **options):
        path = Path(self.ledger_path(options))
        if not path.exists():
            self.fail(f"Ledger {path} does not exist.", EXIT_IO)

        try:
            ledger = LedgerService.load_ledger(path)
        except IntegrityError as e:
            self.emit(
                options,
                {'valid': False, 'blocks': None, 'block_index': e.block_index, 'reason': str(e)},
                f"INVALID at block {e.block_index}: {e}",
            )
            self.fail(f"Ledger {path} is invalid at block {e.block_index}.", EXIT_FAILED)
        except OSError as e:
            self.fail(f"Cannot read ledger {path}: {e.strerror or e}", EXIT_IO)

        report = LedgerService.verify_chain(ledger)
        self.emit(options, ChainReportSerializer(report).data, f"OK: {report.blocks} blocks verified" if report.valid
                  else f"INVALID at block {report.block_index}: {report.reason}")
        if not report.valid:
            self.fail(f"Ledger {path} is invalid at block {report.block_index}.", EXIT_FAILED)
