import json
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import structlog
from filelock import FileLock

from evidence_app.api.serializers import EvidenceRecordSerializer
from evidence_app.exceptions import DecodeError, DuplicateContractError, EvidenceNotFound, IntegrityError
from evidence_app.records import EvidenceRecord
from ledger_app.api.serializers import LedgerBlockSerializer
from ledger_app.chain import ZERO_HASH, BlockRef, Ledger, LedgerBlock, make_block, serialize_block


logger = structlog.get_logger(__name__)

WRITER_LOCK_TIMEOUT = 30.0


@dataclass(frozen=True)
class ChainReport:
    """
    Outcome of a chain audit.

    Attributes:
        valid: True if every hash and link verifies
        blocks: Number of blocks examined
        block_index: First broken block, if any
        reason: What was wrong with it
    """
    valid: bool
    blocks: int
    block_index: int | None = None
    reason: str | None = None

    def __bool__(self):
        return self.valid


class LedgerService:
    """
    Service layer for the append-only evidence ledger.

    A single-node, file-persisted hash chain: it detects any change to stored
    bytes but cannot prevent edits to the file itself.
    """

    @staticmethod
    def append_evidence(ledger: Ledger, record: EvidenceRecord, clock=time.time) -> BlockRef:
        """
        Append a record in a new block.

        Args:
            ledger: Ledger to extend
            record: Evidence record to publish
            clock: Returns seconds since the epoch

        Returns:
            BlockRef: Location of the record

        Raises:
            DuplicateContractError: If the contract id is already present
            DecodeError: If the record does not fit the evidence schema
        """
        serializer = EvidenceRecordSerializer(data=EvidenceRecordSerializer(record).data)
        if not serializer.is_valid():
            raise DecodeError(f"Record does not match the evidence schema: {serializer.errors}")

        with ledger.lock:
            if record.contract_id in ledger:
                raise DuplicateContractError(f"Contract '{record.contract_id}' is already registered.")
            block = make_block(len(ledger), int(clock()), ledger.head_hash, [record])
            ledger._push(block)

        logger.info("block_appended", block_index=block.index, block_hash=block.block_hash.hex())
        return BlockRef(block.index, 0)

    @staticmethod
    def verify_chain(ledger: Ledger) -> ChainReport:
        """
        Recompute every block hash and link.

        Returns:
            ChainReport: valid, or invalid naming the first broken block
        """
        blocks = ledger.blocks
        seen: set[str] = set()
        expected_prev = ZERO_HASH

        for position, block in enumerate(blocks):
            problem = LedgerService._block_problem(block, position, expected_prev, seen)
            if problem:
                return ChainReport(False, len(blocks), position, problem)
            seen.update(record.contract_id for record in block.payload)
            expected_prev = block.block_hash

        return ChainReport(True, len(blocks))

    @staticmethod
    def _block_problem(block: LedgerBlock, position: int, expected_prev: bytes, seen: set[str]) -> str | None:
        if block.index != position:
            return f"block at position {position} claims index {block.index}"
        if block.recompute_hash() != block.block_hash:
            return "stored block hash does not match its contents"
        if block.prev_hash != expected_prev:
            return "prev_hash does not link to the previous block"
        ids = [record.contract_id for record in block.payload]
        if len(set(ids)) != len(ids) or seen.intersection(ids):
            return "duplicate contract id"
        return None

    @staticmethod
    def get_evidence(ledger: Ledger, contract_id: str) -> EvidenceRecord:
        """
        Raises:
            EvidenceNotFound: If no record is stored under contract_id
        """
        ref = ledger.locate(contract_id)
        if ref is None:
            raise EvidenceNotFound(f"No evidence registered for contract '{contract_id}'.")
        return ledger.record_at(ref)

    @staticmethod
    def dumps(ledger: Ledger) -> bytes:
        """Ledger file content: one canonical JSON block per line."""
        return b"".join(serialize_block(block) + b"\n" for block in ledger.blocks)

    @staticmethod
    def loads(data: bytes) -> Ledger:
        """
        Parse ledger file content and verify the chain.

        Raises:
            IntegrityError: If any block is malformed, non-canonical,
                truncated or breaks the chain; ``block_index`` names it
        """
        if not data:
            return Ledger()

        lines = data.split(b"\n")
        if lines[-1] != b"":
            raise IntegrityError(
                f"Ledger is truncated: block {len(lines) - 1} has no line terminator.",
                block_index=len(lines) - 1,
            )

        blocks = [LedgerService._parse_line(line, index) for index, line in enumerate(lines[:-1])]
        ledger = Ledger(blocks)

        report = LedgerService.verify_chain(ledger)
        if not report.valid:
            raise IntegrityError(f"Block {report.block_index}: {report.reason}.", block_index=report.block_index)
        return ledger

    @staticmethod
    def _parse_line(line: bytes, index: int) -> LedgerBlock:
        try:
            data = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"Block {index}: not valid JSON ({exc}).", block_index=index) from exc

        serializer = LedgerBlockSerializer(data=data)
        if not serializer.is_valid():
            raise IntegrityError(f"Block {index}: {serializer.errors}", block_index=index)
        block = serializer.save()

        if serialize_block(block) != line:
            raise IntegrityError(f"Block {index}: not in canonical form.", block_index=index)
        return block

    @staticmethod
    def load_ledger(path) -> Ledger:
        """
        Load and verify a ledger file. A missing file is an error; use
        ``open_ledger`` to start a fresh ledger instead.

        Raises:
            OSError: If the file cannot be read
            IntegrityError: If the content does not verify
        """
        ledger = LedgerService.loads(Path(path).read_bytes())
        logger.debug("ledger_loaded", path=str(path), blocks=len(ledger))
        return ledger

    @staticmethod
    def open_ledger(path) -> Ledger:
        """Load a ledger file, or return an empty ledger if it does not exist yet."""
        if not Path(path).exists():
            return Ledger()
        return LedgerService.load_ledger(path)

    @staticmethod
    def writer_lock(path, timeout: float = WRITER_LOCK_TIMEOUT) -> FileLock:
        """
        Exclusive lock for one ledger file. Hold it across the whole
        load, append and save cycle so that concurrent writers queue up
        instead of overwriting each other's blocks.

        Raises:
            filelock.Timeout: On acquire, if another writer holds it longer than timeout
        """
        return FileLock(f"{path}.lock", timeout=timeout)

    @staticmethod
    def save_ledger(ledger: Ledger, path) -> None:
        """
        Write the ledger atomically: the old file is replaced only after the
        new content is fully on disk.

        Raises:
            OSError: If the path is not writable
        """
        path = Path(path)
        data = LedgerService.dumps(ledger)
        with tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", delete=False) as tmp:
            tmp.write(data)
            tmp.flush()
            os.fsync(tmp.fileno())
        try:
            os.replace(tmp.name, path)
        except OSError:
            os.unlink(tmp.name)
            raise
        logger.debug("ledger_saved", path=str(path), blocks=len(ledger))
