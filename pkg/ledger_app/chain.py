"""
Hash-chained blocks of evidence records.

block_hash = SHA-256(canonical JSON of {index, timestamp, prev_hash, payload}),
and every block's prev_hash is the previous block's block_hash (32 zero bytes
for the genesis block). Any retroactive edit therefore changes a hash that a
later check recomputes.
"""
import threading
from dataclasses import dataclass

from evidence_app.api.serializers import EvidenceRecordSerializer
from evidence_app.api.utils import canonical_bytes, sha256_digest
from evidence_app.records import EvidenceRecord


ZERO_HASH = bytes(32)


@dataclass(frozen=True)
class LedgerBlock:
    """
    Tamper-evident storage unit.

    Attributes:
        index: Position in the chain, from 0
        timestamp: Seconds since the epoch
        prev_hash: block_hash of the previous block (zeros for genesis)
        payload: Evidence records; one per block by default
        block_hash: SHA-256 over the other four fields
    """
    index: int
    timestamp: int
    prev_hash: bytes
    payload: tuple[EvidenceRecord, ...]
    block_hash: bytes

    def header(self) -> dict:
        return block_header(self.index, self.timestamp, self.prev_hash, self.payload)

    def to_dict(self) -> dict:
        data = self.header()
        data['block_hash'] = self.block_hash.hex()
        return data

    def recompute_hash(self) -> bytes:
        return sha256_digest(canonical_bytes(self.header()))


@dataclass(frozen=True)
class BlockRef:
    """Where a record lives: block index and offset inside the block's payload."""
    block_index: int
    offset: int


def block_header(index: int, timestamp: int, prev_hash: bytes, payload) -> dict:
    return {
        'index': index,
        'timestamp': timestamp,
        'prev_hash': prev_hash.hex(),
        'payload': [EvidenceRecordSerializer(record).data for record in payload],
    }


def make_block(index: int, timestamp: int, prev_hash: bytes, payload) -> LedgerBlock:
    payload = tuple(payload)
    digest = sha256_digest(canonical_bytes(block_header(index, timestamp, prev_hash, payload)))
    return LedgerBlock(index, timestamp, prev_hash, payload, digest)


def serialize_block(block: LedgerBlock) -> bytes:
    """One ledger-file line, without the trailing newline."""
    return canonical_bytes(block.to_dict())


class Ledger:
    """
    Ordered blocks plus an index from contract id to BlockRef.

    Appends go through ``LedgerService.append_evidence``, which holds
    ``lock`` so there is a single writer at a time; readers take the same
    lock and never observe a block without its index entry. Existing blocks
    are never replaced.
    """

    def __init__(self, blocks=()):
        self.lock = threading.RLock()
        self._blocks: list[LedgerBlock] = []
        self._index: dict[str, BlockRef] = {}
        for block in blocks:
            self._push(block)

    def _push(self, block: LedgerBlock) -> None:
        self._blocks.append(block)
        for offset, record in enumerate(block.payload):
            self._index.setdefault(record.contract_id, BlockRef(block.index, offset))

    @property
    def blocks(self) -> tuple[LedgerBlock, ...]:
        with self.lock:
            return tuple(self._blocks)

    @property
    def head_hash(self) -> bytes:
        with self.lock:
            return self._blocks[-1].block_hash if self._blocks else ZERO_HASH

    def locate(self, contract_id: str) -> BlockRef | None:
        with self.lock:
            return self._index.get(contract_id)

    def record_at(self, ref: BlockRef) -> EvidenceRecord:
        with self.lock:
            return self._blocks[ref.block_index].payload[ref.offset]

    def __len__(self):
        with self.lock:
            return len(self._blocks)

    def __contains__(self, contract_id):
        return self.locate(contract_id) is not None
