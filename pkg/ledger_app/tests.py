import io
import json
import tempfile
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings
from filelock import Timeout
from rest_framework import status
from rest_framework.exceptions import ValidationError
from rest_framework.test import APIClient

from evidence_app.api.services import EvidenceService
from evidence_app.exceptions import DuplicateContractError, EvidenceNotFound, IntegrityError
from evidence_app.group import TOY, seeded_rng
from evidence_app.records import SecretWitness
from ledger_app.api.serializers import DigestField, LedgerBlockSerializer
from ledger_app.api.services import LedgerService
from ledger_app.chain import ZERO_HASH, Ledger


def toy_record(contract_id, x=3, terms=(("period", 5),)):
    witness = SecretWitness(x=x, term_witnesses=tuple(terms), salt=bytes(16))
    return EvidenceService.generate_evidence(witness, TOY, contract_id, created_at=1700000000)


def toy_ledger(count):
    ledger = Ledger()
    for n in range(count):
        LedgerService.append_evidence(ledger, toy_record(f"contract-{n}", x=n % 11), clock=lambda: 1700000000 + n)
    return ledger


class LedgerServiceTests(SimpleTestCase):

    def test_genesis_block(self):
        ledger = Ledger()
        ref = LedgerService.append_evidence(ledger, toy_record("c-0"), clock=lambda: 1)
        self.assertEqual(ref.block_index, 0)
        self.assertEqual(ledger.blocks[0].prev_hash, ZERO_HASH)

    def test_blocks_are_chained(self):
        ledger = toy_ledger(2)
        self.assertEqual(ledger.blocks[1].prev_hash, ledger.blocks[0].block_hash)
        self.assertEqual(ledger.blocks[0].block_hash, ledger.blocks[0].recompute_hash())

    def test_duplicate_contract_id(self):
        ledger = toy_ledger(1)
        with self.assertRaises(DuplicateContractError):
            LedgerService.append_evidence(ledger, toy_record("contract-0", x=7))
        self.assertEqual(len(ledger), 1)

    def test_get_evidence(self):
        ledger = Ledger()
        record = toy_record("lodging-1")
        LedgerService.append_evidence(ledger, record)
        self.assertEqual(LedgerService.get_evidence(ledger, "lodging-1"), record)
        with self.assertRaises(EvidenceNotFound):
            LedgerService.get_evidence(ledger, "unknown")

    def test_get_evidence_in_a_large_ledger(self):
        rng = seeded_rng(8)
        ledger = Ledger()
        expected = {}
        for n in range(1000):
            record = toy_record(f"c-{n}", x=rng.randrange(11), terms=(("period", rng.randrange(11)),))
            LedgerService.append_evidence(ledger, record, clock=lambda: 0)
            expected[record.contract_id] = record
        for contract_id in rng.sample(sorted(expected), 50):
            self.assertEqual(LedgerService.get_evidence(ledger, contract_id), expected[contract_id])

    def test_valid_chain(self):
        report = LedgerService.verify_chain(toy_ledger(10))
        self.assertTrue(report.valid)
        self.assertEqual(report.blocks, 10)

    def test_swapped_blocks(self):
        blocks = list(toy_ledger(5).blocks)
        blocks[1], blocks[2] = blocks[2], blocks[1]
        report = LedgerService.verify_chain(Ledger(blocks))
        self.assertFalse(report.valid)
        self.assertEqual(report.block_index, 1)

        lines = LedgerService.dumps(toy_ledger(5)).split(b"\n")
        lines[1], lines[2] = lines[2], lines[1]
        with self.assertRaises(IntegrityError) as cm:
            LedgerService.loads(b"\n".join(lines))
        self.assertEqual(cm.exception.block_index, 1)

    def test_every_single_byte_mutation_is_detected(self):
        data = LedgerService.dumps(toy_ledger(3))
        for pos in range(len(data)):
            mutated = bytearray(data)
            mutated[pos] ^= 0x01
            with self.subTest(pos=pos):
                with self.assertRaises(IntegrityError) as cm:
                    LedgerService.loads(bytes(mutated))
                self.assertEqual(cm.exception.block_index, data[:pos].count(b"\n"))

    def test_altered_hex_digit(self):
        data = LedgerService.dumps(toy_ledger(3))
        lines = data.split(b"\n")
        block = json.loads(lines[2])
        block["payload"][0]["e"] = "9" if block["payload"][0]["e"] != "9" else "8"
        lines[2] = json.dumps(block, sort_keys=True, separators=(",", ":")).encode()
        with self.assertRaises(IntegrityError) as cm:
            LedgerService.loads(b"\n".join(lines))
        self.assertEqual(cm.exception.block_index, 2)

    def test_truncated_file(self):
        data = LedgerService.dumps(toy_ledger(3))
        for cut in (1, len(data) // 2):
            with self.subTest(cut=cut), self.assertRaises(IntegrityError):
                LedgerService.loads(data[:-cut])

    def test_prefix_is_stable_across_appends(self):
        ledger = Ledger()
        previous = LedgerService.dumps(ledger)
        for n in range(5):
            LedgerService.append_evidence(ledger, toy_record(f"c-{n}"), clock=lambda: n)
            current = LedgerService.dumps(ledger)
            self.assertTrue(current.startswith(previous))
            previous = current

    def test_empty_file_is_an_empty_ledger(self):
        self.assertEqual(len(LedgerService.loads(b"")), 0)

    def test_loads_reads_back_a_non_empty_ledger(self):
        ledger = toy_ledger(3)
        loaded = LedgerService.loads(LedgerService.dumps(ledger))
        self.assertEqual(len(loaded), 3)
        self.assertEqual(loaded.blocks, ledger.blocks)
        self.assertEqual(loaded.blocks[0].prev_hash, ZERO_HASH)
        self.assertEqual(loaded.blocks[1].prev_hash, ledger.blocks[0].block_hash)

    def test_digest_field_checks_hex_then_returns_bytes(self):
        field = DigestField()
        self.assertEqual(field.run_validation("00" * 32), ZERO_HASH)
        self.assertEqual(field.run_validation("ab" * 32), bytes([0xab]) * 32)
        self.assertEqual(field.to_representation(ZERO_HASH), "00" * 32)
        for value in ("AB" * 32, "00" * 31, "00" * 33, "zz" * 32, 7):
            with self.subTest(value=value), self.assertRaises(ValidationError):
                field.run_validation(value)

    def test_block_serializer_accepts_stored_blocks(self):
        line = LedgerService.dumps(toy_ledger(2)).split(b"\n")[1]
        serializer = LedgerBlockSerializer(data=json.loads(line))
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(len(serializer.validated_data['prev_hash']), 32)
        self.assertEqual(len(serializer.validated_data['block_hash']), 32)

    def test_writer_lock_is_exclusive(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ledger.jsonl"
            with LedgerService.writer_lock(path):
                with self.assertRaises(Timeout):
                    LedgerService.writer_lock(path, timeout=0).acquire()
            lock = LedgerService.writer_lock(path, timeout=0)
            with lock:
                self.assertTrue(lock.is_locked)

    def test_save_and_load(self):
        ledger = toy_ledger(4)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ledger.jsonl"
            LedgerService.save_ledger(ledger, path)
            loaded = LedgerService.load_ledger(path)
            self.assertTrue(LedgerService.verify_chain(loaded))
            self.assertEqual(loaded.blocks, ledger.blocks)
            self.assertEqual(path.read_bytes(), LedgerService.dumps(ledger))

    def test_missing_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ledger.jsonl"
            with self.assertRaises(OSError):
                LedgerService.load_ledger(path)
            self.assertEqual(len(LedgerService.open_ledger(path)), 0)


class LedgerApiTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "ledger.jsonl"
        LedgerService.save_ledger(toy_ledger(3), self.path)
        self.settings_override = override_settings(LEDGER_PATH=self.path, PARAMS_PROFILE="toy")
        self.settings_override.enable()
        self.addCleanup(self.settings_override.disable)
        self.client = APIClient()

    def test_evidence_detail(self):
        response = self.client.get('/api/evidence/contract-1/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.json()["contract_id"], "contract-1")
        self.assertEqual(response.json()["e"], "2")
        self.assertEqual(response.json()["params_id"], TOY.params_id)

    def test_unknown_evidence(self):
        response = self.client.get('/api/evidence/nope/')
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)

    def test_audit(self):
        response = self.client.get('/api/ledger/audit/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.json(), {"valid": True, "blocks": 3, "block_index": None, "reason": None})

    def test_audit_of_tampered_ledger(self):
        data = bytearray(self.path.read_bytes())
        pos = data.index(b'"timestamp":', data.index(b"\n") + 1) + len(b'"timestamp":') + 3
        data[pos] ^= 0x01
        self.path.write_bytes(bytes(data))
        response = self.client.get('/api/ledger/audit/')
        self.assertEqual(response.status_code, status.HTTP_409_CONFLICT)
        self.assertEqual(response.json()["block_index"], 1)


class AuditCommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "ledger.jsonl"
        LedgerService.save_ledger(toy_ledger(3), self.path)

    def test_valid_ledger(self):
        out = io.StringIO()
        call_command("audit", ledger=str(self.path), json=True, stdout=out)
        self.assertEqual(json.loads(out.getvalue()), {"valid": True, "blocks": 3, "block_index": None, "reason": None})

    def test_tampered_ledger_names_the_block(self):
        lines = self.path.read_bytes().split(b"\n")
        lines[2] = lines[2].replace(b'"index":2', b'"index":3')
        self.path.write_bytes(b"\n".join(lines))
        out = io.StringIO()
        with self.assertRaises(CommandError) as cm:
            call_command("audit", ledger=str(self.path), json=True, stdout=out)
        self.assertEqual(cm.exception.returncode, 1)
        self.assertEqual(json.loads(out.getvalue())["block_index"], 2)

    def test_missing_ledger(self):
        with self.assertRaises(CommandError) as cm:
            call_command("audit", ledger=str(Path(self.tmp.name) / "missing.jsonl"))
        self.assertEqual(cm.exception.returncode, 3)
