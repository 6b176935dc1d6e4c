import dataclasses
import hashlib
import io
import os
import random
import tempfile
import threading
from collections import Counter
from pathlib import Path
from unittest import mock

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings
from filelock import FileLock, Timeout

from evidence_app.api.services import EvidenceService
from evidence_app.api.utils import canonical_bytes, format_contract_file, length_prefixed, parse_contract_file
from evidence_app.api.serializers import EvidenceRecordSerializer
from evidence_app.exceptions import ContentError, DecodeError, EntropyError, LabelError, ParameterError, SaltError
from evidence_app.group import (
    PRODUCTION,
    TOY,
    GroupParams,
    dump_params,
    generate_params,
    hash_to_scalar,
    hex_to_int,
    int_to_hex,
    is_member,
    load_params,
    mod_exp,
    parse_params,
    random_scalar,
    resolve_params,
    seeded_rng,
    system_rng,
    validate_params,
)
from evidence_app.records import ContractContent, ContractTerm, SecretWitness
from ledger_app.api.services import LedgerService
from ledger_app.chain import Ledger


SALT = bytes(range(16))
UPPER = "GHIJKLMNOPQRSTUVWXYZ"


def lodging_contract(period=b"2024-01..2024-02", address=b"12 Harbour Road"):
    return ContractContent(
        body=b"Lodging agreement between A and B for the flat at the harbour.",
        terms=(ContractTerm("period", period), ContractTerm("address", address)),
    )


def random_contract(rng: random.Random) -> ContractContent:
    """Contract made of letters that never occur in hex, JSON keys or ids."""
    text = lambda n: "".join(rng.choice(UPPER) for _ in range(n)).encode()
    return ContractContent(body=text(64), terms=(ContractTerm("period", text(24)), ContractTerm("address", text(24))))


class FailingRng:
    def randrange(self, *args):
        raise OSError("entropy pool unavailable")

    def getrandbits(self, k):
        raise OSError("entropy pool unavailable")


class GroupMathTests(SimpleTestCase):

    def test_mod_exp_in_toy_group(self):
        self.assertEqual(mod_exp(2, 3, TOY), 8)
        self.assertEqual(mod_exp(2, 11, TOY), 1)
        self.assertEqual(mod_exp(2, 0, TOY), 1)

    def test_mod_exp_refuses_invalid_params(self):
        with self.assertRaises(ParameterError):
            mod_exp(2, 3, GroupParams(p=24, q=11, g=2))

    def test_validate_params_names_the_violated_invariant(self):
        cases = [
            (GroupParams(p=24, q=11, g=2), "p is not prime"),
            (GroupParams(p=23, q=22, g=2), "q is not prime"),
            (GroupParams(p=23, q=7, g=2), "q does not divide p - 1"),
            (GroupParams(p=23, q=11, g=1), "g is the identity"),
            (GroupParams(p=23, q=11, g=24), "g is the identity"),
            (GroupParams(p=23, q=11, g=25), "g is outside [2, p - 1]"),
            (GroupParams(p=23, q=11, g=5), "g does not have order q"),
            (GroupParams(p=23, q=11, g=22), "g does not have order q"),
        ]
        for params, reason in cases:
            with self.subTest(params=params):
                report = validate_params(params)
                self.assertFalse(report.valid)
                self.assertEqual(report.reason, reason)

    def test_small_p_is_reported_as_too_small(self):
        report = validate_params(GroupParams(p=3, q=1, g=2))
        self.assertFalse(report.valid)
        self.assertEqual(report.reason, "p is too small")

    def test_every_single_field_corruption_is_rejected(self):
        toy_cases = [
            (dataclasses.replace(TOY, p=3), "p is too small"),
            (dataclasses.replace(TOY, p=24), "p is not prime"),
            (dataclasses.replace(TOY, p=29), "q does not divide p - 1"),
            (dataclasses.replace(TOY, q=22), "q is not prime"),
            (dataclasses.replace(TOY, q=7), "q does not divide p - 1"),
            (dataclasses.replace(TOY, q=2), "g does not have order q"),
            (dataclasses.replace(TOY, g=0), "g is outside [2, p - 1]"),
            (dataclasses.replace(TOY, g=1), "g is the identity"),
            (dataclasses.replace(TOY, g=5), "g does not have order q"),
        ]
        p, q = PRODUCTION.p, PRODUCTION.q
        production_cases = [
            (dataclasses.replace(PRODUCTION, p=p - 1), "p is not prime"),
            (dataclasses.replace(PRODUCTION, p=p + 1), "p is not prime"),
            (dataclasses.replace(PRODUCTION, q=q + 1), "q is not prime"),
            (dataclasses.replace(PRODUCTION, q=2), "g does not have order q"),
            (dataclasses.replace(PRODUCTION, g=1), "g is the identity"),
            (dataclasses.replace(PRODUCTION, g=p), "g is outside [2, p - 1]"),
            (dataclasses.replace(PRODUCTION, g=p - 1), "g does not have order q"),
        ]
        for params, reason in toy_cases:
            with self.subTest(params=params):
                self.assertEqual(validate_params(params).reason, reason)
        for params, reason in production_cases:
            with self.subTest(reason=reason, p_changed=params.p != p, q_changed=params.q != q):
                report = validate_params(params, production=True)
                self.assertFalse(report.valid)
                self.assertEqual(report.reason, reason)

    def test_shipped_profiles_are_valid(self):
        self.assertTrue(validate_params(TOY))
        self.assertTrue(validate_params(PRODUCTION, production=True))
        self.assertEqual(PRODUCTION.p.bit_length(), 2048)

    def test_toy_profile_is_not_production_grade(self):
        report = validate_params(TOY, production=True)
        self.assertFalse(report.valid)
        self.assertIn("2048", report.reason)

    def test_membership(self):
        self.assertTrue(is_member(8, TOY))
        self.assertTrue(is_member(1, TOY))
        self.assertFalse(is_member(5, TOY))
        self.assertFalse(is_member(0, TOY))
        self.assertFalse(is_member(23, TOY))

    def test_random_scalar_range_and_entropy_failure(self):
        rng = seeded_rng(1)
        draws = {random_scalar(TOY, rng) for _ in range(500)}
        self.assertEqual(draws, set(range(11)))
        with self.assertRaises(EntropyError):
            random_scalar(TOY, FailingRng())

    def test_random_scalar_is_uniform(self):
        rng = seeded_rng(7)
        draws = 10000
        counts = Counter(random_scalar(TOY, rng) for _ in range(draws))
        expected = draws / TOY.q
        chi_square = sum((counts[v] - expected) ** 2 / expected for v in range(TOY.q))
        # q - 1 = 10 degrees of freedom: mean 10, variance 20; allow five standard deviations.
        self.assertLess(chi_square, 10 + 5 * 20 ** 0.5)

    def test_random_scalar_with_trivial_order(self):
        trivial = GroupParams(p=3, q=1, g=2)
        for rng in (seeded_rng(5), system_rng()):
            self.assertEqual({random_scalar(trivial, rng) for _ in range(100)}, {0})

    def test_hash_to_scalar_of_empty_input(self):
        expected = int.from_bytes(hashlib.sha256(b"").digest(), "big") % 11
        self.assertEqual(expected, 9)
        self.assertEqual(hash_to_scalar(b"", TOY), 9)

    def test_hash_to_scalar_has_no_collisions(self):
        scalars = {hash_to_scalar(b"contract-%d" % n, PRODUCTION) for n in range(1000)}
        self.assertEqual(len(scalars), 1000)

    def test_hash_to_scalar_is_deterministic_and_reduced(self):
        first = hash_to_scalar(b"contract", PRODUCTION)
        self.assertEqual(first, hash_to_scalar(b"contract", PRODUCTION))
        self.assertNotEqual(first, hash_to_scalar(b"contracT", PRODUCTION))
        self.assertTrue(0 <= hash_to_scalar(b"contract", TOY) < 11)

    def test_exponent_homomorphism(self):
        rng = seeded_rng(2024)
        for params in (TOY, PRODUCTION):
            for _ in range(1000):
                a = mod_exp(params.g, rng.randrange(params.q), params)
                x, y = rng.randrange(params.q), rng.randrange(params.q)
                self.assertEqual(
                    mod_exp(a, x, params) * mod_exp(a, y, params) % params.p,
                    mod_exp(a, (x + y) % params.q, params),
                )

    def test_canonical_hex(self):
        self.assertEqual(int_to_hex(0), "0")
        self.assertEqual(int_to_hex(255), "ff")
        self.assertEqual(hex_to_int("ff"), 255)
        for text in ("0ff", "FF", "-1", "0x1", "", " 1"):
            with self.subTest(text=text), self.assertRaises(ValueError):
                hex_to_int(text)

    def test_params_file_format(self):
        text = "# toy group\n" + dump_params(TOY)
        params = parse_params(text, name="toy")
        self.assertEqual((params.p, params.q, params.g), (23, 11, 2))
        self.assertEqual(params.params_id, TOY.params_id)
        with self.assertRaises(ParameterError):
            parse_params("p=17\nq=b\n")
        with self.assertRaises(ParameterError):
            parse_params("p=17\np=17\nq=b\ng=2\n")

    def test_resolve_params(self):
        self.assertIs(resolve_params("toy"), TOY)
        with self.assertRaises(ParameterError):
            resolve_params("/nonexistent/params.txt")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.params"
            path.write_text("p=18\nq=b\ng=2\n")
            with self.assertRaises(ParameterError):
                resolve_params(str(path))
            path.write_text(dump_params(TOY))
            self.assertEqual(load_params(path).params_id, TOY.params_id)

    def test_params_id_distinguishes_groups(self):
        self.assertRegex(TOY.params_id, r"^[0-9a-f]{16}$")
        self.assertNotEqual(TOY.params_id, PRODUCTION.params_id)

    def test_generate_params(self):
        params = generate_params(32, seeded_rng(7))
        self.assertTrue(validate_params(params))
        self.assertTrue(params.is_safe_prime_group)
        self.assertEqual(params.p.bit_length(), 32)
        self.assertEqual(params, generate_params(32, seeded_rng(7)))


class ContractFileTests(SimpleTestCase):

    def test_format_and_parse(self):
        content = lodging_contract(address=b"line one\nline two")
        self.assertEqual(parse_contract_file(format_contract_file(content)), content)

    def test_body_only_container(self):
        content = parse_contract_file(b"SVP-CONTRACT/1\nbody 5\nhello\n")
        self.assertEqual(content.body, b"hello")
        self.assertEqual(content.terms, ())

    def test_malformed_containers(self):
        for data in (
            b"",
            b"CONTRACT\nbody 5\nhello\n",
            b"SVP-CONTRACT/1\nbody 9\nhello\n",
            b"SVP-CONTRACT/1\nterm 1 1\nab\n",
            b"SVP-CONTRACT/1\nbody 05\nhello\n",
        ):
            with self.subTest(data=data), self.assertRaises(ContentError):
                parse_contract_file(data)

    def test_length_prefixing_separates_fields(self):
        self.assertNotEqual(length_prefixed(b"ab", b"c"), length_prefixed(b"a", b"bc"))
        self.assertEqual(length_prefixed(b"ab"), b"\x00\x00\x00\x00\x00\x00\x00\x02ab")


class EvidenceServiceTests(SimpleTestCase):

    def test_witness_is_deterministic(self):
        content = lodging_contract()
        self.assertEqual(
            EvidenceService.derive_witness(content, SALT, PRODUCTION),
            EvidenceService.derive_witness(content, SALT, PRODUCTION),
        )

    def test_witness_keeps_term_order(self):
        witness = EvidenceService.derive_witness(lodging_contract(), SALT, PRODUCTION)
        self.assertEqual([label for label, _ in witness.term_witnesses], ["period", "address"])
        with self.assertRaises(LabelError):
            witness.term("rent")

    def test_salt_changes_the_witness(self):
        rng = seeded_rng(99)
        content = lodging_contract()
        for _ in range(1000):
            salt_a, salt_b = rng.randbytes(16), rng.randbytes(16)
            self.assertNotEqual(
                EvidenceService.derive_witness(content, salt_a, PRODUCTION).x,
                EvidenceService.derive_witness(content, salt_b, PRODUCTION).x,
            )

    def test_invalid_inputs(self):
        with self.assertRaises(SaltError):
            EvidenceService.derive_witness(lodging_contract(), b"short", TOY)
        with self.assertRaises(ContentError):
            EvidenceService.derive_witness(ContractContent(body=b""), SALT, TOY)
        duplicated = ContractContent(b"body", (ContractTerm("a", b"1"), ContractTerm("a", b"2")))
        with self.assertRaises(ContentError):
            EvidenceService.derive_witness(duplicated, SALT, TOY)

    def test_blank_and_nul_labels_are_rejected(self):
        for label in ("", "   ", "per\x00iod", "\x00"):
            content = ContractContent(b"body", (ContractTerm(label, b"2024"),))
            with self.subTest(label=label):
                with self.assertRaises(ContentError):
                    content.validate()
                with self.assertRaises(ContentError):
                    EvidenceService.derive_witness(content, SALT, TOY)

    def test_generate_evidence_in_toy_group(self):
        record = EvidenceService.generate_evidence(SecretWitness(3, (), SALT), TOY, "c-1", created_at=0)
        self.assertEqual(record.e, 8)
        self.assertEqual(record.params_id, TOY.params_id)
        record = EvidenceService.generate_evidence(SecretWitness(0, (), SALT), TOY, "c-0", created_at=0)
        self.assertEqual(record.e, 1)

    def test_generate_evidence_rejects_out_of_range_scalars(self):
        with self.assertRaises(ParameterError):
            EvidenceService.generate_evidence(SecretWitness(11, (), SALT), TOY, "c-1")
        with self.assertRaises(ParameterError):
            EvidenceService.generate_evidence(SecretWitness(3, (), SALT), GroupParams(24, 11, 2), "c-1")

    def test_binding_round_trip(self):
        content = lodging_contract()
        witness = EvidenceService.derive_witness(content, SALT, PRODUCTION)
        record = EvidenceService.generate_evidence(witness, PRODUCTION, "lodging-1")
        self.assertTrue(EvidenceService.verify_binding(content, SALT, record, PRODUCTION))

    def test_binding_detects_body_flips(self):
        rng = seeded_rng(5)
        for _ in range(100):
            content = random_contract(rng)
            salt = rng.randbytes(16)
            record = EvidenceService.generate_evidence(
                EvidenceService.derive_witness(content, salt, PRODUCTION), PRODUCTION, "c")
            body = bytearray(content.body)
            body[rng.randrange(len(body))] ^= 1 << rng.randrange(8)
            flipped = ContractContent(bytes(body), content.terms)
            report = EvidenceService.verify_binding(flipped, salt, record, PRODUCTION)
            self.assertFalse(report.valid)

    def test_binding_names_the_changed_term(self):
        content = lodging_contract()
        record = EvidenceService.generate_evidence(
            EvidenceService.derive_witness(content, SALT, PRODUCTION), PRODUCTION, "lodging-1")
        changed = lodging_contract(period=b"2024-01..2024-03")
        report = EvidenceService.verify_binding(changed, SALT, record, PRODUCTION)
        self.assertFalse(report.valid)
        self.assertEqual(report.failing_labels, ("period",))

    def test_binding_reports_wrong_salt_and_params(self):
        content = lodging_contract()
        record = EvidenceService.generate_evidence(
            EvidenceService.derive_witness(content, SALT, PRODUCTION), PRODUCTION, "lodging-1")
        self.assertFalse(EvidenceService.verify_binding(content, bytes(16), record, PRODUCTION))
        self.assertFalse(EvidenceService.verify_binding(content, b"short", record, PRODUCTION))
        self.assertFalse(EvidenceService.verify_binding(content, SALT, record, TOY))

    def test_term_independence(self):
        original = EvidenceService.generate_evidence(
            EvidenceService.derive_witness(lodging_contract(), SALT, PRODUCTION), PRODUCTION, "c")
        changed = EvidenceService.generate_evidence(
            EvidenceService.derive_witness(lodging_contract(period=b"2025"), SALT, PRODUCTION), PRODUCTION, "c")
        self.assertNotEqual(original.evidence_for("period"), changed.evidence_for("period"))
        self.assertEqual(original.evidence_for("address"), changed.evidence_for("address"))
        # The whole-contract evidence covers the body only, so a term-only edit keeps it.
        self.assertEqual(original.e, changed.e)

    def test_check_record(self):
        record = EvidenceService.generate_evidence(SecretWitness(3, (), SALT), TOY, "c-1")
        EvidenceService.check_record(record, TOY)
        with self.assertRaises(ParameterError):
            EvidenceService.check_record(record, PRODUCTION)

    def test_evidence_leaks_nothing(self):
        rng = seeded_rng(100)
        ledger = Ledger()
        held, records = [], []
        for n in range(100):
            content = random_contract(rng)
            salt = rng.randbytes(16)
            record, _ = EvidenceService.register(content, salt, f"contract-{n}", ledger, PRODUCTION, clock=lambda: 0)
            held.append((content, salt))
            records.append(canonical_bytes(EvidenceRecordSerializer(record).data))

        blob = b"\n".join(records) + LedgerService.dumps(ledger)
        windows = {blob[i:i + 4] for i in range(len(blob) - 3)}
        for content, salt in held:
            self.assertNotIn(salt, blob)
            self.assertNotIn(salt.hex().encode(), blob)
            for secret in [content.body] + [term.value for term in content.terms]:
                for i in range(len(secret) - 3):
                    self.assertNotIn(secret[i:i + 4], windows)

    def test_secrets_are_redacted_in_repr(self):
        content = lodging_contract()
        witness = EvidenceService.derive_witness(content, SALT, PRODUCTION)
        self.assertNotIn("harbour", repr(content))
        self.assertNotIn(str(witness.x), repr(witness))
        self.assertNotIn(SALT.hex(), repr(witness))


class EvidenceCommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.ledger = self.dir / "ledger.jsonl"
        self.content = self.dir / "lodging.svp"
        self.content.write_bytes(format_contract_file(lodging_contract()))
        env = mock.patch.dict(os.environ, {settings.SALT_ENV_VAR: SALT.hex()})
        env.start()
        self.addCleanup(env.stop)

    def register(self, contract_id, **kwargs):
        out = io.StringIO()
        options = dict(content=str(self.content), contract_id=contract_id, ledger=str(self.ledger),
                       params="toy", seed=1, json=True, stdout=out)
        options.update(kwargs)
        call_command("register", **options)
        return out.getvalue()

    def test_params_gen_toy(self):
        out_path = self.dir / "toy.params"
        call_command("params_gen", profile="toy", out=str(out_path), stdout=io.StringIO())
        params = load_params(out_path)
        self.assertEqual((params.p, params.q, params.g), (23, 11, 2))
        self.assertTrue(validate_params(params))

    def test_params_gen_production(self):
        out_path = self.dir / "production.params"
        call_command("params_gen", profile="production", out=str(out_path), stdout=io.StringIO())
        params = load_params(out_path)
        self.assertEqual(params.p.bit_length(), 2048)
        self.assertTrue(validate_params(params, production=True))

    def test_params_gen_fresh_group(self):
        out_path = self.dir / "fresh.params"
        call_command("params_gen", bits=40, seed=3, out=str(out_path), stdout=io.StringIO())
        self.assertTrue(validate_params(load_params(out_path)))

    def test_params_gen_unwritable_path(self):
        with self.assertRaises(CommandError) as cm:
            call_command("params_gen", profile="toy", out=str(self.dir / "missing" / "toy.params"))
        self.assertEqual(cm.exception.returncode, 3)

    def test_register_appends_a_block(self):
        output = self.register("lodging-1")
        self.assertIn('"contract_id":"lodging-1"', output)
        ledger = LedgerService.load_ledger(self.ledger)
        self.assertEqual(len(ledger), 1)
        record = LedgerService.get_evidence(ledger, "lodging-1")
        self.assertTrue(EvidenceService.verify_binding(lodging_contract(), SALT, record, TOY))

    def test_register_duplicate_id(self):
        self.register("lodging-1")
        with self.assertRaises(CommandError) as cm:
            self.register("lodging-1")
        self.assertEqual(cm.exception.returncode, 1)
        self.assertIn("already registered", str(cm.exception))
        self.assertEqual(len(LedgerService.load_ledger(self.ledger)), 1)

    def test_register_is_reproducible_with_a_seed(self):
        self.register("lodging-1")
        first = self.ledger.read_bytes()
        self.ledger.unlink()
        self.register("lodging-1")
        self.assertEqual(self.ledger.read_bytes(), first)

    def test_seed_requires_toy_profile(self):
        with self.assertRaises(CommandError) as cm:
            self.register("lodging-1", params="production")
        self.assertEqual(cm.exception.returncode, 2)

    def test_short_salt_is_a_usage_error(self):
        with mock.patch.dict(os.environ, {settings.SALT_ENV_VAR: "00ff"}):
            with self.assertRaises(CommandError) as cm:
                self.register("lodging-1")
        self.assertEqual(cm.exception.returncode, 2)

    def test_missing_content_file(self):
        with self.assertRaises(CommandError) as cm:
            self.register("lodging-1", content=str(self.dir / "nope.svp"))
        self.assertEqual(cm.exception.returncode, 3)

    def test_blank_label_is_a_usage_error(self):
        self.content.write_bytes(b"SVP-CONTRACT/1\nbody 5\nhello\nterm 0 4\n2024\n")
        with self.assertRaises(CommandError) as cm:
            self.register("lodging-1")
        self.assertEqual(cm.exception.returncode, 2)
        self.assertFalse(self.ledger.exists())

    def test_record_schema_mismatch_is_a_usage_error(self):
        with mock.patch.object(EvidenceService, "register", side_effect=DecodeError("bad record")):
            with self.assertRaises(CommandError) as cm:
                self.register("lodging-1")
        self.assertEqual(cm.exception.returncode, 2)

    def test_register_holds_the_writer_lock(self):
        register = EvidenceService.register
        seen = []

        def locked_register(*args, **kwargs):
            with self.assertRaises(Timeout):
                FileLock(f"{self.ledger}.lock", timeout=0).acquire()
            seen.append(args[2])
            return register(*args, **kwargs)

        with mock.patch.object(EvidenceService, "register", side_effect=locked_register):
            self.register("lodging-1")
        self.assertEqual(seen, ["lodging-1"])
        # Released afterwards.
        with FileLock(f"{self.ledger}.lock", timeout=0):
            pass

    def test_register_gives_up_on_a_held_lock(self):
        short_lock = lambda path: FileLock(f"{path}.lock", timeout=0.05)
        with FileLock(f"{self.ledger}.lock"), mock.patch.object(LedgerService, "writer_lock", short_lock):
            with self.assertRaises(CommandError) as cm:
                self.register("lodging-1")
        self.assertEqual(cm.exception.returncode, 3)
        self.assertFalse(self.ledger.exists())

    def test_concurrent_registrations_keep_every_block(self):
        failures = []

        def run(n):
            try:
                self.register(f"lodging-{n}", seed=None)
            except Exception as exc:
                failures.append(exc)

        threads = [threading.Thread(target=run, args=(n,)) for n in range(6)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        self.assertEqual(failures, [])
        ledger = LedgerService.load_ledger(self.ledger)
        self.assertEqual(len(ledger), 6)
        self.assertTrue(LedgerService.verify_chain(ledger).valid)
        for n in range(6):
            self.assertEqual(LedgerService.get_evidence(ledger, f"lodging-{n}").contract_id, f"lodging-{n}")

    @override_settings(PARAMS_PROFILE="toy")
    def test_params_default_from_settings(self):
        self.register("lodging-2", params=None)
        self.assertEqual(LedgerService.get_evidence(LedgerService.load_ledger(self.ledger), "lodging-2").params_id,
                         TOY.params_id)
