import io
import json
import os
import queue
import random
import socket
import tempfile
import threading
from collections import Counter
from pathlib import Path
from unittest import mock

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings
from rest_framework import status
from rest_framework.test import APIClient

from evidence_app.api.services import EvidenceService
from evidence_app.api.utils import canonical_bytes, format_contract_file
from evidence_app.exceptions import (
    DecodeError,
    FrameError,
    LabelError,
    MalformedMessageError,
    ProtocolOrderError,
    SessionAbortError,
    SessionError,
    TransportError,
)
from evidence_app.group import PRODUCTION, TOY, int_to_hex, mod_exp, seeded_rng, system_rng
from evidence_app.records import ContractContent, ContractTerm
from ledger_app.api.services import LedgerService
from ledger_app.chain import Ledger
from proof_app.api.serializers import ProofTranscriptSerializer, parse_transcript
from proof_app.api.services import (
    ContractProver,
    ContractVerifier,
    ProofService,
    ProverKnowledge,
    VerifierPolicy,
)
from proof_app.protocol import (
    Challenge,
    Commitment,
    ProverSession,
    Response,
    Verdict,
    VerifierSession,
    prover_commit,
    prover_respond,
    simulate_transcript,
    verifier_challenge,
    verifier_check,
    verifier_receive_commitment,
    verify_round,
)
from proof_app.wire import HEADER, WireChannel, WireMessage, decode_message, encode_message


SALT = bytes(range(16))
SESSION = bytes(range(16))
UPPER = "GHIJKLMNOPQRSTUVWXYZ"


class ScriptedRng:
    """Hands out preset scalars and bits in order."""

    def __init__(self, scalars=(), bits=()):
        self.scalars = list(scalars)
        self.bits = list(bits)

    def randrange(self, *args):
        return self.scalars.pop(0)

    def getrandbits(self, k):
        return self.bits.pop(0)


def lodging_contract(period=b"2024-01..2024-02", address=b"12 Harbour Road"):
    return ContractContent(
        body=b"Lodging agreement between A and B for the flat at the harbour.",
        terms=(ContractTerm("period", period), ContractTerm("address", address)),
    )


def register(ledger, params, contract_id="lodging-1", content=None, salt=SALT):
    content = content or lodging_contract()
    record, _ = EvidenceService.register(content, salt, contract_id, ledger, params, clock=lambda: 1700000000)
    witness = EvidenceService.derive_witness(content, salt, params)
    return record, ProverKnowledge.from_witness(witness)


class VerifierServerMixin:

    def start_server(self, ledger, params, policy, rng_factory=system_rng):
        finished = queue.Queue()
        server = ProofService.start_verifier(("127.0.0.1", 0), ledger, params, policy, rng_factory, finished.put)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        self.addCleanup(server.server_close)
        self.addCleanup(server.shutdown)
        return server.server_address[:2], finished


class ProverTests(SimpleTestCase):

    def test_commit_with_forced_nonce(self):
        self.assertEqual(prover_commit(ProverSession(TOY, 8), ScriptedRng([4])).s, 16)
        self.assertEqual(prover_commit(ProverSession(TOY, 8), ScriptedRng([0])).s, 1)

    def test_second_commit_is_rejected(self):
        session = ProverSession(TOY, 8)
        prover_commit(session, ScriptedRng([4]))
        with self.assertRaises(ProtocolOrderError):
            prover_commit(session, ScriptedRng([5]))

    def test_responses(self):
        cases = [(4, 1, 7), (4, 0, 4), (10, 1, 2)]
        for r, i, z in cases:
            with self.subTest(r=r, i=i):
                session = ProverSession(TOY, 8)
                prover_commit(session, ScriptedRng([r]))
                self.assertEqual(prover_respond(session, 3, Challenge(i)).z, z)

    def test_nonce_is_single_use(self):
        session = ProverSession(TOY, 8, k=1)
        prover_commit(session, ScriptedRng([4]))
        prover_respond(session, 3, Challenge(1))
        self.assertIsNone(session._nonce)
        with self.assertRaises(ProtocolOrderError):
            prover_respond(session, 3, Challenge(0))

    def test_respond_without_commit(self):
        with self.assertRaises(ProtocolOrderError):
            prover_respond(ProverSession(TOY, 8), 3, Challenge(0))

    def test_challenge_must_be_a_bit(self):
        with self.assertRaises(MalformedMessageError):
            Challenge(2)


class VerifierTests(SimpleTestCase):

    def test_verify_round_by_hand(self):
        self.assertIs(verify_round(Commitment(16), Challenge(1), Response(7), 8, TOY), Verdict.ACCEPT)
        self.assertIs(verify_round(Commitment(16), Challenge(0), Response(4), 8, TOY), Verdict.ACCEPT)
        self.assertIs(verify_round(Commitment(16), Challenge(1), Response(6), 8, TOY), Verdict.REJECT)

    def test_verify_round_rejects_malformed_values(self):
        with self.assertRaises(MalformedMessageError):
            verify_round(Commitment(5), Challenge(0), Response(4), 8, TOY)
        with self.assertRaises(MalformedMessageError):
            verify_round(Commitment(16), Challenge(0), Response(4), 5, TOY)
        with self.assertRaises(MalformedMessageError):
            verify_round(Commitment(16), Challenge(0), Response(11), 8, TOY)

    def test_phase_order(self):
        session = VerifierSession(TOY, 8, k=2)
        with self.assertRaises(ProtocolOrderError):
            verifier_challenge(session, seeded_rng(1))
        with self.assertRaises(ProtocolOrderError):
            verifier_check(session, Response(4))
        verifier_receive_commitment(session, Commitment(16))
        with self.assertRaises(ProtocolOrderError):
            verifier_receive_commitment(session, Commitment(16))

    def test_session_preconditions(self):
        with self.assertRaises(ValueError):
            VerifierSession(TOY, 8, k=0)
        with self.assertRaises(MalformedMessageError):
            VerifierSession(TOY, 5, k=1)
        with self.assertRaises(MalformedMessageError):
            verifier_receive_commitment(VerifierSession(TOY, 8, k=1), Commitment(5))

    def draw_challenges(self, rng, count):
        session = VerifierSession(TOY, 8, k=count)
        bits = []
        for _ in range(count):
            verifier_receive_commitment(session, Commitment(1))
            bits.append(verifier_challenge(session, rng).i)
            verifier_check(session, Response(0))
        return bits

    def test_challenges_follow_the_seeded_stream(self):
        reference = random.Random(5)
        expected = [reference.getrandbits(1) for _ in range(20)]
        self.assertEqual(self.draw_challenges(seeded_rng(5), 20), expected)

    def test_challenge_frequency(self):
        bits = self.draw_challenges(seeded_rng(6), 10000)
        self.assertTrue(0.48 <= sum(bits) / len(bits) <= 0.52)


class ProtocolPropertyTests(SimpleTestCase):

    def honest_round(self, x, r, i):
        e = mod_exp(TOY.g, x, TOY)
        session = ProverSession(TOY, e)
        commitment = prover_commit(session, ScriptedRng([r]))
        response = prover_respond(session, x, Challenge(i))
        return commitment, response, e

    def test_completeness_exhaustive(self):
        cases = 0
        for x in range(11):
            for r in range(11):
                for i in (0, 1):
                    commitment, response, e = self.honest_round(x, r, i)
                    self.assertIs(verify_round(commitment, Challenge(i), response, e, TOY), Verdict.ACCEPT)
                    cases += 1
        self.assertEqual(cases, 242)

    def test_simulator_by_hand(self):
        forged = simulate_transcript(8, Challenge(1), TOY, ScriptedRng([7]))
        self.assertEqual((forged.commitment.s, forged.response.z), (16, 7))
        self.assertIs(verify_round(forged.commitment, forged.challenge, forged.response, 8, TOY), Verdict.ACCEPT)
        forged = simulate_transcript(8, Challenge(0), TOY, ScriptedRng([4]))
        self.assertEqual((forged.commitment.s, forged.response.z), (16, 4))

    def test_simulated_and_real_rounds_are_identically_distributed(self):
        for x in range(11):
            e = mod_exp(TOY.g, x, TOY)
            for i in (0, 1):
                real = Counter()
                for r in range(11):
                    commitment, response, _ = self.honest_round(x, r, i)
                    real[(commitment.s, response.z)] += 1
                simulated = Counter()
                for z in range(11):
                    forged = simulate_transcript(e, Challenge(i), TOY, ScriptedRng([z]))
                    simulated[(forged.commitment.s, forged.response.z)] += 1
                self.assertEqual(real, simulated)

    def test_two_answers_to_one_commitment_reveal_the_witness(self):
        for x in range(11):
            for r in range(11):
                c0, z0, _ = self.honest_round(x, r, 0)
                c1, z1, _ = self.honest_round(x, r, 1)
                self.assertEqual(c0, c1)
                self.assertEqual((z1.z - z0.z) % TOY.q, x)


class ProofServiceTests(SimpleTestCase):

    def setUp(self):
        self.ledger = Ledger()
        self.record, self.knowledge = register(self.ledger, TOY)
        self.verifier = ContractVerifier(self.record, TOY, seeded_rng(2))

    def test_honest_prover_is_accepted(self):
        prover = ContractProver(TOY, self.knowledge, seeded_rng(1))
        transcript = ProofService.run_protocol(prover, self.verifier, 20)
        self.assertIs(transcript.overall, Verdict.ACCEPT)
        self.assertEqual(len(transcript.rounds), 20)

    def test_single_round(self):
        prover = ContractProver(TOY, self.knowledge, seeded_rng(1))
        transcript = ProofService.run_protocol(prover, self.verifier, 1)
        self.assertEqual(len(transcript.rounds), 1)
        self.assertTrue(transcript.accepted)
        with self.assertRaises(ValueError):
            ProofService.run_protocol(prover, self.verifier, 0)

    def test_cheater_single_round_rate(self):
        report = ProofService.simulate_cheater(self.record, TOY, 1, 10000, seeded_rng(3))
        self.assertTrue(0.48 <= report.overall_rate <= 0.52)
        self.assertEqual(report.bound, 0.5)

    def test_cheater_never_passes_twenty_rounds(self):
        report = ProofService.simulate_cheater(self.record, TOY, 20, 10000, seeded_rng(4))
        self.assertEqual(report.proofs_accepted, 0)
        self.assertTrue(0.49 <= report.round_rate <= 0.51)

    def test_cheater_and_verifier_draw_from_separate_streams(self):
        for rng in (seeded_rng(5), system_rng()):
            with mock.patch("proof_app.api.services.ContractProver", wraps=ContractProver) as prover_cls, \
                    mock.patch("proof_app.api.services.ContractVerifier", wraps=ContractVerifier) as verifier_cls:
                ProofService.simulate_cheater(self.record, TOY, 2, 50, rng)
            cheater_rng, verifier_rng = prover_cls.call_args.args[2], verifier_cls.call_args.args[2]
            with self.subTest(rng=type(rng).__name__):
                self.assertIsNot(cheater_rng, verifier_rng)
                self.assertIsNot(cheater_rng, rng)
                self.assertIsNot(verifier_rng, rng)
                self.assertIs(type(cheater_rng), type(rng))

    def test_seeded_cheater_simulation_is_reproducible(self):
        first = ProofService.simulate_cheater(self.record, TOY, 3, 200, seeded_rng(8))
        second = ProofService.simulate_cheater(self.record, TOY, 3, 200, seeded_rng(8))
        self.assertEqual(first, second)

    def test_simulate_cheater_needs_trials(self):
        with self.assertRaises(ValueError):
            ProofService.simulate_cheater(self.record, TOY, 1, 0, seeded_rng(3))

    def test_transport_failure_keeps_completed_rounds(self):
        class DroppingProver(ContractProver):
            def endpoint(self, target, k):
                inner = super().endpoint(target, k)
                calls = {"commit": 0}

                class Endpoint:
                    def commit(self):
                        calls["commit"] += 1
                        if calls["commit"] == 3:
                            raise TransportError("connection reset")
                        return inner.commit()

                    def respond(self, challenge):
                        return inner.respond(challenge)

                return Endpoint()

        prover = DroppingProver(TOY, self.knowledge, seeded_rng(1))
        with self.assertRaises(SessionAbortError) as cm:
            ProofService.run_protocol(prover, self.verifier, 10)
        partial = cm.exception.transcript
        self.assertEqual(len(partial.rounds), 2)
        self.assertIs(partial.overall, Verdict.REJECT)

    def test_term_proofs_with_partial_knowledge(self):
        period_only = ProverKnowledge(terms={
            "period": EvidenceService.derive_term_witness("period", b"2024-01..2024-02", SALT, TOY),
        })
        prover = ContractProver(TOY, period_only, seeded_rng(5), record=self.record)

        [period] = ProofService.run_term_protocol(prover, self.verifier, ["period"], 20)
        self.assertEqual(period.target, "period")
        self.assertTrue(period.accepted)

        period, address = ProofService.run_term_protocol(prover, self.verifier, ["period", "address"], 20)
        self.assertTrue(period.accepted)
        self.assertFalse(address.accepted)

    def test_term_protocol_edge_cases(self):
        prover = ContractProver(TOY, self.knowledge, seeded_rng(5))
        self.assertEqual(ProofService.run_term_protocol(prover, self.verifier, [], 20), [])
        with self.assertRaises(LabelError):
            ProofService.run_term_protocol(prover, self.verifier, ["period", "rent"], 20)

    def test_restricted_knowledge_without_record(self):
        prover = ContractProver(TOY, self.knowledge.restricted(["period"]), seeded_rng(5))
        with self.assertRaises(LabelError):
            ProofService.run_protocol(prover, self.verifier, 5)

    def test_offline_transcript_verification(self):
        prover = ContractProver(TOY, self.knowledge, seeded_rng(1))
        transcript = ProofService.run_protocol(prover, self.verifier, 10)
        report = ProofService.verify_transcript(transcript, self.record, TOY)
        self.assertTrue(report.valid)
        self.assertEqual(report.rounds_checked, 10)

        data = ProofTranscriptSerializer(transcript).data
        first = data["rounds"][0]
        first["z"] = int_to_hex((int(first["z"], 16) + 1) % TOY.q)
        tampered = ProofService.verify_transcript(parse_transcript(data), self.record, TOY)
        self.assertFalse(tampered.valid)
        self.assertEqual(tampered.mismatched_rounds, (1,))

    def test_incomplete_transcript_is_not_accepted(self):
        prover = ContractProver(TOY, self.knowledge, seeded_rng(1))
        transcript = ProofService.run_protocol(prover, self.verifier, 10)
        data = ProofTranscriptSerializer(transcript).data
        data["rounds"] = data["rounds"][:4]
        data["overall"] = "reject"
        report = ProofService.verify_transcript(parse_transcript(data), self.record, TOY)
        self.assertFalse(report.accepted)
        self.assertTrue(report.consistent)

    def test_transcript_file(self):
        prover = ContractProver(TOY, self.knowledge, seeded_rng(1))
        transcript = ProofService.run_protocol(prover, self.verifier, 5, "period")
        with tempfile.TemporaryDirectory() as tmp:
            path = ProofService.save_transcript(transcript, tmp, SESSION)
            self.assertTrue(path.name.startswith("lodging-1-term-period-"))
            self.assertEqual(ProofService.load_transcript(path), transcript)
            self.assertEqual(path.read_bytes(), ProofService.dump_transcript(transcript))

    def test_transcript_schema(self):
        prover = ContractProver(TOY, self.knowledge, seeded_rng(1))
        data = ProofTranscriptSerializer(ProofService.run_protocol(prover, self.verifier, 3)).data
        with self.assertRaises(DecodeError):
            parse_transcript({**data, "overall": "reject"})
        with self.assertRaises(DecodeError):
            parse_transcript({**data, "witness": "3"})
        with self.assertRaises(DecodeError):
            parse_transcript({**data, "k": 2})

    def test_challenge_bit_must_be_an_integer(self):
        prover = ContractProver(TOY, self.knowledge, seeded_rng(1))
        data = ProofTranscriptSerializer(ProofService.run_protocol(prover, self.verifier, 3)).data
        for bad in ("1", "0", True, 1.0, 2):
            rounds = [dict(rnd) for rnd in data["rounds"]]
            rounds[0]["i"] = bad
            with self.subTest(i=bad), self.assertRaises(DecodeError):
                parse_transcript({**data, "rounds": rounds})


class WireFormatTests(SimpleTestCase):

    def test_round_trip(self):
        for msg in (
            WireMessage('hello', SESSION, 0, {'contract_id': 'lodging-1', 'target': None, 'k': 40}),
            WireMessage('commit', SESSION, 1, {'s': PRODUCTION.p - 1}),
            WireMessage('challenge', SESSION, 1, {'i': 1}),
            WireMessage('abort', SESSION, 3, {'reason': 'not-found: x'}),
        ):
            with self.subTest(kind=msg.kind):
                self.assertEqual(decode_message(encode_message(msg)), msg)

    def test_frame_layout(self):
        frame = encode_message(WireMessage('challenge', SESSION, 2, {'i': 0}))
        payload = frame[HEADER.size:]
        self.assertEqual(int.from_bytes(frame[:4], "big"), len(payload))
        self.assertEqual(
            payload,
            canonical_bytes({'body': {'i': 0}, 'kind': 'challenge', 'round': 2, 'session_id': SESSION.hex()}),
        )

    def test_oversize_and_empty_frames(self):
        with self.assertRaises(FrameError):
            decode_message((2 << 20).to_bytes(4, "big"))
        with self.assertRaises(FrameError):
            decode_message(bytes(4))
        with self.assertRaises(FrameError):
            encode_message(WireMessage('abort', SESSION, 0, {'reason': 'x' * 200}), max_frame=64)

    def test_kind_legal_fields_only(self):
        payload = canonical_bytes({
            'kind': 'commit', 'session_id': SESSION.hex(), 'round': 1, 'body': {'s': '10', 'i': 1},
        })
        with self.assertRaises(DecodeError):
            decode_message(len(payload).to_bytes(4, "big") + payload)
        with self.assertRaises(DecodeError):
            encode_message(WireMessage('commit', SESSION, 1, {'s': 16, 'i': 1}))

    def test_malformed_payloads(self):
        for payload in (
            b"not json",
            canonical_bytes({'kind': 'gossip', 'session_id': SESSION.hex(), 'round': 0, 'body': {}}),
            canonical_bytes({'kind': 'commit', 'session_id': 'abc', 'round': 1, 'body': {'s': '10'}}),
            canonical_bytes({'kind': 'commit', 'session_id': SESSION.hex(), 'round': 1, 'body': {'s': '0A'}}),
            canonical_bytes({'kind': 'challenge', 'session_id': SESSION.hex(), 'round': 1, 'body': {'i': 2}}),
            canonical_bytes({'kind': 'challenge', 'session_id': SESSION.hex(), 'round': 1, 'body': {'i': '1'}}),
            canonical_bytes({'kind': 'challenge', 'session_id': SESSION.hex(), 'round': 1, 'body': {'i': True}}),
        ):
            with self.subTest(payload=payload), self.assertRaises(DecodeError):
                decode_message(len(payload).to_bytes(4, "big") + payload)


class WireChannelTests(SimpleTestCase):

    def setUp(self):
        left, right = socket.socketpair()
        self.left = WireChannel(left, timeout=2)
        self.right = WireChannel(right, timeout=0.2)
        self.addCleanup(self.left.close)
        self.addCleanup(self.right.close)

    def test_send_and_receive(self):
        msg = WireMessage('response', SESSION, 4, {'z': 7})
        self.left.send(msg)
        self.assertEqual(self.right.receive(), msg)

    def test_timeout(self):
        with self.assertRaises(TransportError):
            self.right.receive()

    def test_oversize_header_fails_before_the_body(self):
        self.left.sock.sendall((2 << 20).to_bytes(4, "big"))
        with self.assertRaises(FrameError):
            self.right.receive()

    def test_peer_closed(self):
        self.left.close()
        with self.assertRaises(TransportError):
            self.right.receive()


class WireSessionTests(VerifierServerMixin, SimpleTestCase):

    def setUp(self):
        self.ledger = Ledger()
        self.record, self.knowledge = register(self.ledger, TOY)
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_honest_prover_over_tcp(self):
        policy = VerifierPolicy(k=20, transcript_dir=Path(self.tmp.name))
        address, finished = self.start_server(self.ledger, TOY, policy)
        verdict, transcript = ProofService.run_prover(
            address, ContractProver(TOY, self.knowledge, system_rng()), "lodging-1", timeout=5)
        self.assertIs(verdict, Verdict.ACCEPT)
        self.assertEqual(transcript.k, 20)

        self.assertEqual(finished.get(timeout=5), transcript)
        [stored] = Path(self.tmp.name).glob("*.json")
        report = ProofService.verify_transcript(ProofService.load_transcript(stored), self.record, TOY)
        self.assertTrue(report.valid)

    def test_production_profile_end_to_end(self):
        ledger = Ledger()
        record, knowledge = register(ledger, PRODUCTION)
        policy = VerifierPolicy(k=40, transcript_dir=Path(self.tmp.name))
        address, finished = self.start_server(ledger, PRODUCTION, policy)

        verdict, _ = ProofService.run_prover(address, ContractProver(PRODUCTION, knowledge, system_rng()),
                                             "lodging-1", timeout=10)
        self.assertIs(verdict, Verdict.ACCEPT)
        stored = ProofService.load_transcript(next(Path(self.tmp.name).glob("*.json")))
        self.assertTrue(ProofService.verify_transcript(stored, record, PRODUCTION).valid)

        wrong_salt = EvidenceService.derive_witness(lodging_contract(), bytes(16), PRODUCTION)
        verdict, transcript = ProofService.run_prover(
            address, ContractProver(PRODUCTION, ProverKnowledge.from_witness(wrong_salt), system_rng()),
            "lodging-1", timeout=10)
        self.assertIs(verdict, Verdict.REJECT)
        self.assertFalse(transcript.accepted)

    def test_closed_port(self):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        with self.assertRaises(TransportError):
            ProofService.run_prover(("127.0.0.1", port), ContractProver(TOY, self.knowledge, system_rng()),
                                    "lodging-1", timeout=2)

    def test_unknown_contract(self):
        address, _ = self.start_server(self.ledger, TOY, VerifierPolicy(k=5))
        with self.assertRaises(SessionError) as cm:
            ProofService.run_prover(address, ContractProver(TOY, self.knowledge, system_rng()), "nope", timeout=5)
        self.assertEqual(cm.exception.reason, "not-found: nope")

    def test_unknown_and_disallowed_targets(self):
        address, _ = self.start_server(self.ledger, TOY, VerifierPolicy(k=5, targets=frozenset({"period"})))
        prover = ContractProver(TOY, ProverKnowledge(x=3, terms={"rent": 4, "address": 5}), system_rng())
        with self.assertRaises(SessionError) as cm:
            ProofService.run_prover(address, prover, "lodging-1", target="address", timeout=5)
        self.assertIn("not allowed", cm.exception.reason)

        address, _ = self.start_server(self.ledger, TOY, VerifierPolicy(k=5))
        with self.assertRaises(SessionError) as cm:
            ProofService.run_prover(address, prover, "lodging-1", target="rent", timeout=5)
        self.assertEqual(cm.exception.reason, "unknown label: rent")

    def test_term_proof_over_tcp(self):
        address, _ = self.start_server(self.ledger, TOY, VerifierPolicy(k=8, targets=frozenset({"period"})))
        verdict, transcript = ProofService.run_prover(
            address, ContractProver(TOY, self.knowledge, system_rng()), "lodging-1", target="period", timeout=5)
        self.assertIs(verdict, Verdict.ACCEPT)
        self.assertEqual(transcript.target, "period")

    def test_prover_may_ask_for_more_rounds(self):
        address, _ = self.start_server(self.ledger, TOY, VerifierPolicy(k=5))
        verdict, transcript = ProofService.run_prover(
            address, ContractProver(TOY, self.knowledge, system_rng()), "lodging-1", k=12, timeout=5)
        self.assertIs(verdict, Verdict.ACCEPT)
        self.assertEqual(len(transcript.rounds), 12)

    def test_response_before_challenge_aborts(self):
        address, finished = self.start_server(self.ledger, TOY, VerifierPolicy(k=5))
        channel = WireChannel(socket.create_connection(address, timeout=5), timeout=5)
        self.addCleanup(channel.close)
        channel.send(WireMessage('hello', SESSION, 0, {'contract_id': 'lodging-1', 'target': None, 'k': None}))
        self.assertEqual(channel.receive().kind, 'hello')
        channel.send(WireMessage('response', SESSION, 1, {'z': 3}))
        self.assertEqual(channel.receive().kind, 'abort')
        self.assertTrue(finished.empty())

    def test_replayed_round_number_aborts(self):
        address, _ = self.start_server(self.ledger, TOY, VerifierPolicy(k=5))
        channel = WireChannel(socket.create_connection(address, timeout=5), timeout=5)
        self.addCleanup(channel.close)
        channel.send(WireMessage('hello', SESSION, 0, {'contract_id': 'lodging-1', 'target': None, 'k': None}))
        channel.receive()
        channel.send(WireMessage('commit', SESSION, 2, {'s': 16}))
        self.assertEqual(channel.receive().kind, 'abort')

    def test_transport_is_transparent(self):
        local = ProofService.run_protocol(
            ContractProver(TOY, self.knowledge, seeded_rng(11)),
            ContractVerifier(self.record, TOY, seeded_rng(12)),
            10,
        )
        address, finished = self.start_server(self.ledger, TOY, VerifierPolicy(k=10), lambda: seeded_rng(12))
        _, remote = ProofService.run_prover(
            address, ContractProver(TOY, self.knowledge, seeded_rng(11)), "lodging-1", k=10, timeout=5)
        self.assertEqual(remote, local)
        self.assertEqual(finished.get(timeout=5), local)

    def test_concurrent_sessions(self):
        ledger = Ledger()
        provers = {}
        for n in range(5):
            _, knowledge = register(ledger, TOY, f"contract-{n}", salt=bytes([n]) * 16)
            provers[f"contract-{n}"] = ContractProver(TOY, knowledge, system_rng())
        address, _ = self.start_server(ledger, TOY, VerifierPolicy(k=20))

        verdicts = {}

        def prove(contract_id):
            verdicts[contract_id], _ = ProofService.run_prover(address, provers[contract_id], contract_id, timeout=5)

        threads = [threading.Thread(target=prove, args=(contract_id,)) for contract_id in provers]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join(timeout=10)
        self.assertEqual(verdicts, {contract_id: Verdict.ACCEPT for contract_id in provers})

    def test_no_secret_crosses_the_wire(self):
        rng = seeded_rng(77)
        ledger = Ledger()
        held = []
        for n in range(100):
            text = lambda size: "".join(rng.choice(UPPER) for _ in range(size)).encode()
            content = ContractContent(text(64), (ContractTerm("period", text(24)),))
            salt = rng.randbytes(16)
            _, knowledge = register(ledger, TOY, f"contract-{n}", content, salt)
            held.append((f"contract-{n}", content, salt, knowledge))

        address, _ = self.start_server(ledger, TOY, VerifierPolicy(k=4))
        captured = []
        for contract_id, _, _, knowledge in held:
            _, transcript = ProofService.run_prover(
                address, ContractProver(TOY, knowledge, rng), contract_id, timeout=5,
                on_frame=lambda direction, frame: captured.append(frame))
            captured.append(ProofService.dump_transcript(transcript))
        captured.append(LedgerService.dumps(ledger))

        blob = b"\x00".join(captured)
        windows = {blob[i:i + 4] for i in range(len(blob) - 3)}
        for _, content, salt, _ in held:
            self.assertNotIn(salt, blob)
            self.assertNotIn(salt.hex().encode(), blob)
            for secret in (content.body, content.terms[0].value):
                for i in range(len(secret) - 3):
                    self.assertNotIn(secret[i:i + 4], windows)


class ProofCommandTests(VerifierServerMixin, SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.ledger_path = self.dir / "ledger.jsonl"
        self.content_path = self.dir / "lodging.svp"
        self.content_path.write_bytes(format_contract_file(lodging_contract()))

        self.ledger = Ledger()
        self.record, self.knowledge = register(self.ledger, TOY)
        LedgerService.save_ledger(self.ledger, self.ledger_path)

        env = mock.patch.dict(os.environ, {settings.SALT_ENV_VAR: SALT.hex()})
        env.start()
        self.addCleanup(env.stop)

    def prove(self, address, **kwargs):
        out = io.StringIO()
        options = dict(connect=f"{address[0]}:{address[1]}", content=str(self.content_path),
                       contract_id="lodging-1", rounds=10, params="toy", json=True, stdout=out)
        options.update(kwargs)
        call_command("prove", **options)
        return json.loads(out.getvalue())

    def test_prove_accepts_and_writes_transcript(self):
        address, _ = self.start_server(self.ledger, TOY, VerifierPolicy(k=10))
        out_path = self.dir / "proof.json"
        result = self.prove(address, seed=4, transcript_out=str(out_path))
        self.assertEqual(result["results"], [{"target": None, "k": 10, "verdict": "accept"}])
        self.assertTrue(ProofService.verify_transcript(ProofService.load_transcript(out_path), self.record, TOY))

    def test_prove_each_term(self):
        address, _ = self.start_server(self.ledger, TOY, VerifierPolicy(k=6))
        out_path = self.dir / "proof.json"
        result = self.prove(address, term=["period", "address"], transcript_out=str(out_path))
        self.assertEqual([item["verdict"] for item in result["results"]], ["accept", "accept"])
        self.assertTrue((self.dir / "proof-period.json").exists())
        self.assertTrue((self.dir / "proof-address.json").exists())

    def test_prove_with_wrong_content_is_rejected(self):
        ledger = Ledger()
        register(ledger, PRODUCTION)
        address, _ = self.start_server(ledger, PRODUCTION, VerifierPolicy(k=40))
        wrong = self.dir / "other.svp"
        wrong.write_bytes(format_contract_file(ContractContent(b"Another deal.")))
        with self.assertRaises(CommandError) as cm:
            self.prove(address, content=str(wrong), params="production", rounds=40)
        self.assertEqual(cm.exception.returncode, 1)

    def test_prove_usage_and_io_errors(self):
        with self.assertRaises(CommandError) as cm:
            self.prove(("127.0.0.1", 1), rounds=0)
        self.assertEqual(cm.exception.returncode, 2)

        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        with self.assertRaises(CommandError) as cm:
            self.prove(("127.0.0.1", port), timeout=2)
        self.assertEqual(cm.exception.returncode, 3)

    def test_verify_serve_usage_and_io_errors(self):
        with self.assertRaises(CommandError) as cm:
            call_command("verify_serve", rounds=0, params="toy", ledger=str(self.ledger_path))
        self.assertEqual(cm.exception.returncode, 2)
        with self.assertRaises(CommandError) as cm:
            call_command("verify_serve", listen="127.0.0.1:0", params="toy", ledger=str(self.dir / "missing.jsonl"))
        self.assertEqual(cm.exception.returncode, 3)

    def test_simulate_cheater_command(self):
        out = io.StringIO()
        call_command("simulate_cheater", contract_id="lodging-1", rounds=2, trials=400, params="toy", seed=9,
                     ledger=str(self.ledger_path), json=True, stdout=out)
        report = json.loads(out.getvalue())
        self.assertEqual(report["bound"], 0.25)
        self.assertEqual(report["rounds_total"], 800)
        self.assertTrue(0.4 <= report["round_rate"] <= 0.6)

    def test_simulate_cheater_errors(self):
        with self.assertRaises(CommandError) as cm:
            call_command("simulate_cheater", contract_id="lodging-1", trials=0, params="toy",
                         ledger=str(self.ledger_path))
        self.assertEqual(cm.exception.returncode, 2)
        with self.assertRaises(CommandError) as cm:
            call_command("simulate_cheater", contract_id="nope", trials=10, params="toy",
                         ledger=str(self.ledger_path))
        self.assertEqual(cm.exception.returncode, 1)

    def test_verify_transcript_command(self):
        transcript = ProofService.run_protocol(
            ContractProver(TOY, self.knowledge, seeded_rng(1)), ContractVerifier(self.record, TOY, seeded_rng(2)), 8)
        path = ProofService.write_transcript(transcript, self.dir / "proof.json")
        out = io.StringIO()
        call_command("verify_transcript", transcript=str(path), params="toy", ledger=str(self.ledger_path),
                     stdout=out)
        self.assertTrue(out.getvalue().startswith("VALID"))

        data = json.loads(path.read_bytes())
        data["rounds"][0]["z"] = int_to_hex((int(data["rounds"][0]["z"], 16) + 1) % TOY.q)
        path.write_bytes(canonical_bytes(data))
        with self.assertRaises(CommandError) as cm:
            call_command("verify_transcript", transcript=str(path), params="toy", ledger=str(self.ledger_path),
                         stdout=io.StringIO())
        self.assertEqual(cm.exception.returncode, 1)


class TranscriptApiTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        path = Path(self.tmp.name) / "ledger.jsonl"
        ledger = Ledger()
        self.record, knowledge = register(ledger, TOY)
        LedgerService.save_ledger(ledger, path)
        self.transcript = ProofService.run_protocol(
            ContractProver(TOY, knowledge, seeded_rng(1)), ContractVerifier(self.record, TOY, seeded_rng(2)), 6)

        override = override_settings(LEDGER_PATH=path, PARAMS_PROFILE="toy")
        override.enable()
        self.addCleanup(override.disable)
        self.client = APIClient()

    def test_verify_transcript(self):
        response = self.client.post('/api/transcripts/verify/', ProofTranscriptSerializer(self.transcript).data,
                                    format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertTrue(response.json()["valid"])
        self.assertEqual(response.json()["rounds_checked"], 6)

    def test_malformed_transcript(self):
        response = self.client.post('/api/transcripts/verify/', {"contract_id": "lodging-1"}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_unknown_contract(self):
        data = dict(ProofTranscriptSerializer(self.transcript).data, contract_id="nope")
        response = self.client.post('/api/transcripts/verify/', data, format='json')
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)
