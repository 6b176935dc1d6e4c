import json
import queue
import secrets
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import structlog
from django.utils.text import slugify

from evidence_app.api.services import EvidenceService
from evidence_app.api.utils import canonical_bytes
from evidence_app.exceptions import (
    DecodeError,
    EvidenceNotFound,
    FrameError,
    LabelError,
    MalformedMessageError,
    ParameterError,
    ProtocolOrderError,
    SessionAbortError,
    SessionError,
    TransportError,
)
from evidence_app.group import GroupParams, RandomSource, Scalar, mod_exp, seeded_rng, system_rng
from evidence_app.records import EvidenceRecord, SecretWitness
from ledger_app.api.services import LedgerService
from ledger_app.chain import Ledger
from proof_app.api.serializers import ProofTranscriptSerializer, parse_transcript
from proof_app.protocol import (
    Challenge,
    CheatingProver,
    Commitment,
    HonestProver,
    LocalVerifier,
    ProofTranscript,
    ProverSession,
    Response,
    RoundTranscript,
    Verdict,
    VerifierSession,
    verify_round,
)
from proof_app.wire import MAX_FRAME, VerifierServer, WireChannel, WireMessage


logger = structlog.get_logger(__name__)

DEFAULT_ROUNDS = 40
DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class ProverKnowledge:
    """
    What a prover actually knows: the whole-contract witness, some term
    witnesses, or both. A party may remember only one essential detail of a
    contract (plus the shared salt) and still prove that detail.
    """
    x: Scalar | None = None
    terms: dict[str, Scalar] = field(default_factory=dict)

    @classmethod
    def from_witness(cls, witness: SecretWitness) -> "ProverKnowledge":
        return cls(x=witness.x, terms=dict(witness.term_witnesses))

    def restricted(self, labels) -> "ProverKnowledge":
        """Forget the contract witness and every term not in labels."""
        return ProverKnowledge(x=None, terms={label: self.terms[label] for label in labels if label in self.terms})

    def witness_for(self, target: str | None) -> Scalar | None:
        if target is None:
            return self.x
        return self.terms.get(target)

    def __repr__(self):
        return f"ProverKnowledge(<redacted>, terms={sorted(self.terms)})"


class ContractProver:
    """
    Factory for prover endpoints of one contract.

    Known targets get an honest endpoint proving against g^w for the held
    witness w. Unknown targets fall back to the witnessless strategy when the
    public record is available, which is how soundness is exercised.
    """

    def __init__(self, params: GroupParams, knowledge: ProverKnowledge, rng: RandomSource,
                 record: EvidenceRecord | None = None):
        self.params = params
        self.knowledge = knowledge
        self.rng = rng
        self.record = record

    def endpoint(self, target: str | None, k: int | None):
        witness = self.knowledge.witness_for(target)
        if witness is not None:
            evidence = mod_exp(self.params.g, witness, self.params)
            return HonestProver(ProverSession(self.params, evidence, k), witness, self.rng)
        if self.record is not None:
            return CheatingProver(ProverSession(self.params, self.record.evidence_for(target), k), self.rng)
        raise LabelError(f"No witness held for {_target_name(target)}.")


class ContractVerifier:
    """Factory for verifier endpoints bound to one published evidence record."""

    def __init__(self, record: EvidenceRecord, params: GroupParams, rng: RandomSource):
        EvidenceService.check_record(record, params)
        self.record = record
        self.params = params
        self.rng = rng

    def endpoint(self, target: str | None, k: int) -> LocalVerifier:
        return LocalVerifier(VerifierSession(self.params, self.record.evidence_for(target), k), self.rng)


@dataclass(frozen=True)
class VerifierPolicy:
    """
    How a listening verifier runs sessions.

    Attributes:
        k: Minimum number of rounds; a prover may ask for more
        targets: Labels (None for the whole contract) a prover may ask for;
            None allows every target
        timeout: Seconds to wait for each message
        transcript_dir: Where finished transcripts are written, if anywhere
        max_frame: Largest accepted frame in bytes
    """
    k: int = DEFAULT_ROUNDS
    targets: frozenset | None = None
    timeout: float = DEFAULT_TIMEOUT
    transcript_dir: Path | None = None
    max_frame: int = MAX_FRAME

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("A proof needs at least one round.")

    def allows(self, target: str | None) -> bool:
        return self.targets is None or target in self.targets


@dataclass(frozen=True)
class TranscriptReport:
    """
    Offline re-check of a transcript against published evidence.

    Attributes:
        accepted: Every one of the k rounds recomputes to accept
        consistent: The recorded verdicts agree with recomputation
        rounds_checked: Number of rounds in the transcript
        mismatched_rounds: 1-based rounds whose recorded verdict was wrong
        reason: Why the transcript does not verify, if it does not
    """
    accepted: bool
    consistent: bool
    rounds_checked: int
    mismatched_rounds: tuple[int, ...] = ()
    reason: str | None = None

    @property
    def valid(self) -> bool:
        return self.accepted and self.consistent

    def __bool__(self):
        return self.valid


@dataclass(frozen=True)
class CheaterReport:
    """Acceptance statistics of the witnessless prover against the 2^-k bound."""
    k: int
    trials: int
    rounds_total: int
    rounds_accepted: int
    proofs_accepted: int

    @property
    def round_rate(self) -> float:
        return self.rounds_accepted / self.rounds_total

    @property
    def overall_rate(self) -> float:
        return self.proofs_accepted / self.trials

    @property
    def bound(self) -> float:
        return 2.0 ** -self.k


class ProofService:
    """
    Service layer for running and checking proofs of knowledge.

    Runs the protocol in-process or over TCP with the verifier listening,
    re-verifies stored transcripts, and measures how often a witnessless
    prover gets through.
    """

    @staticmethod
    def run_protocol(prover: ContractProver, verifier: ContractVerifier, k: int,
                     target: str | None = None) -> ProofTranscript:
        """
        Run k sequential rounds between two endpoints.

        Args:
            prover: Prover side
            verifier: Verifier side holding the published record
            k: Number of rounds, at least 1
            target: None for the whole contract, otherwise a term label

        Returns:
            ProofTranscript: accept iff every round accepted

        Raises:
            LabelError: If the record has no evidence for target
            SessionAbortError: If the transport fails part-way; carries the partial transcript
        """
        if k < 1:
            raise ValueError("A proof needs at least one round.")
        verifier_end = verifier.endpoint(target, k)
        prover_end = prover.endpoint(target, k)
        contract_id = verifier.record.contract_id

        try:
            for _ in range(k):
                verifier_end.receive(prover_end.commit())
                challenge = verifier_end.challenge()
                verifier_end.check(prover_end.respond(challenge))
        except TransportError as exc:
            partial = ProofTranscript(contract_id, target, k, tuple(verifier_end.session.rounds))
            logger.warning("proof_aborted", contract_id=contract_id, target=target, rounds=len(partial.rounds))
            raise SessionAbortError(f"Proof aborted after {len(partial.rounds)} of {k} rounds: {exc}",
                                    transcript=partial) from exc

        transcript = ProofTranscript(contract_id, target, k, tuple(verifier_end.session.rounds))
        logger.debug("proof_finished", contract_id=contract_id, target=target, k=k,
                     overall=transcript.overall.value)
        return transcript

    @staticmethod
    def run_term_protocol(prover: ContractProver, verifier: ContractVerifier, labels,
                          rounds_per_term: int) -> list[ProofTranscript]:
        """
        Prove each term separately, one multi-round proof per label.

        Raises:
            LabelError: If any label has no evidence in the record; nothing is run
        """
        labels = list(labels)
        unknown = [label for label in labels if label not in verifier.record.labels]
        if unknown:
            raise LabelError(f"Contract '{verifier.record.contract_id}' has no term(s): {', '.join(unknown)}.")
        return [ProofService.run_protocol(prover, verifier, rounds_per_term, label) for label in labels]

    @staticmethod
    def verify_transcript(transcript: ProofTranscript, record: EvidenceRecord,
                          params: GroupParams) -> TranscriptReport:
        """
        Recompute every round of a transcript from public values only.

        Raises:
            ParameterError: If the record does not belong to params
            LabelError: If the record has no evidence for the transcript's target
        """
        EvidenceService.check_record(record, params)
        if record.contract_id != transcript.contract_id:
            return TranscriptReport(False, False, len(transcript.rounds),
                                    reason="transcript is for another contract")
        evidence = record.evidence_for(transcript.target)

        mismatched = []
        all_accept = True
        for number, rnd in enumerate(transcript.rounds, start=1):
            try:
                verdict = verify_round(rnd.commitment, rnd.challenge, rnd.response, evidence, params)
            except MalformedMessageError:
                verdict = Verdict.REJECT
            all_accept = all_accept and verdict is Verdict.ACCEPT
            if verdict is not rnd.verdict:
                mismatched.append(number)

        complete = len(transcript.rounds) == transcript.k
        accepted = complete and all_accept
        reason = None
        if mismatched:
            reason = f"recorded verdicts disagree in rounds {', '.join(map(str, mismatched))}"
        elif not complete:
            reason = f"only {len(transcript.rounds)} of {transcript.k} rounds completed"
        elif not accepted:
            reason = "a round does not verify"
        return TranscriptReport(accepted, not mismatched, len(transcript.rounds), tuple(mismatched), reason)

    @staticmethod
    def _split_rng(rng: RandomSource) -> tuple[RandomSource, RandomSource]:
        """Two independent streams: fresh OS entropy each, or two seeds drawn from a seeded source."""
        if isinstance(rng, secrets.SystemRandom):
            return system_rng(), system_rng()
        return seeded_rng(rng.getrandbits(64)), seeded_rng(rng.getrandbits(64))

    @staticmethod
    def simulate_cheater(record: EvidenceRecord, params: GroupParams, k: int, trials: int,
                         rng: RandomSource, target: str | None = None) -> CheaterReport:
        """
        Run the witnessless prover against an honest verifier many times.

        Raises:
            ValueError: If k or trials is below 1
        """
        if trials < 1:
            raise ValueError("At least one trial is required.")
        if k < 1:
            raise ValueError("A proof needs at least one round.")

        cheater_rng, verifier_rng = ProofService._split_rng(rng)
        cheater = ContractProver(params, ProverKnowledge(), cheater_rng, record)
        verifier = ContractVerifier(record, params, verifier_rng)
        rounds_accepted = proofs_accepted = 0
        for _ in range(trials):
            transcript = ProofService.run_protocol(cheater, verifier, k, target)
            rounds_accepted += sum(rnd.verdict is Verdict.ACCEPT for rnd in transcript.rounds)
            proofs_accepted += transcript.accepted

        report = CheaterReport(k, trials, k * trials, rounds_accepted, proofs_accepted)
        logger.info("cheater_simulated", contract_id=record.contract_id, k=k, trials=trials,
                    round_rate=report.round_rate, overall_rate=report.overall_rate)
        return report

    @staticmethod
    def start_verifier(address, ledger: Ledger, params: GroupParams, policy: VerifierPolicy,
                       rng_factory: Callable[[], RandomSource] = system_rng,
                       on_transcript: Callable[[ProofTranscript], None] | None = None) -> VerifierServer:
        """
        Bind a verifier listener without serving yet; call ``serve_forever``
        on the result (usually in a thread). Port 0 picks a free port, see
        ``server_address``.
        """
        def handle(channel: WireChannel):
            return ProofService._serve_connection(channel, ledger, params, policy, rng_factory())

        return VerifierServer(address, handle, policy.timeout, policy.max_frame, on_transcript)

    @staticmethod
    def serve_verifier(address, ledger: Ledger, params: GroupParams, policy: VerifierPolicy,
                       rng_factory: Callable[[], RandomSource] = system_rng,
                       max_sessions: int | None = None) -> Iterator[ProofTranscript]:
        """
        Listen for provers and yield each finished transcript.

        Every connection runs in its own thread; sessions only read the
        ledger. Stops after max_sessions transcripts, or when the consumer
        closes the generator.
        """
        finished: queue.Queue = queue.Queue()
        server = ProofService.start_verifier(address, ledger, params, policy, rng_factory, finished.put)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        host, port = server.server_address[:2]
        logger.info("verifier_listening", host=host, port=port, k=policy.k)

        served = 0
        try:
            while max_sessions is None or served < max_sessions:
                yield finished.get()
                served += 1
        finally:
            server.shutdown()
            server.server_close()

    @staticmethod
    def _serve_connection(channel: WireChannel, ledger: Ledger, params: GroupParams,
                          policy: VerifierPolicy, rng: RandomSource) -> ProofTranscript | None:
        session_id = None
        try:
            hello = channel.receive()
            session_id = hello.session_id
            if hello.kind != 'hello' or hello.round != 0:
                raise ProtocolOrderError(f"Expected hello, got {hello.kind} round {hello.round}.")
            contract_id = hello.body['contract_id']
            target = hello.body['target']
            log = logger.bind(session_id=session_id.hex(), contract_id=contract_id, target=target)

            try:
                record = LedgerService.get_evidence(ledger, contract_id)
            except EvidenceNotFound:
                raise _Refusal(f"not-found: {contract_id}")
            if not policy.allows(target):
                raise _Refusal(f"target not allowed: {_target_name(target)}")
            try:
                verifier = ContractVerifier(record, params, rng)
            except ParameterError:
                raise _Refusal("params mismatch")
            if target is not None and target not in record.labels:
                raise _Refusal(f"unknown label: {target}")

            k = max(policy.k, hello.body['k'] or 0)
            endpoint = verifier.endpoint(target, k)
            channel.send(WireMessage('hello', session_id, 0, {'contract_id': contract_id, 'target': target, 'k': k}))
            log.info("proof_session_started", k=k)

            for number in range(1, k + 1):
                commit = _expect(channel, session_id, 'commit', number)
                endpoint.receive(Commitment(commit.body['s']))
                challenge = endpoint.challenge()
                channel.send(WireMessage('challenge', session_id, number, {'i': challenge.i}))
                response = _expect(channel, session_id, 'response', number)
                rnd = endpoint.check(Response(Scalar(response.body['z'])))
                channel.send(WireMessage('round-result', session_id, number, {'verdict': rnd.verdict.value}))

            transcript = ProofTranscript(contract_id, target, k, tuple(endpoint.session.rounds))
            channel.send(WireMessage('final-result', session_id, k, {'verdict': transcript.overall.value}))
            log.info("proof_session_finished", overall=transcript.overall.value)

            if policy.transcript_dir is not None:
                ProofService.save_transcript(transcript, policy.transcript_dir, session_id)
            return transcript

        except SessionError as exc:
            logger.info("proof_session_aborted_by_prover", reason=exc.reason)
        except _Refusal as exc:
            logger.info("proof_session_refused", reason=exc.reason)
            _send_abort(channel, session_id, exc.reason)
        except (ProtocolOrderError, MalformedMessageError, DecodeError, FrameError) as exc:
            logger.info("proof_session_aborted", reason=str(exc))
            _send_abort(channel, session_id, str(exc))
        except TransportError as exc:
            logger.info("proof_session_dropped", reason=str(exc))
            _send_abort(channel, session_id, str(exc))
        finally:
            channel.close()
        return None

    @staticmethod
    def run_prover(address, prover: ContractProver, contract_id: str, target: str | None = None,
                   k: int | None = None, timeout: float = DEFAULT_TIMEOUT, max_frame: int = MAX_FRAME,
                   on_frame: Callable[[str, bytes], None] | None = None) -> tuple[Verdict, ProofTranscript]:
        """
        Connect to a listening verifier and prove knowledge for one target.

        Args:
            address: (host, port) of the verifier
            prover: Prover side; only public values are ever sent
            contract_id: Contract whose evidence is being proven
            target: None for the whole contract, otherwise a term label
            k: Rounds to request; the verifier may run more
            timeout: Seconds to wait for each message
            on_frame: Called with ("in" | "out", frame bytes) for every frame

        Returns:
            tuple[Verdict, ProofTranscript]: The verifier's final verdict and the rounds

        Raises:
            TransportError: If the verifier cannot be reached or stops answering
            SessionError: If the verifier aborts the session
            LabelError: If the prover holds nothing for target
        """
        endpoint = prover.endpoint(target, None)
        try:
            sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise TransportError(f"Cannot reach verifier at {address[0]}:{address[1]}: {exc}") from exc

        channel = WireChannel(sock, timeout, max_frame, on_frame)
        session_id = secrets.token_bytes(16)
        try:
            channel.send(WireMessage('hello', session_id, 0, {'contract_id': contract_id, 'target': target, 'k': k}))
            ack = _expect(channel, session_id, 'hello', 0)
            rounds_total = ack.body['k']
            if k is not None and rounds_total < k:
                raise ProtocolOrderError(f"Verifier offered {rounds_total} rounds, fewer than the {k} requested.")

            rounds = []
            for number in range(1, rounds_total + 1):
                commitment = endpoint.commit()
                channel.send(WireMessage('commit', session_id, number, {'s': commitment.s}))
                challenge = Challenge(_expect(channel, session_id, 'challenge', number).body['i'])
                response = endpoint.respond(challenge)
                channel.send(WireMessage('response', session_id, number, {'z': response.z}))
                result = _expect(channel, session_id, 'round-result', number)
                rounds.append(RoundTranscript(commitment, challenge, response, Verdict(result.body['verdict'])))

            final = _expect(channel, session_id, 'final-result', rounds_total)
            transcript = ProofTranscript(contract_id, target, rounds_total, tuple(rounds))
            verdict = Verdict(final.body['verdict'])
            if verdict is not transcript.overall:
                raise ProtocolOrderError("Final verdict contradicts the round verdicts.")
            logger.info("proof_completed", contract_id=contract_id, target=target, k=rounds_total,
                        verdict=verdict.value)
            return verdict, transcript

        except (ProtocolOrderError, MalformedMessageError, DecodeError, FrameError) as exc:
            _send_abort(channel, session_id, str(exc))
            raise
        finally:
            channel.close()

    @staticmethod
    def dump_transcript(transcript: ProofTranscript) -> bytes:
        """Canonical JSON of a transcript, newline-terminated."""
        return canonical_bytes(ProofTranscriptSerializer(transcript).data) + b"\n"

    @staticmethod
    def write_transcript(transcript: ProofTranscript, path) -> Path:
        """
        Raises:
            OSError: If the file cannot be written
        """
        path = Path(path)
        path.write_bytes(ProofService.dump_transcript(transcript))
        return path

    @staticmethod
    def save_transcript(transcript: ProofTranscript, directory, session_id: bytes | None = None) -> Path:
        """Write a transcript into directory under a name derived from its contract, target and session."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        token = (session_id or secrets.token_bytes(16)).hex()
        name = f"{slugify(transcript.contract_id) or 'contract'}-{slugify(_target_name(transcript.target))}-{token}.json"
        path = ProofService.write_transcript(transcript, directory / name)
        logger.info("transcript_saved", path=str(path), contract_id=transcript.contract_id)
        return path

    @staticmethod
    def load_transcript(path) -> ProofTranscript:
        """
        Raises:
            OSError: If the file cannot be read
            DecodeError: If the file is not a valid transcript
        """
        try:
            data = json.loads(Path(path).read_bytes().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DecodeError(f"Transcript is not valid JSON: {exc}") from exc
        return parse_transcript(data)


class _Refusal(Exception):
    """Verifier declines a hello; the reason goes back to the prover."""

    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


def _target_name(target: str | None) -> str:
    return "the whole contract" if target is None else f"term '{target}'"


def _expect(channel: WireChannel, session_id: bytes, kind: str, number: int) -> WireMessage:
    msg = channel.receive()
    if msg.kind == 'abort':
        raise SessionError(msg.body['reason'])
    if msg.session_id != session_id:
        raise ProtocolOrderError("Message belongs to another session.")
    if msg.kind != kind or msg.round != number:
        raise ProtocolOrderError(f"Expected {kind} round {number}, got {msg.kind} round {msg.round}.")
    return msg


def _send_abort(channel: WireChannel, session_id: bytes | None, reason: str) -> None:
    try:
        channel.send(WireMessage('abort', session_id or bytes(16), 0, {'reason': reason[:1024] or 'aborted'}))
    except (TransportError, FrameError, DecodeError):
        pass
