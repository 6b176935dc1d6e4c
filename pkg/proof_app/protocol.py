"""
Interactive proof of knowledge of x such that e = g^x mod p.

Each round:

1. The prover draws a fresh nonce r in [0, q) and sends s = g^r.
2. The verifier sends a random bit i.
3. The prover answers z = r when i = 0, or z = (r + x) mod q when i = 1.
4. The verifier accepts iff g^z == s * e^i (mod p).

A prover without x can prepare an answer for one value of i only, so it
passes a round with probability 1/2 and k rounds with probability 2^-k.

Nonces are single-use: a nonce answered for both bits would reveal
x = z1 - z0 mod q. Sessions drop the nonce as soon as a round is answered
and refuse out-of-order calls.
"""
from dataclasses import dataclass
from enum import Enum

from evidence_app.exceptions import MalformedMessageError, ProtocolOrderError
from evidence_app.group import GroupElement, GroupParams, RandomSource, Scalar, is_member, mod_exp, random_scalar


class Phase(str, Enum):
    AWAITING_COMMIT = "awaiting-commit"
    AWAITING_CHALLENGE = "awaiting-challenge"
    AWAITING_RESPONSE = "awaiting-response"
    DONE = "done"


class Verdict(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class Commitment:
    s: GroupElement


@dataclass(frozen=True)
class Challenge:
    i: int

    def __post_init__(self):
        if self.i not in (0, 1):
            raise MalformedMessageError(f"Challenge must be 0 or 1, got {self.i!r}.")


@dataclass(frozen=True)
class Response:
    z: Scalar


@dataclass(frozen=True)
class RoundTranscript:
    """One (commitment, challenge, response, verdict) exchange."""
    commitment: Commitment
    challenge: Challenge
    response: Response
    verdict: Verdict


@dataclass(frozen=True)
class ProofTranscript:
    """
    The auditable record of a proof.

    Attributes:
        contract_id: Contract whose evidence was proven
        target: None for the whole contract, otherwise a term label
        k: Number of rounds the verifier asked for
        rounds: Completed rounds in order; fewer than k if the session aborted
    """
    contract_id: str
    target: str | None
    k: int
    rounds: tuple[RoundTranscript, ...]

    @property
    def overall(self) -> Verdict:
        complete = len(self.rounds) == self.k
        if complete and all(rnd.verdict is Verdict.ACCEPT for rnd in self.rounds):
            return Verdict.ACCEPT
        return Verdict.REJECT

    @property
    def accepted(self) -> bool:
        return self.overall is Verdict.ACCEPT


class ProverSession:
    """
    Prover-side state machine for one proof.

    Attributes:
        params: Group parameters
        evidence: Public value e being proven
        k: Rounds expected, or None if the verifier decides when to stop
        phase: AWAITING_COMMIT or AWAITING_CHALLENGE, DONE after k rounds
        round_index: Number of rounds answered
    """

    def __init__(self, params: GroupParams, evidence: GroupElement, k: int | None = None):
        self.params = params
        self.evidence = evidence
        self.k = k
        self.phase = Phase.AWAITING_COMMIT
        self.round_index = 0
        self._nonce: Scalar | None = None

    def _open_round(self, nonce: Scalar) -> None:
        if self.phase is not Phase.AWAITING_COMMIT:
            raise ProtocolOrderError(f"Prover cannot commit while {self.phase.value}.")
        self._nonce = nonce
        self.phase = Phase.AWAITING_CHALLENGE

    def _close_round(self) -> Scalar:
        if self.phase is not Phase.AWAITING_CHALLENGE:
            raise ProtocolOrderError(f"Prover cannot respond while {self.phase.value}.")
        nonce, self._nonce = self._nonce, None
        self.round_index += 1
        done = self.k is not None and self.round_index >= self.k
        self.phase = Phase.DONE if done else Phase.AWAITING_COMMIT
        return nonce


class VerifierSession:
    """
    Verifier-side state machine for one proof of k rounds.

    The verifier only ever sees public values: s, i, z and e.
    """

    def __init__(self, params: GroupParams, evidence: GroupElement, k: int):
        if k < 1:
            raise ValueError("A proof needs at least one round.")
        if not is_member(evidence, params):
            raise MalformedMessageError("Evidence is not a member of the subgroup.")
        self.params = params
        self.evidence = evidence
        self.k = k
        self.phase = Phase.AWAITING_COMMIT
        self.round_index = 0
        self.rounds: list[RoundTranscript] = []
        self._commitment: Commitment | None = None
        self._challenge: Challenge | None = None

    def _expect(self, phase: Phase, action: str) -> None:
        if self.phase is not phase:
            raise ProtocolOrderError(f"Verifier cannot {action} while {self.phase.value}.")


def prover_commit(session: ProverSession, rng: RandomSource) -> Commitment:
    """
    Draw a fresh nonce r and commit to it with s = g^r mod p.

    Raises:
        ProtocolOrderError: If the previous round has not been answered
    """
    if session.phase is not Phase.AWAITING_COMMIT:
        raise ProtocolOrderError(f"Prover cannot commit while {session.phase.value}.")
    r = random_scalar(session.params, rng)
    session._open_round(r)
    return Commitment(mod_exp(session.params.g, r, session.params))


def prover_respond(session: ProverSession, witness: Scalar, challenge: Challenge) -> Response:
    """
    Answer a challenge: r for i = 0, (r + x) mod q for i = 1. The nonce is
    discarded afterwards.

    Raises:
        ProtocolOrderError: If no commitment is outstanding
    """
    r = session._close_round()
    if challenge.i == 0:
        return Response(r)
    return Response(Scalar((r + witness) % session.params.q))


def verifier_receive_commitment(session: VerifierSession, commitment: Commitment) -> None:
    """
    Raises:
        ProtocolOrderError: If a commitment was already received this round
        MalformedMessageError: If s is not in the subgroup
    """
    session._expect(Phase.AWAITING_COMMIT, "accept a commitment")
    if not is_member(commitment.s, session.params):
        raise MalformedMessageError("Commitment is not a member of the subgroup.")
    session._commitment = commitment
    session.phase = Phase.AWAITING_CHALLENGE


def verifier_challenge(session: VerifierSession, rng: RandomSource) -> Challenge:
    """
    Draw a uniform challenge bit.

    Raises:
        ProtocolOrderError: If no commitment has been received this round
    """
    session._expect(Phase.AWAITING_CHALLENGE, "issue a challenge")
    challenge = Challenge(rng.getrandbits(1))
    session._challenge = challenge
    session.phase = Phase.AWAITING_RESPONSE
    return challenge


def verifier_check(session: VerifierSession, response: Response) -> RoundTranscript:
    """
    Verify the response and close the round.

    Raises:
        ProtocolOrderError: If no challenge is outstanding
        MalformedMessageError: If z is outside [0, q)
    """
    session._expect(Phase.AWAITING_RESPONSE, "accept a response")
    verdict = verify_round(session._commitment, session._challenge, response, session.evidence, session.params)
    transcript = RoundTranscript(session._commitment, session._challenge, response, verdict)

    session.rounds.append(transcript)
    session._commitment = session._challenge = None
    session.round_index += 1
    session.phase = Phase.DONE if session.round_index >= session.k else Phase.AWAITING_COMMIT
    return transcript


def verify_round(commitment: Commitment, challenge: Challenge, response: Response,
                 e: GroupElement, params: GroupParams) -> Verdict:
    """
    Accept iff g^z == s * e^i (mod p).

    Depends only on public values, so anyone holding a transcript and the
    published evidence can recompute it.

    Raises:
        MalformedMessageError: If s or e is not in the subgroup, or z is outside [0, q)
    """
    if not is_member(commitment.s, params):
        raise MalformedMessageError("Commitment is not a member of the subgroup.")
    if not is_member(e, params):
        raise MalformedMessageError("Evidence is not a member of the subgroup.")
    if not isinstance(response.z, int) or not 0 <= response.z < params.q:
        raise MalformedMessageError("Response is outside [0, q).")

    expected = commitment.s if challenge.i == 0 else (commitment.s * e) % params.p
    return Verdict.ACCEPT if mod_exp(params.g, response.z, params) == expected else Verdict.REJECT


def simulate_transcript(e: GroupElement, challenge: Challenge, params: GroupParams,
                        rng: RandomSource) -> RoundTranscript:
    """
    Produce an accepting round without the witness.

    Samples z uniformly and solves for the commitment: s = g^z for i = 0,
    s = g^z * e^-1 for i = 1. Real and simulated rounds are identically
    distributed per challenge bit.
    """
    z = random_scalar(params, rng)
    s = mod_exp(params.g, z, params)
    if challenge.i == 1:
        s = (s * pow(e, -1, params.p)) % params.p
    return RoundTranscript(Commitment(GroupElement(s)), challenge, Response(z), Verdict.ACCEPT)


class HonestProver:
    """Prover endpoint holding the witness for its target."""

    def __init__(self, session: ProverSession, witness: Scalar, rng: RandomSource):
        self.session = session
        self.rng = rng
        self._witness = witness

    def commit(self) -> Commitment:
        return prover_commit(self.session, self.rng)

    def respond(self, challenge: Challenge) -> Response:
        return prover_respond(self.session, self._witness, challenge)


class CheatingProver:
    """
    Witnessless prover endpoint.

    Guesses the challenge bit before committing and prepares the only answer
    it can give: for a guess of 0 it commits to g^z, for a guess of 1 to
    g^z * e^-1. Whatever bit arrives it sends z, so it passes a round exactly
    when the guess was right.
    """

    def __init__(self, session: ProverSession, rng: RandomSource):
        self.session = session
        self.rng = rng

    def commit(self) -> Commitment:
        guess = self.rng.getrandbits(1)
        forged = simulate_transcript(self.session.evidence, Challenge(guess), self.session.params, self.rng)
        self.session._open_round(forged.response.z)
        return forged.commitment

    def respond(self, challenge: Challenge) -> Response:
        return Response(self.session._close_round())


class LocalVerifier:
    """Verifier endpoint running in the current process."""

    def __init__(self, session: VerifierSession, rng: RandomSource):
        self.session = session
        self.rng = rng

    def receive(self, commitment: Commitment) -> None:
        verifier_receive_commitment(self.session, commitment)

    def challenge(self) -> Challenge:
        return verifier_challenge(self.session, self.rng)

    def check(self, response: Response) -> RoundTranscript:
        return verifier_check(self.session, response)
