import time
from dataclasses import dataclass, field
from pathlib import Path

import structlog

from evidence_app.api.utils import length_prefixed, parse_contract_file
from evidence_app.exceptions import ParameterError, SaltError, SvpError
from evidence_app.group import (
    GroupParams,
    Scalar,
    ensure_valid,
    hash_to_scalar,
    int_to_hex,
    is_member,
    mod_exp,
)
from evidence_app.records import ContractContent, EvidenceRecord, SecretWitness
from ledger_app.api.services import LedgerService


logger = structlog.get_logger(__name__)

MIN_SALT_BYTES = 16


@dataclass(frozen=True)
class BindingReport:
    """
    Result of re-deriving evidence from content.

    Attributes:
        valid: True if every evidence value was reproduced
        reason: Why the binding failed, if it did
        failing_labels: Term labels whose evidence did not match
    """
    valid: bool
    reason: str | None = None
    failing_labels: tuple[str, ...] = field(default_factory=tuple)

    def __bool__(self):
        return self.valid


class EvidenceService:
    """
    Service layer for turning confidential contract content into public evidence.

    The content and salt stay with the parties; only g^x values (whole
    contract and per term) are produced for publication.
    """

    @staticmethod
    def derive_witness(content: ContractContent, salt: bytes, params: GroupParams) -> SecretWitness:
        """
        Derive the secret exponents for a contract.

        x = H(len(salt) || salt || len(body) || body) mod q, and per term
        x_label = H(len(salt) || salt || len(label) || label || len(value) || value) mod q,
        with 8-byte big-endian lengths.

        Args:
            content: Confidential contract content
            salt: Secret shared among the parties, at least 16 bytes
            params: Group parameters

        Returns:
            SecretWitness: Deterministic for a given (content, salt, params)

        Raises:
            SaltError: If the salt is shorter than 16 bytes
            ContentError: If the body is empty, a label is blank or labels repeat
        """
        if len(salt) < MIN_SALT_BYTES:
            raise SaltError(f"Salt must be at least {MIN_SALT_BYTES} bytes.")
        content.validate()

        x = hash_to_scalar(length_prefixed(salt, content.body), params)
        term_witnesses = tuple(
            (term.label, EvidenceService.derive_term_witness(term.label, term.value, salt, params))
            for term in content.terms
        )
        return SecretWitness(x=x, term_witnesses=term_witnesses, salt=salt)

    @staticmethod
    def derive_term_witness(label: str, value: bytes, salt: bytes, params: GroupParams) -> Scalar:
        """
        Witness for a single term; lets a party that only remembers one
        essential detail (and the salt) prove knowledge of that term.
        """
        if len(salt) < MIN_SALT_BYTES:
            raise SaltError(f"Salt must be at least {MIN_SALT_BYTES} bytes.")
        return hash_to_scalar(length_prefixed(salt, label.encode("utf-8"), value), params)

    @staticmethod
    def generate_evidence(witness: SecretWitness, params: GroupParams, contract_id: str,
                          created_at: int | None = None) -> EvidenceRecord:
        """
        Compute the public evidence for a witness.

        Args:
            witness: Secret exponents
            params: Group parameters
            contract_id: Identifier under which the record will be published
            created_at: Seconds since the epoch; defaults to now

        Returns:
            EvidenceRecord: Holds only g^x values, never x, salt or content

        Raises:
            ParameterError: If params are invalid or a scalar is outside [0, q)
        """
        ensure_valid(params)
        scalars = [witness.x] + [scalar for _, scalar in witness.term_witnesses]
        if any(not 0 <= scalar < params.q for scalar in scalars):
            raise ParameterError("Witness scalars must lie in [0, q).")

        return EvidenceRecord(
            contract_id=contract_id,
            e=mod_exp(params.g, witness.x, params),
            term_evidence=tuple(
                (label, mod_exp(params.g, scalar, params)) for label, scalar in witness.term_witnesses
            ),
            params_id=params.params_id,
            created_at=int(time.time()) if created_at is None else created_at,
        )

    @staticmethod
    def verify_binding(content: ContractContent, salt: bytes, record: EvidenceRecord,
                       params: GroupParams) -> BindingReport:
        """
        Check that (content, salt) reproduce every evidence value of a record.

        Used by parties who still hold the content. Never raises; problems
        are reported in the BindingReport.
        """
        if record.params_id != params.params_id:
            return BindingReport(False, "record was made with different group parameters")
        try:
            witness = EvidenceService.derive_witness(content, salt, params)
        except SvpError as exc:
            return BindingReport(False, str(exc))

        if content.labels != record.labels:
            return BindingReport(False, "term labels differ from the record")

        failing = tuple(
            label
            for (label, scalar), (_, published) in zip(witness.term_witnesses, record.term_evidence)
            if mod_exp(params.g, scalar, params) != published
        )
        body_matches = mod_exp(params.g, witness.x, params) == record.e

        if body_matches and not failing:
            return BindingReport(True)
        if failing:
            return BindingReport(False, f"term evidence mismatch: {', '.join(failing)}", failing)
        return BindingReport(False, "contract evidence mismatch")

    @staticmethod
    def check_record(record: EvidenceRecord, params: GroupParams) -> None:
        """
        Raises:
            ParameterError: If the record belongs to other params or holds a non-member value
        """
        if record.params_id != params.params_id:
            raise ParameterError(
                f"Record '{record.contract_id}' uses params {record.params_id}, not {params.params_id}."
            )
        values = [record.e] + [value for _, value in record.term_evidence]
        if not all(is_member(value, params) for value in values):
            raise ParameterError(f"Record '{record.contract_id}' holds a value outside the subgroup.")

    @staticmethod
    def load_content(path) -> ContractContent:
        """
        Read and validate a contract container file.

        Raises:
            ContentError: If the file is malformed or the content invalid
            OSError: If the file cannot be read
        """
        content = parse_contract_file(Path(path).read_bytes())
        content.validate()
        return content

    @staticmethod
    def register(content: ContractContent, salt: bytes, contract_id: str, ledger, params: GroupParams,
                 clock=time.time):
        """
        Derive evidence for a contract and append it to the ledger.

        This method orchestrates the full registration:
        1. Derive the witness from content and salt
        2. Generate the public evidence record
        3. Append the record to the ledger in a new block

        Returns:
            tuple[EvidenceRecord, BlockRef]: The published record and where it landed

        Raises:
            SaltError, ContentError, ParameterError: On invalid inputs
            DuplicateContractError: If the contract id is already registered
        """
        witness = EvidenceService.derive_witness(content, salt, params)
        record = EvidenceService.generate_evidence(witness, params, contract_id, created_at=int(clock()))
        ref = LedgerService.append_evidence(ledger, record, clock)

        logger.info(
            "evidence_registered",
            contract_id=contract_id,
            block_index=ref.block_index,
            e=int_to_hex(record.e),
            terms=list(record.labels),
        )
        return record, ref

