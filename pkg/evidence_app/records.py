from dataclasses import dataclass, field

from evidence_app.exceptions import ContentError, LabelError
from evidence_app.group import GroupElement, Scalar


@dataclass(frozen=True)
class ContractTerm:
    """One labelled term of a contract, e.g. ("period", b"2024-01..2024-02")."""
    label: str
    value: bytes


@dataclass(frozen=True)
class ContractContent:
    """
    Confidential contract content. Never leaves the parties' machines.

    Attributes:
        body: Full contract text
        terms: Ordered labelled terms; labels unique within one contract
    """
    body: bytes
    terms: tuple[ContractTerm, ...] = ()

    def validate(self):
        """
        Raises:
            ContentError: If the body is empty, a label is blank or holds NUL, or labels repeat
        """
        if not self.body:
            raise ContentError("Contract body must not be empty.")
        for term in self.terms:
            if not term.label.strip() or "\x00" in term.label:
                raise ContentError(f"Invalid term label {term.label!r}.")
        labels = [term.label for term in self.terms]
        duplicates = sorted({label for label in labels if labels.count(label) > 1})
        if duplicates:
            raise ContentError(f"Duplicate term labels: {', '.join(duplicates)}.")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(term.label for term in self.terms)

    def __repr__(self):
        return f"ContractContent(<{len(self.body)} bytes>, labels={list(self.labels)})"


@dataclass(frozen=True)
class SecretWitness:
    """
    Discrete-log witnesses derived from contract content.

    Kept by the parties only; never serialized to the ledger or the wire.
    """
    x: Scalar
    term_witnesses: tuple[tuple[str, Scalar], ...]
    salt: bytes = field(repr=False)

    def term(self, label: str) -> Scalar:
        for term_label, scalar in self.term_witnesses:
            if term_label == label:
                return scalar
        raise LabelError(f"No witness for term '{label}'.")

    def __repr__(self):
        return f"SecretWitness(<redacted>, labels={[label for label, _ in self.term_witnesses]})"


@dataclass(frozen=True)
class EvidenceRecord:
    """
    Public evidence published on the ledger.

    Attributes:
        contract_id: Identifier chosen by the registering party
        e: g^x mod p for the whole-contract witness
        term_evidence: (label, g^x_label mod p) per term, in contract order
        params_id: Fingerprint of the GroupParams used
        created_at: Seconds since the epoch
    """
    contract_id: str
    e: GroupElement
    term_evidence: tuple[tuple[str, GroupElement], ...]
    params_id: str
    created_at: int

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.term_evidence)

    def evidence_for(self, target: str | None) -> GroupElement:
        """
        Public value for a proof target: the whole contract when target is
        None, otherwise the named term.

        Raises:
            LabelError: If the record has no evidence for that label
        """
        if target is None:
            return self.e
        for label, value in self.term_evidence:
            if label == target:
                return value
        raise LabelError(f"Contract '{self.contract_id}' has no term '{target}'.")
