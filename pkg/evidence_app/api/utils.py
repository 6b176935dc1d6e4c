import hashlib
import json
import re
from typing import Any

from evidence_app.exceptions import ContentError
from evidence_app.records import ContractContent, ContractTerm


CONTAINER_MAGIC = b"SVP-CONTRACT/1"

_BODY_HEADER = re.compile(rb"^body (0|[1-9][0-9]*)$")
_TERM_HEADER = re.compile(rb"^term (0|[1-9][0-9]*) (0|[1-9][0-9]*)$")


def canonical_dumps(obj: Any) -> str:
    """
    Serialize to canonical JSON: sorted keys, no insignificant whitespace.

    Big integers are expected to be hex strings already; NaN and Infinity
    are refused.
    """
    return json.dumps(
        obj,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )


def canonical_bytes(obj: Any) -> bytes:
    """Canonical JSON as UTF-8 bytes."""
    return canonical_dumps(obj).encode("utf-8")


def sha256_digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def length_prefixed(*parts: bytes) -> bytes:
    """
    Concatenate byte strings, each preceded by its length as 8 bytes big-endian.

    Makes field boundaries unambiguous before hashing, so (salt, label, value)
    can never collide with a differently split input.
    """
    return b"".join(len(part).to_bytes(8, "big") + part for part in parts)


def parse_contract_file(data: bytes) -> ContractContent:
    """
    Parse the plain-text contract container.

    Format (every length is a decimal byte count, every payload is followed
    by a newline)::

        SVP-CONTRACT/1
        body <n>
        <n bytes of body>
        term <label-length> <value-length>
        <label bytes><value bytes>
        ...

    Exactly one ``body`` record must come first; any number of ``term``
    records may follow.

    Args:
        data: Raw file content

    Returns:
        ContractContent: Parsed content (not yet validated for emptiness)

    Raises:
        ContentError: If the container is malformed
    """
    header, sep, rest = data.partition(b"\n")
    if header != CONTAINER_MAGIC or not sep:
        raise ContentError("Not a contract container: missing SVP-CONTRACT/1 header.")

    body = None
    terms: list[ContractTerm] = []
    pos = 0

    while pos < len(rest):
        eol = rest.find(b"\n", pos)
        if eol == -1:
            raise ContentError("Truncated record header.")
        line = rest[pos:eol]
        pos = eol + 1

        body_match = _BODY_HEADER.match(line)
        term_match = _TERM_HEADER.match(line)

        if body_match:
            if body is not None or terms:
                raise ContentError("The body record must appear exactly once, before any term.")
            size = int(body_match.group(1))
            body, pos = _take(rest, pos, size)
        elif term_match:
            if body is None:
                raise ContentError("Term record before the body record.")
            label_size, value_size = int(term_match.group(1)), int(term_match.group(2))
            payload, pos = _take(rest, pos, label_size + value_size)
            try:
                label = payload[:label_size].decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ContentError("Term label is not valid UTF-8.") from exc
            terms.append(ContractTerm(label=label, value=payload[label_size:]))
        else:
            raise ContentError(f"Unknown record header: {line[:40]!r}")

    if body is None:
        raise ContentError("Container has no body record.")
    return ContractContent(body=body, terms=tuple(terms))


def _take(data: bytes, pos: int, size: int) -> tuple[bytes, int]:
    end = pos + size
    if end + 1 > len(data) or data[end:end + 1] != b"\n":
        raise ContentError("Record payload is truncated or not newline-terminated.")
    return data[pos:end], end + 1


def format_contract_file(content: ContractContent) -> bytes:
    """Write content in the container format read by ``parse_contract_file``."""
    chunks = [CONTAINER_MAGIC + b"\n", b"body %d\n" % len(content.body), content.body, b"\n"]
    for term in content.terms:
        label = term.label.encode("utf-8")
        chunks += [b"term %d %d\n" % (len(label), len(term.value)), label, term.value, b"\n"]
    return b"".join(chunks)
