"""
Arithmetic in the prime-order subgroup of Z*_p used for evidence and proofs.

Exponents (scalars) live in Z_q where q is the order of the generator g, so
that g^a * g^b == g^((a + b) mod q) holds for every pair of scalars. Two
parameter profiles ship with the project:

- ``production``: the 2048-bit MODP safe prime from RFC 3526 with
  q = (p - 1) / 2 and g = 4, a quadratic residue and therefore of order q.
- ``toy``: p = 23, q = 11, g = 2, small enough to enumerate in tests.

Big integers are written as lowercase hex without leading zeros; that form is
what ledger hashing and the wire format depend on.
"""
import hashlib
import random
import re
import secrets
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NewType, Protocol

from sympy import isprime

from evidence_app.exceptions import EntropyError, ParameterError


Scalar = NewType("Scalar", int)
GroupElement = NewType("GroupElement", int)

PRODUCTION_MIN_BITS = 2048

_HEX_RE = re.compile(r"^(0|[1-9a-f][0-9a-f]*)$")

_RFC3526_MODP_2048 = int(
    """
    FFFFFFFF FFFFFFFF C90FDAA2 2168C234 C4C6628B 80DC1CD1
    29024E08 8A67CC74 020BBEA6 3B139B22 514A0879 8E3404DD
    EF9519B3 CD3A431B 302B0A6D F25F1437 4FE1356D 6D51C245
    E485B576 625E7EC6 F44C42E9 A637ED6B 0BFF5CB6 F406B7ED
    EE386BFB 5A899FA5 AE9F2411 7C4B1FE6 49286651 ECE45B3D
    C2007CB8 A163BF05 98DA4836 1C55D39A 69163FA8 FD24CF5F
    83655D23 DCA3AD96 1C62F356 208552BB 9ED52907 7096966D
    670C354E 4ABC9804 F1746C08 CA18217C 32905E46 2E36CE3B
    E39E772C 180E8603 9B2783A2 EC07A28F B5C55DF0 6F4C52C9
    DE2BCBF6 95581718 3995497C EA956AE5 15D22618 98FA0510
    15728E5A 8AACAA68 FFFFFFFF FFFFFFFF
    """.replace(" ", "").replace("\n", ""),
    16,
)


class RandomSource(Protocol):
    """The slice of ``random.Random`` the protocol needs; ``secrets.SystemRandom`` fits too."""

    def randrange(self, start: int, stop: int = ..., step: int = ...) -> int: ...

    def getrandbits(self, k: int) -> int: ...


@dataclass(frozen=True)
class GroupParams:
    """
    Public arena for all exponentiation.

    Attributes:
        p: Prime modulus
        q: Prime order of the subgroup generated by g; divides p - 1
        g: Generator of the order-q subgroup
        name: Profile name, informational only
    """
    p: int
    q: int
    g: int
    name: str = "custom"

    @property
    def params_id(self) -> str:
        """Short fingerprint of (p, q, g) stored in evidence records."""
        canonical = f'{{"g":"{int_to_hex(self.g)}","p":"{int_to_hex(self.p)}","q":"{int_to_hex(self.q)}"}}'
        return hashlib.sha256(canonical.encode("ascii")).hexdigest()[:16]

    @property
    def is_safe_prime_group(self) -> bool:
        return self.p == 2 * self.q + 1


@dataclass(frozen=True)
class ValidityReport:
    """Outcome of a validation; ``reason`` names the first violated invariant."""
    valid: bool
    reason: str | None = None

    def __bool__(self):
        return self.valid


TOY = GroupParams(p=23, q=11, g=2, name="toy")
PRODUCTION = GroupParams(p=_RFC3526_MODP_2048, q=(_RFC3526_MODP_2048 - 1) // 2, g=4, name="production")

PROFILES = {
    "toy": TOY,
    "production": PRODUCTION,
}


def int_to_hex(value: int) -> str:
    """Canonical hex: lowercase, big-endian, no leading zeros, ``"0"`` for zero."""
    if value < 0:
        raise ValueError("Negative integers have no canonical hex form.")
    return format(value, "x")


def hex_to_int(text: str) -> int:
    """
    Parse canonical hex written by ``int_to_hex``.

    Raises:
        ValueError: If the text is not in canonical form (uppercase digits,
            leading zeros, prefixes and signs are all rejected)
    """
    if not isinstance(text, str) or not _HEX_RE.match(text):
        raise ValueError(f"Not a canonical hex integer: {text!r}")
    return int(text, 16)


def validate_params(params: GroupParams, *, production: bool = False) -> ValidityReport:
    """
    Check every GroupParams invariant.

    Args:
        params: Parameters to check
        production: Also require a safe prime of at least 2048 bits

    Returns:
        ValidityReport: valid, or invalid with the first violated invariant
    """
    p, q, g = params.p, params.q, params.g

    if p < 5:
        return ValidityReport(False, "p is too small")
    if not isprime(p):
        return ValidityReport(False, "p is not prime")
    if q < 2 or not isprime(q):
        return ValidityReport(False, "q is not prime")
    if (p - 1) % q != 0:
        return ValidityReport(False, "q does not divide p - 1")
    if g % p == 1:
        return ValidityReport(False, "g is the identity")
    if not 2 <= g <= p - 1:
        return ValidityReport(False, "g is outside [2, p - 1]")
    if pow(g, q, p) != 1:
        return ValidityReport(False, "g does not have order q")

    if production:
        if p.bit_length() < PRODUCTION_MIN_BITS:
            return ValidityReport(False, f"p has fewer than {PRODUCTION_MIN_BITS} bits")
        if not params.is_safe_prime_group:
            return ValidityReport(False, "p is not a safe prime with q = (p - 1) / 2")

    return ValidityReport(True)


@lru_cache(maxsize=32)
def _checked(params: GroupParams) -> ValidityReport:
    return validate_params(params)


def ensure_valid(params: GroupParams) -> GroupParams:
    """Raise ParameterError unless params are valid; results are cached per parameter set."""
    report = _checked(params)
    if not report.valid:
        raise ParameterError(f"Invalid group parameters: {report.reason}.")
    return params


def mod_exp(base: int, exponent: int, params: GroupParams) -> GroupElement:
    """
    Compute base^exponent mod p.

    Raises:
        ParameterError: If params are invalid
    """
    ensure_valid(params)
    return GroupElement(pow(base, exponent, params.p))


def is_member(value: int, params: GroupParams) -> bool:
    """True if value lies in the order-q subgroup."""
    return isinstance(value, int) and 1 <= value < params.p and pow(value, params.q, params.p) == 1


def random_scalar(params: GroupParams, rng: RandomSource) -> Scalar:
    """
    Draw a scalar uniformly from [0, q).

    Raises:
        EntropyError: If the randomness source fails
    """
    try:
        return Scalar(rng.randrange(params.q))
    except Exception as exc:
        raise EntropyError("Randomness source failed to produce a scalar.") from exc


def hash_to_scalar(data: bytes, params: GroupParams) -> Scalar:
    """SHA-256 of data read as a big-endian unsigned integer, reduced mod q."""
    digest = hashlib.sha256(data).digest()
    return Scalar(int.from_bytes(digest, "big") % params.q)


def system_rng() -> RandomSource:
    return secrets.SystemRandom()


def seeded_rng(seed: int) -> RandomSource:
    """Deterministic rng for the toy/test profile. Never use for production secrets."""
    return random.Random(seed)


def generate_params(bits: int, rng: RandomSource) -> GroupParams:
    """
    Generate a fresh safe-prime group with a p of the requested size.

    Searches for a prime q of bits - 1 bits such that p = 2q + 1 is prime,
    then squares a random element to land in the order-q subgroup.
    Practical up to a few hundred bits; larger groups should use the
    ``production`` profile.
    """
    if bits < 5:
        raise ParameterError("Safe-prime groups need at least 5 bits.")

    while True:
        q = rng.getrandbits(bits - 1) | (1 << (bits - 2)) | 1
        if isprime(q) and isprime(2 * q + 1):
            break
    p = 2 * q + 1

    while True:
        h = rng.randrange(2, p - 1)
        g = pow(h, 2, p)
        if g != 1:
            return GroupParams(p=p, q=q, g=g, name=f"generated-{bits}")


def dump_params(params: GroupParams) -> str:
    """Flat key-value text with canonical hex values."""
    return (
        f"p={int_to_hex(params.p)}\n"
        f"q={int_to_hex(params.q)}\n"
        f"g={int_to_hex(params.g)}\n"
    )


def parse_params(text: str, name: str = "file") -> GroupParams:
    """
    Parse the flat key-value format written by ``dump_params``.

    Blank lines and lines starting with ``#`` are ignored.

    Raises:
        ParameterError: On unknown, duplicate, missing or non-canonical fields
    """
    fields: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in ("p", "q", "g"):
            raise ParameterError(f"Line {lineno}: expected p=, q= or g=.")
        if key in fields:
            raise ParameterError(f"Line {lineno}: duplicate field {key}.")
        try:
            fields[key] = hex_to_int(value.strip())
        except ValueError as exc:
            raise ParameterError(f"Line {lineno}: {exc}") from exc

    missing = {"p", "q", "g"} - fields.keys()
    if missing:
        raise ParameterError(f"Missing fields: {', '.join(sorted(missing))}.")
    return GroupParams(p=fields["p"], q=fields["q"], g=fields["g"], name=name)


def load_params(path) -> GroupParams:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParameterError(f"Cannot read parameter file {path}: {exc}") from exc
    return parse_params(text, name=path.stem)


def resolve_params(profile: str) -> GroupParams:
    """
    Turn a profile name or parameter-file path into validated GroupParams.

    Raises:
        ParameterError: Unknown profile, unreadable file or invalid parameters
    """
    params = PROFILES.get(profile)
    if params is None:
        params = load_params(profile)
    return ensure_valid(params)
