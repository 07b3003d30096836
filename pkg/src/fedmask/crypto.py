"""Cryptographic building blocks for the masked aggregation protocol.

Four primitives live here:

* Threshold secret sharing of field vectors (polynomial shares with
  evaluation points 1..n, recovery by Lagrange interpolation at zero),
  additively homomorphic so shares of different secrets can be summed
  before recovery.  Each dealing optionally carries a Pedersen
  companion: commitments to the polynomial coefficients plus a blinding
  polynomial, letting anyone verify a (possibly summed) share against
  the (possibly summed) coefficient commitments without learning the
  secret.

* Commitments over a group of order exactly q, realized as the order-q
  subgroup of Z_P* for the smallest P = c*q + 1 prime.  Exponents are
  field residues, so commitment products track field sums exactly.
  Bases are derived from fixed domain-separation tags (nothing up the
  sleeve).  Deterministic commitments (no opening) bind a public value;
  hiding commitments carry a random opening.

* Ed25519 signatures with keys derived from seed bytes, plus
  certificates realized as sets of signatures by distinct signers over
  one digest, valid at a stated threshold.

* Sealed envelopes: X25519 key agreement with an ephemeral key plus
  ChaCha20-Poly1305, so only the addressed recipient can open a payload
  and any ciphertext tampering is detected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from fedmask.field import DEFAULT_PRIME, FieldVec, f_inv, random_field_vec

__all__ = [
    "BelowThreshold",
    "Certificate",
    "CommitGroup",
    "DuplicateSigner",
    "InsufficientShares",
    "SealError",
    "SealedBox",
    "ShareVector",
    "commit_group_for_prime",
    "deal_shares",
    "keypair_from_seed",
    "seal",
    "seal_keypair_from_seed",
    "sign",
    "ss_add",
    "ss_recover",
    "sum_coefficient_commitments",
    "unseal",
    "verify",
    "verify_share_against_commitments",
]


class InsufficientShares(ValueError):
    """Fewer distinct share owners than the recovery threshold."""


class DuplicateSigner(ValueError):
    """The same signer appears twice in a certificate combine."""


class BelowThreshold(ValueError):
    """Valid signature count below the certificate threshold."""


class SealError(ValueError):
    """Envelope failed authentication or was addressed elsewhere."""


# ---- commitment group ----


def _is_probable_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 3.3 * 10^24."""
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41):
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class CommitGroup:
    """Order-q subgroup of Z_P* with two independent bases."""

    q: int
    modulus: int
    g: int
    h: int

    @classmethod
    def derive(cls, q: int) -> "CommitGroup":
        c = 2
        while not _is_probable_prime(c * q + 1):
            c += 2
        modulus = c * q + 1

        def base(tag: str) -> int:
            counter = 0
            while True:
                raw = hashlib.blake2b(
                    tag.encode() + counter.to_bytes(4, "little"), digest_size=16
                ).digest()
                x = int.from_bytes(raw, "little") % modulus
                cand = pow(x, c, modulus)
                if cand not in (0, 1):
                    return cand
                counter += 1

        g = base("commit-base-g")
        h = base("commit-base-h")
        assert pow(g, q, modulus) == 1 and pow(h, q, modulus) == 1 and g != h
        return cls(q=q, modulus=modulus, g=g, h=h)

    # deterministic commitment: one group element per coordinate
    def commit_det(self, vec: FieldVec) -> Tuple[int, ...]:
        m = self.modulus
        return tuple(pow(self.g, v, m) for v in vec)

    def commit_pedersen(
        self, vec: FieldVec, openings: FieldVec
    ) -> Tuple[int, ...]:
        if len(vec) != len(openings):
            raise ValueError("opening length mismatch")
        m = self.modulus
        return tuple(
            (pow(self.g, v, m) * pow(self.h, r, m)) % m
            for v, r in zip(vec, openings)
        )

    def commit_add(
        self, a: Sequence[int], b: Sequence[int]
    ) -> Tuple[int, ...]:
        if len(a) != len(b):
            raise ValueError("commitment length mismatch")
        m = self.modulus
        return tuple((x * y) % m for x, y in zip(a, b))

    def verify_det(self, commitment: Sequence[int], vec: FieldVec) -> bool:
        return len(commitment) == len(vec) and all(
            int(c) == pow(self.g, v, self.modulus) for c, v in zip(commitment, vec)
        )

    def verify_pedersen(
        self, commitment: Sequence[int], vec: FieldVec, openings: FieldVec
    ) -> bool:
        if not (len(commitment) == len(vec) == len(openings)):
            return False
        m = self.modulus
        return all(
            int(c) == (pow(self.g, v, m) * pow(self.h, r, m)) % m
            for c, v, r in zip(commitment, vec, openings)
        )


_GROUP_CACHE: Dict[int, CommitGroup] = {}


def commit_group_for_prime(q: int = DEFAULT_PRIME) -> CommitGroup:
    grp = _GROUP_CACHE.get(q)
    if grp is None:
        grp = CommitGroup.derive(q)
        _GROUP_CACHE[q] = grp
    return grp


# ---- secret sharing ----


@dataclass(frozen=True)
class ShareVector:
    """One owner's share of a vector secret (values) plus blinding share.

    owner is the polynomial evaluation point (1-based).  Shares of
    different dealings with the same owner add componentwise, and the
    sum is a share of the summed secrets.
    """

    owner: int
    values: FieldVec
    blinds: FieldVec

    def add(self, other: "ShareVector") -> "ShareVector":
        if self.owner != other.owner:
            raise ValueError("cannot add shares with different owners")
        return ShareVector(
            owner=self.owner,
            values=self.values.add(other.values),
            blinds=self.blinds.add(other.blinds),
        )


def _poly_eval(coeffs: List[int], x: int, q: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % q
    return acc


def deal_shares(
    secret: FieldVec,
    n_shares: int,
    threshold: int,
    rng: np.random.Generator,
    group: Optional[CommitGroup] = None,
) -> Tuple[List[ShareVector], Optional[Tuple[Tuple[int, ...], ...]]]:
    """Split a vector secret into n shares recoverable from any ``threshold``.

    Returns (shares, coefficient_commitments).  When ``group`` is given,
    each coordinate's polynomial coefficients are Pedersen-committed
    against a blinding polynomial; coefficient_commitments[coord][deg]
    is the commitment to the degree-``deg`` coefficient pair.
    """
    if not 1 <= threshold <= n_shares:
        raise ValueError("threshold must be in [1, n_shares]")
    q = secret.prime
    dim = len(secret)
    value_coeffs: List[List[int]] = []
    blind_coeffs: List[List[int]] = []
    for c in range(dim):
        rand_v = random_field_vec(threshold - 1, rng, q).to_ints()
        value_coeffs.append([secret[c]] + rand_v)
        if group is not None:
            blind_coeffs.append(random_field_vec(threshold, rng, q).to_ints())
        else:
            blind_coeffs.append([0] * threshold)

    shares = []
    for owner in range(1, n_shares + 1):
        vals = [_poly_eval(value_coeffs[c], owner, q) for c in range(dim)]
        blbs = [_poly_eval(blind_coeffs[c], owner, q) for c in range(dim)]
        shares.append(
            ShareVector(owner=owner, values=FieldVec(vals, q), blinds=FieldVec(blbs, q))
        )

    commitments = None
    if group is not None:
        commitments = tuple(
            tuple(
                (
                    pow(group.g, value_coeffs[c][d], group.modulus)
                    * pow(group.h, blind_coeffs[c][d], group.modulus)
                )
                % group.modulus
                for d in range(threshold)
            )
            for c in range(dim)
        )
    return shares, commitments


def ss_add(shares: Sequence[ShareVector]) -> ShareVector:
    """Sum same-owner shares of different secrets."""
    if not shares:
        raise ValueError("empty share sum")
    acc = shares[0]
    for s in shares[1:]:
        acc = acc.add(s)
    return acc


def _lagrange_at_zero(owners: Sequence[int], q: int) -> List[int]:
    coeffs = []
    for i, xi in enumerate(owners):
        num, den = 1, 1
        for j, xj in enumerate(owners):
            if i == j:
                continue
            num = (num * (-xj)) % q
            den = (den * (xi - xj)) % q
        coeffs.append((num * f_inv(den % q, q)) % q)
    return coeffs


def ss_recover(shares: Sequence[ShareVector], threshold: int) -> FieldVec:
    """Interpolate the vector secret at zero from >= threshold distinct owners."""
    by_owner: Dict[int, ShareVector] = {}
    for s in shares:
        by_owner.setdefault(s.owner, s)
    if len(by_owner) < threshold:
        raise InsufficientShares(
            f"need {threshold} distinct share owners, got {len(by_owner)}"
        )
    picked = sorted(by_owner.values(), key=lambda s: s.owner)[:threshold]
    q = picked[0].values.prime
    dim = len(picked[0].values)
    lag = _lagrange_at_zero([s.owner for s in picked], q)
    out = []
    for c in range(dim):
        out.append(sum(l * s.values[c] for l, s in zip(lag, picked)) % q)
    return FieldVec(out, q)


def sum_coefficient_commitments(
    commitment_sets: Sequence[Tuple[Tuple[int, ...], ...]],
    group: CommitGroup,
) -> Tuple[Tuple[int, ...], ...]:
    """Componentwise product: commitments to the summed polynomials."""
    if not commitment_sets:
        raise ValueError("empty commitment sum")
    dim = len(commitment_sets[0])
    deg = len(commitment_sets[0][0])
    m = group.modulus
    out = []
    for c in range(dim):
        row = []
        for d in range(deg):
            prod = 1
            for cs in commitment_sets:
                prod = (prod * cs[c][d]) % m
            row.append(prod)
        out.append(tuple(row))
    return tuple(out)


def verify_share_against_commitments(
    share: ShareVector,
    commitments: Tuple[Tuple[int, ...], ...],
    group: CommitGroup,
) -> bool:
    """Check a (possibly summed) share against (possibly summed) coefficients.

    Per coordinate: g^value * h^blind must equal the product of the
    coefficient commitments raised to owner^degree.
    """
    if len(commitments) != len(share.values):
        return False
    m = group.modulus
    x = share.owner
    for c in range(len(share.values)):
        lhs = (
            pow(group.g, share.values[c], m) * pow(group.h, share.blinds[c], m)
        ) % m
        rhs = 1
        xp = 1
        for d in range(len(commitments[c])):
            rhs = (rhs * pow(commitments[c][d], xp, m)) % m
            xp = (xp * x) % group.q
        if lhs != rhs:
            return False
    return True


# ---- signatures ----


def keypair_from_seed(seed: bytes) -> Tuple[bytes, bytes]:
    """Derive a deterministic Ed25519 keypair; returns (sk, pk) raw bytes."""
    if len(seed) != 32:
        raise ValueError("signing seed must be 32 bytes")
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    pk = sk.public_key().public_bytes_raw()
    return seed, pk


def sign(sk: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(sk).sign(message)


def verify(pk: bytes, message: bytes, sig: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(sig, message)
        return True
    except (InvalidSignature, ValueError):
        return False


# ---- certificates (multisignature sets) ----


@dataclass(frozen=True)
class Certificate:
    """A digest endorsed by >= threshold distinct signers."""

    digest: bytes
    entries: Tuple[Tuple[str, bytes], ...]  # (signer id, signature)
    threshold: int

    def signer_ids(self) -> Tuple[str, ...]:
        return tuple(s for s, _ in self.entries)


def combine_certificate(
    digest: bytes,
    sig_shares: Iterable[Tuple[str, bytes]],
    threshold: int,
    pubkeys: Dict[str, bytes],
) -> Certificate:
    """Filter signature shares down to valid ones and build a certificate.

    Shares whose signature does not verify over ``digest`` are dropped.
    An explicitly duplicated signer raises DuplicateSigner; fewer than
    ``threshold`` surviving entries raises BelowThreshold.
    """
    seen: Dict[str, bytes] = {}
    for signer, sig in sig_shares:
        if signer in seen:
            raise DuplicateSigner(f"signer {signer} appears more than once")
        seen[signer] = sig
    entries = tuple(
        (signer, sig)
        for signer, sig in seen.items()
        if signer in pubkeys and verify(pubkeys[signer], digest, sig)
    )
    if len(entries) < threshold:
        raise BelowThreshold(
            f"only {len(entries)} valid signatures, threshold {threshold}"
        )
    return Certificate(digest=digest, entries=entries, threshold=threshold)


def verify_certificate(
    cert: Certificate,
    digest: bytes,
    threshold: int,
    pubkeys: Dict[str, bytes],
) -> bool:
    if cert.digest != digest or len(cert.entries) < threshold:
        return False
    signers = set()
    valid = 0
    for signer, sig in cert.entries:
        if signer in signers:
            return False
        signers.add(signer)
        if signer in pubkeys and verify(pubkeys[signer], digest, sig):
            valid += 1
    return valid >= threshold


# ---- sealed envelopes ----


@dataclass(frozen=True)
class SealedBox:
    """Ciphertext addressed to one recipient public key."""

    ephemeral_pk: bytes
    ciphertext: bytes


def seal_keypair_from_seed(seed: bytes) -> Tuple[bytes, bytes]:
    """Derive a deterministic X25519 keypair; returns (sk, pk) raw bytes."""
    if len(seed) != 32:
        raise ValueError("sealing seed must be 32 bytes")
    sk = X25519PrivateKey.from_private_bytes(seed)
    pk = sk.public_key().public_bytes_raw()
    return sk.private_bytes_raw(), pk


def _box_key(shared: bytes, eph_pk: bytes, recipient_pk: bytes) -> bytes:
    return hashlib.blake2b(
        b"seal-key" + shared + eph_pk + recipient_pk, digest_size=32
    ).digest()


def seal(payload: bytes, recipient_pk: bytes, rng: np.random.Generator) -> SealedBox:
    eph_seed = rng.bytes(32)
    eph_sk = X25519PrivateKey.from_private_bytes(eph_seed)
    eph_pk = eph_sk.public_key().public_bytes_raw()
    shared = eph_sk.exchange(X25519PublicKey.from_public_bytes(recipient_pk))
    key = _box_key(shared, eph_pk, recipient_pk)
    ct = ChaCha20Poly1305(key).encrypt(bytes(12), payload, None)
    return SealedBox(ephemeral_pk=eph_pk, ciphertext=ct)


def unseal(box: SealedBox, recipient_sk: bytes) -> bytes:
    sk = X25519PrivateKey.from_private_bytes(recipient_sk)
    my_pk = sk.public_key().public_bytes_raw()
    try:
        shared = sk.exchange(X25519PublicKey.from_public_bytes(box.ephemeral_pk))
        key = _box_key(shared, box.ephemeral_pk, my_pk)
        return ChaCha20Poly1305(key).decrypt(bytes(12), box.ciphertext, None)
    except (InvalidTag, ValueError) as exc:
        raise SealError("envelope failed authentication") from exc
