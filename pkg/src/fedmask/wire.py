"""Message schemas and canonical binary encoding.

Every protocol message has a dataclass schema here plus a canonical,
versioned, length-prefixed binary form.  Signatures and digests are
always computed over canonical bytes, so any two parties serialize a
given tuple identically; the simulator also charges message sizes off
the same encoding.

Layout conventions: little-endian fixed-width integers, u32 length
prefixes for variable-size fields, field vectors in their native
serialization (u32 count + 8-byte residues), commitment group elements
as 12-byte little-endian integers, model vectors as raw IEEE-754
doubles.  A one-byte version and a one-byte type tag lead every
message.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from fedmask.crypto import Certificate, SealedBox, ShareVector
from fedmask.field import FieldVec

__all__ = [
    "CertifyAck",
    "CertifyRequest",
    "ClusterSum",
    "Ping",
    "SharePayload",
    "SumShares",
    "SumSharesReply",
    "Train",
    "Unification",
    "Update",
    "Wasted",
    "bundle_digest",
    "decode_message",
    "decode_share_payload",
    "encode_message",
    "encode_share_payload",
    "masked_update_digest",
    "model_digest",
    "ping_digest",
]

WIRE_VERSION = 1

SIG_LEN = 64
EPH_PK_LEN = 32
COMMIT_LEN = 12  # group elements fit in 96 bits for the default field


# ---- primitive writers/readers ----


class _Writer:
    __slots__ = ("parts",)

    def __init__(self):
        self.parts = []

    def u8(self, v: int):
        self.parts.append(struct.pack("<B", v))

    def u16(self, v: int):
        self.parts.append(struct.pack("<H", v))

    def u32(self, v: int):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v: int):
        self.parts.append(struct.pack("<Q", v))

    def raw(self, b: bytes):
        self.parts.append(b)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.parts.append(b)

    def text(self, s: str):
        self.blob(s.encode("utf-8"))

    def fvec(self, v: FieldVec):
        self.parts.append(v.to_bytes())

    def floats(self, arr: np.ndarray):
        data = np.asarray(arr, dtype="<f8").tobytes()
        self.u32(len(data) // 8)
        self.parts.append(data)

    def commits(self, cs: Tuple[int, ...]):
        self.u32(len(cs))
        for c in cs:
            self.parts.append(int(c).to_bytes(COMMIT_LEN, "little"))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated message")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        return self.blob().decode("utf-8")

    def fvec(self) -> FieldVec:
        n = int.from_bytes(self.data[self.pos : self.pos + 4], "little")
        raw = self._take(4 + 8 * n)
        return FieldVec.from_bytes(raw)

    def floats(self) -> np.ndarray:
        n = self.u32()
        return np.frombuffer(self._take(8 * n), dtype="<f8").copy()

    def commits(self) -> Tuple[int, ...]:
        n = self.u32()
        return tuple(
            int.from_bytes(self._take(COMMIT_LEN), "little") for _ in range(n)
        )

    def done(self) -> bool:
        return self.pos == len(self.data)


# ---- digests (domain-tagged canonical bytes) ----


def _digest(tag: bytes, *chunks: bytes) -> bytes:
    h = hashlib.blake2b(digest_size=32)
    h.update(tag)
    for c in chunks:
        h.update(len(c).to_bytes(4, "little"))
        h.update(c)
    return h.digest()


def ping_digest(round_no: int) -> bytes:
    return _digest(b"ping", int(round_no).to_bytes(8, "little"))


def masked_update_digest(round_no: int, client_id: str, masked: FieldVec) -> bytes:
    return _digest(
        b"masked-update",
        int(round_no).to_bytes(8, "little"),
        client_id.encode(),
        masked.to_bytes(),
    )


def bundle_digest(
    round_no: int,
    coordinator: str,
    included: Tuple[str, ...],
    grad_commit_sum: Tuple[int, ...],
) -> bytes:
    w = _Writer()
    w.u64(round_no)
    w.text(coordinator)
    w.u32(len(included))
    for cid in included:
        w.text(cid)
    w.commits(grad_commit_sum)
    return _digest(b"batch-sum", w.getvalue())


def model_digest(round_no: int, model: np.ndarray) -> bytes:
    return _digest(
        b"model",
        int(round_no).to_bytes(8, "little"),
        np.asarray(model, dtype="<f8").tobytes(),
    )


# ---- envelope payload (sealed share material) ----


@dataclass(frozen=True)
class SharePayload:
    """Plaintext inside a sealed envelope: one aggregator's share of a mask."""

    round_no: int
    client_id: str
    share: ShareVector
    grad_commit: Tuple[int, ...]
    sig: bytes  # client's signature over the canonical bytes sans sig


def _share_body(round_no: int, client_id: str, share: ShareVector, grad_commit) -> bytes:
    w = _Writer()
    w.u64(round_no)
    w.text(client_id)
    w.u16(share.owner)
    w.fvec(share.values)
    w.fvec(share.blinds)
    w.commits(grad_commit)
    return w.getvalue()


def share_payload_signing_bytes(p: "SharePayload") -> bytes:
    return _digest(b"share-payload", _share_body(p.round_no, p.client_id, p.share, p.grad_commit))


def encode_share_payload(p: SharePayload) -> bytes:
    w = _Writer()
    w.raw(_share_body(p.round_no, p.client_id, p.share, p.grad_commit))
    w.blob(p.sig)
    return w.getvalue()


def decode_share_payload(data: bytes) -> SharePayload:
    r = _Reader(data)
    round_no = r.u64()
    client_id = r.text()
    owner = r.u16()
    values = r.fvec()
    blinds = r.fvec()
    grad_commit = r.commits()
    sig = r.blob()
    if not r.done():
        raise ValueError("trailing bytes in share payload")
    return SharePayload(
        round_no=round_no,
        client_id=client_id,
        share=ShareVector(owner=owner, values=values, blinds=blinds),
        grad_commit=grad_commit,
        sig=sig,
    )


# ---- message schemas ----


@dataclass(frozen=True)
class Train:
    round_no: int
    model: np.ndarray
    cert: Optional[Certificate]  # None only at genesis round 0

    def __eq__(self, other):
        return (
            isinstance(other, Train)
            and self.round_no == other.round_no
            and np.array_equal(self.model, other.model)
            and self.cert == other.cert
        )


@dataclass(frozen=True)
class Update:
    round_no: int
    client_id: str
    masked: FieldVec
    masked_sig: bytes
    ping_sig: bytes
    envelopes: Tuple[Tuple[str, SealedBox], ...]  # (aggregator id, sealed share)
    grad_commit: Tuple[int, ...]
    coeff_commits: Tuple[Tuple[int, ...], ...]


@dataclass(frozen=True)
class Ping:
    round_no: int
    client_id: str
    sig: bytes


@dataclass(frozen=True)
class Unification:
    round_no: int
    entries: Tuple[Tuple[str, bytes], ...]  # (client id, ping signature)


@dataclass(frozen=True)
class SumShares:
    round_no: int
    coordinator: str
    included: Tuple[str, ...]
    envelopes: Tuple[Tuple[str, SealedBox], ...]  # (client id, envelope for recipient)


@dataclass(frozen=True)
class SumSharesReply:
    round_no: int
    coordinator: str
    summed_share: ShareVector
    grad_commit_sum: Tuple[int, ...]
    sig_share: bytes


@dataclass(frozen=True)
class ClusterSum:
    round_no: int
    coordinator: str
    included: Tuple[str, ...]
    grad_sum: FieldVec
    grad_commit_sum: Tuple[int, ...]
    cert: Certificate


@dataclass(frozen=True)
class CertifyRequest:
    round_no: int
    prev_model: np.ndarray
    prev_cert: Optional[Certificate]
    entries: Tuple[ClusterSum, ...]
    new_model: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, CertifyRequest)
            and self.round_no == other.round_no
            and np.array_equal(self.prev_model, other.prev_model)
            and self.prev_cert == other.prev_cert
            and self.entries == other.entries
            and np.array_equal(self.new_model, other.new_model)
        )


@dataclass(frozen=True)
class CertifyAck:
    round_no: int
    signer: str
    model_hash: bytes
    sig_share: bytes


@dataclass(frozen=True)
class Wasted:
    round_no: int


_TYPE_TAGS = {
    Train: 1,
    Update: 2,
    Ping: 3,
    Unification: 4,
    SumShares: 5,
    SumSharesReply: 6,
    ClusterSum: 7,
    CertifyRequest: 8,
    CertifyAck: 9,
    Wasted: 10,
}


# ---- sub-encoders ----


def _enc_cert(w: _Writer, cert: Optional[Certificate]):
    if cert is None:
        w.u8(0)
        return
    w.u8(1)
    w.blob(cert.digest)
    w.u16(cert.threshold)
    w.u16(len(cert.entries))
    for signer, sig in cert.entries:
        w.text(signer)
        w.blob(sig)


def _dec_cert(r: _Reader) -> Optional[Certificate]:
    if r.u8() == 0:
        return None
    digest = r.blob()
    threshold = r.u16()
    n = r.u16()
    entries = tuple((r.text(), r.blob()) for _ in range(n))
    return Certificate(digest=digest, entries=entries, threshold=threshold)


def _enc_box(w: _Writer, box: SealedBox):
    w.raw(box.ephemeral_pk)
    w.blob(box.ciphertext)


def _dec_box(r: _Reader) -> SealedBox:
    eph = r._take(EPH_PK_LEN)
    ct = r.blob()
    return SealedBox(ephemeral_pk=eph, ciphertext=ct)


def _enc_cluster_sum(w: _Writer, m: ClusterSum):
    w.u64(m.round_no)
    w.text(m.coordinator)
    w.u32(len(m.included))
    for cid in m.included:
        w.text(cid)
    w.fvec(m.grad_sum)
    w.commits(m.grad_commit_sum)
    _enc_cert(w, m.cert)


def _dec_cluster_sum(r: _Reader) -> ClusterSum:
    round_no = r.u64()
    coordinator = r.text()
    included = tuple(r.text() for _ in range(r.u32()))
    grad_sum = r.fvec()
    grad_commit_sum = r.commits()
    cert = _dec_cert(r)
    if cert is None:
        raise ValueError("cluster sum requires a certificate")
    return ClusterSum(
        round_no=round_no,
        coordinator=coordinator,
        included=included,
        grad_sum=grad_sum,
        grad_commit_sum=grad_commit_sum,
        cert=cert,
    )


# ---- top-level encode/decode ----


def encode_message(msg) -> bytes:
    w = _Writer()
    w.u8(WIRE_VERSION)
    w.u8(_TYPE_TAGS[type(msg)])
    if isinstance(msg, Train):
        w.u64(msg.round_no)
        w.floats(msg.model)
        _enc_cert(w, msg.cert)
    elif isinstance(msg, Update):
        w.u64(msg.round_no)
        w.text(msg.client_id)
        w.fvec(msg.masked)
        w.blob(msg.masked_sig)
        w.blob(msg.ping_sig)
        w.u16(len(msg.envelopes))
        for agg_id, box in msg.envelopes:
            w.text(agg_id)
            _enc_box(w, box)
        w.commits(msg.grad_commit)
        w.u16(len(msg.coeff_commits))
        for row in msg.coeff_commits:
            w.commits(row)
    elif isinstance(msg, Ping):
        w.u64(msg.round_no)
        w.text(msg.client_id)
        w.blob(msg.sig)
    elif isinstance(msg, Unification):
        w.u64(msg.round_no)
        w.u32(len(msg.entries))
        for cid, sig in msg.entries:
            w.text(cid)
            w.blob(sig)
    elif isinstance(msg, SumShares):
        w.u64(msg.round_no)
        w.text(msg.coordinator)
        w.u32(len(msg.included))
        for cid in msg.included:
            w.text(cid)
        w.u32(len(msg.envelopes))
        for cid, box in msg.envelopes:
            w.text(cid)
            _enc_box(w, box)
    elif isinstance(msg, SumSharesReply):
        w.u64(msg.round_no)
        w.text(msg.coordinator)
        w.u16(msg.summed_share.owner)
        w.fvec(msg.summed_share.values)
        w.fvec(msg.summed_share.blinds)
        w.commits(msg.grad_commit_sum)
        w.blob(msg.sig_share)
    elif isinstance(msg, ClusterSum):
        _enc_cluster_sum(w, msg)
    elif isinstance(msg, CertifyRequest):
        w.u64(msg.round_no)
        w.floats(msg.prev_model)
        _enc_cert(w, msg.prev_cert)
        w.u16(len(msg.entries))
        for e in msg.entries:
            _enc_cluster_sum(w, e)
        w.floats(msg.new_model)
    elif isinstance(msg, CertifyAck):
        w.u64(msg.round_no)
        w.text(msg.signer)
        w.blob(msg.model_hash)
        w.blob(msg.sig_share)
    elif isinstance(msg, Wasted):
        w.u64(msg.round_no)
    else:
        raise TypeError(f"unknown message type {type(msg)!r}")
    return w.getvalue()


def decode_message(data: bytes):
    r = _Reader(data)
    version = r.u8()
    if version != WIRE_VERSION:
        raise ValueError(f"unsupported wire version {version}")
    tag = r.u8()
    if tag == 1:
        msg = Train(round_no=r.u64(), model=r.floats(), cert=_dec_cert(r))
    elif tag == 2:
        round_no = r.u64()
        client_id = r.text()
        masked = r.fvec()
        masked_sig = r.blob()
        ping_sig = r.blob()
        envelopes = tuple((r.text(), _dec_box(r)) for _ in range(r.u16()))
        grad_commit = r.commits()
        coeff_commits = tuple(r.commits() for _ in range(r.u16()))
        msg = Update(
            round_no=round_no,
            client_id=client_id,
            masked=masked,
            masked_sig=masked_sig,
            ping_sig=ping_sig,
            envelopes=envelopes,
            grad_commit=grad_commit,
            coeff_commits=coeff_commits,
        )
    elif tag == 3:
        msg = Ping(round_no=r.u64(), client_id=r.text(), sig=r.blob())
    elif tag == 4:
        round_no = r.u64()
        entries = tuple((r.text(), r.blob()) for _ in range(r.u32()))
        msg = Unification(round_no=round_no, entries=entries)
    elif tag == 5:
        round_no = r.u64()
        coordinator = r.text()
        included = tuple(r.text() for _ in range(r.u32()))
        envelopes = tuple((r.text(), _dec_box(r)) for _ in range(r.u32()))
        msg = SumShares(
            round_no=round_no,
            coordinator=coordinator,
            included=included,
            envelopes=envelopes,
        )
    elif tag == 6:
        round_no = r.u64()
        coordinator = r.text()
        owner = r.u16()
        values = r.fvec()
        blinds = r.fvec()
        grad_commit_sum = r.commits()
        sig_share = r.blob()
        msg = SumSharesReply(
            round_no=round_no,
            coordinator=coordinator,
            summed_share=ShareVector(owner=owner, values=values, blinds=blinds),
            grad_commit_sum=grad_commit_sum,
            sig_share=sig_share,
        )
    elif tag == 7:
        msg = _dec_cluster_sum(r)
    elif tag == 8:
        round_no = r.u64()
        prev_model = r.floats()
        prev_cert = _dec_cert(r)
        entries = tuple(_dec_cluster_sum(r) for _ in range(r.u16()))
        new_model = r.floats()
        msg = CertifyRequest(
            round_no=round_no,
            prev_model=prev_model,
            prev_cert=prev_cert,
            entries=entries,
            new_model=new_model,
        )
    elif tag == 9:
        msg = CertifyAck(
            round_no=r.u64(), signer=r.text(), model_hash=r.blob(), sig_share=r.blob()
        )
    elif tag == 10:
        msg = Wasted(round_no=r.u64())
    else:
        raise ValueError(f"unknown message tag {tag}")
    if not r.done():
        raise ValueError("trailing bytes in message")
    return msg
