"""Prime-field vectors and fixed-point encoding of real vectors.

All masked arithmetic happens in Z_q for a prime q (default the
Mersenne prime 2^61 - 1).  Real-valued updates are mapped onto the
field with a centered fixed-point codec: a real x becomes
round(x * 2^scale_bits) mod q, with negative values occupying the
upper residues.  Exact additive homomorphy then gives
decode(sum(encode(x_i))) == sum(round_q(x_i)) as long as the
accumulated magnitude stays inside the headroom budget

    max_summands * max_magnitude * 2^scale_bits < q / 2,

which the codec enforces at construction time.

The module also provides the public masking matrix: a dim x mask_dim
matrix expanded deterministically from a 32-byte seed through an
extendable-output hash, so every party recomputes identical entries
and the matrix itself is never transmitted or stored.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

__all__ = [
    "DEFAULT_PRIME",
    "CodecRangeError",
    "FieldVec",
    "FixedPointCodec",
    "PublicMatrix",
    "f_add",
    "f_sub",
    "f_mul",
    "f_neg",
    "f_inv",
    "random_field_vec",
    "vec_sum",
]

DEFAULT_PRIME = (1 << 61) - 1


class CodecRangeError(ValueError):
    """Raised when a value falls outside the representable range."""


# ---- scalar field helpers ----


def f_add(a: int, b: int, q: int = DEFAULT_PRIME) -> int:
    return (a + b) % q


def f_sub(a: int, b: int, q: int = DEFAULT_PRIME) -> int:
    return (a - b) % q


def f_mul(a: int, b: int, q: int = DEFAULT_PRIME) -> int:
    return (a * b) % q


def f_neg(a: int, q: int = DEFAULT_PRIME) -> int:
    return (-a) % q


def f_inv(a: int, q: int = DEFAULT_PRIME) -> int:
    """Multiplicative inverse via Fermat's little theorem."""
    if a % q == 0:
        raise ZeroDivisionError("no inverse for 0")
    return pow(a, q - 2, q)


# ---- field vectors ----


class FieldVec:
    """Immutable vector of residues mod q backed by a uint64 array.

    Componentwise add/sub stay in uint64 because q < 2^61 keeps every
    intermediate below 2^62.
    """

    __slots__ = ("_data", "prime")

    def __init__(self, values: Iterable[int], prime: int = DEFAULT_PRIME):
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values)
        arr = arr.astype(np.uint64)
        if arr.size and int(arr.max()) >= prime:
            raise ValueError("residue out of range for the field prime")
        arr.setflags(write=False)
        self._data = arr
        self.prime = prime

    @classmethod
    def _raw(cls, arr: np.ndarray, prime: int) -> "FieldVec":
        v = cls.__new__(cls)
        arr.setflags(write=False)
        v._data = arr
        v.prime = prime
        return v

    @classmethod
    def zeros(cls, n: int, prime: int = DEFAULT_PRIME) -> "FieldVec":
        return cls._raw(np.zeros(n, dtype=np.uint64), prime)

    def __len__(self) -> int:
        return self._data.size

    def __iter__(self):
        return iter(int(x) for x in self._data)

    def __getitem__(self, i: int) -> int:
        return int(self._data[i])

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, FieldVec)
            and self.prime == other.prime
            and self._data.shape == other._data.shape
            and bool(np.all(self._data == other._data))
        )

    def __hash__(self) -> int:
        return hash((self.prime, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"FieldVec({self._data.tolist()!r})"

    def _check_mate(self, other: "FieldVec") -> None:
        if self.prime != other.prime:
            raise ValueError("mismatched field primes")
        if self._data.size != other._data.size:
            raise ValueError("mismatched vector lengths")

    def add(self, other: "FieldVec") -> "FieldVec":
        self._check_mate(other)
        q = np.uint64(self.prime)
        s = self._data + other._data
        s = np.where(s >= q, s - q, s)
        return FieldVec._raw(s.astype(np.uint64), self.prime)

    def sub(self, other: "FieldVec") -> "FieldVec":
        self._check_mate(other)
        q = np.uint64(self.prime)
        s = self._data + (q - other._data)
        s = np.where(s >= q, s - q, s)
        return FieldVec._raw(s.astype(np.uint64), self.prime)

    def neg(self) -> "FieldVec":
        q = np.uint64(self.prime)
        s = np.where(self._data == 0, self._data, q - self._data)
        return FieldVec._raw(s.astype(np.uint64), self.prime)

    def to_ints(self) -> List[int]:
        return [int(x) for x in self._data]

    # ---- serialization: u32 length prefix, 8-byte little-endian residues ----

    def to_bytes(self) -> bytes:
        return len(self._data).to_bytes(4, "little") + self._data.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, prime: int = DEFAULT_PRIME) -> "FieldVec":
        if len(data) < 4:
            raise ValueError("truncated field vector")
        n = int.from_bytes(data[:4], "little")
        body = data[4 : 4 + 8 * n]
        if len(body) != 8 * n:
            raise ValueError("truncated field vector body")
        arr = np.frombuffer(body, dtype="<u8").astype(np.uint64)
        if arr.size and int(arr.max()) >= prime:
            raise ValueError("residue out of range for the field prime")
        return cls._raw(arr, prime)


def vec_sum(vecs: Sequence[FieldVec]) -> FieldVec:
    """Componentwise sum mod q of one or more equal-length vectors."""
    if not vecs:
        raise ValueError("empty vector sum")
    acc = vecs[0]
    for v in vecs[1:]:
        acc = acc.add(v)
    return acc


def random_field_vec(n: int, rng: np.random.Generator, prime: int = DEFAULT_PRIME) -> FieldVec:
    """Uniform vector over [0, q)^n via rejection sampling of 64-bit words."""
    limit = (1 << 64) - ((1 << 64) % prime)
    out = np.empty(n, dtype=np.uint64)
    filled = 0
    while filled < n:
        draw = rng.integers(0, 1 << 64, size=n - filled, dtype=np.uint64)
        ok = draw < np.uint64(limit)
        kept = draw[ok] % np.uint64(prime)
        out[filled : filled + kept.size] = kept
        filled += kept.size
    return FieldVec._raw(out, prime)


# ---- fixed-point codec ----


@dataclass(frozen=True)
class FixedPointCodec:
    """Centered fixed-point map between reals and field residues.

    scale_bits      fractional resolution (values are multiples of 2^-scale_bits)
    max_magnitude   largest |x| a single encoded value may take
    max_summands    how many encodings may be accumulated before decode
    """

    scale_bits: int = 16
    max_magnitude: float = 64.0
    max_summands: int = 1 << 16
    prime: int = DEFAULT_PRIME

    def __post_init__(self):
        if self.scale_bits <= 0:
            raise ValueError("scale_bits must be positive")
        if self.max_magnitude <= 0 or self.max_summands < 1:
            raise ValueError("max_magnitude and max_summands must be positive")
        headroom = self.max_summands * self.max_magnitude * (1 << self.scale_bits)
        if not headroom < self.prime / 2:
            raise ValueError(
                "codec headroom violated: max_summands * max_magnitude * 2^scale_bits "
                f"= {headroom:.4g} must stay below prime/2 = {self.prime / 2:.4g}"
            )

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    @property
    def resolution(self) -> float:
        return 1.0 / self.scale

    def encode(self, values: Sequence[float] | np.ndarray) -> FieldVec:
        """Round reals to the fixed-point grid and map into [0, q)."""
        x = np.asarray(values, dtype=np.float64)
        scaled = np.rint(x * self.scale)
        bound = self.max_magnitude * self.scale
        if np.any(np.abs(scaled) > bound) or not np.all(np.isfinite(scaled)):
            raise CodecRangeError(
                f"encode input exceeds max_magnitude {self.max_magnitude}"
            )
        ints = scaled.astype(np.int64)
        residues = np.where(ints < 0, ints + self.prime, ints).astype(np.uint64)
        return FieldVec._raw(residues, self.prime)

    def decode(self, vec: FieldVec) -> np.ndarray:
        """Map residues back to reals; accumulated sums stay exact."""
        if vec.prime != self.prime:
            raise ValueError("vector prime does not match codec prime")
        data = vec._data.astype(np.int64)
        half = (self.prime - 1) // 2
        centered = np.where(data > half, data - self.prime, data).astype(np.float64)
        bound = self.max_summands * self.max_magnitude * self.scale
        if np.any(np.abs(centered) > bound):
            raise CodecRangeError(
                "decode input exceeds accumulated headroom; "
                "check max_summands against the number of summed encodings"
            )
        return centered / self.scale


# ---- public masking matrix ----


class PublicMatrix:
    """dim x mask_dim matrix over Z_q expanded from a public seed.

    Entries come from an extendable-output hash of the seed, with
    rejection sampling so each entry is uniform in [0, q).  The matrix
    is recomputed from its seed wherever needed, never shipped.
    """

    __slots__ = ("rows", "prime", "seed", "n_rows", "n_cols")

    def __init__(self, rows: Sequence[Sequence[int]], prime: int, seed: bytes = b""):
        self.rows = tuple(tuple(int(x) % prime for x in r) for r in rows)
        self.prime = prime
        self.seed = seed
        self.n_rows = len(self.rows)
        self.n_cols = len(self.rows[0]) if self.rows else 0
        if any(len(r) != self.n_cols for r in self.rows):
            raise ValueError("ragged matrix")

    @classmethod
    def expand(
        cls,
        seed: bytes,
        n_rows: int,
        n_cols: int,
        prime: int = DEFAULT_PRIME,
    ) -> "PublicMatrix":
        if len(seed) != 32:
            raise ValueError("matrix seed must be 32 bytes")
        if n_cols > n_rows:
            raise ValueError("mask_dim must not exceed dim (n_cols <= n_rows)")
        shake = hashlib.shake_128(b"public-matrix" + seed)
        limit = (1 << 64) - ((1 << 64) % prime)
        needed = n_rows * n_cols
        entries: List[int] = []
        # Draw in blocks; rejection keeps entries exactly uniform in [0, q).
        block = max(needed * 2, 64)
        offset = 0
        while len(entries) < needed:
            offset += block * 8
            stream = shake.digest(offset)[offset - block * 8 :]
            for i in range(block):
                word = int.from_bytes(stream[i * 8 : i * 8 + 8], "little")
                if word < limit:
                    entries.append(word % prime)
                    if len(entries) == needed:
                        break
        rows = [entries[r * n_cols : (r + 1) * n_cols] for r in range(n_rows)]
        return cls(rows, prime, seed=seed)

    def mat_vec(self, vec: FieldVec) -> FieldVec:
        """Matrix-vector product over Z_q (exact integer arithmetic)."""
        if vec.prime != self.prime:
            raise ValueError("mismatched field primes")
        if len(vec) != self.n_cols:
            raise ValueError("vector length does not match matrix columns")
        s = vec.to_ints()
        q = self.prime
        out = [sum(a * b for a, b in zip(row, s)) % q for row in self.rows]
        return FieldVec(out, q)


_MATRIX_CACHE: dict = {}


def expand_public_matrix(
    seed: bytes, n_rows: int, n_cols: int, prime: int = DEFAULT_PRIME
) -> PublicMatrix:
    """Cached wrapper around PublicMatrix.expand (same seed, same matrix)."""
    key = (seed, n_rows, n_cols, prime)
    mat = _MATRIX_CACHE.get(key)
    if mat is None:
        mat = PublicMatrix.expand(seed, n_rows, n_cols, prime)
        _MATRIX_CACHE[key] = mat
    return mat
