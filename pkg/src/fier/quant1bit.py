"""Group-wise 1-bit round-to-nearest key quantization.

Each channel is cut into runs of ``g`` consecutive tokens. A run with values
in ``[lo, hi]`` is represented by a zero ``z = (hi + lo) / 2``, a scale
``s = (hi - lo) / 2`` and one sign bit per value, so a value dequantizes to
``z + s`` or ``z - s``. Scores against a query are computed from the packed
bits and per-group parameters without rebuilding the dequantized matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .kvcore import DimensionError, as_keys, as_query

MAGIC = b"FIER"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")
HEADER_SIZE = _HEADER.size

# byte value -> its 8 bits, most significant first (channel 8j is the MSB of byte j)
_BYTE_BITS = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).astype(np.float64)


class FormatError(ValueError):
    """Malformed or non-canonical serialized index."""


def n_groups(l: int, g: int) -> int:
    return -(-l // g)


def _to_half(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        h = x.astype(np.float16)
    if not np.all(np.isfinite(h)):
        raise OverflowError("group parameter outside the float16 range")
    return h.astype(np.float64)


@dataclass(frozen=True, eq=False)
class PackedKeys:
    """Bit-packed 1-bit key codes plus per-group (scale, zero) pairs.

    ``bits`` is ``(l, ceil(d/8))`` uint8, row-major, bit set <=> code +1.
    ``scales`` and ``zeros`` are ``(n_groups, d)``: row ``G`` holds the
    parameters of tokens ``G*g .. G*g+g-1`` for every channel.
    """

    bits: np.ndarray
    scales: np.ndarray
    zeros: np.ndarray
    l: int
    d: int
    g: int

    @property
    def n_groups(self) -> int:
        return n_groups(self.l, self.g)

    def codes(self) -> np.ndarray:
        """Codes in {-1, +1} as an ``(l, d)`` int8 matrix."""
        b = np.unpackbits(self.bits, axis=1, count=self.d)
        return (2 * b.astype(np.int8) - 1)

    def group_of_token(self) -> np.ndarray:
        return np.arange(self.l) // self.g

    def estimation_nbytes(self) -> int:
        """Bytes read to score one query: the bit plane plus the 16-bit parameter table."""
        return self.l * self.bits.shape[1] + self.n_groups * self.d * 4

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, VERSION, self.l, self.d, self.g)
        params = np.empty((self.d, self.n_groups, 2), dtype="<f2")
        with np.errstate(over="ignore"):
            params[:, :, 0] = self.scales.T
            params[:, :, 1] = self.zeros.T
        if not np.all(np.isfinite(params)):
            raise OverflowError("group parameter outside the float16 range")
        return header + params.tobytes() + np.ascontiguousarray(self.bits).tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "PackedKeys":
        if len(buf) < HEADER_SIZE:
            raise FormatError("header truncated")
        magic, version, l, d, g = _HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        if l < 1 or d < 1 or g < 1:
            raise FormatError(f"invalid dims l={l} d={d} g={g}")
        ng = n_groups(l, g)
        nb = -(-d // 8)
        n_params = d * ng * 4
        expected = HEADER_SIZE + n_params + l * nb
        if len(buf) != expected:
            raise FormatError(f"payload length mismatch: expected {expected} bytes, got {len(buf)}")
        params = np.frombuffer(buf, dtype="<f2", count=d * ng * 2, offset=HEADER_SIZE)
        params = params.reshape(d, ng, 2).astype(np.float64)
        bits = np.frombuffer(buf, dtype=np.uint8, offset=HEADER_SIZE + n_params).reshape(l, nb).copy()
        pk = cls(bits, params[:, :, 0].T.copy(), params[:, :, 1].T.copy(), l, d, g)
        pk.validate()
        return pk

    def validate(self) -> None:
        ng, nb = self.n_groups, -(-self.d // 8)
        if self.bits.shape != (self.l, nb) or self.scales.shape != (ng, self.d) or self.zeros.shape != (ng, self.d):
            raise FormatError("array shapes inconsistent with (l, d, g)")
        if not (np.all(np.isfinite(self.scales)) and np.all(np.isfinite(self.zeros))):
            raise FormatError("non-finite group parameter")
        if np.any(self.scales < 0):
            raise FormatError("negative group scale")
        pad = nb * 8 - self.d
        if pad and np.any(self.bits[:, -1] & ((1 << pad) - 1)):
            raise FormatError("non-zero row padding bits")
        flat = self.scales[self.group_of_token()] == 0
        if np.any(flat & (np.unpackbits(self.bits, axis=1, count=self.d) == 0)):
            raise FormatError("zero-scale group with a -1 code (non-canonical)")


def _fit_scales(zeros, scales, lo, hi):
    """Shrink scales until ``zeros +/- scales`` round inside ``[lo, hi]``.

    Steps are one ulp of the group's magnitude; ``scales = 0`` always fits
    because the zero lies inside the range.
    """
    scales = scales.copy()
    step = np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
    for _ in range(64):
        over = (zeros + scales > hi) | (zeros - scales < lo)
        if not over.any():
            return scales
        scales[over] = np.maximum(scales[over] - step[over], 0.0)
    raise ArithmeticError("could not fit group levels inside their value range")


def quantize(K, g: int, half_params: bool = False) -> PackedKeys:
    """Quantize keys to 1 bit with groups of ``g`` tokens per channel.

    ``half_params`` rounds each (scale, zero) to float16 before coding, which
    reproduces exactly what a serialized index scores. By default parameters
    stay float64 and only get rounded when written out.
    """
    K = as_keys(K)
    if g < 1:
        raise ValueError(f"group size must be >= 1, got {g}")
    l, d = K.shape
    starts = np.arange(0, l, g)
    hi = np.maximum.reduceat(K, starts, axis=0)
    lo = np.minimum.reduceat(K, starts, axis=0)
    with np.errstate(over="ignore"):
        zeros = (lo + hi) / 2
        scales = (hi - lo) / 2
    big = ~(np.isfinite(zeros) & np.isfinite(scales))
    zeros[big] = lo[big] / 2 + hi[big] / 2
    scales[big] = hi[big] / 2 - lo[big] / 2
    zeros = np.clip(zeros, lo, hi)
    flat = hi == lo
    zeros[flat] = hi[flat]
    scales[flat] = 0.0
    if half_params:
        zeros, scales = _to_half(zeros), _to_half(scales)
    else:
        scales = _fit_scales(zeros, scales, lo, hi)
    grp = np.arange(l) // g
    code_pos = (K >= zeros[grp]) | (scales[grp] == 0)
    bits = np.packbits(code_pos, axis=1)
    return PackedKeys(bits, scales, zeros, l, d, g)


def dequantize(pk: PackedKeys) -> np.ndarray:
    grp = pk.group_of_token()
    return pk.codes() * pk.scales[grp] + pk.zeros[grp]


def _scores_lut(w: np.ndarray, pk: PackedKeys) -> np.ndarray:
    # per group and byte column, a 256-entry table of sum(bit_k * w_k)
    nb = pk.bits.shape[1]
    wp = np.zeros((pk.n_groups, nb * 8))
    wp[:, : pk.d] = w
    lut = np.einsum("vk,gjk->gjv", _BYTE_BITS, wp.reshape(pk.n_groups, nb, 8))
    grp = pk.group_of_token()
    return lut[grp[:, None], np.arange(nb)[None, :], pk.bits].sum(axis=1)


def _scores_unpacked(w: np.ndarray, pk: PackedKeys) -> np.ndarray:
    ng, g = pk.n_groups, pk.g
    b = np.zeros((ng * g, pk.d), dtype=np.float64)
    b[: pk.l] = np.unpackbits(pk.bits, axis=1, count=pk.d)
    return np.einsum("ntc,nc->nt", b.reshape(ng, g, pk.d), w).reshape(-1)[: pk.l]


def approx_scores(q, pk: PackedKeys, method: str = "auto") -> np.ndarray:
    """Logits of ``q`` against the dequantized keys, from the packed form.

    Uses ``q . k~ = 2 * sum_i b_i q_i s_i + sum_i q_i (z_i - s_i)`` with
    ``b_i`` the stored bit, evaluated per token group.
    """
    q = as_query(q, pk.d)
    w = q * pk.scales
    offset = (q * (pk.zeros - pk.scales)).sum(axis=1)
    if method == "auto":
        method = "lut" if pk.g >= 32 else "unpacked"
    if method == "lut":
        acc = _scores_lut(w, pk)
    elif method == "unpacked":
        acc = _scores_unpacked(w, pk)
    else:
        raise ValueError(f"unknown scoring method {method!r}")
    return 2 * acc + offset[pk.group_of_token()]


@dataclass(frozen=True)
class LoadRatio:
    """Bits read for importance estimation over bits of the float16 key cache."""

    numerator_bits: int
    denominator_bits: int
    formula: bool = True

    @property
    def numerator_bytes(self) -> Fraction:
        return Fraction(self.numerator_bits, 8)

    @property
    def denominator_bytes(self) -> Fraction:
        return Fraction(self.denominator_bits, 8)

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.numerator_bits, self.denominator_bits)

    def __float__(self) -> float:
        return float(self.ratio)


def load_ratio_fier(l: int, g: int, d: int = 1) -> LoadRatio:
    """One code bit per entry plus two float16 parameters per group.

    Exact when ``g`` divides ``l``; otherwise the short final group is
    counted as a full parameter pair and ``formula`` is False.
    """
    if l < 1 or g < 1 or d < 1:
        raise ValueError("l, g and d must be >= 1")
    num = l * d + n_groups(l, g) * d * 2 * 16
    return LoadRatio(num, l * d * 16, formula=(l % g == 0))


def load_ratio_quest(L: int, l: int | None = None, d: int = 1) -> LoadRatio:
    """Two float16 summary vectors (max and min) per page of ``L`` tokens."""
    if L < 1:
        raise ValueError("page size must be >= 1")
    if l is None:
        return LoadRatio(2 * 16 * d, L * 16 * d)
    pages = -(-l // L)
    return LoadRatio(2 * 16 * pages * d, l * 16 * d, formula=(l % L == 0))


def printed_value_matches(exact: Fraction | float, printed: str) -> bool:
    """True if ``printed`` is ``exact`` rounded half-up to the printed number of decimals."""
    decimals = len(printed.split(".")[1]) if "." in printed else 0
    scaled = Fraction(exact) * 10**decimals
    rounded = int(scaled + Fraction(1, 2))
    return Fraction(rounded, 10**decimals) == Fraction(printed)
