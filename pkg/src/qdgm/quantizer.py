"""Stochastic rounding quantizer with a growing range and a bit-exact codec.

A scalar x in [lower, upper] is rounded to one of the two bracketing
endpoints of a uniform grid with 2^b - 1 bins: the upper endpoint is chosen
with probability (x - tau)/delta, the lower with the complement. This makes
the quantizer unbiased, keeps every draw within one bin width of x, and
bounds the conditional variance by delta^2/4.

For the distributed iteration the interval at round k is
[-range(k), range(k)] with range(k) = C * sum_{t<k} alpha_t. Both sides of
a link derive the identical interval from shared configuration, so a
message needs only the b-bit endpoint indices and no side information.
Index 0 is round 0, where every iterate is exactly zero and the range is
empty; its message is all-zero indices with an empty payload.

Wire format: the d endpoint indices are packed MSB-first in coordinate
order and zero-padded to a whole number of bytes, ceil(d*b/8) in total.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GradientBoundError, QuantizationRangeError
from .schedules import StepSchedule

# relative width of the band around the interval ends that is clamped
# rather than rejected; beyond it an input is a genuine model violation
CLAMP_BAND = 1e-9


@dataclass(frozen=True)
class QuantizerConfig:
    """Validated (bits per dimension, vector dimension) pair."""

    bits: int
    dims: int

    def __post_init__(self):
        if not (1 <= self.bits <= 32):
            raise ValueError(f"bits must be in [1, 32], got {self.bits}")
        if self.dims < 1:
            raise ValueError("dims must be positive")

    @property
    def bin_count(self) -> int:
        return (1 << self.bits) - 1

    @property
    def payload_nbytes(self) -> int:
        return (self.dims * self.bits + 7) // 8


@dataclass
class QuantizerSchedule:
    """Deterministic per-round interval shared by encoder and decoder.

    range_at(k) = gradient_bound * sum_{t<k} alpha_t, nondecreasing with
    range_at(0) = 0; delta_at(k) is the per-coordinate bin width
    2 * range_at(k) / (2^bits - 1).
    """

    gradient_bound: float
    steps: StepSchedule
    config: QuantizerConfig

    def __post_init__(self):
        if self.gradient_bound <= 0.0:
            raise ValueError("gradient bound must be positive")

    @property
    def bits(self) -> int:
        return self.config.bits

    @property
    def dims(self) -> int:
        return self.config.dims

    def range_at(self, k: int) -> float:
        return self.gradient_bound * self.steps.alpha_sum(k)

    def delta_at(self, k: int) -> float:
        return 2.0 * self.range_at(k) / self.config.bin_count


@dataclass(frozen=True)
class QuantizedMessage:
    """One agent's transmission for one round."""

    iteration: int
    indices: np.ndarray
    payload: bytes

    def __post_init__(self):
        self.indices.setflags(write=False)


def delta_k(schedule: QuantizerSchedule, k: int) -> float:
    """Scalar bin width at round k; the Euclidean vector error is bounded by
    sqrt(d) * delta_k per draw (the coarser d * delta_k bound is what the
    convergence constants use)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return schedule.delta_at(k)


def _stochastic_round(values: np.ndarray, lower: float, delta: float,
                      nbins: int, uniforms: np.ndarray) -> np.ndarray:
    """Vectorized endpoint selection; returns int64 indices in {0..nbins}.

    values must already be clamped into [lower, lower + nbins*delta].
    """
    base = np.floor((values - lower) / delta)
    np.clip(base, 0, nbins - 1, out=base)
    frac = np.clip((values - (lower + base * delta)) / delta, 0.0, 1.0)
    idx = base + (uniforms < frac)
    # one-ulp guard: at bin boundaries the floor/reconstruction pair can land
    # the chosen endpoint just over one bin width away; flip to the other
    # bracketing endpoint so the support bound holds exactly on every draw
    bad = np.abs((lower + idx * delta) - values) > delta
    if np.any(bad):
        idx = np.where(bad, 2.0 * base + 1.0 - idx, idx)
    return idx.astype(np.int64)


def quantize_scalar(x: float, lower: float, upper: float, bits: int,
                    rng: np.random.Generator) -> tuple[int, float]:
    """Stochastically round x onto the 2^bits endpoint grid of [lower, upper].

    Returns (endpoint index, reconstructed value lower + index * delta).
    Inputs inside the clamp band around the interval are snapped to it;
    farther out raises QuantizationRangeError.
    """
    if not lower < upper:
        raise ValueError("need lower < upper")
    span = upper - lower
    eps = CLAMP_BAND * span
    if x < lower - eps or x > upper + eps:
        raise QuantizationRangeError(
            f"out of range: {x} not in [{lower}, {upper}]")
    x = min(max(x, lower), upper)
    nbins = (1 << bits) - 1
    delta = span / nbins
    idx = _stochastic_round(np.asarray([x]), lower, delta, nbins, rng.random(1))
    m = int(idx[0])
    return m, lower + m * delta


def quantize_matrix(x: np.ndarray, schedule: QuantizerSchedule, k: int,
                    rng: np.random.Generator) -> tuple[QuantizedMessage, ...]:
    """Quantize one row vector per agent over the round-k interval.

    Randomness is drawn as one uniform per (row, coordinate) in row-major
    order from ``rng``, so results do not depend on any per-agent call
    order. Raises GradientBoundError when a coordinate falls outside the
    round's range beyond the clamp band.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m, d = x.shape
    if d != schedule.dims:
        raise ValueError(f"expected dimension {schedule.dims}, got {d}")
    if k == 0:
        zeros = np.zeros(d, dtype=np.int64)
        return tuple(QuantizedMessage(0, zeros.copy(), b"") for _ in range(m))
    rangek = schedule.range_at(k)
    eps = CLAMP_BAND * 2.0 * rangek
    worst = float(np.abs(x).max())
    if worst > rangek + eps:
        row, col = np.unravel_index(np.argmax(np.abs(x)), x.shape)
        raise GradientBoundError(
            f"gradient-bound violation: agent {row} coordinate {col} is "
            f"{x[row, col]} at round {k}, outside quantization range "
            f"+-{rangek} (configured bound C too small)")
    clamped = np.clip(x, -rangek, rangek)
    delta = schedule.delta_at(k)
    nbins = schedule.config.bin_count
    idx = _stochastic_round(clamped, -rangek, delta, nbins, rng.random((m, d)))
    packed = pack_index_rows(idx, schedule.bits)
    return tuple(
        QuantizedMessage(k, idx[i], packed[i]) for i in range(m))


def quantize_vector(x: np.ndarray, schedule: QuantizerSchedule, k: int,
                    rng: np.random.Generator) -> QuantizedMessage:
    """Single-vector convenience wrapper around :func:`quantize_matrix`."""
    return quantize_matrix(np.asarray(x)[None, :], schedule, k, rng)[0]


def decode(message: QuantizedMessage, schedule: QuantizerSchedule) -> np.ndarray:
    """Reconstruct the endpoint vector -range(k) + m * delta_k from payload bytes.

    Bit-exact inverse of the encoder: both sides evaluate the identical
    reconstruction expression on the shared schedule.
    """
    k = message.iteration
    d = schedule.dims
    if k == 0:
        if message.payload != b"":
            raise ValueError("payload length mismatch")
        return np.zeros(d)
    idx = unpack_indices(message.payload, schedule.bits, d)
    rangek = schedule.range_at(k)
    return -rangek + idx * schedule.delta_at(k)


def decode_matrix(messages, schedule: QuantizerSchedule) -> np.ndarray:
    """Decode a round's messages (all with equal iteration) into one matrix."""
    k = messages[0].iteration
    if any(msg.iteration != k for msg in messages):
        raise ValueError("messages from mixed rounds")
    d = schedule.dims
    if k == 0:
        return np.zeros((len(messages), d))
    blob = b"".join(msg.payload for msg in messages)
    per = schedule.config.payload_nbytes
    if len(blob) != per * len(messages):
        raise ValueError("payload length mismatch")
    bits = schedule.bits
    raw = np.unpackbits(np.frombuffer(blob, np.uint8).reshape(len(messages), per),
                        axis=1)[:, : d * bits]
    weights = (np.uint64(1) << np.arange(bits - 1, -1, -1, dtype=np.uint64))
    idx = raw.reshape(len(messages), d, bits).astype(np.uint64) @ weights
    rangek = schedule.range_at(k)
    return -rangek + idx.astype(np.float64) * schedule.delta_at(k)


def pack_indices(indices, bits: int) -> bytes:
    """Pack endpoint indices MSB-first into ceil(d*bits/8) bytes."""
    return pack_index_rows(np.atleast_2d(np.asarray(indices)), bits)[0]


def pack_index_rows(indices: np.ndarray, bits: int) -> list[bytes]:
    """Row-wise packing; each row is padded independently to a byte boundary."""
    arr = np.asarray(indices)
    if arr.min() < 0 or arr.max() > (1 << bits) - 1:
        raise ValueError(f"index outside [0, 2^{bits} - 1]")
    arr = arr.astype(np.uint64)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint64)
    bitmat = ((arr[:, :, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    rows, d = arr.shape
    packed = np.packbits(bitmat.reshape(rows, d * bits), axis=1)
    return [row.tobytes() for row in packed]


def unpack_indices(payload: bytes, bits: int, dims: int) -> np.ndarray:
    """Inverse of :func:`pack_indices`; validates the payload length."""
    expected = (dims * bits + 7) // 8
    if len(payload) != expected:
        raise ValueError(
            f"payload length mismatch: got {len(payload)} bytes, "
            f"expected {expected}")
    raw = np.unpackbits(np.frombuffer(payload, np.uint8), count=dims * bits)
    weights = (np.uint64(1) << np.arange(bits - 1, -1, -1, dtype=np.uint64))
    return raw.reshape(dims, bits).astype(np.uint64) @ weights
