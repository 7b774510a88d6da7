"""Ultrasonic intra-body link: frame codec, channel model, TDMA MAC, energy.

Wire layout (big-endian multi-byte fields, CRC covers header + payload):

    offset  size  field
    0       1     src node id
    1       1     dst node id
    2       2     seq (u16 BE)
    4       1     kind (1=verdict, 2=command, 3=ack)
    5       1     payload length L (<= 64)
    6       L     payload
    6+L     2     CRC-16/CCITT-FALSE over bytes [0, 6+L)

Maximum encoded size is 6 + 64 + 2 = 72 bytes.  The CRC is treated as a
perfect corruption detector at the MAC interface; the per-bit flip machinery
below still models the raw channel for statistics.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

HEADER_LEN = 6
CRC_LEN = 2
MAX_PAYLOAD = 64
MIN_FRAME = HEADER_LEN + CRC_LEN
MAX_FRAME = HEADER_LEN + MAX_PAYLOAD + CRC_LEN

KIND_VERDICT = 1
KIND_COMMAND = 2
KIND_ACK = 3
_FRAME_KINDS = {KIND_VERDICT: "verdict", KIND_COMMAND: "command", KIND_ACK: "ack"}


class FrameError(ValueError):
    """Base class for decode failures."""


class TruncatedFrameError(FrameError):
    """Buffer is too short to hold a frame."""


class CorruptFrameError(FrameError):
    """CRC mismatch or structurally impossible frame."""


# -- CRC-16/CCITT-FALSE ------------------------------------------------------
# poly 0x1021, init 0xFFFF, no reflection, xorout 0x0000.

def _build_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _build_crc_table()


def crc16_ccitt_false(data: bytes) -> int:
    crc = 0xFFFF
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ b) & 0xFF]
    return crc


# -- frame codec --------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    src: int
    dst: int
    seq: int
    kind: int
    payload: bytes = b""

    def __post_init__(self):
        if not (0 <= self.src <= 0xFF and 0 <= self.dst <= 0xFF):
            raise ValueError("node id out of byte range")
        if not 0 <= self.seq <= 0xFFFF:
            raise ValueError("seq out of u16 range")
        if self.kind not in _FRAME_KINDS:
            raise ValueError(f"unknown frame kind {self.kind}")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload {len(self.payload)} exceeds {MAX_PAYLOAD} bytes")

    @property
    def kind_name(self) -> str:
        return _FRAME_KINDS[self.kind]


def encode_frame(f: Frame) -> bytes:
    body = bytes(
        [f.src, f.dst, (f.seq >> 8) & 0xFF, f.seq & 0xFF, f.kind, len(f.payload)]
    ) + f.payload
    crc = crc16_ccitt_false(body)
    return body + bytes([(crc >> 8) & 0xFF, crc & 0xFF])


def decode_frame(buf: bytes) -> Frame:
    """Decode and verify a frame.

    Raises TruncatedFrameError for buffers below the minimum frame size and
    CorruptFrameError for CRC mismatches or impossible field values.  The CRC
    is checked before structural fields so that any bit flip (including one
    in the length byte) surfaces as corruption.
    """
    if len(buf) < MIN_FRAME:
        raise TruncatedFrameError(f"truncated: {len(buf)} < {MIN_FRAME} bytes")
    body, crc_bytes = buf[:-CRC_LEN], buf[-CRC_LEN:]
    got = (crc_bytes[0] << 8) | crc_bytes[1]
    want = crc16_ccitt_false(body)
    if got != want:
        raise CorruptFrameError(f"corrupt: crc {got:#06x} != {want:#06x}")
    declared = body[5]
    if declared != len(body) - HEADER_LEN:
        raise CorruptFrameError("corrupt: length field inconsistent with buffer")
    if declared > MAX_PAYLOAD:
        raise CorruptFrameError("corrupt: payload length over limit")
    kind = body[4]
    if kind not in _FRAME_KINDS:
        raise CorruptFrameError(f"corrupt: unknown kind {kind}")
    return Frame(
        src=body[0],
        dst=body[1],
        seq=(body[2] << 8) | body[3],
        kind=kind,
        payload=bytes(body[HEADER_LEN:]),
    )


# -- channel model -------------------------------------------------------------

SOUND_SPEED_TISSUE_M_S = 1540.0  # soft tissue default


@dataclass(frozen=True)
class ChannelConfig:
    distance_m: float
    sound_speed_m_s: float = SOUND_SPEED_TISSUE_M_S
    bit_rate_bps: float = 100_000.0
    bit_error_prob: float = 1e-3
    drop_prob: float = 0.0

    def __post_init__(self):
        if self.distance_m < 0:
            raise ValueError("distance must be >= 0")
        if self.sound_speed_m_s <= 0:
            raise ValueError("sound speed must be > 0")
        if self.bit_rate_bps <= 0:
            raise ValueError("bit rate must be > 0")
        if not 0.0 <= self.bit_error_prob <= 1.0:
            raise ValueError("bit error probability must be in [0,1]")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop probability must be in [0,1]")

    def propagation_us(self) -> int:
        return int(round(self.distance_m / self.sound_speed_m_s * 1e6))

    def serialization_us(self, n_bytes: int) -> int:
        return int(round(n_bytes * 8 / self.bit_rate_bps * 1e6))

    def airtime_us(self, n_bytes: int) -> int:
        return self.propagation_us() + self.serialization_us(n_bytes)


class Outcome(Enum):
    DELIVERED = "delivered"
    CORRUPTED = "corrupted"
    DROPPED = "dropped"


@dataclass(frozen=True)
class DeliveryOutcome:
    outcome: Outcome
    t_arrival_us: Optional[int] = None  # None when dropped
    data: Optional[bytes] = None        # as received (flipped bits applied)
    flipped_bits: int = 0


def flip_bits(data: bytes, p: float, rng: np.random.Generator) -> tuple[bytes, int]:
    """Flip each bit independently with probability p. Returns (bytes, count)."""
    n_bits = len(data) * 8
    if p <= 0.0 or n_bits == 0:
        return data, 0
    mask_bits = rng.random(n_bits) < p
    n = int(mask_bits.sum())
    if n == 0:
        return data, 0
    arr = np.frombuffer(data, dtype=np.uint8).copy()
    mask_bytes = np.packbits(mask_bits)
    arr ^= mask_bytes[: len(arr)]
    return arr.tobytes(), n


def transmit(
    data: bytes, ch: ChannelConfig, rng: np.random.Generator, t_send_us: int = 0
) -> DeliveryOutcome:
    """Send an encoded frame through the channel.

    Loss is an outcome, not an error: the frame is dropped outright with
    drop_prob, otherwise it arrives at t_send + distance/speed + bits/rate
    with every bit independently flipped with bit_error_prob.  One or more
    flips yield the corrupted outcome.
    """
    if rng.random() < ch.drop_prob:
        return DeliveryOutcome(Outcome.DROPPED)
    t_arr = t_send_us + ch.airtime_us(len(data))
    received, n = flip_bits(data, ch.bit_error_prob, rng)
    if n > 0:
        return DeliveryOutcome(Outcome.CORRUPTED, t_arr, received, n)
    return DeliveryOutcome(Outcome.DELIVERED, t_arr, data, 0)


# -- TDMA schedule -------------------------------------------------------------

@dataclass(frozen=True)
class TdmaSchedule:
    slot_len_us: int
    slots: tuple[str, ...]

    def __init__(self, slot_len_us: int, slots: Sequence[str]):
        if slot_len_us <= 0:
            raise ValueError("slot length must be > 0")
        if not slots:
            raise ValueError("schedule needs at least one slot")
        object.__setattr__(self, "slot_len_us", int(slot_len_us))
        object.__setattr__(self, "slots", tuple(slots))

    @property
    def cycle_us(self) -> int:
        return self.slot_len_us * len(self.slots)

    def next_slot(self, node: str, now_us: int) -> int:
        """Earliest slot start >= now owned by node."""
        owned = [i for i, n in enumerate(self.slots) if n == node]
        if not owned:
            raise ValueError(f"node {node!r} not in schedule")
        best = None
        for idx in owned:
            base = idx * self.slot_len_us
            if now_us <= base:
                cand = base
            else:
                k = -(-(now_us - base) // self.cycle_us)  # ceil div
                cand = base + k * self.cycle_us
            if best is None or cand < best:
                best = cand
        return best


# -- energy accounting ---------------------------------------------------------

@dataclass(frozen=True)
class EnergyState:
    battery_j: float
    tx_j_per_bit: float = 1e-6
    rx_j_per_bit: float = 0.5e-6
    inference_j_per_window: float = 5e-3
    idle_w: float = 1e-3

    def __post_init__(self):
        if self.battery_j < 0:
            raise ValueError("battery must be >= 0")

    @property
    def online(self) -> bool:
        return self.battery_j > 0.0


def energy_cost(e: EnergyState, op: str, amount: float = 0.0) -> float:
    """Joules for one operation: tx(bits) | rx(bits) | inference | idle(seconds)."""
    if op == "tx":
        return e.tx_j_per_bit * amount
    if op == "rx":
        return e.rx_j_per_bit * amount
    if op == "inference":
        return e.inference_j_per_window
    if op == "idle":
        return e.idle_w * amount
    if op == "stim":
        return amount  # scenario passes joules directly (J/s x duration)
    raise ValueError(f"unknown energy op {op!r}")


def debit_energy(e: EnergyState, op: str, amount: float = 0.0) -> tuple[EnergyState, float]:
    """Debit one operation; battery clamps at exactly 0 (node goes offline).

    Returns (new state, joules actually debited).
    """
    cost = energy_cost(e, op, amount)
    debited = min(cost, e.battery_j)
    return replace(e, battery_j=e.battery_j - debited), debited
