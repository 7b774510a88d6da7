"""Telemetry/command wire protocol: newline-delimited JSON messages over a
persistent bidirectional byte stream.

Gateway -> console message types:
    snapshot   connection-time state: fusion rule, stim params, active alerts,
               battery levels
    telemetry  one row per decided window: per-node p, fused p, degraded /
               skipped flags, battery levels
    alert      alert id, time, fused p, contributing windows, action
    stim       stimulation start/end, params, triggering alert id
    ack        command accepted: echoes command_id, applied_at_us
    reject     command refused: echoes command_id, reason

Console -> gateway:
    command    {"type": "command", "command_id": str, "kind":
               "set_stim_params" | "set_fusion_rule" | "ack_alert",
               "params": {...}}

Every message is one JSON object on one line; the same framing rides raw TCP
and WebSocket text frames unchanged.
"""
from __future__ import annotations

import json
from typing import Iterator

GATEWAY_MESSAGE_TYPES = ("snapshot", "telemetry", "alert", "stim", "ack", "reject")
CLIENT_MESSAGE_TYPES = ("command",)


class ProtocolError(ValueError):
    pass


def encode_message(msg: dict) -> bytes:
    if "type" not in msg:
        raise ProtocolError("message missing type")
    return (json.dumps(msg, separators=(",", ":"), sort_keys=True) + "\n").encode("utf-8")


def decode_line(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad message: {exc}") from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError("message must be a JSON object with a type")
    return msg


class LineDecoder:
    """Accumulates raw bytes and yields complete newline-terminated messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> Iterator[dict]:
        self._buf.extend(data)
        while True:
            idx = self._buf.find(b"\n")
            if idx < 0:
                return
            line = bytes(self._buf[:idx])
            del self._buf[: idx + 1]
            if line.strip():
                yield decode_line(line)
