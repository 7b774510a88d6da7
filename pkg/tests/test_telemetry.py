import json
import queue
import socket
import threading
import time

import pytest

from seizban.protocol import LineDecoder, ProtocolError, decode_line, encode_message
from seizban.telemetry import (
    TcpTelemetryServer,
    TelemetryHub,
    TelemetrySession,
    replay_messages,
    replay_report,
)


class TestProtocol:
    def test_encode_decode_round_trip(self):
        msg = {"type": "telemetry", "t_us": 1000, "fused_p": 0.5}
        assert decode_line(encode_message(msg).rstrip(b"\n")) == msg

    def test_line_decoder_handles_partial_and_batched_input(self):
        dec = LineDecoder()
        a = encode_message({"type": "alert", "alert_id": 1})
        b = encode_message({"type": "stim", "alert_id": 1})
        out = list(dec.feed(a[:5]))
        assert out == []
        out = list(dec.feed(a[5:] + b))
        assert [m["type"] for m in out] == ["alert", "stim"]

    def test_missing_type_rejected(self):
        with pytest.raises(ProtocolError):
            encode_message({"x": 1})
        with pytest.raises(ProtocolError):
            decode_line(b'{"x": 1}')

    def test_bad_json_rejected(self):
        with pytest.raises(ProtocolError, match="bad message"):
            decode_line(b"{nope")


class TestSessionBuffer:
    def test_slow_consumer_drops_oldest_telemetry_never_alerts(self):
        s = TelemetrySession("s1", max_telemetry=5)
        s.put({"type": "alert", "alert_id": 1})
        for i in range(50):
            s.put({"type": "telemetry", "id": i})
        s.put({"type": "alert", "alert_id": 2})
        got = []
        while True:
            m = s.pop(timeout=0.01)
            if m is None:
                break
            got.append(m)
        alerts = [m for m in got if m["type"] == "alert"]
        telemetry = [m for m in got if m["type"] == "telemetry"]
        assert [a["alert_id"] for a in alerts] == [1, 2]
        assert len(telemetry) == 5
        assert [t["id"] for t in telemetry] == [45, 46, 47, 48, 49]

    def test_soak_ten_thousand_messages_bounded(self):
        s = TelemetrySession("s1", max_telemetry=100)
        for i in range(10_000):
            s.put({"type": "telemetry", "id": i})
            if i % 1000 == 0:
                s.put({"type": "alert", "alert_id": i})
        with s._lock:
            n = len(s._items)
        assert n == 110  # 100 telemetry + 10 alerts


class TestHub:
    def test_broadcast_reaches_all_sessions(self):
        hub = TelemetryHub()
        s1, s2 = hub.register(), hub.register()
        hub.broadcast({"type": "telemetry", "id": 1})
        assert s1.pop(0.1)["id"] == 1
        assert s2.pop(0.1)["id"] == 1

    def test_snapshot_delivered_on_register(self):
        hub = TelemetryHub()
        hub.snapshot_provider = lambda: {"type": "snapshot", "t_us": 5}
        s = hub.register()
        assert s.pop(0.1)["type"] == "snapshot"

    def test_commands_rejected_without_live_sim(self):
        hub = TelemetryHub()
        s = hub.register()
        hub.submit_command(s.id, {"type": "command", "command_id": "c1",
                                  "kind": "ack_alert", "params": {}})
        m = s.pop(0.1)
        assert m["type"] == "reject"
        assert m["command_id"] == "c1"

    def test_commands_forwarded_to_sink_in_order(self):
        hub = TelemetryHub()
        hub.command_sink = queue.Queue()
        s = hub.register()
        for i in range(3):
            hub.submit_command(s.id, {"type": "command", "command_id": str(i)})
        got = [hub.command_sink.get_nowait() for _ in range(3)]
        assert [c["command_id"] for _, c in got] == ["0", "1", "2"]
        assert all(sid == s.id for sid, _ in got)


def _read_messages(sock, n, timeout=5.0):
    dec = LineDecoder()
    out = []
    sock.settimeout(timeout)
    deadline = time.monotonic() + timeout
    while len(out) < n and time.monotonic() < deadline:
        try:
            data = sock.recv(4096)
        except socket.timeout:
            break
        if not data:
            break
        out.extend(dec.feed(data))
    return out


class TestTcpServer:
    def test_session_snapshot_and_command_round_trip(self):
        hub = TelemetryHub()
        hub.snapshot_provider = lambda: {"type": "snapshot", "t_us": 0}
        sink = queue.Queue()
        hub.command_sink = sink
        server = TcpTelemetryServer(hub, port=0)
        server.start()
        try:
            with socket.create_connection(("127.0.0.1", server.port), timeout=5) as c:
                msgs = _read_messages(c, 1)
                assert msgs and msgs[0]["type"] == "snapshot"
                c.sendall(encode_message({"type": "command", "command_id": "k9",
                                          "kind": "ack_alert", "params": {}}))
                session_id, cmd = sink.get(timeout=5)
                assert cmd["command_id"] == "k9"
                hub.send_to(session_id, {"type": "ack", "command_id": "k9",
                                         "applied_at_us": 123})
                msgs = _read_messages(c, 1)
                assert msgs[0] == {"type": "ack", "command_id": "k9",
                                   "applied_at_us": 123}
        finally:
            server.stop()

    def test_broadcast_to_two_clients(self):
        hub = TelemetryHub()
        server = TcpTelemetryServer(hub, port=0)
        server.start()
        try:
            with socket.create_connection(("127.0.0.1", server.port), timeout=5) as a, \
                 socket.create_connection(("127.0.0.1", server.port), timeout=5) as b:
                deadline = time.monotonic() + 5
                while hub.session_count < 2 and time.monotonic() < deadline:
                    time.sleep(0.01)
                hub.broadcast({"type": "telemetry", "id": 7})
                for c in (a, b):
                    msgs = _read_messages(c, 1)
                    assert msgs and msgs[0]["id"] == 7
        finally:
            server.stop()


class TestReplay:
    def sample_report(self):
        return {
            "windows": [
                {"decided_at_us": 4_100_000, "start_us": 0, "p_eeg": 0.1,
                 "p_ecg": 0.2, "fused_p": 0.15, "positive": False,
                 "degraded": False, "skipped": False},
                {"decided_at_us": 6_100_000, "start_us": 2_000_000, "p_eeg": 0.9,
                 "p_ecg": 0.8, "fused_p": 0.85, "positive": True,
                 "degraded": False, "skipped": False},
            ],
            "alerts": [{"t_us": 6_100_000, "alert_id": 1, "fused_p": 0.85,
                        "windows_us": [2_000_000], "action": "notify"}],
            "stim_events": [],
        }

    def test_replay_messages_ordered_with_ids(self):
        msgs = replay_messages(self.sample_report())
        assert [m["type"] for m in msgs] == ["telemetry", "telemetry", "alert"]
        assert [m["id"] for m in msgs] == [1, 2, 3]

    def test_replay_broadcasts_at_speed(self):
        hub = TelemetryHub()
        s = hub.register()
        t0 = time.monotonic()
        sent = replay_report(self.sample_report(), hub, speed=10_000.0)
        assert sent == 3
        assert time.monotonic() - t0 < 2.0
        got = [s.pop(0.1) for _ in range(3)]
        assert [m["type"] for m in got] == ["telemetry", "telemetry", "alert"]
