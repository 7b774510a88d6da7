"""Telemetry fan-out hub, the TCP NDJSON server, and report replay.

The hub owns per-session bounded queues: slow consumers lose their oldest
telemetry rows but never alerts, acks, or snapshots.  Inbound commands cross
into the simulation solely through the ordered mailbox, so they land at event
boundaries stamped with the simulated clock.
"""
from __future__ import annotations

import queue
import socket
import socketserver
import threading
import time
from typing import Callable, Optional

from .protocol import LineDecoder, ProtocolError, encode_message

DEFAULT_BUFFER = 1000


class TelemetrySession:
    def __init__(self, session_id: str, max_telemetry: int = DEFAULT_BUFFER):
        self.id = session_id
        self.max_telemetry = max_telemetry
        self._items: list[dict] = []
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self.closed = False

    def put(self, msg: dict) -> None:
        with self._ready:
            if self.closed:
                return
            if msg.get("type") == "telemetry":
                n_telemetry = sum(1 for m in self._items if m.get("type") == "telemetry")
                if n_telemetry >= self.max_telemetry:
                    for i, m in enumerate(self._items):
                        if m.get("type") == "telemetry":
                            del self._items[i]
                            break
            self._items.append(msg)
            self._ready.notify()

    def pop(self, timeout: Optional[float] = None) -> Optional[dict]:
        with self._ready:
            if not self._items:
                self._ready.wait(timeout)
            if self._items:
                return self._items.pop(0)
            return None

    def close(self) -> None:
        with self._ready:
            self.closed = True
            self._ready.notify_all()


class TelemetryHub:
    """Broadcast fan-out plus the command path into the simulation."""

    def __init__(self):
        self._sessions: dict[str, TelemetrySession] = {}
        self._lock = threading.Lock()
        self._session_counter = 0
        self.command_sink: Optional["queue.Queue"] = None
        self.snapshot_provider: Optional[Callable[[], dict]] = None

    def register(self, max_telemetry: int = DEFAULT_BUFFER) -> TelemetrySession:
        with self._lock:
            self._session_counter += 1
            session = TelemetrySession(f"session-{self._session_counter}", max_telemetry)
            self._sessions[session.id] = session
        if self.snapshot_provider is not None:
            session.put(self.snapshot_provider())
        return session

    def unregister(self, session: TelemetrySession) -> None:
        session.close()
        with self._lock:
            self._sessions.pop(session.id, None)

    def broadcast(self, msg: dict) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
        for s in sessions:
            s.put(msg)

    def send_to(self, session_id: str, msg: dict) -> None:
        with self._lock:
            s = self._sessions.get(session_id)
        if s is not None:
            s.put(msg)

    def submit_command(self, session_id: str, cmd: dict) -> None:
        if self.command_sink is None:
            self.send_to(session_id, {
                "type": "reject",
                "command_id": str(cmd.get("command_id", "")),
                "reason": "no live simulation attached",
            })
            return
        self.command_sink.put((session_id, cmd))

    @property
    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)


class _TelemetryHandler(socketserver.BaseRequestHandler):
    def handle(self):
        hub: TelemetryHub = self.server.hub  # type: ignore[attr-defined]
        session = hub.register()
        sock: socket.socket = self.request
        stop = threading.Event()

        def writer():
            try:
                while not stop.is_set():
                    msg = session.pop(timeout=0.2)
                    if msg is None:
                        if session.closed:
                            return
                        continue
                    sock.sendall(encode_message(msg))
            except OSError:
                pass
            finally:
                stop.set()

        wt = threading.Thread(target=writer, daemon=True)
        wt.start()
        decoder = LineDecoder()
        try:
            while not stop.is_set():
                data = sock.recv(4096)
                if not data:
                    break
                try:
                    for msg in decoder.feed(data):
                        if msg.get("type") == "command":
                            hub.submit_command(session.id, msg)
                except ProtocolError as exc:
                    session.put({"type": "reject", "command_id": "",
                                 "reason": str(exc)})
        except OSError:
            pass
        finally:
            stop.set()
            hub.unregister(session)
            wt.join(timeout=1.0)


class TcpTelemetryServer:
    """Threaded NDJSON-over-TCP server bound to a local port."""

    def __init__(self, hub: TelemetryHub, host: str = "127.0.0.1", port: int = 0):
        self.hub = hub
        self._server = socketserver.ThreadingTCPServer(
            (host, port), _TelemetryHandler, bind_and_activate=False
        )
        self._server.allow_reuse_address = True
        self._server.daemon_threads = True
        self._server.hub = hub  # type: ignore[attr-defined]
        self._server.server_bind()
        self._server.server_activate()
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        kwargs={"poll_interval": 0.1}, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)


def replay_messages(report: dict) -> list[dict]:
    """Reconstruct the gateway's message stream from a run report."""
    msgs: list[dict] = []
    for w in report.get("windows", []):
        if w.get("decided_at_us") is None:
            continue
        msgs.append({
            "type": "telemetry",
            "t_us": w["decided_at_us"],
            "window_start_us": w["start_us"],
            "p_eeg": w["p_eeg"],
            "p_ecg": w["p_ecg"],
            "fused_p": w["fused_p"],
            "positive": w["positive"],
            "degraded": w["degraded"],
            "skipped": w["skipped"],
        })
    for a in report.get("alerts", []):
        msgs.append({
            "type": "alert", "t_us": a["t_us"], "alert_id": a["alert_id"],
            "fused_p": a["fused_p"], "windows_us": a["windows_us"],
            "action": a["action"],
        })
    for s in report.get("stim_events", []):
        msgs.append({
            "type": "stim", "t_us": s["start_us"], "until_us": s["end_us"],
            "alert_id": s["alert_id"], "params": s["params"],
        })
    msgs.sort(key=lambda m: (m.get("t_us", 0),
                             0 if m["type"] == "telemetry" else 1))
    for i, m in enumerate(msgs, 1):
        m["id"] = i
    return msgs


def replay_report(report: dict, hub: TelemetryHub, speed: float = 60.0,
                  stop: Optional[threading.Event] = None) -> int:
    """Replay a report's telemetry to connected consoles at speed x realtime.

    Returns the number of messages broadcast.  Commands during replay are
    rejected by the hub (no command sink is attached).
    """
    msgs = replay_messages(report)
    if not msgs:
        return 0
    start_wall = time.monotonic()
    start_sim = msgs[0].get("t_us", 0)
    sent = 0
    for m in msgs:
        if stop is not None and stop.is_set():
            break
        target = start_wall + (m.get("t_us", 0) - start_sim) / 1e6 / speed
        while True:
            delay = target - time.monotonic()
            if delay <= 0:
                break
            if stop is not None and stop.is_set():
                return sent
            time.sleep(min(delay, 0.2))
        hub.broadcast(m)
        sent += 1
    return sent
