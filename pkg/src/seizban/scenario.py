"""Scenario configuration and the closed-loop simulation runner.

A scenario wires four nodes (EEG classifier, ECG classifier, gateway,
optional DBS) onto a TDMA'd ultrasonic link: classifier nodes window the
recording, extract features, run their budget-checked models, and radio one
verdict frame per window toward the gateway; the gateway fuses verdicts,
drives the alert state machine, and (when stimulation is on) commands the
DBS, whose synthetic-efficacy hook attenuates the planted signature in the
signal stream.  Everything runs on the deterministic event kernel, so a
(config, seed) pair fully determines the run.
"""
from __future__ import annotations

import itertools
import os
import struct
import time as _time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional

import numpy as np

from . import dbs as dbs_mod
from . import evaluation, features, gateway as gw, neuralnet, signal_io
from .simkernel import Event, SimTime, Simulator, us
from .ultrasonic import (
    KIND_ACK,
    KIND_COMMAND,
    KIND_VERDICT,
    ChannelConfig,
    CorruptFrameError,
    EnergyState,
    Frame,
    FrameError,
    Outcome,
    TdmaSchedule,
    debit_energy,
    decode_frame,
    encode_frame,
    transmit,
)

NODE_EEG = "eeg"
NODE_ECG = "ecg"
NODE_GATEWAY = "gateway"
NODE_DBS = "dbs"
WIRE_ID = {NODE_EEG: 1, NODE_ECG: 2, NODE_GATEWAY: 3, NODE_DBS: 4}
NAME_BY_WIRE = {v: k for k, v in WIRE_ID.items()}


class ScenarioError(ValueError):
    """Configuration failed validation; `errors` lists every problem."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# -- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class NodeEnergyConfig:
    battery_j: float = 50.0
    tx_j_per_bit: float = 1e-6
    rx_j_per_bit: float = 0.5e-6
    inference_j_per_window: float = 5e-3
    idle_w: float = 1e-3

    def initial_state(self) -> EnergyState:
        return EnergyState(
            battery_j=self.battery_j,
            tx_j_per_bit=self.tx_j_per_bit,
            rx_j_per_bit=self.rx_j_per_bit,
            inference_j_per_window=self.inference_j_per_window,
            idle_w=self.idle_w,
        )


@dataclass(frozen=True)
class LinkConfig:
    distance_m: float = 0.15
    sound_speed_m_s: float = 1540.0
    bit_rate_bps: float = 100_000.0
    bit_error_prob: float = 1e-3
    drop_prob: float = 0.0
    stop_and_wait: bool = False
    max_retries: int = 3

    def channel(self) -> ChannelConfig:
        return ChannelConfig(
            distance_m=self.distance_m,
            sound_speed_m_s=self.sound_speed_m_s,
            bit_rate_bps=self.bit_rate_bps,
            bit_error_prob=self.bit_error_prob,
            drop_prob=self.drop_prob,
        )


@dataclass(frozen=True)
class TdmaConfig:
    slot_ms: float = 10.0
    order: tuple[str, ...] = (NODE_EEG, NODE_ECG, NODE_GATEWAY)

    def schedule(self) -> TdmaSchedule:
        return TdmaSchedule(slot_len_us=us(self.slot_ms / 1000.0), slots=self.order)


@dataclass(frozen=True)
class FusionConfig:
    rule: str = "WEIGHTED"
    w_eeg: float = 0.5
    w_ecg: float = 0.5
    threshold: float = 0.5
    persistence_k: int = 2
    refractory_s: float = 600.0
    modality_timeout_s: Optional[float] = None  # default: 2 x stride
    degraded_threshold: float = 0.7

    def fusion_rule(self) -> gw.FusionRule:
        return gw.FusionRule(self.rule, self.w_eeg, self.w_ecg, self.threshold)


@dataclass(frozen=True)
class DbsConfig:
    present: bool = False
    enabled: bool = True
    amplitude_ma: float = 2.0
    frequency_hz: float = 130.0
    pulse_width_us: float = 90.0
    duration_s: float = 30.0
    efficacy: float = 0.0
    washout_s: float = 120.0
    stim_j_per_s: float = 1e-3
    command_retries: int = 100

    def stim_params(self) -> dbs_mod.StimParams:
        return dbs_mod.StimParams(
            amplitude_ma=self.amplitude_ma,
            frequency_hz=self.frequency_hz,
            pulse_width_us=self.pulse_width_us,
            duration_s=self.duration_s,
        )


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    recording_path: Optional[str] = None   # None -> synthetic
    synthetic: signal_io.SyntheticConfig = field(
        default_factory=lambda: signal_io.SyntheticConfig(seed=0)
    )
    window_s: float = 4.0
    stride_s: float = 2.0
    horizon_s: float = 300.0
    eeg_model_path: Optional[str] = None
    ecg_model_path: Optional[str] = None
    nodes: dict = field(default_factory=dict)   # name -> NodeEnergyConfig
    links: dict = field(default_factory=dict)   # name -> LinkConfig (to gateway)
    tdma: TdmaConfig = field(default_factory=TdmaConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    dbs: DbsConfig = field(default_factory=DbsConfig)

    def node_energy(self, name: str) -> NodeEnergyConfig:
        return self.nodes.get(name, NodeEnergyConfig())

    def link(self, name: str) -> LinkConfig:
        return self.links.get(name, LinkConfig())

    @property
    def modality_timeout_s(self) -> float:
        if self.fusion.modality_timeout_s is not None:
            return self.fusion.modality_timeout_s
        return 2.0 * self.stride_s


def validate_scenario(
    cfg: ScenarioConfig,
    eeg_model: Optional[neuralnet.ModelSpec] = None,
    ecg_model: Optional[neuralnet.ModelSpec] = None,
) -> list[str]:
    """Exhaustive fail-fast validation; returns every problem found."""
    errors: list[str] = []

    def check(cond, msg):
        if not cond:
            errors.append(msg)

    if cfg.recording_path is not None:
        check(os.path.exists(cfg.recording_path),
              f"recording: file not found: {cfg.recording_path}")
    else:
        try:
            replace(cfg.synthetic)
        except ValueError as exc:
            errors.append(f"recording: {exc}")

    check(cfg.stride_s > 0, "windowing: stride_s must be > 0")
    check(cfg.window_s > 0, "windowing: window_s must be > 0")
    if cfg.recording_path is None:
        check(cfg.window_s <= cfg.synthetic.duration_s,
              "windowing: window_s longer than recording")
    check(cfg.horizon_s > 0, "evaluation: horizon_s must be > 0")

    for which, path, model in (
        ("eeg", cfg.eeg_model_path, eeg_model),
        ("ecg", cfg.ecg_model_path, ecg_model),
    ):
        if model is not None:
            continue
        if path is None:
            errors.append(f"models: {which} model missing")
            continue
        if not os.path.exists(path):
            errors.append(f"models: file not found: {path}")
            continue
        try:
            m = neuralnet.load_model(path)
            if not neuralnet.fits_profile(m, neuralnet.KV260):
                errors.append(f"models: {which} model exceeds node memory")
        except neuralnet.BudgetExceededError as exc:
            errors.append(f"models: {which}: {exc}")
        except (neuralnet.ModelFormatError, OSError) as exc:
            errors.append(f"models: {which}: {exc}")

    try:
        rule = cfg.fusion.fusion_rule()
    except ValueError as exc:
        errors.append(f"fusion: {exc}")
        rule = None
    check(cfg.fusion.persistence_k >= 1, "fusion: persistence_k must be >= 1")
    check(cfg.fusion.refractory_s >= 0, "fusion: refractory_s must be >= 0")
    check(0.0 < cfg.fusion.degraded_threshold < 1.0,
          "fusion: degraded_threshold must be in (0,1)")
    check(cfg.modality_timeout_s > 0, "fusion: modality_timeout_s must be > 0")

    transmitting = [NODE_EEG, NODE_ECG] + ([NODE_GATEWAY] if cfg.dbs.present else [])
    try:
        schedule = cfg.tdma.schedule()
        for node in transmitting:
            check(node in schedule.slots, f"tdma: {node} owns no slot")
    except ValueError as exc:
        errors.append(f"tdma: {exc}")
        schedule = None

    link_names = [NODE_EEG, NODE_ECG] + ([NODE_DBS] if cfg.dbs.present else [])
    worst_airtime = 0
    for name in link_names:
        try:
            ch = cfg.link(name).channel()
            # a maximal frame plus its in-slot ack must fit one slot
            airtime = ch.airtime_us(72) + ch.airtime_us(11)
            worst_airtime = max(worst_airtime, airtime)
        except ValueError as exc:
            errors.append(f"links.{name}: {exc}")
    if schedule is not None:
        check(schedule.slot_len_us >= worst_airtime,
              f"tdma: slot {schedule.slot_len_us}us shorter than worst-case "
              f"frame+ack airtime {worst_airtime}us")

    violations = dbs_mod.validate_params(cfg.dbs.stim_params())
    for v in violations:
        errors.append(f"dbs: {v}")
    check(0.0 <= cfg.dbs.efficacy <= 1.0, "dbs: efficacy must be in [0,1]")
    check(cfg.dbs.washout_s >= 0, "dbs: washout_s must be >= 0")
    if cfg.dbs.present and cfg.dbs.enabled and not violations:
        check(cfg.fusion.refractory_s >= cfg.dbs.duration_s,
              "dbs: refractory_s must cover the stimulation duration")
    return errors


# -- frame payload codecs -----------------------------------------------------------

def encode_verdict_payload(v: gw.Verdict) -> bytes:
    version = v.model_version.encode("utf-8")[:32]
    return struct.pack(">Qf", v.window_start_us, v.p_preictal) + bytes([len(version)]) + version


def decode_verdict_payload(node: str, payload: bytes) -> gw.Verdict:
    window_start, p = struct.unpack(">Qf", payload[:12])
    vlen = payload[12]
    version = payload[13 : 13 + vlen].decode("utf-8")
    return gw.Verdict(node=node, window_start_us=window_start,
                      p_preictal=min(max(float(p), 0.0), 1.0),
                      model_version=version)


def encode_stim_command_payload(alert_id: int, p: dbs_mod.StimParams) -> bytes:
    return struct.pack(">Iffff", alert_id, p.amplitude_ma, p.frequency_hz,
                       p.pulse_width_us, p.duration_s)


def decode_stim_command_payload(payload: bytes) -> tuple[int, dbs_mod.StimParams]:
    alert_id, amp, freq, pw, dur = struct.unpack(">Iffff", payload[:20])
    return alert_id, dbs_mod.StimParams(
        amplitude_ma=round(float(amp), 6),
        frequency_hz=round(float(freq), 6),
        pulse_width_us=round(float(pw), 6),
        duration_s=round(float(dur), 6),
    )


def encode_ack_payload(orig_src: int, orig_seq: int) -> bytes:
    return struct.pack(">BH", orig_src, orig_seq)


def decode_ack_payload(payload: bytes) -> tuple[int, int]:
    src, seq = struct.unpack(">BH", payload[:3])
    return src, seq


# -- signal source ------------------------------------------------------------------

class SignalSource:
    """Uniform window access over a loaded recording or a synthetic stream."""

    def __init__(self, cfg: ScenarioConfig):
        self.stream: Optional[signal_io.SyntheticStream] = None
        if cfg.recording_path is not None:
            rec = signal_io.load_recording(cfg.recording_path)
            self._data = rec.data
            self.channels = tuple(rec.channels)
            self.sample_rate_hz = rec.sample_rate_hz
            self.annotations = rec.annotations
            self.n_samples = rec.n_samples
        else:
            self.stream = signal_io.SyntheticStream(cfg.synthetic)
            self._data = None
            self.channels = self.stream.channels
            self.sample_rate_hz = cfg.synthetic.sample_rate_hz
            self.annotations = cfg.synthetic.annotations()
            self.n_samples = self.stream.n

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def synthetic(self) -> bool:
        return self.stream is not None

    def window_samples(self, start_n: int, win_n: int) -> np.ndarray:
        if self.stream is not None:
            return self.stream.window(start_n, win_n)
        return self._data[:, start_n : start_n + win_n]

    def suppression_hook(self, start_s: float, end_s: float, scale: float) -> None:
        # on real recordings the efficacy hook is inert by contract
        if self.stream is not None:
            self.stream.add_suppression(start_s, end_s, scale)


# -- runner internals ----------------------------------------------------------------

@dataclass
class _PendingTx:
    frame: Frame
    reliable: bool
    retries_left: int


@dataclass
class _NodeState:
    name: str
    energy: EnergyState
    last_idle_us: SimTime = 0
    seq: int = 0
    queue: deque = field(default_factory=deque)
    in_flight: Optional[_PendingTx] = None
    slot_scheduled: set = field(default_factory=set)

    @property
    def online(self) -> bool:
        return self.energy.online


@dataclass
class WindowRecord:
    index: int
    start_us: SimTime
    end_us: SimTime
    label: Optional[str]
    ictal: bool
    p_eeg_sent: Optional[float] = None
    p_ecg_sent: Optional[float] = None
    p_eeg: Optional[float] = None
    p_ecg: Optional[float] = None
    fused_p: Optional[float] = None
    positive: Optional[bool] = None
    degraded: bool = False
    skipped: bool = False
    decided_at_us: Optional[SimTime] = None


@dataclass
class RunResult:
    config: dict
    seed: int
    windows: list[WindowRecord]
    alerts: list[gw.AlertEvent]
    stim_events: list[dbs_mod.StimulationEvent]
    tx_records: list[tuple]          # (node, start_us, end_us, kind)
    energy_ledger: list[tuple]       # (t_us, node, op, joules, battery_after)
    initial_battery: dict
    final_battery: dict
    command_log: list[gw.CommandLogEntry]
    link_stats: dict
    annotations: list[tuple[float, float]]
    horizon_s: float
    duration_s: float
    trace: list[Event]
    pending_dbs_commands: int = 0


class ScenarioRunner:
    """Builds and drives one closed-loop run."""

    def __init__(
        self,
        cfg: ScenarioConfig,
        hub=None,
        eeg_model: Optional[neuralnet.ModelSpec] = None,
        ecg_model: Optional[neuralnet.ModelSpec] = None,
    ):
        errors = validate_scenario(cfg, eeg_model=eeg_model, ecg_model=ecg_model)
        if errors:
            raise ScenarioError(errors)
        self.cfg = cfg
        self.hub = hub
        self.source = SignalSource(cfg)
        self.models = {
            NODE_EEG: eeg_model or neuralnet.load_model(cfg.eeg_model_path),
            NODE_ECG: ecg_model or neuralnet.load_model(cfg.ecg_model_path),
        }
        n_eeg = len([c for c in self.source.channels if c.kind == signal_io.KIND_EEG])
        expect_eeg = 5 * n_eeg
        if self.models[NODE_EEG].input_dim != expect_eeg:
            raise ScenarioError(
                [f"models: eeg model input {self.models[NODE_EEG].input_dim} != "
                 f"{expect_eeg} features ({n_eeg} channels x 5 bands)"]
            )
        if self.models[NODE_ECG].input_dim != 4:
            raise ScenarioError(
                [f"models: ecg model input {self.models[NODE_ECG].input_dim} != 4 features"]
            )

        self.sim = Simulator(cfg.seed)
        self.schedule = cfg.tdma.schedule()
        self.rule = cfg.fusion.fusion_rule()
        self.decision = gw.DecisionState(
            persistence_k=cfg.fusion.persistence_k,
            refractory_us=us(cfg.fusion.refractory_s),
            modality_timeout_us=us(cfg.modality_timeout_s),
        )
        self.alert_ids = itertools.count(1)
        self.telemetry_ids = itertools.count(1)
        self.current_stim_params = cfg.dbs.stim_params()
        self.command_log = gw.CommandLog()
        self.active_alerts: dict[int, gw.AlertEvent] = {}
        self.acked_alerts: set[int] = set()

        node_names = [NODE_EEG, NODE_ECG, NODE_GATEWAY] + (
            [NODE_DBS] if cfg.dbs.present else []
        )
        self.nodes = {
            name: _NodeState(name=name, energy=cfg.node_energy(name).initial_state())
            for name in node_names
        }
        self.initial_battery = {n: s.energy.battery_j for n, s in self.nodes.items()}

        self.actuator: Optional[dbs_mod.DbsActuator] = None
        if cfg.dbs.present:
            self.actuator = dbs_mod.DbsActuator(
                enabled=cfg.dbs.enabled,
                efficacy=cfg.dbs.efficacy,
                washout_s=cfg.dbs.washout_s,
                stim_j_per_s=cfg.dbs.stim_j_per_s,
                params=cfg.dbs.stim_params(),
                suppression_hook=self.source.suppression_hook,
            )

        self.energy_ledger: list[tuple] = []
        self.tx_records: list[tuple] = []
        self.link_stats = {
            name: {"delivered": 0, "corrupted": 0, "dropped": 0}
            for name in (NODE_EEG, NODE_ECG, NODE_DBS)
        }
        self.seen_frames: set[tuple[int, int]] = set()
        self.alerts: list[gw.AlertEvent] = []

        # windowing
        fs = self.source.sample_rate_hz
        self.win_n = int(round(cfg.window_s * fs))
        self.stride_n = int(round(cfg.stride_s * fs))
        self.n_windows = (self.source.n_samples - self.win_n) // self.stride_n + 1
        self.windows: list[WindowRecord] = []
        self.pending_windows: dict[int, dict] = {}
        for i in range(self.n_windows):
            start_n = i * self.stride_n
            start_s = start_n / fs
            end_s = (start_n + self.win_n) / fs
            label, ictal = signal_io.classify_window(
                start_s, end_s, self.source.annotations, cfg.horizon_s
            )
            self.windows.append(
                WindowRecord(index=i, start_us=us(start_s), end_us=us(end_s),
                             label=label, ictal=ictal)
            )
            self.pending_windows[i] = {NODE_EEG: None, NODE_ECG: None, "decided": False}
        self._index_by_start = {w.start_us: w.index for w in self.windows}

        for kind, handler in (
            ("sample-ready", self._on_sample_ready),
            ("slot-tx", self._on_slot_tx),
            ("frame-arrival", self._on_frame_arrival),
            ("retry-check", self._on_retry_check),
            ("window-timeout", self._on_window_timeout),
            ("stim-end", self._on_stim_end),
        ):
            self.sim.on(kind, handler)
        self.sim.mailbox_handler = self._on_command

        for i in range(self.n_windows):
            t_ready = self.windows[i].end_us
            self.sim.schedule(t_ready, NODE_EEG, "sample-ready", payload=i)
            self.sim.schedule(t_ready, NODE_ECG, "sample-ready", payload=i)
            self.sim.schedule(
                t_ready + self.decision.modality_timeout_us,
                NODE_GATEWAY, "window-timeout", payload=i,
            )

        cycle = self.schedule.cycle_us
        self.t_end = (
            us(self.source.duration_s)
            + self.decision.modality_timeout_us
            + 2 * cycle
            + 100_000
        )

    # -- energy ------------------------------------------------------------------

    def _debit(self, node: str, op: str, amount: float = 0.0) -> None:
        st = self.nodes[node]
        st.energy, joules = debit_energy(st.energy, op, amount)
        self.energy_ledger.append(
            (self.sim.now, node, op, joules, st.energy.battery_j)
        )

    def _debit_idle(self, node: str) -> None:
        st = self.nodes[node]
        elapsed_s = (self.sim.now - st.last_idle_us) / 1e6
        if elapsed_s > 0:
            self._debit(node, "idle", elapsed_s)
        st.last_idle_us = self.sim.now

    # -- node behaviour -------------------------------------------------------------

    def _on_sample_ready(self, sim: Simulator, ev: Event) -> None:
        node = ev.target
        idx = ev.payload
        st = self.nodes[node]
        self._debit_idle(node)
        if not st.online:
            return
        rec = self.windows[idx]
        samples = self.source.window_samples(idx * self.stride_n, self.win_n)
        window = signal_io.Window(
            start_us=rec.start_us,
            duration_s=self.cfg.window_s,
            samples=samples,
            channels=self.source.channels,
        )
        self._debit(node, "inference")
        if node == NODE_EEG:
            fv = features.extract_features_eeg(window)
        else:
            fv = features.extract_features_ecg(window)
        if fv.low_confidence:
            return  # verdict treated as missing downstream
        model = self.models[node]
        p = neuralnet.infer(model, fv.values)
        # quantize through the wire float32 so sent == received
        p32 = float(np.float32(p))
        verdict = gw.Verdict(node=node, window_start_us=rec.start_us,
                             p_preictal=min(max(p32, 0.0), 1.0),
                             model_version=model.version)
        if node == NODE_EEG:
            rec.p_eeg_sent = verdict.p_preictal
        else:
            rec.p_ecg_sent = verdict.p_preictal
        link = self.cfg.link(node)
        frame = Frame(
            src=WIRE_ID[node], dst=WIRE_ID[NODE_GATEWAY], seq=st.seq % 0x10000,
            kind=KIND_VERDICT, payload=encode_verdict_payload(verdict),
        )
        st.seq += 1
        st.queue.append(_PendingTx(frame=frame, reliable=link.stop_and_wait,
                                   retries_left=link.max_retries))
        self._request_slot(node)

    def _request_slot(self, node: str) -> None:
        st = self.nodes[node]
        t = self.schedule.next_slot(node, self.sim.now)
        if t not in st.slot_scheduled:
            st.slot_scheduled.add(t)
            self.sim.schedule(t, node, "slot-tx")

    def _link_for(self, a: str, b: str) -> tuple[str, LinkConfig]:
        """Classifier and DBS links are named after the non-gateway endpoint."""
        other = a if a != NODE_GATEWAY else b
        return other, self.cfg.link(other)

    def _on_slot_tx(self, sim: Simulator, ev: Event) -> None:
        node = ev.target
        st = self.nodes[node]
        st.slot_scheduled.discard(ev.at)
        self._debit_idle(node)
        if not st.online:
            return
        pending = st.in_flight
        if pending is None:
            if not st.queue:
                return
            pending = st.queue.popleft()
        dst = NAME_BY_WIRE[pending.frame.dst]
        link_name, link = self._link_for(node, dst)
        data = encode_frame(pending.frame)
        ch = link.channel()
        self._debit(node, "tx", len(data) * 8)
        self.tx_records.append(
            (node, sim.now, sim.now + ch.serialization_us(len(data)),
             pending.frame.kind_name)
        )
        out = transmit(data, ch, sim.rng(f"channel-{link_name}"), t_send_us=sim.now)
        if out.outcome is Outcome.DROPPED:
            self.link_stats[link_name]["dropped"] += 1
        else:
            self.sim.schedule(out.t_arrival_us, dst, "frame-arrival",
                              payload={"data": out.data, "link": link_name})
        if pending.reliable:
            st.in_flight = pending
            self.sim.schedule(sim.now + self.schedule.slot_len_us, node,
                              "retry-check", payload=pending.frame.seq)
        else:
            st.in_flight = None
            if st.queue:
                self._request_slot_next_cycle(node)

    def _request_slot_next_cycle(self, node: str) -> None:
        st = self.nodes[node]
        t = self.schedule.next_slot(node, self.sim.now + self.schedule.slot_len_us)
        if t not in st.slot_scheduled:
            st.slot_scheduled.add(t)
            self.sim.schedule(t, node, "slot-tx")

    def _on_retry_check(self, sim: Simulator, ev: Event) -> None:
        node = ev.target
        st = self.nodes[node]
        pending = st.in_flight
        if pending is None or pending.frame.seq != ev.payload:
            return
        if pending.retries_left > 0 and st.online:
            pending.retries_left -= 1
            self._request_slot(node)
        else:
            st.in_flight = None
            if st.queue:
                self._request_slot(node)

    def _on_frame_arrival(self, sim: Simulator, ev: Event) -> None:
        node = ev.target
        st = self.nodes[node]
        payload = ev.payload
        self._debit_idle(node)
        if not st.online:
            return
        data = payload["data"]
        link_name = payload["link"]
        self._debit(node, "rx", len(data) * 8)
        try:
            frame = decode_frame(data)
        except CorruptFrameError:
            self.link_stats[link_name]["corrupted"] += 1
            return
        except FrameError:
            self.link_stats[link_name]["corrupted"] += 1
            return
        self.link_stats[link_name]["delivered"] += 1
        if frame.kind == KIND_ACK:
            self._handle_ack(node, frame)
            return
        duplicate = (frame.src, frame.seq) in self.seen_frames
        self.seen_frames.add((frame.src, frame.seq))
        needs_ack = (
            frame.kind == KIND_COMMAND
            or self.cfg.link(NAME_BY_WIRE[frame.src]).stop_and_wait
        )
        if needs_ack:
            self._send_ack(node, frame)
        if duplicate:
            return
        if frame.kind == KIND_VERDICT and node == NODE_GATEWAY:
            verdict = decode_verdict_payload(NAME_BY_WIRE[frame.src], frame.payload)
            self._gateway_take_verdict(verdict)
        elif frame.kind == KIND_COMMAND and node == NODE_DBS:
            self._dbs_take_command(frame)

    def _send_ack(self, node: str, frame: Frame) -> None:
        st = self.nodes[node]
        ack = Frame(src=WIRE_ID[node], dst=frame.src, seq=st.seq % 0x10000,
                    kind=KIND_ACK, payload=encode_ack_payload(frame.src, frame.seq))
        st.seq += 1
        dst = NAME_BY_WIRE[frame.src]
        link_name, link = self._link_for(node, dst)
        data = encode_frame(ack)
        ch = link.channel()
        self._debit(node, "tx", len(data) * 8)
        self.tx_records.append(
            (node, self.sim.now, self.sim.now + ch.serialization_us(len(data)), "ack")
        )
        out = transmit(data, ch, self.sim.rng(f"channel-{link_name}"),
                       t_send_us=self.sim.now)
        if out.outcome is Outcome.DROPPED:
            self.link_stats[link_name]["dropped"] += 1
        else:
            self.sim.schedule(out.t_arrival_us, dst, "frame-arrival",
                              payload={"data": out.data, "link": link_name})

    def _handle_ack(self, node: str, frame: Frame) -> None:
        st = self.nodes[node]
        _, orig_seq = decode_ack_payload(frame.payload)
        pending = st.in_flight
        if pending is not None and pending.frame.seq == orig_seq:
            st.in_flight = None
            if st.queue:
                self._request_slot_next_cycle(node)

    # -- gateway -----------------------------------------------------------------

    def _gateway_take_verdict(self, verdict: gw.Verdict) -> None:
        idx = self._index_by_start.get(verdict.window_start_us)
        if idx is None:
            return
        slot = self.pending_windows[idx]
        if slot["decided"]:
            return
        slot[verdict.node] = verdict
        rec = self.windows[idx]
        if verdict.node == NODE_EEG:
            rec.p_eeg = verdict.p_preictal
        else:
            rec.p_ecg = verdict.p_preictal
        if slot[NODE_EEG] is not None and slot[NODE_ECG] is not None:
            fused_p, positive = gw.fuse(slot[NODE_EEG], slot[NODE_ECG], self.rule)
            self._gateway_decide(idx, fused_p, positive, degraded=False)

    def _on_window_timeout(self, sim: Simulator, ev: Event) -> None:
        idx = ev.payload
        slot = self.pending_windows[idx]
        if slot["decided"]:
            return
        present = slot[NODE_EEG] or slot[NODE_ECG]
        degraded = gw.handle_missing(present, self.cfg.fusion.degraded_threshold)
        if degraded is None:
            slot["decided"] = True
            rec = self.windows[idx]
            rec.skipped = True
            rec.decided_at_us = sim.now
            self._emit_telemetry(rec)
            return
        self._gateway_decide(idx, degraded.fused_p, degraded.positive, degraded=True)

    def _gateway_decide(self, idx: int, fused_p: float, positive: bool,
                        degraded: bool) -> None:
        slot = self.pending_windows[idx]
        slot["decided"] = True
        rec = self.windows[idx]
        rec.fused_p = fused_p
        rec.positive = positive
        rec.degraded = degraded
        rec.decided_at_us = self.sim.now
        action = "notify"
        if self.cfg.dbs.present and self.cfg.dbs.enabled:
            action = "notify+stimulate"
        alert = gw.step_decision(
            self.decision, fused_p, positive, rec.start_us, self.sim.now,
            self.alert_ids, action=action,
        )
        self._emit_telemetry(rec)
        if alert is not None:
            self.alerts.append(alert)
            self.active_alerts[alert.id] = alert
            self._emit(
                {
                    "type": "alert", "alert_id": alert.id, "t_us": alert.at,
                    "fused_p": alert.fused_p,
                    "windows_us": list(alert.window_starts_us),
                    "action": alert.action,
                }
            )
            if alert.action == "notify+stimulate":
                self._send_stim_command(alert)

    def _send_stim_command(self, alert: gw.AlertEvent) -> None:
        st = self.nodes[NODE_GATEWAY]
        frame = Frame(
            src=WIRE_ID[NODE_GATEWAY], dst=WIRE_ID[NODE_DBS],
            seq=st.seq % 0x10000, kind=KIND_COMMAND,
            payload=encode_stim_command_payload(alert.id, self.current_stim_params),
        )
        st.seq += 1
        st.queue.append(_PendingTx(frame=frame, reliable=True,
                                   retries_left=self.cfg.dbs.command_retries))
        self._request_slot(NODE_GATEWAY)

    # -- DBS ----------------------------------------------------------------------

    def _dbs_take_command(self, frame: Frame) -> None:
        alert_id, params = decode_stim_command_payload(frame.payload)
        act = self.actuator
        if act is None:
            return
        act.online = self.nodes[NODE_DBS].online
        violations = act.set_params(params)
        if violations:
            return
        try:
            ev = act.trigger(alert_id, self.sim.now)
        except dbs_mod.TriggerRejected:
            return
        self._debit(NODE_DBS, "stim", act.stim_j_per_s * params.duration_s)
        self.sim.schedule(ev.end_us, NODE_DBS, "stim-end")
        self._emit(
            {
                "type": "stim", "t_us": ev.start_us, "until_us": ev.end_us,
                "alert_id": alert_id,
                "params": {
                    "amplitude_ma": params.amplitude_ma,
                    "frequency_hz": params.frequency_hz,
                    "pulse_width_us": params.pulse_width_us,
                    "duration_s": params.duration_s,
                },
            }
        )

    def _on_stim_end(self, sim: Simulator, ev: Event) -> None:
        if self.actuator is not None:
            self.actuator.stim_end(sim.now)

    # -- telemetry / commands ---------------------------------------------------------

    def _emit_telemetry(self, rec: WindowRecord) -> None:
        self._emit(
            {
                "type": "telemetry",
                "window_start_us": rec.start_us,
                "t_us": self.sim.now,
                "p_eeg": rec.p_eeg,
                "p_ecg": rec.p_ecg,
                "fused_p": rec.fused_p,
                "positive": rec.positive,
                "degraded": rec.degraded,
                "skipped": rec.skipped,
                "battery_j": {n: s.energy.battery_j for n, s in self.nodes.items()},
            }
        )

    def _emit(self, message: dict) -> None:
        if self.hub is not None:
            message = dict(message)
            message["id"] = next(self.telemetry_ids)
            self.hub.broadcast(message)

    def snapshot(self) -> dict:
        """Connection-time state for consoles: rule, params, active alerts."""
        return {
            "type": "snapshot",
            "t_us": self.sim.now,
            "fusion_rule": {
                "variant": self.rule.variant, "w_eeg": self.rule.w_eeg,
                "w_ecg": self.rule.w_ecg, "threshold": self.rule.threshold,
            },
            "stim_params": {
                "amplitude_ma": self.current_stim_params.amplitude_ma,
                "frequency_hz": self.current_stim_params.frequency_hz,
                "pulse_width_us": self.current_stim_params.pulse_width_us,
                "duration_s": self.current_stim_params.duration_s,
            },
            "active_alerts": [
                {
                    "alert_id": a.id, "t_us": a.at, "fused_p": a.fused_p,
                    "windows_us": list(a.window_starts_us), "action": a.action,
                }
                for aid, a in sorted(self.active_alerts.items())
                if aid not in self.acked_alerts
            ],
            "battery_j": {n: s.energy.battery_j for n, s in self.nodes.items()},
        }

    def _on_command(self, sim: Simulator, item: tuple) -> None:
        session_id, cmd = item
        cmd_id = str(cmd.get("command_id", ""))
        kind = cmd.get("kind", "")
        payload = cmd.get("params", {})
        status, reason, content = "ack", "", payload

        if kind == "set_fusion_rule":
            try:
                rule = gw.FusionRule(
                    str(payload.get("variant", "WEIGHTED")),
                    float(payload.get("w_eeg", 0.5)),
                    float(payload.get("w_ecg", 0.5)),
                    float(payload.get("threshold", 0.5)),
                )
                self.rule = rule
            except (ValueError, TypeError) as exc:
                status, reason = "reject", str(exc)
        elif kind == "set_stim_params":
            try:
                params = dbs_mod.StimParams(
                    amplitude_ma=float(payload.get("amplitude_ma",
                                                   self.current_stim_params.amplitude_ma)),
                    frequency_hz=float(payload.get("frequency_hz",
                                                   self.current_stim_params.frequency_hz)),
                    pulse_width_us=float(payload.get("pulse_width_us",
                                                     self.current_stim_params.pulse_width_us)),
                    duration_s=float(payload.get("duration_s",
                                                 self.current_stim_params.duration_s)),
                )
                violations = dbs_mod.validate_params(params)
                if violations:
                    status, reason = "reject", "out of range: " + "; ".join(violations)
                elif (self.cfg.dbs.present and self.cfg.dbs.enabled
                      and params.duration_s > self.cfg.fusion.refractory_s):
                    status, reason = "reject", (
                        "out of range: duration_s exceeds the alert refractory period"
                    )
                else:
                    self.current_stim_params = params
            except (ValueError, TypeError) as exc:
                status, reason = "reject", str(exc)
        elif kind == "ack_alert":
            try:
                alert_id = int(payload.get("alert_id"))
            except (ValueError, TypeError):
                alert_id = None
            if alert_id in self.active_alerts and alert_id not in self.acked_alerts:
                self.acked_alerts.add(alert_id)
                content = {"alert_id": alert_id}
            else:
                status, reason = "reject", f"unknown id: {alert_id}"
        else:
            status, reason = "reject", f"unknown command kind: {kind!r}"

        entry = gw.CommandLogEntry(
            applied_at_us=sim.now, issuer=str(session_id), kind=kind,
            content=content, status=status, reason=reason, command_id=cmd_id,
        )
        self.command_log.record(entry)
        if self.hub is not None:
            reply = {
                "type": status, "command_id": cmd_id, "applied_at_us": sim.now,
            }
            if reason:
                reply["reason"] = reason
            self.hub.send_to(session_id, reply)

    # -- run --------------------------------------------------------------------------

    def run(self, pace: Optional[float] = None) -> RunResult:
        """Execute the scenario.  pace=N replays at N x real time (None: as
        fast as possible); pacing changes wall-clock behavior only."""
        if pace is None:
            self.sim.run_until(self.t_end)
        else:
            wall_start = _time.monotonic()
            sim_start = self.sim.now
            while True:
                t_next = self.sim.peek_next_time()
                if t_next is None or t_next > self.t_end:
                    break
                deadline = wall_start + (t_next - sim_start) / 1e6 / pace
                delay = deadline - _time.monotonic()
                if delay > 0:
                    _time.sleep(min(delay, 0.25))
                    if _time.monotonic() < deadline:
                        continue
                self.sim.run_until(t_next)
            self.sim.run_until(self.t_end)
        for name in self.nodes:
            self._debit_idle(name)
        pending = self.nodes[NODE_GATEWAY]
        pending_cmds = (1 if pending.in_flight else 0) + sum(
            1 for p in pending.queue if p.frame.kind == KIND_COMMAND
        )
        return RunResult(
            config=scenario_to_dict(self.cfg),
            seed=self.cfg.seed,
            windows=self.windows,
            alerts=self.alerts,
            stim_events=list(self.actuator.events) if self.actuator else [],
            tx_records=self.tx_records,
            energy_ledger=self.energy_ledger,
            initial_battery=self.initial_battery,
            final_battery={n: s.energy.battery_j for n, s in self.nodes.items()},
            command_log=self.command_log.entries,
            link_stats=self.link_stats,
            annotations=list(self.source.annotations or []),
            horizon_s=self.cfg.horizon_s,
            duration_s=self.source.duration_s,
            trace=self.sim.trace,
            pending_dbs_commands=pending_cmds,
        )


def run_scenario(cfg: ScenarioConfig, hub=None, pace: Optional[float] = None,
                 **models) -> RunResult:
    return ScenarioRunner(cfg, hub=hub, **models).run(pace=pace)


# -- report assembly -----------------------------------------------------------------

def build_report(result: RunResult) -> dict:
    scored = [w for w in result.windows if w.label is not None]
    fused_cm = evaluation.confusion(
        [w.label for w in scored],
        [w.positive if not w.skipped else None for w in scored],
        [w.ictal for w in scored],
    )
    eeg_cm = evaluation.confusion(
        [w.label for w in scored],
        [None if w.p_eeg_sent is None else w.p_eeg_sent >= 0.5 for w in scored],
        [w.ictal for w in scored],
    )
    ecg_cm = evaluation.confusion(
        [w.label for w in scored],
        [None if w.p_ecg_sent is None else w.p_ecg_sent >= 0.5 for w in scored],
        [w.ictal for w in scored],
    )
    alert_times = [a.at / 1e6 for a in result.alerts]
    onsets = [onset for onset, _ in result.annotations]
    escore = evaluation.event_scoring(alert_times, onsets, result.horizon_s)
    latencies = evaluation.detection_latencies_s(alert_times, onsets, result.horizon_s)
    hours = result.duration_s / 3600.0
    fused_metrics = evaluation.metrics(fused_cm)
    fused_dict = fused_metrics.as_dict()
    if hours > 0:
        fused_dict["false_alarms_per_hour"] = round(escore.false_alarms / hours, 4)
    if latencies:
        fused_dict["mean_detection_latency_s"] = round(
            sum(latencies) / len(latencies), 4
        )

    energy_by_node: dict[str, dict] = {}
    for t, node, op, joules, _after in result.energy_ledger:
        d = energy_by_node.setdefault(node, {})
        d[op] = d.get(op, 0.0) + joules

    return {
        "config": result.config,
        "seed": result.seed,
        "windows": [
            {
                "index": w.index,
                "start_us": w.start_us,
                "label": w.label,
                "ictal": w.ictal,
                "p_eeg_sent": w.p_eeg_sent,
                "p_ecg_sent": w.p_ecg_sent,
                "p_eeg": w.p_eeg,
                "p_ecg": w.p_ecg,
                "fused_p": w.fused_p,
                "positive": w.positive,
                "degraded": w.degraded,
                "skipped": w.skipped,
                "decided_at_us": w.decided_at_us,
            }
            for w in result.windows
        ],
        "confusion": {
            "fused": {"tp": fused_cm.tp, "fp": fused_cm.fp,
                      "tn": fused_cm.tn, "fn": fused_cm.fn},
            "eeg": {"tp": eeg_cm.tp, "fp": eeg_cm.fp,
                    "tn": eeg_cm.tn, "fn": eeg_cm.fn},
            "ecg": {"tp": ecg_cm.tp, "fp": ecg_cm.fp,
                    "tn": ecg_cm.tn, "fn": ecg_cm.fn},
        },
        "metrics": {
            "fused": fused_dict,
            "eeg": evaluation.metrics(eeg_cm).as_dict(),
            "ecg": evaluation.metrics(ecg_cm).as_dict(),
        },
        "event_scoring": {
            "true_alarms": escore.true_alarms,
            "false_alarms": escore.false_alarms,
            "missed_seizures": escore.missed_seizures,
        },
        "alerts": [
            {
                "alert_id": a.id, "t_us": a.at, "fused_p": a.fused_p,
                "windows_us": list(a.window_starts_us), "action": a.action,
            }
            for a in result.alerts
        ],
        "stim_events": [
            {
                "start_us": e.start_us, "end_us": e.end_us,
                "alert_id": e.triggered_by,
                "params": {
                    "amplitude_ma": e.params.amplitude_ma,
                    "frequency_hz": e.params.frequency_hz,
                    "pulse_width_us": e.params.pulse_width_us,
                    "duration_s": e.params.duration_s,
                },
            }
            for e in result.stim_events
        ],
        "energy": {
            node: {
                "initial_j": result.initial_battery[node],
                "final_j": result.final_battery[node],
                "by_op_j": energy_by_node.get(node, {}),
            }
            for node in result.initial_battery
        },
        "link_stats": result.link_stats,
        "command_log": [
            {
                "applied_at_us": e.applied_at_us, "issuer": e.issuer,
                "kind": e.kind, "content": e.content, "status": e.status,
                "reason": e.reason, "command_id": e.command_id,
            }
            for e in result.command_log
        ],
    }


# -- config (de)serialization ----------------------------------------------------------

def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    d: dict[str, Any] = {
        "scenario": {"seed": cfg.seed},
        "recording": (
            {"path": cfg.recording_path}
            if cfg.recording_path is not None
            else {
                "source": "synthetic",
                "duration_s": cfg.synthetic.duration_s,
                "onsets_s": list(cfg.synthetic.seizure_onsets_s),
                "eeg_channels": cfg.synthetic.eeg_channels,
                "snr_db": cfg.synthetic.snr_db,
                "theta_ramp_gain": cfg.synthetic.signature.theta_ramp_gain,
                "rr_shortening_fraction": cfg.synthetic.signature.rr_shortening_fraction,
                "sample_rate_hz": cfg.synthetic.sample_rate_hz,
                "ictal_duration_s": cfg.synthetic.ictal_duration_s,
            }
        ),
        "windowing": {"window_s": cfg.window_s, "stride_s": cfg.stride_s},
        "evaluation": {"horizon_s": cfg.horizon_s},
        "models": {"eeg": cfg.eeg_model_path, "ecg": cfg.ecg_model_path},
        "nodes": {
            name: asdict(cfg.node_energy(name))
            for name in (NODE_EEG, NODE_ECG, NODE_GATEWAY, NODE_DBS)
        },
        "links": {
            name: asdict(cfg.link(name))
            for name in (NODE_EEG, NODE_ECG, NODE_DBS)
        },
        "tdma": {"slot_ms": cfg.tdma.slot_ms, "order": list(cfg.tdma.order)},
        "fusion": {
            "rule": cfg.fusion.rule, "w_eeg": cfg.fusion.w_eeg,
            "w_ecg": cfg.fusion.w_ecg, "threshold": cfg.fusion.threshold,
            "persistence_k": cfg.fusion.persistence_k,
            "refractory_s": cfg.fusion.refractory_s,
            "modality_timeout_s": cfg.modality_timeout_s,
            "degraded_threshold": cfg.fusion.degraded_threshold,
        },
        "dbs": {
            "present": cfg.dbs.present, "enabled": cfg.dbs.enabled,
            "amplitude_ma": cfg.dbs.amplitude_ma,
            "frequency_hz": cfg.dbs.frequency_hz,
            "pulse_width_us": cfg.dbs.pulse_width_us,
            "duration_s": cfg.dbs.duration_s,
            "efficacy": cfg.dbs.efficacy, "washout_s": cfg.dbs.washout_s,
            "stim_j_per_s": cfg.dbs.stim_j_per_s,
        },
    }
    return d


def scenario_from_dict(d: dict) -> ScenarioConfig:
    rec = d.get("recording", {})
    seed = int(d.get("scenario", {}).get("seed", 0))
    horizon_s = float(d.get("evaluation", {}).get("horizon_s", 300.0))
    recording_path = rec.get("path")
    synthetic = signal_io.SyntheticConfig(
        seed=seed,
        duration_s=float(rec.get("duration_s", 600.0)),
        seizure_onsets_s=tuple(rec.get("onsets_s", (420.0,))),
        preictal_horizon_s=horizon_s,
        eeg_channels=int(rec.get("eeg_channels", 2)),
        snr_db=float(rec.get("snr_db", 6.0)),
        signature=signal_io.SignatureConfig(
            theta_ramp_gain=float(rec.get("theta_ramp_gain", 1.0)),
            rr_shortening_fraction=float(rec.get("rr_shortening_fraction", 0.2)),
        ),
        sample_rate_hz=float(rec.get("sample_rate_hz", 256.0)),
        ictal_duration_s=float(rec.get("ictal_duration_s", 30.0)),
    ) if recording_path is None else signal_io.SyntheticConfig(seed=seed)

    windowing = d.get("windowing", {})
    models = d.get("models", {})
    nodes = {
        name: NodeEnergyConfig(**vals)
        for name, vals in d.get("nodes", {}).items()
    }
    links = {
        name: LinkConfig(**vals)
        for name, vals in d.get("links", {}).items()
    }
    tdma_d = d.get("tdma", {})
    tdma = TdmaConfig(
        slot_ms=float(tdma_d.get("slot_ms", 10.0)),
        order=tuple(tdma_d.get("order", (NODE_EEG, NODE_ECG, NODE_GATEWAY))),
    )
    fus = d.get("fusion", {})
    fusion = FusionConfig(
        rule=str(fus.get("rule", "WEIGHTED")).upper(),
        w_eeg=float(fus.get("w_eeg", 0.5)),
        w_ecg=float(fus.get("w_ecg", 0.5)),
        threshold=float(fus.get("threshold", 0.5)),
        persistence_k=int(fus.get("persistence_k", 2)),
        refractory_s=float(fus.get("refractory_s", 600.0)),
        modality_timeout_s=(
            float(fus["modality_timeout_s"]) if "modality_timeout_s" in fus else None
        ),
        degraded_threshold=float(fus.get("degraded_threshold", 0.7)),
    )
    dbs_d = d.get("dbs", {})
    dbs_cfg = DbsConfig(
        present=bool(dbs_d.get("present", False)),
        enabled=bool(dbs_d.get("enabled", True)),
        amplitude_ma=float(dbs_d.get("amplitude_ma", 2.0)),
        frequency_hz=float(dbs_d.get("frequency_hz", 130.0)),
        pulse_width_us=float(dbs_d.get("pulse_width_us", 90.0)),
        duration_s=float(dbs_d.get("duration_s", 30.0)),
        efficacy=float(dbs_d.get("efficacy", 0.0)),
        washout_s=float(dbs_d.get("washout_s", 120.0)),
        stim_j_per_s=float(dbs_d.get("stim_j_per_s", 1e-3)),
    )
    return ScenarioConfig(
        seed=seed,
        recording_path=recording_path,
        synthetic=synthetic,
        window_s=float(windowing.get("window_s", 4.0)),
        stride_s=float(windowing.get("stride_s", 2.0)),
        horizon_s=horizon_s,
        eeg_model_path=models.get("eeg"),
        ecg_model_path=models.get("ecg"),
        nodes=nodes,
        links=links,
        tdma=tdma,
        fusion=fusion,
        dbs=dbs_cfg,
    )


def load_scenario(path: str, seed_override: Optional[int] = None) -> ScenarioConfig:
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        d = tomllib.load(fh)
    if seed_override is not None:
        d.setdefault("scenario", {})["seed"] = seed_override
    return scenario_from_dict(d)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot render {type(v)} to TOML")


def scenario_to_toml(cfg: ScenarioConfig) -> str:
    """Human-editable scenario file with every field explicit."""
    d = scenario_to_dict(cfg)
    lines: list[str] = []
    for section, content in d.items():
        nested = {k: v for k, v in content.items() if isinstance(v, dict)}
        flat = {k: v for k, v in content.items()
                if not isinstance(v, dict) and v is not None}
        if flat:
            lines.append(f"[{section}]")
            for k, v in flat.items():
                lines.append(f"{k} = {_toml_value(v)}")
            lines.append("")
        for sub, vals in nested.items():
            lines.append(f"[{section}.{sub}]")
            for k, v in vals.items():
                if v is not None:
                    lines.append(f"{k} = {_toml_value(v)}")
            lines.append("")
    return "\n".join(lines)
