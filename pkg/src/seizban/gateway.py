"""Gateway decision logic: verdict fusion, alert persistence, missing-modality
degradation, and remote command handling.

The gateway pairs the two classifiers' verdicts per window time, fuses them
under a configurable rule, and feeds the result through a persistence counter
with a refractory period so single noisy windows cannot raise alerts.  When a
modality's verdict never arrives (lossy link, offline node) the decision
degrades to a stricter single-modality threshold rather than stalling.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Optional

from .simkernel import SimTime

PER_MODALITY_THRESHOLD = 0.5      # AND / OR per-modality positive
DEGRADED_THRESHOLD = 0.7          # stricter: corroboration is missing


@dataclass(frozen=True)
class Verdict:
    node: str
    window_start_us: SimTime
    p_preictal: float
    model_version: str = ""

    def __post_init__(self):
        if not 0.0 <= self.p_preictal <= 1.0:
            raise ValueError(f"p_preictal {self.p_preictal} outside [0,1]")


@dataclass(frozen=True)
class FusionRule:
    variant: str = "WEIGHTED"       # AND | OR | WEIGHTED
    w_eeg: float = 0.5
    w_ecg: float = 0.5
    threshold: float = 0.5

    def __post_init__(self):
        if self.variant not in ("AND", "OR", "WEIGHTED"):
            raise ValueError(f"unknown fusion variant {self.variant!r}")
        if self.variant == "WEIGHTED":
            if self.w_eeg < 0 or self.w_ecg < 0 or self.w_eeg + self.w_ecg <= 0:
                raise ValueError("weights must be non-negative and not both zero")
            if not 0.0 < self.threshold < 1.0:
                raise ValueError("threshold must be in (0,1)")
            total = self.w_eeg + self.w_ecg
            object.__setattr__(self, "w_eeg", self.w_eeg / total)
            object.__setattr__(self, "w_ecg", self.w_ecg / total)


def fuse(v_eeg: Verdict, v_ecg: Verdict, rule: FusionRule) -> tuple[float, bool]:
    """Combine the two per-modality verdicts into (fused_p, positive)."""
    if v_eeg.window_start_us != v_ecg.window_start_us:
        raise ValueError(
            f"mismatched window times: {v_eeg.window_start_us} != {v_ecg.window_start_us}"
        )
    pe, pc = v_eeg.p_preictal, v_ecg.p_preictal
    if rule.variant == "AND":
        both = pe >= PER_MODALITY_THRESHOLD and pc >= PER_MODALITY_THRESHOLD
        return min(pe, pc), both
    if rule.variant == "OR":
        either = pe >= PER_MODALITY_THRESHOLD or pc >= PER_MODALITY_THRESHOLD
        return max(pe, pc), either
    fused = rule.w_eeg * pe + rule.w_ecg * pc
    return fused, fused >= rule.threshold


@dataclass(frozen=True)
class AlertEvent:
    id: int
    at: SimTime
    fused_p: float
    window_starts_us: tuple[SimTime, ...]
    action: str  # "notify" | "notify+stimulate"


@dataclass
class DecisionState:
    persistence_k: int = 2
    refractory_us: SimTime = 600_000_000
    modality_timeout_us: SimTime = 4_000_000
    consecutive_positives: int = 0
    refractory_until: SimTime = 0
    contributing: list[SimTime] = field(default_factory=list)

    def __post_init__(self):
        if self.persistence_k < 1:
            raise ValueError("persistence k must be >= 1")


def step_decision(
    st: DecisionState,
    fused_p: float,
    positive: bool,
    window_start_us: SimTime,
    now: SimTime,
    alert_ids=itertools.count(1),
    action: str = "notify",
) -> Optional[AlertEvent]:
    """Advance the persistence counter; emit an alert when k consecutive
    positive windows land outside the refractory period."""
    if not positive:
        st.consecutive_positives = 0
        st.contributing.clear()
        return None
    st.consecutive_positives = min(st.consecutive_positives + 1, st.persistence_k)
    st.contributing.append(window_start_us)
    del st.contributing[: -st.persistence_k]
    if st.consecutive_positives >= st.persistence_k and now >= st.refractory_until:
        ev = AlertEvent(
            id=next(alert_ids),
            at=now,
            fused_p=fused_p,
            window_starts_us=tuple(st.contributing),
            action=action,
        )
        st.consecutive_positives = 0
        st.contributing.clear()
        st.refractory_until = now + st.refractory_us
        return ev
    return None


@dataclass(frozen=True)
class DegradedDecision:
    fused_p: float
    positive: bool
    present: str  # which modality carried the decision


def handle_missing(
    present: Optional[Verdict],
    threshold_single: float = DEGRADED_THRESHOLD,
) -> Optional[DegradedDecision]:
    """Single-modality fallback once the other verdict has timed out.

    Returns None when both are missing (the window is skipped; the
    persistence counter is left untouched).
    """
    if present is None:
        return None
    return DegradedDecision(
        fused_p=present.p_preictal,
        positive=present.p_preictal >= threshold_single,
        present=present.node,
    )


# -- remote commands -------------------------------------------------------------

@dataclass(frozen=True)
class Command:
    kind: str             # set_stim_params | set_fusion_rule | ack_alert
    payload: Any
    issuer: str
    command_id: str = ""


@dataclass(frozen=True)
class CommandLogEntry:
    applied_at_us: SimTime
    issuer: str
    kind: str
    content: Any
    status: str           # "ack" | "reject"
    reason: str = ""
    command_id: str = ""


class CommandLog:
    def __init__(self):
        self.entries: list[CommandLogEntry] = []

    def record(self, entry: CommandLogEntry) -> None:
        self.entries.append(entry)

    def applied(self) -> list[CommandLogEntry]:
        return [e for e in self.entries if e.status == "ack"]
