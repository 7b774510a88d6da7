"""Optional implantable deep-brain stimulator: parameter safety validation,
stimulation events, and the synthetic-efficacy hook that feeds suppression
back into the signal generator.

Safety bounds are hard ceilings; a scenario may narrow them but never widen.
Stimulation intervals never overlap, and on real (non-synthetic) recordings
the efficacy hook is inert: enabling the stimulator changes only the event
trace, never the signal data.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .simkernel import SimTime, us

# Hard safety ceilings (closed intervals).
AMPLITUDE_MA = (0.0, 5.0)
FREQUENCY_HZ = (30.0, 250.0)
PULSE_WIDTH_US = (60.0, 450.0)

DEFAULT_WASHOUT_S = 120.0


@dataclass(frozen=True)
class StimParams:
    amplitude_ma: float = 2.0
    frequency_hz: float = 130.0
    pulse_width_us: float = 90.0
    duration_s: float = 30.0


@dataclass(frozen=True)
class StimulationEvent:
    start_us: SimTime
    params: StimParams
    triggered_by: int  # alert id

    @property
    def end_us(self) -> SimTime:
        return self.start_us + us(self.params.duration_s)


def validate_params(p: StimParams) -> list[str]:
    """Returns a list of violations (empty means ok), each naming the field,
    the offending value, and the allowed bound."""
    violations = []
    checks = (
        ("amplitude_ma", p.amplitude_ma, AMPLITUDE_MA),
        ("frequency_hz", p.frequency_hz, FREQUENCY_HZ),
        ("pulse_width_us", p.pulse_width_us, PULSE_WIDTH_US),
    )
    for name, value, (lo, hi) in checks:
        if not lo <= value <= hi:
            violations.append(f"{name}={value} out of range [{lo}, {hi}]")
    if not p.duration_s > 0:
        violations.append(f"duration_s={p.duration_s} must be > 0")
    return violations


class TriggerRejected(RuntimeError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class DbsActuator:
    """Stimulator state machine; the scenario owns energy accounting and
    schedules the stim-end event."""

    enabled: bool = True
    efficacy: float = 0.0          # eta in [0,1]
    washout_s: float = DEFAULT_WASHOUT_S
    stim_j_per_s: float = 1e-3
    params: StimParams = StimParams()
    online: bool = True
    stimulating_until: Optional[SimTime] = None
    events: list[StimulationEvent] = None
    suppression_hook: Optional[Callable[[float, float, float], None]] = None

    def __post_init__(self):
        if not 0.0 <= self.efficacy <= 1.0:
            raise ValueError("efficacy must be in [0,1]")
        if self.events is None:
            self.events = []
        bad = validate_params(self.params)
        if bad:
            raise ValueError("; ".join(bad))

    @property
    def busy(self) -> bool:
        return self.stimulating_until is not None

    def set_params(self, p: StimParams) -> list[str]:
        violations = validate_params(p)
        if not violations:
            self.params = p
        return violations

    def trigger(self, alert_id: int, now: SimTime) -> StimulationEvent:
        """Start a stimulation for the current params.

        Raises TriggerRejected("busy") while a stimulation is running and
        TriggerRejected("offline") when the node has no battery.
        """
        if not self.online:
            raise TriggerRejected("offline")
        if not self.enabled:
            raise TriggerRejected("disabled")
        if self.busy:
            raise TriggerRejected("busy")
        ev = StimulationEvent(start_us=now, params=self.params, triggered_by=alert_id)
        self.events.append(ev)
        self.stimulating_until = ev.end_us
        self.apply_effect(now)
        return ev

    def stim_end(self, now: SimTime) -> None:
        if self.stimulating_until is not None and now >= self.stimulating_until:
            self.stimulating_until = None

    def apply_effect(self, now: SimTime) -> None:
        """Synthetic-efficacy hook: during the stimulation and a washout tail,
        the planted preictal signature amplitude is scaled by (1 - efficacy).
        Inert when no hook is wired (real recordings)."""
        if self.suppression_hook is None:
            return
        start_s = now / 1e6
        end_s = self.stimulating_until / 1e6 + self.washout_s
        self.suppression_hook(start_s, end_s, 1.0 - self.efficacy)
