"""Window-level metrics (sensitivity / specificity / accuracy), event-level
alarm scoring, and the structured run report.

Windows flagged ictal are excluded from scoring: the task is prediction, not
detection.  Ratios with an empty denominator are reported as absent, never
as zero or NaN.  The report serializes to canonical JSON (sorted keys, fixed
float formatting) so identical runs produce byte-identical files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional, Sequence


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
        )


def confusion(
    labels: Sequence[str],
    decisions: Sequence[Optional[bool]],
    ictal: Optional[Sequence[bool]] = None,
) -> ConfusionMatrix:
    """Standard 2x2 count over scored windows.

    labels are "preictal"/"interictal" ground truth; decisions are the fused
    positives.  Ictal-flagged windows and windows without a decision (both
    verdicts lost) are excluded.
    """
    if len(labels) != len(decisions):
        raise ValueError(
            f"length mismatch: {len(labels)} labels vs {len(decisions)} decisions"
        )
    if ictal is not None and len(ictal) != len(labels):
        raise ValueError("length mismatch: ictal flags")
    tp = fp = tn = fn = 0
    for i, (lab, dec) in enumerate(zip(labels, decisions)):
        if ictal is not None and ictal[i]:
            continue
        if dec is None:
            continue
        if lab == "preictal":
            if dec:
                tp += 1
            else:
                fn += 1
        else:
            if dec:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass(frozen=True)
class MetricsReport:
    sensitivity: Optional[float]
    specificity: Optional[float]
    accuracy: Optional[float]
    false_alarms_per_hour: Optional[float] = None
    mean_detection_latency_s: Optional[float] = None

    def as_dict(self) -> dict:
        out: dict[str, Any] = {}
        for name in ("sensitivity", "specificity", "accuracy",
                     "false_alarms_per_hour", "mean_detection_latency_s"):
            val = getattr(self, name)
            if val is not None:
                out[name] = round(val, 4)
        return out


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    def ratio(num: int, den: int) -> Optional[float]:
        return num / den if den > 0 else None

    return MetricsReport(
        sensitivity=ratio(cm.tp, cm.tp + cm.fn),
        specificity=ratio(cm.tn, cm.tn + cm.fp),
        accuracy=ratio(cm.tp + cm.tn, cm.total),
    )


@dataclass(frozen=True)
class EventScore:
    true_alarms: int
    false_alarms: int
    missed_seizures: int


def event_scoring(
    alert_times_s: Sequence[float],
    onsets_s: Sequence[float],
    horizon_s: float,
    sop_s: Optional[float] = None,
) -> EventScore:
    """Alarm-level scoring: an alert is true iff it falls inside the
    prediction window [onset - w, onset) of some onset, where w is the
    seizure occurrence period (defaults to the horizon).  Each onset absorbs
    at most one true alarm; onsets with no alert in their window are missed.
    Only onsets whose window lies inside the recording (onset >= w) count
    toward missed totals.
    """
    w = horizon_s if sop_s is None else sop_s
    alerts = sorted(alert_times_s)
    used = [False] * len(alerts)
    true_alarms = 0
    missed = 0
    for onset in sorted(onsets_s):
        if onset - w < 0:
            continue
        hit = False
        for i, t in enumerate(alerts):
            if not used[i] and onset - w <= t < onset:
                used[i] = True
                hit = True
                true_alarms += 1
                break
        if not hit:
            missed += 1
    false_alarms = used.count(False)
    return EventScore(true_alarms=true_alarms, false_alarms=false_alarms,
                      missed_seizures=missed)


def detection_latencies_s(
    alert_times_s: Sequence[float],
    onsets_s: Sequence[float],
    horizon_s: float,
) -> list[float]:
    """Per detected onset: first alert time minus the horizon start."""
    out = []
    for onset in sorted(onsets_s):
        lo = onset - horizon_s
        hits = [t for t in alert_times_s if lo <= t < onset]
        if hits:
            out.append(min(hits) - lo)
    return out


# -- canonical report serialization ------------------------------------------------


def _canon(obj: Any) -> Any:
    """Normalize floats and containers for byte-stable JSON."""
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            raise ValueError("non-finite value in report")
        return obj
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    return obj


def report_to_json(report: dict) -> str:
    """Canonical JSON: sorted keys, no whitespace drift, repr floats."""
    return json.dumps(_canon(report), sort_keys=True, separators=(",", ":"),
                      allow_nan=False) + "\n"


def write_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_to_json(report))


def load_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
