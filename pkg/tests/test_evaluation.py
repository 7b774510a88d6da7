import numpy as np
import pytest

from seizban.evaluation import (
    ConfusionMatrix,
    EventScore,
    confusion,
    detection_latencies_s,
    event_scoring,
    load_report,
    metrics,
    report_to_json,
    write_report,
)


class TestConfusion:
    def test_hand_count(self):
        cm = confusion(["preictal", "preictal", "interictal", "interictal"],
                       [True, False, False, True])
        assert (cm.tp, cm.fn, cm.tn, cm.fp) == (1, 1, 1, 1)

    def test_all_correct(self):
        cm = confusion(["preictal", "interictal"], [True, False])
        assert cm.fp == 0 and cm.fn == 0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length mismatch"):
            confusion(["preictal"], [True, False])

    def test_ictal_windows_excluded(self):
        cm = confusion(["interictal", "preictal"], [True, True], ictal=[True, False])
        assert cm.total == 1 and cm.tp == 1

    def test_undecided_windows_excluded(self):
        cm = confusion(["preictal", "interictal"], [None, False])
        assert cm.total == 1 and cm.tn == 1

    def test_random_streams_match_independent_recount(self):
        rng = np.random.default_rng(5)
        labels = ["preictal" if b else "interictal" for b in rng.random(1000) < 0.3]
        decisions = list(rng.random(1000) < 0.4)
        ictal = list(rng.random(1000) < 0.05)
        cm = confusion(labels, decisions, ictal)
        # brute-force recount oracle
        tp = sum(1 for l, d, i in zip(labels, decisions, ictal)
                 if not i and l == "preictal" and d)
        fn = sum(1 for l, d, i in zip(labels, decisions, ictal)
                 if not i and l == "preictal" and not d)
        fp = sum(1 for l, d, i in zip(labels, decisions, ictal)
                 if not i and l != "preictal" and d)
        tn = sum(1 for l, d, i in zip(labels, decisions, ictal)
                 if not i and l != "preictal" and not d)
        assert (cm.tp, cm.fn, cm.fp, cm.tn) == (tp, fn, fp, tn)


class TestMetrics:
    def test_sensitivity_99(self):
        m = metrics(ConfusionMatrix(tp=99, fn=1, tn=50, fp=5))
        assert m.sensitivity == pytest.approx(0.99)

    def test_all_zero_counts_all_absent(self):
        m = metrics(ConfusionMatrix())
        assert m.sensitivity is None
        assert m.specificity is None
        assert m.accuracy is None
        assert m.as_dict() == {}

    def test_accuracy_arithmetic(self):
        m = metrics(ConfusionMatrix(tp=93, tn=93, fp=7, fn=7))
        assert m.accuracy == pytest.approx(0.93)

    def test_partial_absence(self):
        m = metrics(ConfusionMatrix(tp=5, fn=0, tn=0, fp=0))
        assert m.sensitivity == 1.0
        assert m.specificity is None
        assert m.accuracy == 1.0

    def test_as_dict_rounds_to_four_places(self):
        m = metrics(ConfusionMatrix(tp=1, fn=2, tn=1, fp=0))
        assert m.as_dict()["sensitivity"] == 0.3333


class TestEventScoring:
    def test_alert_inside_horizon_is_true_alarm(self):
        s = event_scoring([550.0], [600.0], horizon_s=300.0)
        assert s == EventScore(true_alarms=1, false_alarms=0, missed_seizures=0)

    def test_alert_after_onset_is_false_alarm(self):
        s = event_scoring([601.0], [600.0], horizon_s=300.0)
        assert s.true_alarms == 0
        assert s.false_alarms == 1
        assert s.missed_seizures == 1

    def test_each_onset_absorbs_one_alert(self):
        s = event_scoring([550.0, 560.0], [600.0], horizon_s=300.0)
        assert s.true_alarms == 1
        assert s.false_alarms == 1

    def test_random_sets_match_brute_force_matcher(self):
        # exhaustive interval-matching oracle: greedy over sorted alerts
        def brute(alerts, onsets, h):
            alerts = sorted(alerts)
            onsets = sorted(o for o in onsets if o - h >= 0)
            used = set()
            ta = 0
            for o in onsets:
                for i, t in enumerate(alerts):
                    if i not in used and o - h <= t < o:
                        used.add(i)
                        ta += 1
                        break
            return ta, len(alerts) - len(used), len(onsets) - ta

        rng = np.random.default_rng(9)
        for _ in range(200):
            n_alerts = int(rng.integers(0, 8))
            n_onsets = int(rng.integers(0, 4))
            alerts = list(rng.uniform(0, 1000, n_alerts))
            onsets = list(rng.uniform(100, 1000, n_onsets))
            h = float(rng.uniform(50, 400))
            got = event_scoring(alerts, onsets, h)
            ta, fa, miss = brute(alerts, onsets, h)
            assert (got.true_alarms, got.false_alarms, got.missed_seizures) == (ta, fa, miss)
            assert got.true_alarms + got.false_alarms == len(alerts)

    def test_detection_latency(self):
        lat = detection_latencies_s([350.0, 400.0], [600.0], horizon_s=300.0)
        assert lat == [50.0]


class TestReportSerialization:
    def test_byte_stable_round_trip(self, tmp_path):
        report = {"b": 1.5, "a": [1, 2, {"z": 0.1, "y": None}], "c": "text"}
        p1, p2 = str(tmp_path / "1.json"), str(tmp_path / "2.json")
        write_report(report, p1)
        write_report(load_report(p1), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_sorted_keys(self):
        assert report_to_json({"b": 1, "a": 2}) == '{"a":2,"b":1}\n'

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            report_to_json({"x": float("nan")})
