import { beforeEach, describe, expect, it } from "vitest";

import type { CommandMsg, TelemetryMsg } from "../src/protocol";
import { SessionView } from "../src/session";

function telemetry(i: number, extra: Partial<TelemetryMsg> = {}): TelemetryMsg {
  return {
    type: "telemetry",
    id: i,
    t_us: i * 2_000_000,
    window_start_us: i * 2_000_000,
    p_eeg: 0.1,
    p_ecg: 0.2,
    fused_p: 0.15,
    positive: false,
    degraded: false,
    skipped: false,
    ...extra,
  };
}

function connected(opts = {}): { session: SessionView; sent: CommandMsg[] } {
  const session = new SessionView(opts);
  const sent: CommandMsg[] = [];
  session.attachSender((cmd) => sent.push(cmd));
  session.setConnection("connected");
  return { session, sent };
}

describe("telemetry buffer", () => {
  it("keeps newest first and bounds the buffer", () => {
    const { session } = connected({ maxTelemetry: 10 });
    for (let i = 0; i < 25; i++) session.handleMessage(telemetry(i));
    expect(session.telemetry).toHaveLength(10);
    expect(session.telemetry[0].id).toBe(24);
    expect(session.telemetry[9].id).toBe(15);
  });

  it("defaults to a 5000-row buffer", () => {
    const session = new SessionView();
    expect(session.maxTelemetry).toBe(5000);
  });

  it("soaks 10000 messages with alerts retained", () => {
    const { session } = connected({ maxTelemetry: 5000 });
    for (let i = 0; i < 10_000; i++) {
      session.handleMessage(telemetry(i));
      if (i % 2500 === 0) {
        session.handleMessage({
          type: "alert",
          alert_id: i,
          t_us: i * 2_000_000,
          fused_p: 0.99,
          action: "notify",
        });
      }
    }
    expect(session.telemetry).toHaveLength(5000);
    expect(session.alerts).toHaveLength(4);
    expect(session.alerts.every((a) => !a.acknowledged)).toBe(true);
  });
});

describe("ack-gated display state", () => {
  it("applies stim params only after the gateway ack", () => {
    const { session } = connected();
    session.handleMessage({
      type: "snapshot",
      id: 1,
      t_us: 0,
      stim_params: {
        amplitude_ma: 2,
        frequency_hz: 130,
        pulse_width_us: 90,
        duration_s: 30,
      },
    });
    const id = session.submitCommand("set_stim_params", { amplitude_ma: 3 });
    expect(session.stimParams?.amplitude_ma).toBe(2); // not yet
    expect(session.pending).toHaveLength(1);
    session.handleMessage({ type: "ack", command_id: id, applied_at_us: 5 });
    expect(session.stimParams?.amplitude_ma).toBe(3);
    expect(session.stimParams?.frequency_hz).toBe(130); // merged from current
    expect(session.stimParamsSource).toBe(`ack:${id}`);
    expect(session.pending).toHaveLength(0);
  });

  it("keeps the panel unchanged on reject and surfaces the reason verbatim", () => {
    const { session } = connected();
    session.handleMessage({
      type: "snapshot",
      id: 1,
      t_us: 0,
      stim_params: {
        amplitude_ma: 2,
        frequency_hz: 130,
        pulse_width_us: 90,
        duration_s: 30,
      },
    });
    const id = session.submitCommand("set_stim_params", { amplitude_ma: 6 });
    session.handleMessage({
      type: "reject",
      command_id: id,
      reason: "out of range: amplitude_ma=6.0 out of range [0.0, 5.0]",
    });
    expect(session.stimParams?.amplitude_ma).toBe(2);
    expect(session.resolutions[0]).toMatchObject({
      status: "reject",
      reason: "out of range: amplitude_ma=6.0 out of range [0.0, 5.0]",
    });
  });

  it("normalizes fusion weights like the gateway does", () => {
    const { session } = connected();
    const id = session.submitCommand("set_fusion_rule", {
      variant: "WEIGHTED",
      w_eeg: 3,
      w_ecg: 1,
      threshold: 0.4,
    });
    session.handleMessage({ type: "ack", command_id: id, applied_at_us: 1 });
    expect(session.rule?.w_eeg).toBeCloseTo(0.75);
    expect(session.rule?.w_ecg).toBeCloseTo(0.25);
  });

  it("marks commands unresolved after the timeout", () => {
    let now = 1000;
    const session = new SessionView({ commandTimeoutMs: 5000, now: () => now });
    session.attachSender(() => {});
    session.setConnection("connected");
    const id = session.submitCommand("set_stim_params", { amplitude_ma: 3 });
    now += 4999;
    session.tick();
    expect(session.pending).toHaveLength(1);
    now += 2;
    session.tick();
    expect(session.pending).toHaveLength(0);
    expect(session.resolutions[0]).toMatchObject({
      command_id: id,
      status: "unresolved",
    });
  });

  it("refuses to submit while disconnected", () => {
    const session = new SessionView();
    session.attachSender(() => {});
    expect(() => session.submitCommand("ack_alert", { alert_id: 1 })).toThrow(
      /not connected/,
    );
  });
});

describe("alert lifecycle", () => {
  function withAlert() {
    const ctx = connected();
    ctx.session.handleMessage({
      type: "alert",
      id: 9,
      alert_id: 1,
      t_us: 10_000_000,
      fused_p: 0.95,
      action: "notify",
    });
    return ctx;
  }

  it("acknowledging the only alert empties the active list", () => {
    const { session } = withAlert();
    expect(session.unacknowledgedCount).toBe(1);
    const id = session.acknowledgeAlert(1);
    session.handleMessage({ type: "ack", command_id: id, applied_at_us: 12 });
    expect(session.unacknowledgedCount).toBe(0);
    expect(session.alerts[0].acknowledged).toBe(true); // kept in history
  });

  it("unknown-id rejection is surfaced and changes nothing", () => {
    const { session } = withAlert();
    const id = session.acknowledgeAlert(42);
    session.handleMessage({
      type: "reject",
      command_id: id,
      reason: "unknown id: 42",
    });
    expect(session.unacknowledgedCount).toBe(1);
    expect(session.resolutions[0].reason).toBe("unknown id: 42");
  });

  it("unacknowledged alerts sort before acknowledged ones", () => {
    const { session } = withAlert();
    session.handleMessage({
      type: "alert",
      alert_id: 2,
      t_us: 20_000_000,
      fused_p: 0.9,
      action: "notify",
    });
    const id = session.acknowledgeAlert(2);
    session.handleMessage({ type: "ack", command_id: id, applied_at_us: 21 });
    expect(session.alerts.map((a) => [a.alert_id, a.acknowledged])).toEqual([
      [1, false],
      [2, true],
    ]);
  });

  it("reconnect replays active alerts from the snapshot", () => {
    const { session } = withAlert();
    const ackId = session.acknowledgeAlert(1);
    session.handleMessage({ type: "ack", command_id: ackId, applied_at_us: 1 });
    session.setConnection("disconnected");
    expect(session.alerts).toHaveLength(1); // history survives the drop
    // alert 7 was raised while we were away; snapshot carries it
    session.setConnection("connected");
    session.handleMessage({
      type: "snapshot",
      id: 50,
      t_us: 90_000_000,
      active_alerts: [
        { alert_id: 7, t_us: 80_000_000, fused_p: 0.97, action: "notify" },
      ],
    });
    const ids = session.alerts.map((a) => [a.alert_id, a.acknowledged]);
    expect(ids).toEqual([
      [7, false],
      [1, true],
    ]);
    expect(session.alerts[0].sourceId).toBe("snapshot:50");
  });
});

describe("traceability", () => {
  it("rule and params sources point at the message that set them", () => {
    const { session } = connected();
    session.handleMessage({
      type: "snapshot",
      id: 3,
      t_us: 0,
      fusion_rule: { variant: "WEIGHTED", w_eeg: 0.5, w_ecg: 0.5, threshold: 0.5 },
      stim_params: {
        amplitude_ma: 2,
        frequency_hz: 130,
        pulse_width_us: 90,
        duration_s: 30,
      },
    });
    expect(session.ruleSource).toBe("snapshot:3");
    expect(session.stimParamsSource).toBe("snapshot:3");
  });
});
