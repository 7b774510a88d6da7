// Round trip against a live gateway: spawn the simulator CLI with the HTTP
// service attached, connect the console transport over WebSocket, steer the
// stimulation parameters, and verify the change lands in the gateway command
// log and alters the subsequent StimulationEvents. Skips when the simulator
// CLI is not installed.

import { execFileSync, spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { SessionView } from "../src/session";
import { LineTransport, type WebSocketLike } from "../src/transport";

const CLI = "seizban";
const PORT = 48731;

function cliAvailable(): boolean {
  try {
    return spawnSync(CLI, ["--version"], { timeout: 20_000 }).status === 0;
  } catch {
    return false;
  }
}

const available = cliAvailable();
const suite = available ? describe : describe.skip;

function waitFor(
  predicate: () => boolean,
  timeoutMs: number,
  label: string,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  return new Promise((resolve, reject) => {
    const poll = () => {
      if (predicate()) return resolve();
      if (Date.now() > deadline) return reject(new Error(`timeout: ${label}`));
      setTimeout(poll, 50);
    };
    poll();
  });
}

suite("console against a live simulate --serve-http run", () => {
  let dir: string;
  let proc: ChildProcess | null = null;
  let procExit: Promise<number | null> | null = null;

  beforeAll(() => {
    dir = mkdtempSync(join(tmpdir(), "console-itest-"));
    for (const seed of [301, 302]) {
      execFileSync(CLI, [
        "gen-data", "--out", join(dir, `t${seed}.snr`), "--seed", String(seed),
        "--duration", "240", "--onsets", "160", "--horizon", "100",
      ]);
    }
    for (const kind of ["eeg", "ecg"]) {
      execFileSync(CLI, [
        "train", "--kind", kind,
        "--data", join(dir, "t301.snr"), "--data", join(dir, "t302.snr"),
        "--out", join(dir, `${kind}.szm`), "--horizon", "100",
        "--epochs", "80",
      ]);
    }
    const scenario = `
[scenario]
seed = 5

[recording]
source = "synthetic"
duration_s = 240.0
onsets_s = [160.0]

[evaluation]
horizon_s = 100.0

[models]
eeg = "${join(dir, "eeg.szm")}"
ecg = "${join(dir, "ecg.szm")}"

[fusion]
persistence_k = 2
refractory_s = 600.0

[dbs]
present = true
enabled = true
duration_s = 20.0
efficacy = 0.0
`;
    writeFileSync(join(dir, "scenario.toml"), scenario);
  }, 120_000);

  afterAll(() => {
    if (proc && proc.exitCode === null) proc.kill();
  });

  it("acknowledges a stim change, logs it, and applies it to stimulation", async () => {
    proc = spawn(CLI, [
      "simulate", "--config", join(dir, "scenario.toml"),
      "--out", join(dir, "report.json"),
      "--serve-http", String(PORT), "--realtime", "15",
    ]);
    procExit = new Promise((resolve) => proc!.on("exit", resolve));

    const session = new SessionView();
    const transport = new LineTransport({
      url: `ws://127.0.0.1:${PORT}/ws`,
      session,
      wsFactory: (url) => new WebSocket(url) as unknown as WebSocketLike,
      retryMs: 200,
    });
    transport.connect();
    try {
      await waitFor(() => session.connection === "connected", 30_000, "connect");
      await waitFor(() => session.stimParams !== null, 10_000, "snapshot");
      expect(session.stimParams!.amplitude_ma).toBe(2.0);

      // valid change: ack-gated display flips only after the gateway confirms
      const okId = session.submitCommand("set_stim_params", { amplitude_ma: 3.0 });
      expect(session.stimParams!.amplitude_ma).toBe(2.0);
      await waitFor(
        () => session.resolutions.some((r) => r.command_id === okId),
        15_000,
        "ack",
      );
      const ok = session.resolutions.find((r) => r.command_id === okId)!;
      expect(ok.status).toBe("ack");
      expect(ok.applied_at_us).toBeGreaterThanOrEqual(0); // sim timestamp
      expect(session.stimParams!.amplitude_ma).toBe(3.0);

      // out-of-range change: rejected, panel unchanged
      const badId = session.submitCommand("set_stim_params", { amplitude_ma: 6.0 });
      await waitFor(
        () => session.resolutions.some((r) => r.command_id === badId),
        15_000,
        "reject",
      );
      const bad = session.resolutions.find((r) => r.command_id === badId)!;
      expect(bad.status).toBe("reject");
      expect(bad.reason).toMatch(/out of range/);
      expect(session.stimParams!.amplitude_ma).toBe(3.0);

      // the altered params drive the subsequent stimulation
      await waitFor(() => session.stims.length > 0, 60_000, "stimulation");
      expect(session.stims[0].params.amplitude_ma).toBe(3.0);
      await waitFor(() => session.alerts.length > 0, 10_000, "alert shown");
    } finally {
      transport.close();
    }

    const code = await procExit;
    expect(code).toBe(0);
    const report = JSON.parse(readFileSync(join(dir, "report.json"), "utf-8"));
    const acked = report.command_log.filter((c: any) => c.status === "ack");
    const rejected = report.command_log.filter((c: any) => c.status === "reject");
    expect(acked.length).toBeGreaterThanOrEqual(1);
    expect(acked[0].kind).toBe("set_stim_params");
    expect(typeof acked[0].applied_at_us).toBe("number");
    expect(acked[0].applied_at_us).toBeGreaterThanOrEqual(0);
    expect(acked[0].content.amplitude_ma).toBe(3.0);
    expect(rejected.length).toBeGreaterThanOrEqual(1);
    expect(report.stim_events.length).toBeGreaterThanOrEqual(1);
    expect(report.stim_events[0].params.amplitude_ma).toBe(3.0);
  }, 180_000);
});
