// SessionView: everything the console displays, driven purely by gateway
// messages. Displayed rule and stim params are ack-gated: they change only
// on a snapshot or when the gateway acknowledges one of our own commands,
// never optimistically. Unacknowledged alerts survive any buffer pressure.

import type {
  AlertBody,
  CommandKind,
  CommandMsg,
  FusionRule,
  GatewayMessage,
  StimMsg,
  StimParams,
  TelemetryMsg,
} from "./protocol";

export type ConnectionState = "connecting" | "connected" | "disconnected";

export interface AlertEntry extends AlertBody {
  acknowledged: boolean;
  sourceId: string; // message id this entry is traceable to
}

export interface PendingCommand {
  command_id: string;
  kind: CommandKind;
  params: Record<string, unknown>;
  sent_at_ms: number;
}

export interface CommandResolution {
  command_id: string;
  kind: CommandKind;
  status: "ack" | "reject" | "unresolved";
  reason?: string;
  applied_at_us?: number;
}

export const DEFAULT_TELEMETRY_BUFFER = 5000;
export const DEFAULT_COMMAND_TIMEOUT_MS = 5000;

export interface SessionOptions {
  maxTelemetry?: number;
  commandTimeoutMs?: number;
  now?: () => number;
}

export class SessionView {
  connection: ConnectionState = "disconnected";
  telemetry: TelemetryMsg[] = []; // newest first, bounded
  stims: StimMsg[] = [];
  rule: FusionRule | null = null;
  ruleSource: string | null = null;
  stimParams: StimParams | null = null;
  stimParamsSource: string | null = null;
  batteries: Record<string, number> = {};
  pending: PendingCommand[] = [];
  resolutions: CommandResolution[] = [];

  readonly maxTelemetry: number;
  readonly commandTimeoutMs: number;

  private alertList: AlertEntry[] = [];
  private sender: ((cmd: CommandMsg) => void) | null = null;
  private listeners: Array<() => void> = [];
  private commandCounter = 0;
  private now: () => number;

  constructor(opts: SessionOptions = {}) {
    this.maxTelemetry = opts.maxTelemetry ?? DEFAULT_TELEMETRY_BUFFER;
    this.commandTimeoutMs = opts.commandTimeoutMs ?? DEFAULT_COMMAND_TIMEOUT_MS;
    this.now = opts.now ?? (() => Date.now());
  }

  /** Alerts for display: unacknowledged first, newest first within a group. */
  get alerts(): AlertEntry[] {
    const unacked = this.alertList.filter((a) => !a.acknowledged);
    const acked = this.alertList.filter((a) => a.acknowledged);
    const newestFirst = (a: AlertEntry, b: AlertEntry) => b.t_us - a.t_us;
    return [...unacked.sort(newestFirst), ...acked.sort(newestFirst)];
  }

  get unacknowledgedCount(): number {
    return this.alertList.filter((a) => !a.acknowledged).length;
  }

  subscribe(fn: () => void): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((f) => f !== fn);
    };
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  attachSender(fn: (cmd: CommandMsg) => void): void {
    this.sender = fn;
  }

  setConnection(state: ConnectionState): void {
    this.connection = state;
    this.notify();
  }

  handleMessage(msg: GatewayMessage): void {
    switch (msg.type) {
      case "snapshot": {
        const source = `snapshot:${msg.id ?? 0}`;
        if (msg.fusion_rule) {
          this.rule = msg.fusion_rule;
          this.ruleSource = source;
        }
        if (msg.stim_params) {
          this.stimParams = msg.stim_params;
          this.stimParamsSource = source;
        }
        if (msg.battery_j) this.batteries = { ...msg.battery_j };
        // replayed state: the gateway's unacknowledged alerts replace ours;
        // locally acknowledged history is kept
        const acked = this.alertList.filter((a) => a.acknowledged);
        const active = (msg.active_alerts ?? []).map((a) => ({
          ...a,
          acknowledged: false,
          sourceId: source,
        }));
        const activeIds = new Set(active.map((a) => a.alert_id));
        this.alertList = [
          ...active,
          ...acked.filter((a) => !activeIds.has(a.alert_id)),
        ];
        break;
      }
      case "telemetry": {
        this.telemetry.unshift(msg);
        if (this.telemetry.length > this.maxTelemetry) {
          this.telemetry.length = this.maxTelemetry;
        }
        if (msg.battery_j) this.batteries = { ...msg.battery_j };
        break;
      }
      case "alert": {
        if (!this.alertList.some((a) => a.alert_id === msg.alert_id)) {
          this.alertList.push({
            alert_id: msg.alert_id,
            t_us: msg.t_us,
            fused_p: msg.fused_p,
            windows_us: msg.windows_us,
            action: msg.action,
            acknowledged: false,
            sourceId: `alert:${msg.id ?? 0}`,
          });
        }
        break;
      }
      case "stim": {
        this.stims.push(msg);
        break;
      }
      case "ack": {
        const cmd = this.takePending(msg.command_id);
        if (!cmd) break;
        this.resolve({
          command_id: cmd.command_id,
          kind: cmd.kind,
          status: "ack",
          applied_at_us: msg.applied_at_us,
        });
        this.applyAcknowledged(cmd, `ack:${msg.command_id}`);
        break;
      }
      case "reject": {
        const cmd = this.takePending(msg.command_id);
        if (!cmd) break;
        // reject reason surfaced verbatim; panel state untouched
        this.resolve({
          command_id: cmd.command_id,
          kind: cmd.kind,
          status: "reject",
          reason: msg.reason,
        });
        break;
      }
    }
    this.notify();
  }

  private takePending(commandId: string): PendingCommand | undefined {
    const idx = this.pending.findIndex((c) => c.command_id === commandId);
    if (idx < 0) return undefined;
    return this.pending.splice(idx, 1)[0];
  }

  private resolve(res: CommandResolution): void {
    this.resolutions.unshift(res);
    if (this.resolutions.length > 50) this.resolutions.length = 50;
  }

  /** State changes allowed only once the gateway confirmed the command. */
  private applyAcknowledged(cmd: PendingCommand, source: string): void {
    if (cmd.kind === "set_stim_params") {
      const base: StimParams = this.stimParams ?? {
        amplitude_ma: 0,
        frequency_hz: 0,
        pulse_width_us: 0,
        duration_s: 0,
      };
      // the gateway fills omitted fields from its current params; mirror that
      this.stimParams = {
        amplitude_ma: num(cmd.params.amplitude_ma, base.amplitude_ma),
        frequency_hz: num(cmd.params.frequency_hz, base.frequency_hz),
        pulse_width_us: num(cmd.params.pulse_width_us, base.pulse_width_us),
        duration_s: num(cmd.params.duration_s, base.duration_s),
      };
      this.stimParamsSource = source;
    } else if (cmd.kind === "set_fusion_rule") {
      const we = num(cmd.params.w_eeg, 0.5);
      const wc = num(cmd.params.w_ecg, 0.5);
      const total = we + wc || 1;
      this.rule = {
        variant: String(cmd.params.variant ?? "WEIGHTED"),
        w_eeg: we / total,
        w_ecg: wc / total,
        threshold: num(cmd.params.threshold, 0.5),
      };
      this.ruleSource = source;
    } else if (cmd.kind === "ack_alert") {
      const id = num(cmd.params.alert_id, -1);
      const alert = this.alertList.find((a) => a.alert_id === id);
      if (alert) alert.acknowledged = true;
    }
  }

  submitCommand(kind: CommandKind, params: Record<string, unknown>): string {
    if (this.connection !== "connected" || this.sender === null) {
      throw new Error("not connected");
    }
    this.commandCounter += 1;
    const command_id = `c${this.commandCounter}-${this.now().toString(36)}`;
    const cmd: CommandMsg = { type: "command", command_id, kind, params };
    this.pending.push({ command_id, kind, params, sent_at_ms: this.now() });
    this.sender(cmd);
    this.notify();
    return command_id;
  }

  acknowledgeAlert(alertId: number): string {
    return this.submitCommand("ack_alert", { alert_id: alertId });
  }

  /** Expire commands that never resolved (call periodically). */
  tick(nowMs?: number): void {
    const t = nowMs ?? this.now();
    const expired = this.pending.filter(
      (c) => t - c.sent_at_ms >= this.commandTimeoutMs,
    );
    if (expired.length === 0) return;
    this.pending = this.pending.filter(
      (c) => t - c.sent_at_ms < this.commandTimeoutMs,
    );
    for (const cmd of expired) {
      this.resolve({
        command_id: cmd.command_id,
        kind: cmd.kind,
        status: "unresolved",
      });
    }
    this.notify();
  }
}

function num(value: unknown, fallback: number): number {
  return typeof value === "number" && Number.isFinite(value) ? value : fallback;
}
