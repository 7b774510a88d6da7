// Gateway wire protocol: newline-delimited JSON messages. The same framing
// rides raw TCP and WebSocket text frames, so one frame may carry several
// lines and a line may arrive split across frames.

export interface FusionRule {
  variant: string;
  w_eeg: number;
  w_ecg: number;
  threshold: number;
}

export interface StimParams {
  amplitude_ma: number;
  frequency_hz: number;
  pulse_width_us: number;
  duration_s: number;
}

export interface SnapshotMsg {
  type: "snapshot";
  id?: number;
  t_us: number;
  fusion_rule?: FusionRule;
  stim_params?: StimParams;
  active_alerts?: AlertBody[];
  battery_j?: Record<string, number>;
  replay?: boolean;
}

export interface TelemetryMsg {
  type: "telemetry";
  id?: number;
  t_us: number;
  window_start_us: number;
  p_eeg: number | null;
  p_ecg: number | null;
  fused_p: number | null;
  positive: boolean | null;
  degraded: boolean;
  skipped: boolean;
  battery_j?: Record<string, number>;
}

export interface AlertBody {
  alert_id: number;
  t_us: number;
  fused_p: number;
  windows_us?: number[];
  action: string;
}

export interface AlertMsg extends AlertBody {
  type: "alert";
  id?: number;
}

export interface StimMsg {
  type: "stim";
  id?: number;
  t_us: number;
  until_us: number;
  alert_id: number;
  params: StimParams;
}

export interface AckMsg {
  type: "ack";
  command_id: string;
  applied_at_us: number;
}

export interface RejectMsg {
  type: "reject";
  command_id: string;
  reason: string;
  applied_at_us?: number;
}

export type GatewayMessage =
  | SnapshotMsg
  | TelemetryMsg
  | AlertMsg
  | StimMsg
  | AckMsg
  | RejectMsg;

export type CommandKind = "set_stim_params" | "set_fusion_rule" | "ack_alert";

export interface CommandMsg {
  type: "command";
  command_id: string;
  kind: CommandKind;
  params: Record<string, unknown>;
}

export function encodeCommand(cmd: CommandMsg): string {
  return JSON.stringify(cmd) + "\n";
}

export function parseMessage(line: string): GatewayMessage {
  const msg = JSON.parse(line) as { type?: string };
  if (!msg || typeof msg !== "object" || typeof msg.type !== "string") {
    throw new Error(`bad message: ${line.slice(0, 80)}`);
  }
  return msg as GatewayMessage;
}

/** Accumulates raw text and yields complete newline-terminated messages. */
export class LineSplitter {
  private buffer = "";

  feed(chunk: string): GatewayMessage[] {
    this.buffer += chunk;
    const out: GatewayMessage[] = [];
    for (;;) {
      const idx = this.buffer.indexOf("\n");
      if (idx < 0) return out;
      const line = this.buffer.slice(0, idx).trim();
      this.buffer = this.buffer.slice(idx + 1);
      if (line) out.push(parseMessage(line));
    }
  }
}
