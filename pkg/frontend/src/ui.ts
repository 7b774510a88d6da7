// DOM rendering: probability timeline, battery gauges, alert banner, and the
// steering panels. All state lives in SessionView; this module only draws it
// and forwards form submissions.

import type { SessionView } from "./session";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(v: number | null | undefined, digits = 3): string {
  return v === null || v === undefined ? "-" : v.toFixed(digits);
}

export class ConsoleUI {
  private status: HTMLElement;
  private alertBox: HTMLElement;
  private canvas: HTMLCanvasElement;
  private batteries: HTMLElement;
  private paramsPanel: HTMLElement;
  private rulePanel: HTMLElement;
  private commandsPanel: HTMLElement;
  private stimLog: HTMLElement;

  constructor(private root: HTMLElement, private session: SessionView) {
    this.status = el("div", "status disconnected", "disconnected");
    this.alertBox = el("div", "alerts");
    this.canvas = el("canvas", "timeline");
    this.canvas.width = 900;
    this.canvas.height = 220;
    this.batteries = el("div", "batteries");
    this.paramsPanel = el("div", "panel");
    this.rulePanel = el("div", "panel");
    this.commandsPanel = el("div", "panel");
    this.stimLog = el("div", "panel");

    const header = el("header");
    header.append(el("h1", undefined, "caregiver console"), this.status);
    const columns = el("div", "columns");
    const left = el("div", "col");
    left.append(this.alertBox, this.canvas, this.batteries, this.stimLog);
    const right = el("div", "col side");
    right.append(this.paramsPanel, this.rulePanel, this.commandsPanel);
    columns.append(left, right);
    root.append(header, columns);

    session.subscribe(() => this.render());
    this.render();
  }

  render(): void {
    const s = this.session;
    this.status.textContent =
      s.connection + (s.connection === "connected" ? "" : " (retrying)");
    this.status.className = `status ${s.connection}`;

    this.renderAlerts();
    this.drawTimeline();
    this.renderBatteries();
    this.renderParams();
    this.renderRule();
    this.renderCommands();
    this.renderStims();
  }

  private renderAlerts(): void {
    this.alertBox.replaceChildren();
    const alerts = this.session.alerts;
    if (alerts.length === 0) {
      this.alertBox.append(el("div", "alert none", "no alerts"));
      return;
    }
    for (const a of alerts.slice(0, 8)) {
      const row = el("div", a.acknowledged ? "alert acked" : "alert active");
      row.append(
        el(
          "span",
          undefined,
          `#${a.alert_id} @ ${(a.t_us / 1e6).toFixed(1)}s ` +
            `p=${a.fused_p.toFixed(3)} [${a.action}]`,
        ),
      );
      if (!a.acknowledged) {
        const btn = el("button", undefined, "ack");
        btn.onclick = () => {
          try {
            this.session.acknowledgeAlert(a.alert_id);
          } catch {
            /* disconnected: button is decorative until reconnect */
          }
        };
        row.append(btn);
      }
      this.alertBox.append(row);
    }
  }

  private drawTimeline(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width: w, height: h } = this.canvas;
    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "#10151c";
    ctx.fillRect(0, 0, w, h);
    const rows = this.session.telemetry.slice(0, 300).reverse();
    if (rows.length === 0) return;
    const step = w / Math.max(rows.length, 1);
    const y = (p: number) => h - p * (h - 20) - 10;
    const series: Array<["p_eeg" | "p_ecg" | "fused_p", string]> = [
      ["p_eeg", "#4f9dd0"],
      ["p_ecg", "#d0824f"],
      ["fused_p", "#7bd04f"],
    ];
    for (const [key, color] of series) {
      ctx.strokeStyle = color;
      ctx.beginPath();
      let pen = false;
      rows.forEach((row, i) => {
        const v = row[key];
        if (v === null || v === undefined) {
          pen = false;
          return;
        }
        const x = i * step;
        if (pen) ctx.lineTo(x, y(v));
        else ctx.moveTo(x, y(v));
        pen = true;
      });
      ctx.stroke();
    }
    ctx.strokeStyle = "#666";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(0, y(0.5));
    ctx.lineTo(w, y(0.5));
    ctx.stroke();
    ctx.setLineDash([]);
    rows.forEach((row, i) => {
      if (row.degraded) {
        ctx.fillStyle = "rgba(208, 130, 79, 0.25)";
        ctx.fillRect(i * step, 0, Math.max(step, 1), h);
      }
    });
  }

  private renderBatteries(): void {
    this.batteries.replaceChildren(el("h2", undefined, "batteries"));
    const entries = Object.entries(this.session.batteries);
    if (entries.length === 0) {
      this.batteries.append(el("div", "muted", "no battery telemetry yet"));
      return;
    }
    for (const [node, joules] of entries.sort()) {
      const row = el("div", "gauge");
      row.append(el("span", "gauge-label", `${node}: ${joules.toFixed(2)} J`));
      const bar = el("div", "gauge-bar");
      const fill = el("div", "gauge-fill");
      fill.style.width = `${Math.max(0, Math.min(100, joules * 2))}%`;
      bar.append(fill);
      row.append(bar);
      this.batteries.append(row);
    }
  }

  private renderParams(): void {
    const s = this.session;
    this.paramsPanel.replaceChildren(el("h2", undefined, "stimulation"));
    const p = s.stimParams;
    const current = el(
      "div",
      "current",
      p
        ? `amplitude ${p.amplitude_ma} mA | ${p.frequency_hz} Hz | ` +
            `${p.pulse_width_us} us | ${p.duration_s} s`
        : "unknown until snapshot",
    );
    current.title = s.stimParamsSource ?? "";
    this.paramsPanel.append(current);
    const form = el("form");
    const amp = el("input");
    amp.name = "amplitude_ma";
    amp.placeholder = "amplitude mA";
    const submit = el("button", undefined, "set amplitude");
    form.append(amp, submit);
    form.onsubmit = (ev) => {
      ev.preventDefault();
      const value = Number(amp.value);
      if (!Number.isFinite(value)) return;
      try {
        this.session.submitCommand("set_stim_params", { amplitude_ma: value });
      } catch {
        /* disconnected */
      }
    };
    this.paramsPanel.append(form);
  }

  private renderRule(): void {
    const s = this.session;
    this.rulePanel.replaceChildren(el("h2", undefined, "fusion rule"));
    const r = s.rule;
    const current = el(
      "div",
      "current",
      r
        ? `${r.variant} w_eeg=${fmt(r.w_eeg, 2)} w_ecg=${fmt(r.w_ecg, 2)} ` +
            `theta=${fmt(r.threshold, 2)}`
        : "unknown until snapshot",
    );
    current.title = s.ruleSource ?? "";
    this.rulePanel.append(current);
    const form = el("form");
    const we = el("input");
    we.placeholder = "w_eeg";
    const th = el("input");
    th.placeholder = "threshold";
    const submit = el("button", undefined, "set rule");
    form.append(we, th, submit);
    form.onsubmit = (ev) => {
      ev.preventDefault();
      const w = Number(we.value);
      const t = Number(th.value);
      if (!Number.isFinite(w) || !Number.isFinite(t)) return;
      try {
        this.session.submitCommand("set_fusion_rule", {
          variant: "WEIGHTED",
          w_eeg: w,
          w_ecg: 1 - w,
          threshold: t,
        });
      } catch {
        /* disconnected */
      }
    };
    this.rulePanel.append(form);
  }

  private renderCommands(): void {
    this.commandsPanel.replaceChildren(el("h2", undefined, "commands"));
    for (const c of this.session.pending) {
      this.commandsPanel.append(
        el("div", "cmd pending", `${c.kind} ${c.command_id} ... pending`),
      );
    }
    for (const r of this.session.resolutions.slice(0, 6)) {
      const label =
        r.status === "ack"
          ? `${r.kind} acknowledged @ ${fmt((r.applied_at_us ?? 0) / 1e6, 2)}s`
          : r.status === "reject"
            ? `${r.kind} rejected: ${r.reason}`
            : `${r.kind} unresolved (timeout)`;
      this.commandsPanel.append(el("div", `cmd ${r.status}`, label));
    }
  }

  private renderStims(): void {
    this.stimLog.replaceChildren(el("h2", undefined, "stimulations"));
    for (const s of this.session.stims.slice(-5).reverse()) {
      this.stimLog.append(
        el(
          "div",
          "stim",
          `alert #${s.alert_id}: ${(s.t_us / 1e6).toFixed(1)}s -> ` +
            `${(s.until_us / 1e6).toFixed(1)}s @ ${s.params.amplitude_ma} mA`,
        ),
      );
    }
  }
}
