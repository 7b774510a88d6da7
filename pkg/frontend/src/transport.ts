// WebSocket line transport with automatic reconnect. The gateway speaks
// newline-delimited JSON; a WS text frame may hold several lines. The socket
// constructor is injectable so Node tests can supply the `ws` package.

import { encodeCommand, LineSplitter, type CommandMsg } from "./protocol";
import type { SessionView } from "./session";

export interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export interface TransportOptions {
  url: string;
  session: SessionView;
  wsFactory?: WebSocketFactory;
  retryMs?: number;
}

export function consoleUrl(host: string, port: number): string {
  return `ws://${host}:${port}/ws`;
}

export class LineTransport {
  private readonly url: string;
  private readonly session: SessionView;
  private readonly wsFactory: WebSocketFactory;
  private readonly retryMs: number;
  private ws: WebSocketLike | null = null;
  private splitter = new LineSplitter();
  private closed = false;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(opts: TransportOptions) {
    this.url = opts.url;
    this.session = opts.session;
    this.wsFactory =
      opts.wsFactory ?? ((url) => new WebSocket(url) as unknown as WebSocketLike);
    this.retryMs = opts.retryMs ?? 2000;
    this.session.attachSender((cmd) => this.send(cmd));
  }

  connect(): void {
    this.closed = false;
    this.open();
  }

  private open(): void {
    this.session.setConnection("connecting");
    this.splitter = new LineSplitter();
    let ws: WebSocketLike;
    try {
      ws = this.wsFactory(this.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    this.ws = ws;
    ws.onopen = () => this.session.setConnection("connected");
    ws.onmessage = (ev) => {
      const text =
        typeof ev.data === "string" ? ev.data : String(ev.data ?? "");
      let msgs;
      try {
        msgs = this.splitter.feed(text.endsWith("\n") ? text : text + "\n");
      } catch {
        return; // malformed line: ignore, keep the session alive
      }
      for (const msg of msgs) this.session.handleMessage(msg);
    };
    ws.onerror = () => {
      // onclose follows; nothing to do here
    };
    ws.onclose = () => {
      this.ws = null;
      this.session.setConnection("disconnected");
      this.scheduleRetry();
    };
  }

  private scheduleRetry(): void {
    if (this.closed || this.retryTimer !== null) return;
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (!this.closed) this.open();
    }, this.retryMs);
  }

  private send(cmd: CommandMsg): void {
    if (this.ws === null) throw new Error("not connected");
    this.ws.send(encodeCommand(cmd));
  }

  close(): void {
    this.closed = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    if (this.ws !== null) {
      this.ws.close();
      this.ws = null;
    }
    this.session.setConnection("disconnected");
  }
}
