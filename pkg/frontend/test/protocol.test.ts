import { describe, expect, it } from "vitest";

import {
  encodeCommand,
  LineSplitter,
  parseMessage,
  type CommandMsg,
} from "../src/protocol";

describe("line splitter", () => {
  it("yields complete lines and buffers partial ones", () => {
    const s = new LineSplitter();
    const first = s.feed('{"type":"alert","alert_id":1,');
    expect(first).toEqual([]);
    const rest = s.feed('"t_us":5,"fused_p":0.9,"action":"notify"}\n{"type":"stim"');
    expect(rest).toHaveLength(1);
    expect(rest[0].type).toBe("alert");
    const tail = s.feed(',"t_us":6,"until_us":7,"alert_id":1,"params":{}}\n');
    expect(tail).toHaveLength(1);
    expect(tail[0].type).toBe("stim");
  });

  it("handles several messages in one chunk", () => {
    const s = new LineSplitter();
    const chunk =
      '{"type":"ack","command_id":"a","applied_at_us":1}\n' +
      '{"type":"reject","command_id":"b","reason":"nope"}\n';
    const msgs = s.feed(chunk);
    expect(msgs.map((m) => m.type)).toEqual(["ack", "reject"]);
  });

  it("skips blank lines", () => {
    const s = new LineSplitter();
    expect(s.feed("\n\n")).toEqual([]);
  });

  it("rejects messages without a type", () => {
    expect(() => parseMessage('{"x":1}')).toThrow(/bad message/);
  });
});

describe("command encoding", () => {
  it("produces one newline-terminated JSON line", () => {
    const cmd: CommandMsg = {
      type: "command",
      command_id: "c1",
      kind: "ack_alert",
      params: { alert_id: 3 },
    };
    const text = encodeCommand(cmd);
    expect(text.endsWith("\n")).toBe(true);
    expect(JSON.parse(text)).toEqual(cmd);
  });
});
