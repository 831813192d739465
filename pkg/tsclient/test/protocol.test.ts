import { describe, expect, it } from "vitest";

import {
  buildAnnounce,
  buildStreamInfoXml,
  buildTimeReply,
  encodeLength,
  encodeMarkerSample,
  formatFloat,
  matchQuery,
  newUid,
  parsePullRequest,
  parseResolveRequest,
  StreamInfo,
} from "../src/protocol";

const info: StreamInfo = {
  name: "M",
  streamType: "Markers",
  channelCount: 1,
  nominalSrate: 0.0,
  channelFormat: "string",
  sourceId: "m1",
  uid: "00112233445566778899aabbccddeeff",
};

describe("stream info XML", () => {
  it("matches the recorder's encoding byte for byte", () => {
    const expected =
      "<info><name>M</name><type>Markers</type>" +
      "<channel_count>1</channel_count><nominal_srate>0.0</nominal_srate>" +
      "<channel_format>string</channel_format><source_id>m1</source_id>" +
      "<uid>00112233445566778899aabbccddeeff</uid></info>";
    expect(buildStreamInfoXml(info).toString("utf-8")).toBe(expected);
  });

  it("escapes markup in text fields", () => {
    const spicy = { ...info, name: "a&b<c>" };
    const xml = buildStreamInfoXml(spicy).toString("utf-8");
    expect(xml).toContain("<name>a&amp;b&lt;c&gt;</name>");
  });

  it("formats whole-number rates with a trailing .0", () => {
    expect(formatFloat(0)).toBe("0.0");
    expect(formatFloat(250)).toBe("250.0");
    expect(formatFloat(62.5)).toBe("62.5");
  });
});

describe("sample frames", () => {
  it("marker frame layout: flag, f64 timestamp, length, utf-8", () => {
    const frame = encodeMarkerSample(123.5, "left");
    const expected = Buffer.concat([
      Buffer.from([0x08]),
      (() => { const b = Buffer.alloc(8); b.writeDoubleLE(123.5); return b; })(),
      Buffer.from([0x01, 0x04]),
      Buffer.from("left", "utf-8"),
    ]);
    expect(frame.equals(expected)).toBe(true);
  });

  it("length prefixes grow at 256 bytes", () => {
    expect(encodeLength(4).equals(Buffer.from([1, 4]))).toBe(true);
    const long = encodeLength(300);
    expect(long[0]).toBe(4);
    expect(long.readUInt32LE(1)).toBe(300);
  });

  it("multi-byte text survives encoding", () => {
    const frame = encodeMarkerSample(1.0, "日本語");
    const payload = Buffer.from("日本語", "utf-8");
    expect(frame.length).toBe(9 + 2 + payload.length);
    expect(frame.subarray(11).equals(payload)).toBe(true);
  });
});

describe("control messages", () => {
  it("parses resolve requests and matches queries", () => {
    const data = Buffer.from(
      "OPENSYNC-RESOLVE/1\ntype=Markers\nreply-port=40001\nnonce=abcdef0123456789\n",
      "utf-8");
    const request = parseResolveRequest(data);
    expect(request).not.toBeNull();
    expect(request!.replyPort).toBe(40001);
    expect(request!.nonce).toBe("abcdef0123456789");
    expect(matchQuery(info, request!.predicates)).toBe(true);
    expect(matchQuery({ ...info, streamType: "EEG" }, request!.predicates)).toBe(false);
    expect(matchQuery(info, [["type", "*"]])).toBe(true);
    const empty = parseResolveRequest(Buffer.from(
      "OPENSYNC-RESOLVE/1\n\nreply-port=1\nnonce=00\n", "utf-8"));
    expect(matchQuery(info, empty!.predicates)).toBe(true);
  });

  it("announce carries nonce, endpoint, then the XML", () => {
    const xml = buildStreamInfoXml(info);
    const announce = buildAnnounce("aa".repeat(8), "127.0.0.1", 5123, xml);
    const text = announce.toString("utf-8");
    expect(text.startsWith(
      `OPENSYNC-ANNOUNCE/1\nnonce=${"aa".repeat(8)}\ntcp=127.0.0.1:5123\n<info>`))
      .toBe(true);
  });

  it("time replies echo the request and append t1/t2", () => {
    const request = Buffer.from(
      "OPENSYNC-TIME/1\nnonce=0011223344556677\nt0=1.5\n", "ascii");
    const reply = buildTimeReply(request, 2.25, 2.5).toString("ascii");
    expect(reply).toBe(
      "OPENSYNC-TIME/1\nnonce=0011223344556677\nt0=1.5\nt1=2.25\nt2=2.5\n");
  });

  it("pull requests parse once the blank line arrives", () => {
    const partial = Buffer.from("OPENSYNC-PULL/1\nuid=ab", "ascii");
    expect(parsePullRequest(partial)).toBeNull();
    const full = Buffer.from(`OPENSYNC-PULL/1\nuid=${info.uid}\n\n`, "ascii");
    expect(parsePullRequest(full)).toBe(info.uid);
  });

  it("uids are 32 hex characters and unique", () => {
    const a = newUid();
    const b = newUid();
    expect(a).toMatch(/^[0-9a-f]{32}$/);
    expect(a).not.toBe(b);
  });
});
