/**
 * Wire-format helpers mirroring the recorder's protocol byte for byte:
 * stream-info XML, string sample frames, and the ASCII control messages
 * (resolve/announce on UDP, time-sync replies, the TCP pull handshake).
 */

import { randomBytes } from "crypto";

export const DEFAULT_DISCOVERY_PORT = 16571;

export const RESOLVE_MAGIC = "OPENSYNC-RESOLVE/1";
export const ANNOUNCE_MAGIC = "OPENSYNC-ANNOUNCE/1";
export const TIME_MAGIC = "OPENSYNC-TIME/1";
export const PULL_MAGIC = "OPENSYNC-PULL/1";

export interface StreamInfo {
  name: string;
  streamType: string;
  channelCount: number;
  nominalSrate: number;
  channelFormat: string;
  sourceId: string;
  uid: string;
}

export function newUid(): string {
  return randomBytes(16).toString("hex");
}

/** Monotonic seconds; sub-microsecond resolution, arbitrary epoch. */
export function localClock(): number {
  return Number(process.hrtime.bigint()) / 1e9;
}

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}

/** Matches the recorder's float formatting: integers gain a ".0" suffix. */
export function formatFloat(x: number): string {
  if (Number.isInteger(x) && Number.isFinite(x)) {
    return x.toFixed(1);
  }
  return String(x);
}

export function buildStreamInfoXml(info: StreamInfo): Buffer {
  const xml =
    "<info>" +
    `<name>${escapeXml(info.name)}</name>` +
    `<type>${escapeXml(info.streamType)}</type>` +
    `<channel_count>${info.channelCount}</channel_count>` +
    `<nominal_srate>${formatFloat(info.nominalSrate)}</nominal_srate>` +
    `<channel_format>${escapeXml(info.channelFormat)}</channel_format>` +
    `<source_id>${escapeXml(info.sourceId)}</source_id>` +
    `<uid>${escapeXml(info.uid)}</uid>` +
    "</info>";
  return Buffer.from(xml, "utf-8");
}

/** 1-byte count (1/4/8) followed by that many little-endian length bytes. */
export function encodeLength(n: number): Buffer {
  if (n <= 0xff) {
    return Buffer.from([1, n]);
  }
  if (n <= 0xffffffff) {
    const out = Buffer.alloc(5);
    out[0] = 4;
    out.writeUInt32LE(n, 1);
    return out;
  }
  const out = Buffer.alloc(9);
  out[0] = 8;
  out.writeBigUInt64LE(BigInt(n), 1);
  return out;
}

/**
 * One explicit-timestamp string sample:
 * [0x08][f64 LE timestamp][length prefix][utf-8 payload].
 */
export function encodeMarkerSample(timestamp: number, value: string): Buffer {
  const payload = Buffer.from(value, "utf-8");
  const head = Buffer.alloc(9);
  head[0] = 8;
  head.writeDoubleLE(timestamp, 1);
  return Buffer.concat([head, encodeLength(payload.length), payload]);
}

export interface ResolveRequest {
  predicates: Array<[string, string]>;
  replyPort: number;
  nonce: string;
}

export function parseResolveRequest(data: Buffer): ResolveRequest | null {
  const lines = data.toString("utf-8").split("\n");
  if (lines.length < 4 || lines[0] !== RESOLVE_MAGIC) {
    return null;
  }
  const predicates: Array<[string, string]> = [];
  const queryText = lines[1].trim();
  if (queryText !== "" && queryText !== "*") {
    for (const pair of queryText.split("&")) {
      const eq = pair.indexOf("=");
      if (eq < 0) {
        return null;
      }
      predicates.push([pair.slice(0, eq).trim(), pair.slice(eq + 1).trim()]);
    }
  }
  const replyPort = matchKv(lines[2], "reply-port");
  const nonce = matchKv(lines[3], "nonce");
  if (replyPort === null || nonce === null) {
    return null;
  }
  return { predicates, replyPort: Number(replyPort), nonce };
}

function matchKv(line: string, key: string): string | null {
  const eq = line.indexOf("=");
  if (eq < 0 || line.slice(0, eq) !== key) {
    return null;
  }
  return line.slice(eq + 1);
}

export function matchQuery(info: StreamInfo, predicates: Array<[string, string]>): boolean {
  const fields: Record<string, string> = {
    name: info.name,
    type: info.streamType,
    source_id: info.sourceId,
  };
  return predicates.every(([key, value]) => {
    if (!(key in fields)) {
      return false;
    }
    return value === "*" || fields[key] === value;
  });
}

export function buildAnnounce(nonce: string, host: string, tcpPort: number,
                              infoXml: Buffer): Buffer {
  const head = `${ANNOUNCE_MAGIC}\nnonce=${nonce}\ntcp=${host}:${tcpPort}\n`;
  return Buffer.concat([Buffer.from(head, "utf-8"), infoXml]);
}

export function isTimeRequest(data: Buffer): boolean {
  return data.toString("utf-8").startsWith(TIME_MAGIC + "\n");
}

/** The reply echoes the request and appends the server clock timestamps. */
export function buildTimeReply(request: Buffer, t1: number, t2: number): Buffer {
  const tail = `t1=${t1}\nt2=${t2}\n`;
  return Buffer.concat([request, Buffer.from(tail, "ascii")]);
}

/** Returns the uid once a complete pull request has arrived, else null. */
export function parsePullRequest(data: Buffer): string | null {
  if (!data.includes("\n\n")) {
    return null;
  }
  const lines = data.toString("utf-8").split("\n");
  if (lines[0] !== PULL_MAGIC) {
    return null;
  }
  return matchKv(lines[1], "uid");
}
