import * as dgram from "dgram";
import * as net from "net";

import { afterEach, describe, expect, it } from "vitest";

import { keyboard, marker, streamKeypress, streamMarker } from "../src/index";
import { MarkerOutlet } from "../src/outlet";

function freePort(): number {
  return 20000 + Math.floor(Math.random() * 39000);
}

const cleanup: MarkerOutlet[] = [];

afterEach(async () => {
  while (cleanup.length > 0) {
    await cleanup.pop()!.close();
  }
});

function track(outlet: MarkerOutlet): MarkerOutlet {
  cleanup.push(outlet);
  return outlet;
}

/** Minimal test-side consumer: resolve over UDP, then pull over TCP. */
async function resolveAnnounce(port: number, query: string): Promise<string> {
  const sock = dgram.createSocket("udp4");
  try {
    return await new Promise<string>((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("resolve timeout")), 3000);
      sock.on("message", (data) => {
        clearTimeout(timer);
        resolve(data.toString("utf-8"));
      });
      sock.bind(0, () => {
        const replyPort = (sock.address() as net.AddressInfo).port;
        const request = Buffer.from(
          `OPENSYNC-RESOLVE/1\n${query}\nreply-port=${replyPort}\n` +
          `nonce=${"ab".repeat(8)}\n`, "utf-8");
        sock.send(request, port, "127.0.0.1");
      });
    });
  } finally {
    sock.close();
  }
}

interface PulledSample {
  timestamp: number;
  value: string;
}

async function pullSamples(tcpPort: number, uid: string,
                           expected: number): Promise<PulledSample[]> {
  const socket = net.connect(tcpPort, "127.0.0.1");
  const samples: PulledSample[] = [];
  let buf = Buffer.alloc(0);
  let xmlSeen = false;
  return new Promise((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error(`pull timeout with ${samples.length} samples`)),
      5000);
    socket.on("connect", () => {
      socket.write(`OPENSYNC-PULL/1\nuid=${uid}\n\n`);
    });
    socket.on("error", reject);
    socket.on("data", (chunk) => {
      buf = Buffer.concat([buf, chunk]);
      if (!xmlSeen) {
        if (buf.length < 4) return;
        const xmlLen = buf.readUInt32LE(0);
        if (xmlLen === 0) {
          clearTimeout(timer);
          socket.destroy();
          reject(new Error("handshake rejected"));
          return;
        }
        if (buf.length < 4 + xmlLen) return;
        buf = buf.subarray(4 + xmlLen);
        xmlSeen = true;
      }
      while (buf.length > 0) {
        if (buf[0] !== 8 || buf.length < 9 + 2) return;
        const timestamp = buf.readDoubleLE(1);
        const numlen = buf[9];
        if (buf.length < 10 + numlen) return;
        const size = numlen === 1 ? buf[10] : buf.readUInt32LE(10);
        const start = 10 + numlen;
        if (buf.length < start + size) return;
        samples.push({
          timestamp,
          value: buf.subarray(start, start + size).toString("utf-8"),
        });
        buf = buf.subarray(start + size);
      }
      if (samples.length >= expected) {
        clearTimeout(timer);
        socket.destroy();
        resolve(samples);
      }
    });
  });
}

describe("marker outlet end to end", () => {
  it("answers resolve queries with a parseable announce", async () => {
    const port = freePort();
    const outlet = track(marker("Stimuli", { discoveryPort: port }));
    await outlet.ready;
    const announce = await resolveAnnounce(port, "type=Markers");
    expect(announce.startsWith("OPENSYNC-ANNOUNCE/1\n")).toBe(true);
    expect(announce).toContain(`tcp=127.0.0.1:${outlet.tcpPort}`);
    expect(announce).toContain(`<uid>${outlet.info.uid}</uid>`);
  });

  it("stays silent for non-matching queries", async () => {
    const port = freePort();
    const outlet = track(marker("Stimuli", { discoveryPort: port }));
    await outlet.ready;
    await expect(resolveAnnounce(port, "type=EEG")).rejects.toThrow("timeout");
  });

  it("serves buffered and live samples in order", async () => {
    const port = freePort();
    const outlet = track(marker("Stimuli", { discoveryPort: port }));
    await outlet.ready;
    streamMarker(outlet, "stim_01");
    streamMarker(outlet, 42);
    const pulling = pullSamples(outlet.tcpPort, outlet.info.uid, 3);
    setTimeout(() => streamMarker(outlet, "stim_02"), 50);
    const samples = await pulling;
    expect(samples.map((s) => s.value)).toEqual(["stim_01", "42", "stim_02"]);
    const times = samples.map((s) => s.timestamp);
    expect([...times].sort((a, b) => a - b)).toEqual(times);
  });

  it("rejects unknown uids with a zero-length header", async () => {
    const port = freePort();
    const outlet = track(marker("Stimuli", { discoveryPort: port }));
    await outlet.ready;
    await expect(pullSamples(outlet.tcpPort, "00".repeat(16), 1))
      .rejects.toThrow("handshake rejected");
  });

  it("drops oldest beyond capacity and counts the drops", async () => {
    const port = freePort();
    const outlet = track(marker("Stimuli", { discoveryPort: port, capacity: 10 }));
    await outlet.ready;
    for (let i = 0; i < 25; i += 1) {
      streamMarker(outlet, `m${i}`);
    }
    expect(outlet.dropped).toBe(15);
    const samples = await pullSamples(outlet.tcpPort, outlet.info.uid, 10);
    expect(samples[0].value).toBe("m15");
    expect(samples[9].value).toBe("m24");
  });

  it("rejects non-integer numbers", async () => {
    const port = freePort();
    const outlet = track(marker("Stimuli", { discoveryPort: port }));
    await outlet.ready;
    expect(() => streamMarker(outlet, 3.14)).toThrow(TypeError);
  });

  it("answers time-sync requests with appended server stamps", async () => {
    const port = freePort();
    const outlet = track(marker("Stimuli", { discoveryPort: port }));
    await outlet.ready;
    const sock = dgram.createSocket("udp4");
    const reply = await new Promise<string>((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("time timeout")), 3000);
      sock.on("message", (data) => {
        clearTimeout(timer);
        resolve(data.toString("ascii"));
      });
      sock.bind(0, () => {
        sock.send(Buffer.from(
          "OPENSYNC-TIME/1\nnonce=0123456789abcdef\nt0=12.5\n", "ascii"),
          port, "127.0.0.1");
      });
    });
    sock.close();
    const lines = reply.trim().split("\n");
    expect(lines[0]).toBe("OPENSYNC-TIME/1");
    expect(lines[1]).toBe("nonce=0123456789abcdef");
    expect(lines[2]).toBe("t0=12.5");
    const t1 = Number(lines[3].split("=")[1]);
    const t2 = Number(lines[4].split("=")[1]);
    expect(t2).toBeGreaterThanOrEqual(t1);
  });
});

describe("keyboard outlet", () => {
  it("streams key names with type Keyboard", async () => {
    const port = freePort();
    const outlet = track(keyboard("Keys", { discoveryPort: port }));
    await outlet.ready;
    expect(outlet.info.streamType).toBe("Keyboard");
    for (const key of ["space", "left", "right"]) {
      streamKeypress(outlet, key);
    }
    const samples = await pullSamples(outlet.tcpPort, outlet.info.uid, 3);
    expect(samples.map((s) => s.value)).toEqual(["space", "left", "right"]);
    expect(() => streamKeypress(outlet, 7 as unknown as string))
      .toThrow(TypeError);
  });

  it("order and count survive a 100-keypress burst", async () => {
    const port = freePort();
    const outlet = track(keyboard("Keys", { discoveryPort: port }));
    await outlet.ready;
    const pulling = pullSamples(outlet.tcpPort, outlet.info.uid, 100);
    await new Promise((resolve) => setTimeout(resolve, 50));
    for (let i = 0; i < 100; i += 1) {
      streamKeypress(outlet, `key_${i}`);
      await new Promise((resolve) => setTimeout(resolve, 1));
    }
    const samples = await pulling;
    expect(samples.length).toBe(100);
    expect(samples.map((s) => s.value))
      .toEqual([...Array(100).keys()].map((i) => `key_${i}`));
  });
});
