/**
 * Outlet-only streaming endpoint: answers discovery and time-sync datagrams
 * on the discovery port, serves one TCP pull session, and buffers samples
 * in a bounded drop-oldest queue so the caller's thread never blocks on a
 * slow or absent consumer.
 */

import * as dgram from "dgram";
import * as net from "net";
import * as os from "os";

import {
  DEFAULT_DISCOVERY_PORT,
  StreamInfo,
  buildAnnounce,
  buildStreamInfoXml,
  buildTimeReply,
  encodeMarkerSample,
  isTimeRequest,
  localClock,
  matchQuery,
  newUid,
  parsePullRequest,
  parseResolveRequest,
} from "./protocol";

export interface OutletOptions {
  streamType?: string;
  sourceId?: string;
  discoveryPort?: number;
  capacity?: number;
}

interface BufferedSample {
  timestamp: number;
  value: string;
}

export class MarkerOutlet {
  readonly info: StreamInfo;
  readonly discoveryPort: number;
  readonly ready: Promise<void>;

  private readonly capacity: number;
  private queue: BufferedSample[] = [];
  private sessions: net.Socket[] = [];
  private droppedCount = 0;
  private pushedCount = 0;
  private closed = false;
  private server: net.Server;
  private responder: dgram.Socket;
  private boundTcpPort = 0;

  constructor(name: string, options: OutletOptions = {}) {
    this.info = {
      name,
      streamType: options.streamType ?? "Markers",
      channelCount: 1,
      nominalSrate: 0.0,
      channelFormat: "string",
      sourceId: options.sourceId ?? `${name.toLowerCase()}-client`,
      uid: newUid(),
    };
    this.discoveryPort = options.discoveryPort ?? DEFAULT_DISCOVERY_PORT;
    this.capacity = options.capacity ?? 1000;
    if (this.capacity <= 0) {
      throw new RangeError(`capacity must be positive, got ${this.capacity}`);
    }

    this.server = net.createServer((socket) => this.handleSession(socket));
    this.responder = dgram.createSocket({ type: "udp4", reuseAddr: true });
    this.responder.on("message", (data, rinfo) => this.handleDatagram(data, rinfo));
    this.responder.on("error", () => { /* closed under us */ });

    this.ready = new Promise((resolve, reject) => {
      this.server.once("error", reject);
      this.server.listen(0, () => {
        this.boundTcpPort = (this.server.address() as net.AddressInfo).port;
        this.responder.once("error", reject);
        this.responder.bind(this.discoveryPort, () => resolve());
      });
    });
  }

  get tcpPort(): number {
    return this.boundTcpPort;
  }

  get dropped(): number {
    return this.droppedCount;
  }

  get pushed(): number {
    return this.pushedCount;
  }

  /**
   * Queue one sample, stamped now unless a timestamp is given. Integers are
   * serialized as decimal text; no consumer attached is not an error.
   */
  pushSample(value: string | number, timestamp?: number): void {
    if (this.closed) {
      throw new Error(`outlet ${this.info.name} is closed`);
    }
    let text: string;
    if (typeof value === "string") {
      text = value;
    } else if (typeof value === "number" && Number.isInteger(value)) {
      text = String(value);
    } else {
      throw new TypeError(`marker values are text or integers, got ${value}`);
    }
    const sample = { timestamp: timestamp ?? localClock(), value: text };
    this.pushedCount += 1;
    const session = this.activeSession();
    if (session !== null) {
      session.write(encodeMarkerSample(sample.timestamp, sample.value));
      return;
    }
    if (this.queue.length >= this.capacity) {
      this.queue.shift();
      this.droppedCount += 1;
    }
    this.queue.push(sample);
  }

  close(): Promise<void> {
    if (this.closed) {
      return Promise.resolve();
    }
    this.closed = true;
    for (const socket of this.sessions) {
      socket.end();
    }
    this.responder.close();
    return new Promise((resolve) => this.server.close(() => resolve()));
  }

  private activeSession(): net.Socket | null {
    while (this.sessions.length > 0) {
      const socket = this.sessions[0];
      if (socket.destroyed || socket.writableEnded) {
        this.sessions.shift();
        continue;
      }
      return socket;
    }
    return null;
  }

  private handleSession(socket: net.Socket): void {
    let request = Buffer.alloc(0);
    const onData = (chunk: Buffer) => {
      request = Buffer.concat([request, chunk]);
      if (request.length > 4096) {
        socket.destroy();
        return;
      }
      const uid = parsePullRequest(request);
      if (uid === null) {
        return; // handshake incomplete
      }
      socket.off("data", onData);
      if (uid !== this.info.uid) {
        const reject = Buffer.alloc(4); // zero-length header: unknown uid
        socket.end(reject);
        return;
      }
      const xml = buildStreamInfoXml(this.info);
      const head = Buffer.alloc(4);
      head.writeUInt32LE(xml.length, 0);
      socket.write(Buffer.concat([head, xml]));
      // hand over everything buffered so far, then stream live pushes
      const backlog = this.queue;
      this.queue = [];
      for (const sample of backlog) {
        socket.write(encodeMarkerSample(sample.timestamp, sample.value));
      }
      this.sessions.push(socket);
    };
    socket.on("data", onData);
    socket.on("error", () => socket.destroy());
  }

  private handleDatagram(data: Buffer, rinfo: dgram.RemoteInfo): void {
    const received = localClock();
    if (isTimeRequest(data)) {
      const reply = buildTimeReply(data, received, localClock());
      this.responder.send(reply, rinfo.port, rinfo.address);
      return;
    }
    const request = parseResolveRequest(data);
    if (request === null || !matchQuery(this.info, request.predicates)) {
      return;
    }
    const host = this.announceHost(rinfo.address);
    const announce = buildAnnounce(request.nonce, host, this.boundTcpPort,
                                   buildStreamInfoXml(this.info));
    this.responder.send(announce, request.replyPort, rinfo.address);
  }

  private announceHost(peer: string): string {
    if (peer.startsWith("127.") || peer === "::1") {
      return "127.0.0.1";
    }
    for (const addrs of Object.values(os.networkInterfaces())) {
      for (const addr of addrs ?? []) {
        if (addr.family === "IPv4" && !addr.internal) {
          return addr.address;
        }
      }
    }
    return "127.0.0.1";
  }
}
