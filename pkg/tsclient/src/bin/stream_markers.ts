/**
 * Interop runner: stream a fixed number of markers, then stay alive so a
 * recorder can finish pulling. Prints READY once discoverable and DONE when
 * the last marker has been pushed; exits on SIGTERM/SIGINT.
 *
 * Usage: node stream_markers.js --port 16571 --name TsMarkers --prefix m
 *        --count 100 --interval-ms 20
 */

import { marker, streamMarker } from "../index";

function argValue(flag: string, fallback: string): string {
  const index = process.argv.indexOf(flag);
  if (index >= 0 && index + 1 < process.argv.length) {
    return process.argv[index + 1];
  }
  return fallback;
}

async function main(): Promise<void> {
  const port = Number(argValue("--port", "16571"));
  const name = argValue("--name", "TsMarkers");
  const prefix = argValue("--prefix", "m");
  const count = Number(argValue("--count", "100"));
  const intervalMs = Number(argValue("--interval-ms", "20"));

  const outlet = marker(name, { discoveryPort: port });
  await outlet.ready;
  console.log(`READY tcp=${outlet.tcpPort} udp=${port} uid=${outlet.info.uid}`);

  const pad = String(count - 1).length > 3 ? String(count - 1).length : 3;
  for (let i = 0; i < count; i += 1) {
    streamMarker(outlet, `${prefix}_${String(i).padStart(pad, "0")}`);
    await new Promise((resolve) => setTimeout(resolve, intervalMs));
  }
  console.log("DONE");

  const shutdown = async () => {
    await outlet.close();
    process.exit(0);
  };
  process.on("SIGTERM", shutdown);
  process.on("SIGINT", shutdown);
  setInterval(() => undefined, 1000); // stay alive for the recorder
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
