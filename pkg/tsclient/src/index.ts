/**
 * Minimal client SDK for experiment scripts: create marker or keyboard
 * outlets and stream events to any recorder on the LAN or loopback.
 *
 *   const stim = marker("Stimuli");
 *   await stim.ready;
 *   streamMarker(stim, "stim_01");
 *   streamMarker(stim, 42);
 */

import { MarkerOutlet, OutletOptions } from "./outlet";

export { MarkerOutlet, OutletOptions } from "./outlet";
export { DEFAULT_DISCOVERY_PORT, localClock, StreamInfo } from "./protocol";

/** Stimulus-marker outlet (stream type "Markers"). */
export function marker(name: string, options: OutletOptions = {}): MarkerOutlet {
  return new MarkerOutlet(name, { ...options, streamType: "Markers" });
}

/** Key-press outlet (stream type "Keyboard"). */
export function keyboard(name: string, options: OutletOptions = {}): MarkerOutlet {
  return new MarkerOutlet(name, { ...options, streamType: "Keyboard" });
}

/** Send one stimulus marker, timestamped at the call. */
export function streamMarker(outlet: MarkerOutlet, value: string | number): void {
  outlet.pushSample(value);
}

/** Send the name of a pressed key, timestamped at the call. */
export function streamKeypress(outlet: MarkerOutlet, key: string): void {
  if (typeof key !== "string") {
    throw new TypeError("key names are text");
  }
  outlet.pushSample(key);
}
