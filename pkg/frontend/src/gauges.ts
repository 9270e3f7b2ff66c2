// De-quantization of raw ADC counts into the engineering values the gauges
// show. Formulas mirror the controller's reading of the same counts.

import type { TeleFrame } from './frames.js';

const ADC_MAX = 1023;

/** 10 mV per degree into a 10-bit ADC over 5 V. */
export function tempC(counts: number): number {
  return (counts * 5000) / ADC_MAX / 10;
}

export function phValue(counts: number): number {
  return (counts * 14) / ADC_MAX;
}

/** Counts back to lux given the sensor's full-scale calibration. */
export function luxValue(counts: number, fullScaleLux = 50000): number {
  return (counts * fullScaleLux) / ADC_MAX;
}

export function batteryPct(bat: number): number {
  return Math.min(100, Math.max(0, bat * 100));
}

export interface GaugeView {
  tempText: string;
  humidityText: string;   // 'fault' when the sensor dropped out
  luxText: string;
  moistureText: string;
  phText: string;
  batteryText: string;
  checkpointText: string;
  seqText: string;
}

export function gaugeView(tele: TeleFrame): GaugeView {
  const d = tele.data;
  return {
    tempText: `${tempC(d.tc).toFixed(1)} °C`,
    humidityText: d.dht === null ? 'fault' : `${d.dht[1]} % @ ${d.dht[0]} °C`,
    luxText: `${Math.round(luxValue(d.lux))} lx`,
    moistureText: d.m === 'H' ? 'wet' : 'dry',
    phText: phValue(d.ph).toFixed(2),
    batteryText: `${batteryPct(d.bat).toFixed(0)} %`,
    checkpointText: `cp ${tele.cp}`,
    seqText: `#${tele.seq}`,
  };
}

/**
 * Staleness: no frame for twice the observed report period. The period is
 * learned from arrival spacing, so the console needs no plan config.
 */
export class StaleTracker {
  private lastArrival: number | null = null;
  private periodMs: number | null = null;

  observe(nowMs: number): void {
    if (this.lastArrival !== null) {
      this.periodMs = nowMs - this.lastArrival;
    }
    this.lastArrival = nowMs;
  }

  isStale(nowMs: number): boolean {
    if (this.lastArrival === null || this.periodMs === null || this.periodMs <= 0) {
      return false;
    }
    return nowMs - this.lastArrival > 2 * this.periodMs;
  }

  reset(): void {
    this.lastArrival = null;
    this.periodMs = null;
  }
}
