// De-quantization of raw ADC counts into the engineering values the gauges
// show. Formulas mirror the controller's reading of the same counts.
const ADC_MAX = 1023;
/** 10 mV per degree into a 10-bit ADC over 5 V. */
export function tempC(counts) {
    return (counts * 5000) / ADC_MAX / 10;
}
export function phValue(counts) {
    return (counts * 14) / ADC_MAX;
}
/** Counts back to lux given the sensor's full-scale calibration. */
export function luxValue(counts, fullScaleLux = 50000) {
    return (counts * fullScaleLux) / ADC_MAX;
}
export function batteryPct(bat) {
    return Math.min(100, Math.max(0, bat * 100));
}
export function gaugeView(tele) {
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
    lastArrival = null;
    periodMs = null;
    observe(nowMs) {
        if (this.lastArrival !== null) {
            this.periodMs = nowMs - this.lastArrival;
        }
        this.lastArrival = nowMs;
    }
    isStale(nowMs) {
        if (this.lastArrival === null || this.periodMs === null || this.periodMs <= 0) {
            return false;
        }
        return nowMs - this.lastArrival > 2 * this.periodMs;
    }
    reset() {
        this.lastArrival = null;
        this.periodMs = null;
    }
}
