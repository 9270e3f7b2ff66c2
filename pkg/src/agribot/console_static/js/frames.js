// Frame grammar shared with the broker: one JSON object per newline-terminated
// line, same shape over TCP and WebSocket.
export function encodeFrame(frame) {
    return JSON.stringify(frame) + '\n';
}
function isInt(v) {
    return typeof v === 'number' && Number.isInteger(v);
}
function isNum(v) {
    return typeof v === 'number' && Number.isFinite(v);
}
function asTeleData(v) {
    if (typeof v !== 'object' || v === null) {
        return null;
    }
    const d = v;
    let dht = null;
    if (d.dht !== null) {
        if (!Array.isArray(d.dht) || d.dht.length !== 2
            || !isInt(d.dht[0]) || !isInt(d.dht[1])) {
            return null;
        }
        dht = [d.dht[0], d.dht[1]];
    }
    if (!isInt(d.tc) || !isInt(d.lux) || !isInt(d.ph) || !isNum(d.bat)) {
        return null;
    }
    if (d.m !== 'H' && d.m !== 'L') {
        return null;
    }
    return { tc: d.tc, dht, lux: d.lux, m: d.m, ph: d.ph, bat: d.bat };
}
/** Parse one line of wire input; anything malformed becomes null. */
export function parseFrame(line) {
    let raw;
    try {
        raw = JSON.parse(line);
    }
    catch {
        return null;
    }
    if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
        return null;
    }
    const f = raw;
    switch (f.t) {
        case 'ok':
            return { t: 'ok' };
        case 'err':
            return typeof f.code === 'string' ? { t: 'err', code: f.code } : null;
        case 'auth': {
            if (typeof f.node !== 'string' || typeof f.token !== 'string') {
                return null;
            }
            const pins = Array.isArray(f.pins) ? f.pins : [];
            if (!pins.every(isInt)) {
                return null;
            }
            return { t: 'auth', node: f.node, token: f.token, pins, tele: f.tele === true };
        }
        case 'vw':
            return isInt(f.pin) && isNum(f.val) ? { t: 'vw', pin: f.pin, val: f.val } : null;
        case 'tele': {
            const data = asTeleData(f.data);
            if (data === null || !isInt(f.seq) || !isInt(f.cp) || !isNum(f.ts)) {
                return null;
            }
            return { t: 'tele', seq: f.seq, cp: f.cp, ts: f.ts, data };
        }
        case 'bridge': {
            if (typeof f.dst !== 'string' || typeof f.payload !== 'object'
                || f.payload === null || Array.isArray(f.payload)) {
                return null;
            }
            return { t: 'bridge', dst: f.dst, payload: f.payload };
        }
        case 'notify':
            if ((f.level === 'info' || f.level === 'warn') && typeof f.msg === 'string') {
                return { t: 'notify', level: f.level, msg: f.msg };
            }
            return null;
        default:
            return null;
    }
}
/** Split a websocket message into frames, tolerating batched lines. */
export function parseMessage(text) {
    const frames = [];
    for (const line of text.split('\n')) {
        if (line.trim() === '') {
            continue;
        }
        const frame = parseFrame(line);
        if (frame !== null) {
            frames.push(frame);
        }
        else {
            console.warn('dropped malformed frame:', line);
        }
    }
    return frames;
}
