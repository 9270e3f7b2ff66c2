// Frame grammar shared with the broker: one JSON object per newline-terminated
// line, same shape over TCP and WebSocket.

export interface AuthFrame {
  t: 'auth';
  node: string;
  token: string;
  pins: number[];
  tele: boolean;
}

export interface OkFrame {
  t: 'ok';
}

export interface ErrFrame {
  t: 'err';
  code: string;
}

export interface VwFrame {
  t: 'vw';
  pin: number;
  val: number;
}

export interface TeleData {
  tc: number;
  dht: [number, number] | null;
  lux: number;
  m: 'H' | 'L';
  ph: number;
  bat: number;
}

export interface TeleFrame {
  t: 'tele';
  seq: number;
  cp: number;
  ts: number;
  data: TeleData;
}

export interface BridgeFrame {
  t: 'bridge';
  dst: string;
  payload: Record<string, unknown>;
}

export interface NotifyFrame {
  t: 'notify';
  level: 'info' | 'warn';
  msg: string;
}

export type Frame =
  | AuthFrame
  | OkFrame
  | ErrFrame
  | VwFrame
  | TeleFrame
  | BridgeFrame
  | NotifyFrame;

export function encodeFrame(frame: Frame): string {
  return JSON.stringify(frame) + '\n';
}

function isInt(v: unknown): v is number {
  return typeof v === 'number' && Number.isInteger(v);
}

function isNum(v: unknown): v is number {
  return typeof v === 'number' && Number.isFinite(v);
}

function asTeleData(v: unknown): TeleData | null {
  if (typeof v !== 'object' || v === null) {
    return null;
  }
  const d = v as Record<string, unknown>;
  let dht: [number, number] | null = null;
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
export function parseFrame(line: string): Frame | null {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
    return null;
  }
  const f = raw as Record<string, unknown>;
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
      return { t: 'bridge', dst: f.dst, payload: f.payload as Record<string, unknown> };
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
export function parseMessage(text: string): Frame[] {
  const frames: Frame[] = [];
  for (const line of text.split('\n')) {
    if (line.trim() === '') {
      continue;
    }
    const frame = parseFrame(line);
    if (frame !== null) {
      frames.push(frame);
    } else {
      console.warn('dropped malformed frame:', line);
    }
  }
  return frames;
}
