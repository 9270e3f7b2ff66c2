// One live broker session per tab: auth handshake, edge-disciplined drive
// pins, telemetry and notification fan-out, reconnect with backoff.

import {
  encodeFrame,
  parseMessage,
  type Frame,
  type NotifyFrame,
  type TeleFrame,
} from './frames.js';

export const PIN_LEFT = 0;
export const PIN_RIGHT = 1;
export const PIN_FORWARD = 2;
export const PIN_BACKWARD = 3;

export type DrivePin = 0 | 1 | 2 | 3;

export type SessionStatus = 'disconnected' | 'connecting' | 'authenticating' | 'connected';

export interface WebSocketLike {
  readyState: number;
  send(data: string): void;
  close(code?: number): void;
  addEventListener(type: string, listener: (event: any) => void): void;
}

export type SocketFactory = (url: string) => WebSocketLike;

const WS_OPEN = 1;

// fatal rejections: retrying with the same credentials would just loop
const FATAL_CODES = new Set(['auth_failed', 'duplicate_node']);

const BACKOFF_MS = [1000, 2000, 4000, 8000, 15000];
const MAX_NOTIFICATIONS = 200;

export interface SessionHandlers {
  onStatus?: (status: SessionStatus, reason: string | null) => void;
  onTele?: (frame: TeleFrame) => void;
  onNotify?: (frame: NotifyFrame) => void;
}

export interface SessionOptions {
  url: string;
  token: string;
  node?: string;
  socketFactory?: SocketFactory;
  reconnect?: boolean;
}

export class ConsoleSession {
  status: SessionStatus = 'disconnected';
  lastError: string | null = null;
  latestTele: TeleFrame | null = null;
  notifications: NotifyFrame[] = [];

  private readonly url: string;
  private readonly token: string;
  private readonly node: string;
  private readonly makeSocket: SocketFactory;
  private readonly reconnect: boolean;
  private readonly handlers: SessionHandlers;

  private ws: WebSocketLike | null = null;
  private held = new Set<DrivePin>();
  private wantOpen = false;
  private attempts = 0;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(opts: SessionOptions, handlers: SessionHandlers = {}) {
    this.url = opts.url;
    this.token = opts.token;
    this.node = opts.node ?? 'app';
    this.makeSocket = opts.socketFactory ?? ((url) => new WebSocket(url));
    this.reconnect = opts.reconnect ?? true;
    this.handlers = handlers;
  }

  connect(): void {
    if (this.ws !== null) {
      return;
    }
    this.wantOpen = true;
    this.lastError = null;
    this.open();
  }

  close(): void {
    this.wantOpen = false;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.ws?.close();
    if (this.ws === null) {
      this.setStatus('disconnected', null);
    }
  }

  /** Press edge: at most one val-1 frame until the matching release. */
  press(pin: DrivePin): boolean {
    if (this.status !== 'connected' || this.held.has(pin)) {
      return false;
    }
    if (!this.sendFrame({ t: 'vw', pin, val: 1 })) {
      return false;
    }
    this.held.add(pin);
    return true;
  }

  release(pin: DrivePin): boolean {
    if (!this.held.delete(pin)) {
      return false;
    }
    return this.sendFrame({ t: 'vw', pin, val: 0 });
  }

  isHeld(pin: DrivePin): boolean {
    return this.held.has(pin);
  }

  rescue(): boolean {
    return this.sendCommand({ cmd: 'rescue' });
  }

  setMode(mode: 'auto' | 'manual'): boolean {
    return this.sendCommand({ cmd: 'mode', mode });
  }

  private sendCommand(payload: Record<string, unknown>): boolean {
    if (this.status !== 'connected') {
      return false;
    }
    return this.sendFrame({ t: 'bridge', dst: 'bot', payload });
  }

  private sendFrame(frame: Frame): boolean {
    if (this.ws === null || this.ws.readyState !== WS_OPEN) {
      return false;
    }
    this.ws.send(encodeFrame(frame));
    return true;
  }

  private open(): void {
    this.setStatus('connecting', null);
    let ws: WebSocketLike;
    try {
      ws = this.makeSocket(this.url);
    } catch (err) {
      this.lastError = `cannot open ${this.url}: ${String(err)}`;
      this.setStatus('disconnected', this.lastError);
      this.scheduleRetry();
      return;
    }
    this.ws = ws;

    ws.addEventListener('open', () => {
      if (ws !== this.ws) {
        return;
      }
      this.setStatus('authenticating', null);
      ws.send(encodeFrame({
        t: 'auth', node: this.node, token: this.token, pins: [], tele: true,
      }));
    });

    ws.addEventListener('message', (event: MessageEvent) => {
      if (ws !== this.ws) {
        return;
      }
      void decodeData(event.data).then((text) => {
        for (const frame of parseMessage(text)) {
          this.onFrame(frame);
        }
      });
    });

    ws.addEventListener('close', () => {
      if (ws !== this.ws) {
        return;
      }
      this.ws = null;
      this.held.clear();
      this.setStatus('disconnected', this.lastError);
      this.scheduleRetry();
    });

    ws.addEventListener('error', () => {
      // close always follows; nothing to do beyond the banner
    });
  }

  private onFrame(frame: Frame): void {
    switch (frame.t) {
      case 'ok':
        if (this.status === 'authenticating') {
          this.attempts = 0;
          this.setStatus('connected', null);
        }
        return;
      case 'err':
        if (this.status === 'authenticating' || FATAL_CODES.has(frame.code)) {
          this.lastError = `rejected by broker: ${frame.code}`;
          this.wantOpen = false;
          this.ws?.close();
        } else {
          console.warn('broker err:', frame.code);
        }
        return;
      case 'tele':
        this.latestTele = frame;
        this.handlers.onTele?.(frame);
        return;
      case 'notify':
        this.notifications.push(frame);
        if (this.notifications.length > MAX_NOTIFICATIONS) {
          this.notifications.shift();
        }
        this.handlers.onNotify?.(frame);
        return;
      default:
        return;  // auth/vw/bridge are not addressed to the console
    }
  }

  private scheduleRetry(): void {
    if (!this.wantOpen || this.retryTimer !== null) {
      return;
    }
    const delay = BACKOFF_MS[Math.min(this.attempts, BACKOFF_MS.length - 1)]!;
    this.attempts += 1;
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (this.wantOpen && this.ws === null) {
        this.open();
      }
    }, delay);
  }

  private setStatus(status: SessionStatus, reason: string | null): void {
    if (status === this.status && status !== 'disconnected') {
      return;
    }
    this.status = status;
    this.handlers.onStatus?.(status, reason);
  }
}

async function decodeData(data: unknown): Promise<string> {
  if (typeof data === 'string') {
    return data;
  }
  if (data instanceof Blob) {
    return data.text();
  }
  if (data instanceof ArrayBuffer) {
    return new TextDecoder().decode(data);
  }
  return String(data);
}
