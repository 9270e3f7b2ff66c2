// One live broker session per tab: auth handshake, edge-disciplined drive
// pins, telemetry and notification fan-out, reconnect with backoff.
import { encodeFrame, parseMessage, } from './frames.js';
export const PIN_LEFT = 0;
export const PIN_RIGHT = 1;
export const PIN_FORWARD = 2;
export const PIN_BACKWARD = 3;
const WS_OPEN = 1;
// fatal rejections: retrying with the same credentials would just loop
const FATAL_CODES = new Set(['auth_failed', 'duplicate_node']);
const BACKOFF_MS = [1000, 2000, 4000, 8000, 15000];
const MAX_NOTIFICATIONS = 200;
export class ConsoleSession {
    status = 'disconnected';
    lastError = null;
    latestTele = null;
    notifications = [];
    url;
    token;
    node;
    makeSocket;
    reconnect;
    handlers;
    ws = null;
    held = new Set();
    wantOpen = false;
    attempts = 0;
    retryTimer = null;
    constructor(opts, handlers = {}) {
        this.url = opts.url;
        this.token = opts.token;
        this.node = opts.node ?? 'app';
        this.makeSocket = opts.socketFactory ?? ((url) => new WebSocket(url));
        this.reconnect = opts.reconnect ?? true;
        this.handlers = handlers;
    }
    connect() {
        if (this.ws !== null) {
            return;
        }
        this.wantOpen = true;
        this.lastError = null;
        this.open();
    }
    close() {
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
    press(pin) {
        if (this.status !== 'connected' || this.held.has(pin)) {
            return false;
        }
        if (!this.sendFrame({ t: 'vw', pin, val: 1 })) {
            return false;
        }
        this.held.add(pin);
        return true;
    }
    release(pin) {
        if (!this.held.delete(pin)) {
            return false;
        }
        return this.sendFrame({ t: 'vw', pin, val: 0 });
    }
    isHeld(pin) {
        return this.held.has(pin);
    }
    rescue() {
        return this.sendCommand({ cmd: 'rescue' });
    }
    setMode(mode) {
        return this.sendCommand({ cmd: 'mode', mode });
    }
    sendCommand(payload) {
        if (this.status !== 'connected') {
            return false;
        }
        return this.sendFrame({ t: 'bridge', dst: 'bot', payload });
    }
    sendFrame(frame) {
        if (this.ws === null || this.ws.readyState !== WS_OPEN) {
            return false;
        }
        this.ws.send(encodeFrame(frame));
        return true;
    }
    open() {
        this.setStatus('connecting', null);
        let ws;
        try {
            ws = this.makeSocket(this.url);
        }
        catch (err) {
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
        ws.addEventListener('message', (event) => {
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
    onFrame(frame) {
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
                }
                else {
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
                return; // auth/vw/bridge are not addressed to the console
        }
    }
    scheduleRetry() {
        if (!this.wantOpen || this.retryTimer !== null) {
            return;
        }
        const delay = BACKOFF_MS[Math.min(this.attempts, BACKOFF_MS.length - 1)];
        this.attempts += 1;
        this.retryTimer = setTimeout(() => {
            this.retryTimer = null;
            if (this.wantOpen && this.ws === null) {
                this.open();
            }
        }, delay);
    }
    setStatus(status, reason) {
        if (status === this.status && status !== 'disconnected') {
            return;
        }
        this.status = status;
        this.handlers.onStatus?.(status, reason);
    }
}
async function decodeData(data) {
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
