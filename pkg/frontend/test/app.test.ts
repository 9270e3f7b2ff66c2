import { beforeEach, describe, expect, it } from 'vitest';
import { initApp, type App } from '../src/app.js';
import { FakeSocket, settle } from './fake-socket.js';

let sockets: FakeSocket[];
let rafQueue: (() => void)[];
let clock: { nowMs: number };
let app: App;

function flushRaf(): void {
  const queued = rafQueue.splice(0);
  for (const cb of queued) {
    cb();
  }
}

function byId(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing #${id}`);
  }
  return el;
}

async function connectApp(): Promise<FakeSocket> {
  (byId('token') as HTMLInputElement).value = 'tok';
  byId('connect-form').dispatchEvent(new Event('submit', { cancelable: true }));
  const socket = sockets[sockets.length - 1]!;
  socket.open();
  socket.receive('{"t":"ok"}\n');
  await settle();
  socket.sent.length = 0;
  return socket;
}

const TELE = '{"t":"tele","seq":12,"cp":3,"ts":89.0,'
  + '"data":{"tc":51,"dht":[25,60],"lux":512,"m":"H","ph":512,"bat":0.75}}\n';

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  sockets = [];
  rafQueue = [];
  clock = { nowMs: 0 };
  app = initApp(document, {
    socketFactory: (url) => {
      const socket = new FakeSocket(url);
      sockets.push(socket);
      return socket;
    },
    raf: (cb) => rafQueue.push(cb),
    now: () => clock.nowMs,
  });
});

describe('drive pad buttons', () => {
  it('emits exactly the edge frames for a press and release of each button', async () => {
    const socket = await connectApp();
    const expected: unknown[] = [];
    for (const [id, pin] of [['fwd', 2], ['back', 3], ['left', 0], ['right', 1]] as const) {
      const btn = byId(id);
      btn.dispatchEvent(new Event('pointerdown'));
      btn.dispatchEvent(new Event('pointerup'));
      expected.push({ t: 'vw', pin, val: 1 }, { t: 'vw', pin, val: 0 });
    }
    expect(socket.sentFrames()).toEqual(expected);
  });

  it('ignores pointer repeats while held', async () => {
    const socket = await connectApp();
    const btn = byId('fwd');
    btn.dispatchEvent(new Event('pointerdown'));
    btn.dispatchEvent(new Event('pointerdown'));
    btn.dispatchEvent(new Event('pointerup'));
    btn.dispatchEvent(new Event('pointerleave')); // already released
    expect(socket.sentFrames()).toEqual([
      { t: 'vw', pin: 2, val: 1 },
      { t: 'vw', pin: 2, val: 0 },
    ]);
  });

  it('disables the pad until connected', async () => {
    expect((byId('fwd') as HTMLButtonElement).disabled).toBe(true);
    expect(byId('banner').classList.contains('hidden')).toBe(false);
    await connectApp();
    expect((byId('fwd') as HTMLButtonElement).disabled).toBe(false);
    expect(byId('banner').classList.contains('hidden')).toBe(true);
  });

  it('drives from the keyboard with edge discipline', async () => {
    const socket = await connectApp();
    const down = new KeyboardEvent('keydown', { code: 'KeyW', cancelable: true });
    document.dispatchEvent(down);
    document.dispatchEvent(new KeyboardEvent('keydown', { code: 'KeyW' })); // auto-repeat
    document.dispatchEvent(new KeyboardEvent('keyup', { code: 'KeyW' }));
    expect(socket.sentFrames()).toEqual([
      { t: 'vw', pin: 2, val: 1 },
      { t: 'vw', pin: 2, val: 0 },
    ]);
  });
});

describe('gauges', () => {
  it('updates within one animation frame of a tele frame', async () => {
    const socket = await connectApp();
    socket.receive(TELE);
    await settle();
    expect(rafQueue.length).toBe(1);
    flushRaf();
    expect(byId('g-temp').textContent).toBe('24.9 °C');
    expect(byId('g-hum').textContent).toBe('60 % @ 25 °C');
    expect(byId('g-lux').textContent).toBe('25024 lx');
    expect(byId('g-moist').textContent).toBe('wet');
    expect(byId('g-ph').textContent).toBe('7.01');
    expect(byId('g-bat').textContent).toBe('75 %');
    expect(byId('g-cp').textContent).toBe('cp 3');
    expect(byId('g-seq').textContent).toBe('#12');
  });

  it('coalesces a burst of frames into one repaint', async () => {
    const socket = await connectApp();
    socket.receive(TELE);
    socket.receive(TELE.replace('"seq":12', '"seq":13'));
    await settle();
    expect(rafQueue.length).toBe(1);
    flushRaf();
    expect(byId('g-seq').textContent).toBe('#13');
  });

  it('marks the humidity gauge on a sensor fault', async () => {
    const socket = await connectApp();
    socket.receive(TELE.replace('[25,60]', 'null'));
    await settle();
    flushRaf();
    expect(byId('g-hum').textContent).toBe('fault');
    expect(byId('g-hum').classList.contains('fault')).toBe(true);
  });
});

describe('alert center', () => {
  it('surfaces a stuck warning with a rescue action that sends the bridge frame', async () => {
    const socket = await connectApp();
    socket.receive('{"t":"notify","level":"warn","msg":"bot stuck"}\n');
    await settle();
    const item = byId('alerts').querySelector('li.warn');
    expect(item?.textContent).toContain('bot stuck');
    const rescueBtn = item?.querySelector('button');
    expect(rescueBtn).toBeTruthy();
    rescueBtn!.dispatchEvent(new Event('click'));
    expect(socket.sent).toEqual(['{"t":"bridge","dst":"bot","payload":{"cmd":"rescue"}}\n']);
    expect(rescueBtn!.disabled).toBe(true);
  });

  it('keeps info notifications in the feed without actions', async () => {
    const socket = await connectApp();
    socket.receive('{"t":"notify","level":"info","msg":"pump on"}\n');
    await settle();
    const item = byId('alerts').querySelector('li');
    expect(item?.classList.contains('warn')).toBe(false);
    expect(item?.querySelector('button')).toBeNull();
    expect(socket.sent).toEqual([]);
  });
});

describe('mode toggle', () => {
  it('sends mode commands and reverts if disconnected', async () => {
    const socket = await connectApp();
    const box = byId('manual') as HTMLInputElement;
    box.checked = true;
    box.dispatchEvent(new Event('change'));
    expect(socket.sentFrames()).toEqual([
      { t: 'bridge', dst: 'bot', payload: { cmd: 'mode', mode: 'manual' } },
    ]);
    socket.dropConnection();
    box.checked = false;
    box.dispatchEvent(new Event('change'));
    expect(box.checked).toBe(true); // reverted, nothing sent
  });
});

describe('app shell', () => {
  it('exposes one session per connect and swaps on reconnect', async () => {
    await connectApp();
    const first = app.session;
    expect(first?.status).toBe('connected');
    byId('connect-form').dispatchEvent(new Event('submit', { cancelable: true }));
    expect(app.session).toBeNull(); // user disconnect
  });
});
