// Dashboard wiring: connect form, drive pad, gauges, alert feed. All state
// comes from the frame stream; the browser runs no control rules.
import { gaugeView, StaleTracker } from './gauges.js';
import { ConsoleSession, PIN_BACKWARD, PIN_FORWARD, PIN_LEFT, PIN_RIGHT, } from './session.js';
const TEMPLATE = `
<header>
  <h1>Greenhouse console</h1>
  <form id="connect-form">
    <input id="url" type="text" spellcheck="false">
    <input id="token" type="password" placeholder="token">
    <button id="connect" type="submit">Connect</button>
  </form>
  <div id="banner" class="banner">disconnected</div>
</header>
<main>
  <section id="pad" class="card">
    <h2>Drive</h2>
    <div class="pad-grid">
      <button id="fwd" class="drive" data-pin="2">&#9650;</button>
      <button id="left" class="drive" data-pin="0">&#9664;</button>
      <button id="right" class="drive" data-pin="1">&#9654;</button>
      <button id="back" class="drive" data-pin="3">&#9660;</button>
    </div>
    <label class="mode"><input id="manual" type="checkbox"> manual mode</label>
  </section>
  <section class="card">
    <h2>Telemetry <span id="stale" class="stale" hidden>stale</span></h2>
    <dl class="gauges">
      <dt>Soil temp</dt><dd id="g-temp">&mdash;</dd>
      <dt>Air</dt><dd id="g-hum">&mdash;</dd>
      <dt>Light</dt><dd id="g-lux">&mdash;</dd>
      <dt>Soil</dt><dd id="g-moist">&mdash;</dd>
      <dt>pH</dt><dd id="g-ph">&mdash;</dd>
      <dt>Battery</dt><dd id="g-bat">&mdash;</dd>
      <dt>Checkpoint</dt><dd id="g-cp">&mdash;</dd>
      <dt>Frame</dt><dd id="g-seq">&mdash;</dd>
    </dl>
  </section>
  <section class="card">
    <h2>Alerts</h2>
    <ul id="alerts"></ul>
  </section>
</main>
`;
const KEY_PINS = {
    ArrowUp: PIN_FORWARD, KeyW: PIN_FORWARD,
    ArrowDown: PIN_BACKWARD, KeyS: PIN_BACKWARD,
    ArrowLeft: PIN_LEFT, KeyA: PIN_LEFT,
    ArrowRight: PIN_RIGHT, KeyD: PIN_RIGHT,
};
export function initApp(doc, opts = {}) {
    const root = doc.getElementById('app') ?? doc.body;
    root.innerHTML = TEMPLATE;
    const el = (id) => {
        const found = doc.getElementById(id);
        if (found === null) {
            throw new Error(`missing element #${id}`);
        }
        return found;
    };
    const raf = opts.raf ?? ((cb) => requestAnimationFrame(() => cb()));
    const now = opts.now ?? Date.now;
    const urlInput = el('url');
    const tokenInput = el('token');
    const connectBtn = el('connect');
    const banner = el('banner');
    const manualBox = el('manual');
    const staleBadge = el('stale');
    const alertList = el('alerts');
    const driveButtons = Array.from(root.querySelectorAll('button.drive'));
    const gauges = {
        temp: el('g-temp'), hum: el('g-hum'), lux: el('g-lux'), moist: el('g-moist'),
        ph: el('g-ph'), bat: el('g-bat'), cp: el('g-cp'), seq: el('g-seq'),
    };
    const host = doc.location?.hostname || '127.0.0.1';
    urlInput.value = `ws://${host}:9043/ws`;
    const app = { session: null };
    const stale = new StaleTracker();
    let renderQueued = false;
    function setControlsEnabled(on) {
        for (const btn of driveButtons) {
            btn.disabled = !on;
        }
        manualBox.disabled = !on;
        for (const btn of Array.from(alertList.querySelectorAll('button'))) {
            btn.disabled = !on;
        }
    }
    setControlsEnabled(false);
    function renderGauges() {
        renderQueued = false;
        const tele = app.session?.latestTele;
        if (!tele) {
            return;
        }
        const view = gaugeView(tele);
        gauges.temp.textContent = view.tempText;
        gauges.hum.textContent = view.humidityText;
        gauges.hum.classList.toggle('fault', tele.data.dht === null);
        gauges.lux.textContent = view.luxText;
        gauges.moist.textContent = view.moistureText;
        gauges.ph.textContent = view.phText;
        gauges.bat.textContent = view.batteryText;
        gauges.cp.textContent = view.checkpointText;
        gauges.seq.textContent = view.seqText;
    }
    function queueRender() {
        if (!renderQueued) {
            renderQueued = true;
            raf(renderGauges);
        }
    }
    function addAlert(frame) {
        const item = doc.createElement('li');
        item.className = frame.level;
        const text = doc.createElement('span');
        text.textContent = frame.msg;
        item.appendChild(text);
        if (frame.level === 'warn' && frame.msg === 'bot stuck') {
            const rescueBtn = doc.createElement('button');
            rescueBtn.type = 'button';
            rescueBtn.textContent = 'Rescue';
            rescueBtn.addEventListener('click', () => {
                if (app.session?.rescue()) {
                    rescueBtn.disabled = true;
                    rescueBtn.textContent = 'Rescue sent';
                }
            });
            item.appendChild(rescueBtn);
        }
        alertList.prepend(item);
        while (alertList.childElementCount > 50) {
            alertList.lastElementChild?.remove();
        }
    }
    function connect() {
        app.session?.close();
        stale.reset();
        const session = new ConsoleSession({
            url: urlInput.value.trim(),
            token: tokenInput.value,
            socketFactory: opts.socketFactory,
        }, {
            onStatus: (status, reason) => {
                banner.textContent = reason ?? status;
                banner.classList.toggle('hidden', status === 'connected');
                setControlsEnabled(status === 'connected');
                connectBtn.textContent = status === 'disconnected' ? 'Connect' : 'Disconnect';
            },
            onTele: () => {
                stale.observe(now());
                staleBadge.hidden = true;
                queueRender();
            },
            onNotify: addAlert,
        });
        app.session = session;
        session.connect();
    }
    el('connect-form').addEventListener('submit', (event) => {
        event.preventDefault();
        if (app.session !== null && app.session.status !== 'disconnected') {
            app.session.close();
            app.session = null;
        }
        else {
            connect();
        }
    });
    for (const btn of driveButtons) {
        const pin = Number(btn.dataset.pin);
        btn.addEventListener('pointerdown', () => app.session?.press(pin));
        btn.addEventListener('pointerup', () => app.session?.release(pin));
        btn.addEventListener('pointerleave', () => app.session?.release(pin));
    }
    doc.addEventListener('keydown', (event) => {
        const pin = KEY_PINS[event.code];
        if (pin !== undefined && !isTyping(doc)) {
            app.session?.press(pin);
            event.preventDefault();
        }
    });
    doc.addEventListener('keyup', (event) => {
        const pin = KEY_PINS[event.code];
        if (pin !== undefined) {
            app.session?.release(pin);
        }
    });
    manualBox.addEventListener('change', () => {
        const ok = app.session?.setMode(manualBox.checked ? 'manual' : 'auto');
        if (!ok) {
            manualBox.checked = !manualBox.checked;
        }
    });
    setInterval(() => {
        staleBadge.hidden = !stale.isStale(now());
    }, opts.staleCheckMs ?? 1000);
    return app;
}
function isTyping(doc) {
    const active = doc.activeElement;
    return active instanceof HTMLInputElement || active instanceof HTMLTextAreaElement;
}
