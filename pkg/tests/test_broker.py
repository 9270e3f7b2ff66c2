"""Broker routing rules, auth lifecycle, and the TCP/WebSocket front end."""

import asyncio
import random

import pytest

from agribot import protocol
from agribot.broker import BrokerCore, BrokerServer, load_tokens
from agribot.protocol import (
    AuthFrame,
    BridgeFrame,
    ErrFrame,
    NotifyFrame,
    OkFrame,
    TeleData,
    TeleFrame,
    VwFrame,
    encode_frame,
    parse_frame,
)

TELE = TeleFrame(seq=0, cp=0, ts=0.0,
                 data=TeleData(tc=51, dht=(24, 60), lux=10, m="H", ph=512, bat=0.9))


class Client:
    """In-memory session wrapper recording every delivered frame."""

    def __init__(self, core: BrokerCore):
        self.core = core
        self.inbox: list = []
        self.closed = False
        self.sess = core.connect(self._sink, self._close, label="test")

    def _sink(self, data: bytes) -> None:
        self.inbox.append(parse_frame(data))

    def _close(self) -> None:
        self.closed = True

    def auth(self, node, token, pins=(), tele=False):
        self.send(AuthFrame(node=node, token=token, pins=tuple(pins), tele=tele))
        return self.inbox.pop()

    def send(self, frame):
        self.core.handle_line(self.sess, encode_frame(frame))

    def send_raw(self, line):
        self.core.handle_line(self.sess, line)


def trio(core=None):
    """One token, three nodes: bot (pins+tele source), ctl (tele sub), panel (pins)."""
    core = core or BrokerCore({"tok"})
    bot, ctl, panel = Client(core), Client(core), Client(core)
    assert bot.auth("bot", "tok", pins=(0, 1, 2, 3)) == OkFrame()
    assert ctl.auth("ctl", "tok", tele=True) == OkFrame()
    assert panel.auth("panel", "tok", pins=(2,)) == OkFrame()
    return core, bot, ctl, panel


# -- auth lifecycle -----------------------------------------------------------

def test_auth_bad_token_closes():
    c = Client(BrokerCore({"tok"}))
    assert c.auth("bot", "wrong") == ErrFrame(protocol.AUTH_FAILED)
    assert c.closed is True


def test_duplicate_node_keeps_session_open_and_unbound():
    core = BrokerCore({"tok"})
    a, b = Client(core), Client(core)
    assert a.auth("bot", "tok") == OkFrame()
    assert b.auth("bot", "tok") == ErrFrame(protocol.DUPLICATE_NODE)
    assert b.closed is False
    assert not b.sess.authed
    # the session may retry under a free name
    assert b.auth("bot2", "tok") == OkFrame()


def test_same_node_name_under_different_tokens_is_fine():
    core = BrokerCore({"a", "b"})
    x, y = Client(core), Client(core)
    assert x.auth("bot", "a") == OkFrame()
    assert y.auth("bot", "b") == OkFrame()


def test_reauth_is_an_error():
    core, bot, _, _ = trio()
    bot.send(AuthFrame(node="other", token="tok"))
    assert bot.inbox.pop() == ErrFrame(protocol.ALREADY_AUTHED)
    assert bot.sess.node_id == "bot"  # binding unchanged


def test_unauthed_traffic_rejected():
    c = Client(BrokerCore({"tok"}))
    c.send(VwFrame(pin=2, val=1))
    assert c.inbox == [ErrFrame(protocol.NOT_AUTHED)]


def test_disconnect_frees_the_node_name():
    core, bot, _, _ = trio()
    core.disconnect(bot.sess)
    late = Client(core)
    assert late.auth("bot", "tok") == OkFrame()


def test_core_requires_tokens():
    with pytest.raises(ValueError):
        BrokerCore(set())


# -- routing ------------------------------------------------------------------

def test_vw_goes_to_pin_subscribers_only():
    core, bot, ctl, panel = trio()
    panel.send(VwFrame(pin=2, val=1))
    assert bot.inbox == [VwFrame(pin=2, val=1)]
    assert ctl.inbox == []          # no pin subscription
    assert panel.inbox == []        # never echoed


def test_vw_respects_the_pin_filter():
    core, bot, ctl, panel = trio()
    bot.send(VwFrame(pin=0, val=1))
    assert panel.inbox == []        # panel only watches pin 2


def test_tele_fans_out_to_subscribers():
    core, bot, ctl, panel = trio()
    bot.send(TELE)
    assert ctl.inbox == [TELE]
    assert panel.inbox == []
    assert bot.inbox == []


def test_notify_broadcasts_within_token():
    core, bot, ctl, panel = trio()
    note = NotifyFrame(level="warn", msg="bot stuck")
    ctl.send(note)
    assert bot.inbox == [note]
    assert panel.inbox == [note]
    assert ctl.inbox == []


def test_bridge_is_point_to_point():
    core, bot, ctl, panel = trio()
    frame = BridgeFrame(dst="bot", payload={"cmd": "rescue"})
    ctl.send(frame)
    assert bot.inbox == [frame]
    assert panel.inbox == []


def test_bridge_to_missing_node_is_no_route():
    core, bot, ctl, panel = trio()
    ctl.send(BridgeFrame(dst="ghost", payload={}))
    assert ctl.inbox == [ErrFrame(protocol.NO_ROUTE)]
    assert bot.inbox == []


def test_client_status_frames_are_dropped():
    core, bot, ctl, panel = trio()
    bot.send(OkFrame())
    bot.send(ErrFrame(code="whatever"))
    assert bot.inbox == [] and ctl.inbox == [] and panel.inbox == []


def test_malformed_line_errs_and_session_survives():
    core, bot, ctl, panel = trio()
    bot.send_raw(b"this is not json\n")
    assert bot.inbox.pop() == ErrFrame(protocol.BAD_JSON)
    bot.send_raw(b'{"t":"mystery"}\n')
    assert bot.inbox.pop() == ErrFrame(protocol.UNKNOWN_KIND)
    bot.send(TELE)                  # still routed afterwards
    assert ctl.inbox == [TELE]


def test_token_isolation_randomized_topologies():
    """Randomized senders across several tokens: zero cross-token deliveries."""
    rng = random.Random(42)
    tokens = ["red", "green", "blue"]
    core = BrokerCore(tokens)
    clients = []
    for i in range(18):
        token = rng.choice(tokens)
        c = Client(core)
        assert c.auth(f"n{i}", token,
                      pins=tuple(rng.sample(range(8), rng.randint(0, 4))),
                      tele=rng.random() < 0.5) == OkFrame()
        c.token = token
        clients.append(c)
    by_token = {}
    for c in clients:
        by_token.setdefault(c.token, []).append(c)

    def snapshot():
        return [len(c.inbox) for c in clients]

    for _ in range(600):
        sender = rng.choice(clients)
        kind = rng.randrange(4)
        before = snapshot()
        if kind == 0:
            frame = VwFrame(pin=rng.randrange(8), val=rng.randrange(2))
        elif kind == 1:
            frame = TELE
        elif kind == 2:
            frame = NotifyFrame(level="info", msg="x")
        else:
            dst = rng.choice(clients)
            frame = BridgeFrame(dst=dst.sess.node_id or "?", payload={"n": 1})
        sender.send(frame)
        after = snapshot()
        for c, b, a in zip(clients, before, after):
            if a == b:
                continue
            delivered = c.inbox[-1]
            if c is sender:
                # either a route failure or a bridge the sender aimed at itself
                assert (delivered == ErrFrame(protocol.NO_ROUTE)
                        or (isinstance(delivered, BridgeFrame)
                            and delivered == frame))
            else:
                assert c.token == sender.token, "cross-token delivery"
                if isinstance(delivered, VwFrame):
                    assert delivered.pin in c.sess.pins
                elif isinstance(delivered, TeleFrame):
                    assert c.sess.tele


# -- token file ---------------------------------------------------------------

def test_load_tokens(tmp_path):
    p = tmp_path / "tokens.txt"
    p.write_text("# comment\n\ngreenhouse\n  spaced  \n")
    assert load_tokens(str(p)) == frozenset({"greenhouse", "spaced"})
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(ValueError):
        load_tokens(str(empty))


# -- TCP / WebSocket front end ------------------------------------------------

async def _start_server():
    server = BrokerServer(BrokerCore({"tok"}), tcp_port=0, ws_port=0)
    await server.start()
    return server


async def _tcp_client(server, node, pins=(), tele=False):
    reader, writer = await asyncio.open_connection(*server.tcp_addr)
    writer.write(encode_frame(AuthFrame(node=node, token="tok",
                                        pins=tuple(pins), tele=tele)))
    line = await reader.readline()
    assert parse_frame(line) == OkFrame()
    return reader, writer


def test_tcp_roundtrip_and_survival():
    async def main():
        server = await _start_server()
        try:
            r_bot, w_bot = await _tcp_client(server, "bot", pins=(2,))
            r_ctl, w_ctl = await _tcp_client(server, "ctl", tele=True)

            # garbage first: err comes back, the connection keeps working
            w_ctl.write(b"garbage\n")
            assert parse_frame(await r_ctl.readline()) == ErrFrame(protocol.BAD_JSON)

            # an over-limit line is refused but does not kill the session
            w_ctl.write(b'{"pad":"' + b"x" * (2 << 20) + b'"}\n')
            assert parse_frame(await r_ctl.readline()) == ErrFrame(protocol.BAD_JSON)

            w_ctl.write(encode_frame(VwFrame(pin=2, val=1)))
            assert parse_frame(await r_bot.readline()) == VwFrame(pin=2, val=1)

            w_bot.write(encode_frame(TELE))
            assert parse_frame(await r_ctl.readline()) == TELE

            w_bot.close()
            w_ctl.close()
        finally:
            await server.close()

    asyncio.run(asyncio.wait_for(main(), 20))


def test_tcp_disconnect_unregisters():
    async def main():
        server = await _start_server()
        try:
            r1, w1 = await _tcp_client(server, "bot")
            w1.close()
            await w1.wait_closed()
            # wait for the server side to notice the hangup
            for _ in range(50):
                if server.core.node("tok", "bot") is None:
                    break
                await asyncio.sleep(0.02)
            assert server.core.node("tok", "bot") is None
            r2, w2 = await _tcp_client(server, "bot")  # name is free again
            w2.close()
        finally:
            await server.close()

    asyncio.run(asyncio.wait_for(main(), 20))


def test_tcp_fifo_under_concurrent_senders():
    n_senders, per_sender = 16, 50

    async def main():
        server = await _start_server()
        try:
            r_sink, w_sink = await _tcp_client(server, "sink")

            async def blast(i):
                _, w = await _tcp_client(server, f"src{i}")
                for k in range(per_sender):
                    w.write(encode_frame(BridgeFrame(
                        dst="sink", payload={"src": i, "k": k})))
                    if k % 10 == 9:
                        await w.drain()
                await w.drain()
                w.close()

            await asyncio.gather(*(blast(i) for i in range(n_senders)))

            seen = {i: [] for i in range(n_senders)}
            for _ in range(n_senders * per_sender):
                frame = parse_frame(await r_sink.readline())
                seen[frame.payload["src"]].append(frame.payload["k"])
            for i in range(n_senders):
                assert seen[i] == list(range(per_sender)), f"sender {i} reordered"
            w_sink.close()
        finally:
            await server.close()

    asyncio.run(asyncio.wait_for(main(), 30))


def test_websocket_roundtrip():
    import websockets

    async def main():
        server = await _start_server()
        try:
            uri = "ws://%s:%d/ws" % server.ws_addr
            async with websockets.connect(uri) as ws_bot:
                await ws_bot.send(encode_frame(
                    AuthFrame(node="bot", token="tok", pins=(2,))).decode())
                assert parse_frame(await ws_bot.recv()) == OkFrame()

                r_ctl, w_ctl = await _tcp_client(server, "ctl", tele=True)

                # TCP -> WS
                w_ctl.write(encode_frame(VwFrame(pin=2, val=1)))
                assert parse_frame(await ws_bot.recv()) == VwFrame(pin=2, val=1)

                # WS -> TCP
                await ws_bot.send(encode_frame(TELE).decode())
                assert parse_frame(await r_ctl.readline()) == TELE

                # malformed WS payload answered in-band
                await ws_bot.send("not json")
                assert parse_frame(await ws_bot.recv()) == ErrFrame(protocol.BAD_JSON)
                w_ctl.close()
        finally:
            await server.close()

    asyncio.run(asyncio.wait_for(main(), 20))


def test_websocket_unknown_path_refused():
    import websockets

    async def main():
        server = await _start_server()
        try:
            uri = "ws://%s:%d/elsewhere" % server.ws_addr
            async with websockets.connect(uri) as ws:
                with pytest.raises(websockets.ConnectionClosed) as exc:
                    await asyncio.wait_for(ws.recv(), 5)
                assert exc.value.rcvd.code == 1008
        finally:
            await server.close()

    asyncio.run(asyncio.wait_for(main(), 20))
