"""Token-scoped message broker: virtual-pin writes, telemetry fan-out, bridges.

The core is a plain synchronous router (``BrokerCore``) that knows nothing
about sockets; transports hand it newline-delimited lines and give each
session a byte-sink callback. That split lets the test harness wire bot and
controller through in-memory sessions exchanging the exact bytes that would
cross a socket, while ``BrokerServer`` exposes the same core over TCP and
WebSocket for real deployments.

Routing rules:

* ``vw``     -> every same-token session subscribed to that pin, never the sender
* ``tele``   -> every same-token session with the telemetry subscription, never the sender
* ``bridge`` -> exactly the session whose node id matches ``dst``; no such node
  answers the sender with ``err(no_route)``
* ``notify`` -> every same-token session except the sender

Frames addressed to nodes that are not connected are dropped, not queued:
the broker is a live relay, durability belongs to the controller's log.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Callable, Iterable

from agribot import protocol
from agribot.protocol import (
    AuthFrame,
    BridgeFrame,
    ErrFrame,
    Frame,
    NotifyFrame,
    OkFrame,
    ProtocolError,
    TeleFrame,
    VwFrame,
    encode_frame,
    parse_frame,
)

log = logging.getLogger(__name__)

MAX_LINE_BYTES = 1 << 20


class BrokerSession:
    """One connected client, transport-agnostic.

    ``send_bytes`` must deliver in call order (per-connection FIFO is the
    broker's contract); ``close`` asks the transport to drop the connection
    after any already-queued bytes flush.
    """

    __slots__ = ("_send_bytes", "_close", "label", "node_id", "token", "pins", "tele")

    def __init__(self, send_bytes: Callable[[bytes], None],
                 close: Callable[[], None] | None = None, label: str = "?"):
        self._send_bytes = send_bytes
        self._close = close
        self.label = label
        self.node_id: str | None = None
        self.token: str | None = None
        self.pins: frozenset[int] = frozenset()
        self.tele = False

    @property
    def authed(self) -> bool:
        return self.node_id is not None

    def send(self, frame: Frame) -> None:
        try:
            self._send_bytes(encode_frame(frame))
        except Exception:
            # a dying transport must not poison routing for everyone else
            log.debug("send to %s failed", self.label, exc_info=True)

    def request_close(self) -> None:
        if self._close is not None:
            self._close()


class BrokerCore:
    """Synchronous frame router over a token -> node-id -> session registry."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens = frozenset(tokens)
        if not self.tokens:
            raise ValueError("broker needs at least one token")
        self._registry: dict[str, dict[str, BrokerSession]] = {}

    def connect(self, send_bytes: Callable[[bytes], None],
                close: Callable[[], None] | None = None,
                label: str = "?") -> BrokerSession:
        return BrokerSession(send_bytes, close, label)

    def disconnect(self, sess: BrokerSession) -> None:
        if not sess.authed:
            return
        peers = self._registry.get(sess.token)
        if peers and peers.get(sess.node_id) is sess:
            del peers[sess.node_id]
            if not peers:
                del self._registry[sess.token]
        sess.node_id = None
        sess.token = None

    def node(self, token: str, node_id: str) -> BrokerSession | None:
        return self._registry.get(token, {}).get(node_id)

    def handle_line(self, sess: BrokerSession, line: bytes | str) -> None:
        """Process one newline-delimited line from a session.

        Every outcome is an in-band frame (or silence); content never kills
        the connection. Only a failed auth asks the transport to close.
        """
        try:
            frame = parse_frame(line)
        except ProtocolError as e:
            sess.send(ErrFrame(e.code))
            return
        if isinstance(frame, AuthFrame):
            self._auth(sess, frame)
            return
        if not sess.authed:
            sess.send(ErrFrame(protocol.NOT_AUTHED))
            return
        if isinstance(frame, (OkFrame, ErrFrame)):
            return  # status frames are point-to-point acks, never routed
        self._route(sess, frame)

    def _auth(self, sess: BrokerSession, frame: AuthFrame) -> None:
        if sess.authed:
            sess.send(ErrFrame(protocol.ALREADY_AUTHED))
            return
        if frame.token not in self.tokens:
            sess.send(ErrFrame(protocol.AUTH_FAILED))
            sess.request_close()
            return
        peers = self._registry.setdefault(frame.token, {})
        if frame.node in peers:
            sess.send(ErrFrame(protocol.DUPLICATE_NODE))
            return
        sess.node_id = frame.node
        sess.token = frame.token
        sess.pins = frozenset(frame.pins)
        sess.tele = frame.tele
        peers[frame.node] = sess
        sess.send(OkFrame())

    def _route(self, sender: BrokerSession, frame: Frame) -> None:
        peers = self._registry.get(sender.token, {})
        if isinstance(frame, VwFrame):
            for peer in peers.values():
                if peer is not sender and frame.pin in peer.pins:
                    peer.send(frame)
        elif isinstance(frame, TeleFrame):
            for peer in peers.values():
                if peer is not sender and peer.tele:
                    peer.send(frame)
        elif isinstance(frame, NotifyFrame):
            for peer in peers.values():
                if peer is not sender:
                    peer.send(frame)
        elif isinstance(frame, BridgeFrame):
            dst = peers.get(frame.dst)
            if dst is None:
                sender.send(ErrFrame(protocol.NO_ROUTE))
            else:
                dst.send(frame)
        else:  # pragma: no cover - the frame union is closed
            sender.send(ErrFrame(protocol.UNKNOWN_KIND))


def load_tokens(path: str) -> frozenset[str]:
    """Token file: one token per line, blank lines and # comments ignored."""
    tokens = set()
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if line and not line.startswith("#"):
                tokens.add(line)
    if not tokens:
        raise ValueError(f"no tokens found in {path}")
    return frozenset(tokens)


async def _read_line(reader: asyncio.StreamReader) -> tuple[bytes | None, bool]:
    """Next line, or (None, _) at EOF. Second value flags an oversized line.

    An over-limit line is consumed through its newline and reported as
    oversized so the caller can answer with a parse error; the stream then
    continues at the next line.
    """
    overrun = False
    while True:
        try:
            line = await reader.readuntil(b"\n")
        except asyncio.IncompleteReadError:
            return None, overrun
        except asyncio.LimitOverrunError as e:
            overrun = True
            await reader.read(e.consumed or MAX_LINE_BYTES)
            continue
        if overrun:
            return b"", True  # tail of a line we already refused to buffer
        return line, False


class BrokerServer:
    """TCP + WebSocket front end around one BrokerCore."""

    def __init__(self, core: BrokerCore, tcp_host: str = "127.0.0.1", tcp_port: int = 9042,
                 ws_host: str = "127.0.0.1", ws_port: int = 9043, ws_path: str = "/ws"):
        self.core = core
        self._tcp_bind = (tcp_host, tcp_port)
        self._ws_bind = (ws_host, ws_port)
        self.ws_path = ws_path
        self._tcp_server: asyncio.AbstractServer | None = None
        self._ws_server = None
        self.tcp_addr: tuple[str, int] | None = None
        self.ws_addr: tuple[str, int] | None = None

    async def start(self) -> None:
        import websockets

        self._tcp_server = await asyncio.start_server(
            self._tcp_conn, self._tcp_bind[0], self._tcp_bind[1], limit=MAX_LINE_BYTES)
        sock = self._tcp_server.sockets[0]
        self.tcp_addr = sock.getsockname()[:2]
        self._ws_server = await websockets.serve(
            self._ws_conn, self._ws_bind[0], self._ws_bind[1], max_size=MAX_LINE_BYTES)
        wsock = next(iter(self._ws_server.sockets))
        self.ws_addr = wsock.getsockname()[:2]
        log.info("listening tcp=%s:%d ws=%s:%d", *self.tcp_addr, *self.ws_addr)

    async def close(self) -> None:
        if self._tcp_server is not None:
            self._tcp_server.close()
            await self._tcp_server.wait_closed()
        if self._ws_server is not None:
            self._ws_server.close()
            await self._ws_server.wait_closed()

    async def serve_forever(self) -> None:
        assert self._tcp_server is not None, "call start() first"
        await asyncio.gather(self._tcp_server.serve_forever())

    async def _tcp_conn(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")

        def close() -> None:
            if not writer.is_closing():
                writer.close()

        sess = self.core.connect(writer.write, close, label=f"tcp:{peer}")
        try:
            while True:
                line, oversized = await _read_line(reader)
                if line is None:
                    break
                if oversized:
                    sess.send(ErrFrame(protocol.BAD_JSON))
                    continue
                self.core.handle_line(sess, line)
                if writer.is_closing():
                    break
        except ConnectionError:
            pass
        finally:
            self.core.disconnect(sess)
            close()

    async def _ws_conn(self, ws) -> None:
        path = getattr(getattr(ws, "request", None), "path", self.ws_path)
        if path.split("?", 1)[0] != self.ws_path:
            await ws.close(code=1008, reason="unknown path")
            return

        outbox: asyncio.Queue[bytes | None] = asyncio.Queue()
        sess = self.core.connect(outbox.put_nowait, lambda: outbox.put_nowait(None),
                                 label=f"ws:{ws.remote_address}")

        async def pump() -> None:
            # single writer task keeps per-connection FIFO over the socket
            while True:
                data = await outbox.get()
                if data is None:
                    await ws.close()
                    return
                await ws.send(data.decode("utf-8"))

        pump_task = asyncio.ensure_future(pump())
        try:
            async for message in ws:
                if isinstance(message, (bytes, bytearray)):
                    message = bytes(message).decode("utf-8", errors="replace")
                for piece in message.split("\n"):
                    if piece.strip():
                        self.core.handle_line(sess, piece)
        except Exception:
            log.debug("ws session %s ended", sess.label, exc_info=True)
        finally:
            self.core.disconnect(sess)
            outbox.put_nowait(None)
            try:
                await pump_task
            except Exception:
                pass


async def run_broker(tokens: frozenset[str], tcp_host: str, tcp_port: int,
                     ws_host: str, ws_port: int,
                     ready: Callable[[BrokerServer], None] | None = None) -> None:
    """Start both listeners and serve until cancelled."""
    server = BrokerServer(BrokerCore(tokens), tcp_host, tcp_port, ws_host, ws_port)
    await server.start()
    if ready is not None:
        ready(server)
    try:
        await asyncio.Event().wait()
    finally:
        await server.close()
