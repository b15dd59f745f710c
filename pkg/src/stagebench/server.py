"""Staging server: in-memory shard stores behind the binary wire protocol,
plus a ServerManager that prepares any backend kind and hands out ServerInfo.

A memserver process hosts one listener per endpoint, each with its own
key space, so a multi-endpoint process behaves exactly like a cluster of
single-endpoint processes.
"""

from __future__ import annotations

import os
import socket
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import wire
from .datastore import ServerInfo, split_endpoint
from .errors import NotInitializedError, ServerStartupError
from .keys import encode_key

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

# An oversized-but-plausible field is drained so the connection can continue;
# beyond these caps the stream cannot be trusted and the connection closes.
KEY_DRAIN_CAP = 1 << 20
VALUE_DRAIN_CAP = 64 << 20

IDLE_POLL = 0.5
BODY_TIMEOUT = 60.0

DEFAULT_DIR_SHARDS = 4


class ShardStore:
    """One endpoint's key space. Thread-safe."""

    def __init__(self) -> None:
        self._data: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def put(self, key: str, value: bytes) -> None:
        with self._lock:
            self._data[key] = value

    def get(self, key: str) -> bytes | None:
        with self._lock:
            return self._data.get(key)

    def exists(self, key: str) -> bool:
        with self._lock:
            return key in self._data

    def delete(self, key: str) -> bool:
        with self._lock:
            return self._data.pop(key, None) is not None

    def list_keys(self, prefix: str) -> list[str]:
        with self._lock:
            return sorted(k for k in self._data if k.startswith(prefix))

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)


def _check_key(raw: bytes, allow_empty: bool = False) -> str | None:
    """Decode and validate a wire key field; None means invalid."""
    try:
        key = raw.decode("utf-8")
    except UnicodeDecodeError:
        return None
    if "\x00" in key:
        return None
    if not key and not allow_empty:
        return None
    return key


def handle_request(
    opcode: int, key_raw: bytes, value: bytes | None, store: ShardStore
) -> tuple[int, bytes]:
    """Apply one well-framed request to a store; returns (status, payload)."""
    if opcode == wire.OP_PING:
        return wire.ST_OK, b""
    if opcode == wire.OP_LIST:
        prefix = _check_key(key_raw, allow_empty=True)
        if prefix is None:
            return wire.ST_ERR, b"invalid prefix"
        tokens = [encode_key(k) for k in store.list_keys(prefix)]
        return wire.ST_OK, "\n".join(tokens).encode("ascii")
    key = _check_key(key_raw)
    if key is None:
        return wire.ST_ERR, b"invalid key"
    if opcode == wire.OP_PUT:
        store.put(key, value if value is not None else b"")
        return wire.ST_OK, b""
    if opcode == wire.OP_GET:
        value = store.get(key)
        if value is None:
            return wire.ST_NOT_FOUND, b""
        return wire.ST_OK, value
    if opcode == wire.OP_EXISTS:
        return (wire.ST_OK, b"") if store.exists(key) else (wire.ST_NOT_FOUND, b"")
    if opcode == wire.OP_DEL:
        return wire.ST_OK, b"1" if store.delete(key) else b"0"
    return wire.ST_ERR, b"unknown opcode"


class MemServer:
    """Threaded TCP server hosting one ShardStore per bind endpoint."""

    def __init__(self, bind: list[str]) -> None:
        if not bind:
            raise ValueError("memserver needs at least one bind endpoint")
        self._bind = list(bind)
        self._listeners: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._conn_threads: set[threading.Thread] = set()
        self._conn_lock = threading.Lock()
        self._stop = threading.Event()
        self.stores: list[ShardStore] = []
        self.endpoints: list[str] = []

    def start(self) -> list[str]:
        if self._listeners:
            raise ServerStartupError("server already started")
        try:
            for spec in self._bind:
                host, port = split_endpoint(spec)
                sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
                try:
                    sock.bind((host, port))
                except OSError as exc:
                    sock.close()
                    raise ServerStartupError(f"cannot bind {spec}: {exc}") from exc
                sock.listen(128)
                sock.settimeout(0.2)
                self._listeners.append(sock)
                self.endpoints.append(f"{host}:{sock.getsockname()[1]}")
                self.stores.append(ShardStore())
        except ServerStartupError:
            self.stop()
            raise
        for sock, store in zip(self._listeners, self.stores):
            t = threading.Thread(
                target=self._accept_loop, args=(sock, store), daemon=True
            )
            t.start()
            self._threads.append(t)
        return list(self.endpoints)

    def request_stop(self) -> None:
        self._stop.set()

    def wait(self, timeout: float | None = None) -> bool:
        return self._stop.wait(timeout)

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout)
        for sock in self._listeners:
            try:
                sock.close()
            except OSError:
                pass
        with self._conn_lock:
            conns = list(self._conn_threads)
        for t in conns:
            t.join(timeout)
        self._listeners.clear()
        self._threads.clear()

    def _accept_loop(self, listener: socket.socket, store: ShardStore) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(
                target=self._serve_conn, args=(conn, store), daemon=True
            )
            with self._conn_lock:
                self._conn_threads.add(t)
            t.start()

    def _serve_conn(self, conn: socket.socket, store: ShardStore) -> None:
        try:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(IDLE_POLL)
            while True:
                try:
                    first = conn.recv(1)
                except socket.timeout:
                    if self._stop.is_set():
                        return
                    continue
                except OSError:
                    return
                if not first:
                    return
                conn.settimeout(BODY_TIMEOUT)
                try:
                    keep = self._serve_request(conn, first[0], store)
                except (wire.WireEOF, OSError):
                    return
                if not keep:
                    return
                conn.settimeout(IDLE_POLL)
        finally:
            try:
                conn.close()
            except OSError:
                pass
            with self._conn_lock:
                self._conn_threads.discard(threading.current_thread())

    def _serve_request(
        self, conn: socket.socket, opcode: int, store: ShardStore
    ) -> bool:
        """Read the rest of one request and answer it.

        Returns False when the connection must close (framing no longer
        trustworthy, or shutdown).
        """
        if opcode not in wire.REQUEST_OPS:
            wire.send_response(conn, wire.ST_ERR, b"unknown opcode")
            return False
        (key_len,) = _U32.unpack(wire.recv_exact(conn, 4))
        if key_len > wire.MAX_KEY_LEN:
            if key_len > KEY_DRAIN_CAP:
                wire.send_response(conn, wire.ST_ERR, b"key too long")
                return False
            wire.recv_exact(conn, key_len)
            if opcode == wire.OP_PUT and not self._drain_value(conn):
                return False
            wire.send_response(conn, wire.ST_ERR, b"key too long")
            return True
        key_raw = wire.recv_exact(conn, key_len)
        if opcode == wire.OP_SHUTDOWN:
            wire.send_response(conn, wire.ST_OK, b"")
            self.request_stop()
            return False
        value = None
        if opcode == wire.OP_PUT:
            (value_len,) = _U64.unpack(wire.recv_exact(conn, 8))
            if value_len > wire.MAX_VALUE_LEN:
                wire.send_response(conn, wire.ST_ERR, b"value too long")
                return False
            value = wire.recv_exact(conn, value_len)
        status, payload = handle_request(opcode, key_raw, value, store)
        wire.send_response(conn, status, payload)
        return True

    def _drain_value(self, conn: socket.socket) -> bool:
        (value_len,) = _U64.unpack(wire.recv_exact(conn, 8))
        if value_len > VALUE_DRAIN_CAP:
            return False
        remaining = value_len
        while remaining:
            remaining -= len(wire.recv_exact(conn, min(remaining, 1 << 20)))
        return True


def shutdown_endpoint(endpoint: str, timeout: float = 5.0) -> bool:
    """Send SHUTDOWN to one endpoint; False if nothing was listening."""
    host, port = split_endpoint(endpoint)
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            wire.send_request(sock, wire.OP_SHUTDOWN, b"")
            status, _ = wire.read_response(sock)
            return status == wire.ST_OK
    except (OSError, wire.WireEOF):
        return False


@dataclass
class ServerConfig:
    """How to bring up one staging backend."""

    kind: str
    bind: list[str] = field(default_factory=list)
    roots: list[str] = field(default_factory=list)
    shard_count: int | None = None
    info_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bind": list(self.bind),
            "roots": list(self.roots),
            "shard_count": self.shard_count,
            "info_path": self.info_path,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ServerConfig":
        return cls(
            kind=data["kind"],
            bind=list(data.get("bind", ())),
            roots=list(data.get("roots", ())),
            shard_count=data.get("shard_count"),
            info_path=data.get("info_path"),
        )


class ServerManager:
    """Prepares a backend, publishes its ServerInfo, and tears it down."""

    def __init__(self, config: ServerConfig) -> None:
        self.config = config
        self._info: ServerInfo | None = None
        self._server: MemServer | None = None

    def start_server(self) -> ServerInfo:
        cfg = self.config
        if self._info is not None:
            raise ServerStartupError("server already started")
        if cfg.kind == "memserver":
            self._server = MemServer(cfg.bind)
            endpoints = self._server.start()
            self._info = ServerInfo(
                kind="memserver", endpoints=endpoints, shard_count=len(endpoints)
            )
        elif cfg.kind in ("filesystem", "nodelocal"):
            if not cfg.roots:
                raise ServerStartupError(f"{cfg.kind} backend needs at least one root")
            shards = cfg.shard_count or DEFAULT_DIR_SHARDS
            try:
                for root in cfg.roots:
                    for i in range(shards):
                        (Path(root) / f"shard_{i}").mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ServerStartupError(f"cannot prepare roots: {exc}") from exc
            self._info = ServerInfo(
                kind=cfg.kind, roots=list(cfg.roots), shard_count=shards
            )
        else:
            raise ServerStartupError(f"unknown backend kind {cfg.kind!r}")
        if cfg.info_path:
            self._info.save(cfg.info_path)
        return self._info

    def get_server_info(self) -> ServerInfo:
        if self._info is None:
            raise NotInitializedError("server not started")
        return self._info

    def stop_server(self) -> None:
        if self._server is not None:
            self._server.stop()
            self._server = None
        self._info = None

    @property
    def memserver(self) -> MemServer | None:
        return self._server

    def __enter__(self) -> "ServerManager":
        self.start_server()
        return self

    def __exit__(self, *exc) -> None:
        self.stop_server()
