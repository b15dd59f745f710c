"""Client-side staging API over pluggable backends.

Every backend exposes the same four calls: stage_write, stage_read,
poll_staged_data, clean_staged_data. Directory backends (filesystem,
nodelocal) place a key at <root>/shard_<i>/<encoded-key>.val where
i = crc32(key) % shard_count; memserver backends talk the binary wire
protocol to one endpoint per shard.
"""

from __future__ import annotations

import itertools
import json
import os
import secrets
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import wire
from .errors import KeyNotFoundError, NotInitializedError, TransportError
from .keys import decode_key, encode_key, key_bytes, shard_of

DIRECTORY_KINDS = ("filesystem", "nodelocal")
BACKEND_KINDS = DIRECTORY_KINDS + ("memserver",)

DEFAULT_POLL_INTERVAL = 0.01
VALUE_SUFFIX = ".val"
TMP_PREFIX = ".tmp-"


@dataclass
class ServerInfo:
    """Connection record handed from the server side to clients."""

    kind: str
    endpoints: list[str] = field(default_factory=list)
    roots: list[str] = field(default_factory=list)
    shard_count: int = 1

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.shard_count < 1:
            raise ValueError("shard_count must be >= 1")
        if self.kind == "memserver":
            if not self.endpoints:
                raise ValueError("memserver requires at least one endpoint")
            if self.roots:
                raise ValueError("memserver takes no roots")
            if self.shard_count != len(self.endpoints):
                raise ValueError("memserver shard_count must equal endpoint count")
        else:
            if not self.roots:
                raise ValueError(f"{self.kind} requires at least one root")
            if self.endpoints:
                raise ValueError(f"{self.kind} takes no endpoints")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "endpoints": list(self.endpoints),
            "roots": list(self.roots),
            "shard_count": self.shard_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ServerInfo":
        return cls(
            kind=data["kind"],
            endpoints=list(data.get("endpoints", ())),
            roots=list(data.get("roots", ())),
            shard_count=int(data.get("shard_count", 1)),
        )

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ServerInfo":
        return cls.from_dict(json.loads(Path(path).read_text()))


def shard_dir(info: ServerInfo, shard: int) -> Path:
    """Directory holding one shard; shards round-robin across roots."""
    root = info.roots[shard % len(info.roots)]
    return Path(root) / f"shard_{shard}"


def split_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class DataStore:
    """Staging client bound to one ServerInfo.

    Not thread-safe; give each worker thread/process its own instance.
    """

    def __init__(
        self,
        info: ServerInfo,
        client_id: str = "client.r0",
        poll_interval: float = DEFAULT_POLL_INTERVAL,
        socket_timeout: float = 30.0,
    ) -> None:
        self.info = info
        self.client_id = encode_key(client_id)
        self.poll_interval = poll_interval
        self.socket_timeout = socket_timeout
        self._tmp_counter = itertools.count()
        self._socks: dict[int, socket.socket] = {}

    # -- connection plumbing (memserver only) --------------------------------

    def _sock(self, shard: int) -> socket.socket:
        sock = self._socks.get(shard)
        if sock is None:
            host, port = split_endpoint(self.info.endpoints[shard])
            try:
                sock = socket.create_connection((host, port), timeout=self.socket_timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            except OSError as exc:
                raise TransportError(f"cannot reach {host}:{port}: {exc}") from exc
            self._socks[shard] = sock
        return sock

    def _request(
        self, shard: int, opcode: int, key: bytes, value: bytes | None = None
    ) -> tuple[int, bytes]:
        sock = self._sock(shard)
        try:
            wire.send_request(sock, opcode, key, value)
            return wire.read_response(sock)
        except (OSError, ValueError, wire.WireEOF) as exc:
            self._drop(shard)
            raise TransportError(
                f"exchange with {self.info.endpoints[shard]} failed: {exc}"
            ) from exc

    def _drop(self, shard: int) -> None:
        sock = self._socks.pop(shard, None)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    def close(self) -> None:
        for shard in list(self._socks):
            self._drop(shard)

    def __enter__(self) -> "DataStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- the four staging calls ----------------------------------------------

    def stage_write(self, key: str, value: bytes) -> None:
        """Store value under key; atomically replaces any previous value."""
        raw = key_bytes(key)
        if not isinstance(value, (bytes, bytearray, memoryview)):
            raise ValueError("value must be bytes-like")
        value = bytes(value)
        if len(value) > wire.MAX_VALUE_LEN:
            raise ValueError(f"value exceeds {wire.MAX_VALUE_LEN} bytes")
        shard = shard_of(key, self.info.shard_count)
        if self.info.kind == "memserver":
            status, payload = self._request(shard, wire.OP_PUT, raw, value)
            if status != wire.ST_OK:
                raise TransportError(f"PUT failed: {payload.decode('utf-8', 'replace')}")
            return
        target_dir = shard_dir(self.info, shard)
        tmp_name = (
            f"{TMP_PREFIX}{self.client_id}-{next(self._tmp_counter)}"
            f"-{secrets.token_hex(8)}"
        )
        tmp_path = target_dir / tmp_name
        try:
            with open(tmp_path, "wb") as fh:
                fh.write(value)
            os.replace(tmp_path, target_dir / (encode_key(key) + VALUE_SUFFIX))
        except FileNotFoundError as exc:
            raise NotInitializedError(f"backend root not prepared: {target_dir}") from exc
        except BaseException:
            try:
                os.unlink(tmp_path)
            except OSError:
                pass
            raise

    def stage_read(self, key: str) -> bytes:
        """Return the full value for key or raise KeyNotFoundError."""
        raw = key_bytes(key)
        shard = shard_of(key, self.info.shard_count)
        if self.info.kind == "memserver":
            status, payload = self._request(shard, wire.OP_GET, raw)
            if status == wire.ST_OK:
                return payload
            if status == wire.ST_NOT_FOUND:
                raise KeyNotFoundError(key)
            raise TransportError(f"GET failed: {payload.decode('utf-8', 'replace')}")
        target_dir = shard_dir(self.info, shard)
        path = target_dir / (encode_key(key) + VALUE_SUFFIX)
        try:
            with open(path, "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            if not target_dir.is_dir():
                raise NotInitializedError(
                    f"backend root not prepared: {target_dir}"
                ) from None
            raise KeyNotFoundError(key) from None

    def _exists(self, key: str) -> bool:
        raw = key_bytes(key)
        shard = shard_of(key, self.info.shard_count)
        if self.info.kind == "memserver":
            status, payload = self._request(shard, wire.OP_EXISTS, raw)
            if status == wire.ST_OK:
                return True
            if status == wire.ST_NOT_FOUND:
                return False
            raise TransportError(f"EXISTS failed: {payload.decode('utf-8', 'replace')}")
        path = shard_dir(self.info, shard) / (encode_key(key) + VALUE_SUFFIX)
        return path.is_file()

    def poll_staged_data(
        self, keys, timeout: float, interval: float | None = None
    ) -> bool:
        """Wait until every key exists; True on success, False on deadline.

        timeout=0 performs exactly one existence pass. Keys are re-checked
        each round, so a key deleted between rounds keeps the poll waiting.
        """
        keys = [keys] if isinstance(keys, str) else list(keys)
        for key in keys:
            key_bytes(key)
        if timeout < 0:
            raise ValueError("timeout must be >= 0")
        interval = self.poll_interval if interval is None else interval
        if interval <= 0:
            raise ValueError("interval must be > 0")
        deadline = time.monotonic() + timeout
        while True:
            if all(self._exists(key) for key in keys):
                return True
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return False
            time.sleep(min(interval, remaining))

    def clean_staged_data(self, prefix: str = "") -> int:
        """Delete every key starting with prefix; returns number deleted."""
        if not isinstance(prefix, str):
            raise ValueError("prefix must be str")
        if prefix:
            key_bytes(prefix)
        if self.info.kind == "memserver":
            deleted = 0
            raw_prefix = prefix.encode("utf-8")
            for shard in range(self.info.shard_count):
                status, payload = self._request(shard, wire.OP_LIST, raw_prefix)
                if status != wire.ST_OK:
                    raise TransportError(
                        f"LIST failed: {payload.decode('utf-8', 'replace')}"
                    )
                tokens = payload.decode("ascii").split("\n") if payload else []
                for token in tokens:
                    key = decode_key(token)
                    status, dp = self._request(
                        shard, wire.OP_DEL, key.encode("utf-8")
                    )
                    if status != wire.ST_OK:
                        raise TransportError(
                            f"DEL failed: {dp.decode('utf-8', 'replace')}"
                        )
                    deleted += int(dp)
            return deleted
        deleted = 0
        for shard in range(self.info.shard_count):
            sdir = shard_dir(self.info, shard)
            if not sdir.is_dir():
                continue
            for entry in os.listdir(sdir):
                if not entry.endswith(VALUE_SUFFIX) or entry.startswith(TMP_PREFIX):
                    continue
                try:
                    key = decode_key(entry[: -len(VALUE_SUFFIX)])
                except ValueError:
                    continue
                if not key.startswith(prefix):
                    continue
                try:
                    os.unlink(sdir / entry)
                except FileNotFoundError:
                    continue
                deleted += 1
        return deleted
