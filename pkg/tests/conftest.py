from __future__ import annotations

import pytest

from stagebench.datastore import DataStore, ServerInfo
from stagebench.server import MemServer, ServerConfig, ServerManager

BACKEND_PARAMS = ("filesystem", "nodelocal", "memserver", "memserver-cluster")


def make_backend(kind: str, tmp_path):
    """Returns (info, cleanup) for one backend flavor."""
    if kind == "filesystem":
        manager = ServerManager(
            ServerConfig(kind="filesystem", roots=[str(tmp_path / "fs-root")],
                         shard_count=4)
        )
        return manager.start_server(), manager.stop_server
    if kind == "nodelocal":
        manager = ServerManager(
            ServerConfig(kind="nodelocal",
                         roots=[str(tmp_path / "nl-a"), str(tmp_path / "nl-b")],
                         shard_count=4)
        )
        return manager.start_server(), manager.stop_server
    if kind == "memserver":
        server = MemServer(["127.0.0.1:0"])
        endpoints = server.start()
        info = ServerInfo(kind="memserver", endpoints=endpoints, shard_count=1)
        return info, server.stop
    if kind == "memserver-cluster":
        server = MemServer(["127.0.0.1:0", "127.0.0.1:0"])
        endpoints = server.start()
        info = ServerInfo(kind="memserver", endpoints=endpoints, shard_count=2)
        return info, server.stop
    raise ValueError(kind)


@pytest.fixture(params=BACKEND_PARAMS)
def any_backend(request, tmp_path):
    info, cleanup = make_backend(request.param, tmp_path)
    yield info
    cleanup()


@pytest.fixture
def fs_info(tmp_path):
    info, cleanup = make_backend("filesystem", tmp_path)
    yield info
    cleanup()


@pytest.fixture
def mem_info():
    info, cleanup = make_backend("memserver", tmp_path=None)
    yield info
    cleanup()


@pytest.fixture
def store_factory():
    stores = []

    def factory(info, **kwargs) -> DataStore:
        kwargs.setdefault("client_id", "test.r0")
        store = DataStore(info, **kwargs)
        stores.append(store)
        return store

    yield factory
    for store in stores:
        store.close()
