import os
import threading

import pytest
from pydantic import ValidationError

import settings
from cache_manager import CacheManager, get_cache_manager


def test_defaults():
    current = settings.get_settings()
    assert current.kkt_tol == 1e-12
    assert current.kkt_residual_tol == 1e-11
    assert current.max_sweeps == 60
    assert current.reference_backend == "collocation"
    assert current.api_port == 8765


def test_environment_override(monkeypatch):
    monkeypatch.setenv("PEER_MAX_SWEEPS", "12")
    monkeypatch.setenv("PEER_REFERENCE_BACKEND", "kkt")
    current = settings.reload_settings(env_file=os.devnull)
    assert current.max_sweeps == 12
    assert current.reference_backend == "kkt"
    assert settings.get_settings() is current


def test_invalid_environment(monkeypatch):
    monkeypatch.setenv("PEER_REFERENCE_BACKEND", "rk4")
    with pytest.raises(ValidationError):
        settings.reload_settings(env_file=os.devnull)


def test_env_file(tmp_path, monkeypatch):
    env_file = tmp_path / ".env"
    env_file.write_text("PEER_NTHETA=500\n")
    monkeypatch.delenv("PEER_NTHETA", raising=False)
    try:
        assert settings.reload_settings(env_file=str(env_file)).ntheta == 500
    finally:
        os.environ.pop("PEER_NTHETA", None)


def test_cache_get_or_compute_once():
    cache = CacheManager(cache_ttl_seconds=60)
    calls = []

    def compute():
        calls.append(1)
        return {"value": 42}

    assert cache.get_or_compute("k", compute) == {"value": 42}
    assert cache.get_or_compute("k", compute) == {"value": 42}
    assert len(calls) == 1
    info = cache.get_cache_info()
    assert info["entries"] == 1
    assert info["hits"] == 1 and info["misses"] == 1


def test_cache_concurrent_requests_compute_once():
    cache = CacheManager(cache_ttl_seconds=60)
    calls = []
    gate = threading.Event()

    def compute():
        gate.wait(1.0)
        calls.append(1)
        return "done"

    threads = [threading.Thread(target=cache.get_or_compute, args=("slow", compute)) for _ in range(4)]
    for thread in threads:
        thread.start()
    gate.set()
    for thread in threads:
        thread.join()
    assert len(calls) == 1
    assert cache.get("slow") == "done"


def test_cache_expiry_and_invalidate():
    cache = CacheManager(cache_ttl_seconds=0)
    cache.set("a", 1)
    assert cache.get("a") is None

    cache = CacheManager(cache_ttl_seconds=60)
    cache.set("a", 1)
    cache.set("b", 2)
    assert cache.invalidate("a") == 1
    assert cache.get("a") is None
    assert cache.invalidate() == 1


def test_cache_errors_not_stored():
    cache = CacheManager(cache_ttl_seconds=60)

    def fail():
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        cache.get_or_compute("x", fail)
    assert cache.get("x") is None


def test_cache_key_locks_are_released():
    cache = CacheManager(cache_ttl_seconds=60)
    for key in range(5):
        cache.get_or_compute(key, lambda: "value")
    assert cache._key_locks == {}

    def fail():
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        cache.get_or_compute("x", fail)
    assert "x" not in cache._key_locks

    cache._key_locks["stale"] = threading.Lock()
    cache.set("stale", 1)
    assert cache.invalidate("stale") == 1
    assert cache._key_locks == {}
    cache._key_locks["other"] = threading.Lock()
    cache.invalidate()
    assert cache._key_locks == {}


def test_cache_singleton_uses_settings_ttl(monkeypatch):
    monkeypatch.setenv("PEER_CACHE_TTL", "120")
    settings.reload_settings(env_file=os.devnull)
    manager = get_cache_manager()
    assert manager.cache_ttl == 120
    assert get_cache_manager() is manager
