#!/usr/bin/env python3
"""
Result Cache Manager
Keyed, thread-safe TTL cache for expensive results (reference solutions,
order and stability reports)
"""

import time
import threading
from datetime import datetime
from typing import Any, Callable, Dict, Hashable, Optional, Tuple
import logging

from settings import get_settings

logger = logging.getLogger(__name__)


class CacheManager:
    """
    Keyed result cache

    Features:
    - Per-entry time-to-live
    - Thread-safe operations (reentrant lock)
    - Concurrent requests for the same key compute once
    - Manual invalidation of one key or the whole cache
    """

    def __init__(self, cache_ttl_seconds: Optional[float] = None):
        """
        Args:
            cache_ttl_seconds: entry time-to-live, defaults to PEER_CACHE_TTL
        """
        self.cache_ttl = cache_ttl_seconds if cache_ttl_seconds is not None else get_settings().cache_ttl
        self.cache_data: Dict[Hashable, Tuple[float, Any]] = {}
        self.cache_lock = threading.RLock()
        self._key_locks: Dict[Hashable, threading.Lock] = {}
        self.hits = 0
        self.misses = 0

        logger.info(f"🚀 Cache Manager initialized with {self.cache_ttl}s TTL")

    def _is_fresh(self, stored_at: float) -> bool:
        return time.time() - stored_at < self.cache_ttl

    def get(self, key: Hashable) -> Optional[Any]:
        """
        Get a cached value if present and not expired

        Returns:
            the value, or None when missing or expired
        """
        with self.cache_lock:
            entry = self.cache_data.get(key)
            if entry is None:
                return None
            stored_at, value = entry
            if not self._is_fresh(stored_at):
                logger.info(f"📅 Cache entry {key!r} expired (age: {time.time() - stored_at:.1f}s)")
                del self.cache_data[key]
                self._key_locks.pop(key, None)
                return None
            return value

    def set(self, key: Hashable, value: Any) -> None:
        with self.cache_lock:
            self.cache_data[key] = (time.time(), value)
            logger.debug(f"💾 Cached {key!r}")

    def get_or_compute(self, key: Hashable, compute: Callable[[], Any]) -> Any:
        """
        Return the cached value for key or compute, store and return it

        Errors raised by compute propagate and nothing is stored.
        """
        value = self.get(key)
        if value is not None:
            with self.cache_lock:
                self.hits += 1
            logger.debug(f"✅ Cache hit {key!r}")
            return value

        with self.cache_lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())

        with key_lock:
            # another thread may have filled the entry while we waited
            value = self.get(key)
            if value is not None:
                with self.cache_lock:
                    self.hits += 1
                return value

            with self.cache_lock:
                self.misses += 1
            logger.info(f"🔄 Computing {key!r}...")
            start_time = time.time()
            try:
                value = compute()
                logger.info(f"✅ Computed {key!r} in {time.time() - start_time:.2f}s")
                self.set(key, value)
                return value
            finally:
                # waiters keep their own reference to key_lock
                with self.cache_lock:
                    self._key_locks.pop(key, None)

    def invalidate(self, key: Optional[Hashable] = None) -> int:
        """
        Drop one entry, or every entry when key is None

        Returns:
            number of entries removed
        """
        with self.cache_lock:
            if key is None:
                removed = len(self.cache_data)
                self.cache_data.clear()
                self._key_locks.clear()
                logger.info(f"🗑️ Cache invalidated ({removed} entries)")
                return removed
            removed = 1 if self.cache_data.pop(key, None) is not None else 0
            self._key_locks.pop(key, None)
            return removed

    def get_cache_info(self) -> Dict:
        """
        Returns:
            Dict: entry count, hit/miss counters, TTL and per-entry ages
        """
        with self.cache_lock:
            now = time.time()
            entries = [
                {
                    "key": repr(key),
                    "age_seconds": round(now - stored_at, 1),
                    "valid": self._is_fresh(stored_at),
                    "cached_at": datetime.fromtimestamp(stored_at).isoformat(),
                }
                for key, (stored_at, _) in self.cache_data.items()
            ]
            return {
                "entries": len(entries),
                "ttl_seconds": self.cache_ttl,
                "hits": self.hits,
                "misses": self.misses,
                "items": entries,
            }


# Global cache manager instance
_cache_manager = None


def get_cache_manager() -> CacheManager:
    """
    Get the global cache manager instance (singleton pattern)

    Returns:
        CacheManager: Global cache manager instance
    """
    global _cache_manager
    if _cache_manager is None:
        _cache_manager = CacheManager()
    return _cache_manager


def get_cache_status() -> Dict:
    return get_cache_manager().get_cache_info()


def invalidate_cache() -> int:
    return get_cache_manager().invalidate()
