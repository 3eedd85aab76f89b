"""
In-process memoization for solved geometry.
Shared by the filling edge solves and the skeleton checks.
"""
import hashlib
import json
import logging
import threading
from functools import wraps
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

MAX_ITEMS = 1000
KEEP_ITEMS = 500


def generate_key(prefix: str, data: Any) -> str:
    """Generates a stable key from JSON-serializable data."""
    data_str = json.dumps(data, sort_keys=True, default=str)
    hash_obj = hashlib.md5(data_str.encode())
    return f"{prefix}:{hash_obj.hexdigest()}"


class MemoCache:
    """Thread-safe dictionary cache that trims itself when it grows."""

    def __init__(self, max_items: int = MAX_ITEMS, keep_items: int = KEEP_ITEMS):
        self.max_items = max_items
        self.keep_items = keep_items
        self.memory_cache: Dict[str, Any] = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            if key in self.memory_cache:
                self.hits += 1
                return self.memory_cache[key]
            self.misses += 1
            return None

    def set(self, key: str, value: Any) -> None:
        with self._lock:
            self.memory_cache[key] = value
            if len(self.memory_cache) > self.max_items:
                # Keep only the most recent entries
                items = list(self.memory_cache.items())
                self.memory_cache = dict(items[-self.keep_items:])
                logger.warning(f"Cache trimmed to {self.keep_items} entries")

    def delete(self, key: str) -> bool:
        with self._lock:
            return self.memory_cache.pop(key, None) is not None

    def clear(self) -> None:
        with self._lock:
            self.memory_cache.clear()
            self.hits = 0
            self.misses = 0

    def get_stats(self) -> Dict[str, int]:
        with self._lock:
            return {"size": len(self.memory_cache), "hits": self.hits, "misses": self.misses}


cache_service = MemoCache()


def cache_result(prefix: str, cache: Optional[MemoCache] = None):
    """Decorator memoizing a pure function on its JSON-able arguments."""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            store = cache or cache_service
            cache_key = generate_key(prefix, {"args": args, "kwargs": kwargs, "function": func.__name__})
            cached = store.get(cache_key)
            if cached is not None:
                logger.debug(f"Cache hit for {func.__name__}")
                return cached
            result = func(*args, **kwargs)
            store.set(cache_key, result)
            return result
        return wrapper
    return decorator
