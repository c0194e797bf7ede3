"""Storage/code resolvers: the narrow interface analysis needs from a chain."""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Protocol

from tokenflow.evm.hashing import EIP1967_IMPLEMENTATION_SLOT

ADDRESS_MASK = (1 << 160) - 1


class ResolverError(Exception):
    """A resolver could not answer (transport failure, bad response)."""


class Resolver(Protocol):
    def get_storage(self, address: int, slot: int) -> int: ...

    def get_code(self, address: int) -> bytes: ...


@dataclass
class FixtureResolver:
    """In-memory chain state: ``code[address]`` and ``storage[address][slot]``."""

    code: dict[int, bytes] = field(default_factory=dict)
    storage: dict[int, dict[int, int]] = field(default_factory=dict)
    # addresses whose lookups raise ResolverError
    failing: set[int] = field(default_factory=set)

    def get_storage(self, address: int, slot: int) -> int:
        if address in self.failing:
            raise ResolverError(f"storage of {address:#x} unavailable")
        return self.storage.get(address, {}).get(slot, 0)

    def get_code(self, address: int) -> bytes:
        if address in self.failing:
            raise ResolverError(f"code of {address:#x} unavailable")
        return self.code.get(address, b"")


class CachingResolver:
    """Thread-safe LRU cache in front of another resolver, with hit/miss counters."""

    def __init__(self, inner: Resolver, capacity: int = 4096) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.inner = inner
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._cache: OrderedDict[tuple, object] = OrderedDict()
        self._lock = threading.Lock()

    def _get(self, key: tuple, fetch):
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                self.hits += 1
                return self._cache[key]
            self.misses += 1
        value = fetch()
        with self._lock:
            self._cache[key] = value
            self._cache.move_to_end(key)
            while len(self._cache) > self.capacity:
                self._cache.popitem(last=False)
        return value

    def get_storage(self, address: int, slot: int) -> int:
        return self._get(("s", address, slot), lambda: self.inner.get_storage(address, slot))

    def get_code(self, address: int) -> bytes:
        return self._get(("c", address), lambda: self.inner.get_code(address))


def implementation_of(resolver: Resolver, address: int) -> int | None:
    """EIP-1967 implementation address stored by a proxy, if any."""
    word = resolver.get_storage(address, EIP1967_IMPLEMENTATION_SLOT)
    impl = word & ADDRESS_MASK
    return impl or None
