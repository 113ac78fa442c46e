"""Minimal rate-limited JSON client shared by the live providers."""

from __future__ import annotations

import logging
import threading
import time
from typing import Any, Callable

import requests

log = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """A provider call failed in a way that may succeed on retry."""


class RateLimiter:
    """Spaces calls at least ``1 / rate`` seconds apart across threads."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / rate if rate > 0 else 0.0
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            wait = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait > 0:
            self._sleep(wait)


class JsonClient:
    def __init__(
        self,
        session: requests.Session | None = None,
        rate: float = 1.0,
        retries: int = 4,
        backoff: float = 1.0,
        timeout: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.session = session or requests.Session()
        self.limiter = RateLimiter(rate, sleep=sleep)
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sleep = sleep

    def get(self, url: str, params: dict[str, Any]) -> Any:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            self.limiter.acquire()
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                last = exc
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code not in (429, 500, 502, 503, 504):
                    raise TransportError(f"{url}: HTTP {resp.status_code}")
                last = TransportError(f"{url}: HTTP {resp.status_code}")
            if attempt < self.retries:
                delay = self.backoff * 2**attempt
                log.warning("retrying %s in %.1fs (%s)", url, delay, last)
                self._sleep(delay)
        raise TransportError(f"{url}: retry budget exhausted ({last})")
