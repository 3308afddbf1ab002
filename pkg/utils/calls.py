from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Dict, Optional

from .errors import CallLimitError


@dataclass
class CallTracker:
    """Solver-call accounting helper.

    `limit=None` means unlimited. Safe to share between worker threads.
    """

    limit: Optional[int] = None
    used: int = 0
    counters: Dict[str, int] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def can_spend(self, calls: int) -> bool:
        return self.limit is None or self.used + calls <= self.limit

    def ensure_within_limit(self, calls: int) -> None:
        if not self.can_spend(calls):
            raise CallLimitError(
                f"Solver-call budget exceeded: used {self.used}, request {calls}, limit {self.limit}"
            )

    def spend(self, action: str, calls: int = 1) -> None:
        with self._lock:
            self.ensure_within_limit(calls)
            self.used += calls
            self.counters[action] = self.counters.get(action, 0) + calls

    def reset(self) -> None:
        with self._lock:
            self.used = 0
            self.counters.clear()
