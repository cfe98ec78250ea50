"""Run next-cycle pre-scheduling off the in-cycle path.

While cycle t is being matched and rescheduled, the strategy for cycle t+1 is
computed on a worker thread from snapshots taken at the end of cycle t-1's
bookkeeping (the demand history and the β in force). The simulator collects it
at the boundary of cycle t+1; the strategy is published as one object, never
in pieces.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Any

from .errors import SeerError

logger = logging.getLogger(__name__)


@dataclass
class _Slot:
    cycle: int
    result: Any = None
    error: BaseException | None = None
    thread: threading.Thread | None = field(default=None, repr=False)


def _run_captured(slot: _Slot, fn, args, kwargs):
    """Execute fn and park its result (or exception) in ``slot``.

    Kept as a standalone function so it can be unit-tested without spawning a
    real thread.
    """
    try:
        slot.result = fn(*args, **kwargs)
    except Exception as exc:  # pylint: disable=broad-exception-caught
        logger.debug("background pre-schedule for cycle %d failed: %s", slot.cycle, exc)
        slot.error = exc


class StrategyHandoff:
    """Single-slot handoff of one cycle's pre-scheduling result.

    With ``threaded=False`` the work runs synchronously inside ``submit`` so
    tests and inline diagnostics stay deterministic and no thread outlives
    the run.
    """

    def __init__(self, threaded: bool = True):
        self.threaded = threaded
        self._slot: _Slot | None = None

    @property
    def pending(self) -> int | None:
        """Cycle of the submitted but not yet collected work, if any."""
        return None if self._slot is None else self._slot.cycle

    def submit(self, cycle: int, fn, *args, **kwargs):
        if self._slot is not None:
            raise SeerError(f"strategy for cycle {self._slot.cycle} was never collected")
        slot = _Slot(cycle)
        self._slot = slot
        if not self.threaded:
            _run_captured(slot, fn, args, kwargs)
            return
        slot.thread = threading.Thread(
            target=_run_captured, args=(slot, fn, args, kwargs), name=f"preschedule-{cycle}", daemon=True
        )
        slot.thread.start()

    def collect(self, cycle: int):
        """Wait for the work submitted for ``cycle`` and return its result (re-raising its error)."""
        slot = self._slot
        if slot is None or slot.cycle != cycle:
            raise SeerError(f"no strategy was submitted for cycle {cycle}")
        if slot.thread is not None:
            slot.thread.join()
        self._slot = None
        if slot.error is not None:
            raise slot.error
        return slot.result

    def close(self):
        """Join any outstanding worker."""
        if self._slot is not None and self._slot.thread is not None:
            self._slot.thread.join()
        self._slot = None
