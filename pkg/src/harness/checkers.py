"""
Consistency checkers against a naive key-value model
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from ..core.adict import OpKind, Operation
from ..core.ads import ABORT
from .simulation import HistoryEntry, ViewEntry


logger = logging.getLogger(__name__)

KvsState = Tuple[Tuple[bytes, bytes], ...]

DEFAULT_SEARCH_BUDGET = 200_000


class CheckOutcome(Enum):
    OK = "ok"
    VIOLATION = "violation"
    INCONCLUSIVE = "inconclusive"


@dataclass
class CheckResult:
    outcome: CheckOutcome
    detail: str = ""
    explored: int = 0

    def __bool__(self) -> bool:
        return self.outcome is CheckOutcome.OK


class NaiveKvs:
    """Sequential reference semantics on immutable snapshots."""

    initial: KvsState = ()

    @staticmethod
    def apply(state: KvsState, op: Operation) -> Tuple[KvsState, Any]:
        if op.kind is OpKind.GET:
            return state, dict(state).get(op.key)
        if op.kind is OpKind.LIST:
            return state, tuple(k for k, _ in state)
        if op.kind is OpKind.PUT:
            data = dict(state)
            data[op.key] = op.value
            return tuple(sorted(data.items())), None
        if op.kind is OpKind.DEL:
            data = dict(state)
            data.pop(op.key, None)
            return tuple(sorted(data.items())), None
        return state, None


def search_budget(config: Optional[Mapping[str, Any]]) -> int:
    """State budget for check_linearizable from the harness section."""
    return int((config or {}).get('harness', {}).get('search_budget', DEFAULT_SEARCH_BUDGET))


def check_linearizable(entries: Sequence[HistoryEntry],
                       budget: int = DEFAULT_SEARCH_BUDGET) -> CheckResult:
    """
    Search for a sequential order of the history that respects real time
    and the naive model. Aborted operations are dropped; operations that
    never completed may or may not have taken effect.
    """
    ops = [e for e in entries if not (e.completed and e.response is ABORT)]
    if not ops:
        return CheckResult(CheckOutcome.OK, "empty history")

    infinity = float("inf")
    invoked = [e.invoked_at for e in ops]
    responded = [e.responded_at if e.completed else infinity for e in ops]
    required = 0
    for index, entry in enumerate(ops):
        if entry.completed:
            required |= 1 << index

    stack: List[Tuple[int, KvsState]] = [(0, NaiveKvs.initial)]
    seen = set()
    explored = 0
    while stack:
        done, state = stack.pop()
        if done & required == required:
            return CheckResult(CheckOutcome.OK, explored=explored)
        if (done, state) in seen:
            continue
        seen.add((done, state))
        explored += 1
        if explored > budget:
            return CheckResult(CheckOutcome.INCONCLUSIVE,
                               f"search budget of {budget} states exhausted", explored)

        horizon = min((responded[i] for i in range(len(ops)) if not done >> i & 1),
                      default=infinity)
        for index in range(len(ops)):
            if done >> index & 1 or invoked[index] > horizon:
                continue
            new_state, response = NaiveKvs.apply(state, ops[index].operation)
            if ops[index].completed and response != ops[index].response:
                continue
            stack.append((done | 1 << index, new_state))

    return CheckResult(CheckOutcome.VIOLATION, "no legal sequential order", explored)


def _replay_view(client_id: int, view: Sequence[ViewEntry]) -> Optional[str]:
    state = NaiveKvs.initial
    for entry in view:
        state, response = NaiveKvs.apply(state, entry.operation)
        if response != entry.response:
            return (f"view of client {client_id}: {entry.operation} by client "
                    f"{entry.client_id} returned {entry.response!r}, model says {response!r}")
    return None


def _real_time_violation(client_id: int, view: Sequence[ViewEntry]) -> Optional[str]:
    """An entry placed before another that responded before it was invoked."""
    earliest: Optional[Tuple[int, ViewEntry]] = None
    for entry in reversed(view):
        if earliest is not None and entry.invoked_at is not None and earliest[0] < entry.invoked_at:
            return (f"view of client {client_id}: {entry.operation} by client {entry.client_id} "
                    f"precedes {earliest[1].operation}, which responded before it was invoked")
        if entry.responded_at is not None and (earliest is None or entry.responded_at < earliest[0]):
            earliest = (entry.responded_at, entry)
    return None


def check_fork_linearizable(views: Mapping[int, Sequence[ViewEntry]],
                            history: Optional[Sequence[HistoryEntry]] = None) -> CheckResult:
    """
    Each view must be a legal sequential history that respects real-time
    order and contains its client's own completed operations, and any
    operation present in two views must be preceded by the same operations
    in both.
    """
    for client_id, view in views.items():
        problem = _replay_view(client_id, view) or _real_time_violation(client_id, view)
        if problem:
            return CheckResult(CheckOutcome.VIOLATION, problem)

    if history is not None:
        for client_id, view in views.items():
            present = {entry.op_id for entry in view}
            last = max((e.op_id[1] for e in view if e.client_id == client_id), default=-1)
            for entry in history:
                if (entry.client_id == client_id and entry.completed
                        and entry.response is not ABORT and entry.op_id[1] <= last
                        and entry.op_id not in present):
                    return CheckResult(CheckOutcome.VIOLATION,
                                       f"client {client_id}'s view lacks its own {entry.operation}")

    ids = sorted(views)
    for position, first in enumerate(ids):
        order_a = [e.op_id for e in views[first]]
        index_a = {op_id: i for i, op_id in enumerate(order_a)}
        for second in ids[position + 1:]:
            order_b = [e.op_id for e in views[second]]
            index_b = {op_id: i for i, op_id in enumerate(order_b)}
            shared = [op_id for op_id in order_a if op_id in index_b]
            if not shared:
                continue
            last = shared[-1]
            if order_a[:index_a[last] + 1] != order_b[:index_b[last] + 1]:
                return CheckResult(CheckOutcome.VIOLATION,
                                   f"clients {first} and {second} disagree on the history before {last}")

    return CheckResult(CheckOutcome.OK)


def views_from_history(order: Sequence[HistoryEntry]) -> List[ViewEntry]:
    """A view listing completed, non-aborted entries in the given order."""
    return [ViewEntry(e.op_id, e.client_id, e.operation, e.response, e.invoked_at, e.responded_at)
            for e in order if e.completed and e.response is not ABORT]


def summarize(result: CheckResult) -> Dict[str, Any]:
    return {"outcome": result.outcome.value, "detail": result.detail, "explored": result.explored}
