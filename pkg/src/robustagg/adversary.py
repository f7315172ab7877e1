"""Faulty-node behavior catalog, script engine, and misbehavior tracing.

Faulty nodes run the honest protocol except where a script entry fires;
every executed deviation (other than forging the node's own measurement,
which the model treats as legal) lands in the trace so tests can compare
marked sets against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from .crypto import BS_ID, NodeId
from .errors import ConfigError

# Catalog of scriptable deviations, keyed by the phase hook that consults them.
CATALOG: dict[str, str] = {
    "own_value_forge": "commit",  # legal: a node owns its measurement
    "label_forge": "commit",
    "label_drop": "commit",
    "parent_switch": "commit",
    "offpath_corrupt": "offpath",
    "ack_drop": "ack",
    "ack_garble": "ack",
    "agg_ack_garble": "ack",
    "confirm_tamper": "als1",
    "confirm_drop": "als1",
    "ack_report_forge": "als2",
    "report_drop": "als2",
    "te_suppress": "atr",
    "response_drop": "atr",
    "nl_fake": "nl",
}


def catalog() -> set[str]:
    return set(CATALOG)


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted deviation: which node, when, and what."""

    node: NodeId
    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    sessions: frozenset[int] | None = None  # None: every session

    @property
    def phase(self) -> str:
        return CATALOG[self.kind]

    def active(self, session: int) -> bool:
        return self.sessions is None or session in self.sessions


@dataclass(frozen=True)
class TraceEvent:
    session: int
    node: NodeId
    phase: str
    kind: str


class Adversary:
    """Shared adversary state: faulty set, scripts, and the fired-event trace."""

    def __init__(self, faulty: Iterable[NodeId], scripts: Iterable[ScriptEntry] = ()):
        self.faulty = frozenset(faulty)
        if BS_ID in self.faulty:
            raise ConfigError("the BS is always correct and cannot be faulty")
        self.scripts = list(scripts)
        for entry in self.scripts:
            if entry.kind not in CATALOG:
                raise ConfigError(f"unknown adversary action {entry.kind!r}")
            if entry.node not in self.faulty:
                raise ConfigError(f"script targets correct node {entry.node}")
            if entry.kind == "parent_switch" and entry.params.get("target") not in self.faulty:
                raise ConfigError("parent_switch target must be another faulty node")
        self.trace: list[TraceEvent] = []
        self.session = -1

    def begin_session(self, session: int) -> None:
        self.session = session

    def action(self, node: NodeId, phase: str, kind: str) -> ScriptEntry | None:
        if node not in self.faulty:
            return None
        for entry in self.scripts:
            if entry.node == node and entry.kind == kind and entry.active(self.session):
                assert entry.phase == phase
                return entry
        return None

    def fire(self, node: NodeId, phase: str, kind: str) -> None:
        assert kind != "own_value_forge", "own-value forgery is legal, never traced"
        self.trace.append(TraceEvent(self.session, node, phase, kind))

    def misbehaved(self, session: int) -> set[NodeId]:
        """Ground truth: nodes that actually deviated in `session`."""
        return {e.node for e in self.trace if e.session == session}

    def events(self, session: int) -> list[TraceEvent]:
        return [e for e in self.trace if e.session == session]


def honest() -> Adversary:
    return Adversary(faulty=())
