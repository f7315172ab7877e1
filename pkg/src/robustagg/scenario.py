"""Scenario configuration: parsing, validation, topology and value generation.

A scenario is a plain dict (JSON on disk); everything a run produces is a
pure function of that dict, which is what makes replay byte-exact.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from typing import Any

from .adversary import Adversary, ScriptEntry
from .crypto import BS_ID
from .errors import ConfigError
from .netmodel import NetworkGraph, edge_key

SCHEMA = "robustagg-report-v1"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def _grid_graph(rows: int, cols: int) -> NetworkGraph:
    def nid(r: int, c: int) -> int:
        return r * cols + c + 1

    sensors = {nid(r, c) for r in range(rows) for c in range(cols)}
    edges = set()
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.add(edge_key(nid(r, c), nid(r, c + 1)))
            if r + 1 < rows:
                edges.add(edge_key(nid(r, c), nid(r + 1, c)))
    edges.add(edge_key(BS_ID, 1))
    return NetworkGraph(sensors, edges, d_max=5)


def _chain_graph(n: int) -> NetworkGraph:
    sensors = set(range(1, n + 1))
    edges = {edge_key(i, i + 1) for i in range(1, n)}
    edges.add(edge_key(BS_ID, 1))
    return NetworkGraph(sensors, edges, d_max=2)


def _geometric_graph(n: int, d_max: int, seed: int) -> NetworkGraph:
    """Connected degree-bounded graph over random positions.

    A nearest-neighbor backbone guarantees connectivity without retries;
    extra short links are added while both endpoints stay under the bound.
    """
    if d_max < 2:
        raise ConfigError("geometric topology needs d_max >= 2")
    rng = random.Random(f"topo:{seed}:{n}:{d_max}")
    pos = {BS_ID: (0.5, 0.5)}
    for s in range(1, n + 1):
        pos[s] = (rng.random(), rng.random())

    def dist(a: int, b: int) -> float:
        (x1, y1), (x2, y2) = pos[a], pos[b]
        return math.hypot(x1 - x2, y1 - y2)

    deg: dict[int, int] = {v: 0 for v in pos}
    edges: set[tuple[int, int]] = set()

    def add(a: int, b: int) -> None:
        edges.add(edge_key(a, b))
        deg[a] += 1
        deg[b] += 1

    # Backbone over sensors only: tree floods never route through the BS,
    # so the sensor subgraph itself must be connected.
    placed = [1]
    for s in range(2, n + 1):
        candidates = sorted(placed, key=lambda v: (dist(s, v), v))
        target = next((v for v in candidates if deg[v] < d_max - 1), candidates[0])
        add(s, target)
        placed.append(s)

    radius = math.sqrt(3.0 / max(n, 1))
    all_pairs = sorted(
        (
            (dist(a, b), a, b)
            for i, a in enumerate(placed)
            for b in placed[i + 1 :]
            if edge_key(a, b) not in edges
        ),
    )
    for d, a, b in all_pairs:
        if d > radius:
            break
        if deg[a] < d_max and deg[b] < d_max:
            add(a, b)

    # The BS hears its nearest sensors (always at least one).
    by_dist = sorted(range(1, n + 1), key=lambda v: (dist(BS_ID, v), v))
    want = max(1, min(3, d_max - 1, n))
    for v in by_dist:
        if deg[BS_ID] >= want:
            break
        if deg[v] < d_max:
            add(BS_ID, v)
    if deg[BS_ID] == 0:
        add(BS_ID, next(v for v in by_dist if deg[v] < d_max))
    return NetworkGraph(set(range(1, n + 1)), edges, d_max)


def build_graph(topology: dict, seed: int) -> NetworkGraph:
    kind = topology.get("kind")
    if kind == "edges":
        sensors = set(range(1, topology["n"] + 1))
        edges = {edge_key(a, b) for a, b in topology["edges"]}
        return NetworkGraph(sensors, edges, topology.get("d_max", topology["n"]))
    if kind == "grid":
        return _grid_graph(topology["rows"], topology["cols"])
    if kind == "chain":
        return _chain_graph(topology["n"])
    if kind == "geometric":
        return _geometric_graph(topology["n"], topology["d_max"], seed)
    raise ConfigError(f"unknown topology kind {kind!r}")


@dataclass
class Scenario:
    config: dict

    @classmethod
    def from_dict(cls, config: dict) -> "Scenario":
        sc = cls(dict(config))
        sc.validate()
        return sc

    @classmethod
    def from_file(cls, path: str) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        c = self.config
        for key in ("seed", "topology", "sessions"):
            if key not in c:
                raise ConfigError(f"missing config field {key!r}")
        lo, hi = self.value_range
        if lo > hi:
            raise ConfigError("value range is empty")
        graph = self.build_graph()
        adv = c.get("adversary", {})
        faulty = set(adv.get("faulty", ()))
        if not faulty <= graph.sensors:
            raise ConfigError("faulty set contains unknown nodes")
        if len(faulty) >= graph.n:
            raise ConfigError("faulty node count must be below network size")
        if self.atr_variant not in ("basic", "resilient"):
            raise ConfigError(f"unknown ATR variant {self.atr_variant!r}")
        self.build_adversary()
        for node, v in c.get("fixed_values", {}).items():
            if not lo <= v <= hi:
                raise ConfigError(f"fixed value for node {node} outside range")
        for s in c.get("adversary", {}).get("scripts", ()):
            if s.get("kind") == "own_value_forge":
                v = s.get("params", {}).get("value")
                if v is None or not lo <= v <= hi:
                    raise ConfigError(
                        "own_value_forge must supply a value inside the "
                        "measurement range; out-of-range readings are label "
                        "forgeries, not legal measurements"
                    )

    @property
    def seed(self) -> int:
        return self.config["seed"]

    @property
    def sessions(self) -> int:
        return self.config["sessions"]

    @property
    def value_range(self) -> tuple[int, int]:
        lo, hi = self.config.get("value_range", [0, 100])
        return int(lo), int(hi)

    @property
    def atr_variant(self) -> str:
        return self.config.get("atr", "basic")

    @property
    def accept_on_als2(self) -> bool:
        return bool(self.config.get("accept_on_als2", False))

    def build_graph(self) -> NetworkGraph:
        return build_graph(self.config["topology"], self.seed)

    def build_adversary(self) -> Adversary:
        adv = self.config.get("adversary", {})
        scripts = []
        for s in adv.get("scripts", ()):
            sessions = s.get("sessions")
            scripts.append(
                ScriptEntry(
                    node=s["node"],
                    kind=s["kind"],
                    params={
                        k: (tuple(v) if isinstance(v, list) else v)
                        for k, v in s.get("params", {}).items()
                    },
                    sessions=None if sessions is None else frozenset(sessions),
                )
            )
        return Adversary(adv.get("faulty", ()), scripts)

    def values_for(self, session: int, sensors: set[int]) -> dict[int, int]:
        lo, hi = self.value_range
        fixed = {int(k): v for k, v in self.config.get("fixed_values", {}).items()}
        rng = random.Random(f"values:{self.seed}:{session}")
        return {s: fixed.get(s, rng.randint(lo, hi)) for s in sorted(sensors)}

    def hash(self) -> str:
        return config_hash(self.config)
