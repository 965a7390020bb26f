"""Scenario definitions: parameter ranges, unit handling, and deterministic
per-slot state generation.

Arrivals and compute allocations are redrawn every slot (they are the
time-varying part of the system); link bandwidth, request size, cycle count
and per-edge scheduling costs are drawn once when the scenario is
instantiated and held fixed, mirroring a stable inter-factory network.
`redraw_bandwidth` flips the bandwidth to per-slot draws.

Scenario files are plain key/value text with unit suffixes::

    nodes = 5
    slots = 1000
    seed = 7
    budget = 20 J
    energy-coeff = 1e-26
    v = 1e8

    [service]
    request-size = 200..500 Kbits
    cycles = 50..500 Kcycles

    [edges]
    bandwidth = 10..100 Gbps
    sched-cost = 0.4..2.4 J

    [node 1]
    arrivals = 10..20
    compute = 50..60 GHz

Node blocks are 1-indexed and required for every node. Optional [hs],
[pso], [ga] and [kg] blocks override optimizer hyperparameters; command
line flags override the file.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ServiceSpec, SystemStateGraph
from .rng import rng_for

UNIT_FACTORS = {
    "": 1.0,
    "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9,
    "bps": 1.0, "kbps": 1e3, "mbps": 1e6, "gbps": 1e9,
    "bits": 1.0, "kbits": 1e3, "mbits": 1e6, "gbits": 1e9,
    "cycles": 1.0, "kcycles": 1e3, "mcycles": 1e6, "gcycles": 1e9,
    "j": 1.0,
}


class ScenarioError(ValueError):
    """Malformed scenario file or inconsistent parameters."""


def parse_quantity(text: str) -> tuple[float, float]:
    """Parse `x`, `x UNIT`, `lo..hi` or `lo..hi UNIT` into an SI (lo, hi)
    range; single values collapse to lo == hi."""
    text = text.strip()
    number = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
    match = re.fullmatch(
        rf"(?P<lo>{number})\s*(?:\.\.\s*(?P<hi>{number}))?\s*(?P<unit>[A-Za-z]*)", text)
    if not match:
        raise ScenarioError(f"cannot parse quantity {text!r}")
    unit = match.group("unit").lower()
    if unit not in UNIT_FACTORS:
        raise ScenarioError(f"unknown unit {match.group('unit')!r} in {text!r}")
    factor = UNIT_FACTORS[unit]
    try:
        lo = float(match.group("lo")) * factor
        hi = float(match.group("hi")) * factor if match.group("hi") is not None else lo
    except ValueError as exc:
        raise ScenarioError(f"cannot parse quantity {text!r}") from exc
    if lo > hi:
        raise ScenarioError(f"range lower bound exceeds upper bound in {text!r}")
    return lo, hi


@dataclass(frozen=True)
class ScenarioSpec:
    """Full description of a simulated deployment."""

    node_count: int
    arrival_ranges: tuple[tuple[float, float], ...]   # requests per slot, per node
    compute_ranges: tuple[tuple[float, float], ...]   # Hz, per node
    bandwidth_range: tuple[float, float]              # bits/s, per ordered pair
    request_size_range: tuple[float, float]           # bits
    cycles_range: tuple[float, float]                 # cycles per request
    sched_cost_range: tuple[float, float]             # joules per request
    energy_coeff: float
    budget: float
    slots: int
    seed: int
    v_weight: float = 1e8
    redraw_bandwidth: bool = False

    def __post_init__(self):
        if self.node_count < 2:
            raise ScenarioError("need at least two nodes")
        if len(self.arrival_ranges) != self.node_count or len(self.compute_ranges) != self.node_count:
            raise ScenarioError("per-node ranges must match node_count")
        for lo, hi in (*self.arrival_ranges, *self.compute_ranges, self.bandwidth_range,
                       self.request_size_range, self.cycles_range, self.sched_cost_range):
            if lo < 0 or lo > hi:
                raise ScenarioError("ranges must satisfy 0 <= lo <= hi")
        if self.slots < 1:
            raise ScenarioError("slots must be >= 1")
        if self.budget <= 0:
            raise ScenarioError("budget must be positive")

    def with_compute_permutation(self, order: tuple[int, ...]) -> "ScenarioSpec":
        """Reassign compute ranges across nodes (1-indexed permutation), the
        knob for matching-degree experiments."""
        if sorted(order) != list(range(1, self.node_count + 1)):
            raise ScenarioError(f"--permute-compute must be a permutation of 1..{self.node_count}")
        ranges = tuple(self.compute_ranges[i - 1] for i in order)
        return replace(self, compute_ranges=ranges)


@dataclass(frozen=True)
class ScenarioStatics:
    """Quantities drawn once per scenario."""

    request_size: float
    cycles: float
    bandwidth: np.ndarray
    sched_cost: np.ndarray


DEFAULT_COMPUTE_GHZ = ((50, 60), (40, 50), (30, 40), (20, 30), (10, 20))
DEFAULT_ARRIVALS = ((10, 20), (20, 30), (30, 40), (40, 50), (50, 60))


def default_scenario(m_factor: int = 1, slots: int = 1000, seed: int = 12,
                     v_weight: float = 1e8) -> ScenarioSpec:
    """The stock five-node deployment; factors > 1 tile the block and scale
    the budget accordingly."""
    if m_factor < 1:
        raise ScenarioError("m_factor must be >= 1")
    compute = tuple((lo * 1e9, hi * 1e9) for lo, hi in DEFAULT_COMPUTE_GHZ) * m_factor
    arrivals = tuple((float(lo), float(hi)) for lo, hi in DEFAULT_ARRIVALS) * m_factor
    return ScenarioSpec(
        node_count=5 * m_factor,
        arrival_ranges=arrivals,
        compute_ranges=compute,
        bandwidth_range=(10e9, 100e9),
        request_size_range=(200e3, 500e3),
        cycles_range=(50e3, 500e3),
        sched_cost_range=(0.4, 2.4),
        energy_coeff=1e-26,
        budget=20.0 * m_factor,
        slots=slots,
        seed=seed,
        v_weight=v_weight,
    )


def scale_scenario(spec: ScenarioSpec, factor: int) -> ScenarioSpec:
    """Tile the per-node blocks `factor` times and scale the budget along,
    for scalability studies."""
    if factor < 1:
        raise ScenarioError("scale factor must be >= 1")
    if factor == 1:
        return spec
    return replace(spec, node_count=spec.node_count * factor,
                   arrival_ranges=spec.arrival_ranges * factor,
                   compute_ranges=spec.compute_ranges * factor,
                   budget=spec.budget * factor)


@functools.lru_cache(maxsize=32)
def _statics(spec: ScenarioSpec) -> ScenarioStatics:
    rng = rng_for(spec.seed, "static")
    size = float(rng.uniform(*spec.request_size_range))
    cycles = float(rng.uniform(*spec.cycles_range))
    m = spec.node_count
    bandwidth = rng.uniform(spec.bandwidth_range[0], spec.bandwidth_range[1], (m, m))
    np.fill_diagonal(bandwidth, 0.0)  # diagonal is the free intra-node link, never read
    cost = rng.uniform(spec.sched_cost_range[0], spec.sched_cost_range[1], (m, m))
    np.fill_diagonal(cost, 0.0)
    return ScenarioStatics(size, cycles, bandwidth, cost)


def generate_slot_state(spec: ScenarioSpec, slot: int,
                        queue_backlog: float = 0.0) -> SystemStateGraph:
    """State of the system at one slot, a pure function of (seed, slot)."""
    statics = _statics(spec)
    rng = rng_for(spec.seed, "slot", slot)
    lo = np.array([r[0] for r in spec.arrival_ranges])
    hi = np.array([r[1] for r in spec.arrival_ranges])
    arrivals = rng.integers(lo.astype(np.int64), hi.astype(np.int64), endpoint=True)
    clo = np.array([r[0] for r in spec.compute_ranges])
    chi = np.array([r[1] for r in spec.compute_ranges])
    compute = rng.uniform(clo, chi)
    bandwidth = statics.bandwidth
    if spec.redraw_bandwidth:
        m = spec.node_count
        bandwidth = rng.uniform(spec.bandwidth_range[0], spec.bandwidth_range[1], (m, m))
        np.fill_diagonal(bandwidth, 0.0)
    service = ServiceSpec(statics.request_size, statics.cycles, spec.budget)
    return SystemStateGraph(arrivals.astype(np.float64), compute, bandwidth,
                            statics.sched_cost, spec.energy_coeff, queue_backlog, service)


@dataclass
class ScenarioDocument:
    """Parsed scenario file: the spec plus optimizer overrides."""

    spec: ScenarioSpec
    hs: dict = field(default_factory=dict)
    pso: dict = field(default_factory=dict)
    ga: dict = field(default_factory=dict)
    kg: dict = field(default_factory=dict)


_INT_KEYS = {"nodes", "slots", "seed", "hms", "ni", "swarm", "iters",
             "population", "generations", "period"}


def _coerce(section: str, key: str, raw: str):
    if key in _INT_KEYS:
        return int(raw)
    lo, hi = parse_quantity(raw)
    if lo != hi:
        raise ScenarioError(f"{key} in [{section}] must be a single value, got range {raw!r}")
    return lo


def parse_scenario(text: str) -> ScenarioDocument:
    top: dict = {}
    sections: dict[str, dict] = {"service": {}, "edges": {}, "hs": {}, "pso": {}, "ga": {}, "kg": {}}
    nodes: dict[int, dict] = {}
    current = top
    section_name = ""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError(f"line {lineno}: malformed section header {line!r}")
            name = line[1:-1].strip().lower()
            node_match = re.fullmatch(r"node\s+(\d+)", name)
            if node_match:
                idx = int(node_match.group(1))
                nodes.setdefault(idx, {})
                current, section_name = nodes[idx], f"node {idx}"
            elif name in sections:
                current, section_name = sections[name], name
            else:
                raise ScenarioError(f"line {lineno}: unknown section [{name}]")
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        current[key.lower()] = value

    def need(mapping: dict, key: str, where: str) -> str:
        if key not in mapping:
            raise ScenarioError(f"missing {key!r} in {where}")
        return mapping[key]

    node_count = int(need(top, "nodes", "scenario"))
    arrival_ranges, compute_ranges = [], []
    for idx in range(1, node_count + 1):
        block = nodes.get(idx)
        if block is None:
            raise ScenarioError(f"missing [node {idx}] block")
        arrival_ranges.append(parse_quantity(need(block, "arrivals", f"[node {idx}]")))
        compute_ranges.append(parse_quantity(need(block, "compute", f"[node {idx}]")))
    extra = set(nodes) - set(range(1, node_count + 1))
    if extra:
        raise ScenarioError(f"node blocks {sorted(extra)} exceed nodes = {node_count}")

    spec = ScenarioSpec(
        node_count=node_count,
        arrival_ranges=tuple(arrival_ranges),
        compute_ranges=tuple(compute_ranges),
        bandwidth_range=parse_quantity(need(sections["edges"], "bandwidth", "[edges]")),
        request_size_range=parse_quantity(need(sections["service"], "request-size", "[service]")),
        cycles_range=parse_quantity(need(sections["service"], "cycles", "[service]")),
        sched_cost_range=parse_quantity(need(sections["edges"], "sched-cost", "[edges]")),
        energy_coeff=parse_quantity(need(top, "energy-coeff", "scenario"))[0],
        budget=parse_quantity(need(top, "budget", "scenario"))[0],
        slots=int(need(top, "slots", "scenario")),
        seed=int(need(top, "seed", "scenario")),
        v_weight=parse_quantity(top.get("v", "1e8"))[0],
        redraw_bandwidth=top.get("redraw-bandwidth", "false").lower() in ("true", "1", "yes"),
    )
    doc = ScenarioDocument(spec)
    for name in ("hs", "pso", "ga", "kg"):
        parsed = {key: _coerce(name, key, value) for key, value in sections[name].items()}
        setattr(doc, name, parsed)
    return doc


def load_scenario(path) -> ScenarioDocument:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_scenario(handle.read())
