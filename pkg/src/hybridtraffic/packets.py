"""Flux packets: the quantum of exchange between traffic models.

A packet carries per-state contents which are either real vehicle amounts
(fluid) or lists of Vehicle objects (vehicle-based). A single packet is
homogeneous: all-fluid or all-vehicle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple


class ProtocolError(RuntimeError):
    """A model violated the packet-exchange contract."""


class StateIndex(NamedTuple):
    """Commodity key: (vehicle type id, route id or next-link id).

    For probabilistic types the key is the next link id, or None on a
    terminal link. For routed types the key is the route id.
    """

    vtype: int
    key: int | None


def state_sort_key(s: StateIndex):
    return (s.vtype, s.key is None, s.key if s.key is not None else 0)


@dataclass
class Vehicle:
    id: int
    state: StateIndex
    created: float
    probe: bool = False
    ext: Any = None  # model-specific extension slot


@dataclass
class FluxPacket:
    """Either `fluid` or `vehicles` is populated, never both."""

    fluid: dict[StateIndex, float] = field(default_factory=dict)
    vehicles: dict[StateIndex, list[Vehicle]] = field(default_factory=dict)

    def __post_init__(self):
        if self.fluid and self.vehicles:
            raise ProtocolError("packet must be homogeneous (fluid or vehicle)")

    @property
    def is_fluid(self) -> bool:
        return not self.vehicles

    def total(self) -> float:
        if self.vehicles:
            return float(sum(len(v) for v in self.vehicles.values()))
        return sum(self.fluid.values())

    def is_empty(self, tol: float = 0.0) -> bool:
        return self.total() <= tol

    def states(self) -> list[StateIndex]:
        src = self.vehicles if self.vehicles else self.fluid
        return sorted(src.keys(), key=state_sort_key)

    def all_vehicles(self) -> list[Vehicle]:
        out: list[Vehicle] = []
        for s in self.states():
            out.extend(self.vehicles.get(s, []))
        return out

    def copy(self) -> "FluxPacket":
        return FluxPacket(
            fluid=dict(self.fluid),
            vehicles={s: list(v) for s, v in self.vehicles.items()},
        )


def fluid_packet(amounts: dict[StateIndex, float]) -> FluxPacket:
    clean = {s: a for s, a in amounts.items() if a > 0}
    for s, a in clean.items():
        if a < 0:
            raise ProtocolError("negative fluid amount for state %s" % (s,))
    return FluxPacket(fluid=clean)


def vehicle_packet(vehicles: Iterable[Vehicle]) -> FluxPacket:
    by_state: dict[StateIndex, list[Vehicle]] = {}
    for v in vehicles:
        by_state.setdefault(v.state, []).append(v)
    return FluxPacket(vehicles=by_state)


# --- protocol scaling -------------------------------------------------


def compute_alpha(packet_size: float, max_packet_size: float) -> float:
    """Scaling factor min(1, p_max / |p|) for a single released packet."""
    if packet_size < 0 or max_packet_size < 0:
        raise ProtocolError(
            "negative packet size (|p|=%s, max=%s)" % (packet_size, max_packet_size)
        )
    if packet_size == 0:
        return 1.0
    return min(1.0, max_packet_size / packet_size)


def scale_fluid_packet(p: FluxPacket, alpha: float) -> tuple[FluxPacket, FluxPacket]:
    """Uniformly scale a fluid packet; returns (sent, remainder)."""
    if not p.is_fluid:
        raise ProtocolError("scale_fluid_packet requires a fluid packet")
    sent = {}
    rest = {}
    for s in p.states():
        a = p.fluid[s]
        sent_a = a * alpha
        if sent_a > 0:
            sent[s] = sent_a
        r = a - sent_a
        if r > 0:
            rest[s] = r
    return FluxPacket(fluid=sent), FluxPacket(fluid=rest)


def split_vehicle_packet(p: FluxPacket, alpha: float) -> tuple[FluxPacket, FluxPacket]:
    """Per state, send the first floor(alpha*n) vehicles in FIFO order.

    Whole vehicles are preserved; the sent fraction never exceeds alpha.
    """
    if p.is_fluid:
        raise ProtocolError("split_vehicle_packet requires a vehicle packet")
    sent: dict[StateIndex, list[Vehicle]] = {}
    rest: dict[StateIndex, list[Vehicle]] = {}
    for s in p.states():
        vehs = p.vehicles[s]
        k = int(math.floor(alpha * len(vehs) + 1e-9))
        k = min(k, len(vehs))
        if k:
            sent[s] = vehs[:k]
        if len(vehs) > k:
            rest[s] = vehs[k:]
    return FluxPacket(vehicles=sent), FluxPacket(vehicles=rest)


# --- distribution over downstream lane groups -------------------------


def distribute_uniform(
    p: FluxPacket, group_ids: list[str]
) -> dict[str, FluxPacket]:
    """Split a packet into |D_r| equal parts (vehicles round-robin, FIFO)."""
    if not group_ids:
        raise ProtocolError("cannot distribute over an empty lane-group set")
    n = len(group_ids)
    out: dict[str, FluxPacket] = {g: FluxPacket() for g in group_ids}
    if p.is_fluid:
        for s in p.states():
            share = p.fluid[s] / n
            for g in group_ids:
                out[g].fluid[s] = out[g].fluid.get(s, 0.0) + share
    else:
        i = 0
        for v in p.all_vehicles():
            g = group_ids[i % n]
            out[g].vehicles.setdefault(v.state, []).append(v)
            i += 1
    return out


def distribute_equalizing(
    p: FluxPacket, free_space: dict[str, float]
) -> dict[str, FluxPacket]:
    """Apportion a packet proportionally to the current free space per lane
    group; whole vehicles go greedily to the lane group with the most
    remaining space (ties broken by id order)."""
    if not free_space:
        raise ProtocolError("cannot distribute over an empty lane-group set")
    group_ids = sorted(free_space.keys())
    out: dict[str, FluxPacket] = {g: FluxPacket() for g in group_ids}
    total_space = sum(max(0.0, free_space[g]) for g in group_ids)
    if p.is_fluid:
        if total_space <= 0:
            return distribute_uniform(p, group_ids)
        for s in p.states():
            amount = p.fluid[s]
            for g in group_ids:
                share = amount * max(0.0, free_space[g]) / total_space
                if share > 0:
                    out[g].fluid[s] = out[g].fluid.get(s, 0.0) + share
    else:
        remaining = {g: max(0.0, free_space[g]) for g in group_ids}
        for v in p.all_vehicles():
            g = max(group_ids, key=lambda gid: (remaining[gid], gid))
            out[g].vehicles.setdefault(v.state, []).append(v)
            remaining[g] -= 1.0
    return out


# --- representation translation ---------------------------------------


def to_fluid(p: FluxPacket) -> FluxPacket:
    """Vehicle -> fluid: amount equals the vehicle count per state."""
    if p.is_fluid:
        return p
    return FluxPacket(
        fluid={s: float(len(v)) for s, v in p.vehicles.items() if v}
    )


class VehicleFactory:
    """Creates vehicles with globally unique, sequential ids."""

    def __init__(self):
        self._next = 0

    def make(self, state: StateIndex, now: float, probe: bool = False) -> Vehicle:
        v = Vehicle(id=self._next, state=state, created=now, probe=probe)
        self._next += 1
        return v


class FluidToVehicleTranslator:
    """Converts fluid amounts into whole vehicles.

    Fractional parts accumulate in a per-(location, state) residue that
    emits a vehicle once it reaches one.
    """

    def __init__(self, factory: VehicleFactory):
        self.factory = factory
        self.residues: dict[tuple[Any, StateIndex], float] = {}

    def residue(self, location: Any, state: StateIndex) -> float:
        return self.residues.get((location, state), 0.0)

    def total_residue(self, location: Any) -> float:
        return sum(v for (loc, _), v in self.residues.items() if loc == location)

    def translate(self, p: FluxPacket, location: Any, now: float) -> list[Vehicle]:
        if not p.is_fluid:
            return p.all_vehicles()
        out: list[Vehicle] = []
        for s in p.states():
            key = (location, s)
            acc = self.residues.get(key, 0.0) + p.fluid[s]
            count = int(math.floor(acc + 1e-12))
            for _ in range(count):
                out.append(self.factory.make(s, now))
            acc -= count
            if acc > 1e-15:
                self.residues[key] = acc
            else:
                self.residues.pop(key, None)
        return out
