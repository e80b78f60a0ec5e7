"""Behavioral contract implemented by every traffic model."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..network import Network
from ..packets import FluxPacket, StateIndex


@dataclass
class DemandRequest:
    """One release request: lane group g wants to send `packet` along road
    connection `rc` (rc is None when the lane group exits the network)."""

    group_id: str
    rc: int | None
    packet: FluxPacket


class TrafficModel(ABC):
    """One model instance manages the state of a set of links."""

    kind: str = "abstract"
    vehicle_based: bool = False

    def __init__(self, dt: float):
        if dt <= 0:
            raise ValueError("model time step must be positive")
        self.dt = dt
        self.net: Network | None = None
        self.links: list[int] = []
        self.group_ids: list[str] = []

    def build(self, net: Network, link_ids: list[int]):
        self.net = net
        self.links = sorted(link_ids)
        self.group_ids = [
            gid for lid in self.links for gid in net.link_groups[lid]
        ]

    # --- protocol surface (Eqs. for |p|, p_max, send) ------------------

    def get_packet_size(self, packet: FluxPacket, rc: int | None) -> float:
        """The receiving model's norm for a packet; default is the vehicle
        total, which suits all first-order models."""
        return packet.total()

    def get_max_packet_size(self, packet: FluxPacket, rc: int) -> float:
        """Space available along road connection rc: access-weighted sum of
        lane-group supplies over D_r."""
        assert self.net is not None
        total = 0.0
        for h in self.net.rc_down_groups[rc]:
            total += self.net.lane_access_fraction(rc, h) * self.lane_group_supply(h)
        return total

    @abstractmethod
    def lane_group_supply(self, group_id: str) -> float:
        """Vehicles the lane group can accept this step (>= 0)."""

    @abstractmethod
    def compute_demands(self, now: float, rng: np.random.Generator) -> list[DemandRequest]:
        """Per (lane group, road connection) release requests for this step.
        May mutate internal working state (e.g. lateral movements)."""

    @abstractmethod
    def remove(self, group_id: str, rc: int | None, packet: FluxPacket):
        """Take the given contents out of the lane group (the accepted part
        of a previously offered demand)."""

    @abstractmethod
    def receive_fluid(self, group_id: str, amounts: dict[StateIndex, float], now: float):
        """Insert fluid content at the upstream end of a lane group."""

    @abstractmethod
    def receive_vehicles(self, link_id: int, vehicles: list, now: float):
        """Insert whole vehicles entering a link; the model places each into
        its target lane group (or an entry buffer when full)."""

    @abstractmethod
    def advance_state(self, now: float, rng: np.random.Generator):
        """Advance longitudinal dynamics by one model step."""

    # --- queries used by sensors, outputs, and other models ------------

    @abstractmethod
    def distance_to_last_vehicle(self, group_id: str) -> float:
        """Meters from the lane group's upstream end to its last vehicle."""

    @abstractmethod
    def total_vehicles(self, group_id: str) -> float:
        pass

    @abstractmethod
    def mean_speed_kmh(self, group_id: str) -> float:
        pass

    @abstractmethod
    def state_counts(self, link_id: int) -> dict[StateIndex, float]:
        """Per-state vehicle counts over the whole link (for conservation
        audits and outputs)."""

    def link_total(self, link_id: int) -> float:
        assert self.net is not None
        return sum(self.total_vehicles(g) for g in self.net.link_groups[link_id])

    # --- optional hooks ------------------------------------------------

    def set_speed_limit(self, link_id: int, v_kmh: float):
        """Variable-speed-limit actuation; models reinterpret as needed."""
        raise NotImplementedError

    def local_cumulative_count(self, link_id: int, offset_m: float) -> float:
        """Cumulative vehicle crossings at the internal boundary nearest to
        `offset_m` from the link's upstream end."""
        raise NotImplementedError

    def local_density_per_m(self, link_id: int, offset_m: float) -> float:
        raise NotImplementedError
