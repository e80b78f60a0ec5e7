"""Simulation engine: clock, packet-exchange protocol, junction solving,
source injection, control wiring, bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nodemodel
from .demand import RoutingContext, Source
from .network import Network
from .packets import (
    FluidToVehicleTranslator,
    FluxPacket,
    StateIndex,
    Vehicle,
    VehicleFactory,
    compute_alpha,
    scale_fluid_packet,
    split_vehicle_packet,
    state_sort_key,
    to_fluid,
)

TIME_TOL = 1e-6


class SimulationError(RuntimeError):
    def __init__(self, msg, time=None, element=None):
        ctx = []
        if time is not None:
            ctx.append("t=%.3f" % time)
        if element is not None:
            ctx.append("element=%s" % element)
        super().__init__(("[%s] " % ", ".join(ctx) if ctx else "") + str(msg))


@dataclass
class _Clocked:
    """Fixed-period activity tracked by the scheduler."""

    period: float
    fired: int = 0  # completed firings

    @property
    def next_time(self) -> float:
        return self.fired * self.period

    def due(self, t: float) -> bool:
        return abs(self.next_time - t) < TIME_TOL


@dataclass
class VirtualTracker:
    """Engine-owned probe stand-in advected through fluid links."""

    vehicle_id: int
    state: StateIndex
    link: int
    group_id: str
    position: float
    speed_ms: float = 0.0
    active: bool = True


class Engine:
    def __init__(self, scenario, audit: bool = False):
        from .scenario import build_runtime  # local import to avoid a cycle

        self.scenario = scenario
        self.audit = audit
        rt = build_runtime(scenario)
        self.net: Network = rt["network"]
        self.models = rt["models"]  # list, deterministic order
        self.model_of_link = rt["model_of_link"]
        self.routing: RoutingContext = rt["routing"]
        self.sources: list[Source] = rt["sources"]
        self.sensors = rt["sensors"]
        self.actuators = rt["actuators"]
        self.controllers = rt["controllers"]
        self.duration = scenario.run.duration
        self.output_dt = scenario.run.output_dt
        self.distribution = scenario.run.distribution
        self.rng = np.random.default_rng(scenario.run.seed)
        self.factory = VehicleFactory()
        self.translator = FluidToVehicleTranslator(self.factory)
        self.closed_rcs: set[int] = set()
        # fractional-vehicle entitlement banked per road connection so whole
        # vehicles can cross boundaries whose per-step supply is below one
        self._entry_credit: dict[int, float] = {}
        self.trackers: list[VirtualTracker] = []
        self.probe_ids: set[int] = set()

        for m in self.models:
            m.set_routing(self.routing)
            if hasattr(m, "headway_query") or m.kind == "newell":
                m.headway_query = self.boundary_headway

        self._junction_of_rc, self._junction_rcs = self._build_junctions()
        self.model_of_group = {
            gid: m for m in self.models for gid in m.group_ids
        }

        # bookkeeping: per link, per state cumulative boundary flows
        self.cum_in: dict[int, dict[StateIndex, float]] = {
            l: {} for l in self.net.links
        }
        self.cum_out: dict[int, dict[StateIndex, float]] = {
            l: {} for l in self.net.links
        }
        self.exits: dict[StateIndex, float] = {}
        self.audit_failures: list[str] = []

        self._clock_models = {id(m): _Clocked(m.dt) for m in self.models}
        self._clock_sensors = {s.id: _Clocked(s.dt) for s in self.sensors}
        self._clock_controllers = {c.id: _Clocked(c.dt) for c in self.controllers}
        self._clock_actuators = {a.id: _Clocked(a.dt) for a in self.actuators}
        self._clock_output = _Clocked(self.output_dt) if self.output_dt else None
        self.now = 0.0

    # --- construction helpers -----------------------------------------

    def _build_junctions(self):
        """Group road connections into junctions: RCs sharing an upstream
        link's downstream end or a downstream link's upstream end interact."""
        parent: dict = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a, b):
            parent[find(a)] = find(b)

        for rc in self.net.road_connections.values():
            union(("rc", rc.id), ("dn-end", rc.up_link))
            union(("rc", rc.id), ("up-end", rc.down_link))
        comp: dict = {}
        for rc in self.net.road_connections.values():
            comp.setdefault(find(("rc", rc.id)), []).append(rc.id)
        junction_rcs = {}
        junction_of_rc = {}
        for rcs in comp.values():
            jid = min(rcs)
            junction_rcs[jid] = sorted(rcs)
            for r in rcs:
                junction_of_rc[r] = jid
        return junction_of_rc, junction_rcs

    # --- cross-model queries -------------------------------------------

    def boundary_headway(self, rc_id: int) -> float:
        """Distance from the downstream link's upstream boundary to the
        nearest vehicle reachable through rc_id (the emptiest lane group)."""
        rc = self.net.road_connections[rc_id]
        model = self.model_of_link[rc.down_link]
        groups = self.net.rc_down_groups[rc_id]
        gid = min(groups, key=lambda g: (model.total_vehicles(g), g))
        return model.distance_to_last_vehicle(gid)

    def find_vehicle(self, vehicle_id: int):
        """(link, group, position_m, speed_kmh) of a (possibly virtual)
        vehicle, or None if it has left the network."""
        for m in self.models:
            if m.vehicle_based:
                hit = m.find_vehicle(vehicle_id, self.now)
                if hit:
                    return hit
        for tr in self.trackers:
            if tr.vehicle_id == vehicle_id and tr.active:
                return tr.link, tr.group_id, tr.position, tr.speed_ms * 3.6
        return None

    def link_state_counts(self, link_id: int) -> dict[StateIndex, float]:
        counts = dict(self.model_of_link[link_id].state_counts(link_id))
        for (loc, s), r in self.translator.residues.items():
            if loc == link_id:
                counts[s] = counts.get(s, 0.0) + r
        return counts

    # --- main loop ------------------------------------------------------

    def run(self, observer=None):
        """Run to the configured duration. `observer(engine, t)` is called at
        every output time."""
        while True:
            t = self._next_time()
            if t is None or t > self.duration + TIME_TOL:
                break
            self.now = t
            try:
                self._step(t, observer)
            except Exception as exc:
                raise SimulationError(exc, time=t) from exc

    def _next_time(self):
        cands = [c.next_time for c in self._clock_models.values()]
        cands += [c.next_time for c in self._clock_sensors.values()]
        cands += [c.next_time for c in self._clock_controllers.values()]
        cands += [c.next_time for c in self._clock_actuators.values()]
        if self._clock_output:
            cands.append(self._clock_output.next_time)
        return min(cands) if cands else None

    def _step(self, t, observer):
        # phase 1: sensors observe the pre-actuation, pre-advance state
        for s in sorted(self.sensors, key=lambda s: s.id):
            c = self._clock_sensors[s.id]
            if c.due(t):
                s.read(self, t)
                c.fired += 1
        # phase 2: controllers
        for ctrl in sorted(self.controllers, key=lambda c: c.id):
            c = self._clock_controllers[ctrl.id]
            if c.due(t):
                ctrl.step(self, t)
                c.fired += 1
        # phase 3: actuators
        for act in sorted(self.actuators, key=lambda a: a.id):
            c = self._clock_actuators[act.id]
            if c.due(t):
                act.flush(self, t)
                c.fired += 1
        # phase 4: model flow exchange, then state advance
        due_models = [
            m for m in self.models if self._clock_models[id(m)].due(t)
        ]
        if due_models:
            self._flow_phase(t, due_models)
            for m in due_models:
                m.advance_state(t, self.rng)
            self._advance_trackers(t, due_models)
            for m in due_models:
                self._clock_models[id(m)].fired += 1
            if self.audit:
                self._audit(t)
        # phase 5: outputs
        if self._clock_output and self._clock_output.due(t):
            if observer:
                observer(self, t)
            self._clock_output.fired += 1

    # --- flow phase ------------------------------------------------------

    def _flow_phase(self, t, due_models):
        supply_snapshot: dict[str, float] = {}
        delivered: dict[str, float] = {}

        def remaining(gid: str) -> float:
            m = self.model_of_group[gid]
            if m.vehicle_based:
                return m.lane_group_supply(gid)
            if gid not in supply_snapshot:
                supply_snapshot[gid] = m.lane_group_supply(gid)
            return max(0.0, supply_snapshot[gid] - delivered.get(gid, 0.0))

        self._remaining = remaining
        self._delivered = delivered

        # sources first, in id order
        due_ids = {id(m) for m in due_models}
        for src in sorted(self.sources, key=lambda s: s.id):
            m = self.model_of_link[src.demand.link]
            if id(m) in due_ids:
                self._source_step(src, m, t)

        # collect release requests, model order
        requests = []
        for m in due_models:
            for req in m.compute_demands(t, self.rng):
                if req.packet.is_empty():
                    continue
                requests.append((m, req))

        # network exits are unconstrained
        for m, req in requests:
            if req.rc is None:
                self._take_exit(m, req)
        junction_reqs: dict[int, list] = {}
        for m, req in requests:
            if req.rc is not None:
                junction_reqs.setdefault(self._junction_of_rc[req.rc], []).append(
                    (m, req)
                )
        for jid in sorted(junction_reqs):
            self._solve_junction(t, junction_reqs[jid])

    def _take_exit(self, m, req):
        m.remove(req.group_id, None, req.packet)
        link = self.net.lane_groups[req.group_id].link
        amounts = (
            req.packet.fluid
            if req.packet.is_fluid
            else {s: float(len(v)) for s, v in req.packet.vehicles.items()}
        )
        for s, a in amounts.items():
            self.cum_out[link][s] = self.cum_out[link].get(s, 0.0) + a
            self.exits[s] = self.exits.get(s, 0.0) + a

    def _solve_junction(self, t, reqs):
        demand = {}
        packets = {}
        senders = {}
        down_of_g: dict[str, list[int]] = {}
        supplies = {}
        access = {}
        up_of_r: dict[int, list[str]] = {}
        down_of_r: dict[int, list[str]] = {}
        up_of_h: dict[str, list[int]] = {}
        for m, req in reqs:
            g, r = req.group_id, req.rc
            receiver = self.model_of_link[self.net.road_connections[r].down_link]
            size = receiver.get_packet_size(req.packet, r)
            if size < 0:
                raise SimulationError("negative packet size", element=r)
            if size <= 0:
                continue
            key = (g, r)
            demand[key] = demand.get(key, 0.0) + size
            packets[key] = req.packet
            senders[key] = m
            down_of_g.setdefault(g, [])
            if r not in down_of_g[g]:
                down_of_g[g].append(r)
            up_of_r.setdefault(r, [])
            if g not in up_of_r[r]:
                up_of_r[r].append(g)
            if r not in down_of_r:
                down_of_r[r] = list(self.net.rc_down_groups[r])
                for h in down_of_r[r]:
                    access[(r, h)] = self.net.lane_access_fraction(r, h)
                    up_of_h.setdefault(h, []).append(r)
                    if h not in supplies:
                        supplies[h] = self._remaining(h)
        if not demand:
            return
        problem = nodemodel.NodeProblem(
            upstream=sorted(down_of_g),
            rcs=sorted(up_of_r),
            downstream=sorted(up_of_h),
            down_of_g={g: sorted(v) for g, v in down_of_g.items()},
            up_of_r={r: sorted(v) for r, v in up_of_r.items()},
            down_of_r={r: sorted(v) for r, v in down_of_r.items()},
            up_of_h={h: sorted(v) for h, v in up_of_h.items()},
            demand=demand,
            supply=supplies,
            access=access,
            closed_rcs={r for r in up_of_r if r in self.closed_rcs},
        )
        sol = nodemodel.solve(problem)
        for key in sorted(demand, key=lambda k: (str(k[0]), k[1])):
            delta = sol.flow_gr.get(key, 0.0)
            if delta <= nodemodel.EPS:
                continue
            g, r = key
            self._deliver(t, senders[key], g, r, packets[key], delta)

    # --- delivery --------------------------------------------------------

    def _deliver(self, t, sender, g, r, packet, delta):
        rc = self.net.road_connections[r]
        receiver = self.model_of_link[rc.down_link]
        size = receiver.get_packet_size(packet, r)
        alpha = compute_alpha(size, delta)
        groups = self.net.rc_down_groups[r]
        caps = {h: self._remaining(h) for h in groups}
        allow = sum(caps.values())

        if packet.is_fluid:
            total = min(alpha * size, allow)
            if total <= 0:
                return
            factor = min(1.0, total / packet.total())
            candidate, _ = scale_fluid_packet(packet, factor)
            sender.remove(g, r, candidate)
            self._book_out(rc.up_link, candidate)
            routed = self.routing.assign_next_link(candidate, rc.down_link, t, self.rng)
            self._book_in(rc.down_link, routed)
            if receiver.vehicle_based:
                vehicles = self.translator.translate(routed, rc.down_link, t)
                receiver.receive_vehicles(rc.down_link, vehicles, t)
            else:
                for h, part in self._distribute(routed, caps).items():
                    if part.is_empty():
                        continue
                    receiver.receive_fluid(h, part.fluid, t)
                    self._delivered[h] = self._delivered.get(h, 0.0) + part.total()
        else:
            credit = self._entry_credit.get(r, 0.0)
            entitled = min(delta + credit, size)
            sent, _ = split_vehicle_packet(packet, compute_alpha(size, entitled))
            vehs = sent.all_vehicles()
            n_allow = int(math.floor(allow + credit + 1e-9))
            vehs = vehs[:n_allow]
            self._entry_credit[r] = min(max(0.0, entitled - len(vehs)), 1.0)
            if not vehs:
                return
            from .packets import vehicle_packet

            candidate = vehicle_packet(vehs)
            sender.remove(g, r, candidate)
            self._book_out(rc.up_link, candidate)
            routed = self.routing.assign_next_link(candidate, rc.down_link, t, self.rng)
            self._book_in(rc.down_link, routed)
            if receiver.vehicle_based:
                receiver.receive_vehicles(rc.down_link, routed.all_vehicles(), t)
            else:
                for v in routed.all_vehicles():
                    if v.probe:
                        self._spawn_tracker(v, rc.down_link, groups[0])
                fluid = to_fluid(routed)
                for h, part in self._distribute(fluid, caps).items():
                    if part.is_empty():
                        continue
                    receiver.receive_fluid(h, part.fluid, t)
                    self._delivered[h] = self._delivered.get(h, 0.0) + part.total()

    def _distribute(self, packet: FluxPacket, caps: dict[str, float]):
        from .packets import distribute_equalizing, distribute_uniform

        if self.distribution == "uniform":
            parts = distribute_uniform(packet, sorted(caps))
            return self._cap_and_spill(parts, caps)
        return distribute_equalizing(packet, caps)

    def _cap_and_spill(self, parts, caps):
        """Clamp per-group fluid shares at the remaining supply; spill the
        excess to groups with slack. Conserves totals."""
        if any(not p.is_fluid for p in parts.values()):
            return parts
        for _ in range(len(caps) + 1):
            spill: dict[StateIndex, float] = {}
            slack = {}
            for h, p in parts.items():
                tot = p.total()
                cap = max(0.0, caps[h])
                if tot > cap + 1e-12:
                    f = cap / tot if tot > 0 else 0.0
                    for s in p.states():
                        extra = p.fluid[s] * (1 - f)
                        p.fluid[s] *= f
                        spill[s] = spill.get(s, 0.0) + extra
                    slack[h] = 0.0
                else:
                    slack[h] = cap - tot
            total_spill = sum(spill.values())
            if total_spill <= 1e-12:
                break
            total_slack = sum(slack.values())
            if total_slack <= 0:
                # nowhere to go; put it back proportionally (callers cap totals
                # at the aggregate supply, so this is a numerical corner)
                for h in parts:
                    for s, a in spill.items():
                        parts[h].fluid[s] = parts[h].fluid.get(s, 0.0) + a / len(parts)
                break
            for h in parts:
                w = slack[h] / total_slack
                if w <= 0:
                    continue
                for s, a in spill.items():
                    parts[h].fluid[s] = parts[h].fluid.get(s, 0.0) + a * w
        return parts

    def _book_out(self, link, packet: FluxPacket):
        amounts = (
            packet.fluid
            if packet.is_fluid
            else {s: float(len(v)) for s, v in packet.vehicles.items()}
        )
        for s, a in amounts.items():
            self.cum_out[link][s] = self.cum_out[link].get(s, 0.0) + a

    def _book_in(self, link, packet: FluxPacket):
        amounts = (
            packet.fluid
            if packet.is_fluid
            else {s: float(len(v)) for s, v in packet.vehicles.items()}
        )
        for s, a in amounts.items():
            self.cum_in[link][s] = self.cum_in[link].get(s, 0.0) + a

    # --- sources ---------------------------------------------------------

    def _source_step(self, src: Source, model, t):
        src.accrue(t, model.dt, model.vehicle_based, self.rng)
        if src.buffer <= 0:
            return
        link = src.demand.link
        groups = self.net.link_groups[link]
        caps = {h: self._remaining(h) for h in groups}
        allow = sum(caps.values())
        if model.vehicle_based:
            n = int(min(math.floor(src.buffer + 1e-9), math.floor(allow + 1e-9)))
            if n <= 0:
                return
            src.withdraw(float(n))
            vehicles = []
            for _ in range(n):
                state = self.routing.entry_state(
                    src.demand.vtype, link, src.demand.route, t, self.rng
                )
                v = self.factory.make(state, t, probe=False)
                vehicles.append(v)
            model.receive_vehicles(link, vehicles, t)
            for v in vehicles:
                self.cum_in[link][v.state] = self.cum_in[link].get(v.state, 0.0) + 1.0
        else:
            amount = min(src.buffer, allow)
            if amount <= 0:
                return
            src.withdraw(amount)
            key = src.demand.route if src.demand.route is not None else None
            p0 = FluxPacket(fluid={StateIndex(src.demand.vtype, key): amount})
            routed = self.routing.assign_next_link(p0, link, t, self.rng)
            self._book_in(link, routed)
            for h, part in self._distribute(routed, caps).items():
                if part.is_empty():
                    continue
                model.receive_fluid(h, part.fluid, t)
                self._delivered[h] = self._delivered.get(h, 0.0) + part.total()

    # --- probes ----------------------------------------------------------

    def _spawn_tracker(self, v: Vehicle, link, group_id):
        self.trackers.append(
            VirtualTracker(
                vehicle_id=v.id, state=v.state, link=link, group_id=group_id,
                position=0.0,
            )
        )

    def _advance_trackers(self, t, due_models):
        due_ids = {id(m) for m in due_models}
        for tr in self.trackers:
            if not tr.active:
                continue
            m = self.model_of_link.get(tr.link)
            if m is None or m.vehicle_based or id(m) not in due_ids:
                continue
            speed = m.local_speed_ms(tr.link, tr.group_id, tr.position)
            tr.speed_ms = speed
            tr.position += speed * m.dt
            length = self.net.links[tr.link].length
            while tr.position >= length:
                nxt = self.routing.next_link_of(tr.state, tr.link)
                if nxt is None or self.model_of_link[nxt].vehicle_based:
                    tr.active = False
                    break
                tr.position -= length
                tr.link = nxt
                tr.group_id = self.net.link_groups[nxt][0]
                length = self.net.links[nxt].length

    # --- conservation audit ----------------------------------------------

    def _audit(self, t):
        for link in sorted(self.net.links):
            counts = self.link_state_counts(link)
            states = set(counts) | set(self.cum_in[link]) | set(self.cum_out[link])
            for s in sorted(states, key=state_sort_key):
                bal = (
                    self.cum_in[link].get(s, 0.0)
                    - self.cum_out[link].get(s, 0.0)
                    - counts.get(s, 0.0)
                )
                if abs(bal) > 1e-9:
                    self.audit_failures.append(
                        "t=%.3f link=%s state=%s imbalance=%.3e" % (t, link, s, bal)
                    )

    # --- summary ----------------------------------------------------------

    def total_in_network(self) -> float:
        return sum(
            sum(self.link_state_counts(l).values()) for l in self.net.links
        )

    def total_injected(self) -> float:
        return sum(s.total_injected for s in self.sources)

    def total_exited(self) -> float:
        return sum(self.exits.values())
