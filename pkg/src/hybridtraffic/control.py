"""Control layer: sensors, actuators, and controllers.

Sensors sample the running simulation, controllers map measurements to
commands on their own clock, and actuators apply pending commands on
theirs. All three fire at fixed periods managed by the engine.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

log = logging.getLogger(__name__)


class ControlError(ValueError):
    pass


# --- sensors -----------------------------------------------------------


@dataclass
class Sensor:
    id: int
    dt: float
    last: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def read(self, engine, now: float):
        m = self.measure(engine, now)
        m["time"] = now
        self.last = m
        self.history.append(m)

    def measure(self, engine, now: float) -> dict:
        raise NotImplementedError


@dataclass
class LaneGroupSensor(Sensor):
    """Aggregate count and mean speed over one lane group."""

    group_id: str = ""

    def measure(self, engine, now):
        model = engine.model_of_group[self.group_id]
        return {
            "count_veh": model.total_vehicles(self.group_id),
            "speed_kmh": model.mean_speed_kmh(self.group_id),
        }


@dataclass
class LocalSensor:
    """Point detector at a fixed offset along a link: flow over the sensor
    period, local density, and the derived space-mean speed."""

    id: int
    dt: float
    link: int = 0
    offset_m: float = 0.0
    last: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    _prev_cum: float | None = None

    def read(self, engine, now: float):
        model = engine.model_of_link[self.link]
        cum = model.local_cumulative_count(self.link, self.offset_m)
        density_per_m = model.local_density_per_m(self.link, self.offset_m)
        if self._prev_cum is None:
            flow_vph = 0.0
        else:
            flow_vph = (cum - self._prev_cum) / self.dt * 3600.0
        self._prev_cum = cum
        if density_per_m > 1e-12:
            speed_kmh = (flow_vph / 3600.0) / density_per_m * 3.6
        else:
            speed_kmh = engine.net.links[self.link].params.speed_limit
        m = {
            "time": now,
            "flow_vph": flow_vph,
            "density_vpkm": density_per_m * 1000.0,
            "speed_kmh": speed_kmh,
        }
        self.last = m
        self.history.append(m)


@dataclass
class ProbeSensor(Sensor):
    """Tracks one vehicle; keeps reporting a virtual position if the vehicle
    dissolves into a fluid link."""

    vehicle_id: int = -1

    def measure(self, engine, now):
        hit = engine.find_vehicle(self.vehicle_id)
        if hit is None:
            return {"active": False}
        link, group_id, pos, speed = hit
        return {
            "active": True,
            "link": link,
            "group": group_id,
            "position_m": pos,
            "speed_kmh": speed,
        }


# --- actuators ---------------------------------------------------------


@dataclass
class Actuator:
    id: int
    dt: float
    pending: dict | None = None

    def command(self, cmd: dict):
        self.pending = dict(cmd)

    def flush(self, engine, now: float):
        if self.pending is None:
            return
        self.apply(engine, now, self.pending)
        self.pending = None

    def apply(self, engine, now: float, cmd: dict):
        raise NotImplementedError


@dataclass
class RcBlockActuator(Actuator):
    """Opens or closes one road connection."""

    rc: int = -1

    def apply(self, engine, now, cmd):
        if bool(cmd.get("open", True)):
            engine.closed_rcs.discard(self.rc)
        else:
            engine.closed_rcs.add(self.rc)


@dataclass
class VslActuator(Actuator):
    """Variable speed limit on one link, clamped at the structural limit."""

    link: int = -1

    def apply(self, engine, now, cmd):
        v = float(cmd["speed_kmh"])
        limit = engine.net.links[self.link].params.speed_limit
        if v > limit:
            log.warning(
                "actuator %s: %.1f km/h exceeds the structural limit %.1f, clamping",
                self.id, v, limit,
            )
            v = limit
        if v <= 0:
            raise ControlError("speed limit command must be positive")
        engine.model_of_link[self.link].set_speed_limit(self.link, v)


@dataclass
class RouterActuator(Actuator):
    """Reassigns a routed vehicle type to another route; applies to vehicles
    not yet departed and, where the new route passes, at the next link entry."""

    vtype: int = -1

    def apply(self, engine, now, cmd):
        route = cmd.get("route")
        if route is None:
            engine.routing.route_overrides.pop(self.vtype, None)
            return
        if route not in engine.routing.routes:
            raise ControlError("unknown route %s" % route)
        engine.routing.route_overrides[self.vtype] = int(route)


@dataclass
class DemandActuator(Actuator):
    """Overrides a source's future demand intensity (veh/hr)."""

    source: int = -1

    def apply(self, engine, now, cmd):
        src = next(s for s in engine.sources if s.id == self.source)
        rate = cmd.get("intensity_vph")
        if rate is not None and rate < 0:
            raise ControlError("demand intensity must be >= 0")
        src.override_rate = None if rate is None else float(rate)


@dataclass
class SplitActuator(Actuator):
    """Overrides the turn ratios of one (link, vehicle type) pair. Commands
    whose ratios do not sum to one are rejected with a warning."""

    link: int = -1
    vtype: int = -1

    def apply(self, engine, now, cmd):
        ratios = {int(k): float(v) for k, v in cmd["ratios"].items()}
        total = sum(ratios.values())
        if abs(total - 1.0) > 1e-6 or any(v < 0 for v in ratios.values()):
            log.warning(
                "actuator %s: rejected split command %s (ratios must be >= 0 "
                "and sum to one)", self.id, ratios,
            )
            return
        valid = set(engine.net.next_links(self.link))
        if set(ratios) - valid:
            log.warning(
                "actuator %s: rejected split command naming non-successor "
                "links %s", self.id, sorted(set(ratios) - valid),
            )
            return
        engine.routing.splits.set_override(self.link, self.vtype, ratios)


# --- controllers -------------------------------------------------------


@dataclass
class Controller:
    """Periodically maps its sensors' latest measurements to actuator
    commands via a pluggable algorithm."""

    id: int
    dt: float
    sensor_ids: list[int] = field(default_factory=list)
    actuator_ids: list[int] = field(default_factory=list)
    algorithm: object | None = None

    def step(self, engine, now: float):
        if self.algorithm is None:
            return
        sensors = {s.id: s for s in engine.sensors}
        actuators = {a.id: a for a in engine.actuators}
        measurements = {sid: sensors[sid].last for sid in self.sensor_ids}
        commands = self.algorithm.update(now, measurements) or {}
        for aid, cmd in sorted(commands.items()):
            if aid not in self.actuator_ids:
                raise ControlError(
                    "controller %s commanded unowned actuator %s" % (self.id, aid)
                )
            actuators[aid].command(cmd)


class FixedTimeSignal:
    """Cyclic stage plan; each stage names the road connections held open.
    Emits open/close commands to rc-block actuators keyed "rc:<id>"."""

    def __init__(self, stages: list[dict], rc_actuators: dict[int, int], offset: float = 0.0):
        # stages: [{"duration": s, "open_rcs": [..]}]; rc_actuators: rc -> actuator id
        if not stages:
            raise ControlError("signal plan needs at least one stage")
        self.stages = stages
        self.rc_actuators = rc_actuators
        self.offset = offset
        self.cycle = sum(float(s["duration"]) for s in stages)
        if self.cycle <= 0:
            raise ControlError("signal cycle must be positive")

    def _stage_at(self, now: float) -> dict:
        t = (now - self.offset) % self.cycle
        acc = 0.0
        for st in self.stages:
            acc += float(st["duration"])
            if t < acc - 1e-9:
                return st
        return self.stages[-1]

    def update(self, now: float, measurements: dict) -> dict:
        open_rcs = set(self._stage_at(now)["open_rcs"])
        return {
            aid: {"open": rc in open_rcs}
            for rc, aid in sorted(self.rc_actuators.items())
        }


class ConstantCommand:
    """Issues a fixed command once at (or after) a trigger time."""

    def __init__(self, at_time: float, commands: dict):
        self.at_time = at_time
        self.commands = commands
        self._done = False

    def update(self, now: float, measurements: dict) -> dict:
        if self._done or now + 1e-9 < self.at_time:
            return {}
        self._done = True
        return self.commands
