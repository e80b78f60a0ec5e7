"""Scenario files: YAML schema, parsing, validation, serialization, and
construction of the runtime objects the engine needs."""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from . import control
from .demand import (
    ConfigurationError,
    DemandProfile,
    Profile,
    Route,
    RoutingContext,
    Source,
    SplitProfile,
    SplitTable,
    VehicleType,
)
from .models.ctm import CtmModel
from .models.newell import NewellModel
from .models.twoqueue import TwoQueueModel
from .network import (
    Link,
    Network,
    PartialLaneStructure,
    RoadConnection,
    RoadParams,
    validate_network,
)

MODEL_KINDS = ("ctm", "two_queue", "newell")


class ScenarioError(ValueError):
    pass


@dataclass
class ModelSpec:
    kind: str
    links: list[int]
    dt: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ScenarioError("unknown model kind %r" % self.kind)
        if self.dt <= 0:
            raise ScenarioError("model dt must be positive")
        if not self.links:
            raise ScenarioError("model spec with no links")


@dataclass
class RunSettings:
    duration: float
    output_dt: float = 10.0
    seed: int = 0
    distribution: str = "equalizing"

    def __post_init__(self):
        if self.duration <= 0:
            raise ScenarioError("run duration must be positive")
        if self.output_dt <= 0:
            raise ScenarioError("output period must be positive")
        if self.distribution not in ("equalizing", "uniform"):
            raise ScenarioError("unknown distribution strategy %r" % self.distribution)


@dataclass
class Scenario:
    name: str
    links: list[Link]
    road_connections: list[RoadConnection]
    models: list[ModelSpec]
    vehicle_types: list[VehicleType]
    routes: list[Route]
    demands: list[DemandProfile]
    splits: list[SplitProfile]
    sensors: list[dict] = field(default_factory=list)
    actuators: list[dict] = field(default_factory=list)
    controllers: list[dict] = field(default_factory=list)
    run: RunSettings = field(default_factory=lambda: RunSettings(duration=3600.0))


# --- parsing -----------------------------------------------------------


def _profile(d: dict) -> Profile:
    return Profile(
        start_time=float(d.get("start", 0.0)),
        period=float(d["period"]),
        values=tuple(float(v) for v in d["values"]),
    )


def _profile_dict(p: Profile) -> dict:
    return {"start": p.start_time, "period": p.period, "values": list(p.values)}


def parse_scenario(data: dict) -> Scenario:
    try:
        links = []
        for d in data["links"]:
            partials = tuple(
                PartialLaneStructure(
                    position=p["position"],
                    lanes=int(p["lanes"]),
                    length=float(p["length"]),
                    gates=tuple((float(a), float(b)) for a, b in p.get("gates", [])),
                )
                for p in d.get("partials", [])
            )
            links.append(
                Link(
                    id=int(d["id"]),
                    length=float(d["length"]),
                    full_lanes=int(d["lanes"]),
                    params=RoadParams(
                        capacity_per_lane=float(d["capacity"]),
                        speed_limit=float(d["speed"]),
                        jam_density_per_lane=float(d["jam_density"]),
                    ),
                    partials=partials,
                )
            )
        rcs = [
            RoadConnection(
                id=int(d["id"]),
                up_link=int(d["up_link"]),
                up_lanes=frozenset(int(l) for l in d["up_lanes"]),
                down_link=int(d["down_link"]),
                down_lanes=frozenset(int(l) for l in d["down_lanes"]),
            )
            for d in data.get("road_connections", [])
        ]
        models = [
            ModelSpec(
                kind=d["kind"],
                links=[int(l) for l in d["links"]],
                dt=float(d["dt"]),
                params={
                    k: v
                    for k, v in d.items()
                    if k not in ("kind", "links", "dt")
                },
            )
            for d in data["models"]
        ]
        vtypes = [
            VehicleType(id=int(d["id"]), routing=d["routing"])
            for d in data["vehicle_types"]
        ]
        routes = [
            Route(id=int(d["id"]), links=tuple(int(l) for l in d["links"]))
            for d in data.get("routes", [])
        ]
        demands = [
            DemandProfile(
                link=int(d["link"]),
                vtype=int(d["vtype"]),
                profile=_profile(d["profile"]),
                route=int(d["route"]) if d.get("route") is not None else None,
            )
            for d in data.get("demands", [])
        ]
        splits = [
            SplitProfile(
                link=int(d["link"]),
                vtype=int(d["vtype"]),
                ratios={int(nl): _profile(p) for nl, p in d["ratios"].items()},
            )
            for d in data.get("splits", [])
        ]
        run_d = data["run"]
        run = RunSettings(
            duration=float(run_d["duration"]),
            output_dt=float(run_d.get("output_dt", 10.0)),
            seed=int(run_d.get("seed", 0)),
            distribution=run_d.get("distribution", "equalizing"),
        )
    except KeyError as exc:
        raise ScenarioError("missing required field %s" % exc) from exc
    return Scenario(
        name=str(data.get("name", "unnamed")),
        links=links,
        road_connections=rcs,
        models=models,
        vehicle_types=vtypes,
        routes=routes,
        demands=demands,
        splits=splits,
        sensors=list(data.get("sensors", [])),
        actuators=list(data.get("actuators", [])),
        controllers=list(data.get("controllers", [])),
        run=run,
    )


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "name": sc.name,
        "links": [
            {
                "id": l.id,
                "length": l.length,
                "lanes": l.full_lanes,
                "capacity": l.params.capacity_per_lane,
                "speed": l.params.speed_limit,
                "jam_density": l.params.jam_density_per_lane,
                **(
                    {
                        "partials": [
                            {
                                "position": p.position,
                                "lanes": p.lanes,
                                "length": p.length,
                                **({"gates": [list(g) for g in p.gates]} if p.gates else {}),
                            }
                            for p in l.partials
                        ]
                    }
                    if l.partials
                    else {}
                ),
            }
            for l in sc.links
        ],
        "road_connections": [
            {
                "id": r.id,
                "up_link": r.up_link,
                "up_lanes": sorted(r.up_lanes),
                "down_link": r.down_link,
                "down_lanes": sorted(r.down_lanes),
            }
            for r in sc.road_connections
        ],
        "models": [
            {"kind": m.kind, "links": m.links, "dt": m.dt, **m.params}
            for m in sc.models
        ],
        "vehicle_types": [
            {"id": v.id, "routing": v.routing} for v in sc.vehicle_types
        ],
        "routes": [{"id": r.id, "links": list(r.links)} for r in sc.routes],
        "demands": [
            {
                "link": d.link,
                "vtype": d.vtype,
                "profile": _profile_dict(d.profile),
                **({"route": d.route} if d.route is not None else {}),
            }
            for d in sc.demands
        ],
        "splits": [
            {
                "link": s.link,
                "vtype": s.vtype,
                "ratios": {nl: _profile_dict(p) for nl, p in s.ratios.items()},
            }
            for s in sc.splits
        ],
        "sensors": sc.sensors,
        "actuators": sc.actuators,
        "controllers": sc.controllers,
        "run": {
            "duration": sc.run.duration,
            "output_dt": sc.run.output_dt,
            "seed": sc.run.seed,
            "distribution": sc.run.distribution,
        },
    }


def load_scenario(path: str) -> Scenario:
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must contain a mapping")
    return parse_scenario(data)


def save_scenario(sc: Scenario, path: str):
    with open(path, "w") as f:
        yaml.safe_dump(scenario_to_dict(sc), f, sort_keys=False)


# --- validation --------------------------------------------------------


def validate_scenario(sc: Scenario) -> list[str]:
    """Structural and referential checks; returns diagnostics (empty = ok)."""
    diags: list[str] = []
    try:
        net = Network.build(sc.links, sc.road_connections)
    except Exception as exc:
        return ["network: %s" % exc]
    diags += validate_network(net)

    link_ids = set(net.links)
    assigned: dict[int, int] = {}
    for i, m in enumerate(sc.models):
        for l in m.links:
            if l not in link_ids:
                diags.append("model %d references unknown link %s" % (i, l))
            elif l in assigned:
                diags.append(
                    "link %s assigned to models %d and %d" % (l, assigned[l], i)
                )
            else:
                assigned[l] = i
    for l in sorted(link_ids - set(assigned)):
        diags.append("link %s has no model assigned" % l)

    vt_ids = {v.id for v in sc.vehicle_types}
    route_ids = {r.id for r in sc.routes}
    for r in sc.routes:
        for a, b in zip(r.links, r.links[1:]):
            if a not in link_ids or b not in link_ids:
                diags.append("route %s references unknown links" % r.id)
            elif net.rc_between(a, b) is None:
                diags.append(
                    "route %s: no road connection from link %s to link %s"
                    % (r.id, a, b)
                )
    for d in sc.demands:
        if d.link not in link_ids:
            diags.append("demand references unknown link %s" % d.link)
        if d.vtype not in vt_ids:
            diags.append("demand references unknown vehicle type %s" % d.vtype)
        vt = next((v for v in sc.vehicle_types if v.id == d.vtype), None)
        if vt is not None and vt.is_routed:
            if d.route is None:
                diags.append(
                    "demand for routed type %s at link %s has no route" % (d.vtype, d.link)
                )
            elif d.route not in route_ids:
                diags.append("demand references unknown route %s" % d.route)
            else:
                route = next(r for r in sc.routes if r.id == d.route)
                if route.links[0] != d.link:
                    diags.append(
                        "demand at link %s uses route %s which starts at link %s"
                        % (d.link, d.route, route.links[0])
                    )
    for s in sc.splits:
        if s.link not in link_ids:
            diags.append("split references unknown link %s" % s.link)
            continue
        if s.vtype not in vt_ids:
            diags.append("split references unknown vehicle type %s" % s.vtype)
        bad = set(s.ratios) - set(net.next_links(s.link))
        if bad:
            diags.append(
                "split at link %s names non-successor links %s" % (s.link, sorted(bad))
            )
    # probabilistic types need splits at true diverges they can reach; checked
    # lazily at run time, but flag diverges with no split at all
    prob_types = [v.id for v in sc.vehicle_types if not v.is_routed]
    if prob_types and any(d.vtype in prob_types for d in sc.demands):
        for l in sorted(link_ids):
            nexts = net.next_links(l)
            if len(nexts) > 1:
                for vt in prob_types:
                    if not any(s.link == l and s.vtype == vt for s in sc.splits):
                        diags.append(
                            "diverge link %s has no split profile for type %s" % (l, vt)
                        )

    seen_sensor = set()
    for d in sc.sensors:
        sid = d.get("id")
        if sid in seen_sensor:
            diags.append("duplicate sensor id %s" % sid)
        seen_sensor.add(sid)
        kind = d.get("kind")
        if kind not in ("lane_group", "local", "probe"):
            diags.append("sensor %s: unknown kind %r" % (sid, kind))
        elif kind == "lane_group" and d.get("lane_group") not in net.lane_groups:
            diags.append("sensor %s: unknown lane group %r" % (sid, d.get("lane_group")))
        elif kind == "local" and d.get("link") not in link_ids:
            diags.append("sensor %s: unknown link %r" % (sid, d.get("link")))
    seen_act = set()
    for d in sc.actuators:
        aid = d.get("id")
        if aid in seen_act:
            diags.append("duplicate actuator id %s" % aid)
        seen_act.add(aid)
        kind = d.get("kind")
        if kind == "rc_block":
            if d.get("rc") not in net.road_connections:
                diags.append("actuator %s: unknown road connection %r" % (aid, d.get("rc")))
        elif kind == "vsl":
            if d.get("link") not in link_ids:
                diags.append("actuator %s: unknown link %r" % (aid, d.get("link")))
        elif kind == "router":
            if d.get("vtype") not in vt_ids:
                diags.append("actuator %s: unknown vehicle type %r" % (aid, d.get("vtype")))
        elif kind == "demand":
            n_src = len(sc.demands)
            if not isinstance(d.get("source"), int) or not (0 <= d["source"] < n_src):
                diags.append("actuator %s: unknown source %r" % (aid, d.get("source")))
        elif kind == "split":
            if d.get("link") not in link_ids or d.get("vtype") not in vt_ids:
                diags.append("actuator %s: bad split target" % aid)
        else:
            diags.append("actuator %s: unknown kind %r" % (aid, kind))
    for d in sc.controllers:
        for sid in d.get("sensors", []):
            if sid not in seen_sensor:
                diags.append("controller %s references unknown sensor %s" % (d.get("id"), sid))
        for aid in d.get("actuators", []):
            if aid not in seen_act:
                diags.append("controller %s references unknown actuator %s" % (d.get("id"), aid))
        if d.get("type") not in ("fixed_time_signal", "constant", "noop"):
            diags.append("controller %s: unknown type %r" % (d.get("id"), d.get("type")))
    return diags


# --- runtime construction ---------------------------------------------


def _make_model(spec: ModelSpec):
    p = spec.params
    if spec.kind == "ctm":
        return CtmModel(
            dt=spec.dt,
            max_cell_length=float(p.get("max_cell_length", 100.0)),
            lc_supply_factor=float(p.get("lc_supply_factor", 1.0)),
        )
    if spec.kind == "two_queue":
        return TwoQueueModel(dt=spec.dt)
    return NewellModel(
        dt=spec.dt,
        sigma_v=float(p.get("sigma_v", 0.0)),
        sigma_w=float(p.get("sigma_w", 0.0)),
        sigma_f=float(p.get("sigma_f", 0.0)),
    )


def _make_sensor(d: dict):
    kind = d["kind"]
    if kind == "lane_group":
        return control.LaneGroupSensor(
            id=int(d["id"]), dt=float(d["dt"]), group_id=str(d["lane_group"])
        )
    if kind == "local":
        return control.LocalSensor(
            id=int(d["id"]), dt=float(d["dt"]),
            link=int(d["link"]), offset_m=float(d.get("offset", 0.0)),
        )
    if kind == "probe":
        return control.ProbeSensor(
            id=int(d["id"]), dt=float(d["dt"]), vehicle_id=int(d["vehicle"])
        )
    raise ScenarioError("unknown sensor kind %r" % kind)


def _make_actuator(d: dict):
    kind = d["kind"]
    aid, dt = int(d["id"]), float(d["dt"])
    if kind == "rc_block":
        return control.RcBlockActuator(id=aid, dt=dt, rc=int(d["rc"]))
    if kind == "vsl":
        return control.VslActuator(id=aid, dt=dt, link=int(d["link"]))
    if kind == "router":
        return control.RouterActuator(id=aid, dt=dt, vtype=int(d["vtype"]))
    if kind == "demand":
        return control.DemandActuator(id=aid, dt=dt, source=int(d["source"]))
    if kind == "split":
        return control.SplitActuator(
            id=aid, dt=dt, link=int(d["link"]), vtype=int(d["vtype"])
        )
    raise ScenarioError("unknown actuator kind %r" % kind)


def _make_controller(d: dict):
    ctype = d.get("type", "noop")
    params = d.get("params", {})
    if ctype == "fixed_time_signal":
        algo = control.FixedTimeSignal(
            stages=params["stages"],
            rc_actuators={int(k): int(v) for k, v in params["rc_actuators"].items()},
            offset=float(params.get("offset", 0.0)),
        )
    elif ctype == "constant":
        algo = control.ConstantCommand(
            at_time=float(params.get("at", 0.0)),
            commands={int(k): v for k, v in params.get("commands", {}).items()},
        )
    else:
        algo = None
    return control.Controller(
        id=int(d["id"]),
        dt=float(d["dt"]),
        sensor_ids=[int(s) for s in d.get("sensors", [])],
        actuator_ids=[int(a) for a in d.get("actuators", [])],
        algorithm=algo,
    )


def build_runtime(sc: Scenario) -> dict:
    diags = validate_scenario(sc)
    if diags:
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(diags))
    net = Network.build(sc.links, sc.road_connections)

    models = []
    model_of_link = {}
    for spec in sc.models:
        m = _make_model(spec)
        m.build(net, spec.links)
        models.append(m)
        for l in spec.links:
            model_of_link[l] = m

    vtypes = {v.id: v for v in sc.vehicle_types}
    routes = {r.id: r for r in sc.routes}
    splits = SplitTable(sc.splits)
    routing = RoutingContext(
        vehicle_types=vtypes,
        routes=routes,
        splits=splits,
        terminal_links={l for l in net.links if net.is_terminal(l)},
        link_next_links={l: net.next_links(l) for l in net.links},
    )
    sources = [Source(id=i, demand=d) for i, d in enumerate(sc.demands)]
    sensors = [_make_sensor(d) for d in sc.sensors]
    actuators = [_make_actuator(d) for d in sc.actuators]
    controllers = [_make_controller(d) for d in sc.controllers]
    return {
        "network": net,
        "models": models,
        "model_of_link": model_of_link,
        "routing": routing,
        "sources": sources,
        "sensors": sensors,
        "actuators": actuators,
        "controllers": controllers,
    }
