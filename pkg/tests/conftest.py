import numpy as np
import pytest

from hybridtraffic.network import Link, Network, RoadConnection, RoadParams

STD = dict(capacity_per_lane=1000.0, speed_limit=100.0, jam_density_per_lane=100.0)


def std_params(**over):
    d = dict(STD)
    d.update(over)
    return RoadParams(**d)


def corridor_network(n_links=3, lanes=2, length=500.0, last_lanes=None):
    """Serial corridor 0 -> 1 -> ... -> n-1; optional lane drop on the last."""
    links = []
    for i in range(n_links):
        nl = lanes if (last_lanes is None or i < n_links - 1) else last_lanes
        links.append(Link(id=i, length=length, full_lanes=nl, params=std_params()))
    rcs = []
    for i in range(n_links - 1):
        up = links[i]
        dn = links[i + 1]
        rcs.append(
            RoadConnection(
                id=i,
                up_link=i,
                up_lanes=frozenset(up.lanes),
                down_link=i + 1,
                down_lanes=frozenset(dn.lanes),
            )
        )
    return Network.build(links, rcs), links, rcs


def corridor_scenario_dict(
    model_blocks,
    n_links=4,
    lanes=1,
    length=500.0,
    last_lanes=None,
    rate_vph=1000.0,
    duration=600.0,
    seed=7,
    output_dt=10.0,
):
    """Serial-corridor scenario mapping: one routed type, one route, one source.

    model_blocks: list of (kind, links, extra_params) or (kind, links).
    """
    links = []
    for i in range(n_links):
        nl = lanes if (last_lanes is None or i < n_links - 1) else last_lanes
        links.append(
            {"id": i, "length": length, "lanes": nl,
             "capacity": STD["capacity_per_lane"], "speed": STD["speed_limit"],
             "jam_density": STD["jam_density_per_lane"]}
        )
    rcs = [
        {"id": i, "up_link": i, "up_lanes": list(range(1, links[i]["lanes"] + 1)),
         "down_link": i + 1,
         "down_lanes": list(range(1, links[i + 1]["lanes"] + 1))}
        for i in range(n_links - 1)
    ]
    models = []
    for blk in model_blocks:
        kind, blk_links = blk[0], blk[1]
        extra = blk[2] if len(blk) > 2 else {}
        models.append({"kind": kind, "links": list(blk_links), "dt": 2.0, **extra})
    return {
        "name": "corridor",
        "links": links,
        "road_connections": rcs,
        "models": models,
        "vehicle_types": [{"id": 0, "routing": "routed"}],
        "routes": [{"id": 0, "links": list(range(n_links))}],
        "demands": [
            {"link": 0, "vtype": 0, "route": 0,
             "profile": {"start": 0.0, "period": duration, "values": [rate_vph]}}
        ],
        "splits": [],
        "run": {"duration": duration, "output_dt": output_dt, "seed": seed},
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
