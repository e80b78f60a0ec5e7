"""Random junction problems with realistic structure, shared by the node
model unit tests and the acceptance suite."""

import numpy as np

from hybridtraffic.network import (
    Link,
    Network,
    RoadConnection,
    RoadParams,
    validate_network,
)
from hybridtraffic.nodemodel import NodeProblem

_P = RoadParams(1000.0, 100.0, 100.0)


def random_junction(rng: np.random.Generator) -> NodeProblem | None:
    """One junction drawn from a random lane-level network fragment, with
    random demands and supplies; None when the draw is degenerate."""
    n_up = int(rng.integers(1, 4))
    n_dn = int(rng.integers(1, 4))
    links = [
        Link(id=i, length=500.0, full_lanes=int(rng.integers(1, 4)), params=_P)
        for i in range(n_up + n_dn)
    ]
    ups, dns = links[:n_up], links[n_up:]
    rcs = []
    rid = 0
    for u in ups:
        targets = [d for d in dns if rng.random() < 0.7]
        if not targets:
            targets = [dns[int(rng.integers(0, n_dn))]]
        for d in targets:
            ul, dl = u.lanes, d.lanes
            a = int(rng.integers(0, len(ul)))
            b = int(rng.integers(a, len(ul)))
            c = int(rng.integers(0, len(dl)))
            e = int(rng.integers(c, len(dl)))
            rcs.append(
                RoadConnection(
                    rid, u.id, frozenset(ul[a : b + 1]), d.id, frozenset(dl[c : e + 1])
                )
            )
            rid += 1
    try:
        net = Network.build(links, rcs)
    except Exception:
        return None
    if validate_network(net):
        return None

    demand, down_of_g, up_of_r = {}, {}, {}
    down_of_r, up_of_h, supply, access = {}, {}, {}, {}
    for u in ups:
        for gid in net.link_groups[u.id]:
            g = net.lane_groups[gid]
            for r in g.exiting_rcs:
                if rng.random() < 0.85:
                    demand[(gid, r)] = float(rng.uniform(0.0, 10.0))
                    down_of_g.setdefault(gid, []).append(r)
                    up_of_r.setdefault(r, []).append(gid)
    if not demand:
        return None
    for r in sorted(up_of_r):
        down_of_r[r] = list(net.rc_down_groups[r])
        for h in down_of_r[r]:
            access[(r, h)] = net.lane_access_fraction(r, h)
            up_of_h.setdefault(h, []).append(r)
            if h not in supply:
                supply[h] = float(rng.uniform(0.0, 12.0)) if rng.random() < 0.8 else 0.0
    closed = {r for r in up_of_r if rng.random() < 0.1}
    return NodeProblem(
        upstream=sorted(down_of_g),
        rcs=sorted(up_of_r),
        downstream=sorted(up_of_h),
        down_of_g={k: sorted(v) for k, v in down_of_g.items()},
        up_of_r={k: sorted(v) for k, v in up_of_r.items()},
        down_of_r={k: sorted(v) for k, v in down_of_r.items()},
        up_of_h={k: sorted(v) for k, v in up_of_h.items()},
        demand=demand,
        supply=supply,
        access=access,
        closed_rcs=closed,
    )
