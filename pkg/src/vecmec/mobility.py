"""Road network, vehicle motion and per-slot relay-graph snapshots."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

VEHICLE_LENGTH = 4.0  # m
SAFE_GAP = 4.0  # m
SPEED_LIMIT = 60.0 / 3.6  # m/s

DEVICE = "device"
VEHICLE = "vehicle"
SERVER = "server"


class ScenarioInfeasibleError(ValueError):
    """The map cannot hold the requested fleet with legal gaps."""


@dataclass(frozen=True)
class Lane:
    id: int
    start: int  # junction index
    end: int
    length: float
    horizontal: bool


@dataclass
class RoadNetwork:
    """Directed lanes between junctions; junctions are intersections or boundary stubs.

    Each road is two-way, so every segment appears as a pair of opposite lanes.
    """

    junctions: np.ndarray  # (K, 2) xy
    lanes: list[Lane]
    is_intersection: np.ndarray  # (K,) bool
    light_cycle: tuple[float, float] | None = None  # (green_s, red_s)
    size: tuple[float, float] = (1000.0, 1000.0)
    _outgoing: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        out: dict[int, list[int]] = {}
        for lane in self.lanes:
            if not lane.length > 0:
                raise ValueError(f"lane {lane.id} has non-positive length")
            out.setdefault(lane.start, []).append(lane.id)
        self._outgoing = out

    def outgoing(self, junction: int) -> list[int]:
        return self._outgoing.get(junction, [])

    def position(self, lane_id: int, offset: float) -> np.ndarray:
        lane = self.lanes[lane_id]
        a = self.junctions[lane.start]
        b = self.junctions[lane.end]
        return a + (b - a) * (offset / lane.length)

    def next_options(self, lane_id: int) -> list[int]:
        """Lanes a vehicle may take at the end of ``lane_id``; U-turns only at dead ends."""
        lane = self.lanes[lane_id]
        opts = [l for l in self.outgoing(lane.end) if self.lanes[l].end != lane.start]
        return opts or list(self.outgoing(lane.end))

    def is_red(self, lane_id: int, time_s: float) -> bool:
        if self.light_cycle is None:
            return False
        lane = self.lanes[lane_id]
        if not self.is_intersection[lane.end]:
            return False
        green, red = self.light_cycle
        in_first_phase = (time_s % (green + red)) < green
        # horizontal approaches see the first phase as green, vertical ones as red
        return in_first_phase != lane.horizontal

    @property
    def total_length(self) -> float:
        return float(sum(l.length for l in self.lanes))


def grid_network(size_m: float = 600.0, road_fractions=(0.25, 0.75), light_cycle=None) -> RoadNetwork:
    """Square map crossed by two horizontal and two vertical two-way roads."""
    coords = [size_m * f for f in road_fractions]
    # junction grid including boundary stubs: positions 0, coords..., size
    ticks = [0.0, *coords, size_m]
    index = {}
    points = []
    inter = []

    def junction(x, y):
        key = (round(x, 9), round(y, 9))
        if key not in index:
            index[key] = len(points)
            points.append((x, y))
            inter.append(x in coords and y in coords)
        return index[key]

    segments = []
    for y in coords:  # horizontal roads
        for a, b in zip(ticks[:-1], ticks[1:]):
            segments.append((junction(a, y), junction(b, y), True))
    for x in coords:  # vertical roads
        for a, b in zip(ticks[:-1], ticks[1:]):
            segments.append((junction(x, a), junction(x, b), False))

    pts = np.array(points, dtype=float)
    lanes = []
    for u, v, horiz in segments:
        length = float(np.linalg.norm(pts[v] - pts[u]))
        lanes.append(Lane(len(lanes), u, v, length, horiz))
        lanes.append(Lane(len(lanes), v, u, length, horiz))
    return RoadNetwork(pts, lanes, np.array(inter), light_cycle, (size_m, size_m))


@dataclass
class VehicleState:
    id: int
    lane: int
    offset: float  # front bumper distance from lane start, m
    speed: float = SPEED_LIMIT
    next_lane: int = -1
    length: float = VEHICLE_LENGTH


@dataclass(frozen=True)
class NodePosition:
    kind: str
    id: int
    xy: tuple[float, float]


def default_server_sites(net: RoadNetwork) -> list[tuple[float, float]]:
    """Intersections ordered so that the first two sit on a diagonal."""
    pts = [tuple(map(float, net.junctions[k])) for k in np.flatnonzero(net.is_intersection)]
    pts.sort()
    if len(pts) == 4:
        # (low,low), (high,high), (low,high), (high,low)
        pts = [pts[0], pts[3], pts[1], pts[2]]
    return pts


def _sample_roadside(net: RoadNetwork, rng: np.random.Generator, setback: float) -> tuple[float, float]:
    lengths = np.array([l.length for l in net.lanes])
    lane = net.lanes[int(rng.choice(len(lengths), p=lengths / lengths.sum()))]
    xy = net.position(lane.id, rng.uniform(0.0, lane.length))
    a, b = net.junctions[lane.start], net.junctions[lane.end]
    normal = np.array([-(b - a)[1], (b - a)[0]]) / lane.length
    xy = xy + normal * setback
    return float(np.clip(xy[0], 0, net.size[0])), float(np.clip(xy[1], 0, net.size[1]))


def place_vehicles(net: RoadNetwork, n: int, rng: np.random.Generator, max_tries: int = 10000) -> list[VehicleState]:
    """Drop ``n`` vehicles on random lanes keeping every same-lane gap legal."""
    need = n * (VEHICLE_LENGTH + SAFE_GAP)
    if need > net.total_length:
        raise ScenarioInfeasibleError(f"{n} vehicles need {need:.0f} m of lane, map has {net.total_length:.0f} m")
    lengths = np.array([l.length for l in net.lanes])
    probs = lengths / lengths.sum()
    vehicles: list[VehicleState] = []
    tries = 0
    while len(vehicles) < n:
        tries += 1
        if tries > max_tries:
            raise ScenarioInfeasibleError(f"could not place {n} vehicles with legal gaps")
        lane = int(rng.choice(len(lengths), p=probs))
        offset = float(rng.uniform(VEHICLE_LENGTH, net.lanes[lane].length))
        if all(
            v.lane != lane or abs(v.offset - offset) >= VEHICLE_LENGTH + SAFE_GAP for v in vehicles
        ):
            opts = net.next_options(lane)
            vehicles.append(VehicleState(len(vehicles), lane, offset, SPEED_LIMIT, opts[int(rng.integers(len(opts)))]))
    return vehicles


def init_scenario(config, seed=None, rng: np.random.Generator | None = None):
    """Build the road network and place vehicles, devices and servers.

    ``config`` needs ``n_devices``, ``n_vehicles``, ``n_servers`` and ``map_size``;
    optional ``server_sites``, ``light_cycle`` and ``road_fractions``.
    Returns ``(network, vehicles, nodes)`` with nodes ordered devices, vehicles, servers.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    net = grid_network(
        getattr(config, "map_size", 600.0),
        getattr(config, "road_fractions", (0.25, 0.75)),
        getattr(config, "light_cycle", None),
    )
    sites = getattr(config, "server_sites", None) or default_server_sites(net)
    if config.n_servers > len(sites):
        raise ScenarioInfeasibleError(f"{config.n_servers} servers requested, only {len(sites)} sites")
    devices = [NodePosition(DEVICE, i, _sample_roadside(net, rng, 5.0)) for i in range(config.n_devices)]
    vehicles = place_vehicles(net, config.n_vehicles, rng)
    servers = [NodePosition(SERVER, j, tuple(map(float, sites[j]))) for j in range(config.n_servers)]
    nodes = devices + vehicle_positions(net, vehicles) + servers
    return net, vehicles, nodes


def vehicle_positions(net: RoadNetwork, vehicles) -> list[NodePosition]:
    return [NodePosition(VEHICLE, v.id, tuple(map(float, net.position(v.lane, v.offset)))) for v in vehicles]


def _leader_room(me: VehicleState, others, net: RoadNetwork) -> float:
    """Free distance ahead of ``me`` before the safe gap binds, looking one lane ahead."""
    lane_len = net.lanes[me.lane].length
    room = np.inf
    for o in others:
        if o.id == me.id:
            continue
        if o.lane == me.lane and o.offset > me.offset:
            room = min(room, o.offset - o.length - SAFE_GAP - me.offset)
        elif o.lane == me.next_lane:
            room = min(room, lane_len - me.offset + o.offset - o.length - SAFE_GAP)
    return room


def step_vehicles(vehicles, net: RoadNetwork, dt: float, rng: np.random.Generator | None = None, time_s: float = 0.0):
    """Advance every vehicle by ``dt`` seconds under the speed cap, safe gap and lights.

    Vehicles are moved one at a time against the live positions of the others.
    Leaders never move backwards, so checking an unmoved leader is conservative.
    """
    if dt <= 0:
        return [replace(v) for v in vehicles]
    if rng is None:
        rng = np.random.default_rng(0)
    state = [replace(v) for v in vehicles]
    # the vehicle closest to the end of its lane goes first
    order = sorted(range(len(state)), key=lambda k: (net.lanes[state[k].lane].length - state[k].offset, state[k].id))
    for k in order:
        v = state[k]
        lane = net.lanes[v.lane]
        travel = SPEED_LIMIT * dt
        travel = min(travel, max(_leader_room(v, state, net), 0.0))
        to_end = lane.length - v.offset
        if travel > to_end and net.is_red(v.lane, time_s):
            travel = to_end
        if travel > to_end:
            nxt = net.lanes[v.next_lane]
            new_offset = min(travel - to_end, nxt.length)
            # merging: must land behind everyone already on the next lane
            for o in state:
                if o.id != v.id and o.lane == nxt.id:
                    new_offset = min(new_offset, o.offset - o.length - SAFE_GAP)
            if new_offset < 0:
                travel = to_end
            else:
                travel = to_end + new_offset
                opts = net.next_options(nxt.id)
                v.lane, v.offset = nxt.id, new_offset
                v.next_lane = opts[int(rng.integers(len(opts)))]
                v.speed = travel / dt
                continue
        v.offset += travel
        v.speed = travel / dt
    return state


@dataclass
class TopologySnapshot:
    """Node positions at one slot plus the relay graph as a distance matrix (inf = no edge).

    Node order is devices, then vehicles, then servers.
    """

    positions: np.ndarray
    n_devices: int
    n_vehicles: int
    n_servers: int
    dist: np.ndarray

    def device_node(self, i: int) -> int:
        return i

    def vehicle_node(self, n: int) -> int:
        return self.n_devices + n

    def server_node(self, j: int) -> int:
        return self.n_devices + self.n_vehicles + j

    def kind(self, node: int) -> str:
        if node < self.n_devices:
            return DEVICE
        if node < self.n_devices + self.n_vehicles:
            return VEHICLE
        return SERVER

    @property
    def n_nodes(self) -> int:
        return len(self.positions)


def snapshot(vehicles_xy, devices_xy, servers_xy, ranges: dict) -> TopologySnapshot:
    """Freeze node positions and derive the undirected relay graph.

    ``ranges`` keys: ``dev_range_m`` (device-vehicle), ``v2v_range_m``, ``es_cov_m``
    (vehicle-server and device-server).
    """
    dev = np.asarray(devices_xy, dtype=float).reshape(-1, 2)
    veh = np.asarray(vehicles_xy, dtype=float).reshape(-1, 2)
    srv = np.asarray(servers_xy, dtype=float).reshape(-1, 2)
    pos = np.vstack([dev, veh, srv])
    n_d, n_v, n_s = len(dev), len(veh), len(srv)
    diff = pos[:, None, :] - pos[None, :, :]
    euclid = np.sqrt((diff**2).sum(-1))

    limit = np.zeros((len(pos), len(pos)))
    d_sl = slice(0, n_d)
    v_sl = slice(n_d, n_d + n_v)
    s_sl = slice(n_d + n_v, n_d + n_v + n_s)
    limit[d_sl, v_sl] = ranges.get("dev_range_m", 200.0)
    limit[v_sl, v_sl] = ranges.get("v2v_range_m", 200.0)
    limit[v_sl, s_sl] = ranges.get("es_cov_m", 200.0)
    limit[d_sl, s_sl] = ranges.get("es_cov_m", 200.0)
    limit = np.maximum(limit, limit.T)
    adjacent = (limit > 0) & (euclid <= limit)
    np.fill_diagonal(adjacent, False)
    dist = np.where(adjacent, euclid, np.inf)
    return TopologySnapshot(pos, n_d, n_v, n_s, dist)


def write_trace(path, rows) -> None:
    """Write ``(slot, kind, id, x, y)`` rows as a position trace CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "kind", "id", "x", "y"])
        for slot, kind, idx, x, y in rows:
            w.writerow([slot, kind, idx, repr(float(x)), repr(float(y))])
