"""Task lifecycle: arrivals, routing, latency ledger, edge-server FIFOs and metrics."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mobility import TopologySnapshot
from .radio import DEFAULT_CHANNEL, ChannelParams, allocate_bandwidth, clamp_distance_km, link_rate, spectral_efficiency

PENDING = "pending"
IN_TRANSIT = "in_transit"
QUEUED = "queued"
DONE = "done"
EXPIRED = "expired"


class UnreachableError(RuntimeError):
    """A hop of the route has zero rate."""


@dataclass
class RoutePath:
    """Snapshot node indices from the owner device through relay vehicles to one server."""

    nodes: list[int]
    hops_km: list[float]
    length_m: float | None = None  # metre hops summed in path order, when known

    @property
    def distance_m(self) -> float:
        return self.length_m if self.length_m is not None else 1000.0 * sum(self.hops_km)

    @property
    def n_hops(self) -> int:
        return len(self.hops_km)

    @property
    def vehicle_pairs(self) -> list[tuple[int, int]]:
        inner = self.nodes[1:-1]
        return list(zip(inner[:-1], inner[1:]))


@dataclass
class Task:
    id: int
    owner: int
    birth_slot: int
    size: float  # bit
    deadline: float  # s, relative to birth
    birth_time: float = 0.0
    server: int | None = None
    route: RoutePath | None = None
    status: str = PENDING
    l_trans: float = 0.0
    l_queue: float = 0.0
    l_comp: float = 0.0
    l_e2e: float = math.nan
    queue_estimate: float = 0.0
    join_time: float = math.nan
    start_time: float = math.nan
    end_time: float = math.nan

    @property
    def decision(self) -> int:
        """Offloading indicator: 1 once a route is assigned."""
        return int(self.route is not None)

    @property
    def deadline_time(self) -> float:
        return self.birth_time + self.deadline


def generate_tasks(slot, beta, size_range, rng, n_devices, deadline=10.0, slot_s=1.0, first_id=0):
    """Each device independently spawns one task with probability ``beta``.

    ``deadline`` may be a scalar or a per-device sequence.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    arrive = rng.random(n_devices) < beta
    sizes = rng.uniform(size_range[0], size_range[1], n_devices)
    deadlines = np.broadcast_to(np.asarray(deadline, dtype=float), (n_devices,))
    tasks = []
    for i in np.flatnonzero(arrive):
        tasks.append(Task(first_id + len(tasks), int(i), slot, float(sizes[i]), float(deadlines[i]), slot * slot_s))
    return tasks


def _relay_ok(snap: TopologySnapshot, node: int, target: int) -> bool:
    return node == target or snap.kind(node) == "vehicle"


def shortest_routes(snap: TopologySnapshot, device: int) -> dict[int, RoutePath]:
    """Shortest relay paths from ``device`` to every reachable server.

    Only vehicles may relay. Among equal-length paths the lexicographically
    smallest node sequence wins, which falls out of ordering the heap by
    ``(distance, path)``.
    """
    src = snap.device_node(device)
    servers = {snap.server_node(j): j for j in range(snap.n_servers)}
    heap = [(0.0, (src,))]
    settled: set[int] = set()
    found: dict[int, RoutePath] = {}
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in settled:
            continue
        settled.add(u)
        if u in servers:
            hops = [snap.dist[a, b] / 1000.0 for a, b in zip(path[:-1], path[1:])]
            found[servers[u]] = RoutePath(list(path), hops, float(d))
            continue  # servers never relay
        if u != src and snap.kind(u) != "vehicle":
            continue
        for v in np.flatnonzero(np.isfinite(snap.dist[u])):
            v = int(v)
            if v in settled or not (snap.kind(v) == "vehicle" or v in servers):
                continue
            heapq.heappush(heap, (d + snap.dist[u, v], path + (v,)))
    return found


def build_route(snap: TopologySnapshot, device: int, server: int) -> RoutePath | None:
    return shortest_routes(snap, device).get(server)


def transmission_latency(task: Task, route: RoutePath, alloc: dict, params: ChannelParams = DEFAULT_CHANNEL) -> float:
    """Store-and-forward delivery time: sum of W/R over the hops, each at the task's share."""
    b = alloc[task.id]
    total = 0.0
    for d_km in route.hops_km:
        rate = link_rate(max(d_km, 1e-3), b, params)
        if rate <= 0:
            raise UnreachableError(f"task {task.id}: zero-rate hop")
        total += task.size / rate
    return total


def transfer_work(size: float, route: RoutePath, params: ChannelParams = DEFAULT_CHANNEL) -> float:
    """Bandwidth-seconds (Hz*s) needed to push ``size`` bits over every hop."""
    return sum(size / spectral_efficiency(max(d, 1e-3), params) for d in route.hops_km)


def computing_latency(task: Task, server: "EdgeServerState", kappa: float) -> float:
    return kappa * task.size / server.rate


def queueing_latency(server: "EdgeServerState") -> float:
    """Wait for a task joining now: unfinished cycles over the compute rate."""
    return server.backlog / server.rate


@dataclass
class _Entry:
    task: Task
    remaining: float  # cycles


@dataclass
class CompletionEvent:
    time: float
    task: Task
    completed: bool  # False: dropped at its deadline


@dataclass
class EdgeServerState:
    """Non-preemptive FIFO server draining ``rate`` cycles per second."""

    id: int
    rate: float
    kappa: float = 1200.0
    clock: float = 0.0
    fifo: deque = field(default_factory=deque)

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("compute rate must be > 0")

    @property
    def backlog(self) -> float:
        return float(sum(e.remaining for e in self.fifo))

    @property
    def backlog_bits(self) -> float:
        return self.backlog / self.kappa

    def enqueue(self, task: Task, remaining: float | None = None) -> None:
        """Append without time bookkeeping (used to seed queues directly)."""
        self.fifo.append(_Entry(task, self.kappa * task.size if remaining is None else remaining))

    def _join(self, task: Task, t: float) -> None:
        self._drain_to(t)
        task.join_time = t
        task.queue_estimate = self.backlog / self.rate
        task.l_comp = self.kappa * task.size / self.rate
        task.status = QUEUED
        self.fifo.append(_Entry(task, self.kappa * task.size))
        if len(self.fifo) == 1:
            task.start_time = t

    def _drain_to(self, t: float) -> None:
        """Update the head's remaining cycles to time ``t`` (no events cross here)."""
        if self.fifo and t > self.clock:
            head = self.fifo[0]
            if math.isnan(head.task.start_time):
                head.task.start_time = self.clock
            head.remaining = max(head.remaining - self.rate * (t - self.clock), 0.0)
        self.clock = max(self.clock, t)

    def _head_event(self):
        """(time, completes) for the head task, or None when idle."""
        if not self.fifo:
            return None
        head = self.fifo[0]
        task = head.task
        if math.isnan(task.start_time):
            task.start_time = self.clock
        if task.start_time >= task.deadline_time or _planned_e2e(task) > task.deadline:
            return max(task.deadline_time, self.clock), False
        if not math.isnan(task.join_time):
            return task.start_time + task.l_comp, True
        # seeded directly: finish when the remaining cycles run out
        return self.clock + head.remaining / self.rate, True

    def _pop_head(self, t: float, completed: bool) -> CompletionEvent:
        entry = self.fifo.popleft()
        task = entry.task
        if not math.isnan(task.join_time):
            task.l_queue = task.start_time - task.join_time
            task.l_e2e = task.l_trans + task.l_comp + task.l_queue
        task.end_time = t
        task.status = DONE if completed else EXPIRED
        self.clock = t
        if self.fifo:
            self.fifo[0].task.start_time = t
        return CompletionEvent(t, task, completed)

    def advance(self, until: float, arrivals=()) -> list[CompletionEvent]:
        """Run the queue up to time ``until`` admitting ``(time, task)`` arrivals.

        Ties: a head finishing at the same instant as an arrival leaves first;
        simultaneous arrivals join in task-id order.
        """
        pending = sorted(arrivals, key=lambda a: (a[0], a[1].id))
        events: list[CompletionEvent] = []
        k = 0
        while True:
            head = self._head_event()
            t_arr = pending[k][0] if k < len(pending) else math.inf
            if head is not None and head[0] <= t_arr and head[0] <= until:
                self._drain_to(head[0])
                events.append(self._pop_head(head[0], head[1]))
                continue
            if t_arr <= until:
                self._join(pending[k][1], t_arr)
                k += 1
                continue
            break
        self._drain_to(until)
        # queued (not yet served) tasks whose deadline has passed leave silently
        if len(self.fifo) > 1:
            keep = deque([self.fifo[0]])
            for e in list(self.fifo)[1:]:
                if e.task.deadline_time <= until:
                    e.task.status = EXPIRED
                    e.task.end_time = e.task.deadline_time
                    events.append(CompletionEvent(e.task.deadline_time, e.task, False))
                else:
                    keep.append(e)
            self.fifo = keep
        events.sort(key=lambda e: (e.time, e.task.id))
        return events


def _planned_e2e(task: Task) -> float:
    if math.isnan(task.join_time):
        return -math.inf
    return task.l_trans + (task.start_time - task.join_time) + task.l_comp


def advance_servers(servers, dt: float, arrivals: dict | None = None) -> list[CompletionEvent]:
    """Advance every server by ``dt`` from its own clock; events sorted by time then task id."""
    events = []
    for s in servers:
        events.extend(s.advance(s.clock + dt, (arrivals or {}).get(s.id, ())))
    events.sort(key=lambda e: (e.time, e.task.id))
    return events


@dataclass
class SlotRow:
    slot: int
    generated_bits: float
    completed_bits: float
    expired_bits: float
    generated_tasks: int
    completed_tasks: int
    success_rate: float


@dataclass
class MetricsLedger:
    """Per-slot bit accounting; success rate is cumulative completed/generated tasks."""

    rows: list[SlotRow] = field(default_factory=list)
    generated_bits: float = 0.0
    completed_bits: float = 0.0
    expired_bits: float = 0.0
    generated_tasks: int = 0
    completed_tasks: int = 0
    expired_tasks: int = 0

    @property
    def objective(self) -> float:
        return self.completed_bits

    def in_flight_bits(self) -> float:
        return self.generated_bits - self.completed_bits - self.expired_bits


def settle_slot(generated, events, ledger: MetricsLedger, slot: int, expired=()) -> MetricsLedger:
    """Book one slot: new tasks, deadline-checked completions and expirations.

    A completion counts only if its end-to-end latency is within the deadline
    (inclusive). ``expired`` lists tasks dropped outside the servers.
    """
    gen_bits = sum(t.size for t in generated)
    done_bits = 0.0
    lost_bits = 0.0
    n_done = 0
    for ev in events:
        t = ev.task
        if ev.completed and t.l_e2e <= t.deadline:
            done_bits += t.size
            n_done += 1
        else:
            t.status = EXPIRED
            lost_bits += t.size
            ledger.expired_tasks += 1
    for t in expired:
        lost_bits += t.size
        ledger.expired_tasks += 1
    ledger.generated_bits += gen_bits
    ledger.completed_bits += done_bits
    ledger.expired_bits += lost_bits
    ledger.generated_tasks += len(generated)
    ledger.completed_tasks += n_done
    rate = ledger.completed_tasks / ledger.generated_tasks if ledger.generated_tasks else 1.0
    ledger.rows.append(SlotRow(slot, gen_bits, done_bits, lost_bits, len(generated), n_done, rate))
    return ledger


@dataclass
class _Transfer:
    task: Task
    work: float  # Hz*s still to push


@dataclass
class SlotOutcome:
    slot: int
    completed: list[Task]
    expired: list[Task]
    rewards: np.ndarray  # per device, bits completed this slot


class OffloadEngine:
    """Transfers, server queues and the metric ledger for one simulation run."""

    def __init__(self, n_devices, server_rates, kappa=1200.0, channel: ChannelParams = DEFAULT_CHANNEL, slot_s=1.0):
        self.n_devices = n_devices
        self.kappa = kappa
        self.channel = channel
        self.slot_s = slot_s
        self.servers = [EdgeServerState(j, float(c), kappa) for j, c in enumerate(server_rates)]
        self.transfers: list[_Transfer] = []
        self.ledger = MetricsLedger()
        self._generated: list[Task] = []
        self._dropped: list[Task] = []
        self.allocations: dict[int, float] = {}

    def submit(self, task: Task, server: int | None, route: RoutePath | None) -> None:
        """Accept this slot's task; without a route it is dropped immediately."""
        self._generated.append(task)
        if server is None or route is None:
            task.status = EXPIRED
            task.end_time = task.birth_time
            self._dropped.append(task)
            return
        task.server = server
        task.route = route
        task.status = IN_TRANSIT
        self.transfers.append(_Transfer(task, transfer_work(task.size, route, self.channel)))

    def in_transit_bits(self, server: int) -> float:
        return sum(tr.task.size for tr in self.transfers if tr.task.server == server)

    def run_slot(self, slot: int) -> SlotOutcome:
        t0 = slot * self.slot_s
        t1 = t0 + self.slot_s
        self.allocations = allocate_bandwidth(
            [(tr.task.id, tr.task.size) for tr in self.transfers], self.channel.bandwidth
        )
        arrivals: dict[int, list] = {}
        still = []
        dropped = self._dropped
        for tr in self.transfers:
            task = tr.task
            b = self.allocations[task.id]
            t_arr = t0 + tr.work / b
            if t_arr <= t1 and t_arr <= task.deadline_time:
                task.l_trans = t_arr - task.birth_time
                arrivals.setdefault(task.server, []).append((t_arr, task))
            elif task.deadline_time <= t1:
                task.status = EXPIRED
                task.end_time = task.deadline_time
                dropped.append(task)
            else:
                tr.work -= b * self.slot_s
                still.append(tr)
        self.transfers = still
        events = []
        for s in self.servers:
            s.clock = max(s.clock, t0)
            events.extend(s.advance(t1, arrivals.get(s.id, ())))
        events.sort(key=lambda e: (e.time, e.task.id))
        generated = self._generated
        self._generated, self._dropped = [], []
        settle_slot(generated, events, self.ledger, slot, dropped)
        rewards = np.zeros(self.n_devices)
        completed, expired = [], list(dropped)
        for ev in events:
            if ev.task.status == DONE:
                rewards[ev.task.owner] += ev.task.size
                completed.append(ev.task)
            else:
                expired.append(ev.task)
        return SlotOutcome(slot, completed, expired, rewards)
