"""Multi-agent MDP wrapper around the offloading simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .mobility import init_scenario, place_vehicles, snapshot, step_vehicles, vehicle_positions
from .offload import OffloadEngine, RoutePath, SlotOutcome, Task, generate_tasks, shortest_routes


@dataclass
class AgentObservation:
    """One device's view in raw units (bits, counts)."""

    task_bits: float
    selections: np.ndarray  # (I,) server chosen last slot, -1 for none
    counts: np.ndarray  # (J,) devices that chose each server last slot
    backlog_bits: np.ndarray  # (J,) unfinished work queued at each server


@dataclass
class StepResult:
    rewards: np.ndarray  # (I,) bits completed within deadline this slot
    observations: np.ndarray  # (I, obs_dim), normalized
    done: bool
    outcome: SlotOutcome
    executed: list = field(default_factory=list)  # (device, server) pairs actually routed


def _seed_streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class OffloadingEnv:
    """Devices are agents; each picks one edge server per arriving task.

    Device and server placement is fixed by ``config.seed`` for the lifetime of
    the environment. Every ``reset(seed)`` re-draws vehicles, turn choices and
    task arrivals.
    """

    def __init__(self, config: ScenarioConfig):
        self.config = config.validate()
        layout_rng = _seed_streams(config.seed, 1)[0]
        self.net, _, nodes = init_scenario(config, rng=layout_rng)
        I, N = config.n_devices, config.n_vehicles
        self.devices_xy = np.array([n.xy for n in nodes[:I]]).reshape(-1, 2)
        self.servers_xy = np.array([n.xy for n in nodes[I + N :]]).reshape(-1, 2)
        self.n_agents = I
        self.n_servers = config.n_servers
        self.obs_dim = 1 + I + 2 * config.n_servers
        self._deadlines = np.broadcast_to(np.asarray(config.deadline, dtype=float), (I,)).copy()
        self.slot = 0
        self.engine: OffloadEngine | None = None

    # ---- episode control -------------------------------------------------
    def reset(self, seed: int | None = None) -> np.ndarray:
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        self._mob_rng, self._task_rng, self._turn_rng = _seed_streams(seed + 7919 * (cfg.seed + 1), 3)
        self.vehicles = place_vehicles(self.net, cfg.n_vehicles, self._mob_rng)
        self.engine = OffloadEngine(cfg.n_devices, cfg.rates, cfg.kappa, cfg.channel, cfg.slot_s)
        self.slot = 0
        self._next_task_id = 0
        self.selections = np.full(cfg.n_devices, -1)
        self.history: list[tuple[int, int]] = []
        self._refresh_topology()
        self._arrive()
        return self.observations()

    def _refresh_topology(self) -> None:
        vxy = [p.xy for p in vehicle_positions(self.net, self.vehicles)]
        self.snapshot = snapshot(vxy, self.devices_xy, self.servers_xy, self.config.ranges)
        self.routes: list[dict[int, RoutePath]] = [
            shortest_routes(self.snapshot, i) for i in range(self.config.n_devices)
        ]

    def _arrive(self) -> None:
        cfg = self.config
        tasks = generate_tasks(
            self.slot, cfg.beta, cfg.size_range, self._task_rng, cfg.n_devices,
            self._deadlines, cfg.slot_s, self._next_task_id,
        )
        self._next_task_id += len(tasks)
        self.tasks: list[Task | None] = [None] * cfg.n_devices
        for t in tasks:
            self.tasks[t.owner] = t

    # ---- observation ------------------------------------------------------
    def feasible_actions(self, device: int) -> list[int]:
        return sorted(self.routes[device])

    def feasible_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_agents, self.n_servers), dtype=bool)
        for i, r in enumerate(self.routes):
            mask[i, list(r)] = True
        return mask

    def active_agents(self) -> np.ndarray:
        return np.array([t is not None for t in self.tasks], dtype=bool)

    def backlog_bits(self) -> np.ndarray:
        return np.array([s.backlog_bits for s in self.engine.servers])

    def raw_observation(self, device: int) -> AgentObservation:
        task = self.tasks[device]
        counts = np.bincount(self.selections[self.selections >= 0], minlength=self.n_servers)
        return AgentObservation(
            0.0 if task is None else task.size,
            self.selections.copy(),
            counts.astype(float),
            self.backlog_bits(),
        )

    def observations(self) -> np.ndarray:
        """Normalized (I, 1 + I + 2J) observation matrix; rows differ only in column 0."""
        cfg = self.config
        I, J = cfg.n_devices, self.n_servers
        sizes = np.array([0.0 if t is None else t.size for t in self.tasks]) / cfg.max_size
        sel = np.where(self.selections >= 0, (self.selections + 1) / J, 0.0)
        counts = np.bincount(self.selections[self.selections >= 0], minlength=J) / max(I, 1)
        load = np.minimum(self.backlog_bits() / cfg.buffer_cap_bits, 1.0)
        shared = np.concatenate([sel, counts, load])
        obs = np.empty((I, self.obs_dim))
        obs[:, 0] = sizes
        obs[:, 1:] = shared
        return obs

    # ---- transition -------------------------------------------------------
    def step(self, actions) -> StepResult:
        """Route every arriving task to its chosen server and advance one slot.

        ``actions[i]`` is a server index or None; it is ignored for devices
        without a task this slot. A task with no action is dropped.
        """
        cfg = self.config
        if len(actions) != cfg.n_devices:
            raise ValueError(f"expected {cfg.n_devices} actions, got {len(actions)}")
        selections = np.full(cfg.n_devices, -1)
        executed = []
        for i, task in enumerate(self.tasks):
            if task is None:
                continue
            a = actions[i]
            if a is None:
                self.engine.submit(task, None, None)
                continue
            a = int(a)
            if a not in self.routes[i]:
                raise ValueError(f"device {i}: server {a} is not a feasible destination")
            self.engine.submit(task, a, self.routes[i][a])
            selections[i] = a
            executed.append((i, a))
            self.history.append((i, a))
        outcome = self.engine.run_slot(self.slot)
        self.selections = selections
        self.vehicles = step_vehicles(self.vehicles, self.net, cfg.slot_s, self._turn_rng, self.slot * cfg.slot_s)
        self.slot += 1
        done = self.slot >= cfg.n_slots
        self._refresh_topology()
        if done:
            self.tasks = [None] * cfg.n_devices
        else:
            self._arrive()
        return StepResult(outcome.rewards, self.observations(), done, outcome, executed)

    @property
    def ledger(self):
        return self.engine.ledger

    def transmit_share(self, device: int) -> float:
        """Bandwidth this device's task would get if every pending and new task transmits."""
        task = self.tasks[device]
        if task is None:
            return 0.0
        total = sum(t.size for t in self.tasks if t is not None)
        total += sum(tr.task.size for tr in self.engine.transfers)
        return self.config.bandwidth * task.size / total
