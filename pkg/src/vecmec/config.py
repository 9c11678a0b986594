"""Scenario configuration, presets and JSON (de)serialization."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from .radio import ChannelParams

POLICIES = ("maddpg", "single_hop", "multihop_greedy")


class ConfigError(ValueError):
    """A configuration field is invalid; ``field`` names it."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ScenarioConfig:
    # topology
    n_devices: int = 20
    n_vehicles: int = 4
    n_servers: int = 4
    map_size: float = 600.0
    road_fractions: tuple = (0.25, 0.75)
    server_sites: list | None = None
    light_cycle: tuple | None = None
    dev_range_m: float = 200.0
    v2v_range_m: float = 200.0
    es_cov_m: float = 200.0
    # time
    n_slots: int = 100
    slot_s: float = 1.0
    # workload
    beta: float = 0.5
    size_range: tuple = (2e5, 5e5)  # bit
    deadline: float | list = 10.0  # s, scalar or per device
    kappa: float = 1200.0  # cycles/bit
    server_rates: list = field(default_factory=lambda: [4e8, 8e8, 1.2e9, 1.6e9])  # cycles/s
    # radio
    antenna_height: float = 1.5
    carrier_mhz: float = 2800.0
    tx_power: float = 1.0
    noise_power: float = 5e-13
    bandwidth: float = 5e6
    buffer_cap_bits: float = 1e7  # observation scale for server backlog
    # learning
    gamma: float = 0.99
    buffer_size: int = 100_000
    batch_size: int = 64
    lr_actor: float = 1e-3
    lr_critic: float = 2e-3
    tau: float = 0.005
    noise_kind: str = "gaussian"  # or "ou"
    noise_mu: float = 0.15
    noise_sigma2: float = math.exp(-2.0)
    noise_decay: float = 0.9995
    actor_hidden: int = 64
    critic_hidden: int = 64
    episodes: int = 100
    train_every: int = 2  # slots between updates
    warmup: int = 64
    reward_scale: float = 5e5
    eval_episodes: int = 20
    # run
    policy: str = "maddpg"
    seed: int = 0
    preset: str = "desk"

    @property
    def channel(self) -> ChannelParams:
        return ChannelParams(self.antenna_height, self.carrier_mhz, self.tx_power, self.noise_power, self.bandwidth)

    @property
    def rates(self) -> list:
        """Compute rate of each deployed server; the list cycles if J exceeds it."""
        return [self.server_rates[j % len(self.server_rates)] for j in range(self.n_servers)]

    @property
    def ranges(self) -> dict:
        return {"dev_range_m": self.dev_range_m, "v2v_range_m": self.v2v_range_m, "es_cov_m": self.es_cov_m}

    @property
    def max_size(self) -> float:
        return float(self.size_range[1])

    def validate(self) -> "ScenarioConfig":
        for name in ("n_devices", "n_vehicles", "n_servers", "episodes", "eval_episodes"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(name, "must be >= 0")
        for name in ("n_slots", "batch_size", "buffer_size", "train_every", "actor_hidden", "critic_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        for name in ("slot_s", "kappa", "map_size", "buffer_cap_bits", "reward_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta", "must lie in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma", "must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau", "must lie in (0, 1]")
        lo, hi = self.size_range
        if not 0 < lo <= hi:
            raise ConfigError("size_range", "need 0 < low <= high")
        if not self.server_rates or any(not c > 0 for c in self.server_rates):
            raise ConfigError("server_rates", "need positive rates")
        d = self.deadline
        if isinstance(d, (list, tuple)):
            if len(d) != self.n_devices or any(not x > 0 for x in d):
                raise ConfigError("deadline", "per-device list must have n_devices positive entries")
        elif not d > 0:
            raise ConfigError("deadline", "must be > 0")
        if self.noise_sigma2 <= 0:
            raise ConfigError("noise_sigma2", "must be > 0")
        if self.noise_kind not in ("gaussian", "ou"):
            raise ConfigError("noise_kind", "must be 'gaussian' or 'ou'")
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"must be one of {POLICIES}")
        try:
            self.channel
        except ValueError as exc:
            raise ConfigError("channel", str(exc)) from None
        return self

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        preset = data.pop("preset", "desk")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        for key in ("size_range", "road_fractions", "light_cycle"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return dataclasses.replace(preset_config(preset), **data).validate()


def preset_config(name: str = "desk") -> ScenarioConfig:
    """Named presets.

    ``paper`` takes the published table literally (Kbit task sizes, 10^7
    cycles/s servers, 256-wide nets, 2000 episodes); its compute latencies far
    exceed any deadline. ``desk`` reads sizes as bits with faster servers and
    smaller nets so a run fits on one CPU core.
    """
    if name == "desk":
        return ScenarioConfig(preset="desk")
    if name == "paper":
        return ScenarioConfig(
            preset="paper",
            size_range=(2e8, 5e8),
            server_rates=[1e7, 2e7, 3e7, 4e7],
            map_size=1000.0,
            buffer_cap_bits=1e10,
            reward_scale=5e8,
            actor_hidden=256,
            critic_hidden=256,
            episodes=2000,
            train_every=1,
        )
    raise ConfigError("preset", f"unknown preset {name!r}")


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_dict(json.load(fh))
