"""Heuristic destination-selection baselines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ..offload import RoutePath, transfer_work
from ..radio import DEFAULT_CHANNEL, ChannelParams


def estimate_latency(size, route: RoutePath, share_hz, backlog_bits, rate, kappa, params: ChannelParams = DEFAULT_CHANNEL):
    """Transmission + queueing + computing estimate for one candidate server.

    Queueing comes from the observable backlog (bits) at the server.
    """
    trans = transfer_work(size, route, params) / share_hz
    return trans + kappa * backlog_bits / rate + kappa * size / rate


def one_hop_routes(snap, device: int) -> dict[int, RoutePath]:
    """Servers with a direct device-server edge."""
    src = snap.device_node(device)
    out = {}
    for j in range(snap.n_servers):
        d = snap.dist[src, snap.server_node(j)]
        if np.isfinite(d):
            out[j] = RoutePath([src, snap.server_node(j)], [d / 1000.0], float(d))
    return out


def policy_single_hop(size, deadline, snap, device, backlog_bits, rates, kappa, share_hz, params=DEFAULT_CHANNEL):
    """Fastest directly covering server, or None when nothing in range meets the deadline."""
    best, best_est = None, np.inf
    for j, route in sorted(one_hop_routes(snap, device).items()):
        est = estimate_latency(size, route, share_hz, backlog_bits[j], rates[j], kappa, params)
        if est < best_est:
            best, best_est = j, est
    if best is None or best_est > deadline:
        return None
    return best


def policy_multihop_greedy(size, deadline, snap, device, routes, backlog_bits, rates, kappa, share_hz, params=DEFAULT_CHANNEL):
    """Local server if its estimate meets the deadline, else the nearest server via relays.

    The fallback ignores load and skips the local servers that just failed the
    check, unless nothing else is reachable.
    """
    if not routes:
        return None
    local = one_hop_routes(snap, device)
    best, best_est = None, np.inf
    for j, route in sorted(local.items()):
        est = estimate_latency(size, route, share_hz, backlog_bits[j], rates[j], kappa, params)
        if est < best_est:
            best, best_est = j, est
    if best is not None and best_est <= deadline:
        return best
    remote = {j: r for j, r in routes.items() if j not in local} or routes
    return min(remote, key=lambda j: (remote[j].distance_m, j))


class _Baseline(BaseEstimator):
    """Stateless policies; ``fit`` only records the scenario dimensions."""

    def fit(self, env, y=None):
        self.n_agents_ = env.n_agents
        self.n_servers_ = env.n_servers
        return self

    def act(self, env, explore=False):
        cfg = env.config
        backlog = env.backlog_bits()
        out = []
        for i, task in enumerate(env.tasks):
            if task is None:
                out.append(None)
                continue
            out.append(self._choose(env, i, task, backlog, cfg))
        return out


class SingleHopPolicy(_Baseline):
    def _choose(self, env, i, task, backlog, cfg):
        return policy_single_hop(
            task.size, task.deadline, env.snapshot, i, backlog, cfg.rates, cfg.kappa, env.transmit_share(i), cfg.channel
        )


class MultihopGreedyPolicy(_Baseline):
    def _choose(self, env, i, task, backlog, cfg):
        return policy_multihop_greedy(
            task.size, task.deadline, env.snapshot, i, env.routes[i], backlog, cfg.rates, cfg.kappa,
            env.transmit_share(i), cfg.channel,
        )
