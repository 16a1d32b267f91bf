"""Decentralized task-specific adaptation: local SGD plus damped consensus.

Devices in a cluster each train on their own replay data, then synchronously
mix their parameter vectors with size-weighted neighborhood averages. The
literal mixing update (weights summing to 1 over the neighborhood) swaps the
two models of a symmetric pair forever; a damping factor keeps its form while
guaranteeing convergence to agreement, and damping 1 recovers the literal
rule. Rounds repeat until the cluster's greedy running reward clears a
threshold or the round cap is hit.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import env as env_mod
from .energy import FALLBACK, SIDELINK, CommEvent, GradientEvent
from .errors import ConfigError, IsolatedDeviceError, LayoutError
from .qlearn import (
    ParamVector,
    TargetNetwork,
    dql_grad,
    sgd_step,
    sync_target,
)


@dataclass(frozen=True)
class Topology:
    """Clusters, neighborhoods and link kinds of the device network.

    ``clusters`` maps task id -> device ids; ``neighbors`` maps device ->
    neighbor devices within its own cluster; ``link_kinds`` marks directed
    links as sidelink (default) or uplink+downlink fallback.
    """

    clusters: dict[int, tuple[int, ...]]
    neighbors: dict[int, tuple[int, ...]]
    link_kinds: dict[tuple[int, int], str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: dict[int, int] = {}
        for task_id, devices in self.clusters.items():
            for dev in devices:
                if dev in seen:
                    raise ConfigError(
                        f"device {dev} appears in clusters {seen[dev]} and {task_id}"
                    )
                seen[dev] = task_id
        for dev, hood in self.neighbors.items():
            if dev not in seen:
                raise ConfigError(f"neighbors given for unknown device {dev}")
            cluster = set(self.clusters[seen[dev]])
            if dev in hood:
                raise ConfigError(f"device {dev} lists itself as a neighbor")
            if not set(hood) <= cluster:
                raise ConfigError(f"device {dev} has neighbors outside its cluster")
        for devices in self.clusters.values():
            self._check_connected(devices)
        for (src, dst), kind in self.link_kinds.items():
            if kind not in (SIDELINK, FALLBACK):
                raise ConfigError(f"link ({src}, {dst}): unknown kind {kind!r}")

    def _check_connected(self, devices: Sequence[int]) -> None:
        if len(devices) <= 1:
            return
        reached = {devices[0]}
        frontier = [devices[0]]
        while frontier:
            nxt = []
            for dev in frontier:
                for h in self.neighbors.get(dev, ()):
                    if h not in reached:
                        reached.add(h)
                        nxt.append(h)
            frontier = nxt
        if reached != set(devices):
            raise ConfigError(f"cluster {tuple(devices)} is not connected")

    @property
    def devices(self) -> tuple[int, ...]:
        return tuple(d for devs in self.clusters.values() for d in devs)

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    def cluster_neighbors(self, task_id: int) -> dict[int, tuple[int, ...]]:
        return {dev: self.neighbors.get(dev, ()) for dev in self.clusters[task_id]}

    def link_kind(self, src: int, dst: int) -> str:
        return self.link_kinds.get((src, dst), SIDELINK)


def builtin_topology(name: str = "pairs", n_tasks: int = 6) -> Topology:
    """Built-in shapes: ``pairs`` (2-device cliques), ``line3``, ``ring4``."""
    sizes = {"pairs": 2, "line3": 3, "ring4": 4}
    if name not in sizes:
        raise ConfigError(f"unknown topology {name!r}; builtins: {sorted(sizes)}")
    size = sizes[name]
    clusters: dict[int, tuple[int, ...]] = {}
    neighbors: dict[int, tuple[int, ...]] = {}
    next_dev = 1
    for task_id in range(1, n_tasks + 1):
        devices = tuple(range(next_dev, next_dev + size))
        next_dev += size
        clusters[task_id] = devices
        for i, dev in enumerate(devices):
            if name == "pairs":
                hood = tuple(d for d in devices if d != dev)
            elif name == "line3":
                hood = tuple(devices[j] for j in (i - 1, i + 1) if 0 <= j < size)
            else:  # ring4
                hood = (devices[(i - 1) % size], devices[(i + 1) % size])
            neighbors[dev] = hood
    return Topology(clusters, neighbors)


BUILTIN_TOPOLOGIES = ("pairs", "line3", "ring4")


def topology_from_dict(doc: Mapping) -> Topology:
    try:
        clusters = {int(t): tuple(int(d) for d in devs) for t, devs in doc["clusters"].items()}
        neighbors = {int(d): tuple(int(h) for h in hood) for d, hood in doc["neighbors"].items()}
    except KeyError as exc:
        raise ConfigError(f"topology document: missing key {exc}") from exc
    link_kinds = {}
    for entry in doc.get("links", []):
        src, dst, kind = entry
        link_kinds[(int(src), int(dst))] = str(kind)
    return Topology(clusters, neighbors, link_kinds)


def topology_to_dict(topology: Topology) -> dict:
    return {
        "clusters": {str(t): list(devs) for t, devs in sorted(topology.clusters.items())},
        "neighbors": {str(d): list(h) for d, h in sorted(topology.neighbors.items())},
        "links": [[src, dst, kind] for (src, dst), kind in sorted(topology.link_kinds.items())],
    }


def load_topology(path: str | Path) -> Topology:
    with open(path, encoding="utf-8") as fh:
        return topology_from_dict(json.load(fh))


@dataclass
class DeviceState:
    """One device's model, target snapshot and replay memory."""

    device_id: int
    params: ParamVector
    target: TargetNetwork
    replay: deque = field(default_factory=lambda: deque(maxlen=40))
    batches_done: int = 0

    @property
    def dataset_size(self) -> int:
        return sum(len(b.transitions) for b in self.replay)

    @property
    def transitions(self) -> list:
        return [t for b in self.replay for t in b.transitions]


@dataclass(frozen=True)
class FlConfig:
    """Knobs of one adaptation phase."""

    mixing_damping: float = 0.5
    batches_per_round: int = 20
    batch_size: int = 16
    local_lr: float = 0.01
    nu: float = 0.99
    epsilon: float = 0.1
    episode_steps: int = 20
    replay_capacity: int = 40
    target_sync_period: int = 10
    threshold_fraction: float = 0.8
    max_rounds: int = 300

    def __post_init__(self) -> None:
        if not 0.0 < self.mixing_damping <= 1.0:
            raise ConfigError("fl.mixing_damping must lie in (0, 1]")
        if self.batches_per_round < 1 or self.batch_size < 1:
            raise ConfigError("fl batch counts must be >= 1")
        if self.local_lr < 0:
            raise ConfigError("fl.local_lr must be >= 0")
        if not 0.0 <= self.nu <= 1.0:
            raise ConfigError("fl.nu must lie in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("fl.epsilon must lie in [0, 1]")
        if self.episode_steps < 1 or self.replay_capacity < 1:
            raise ConfigError("fl episode settings must be >= 1")
        if self.target_sync_period < 1:
            raise ConfigError("fl.target_sync_period must be >= 1")
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise ConfigError("fl.threshold_fraction must lie in (0, 1]")
        if self.max_rounds < 1:
            raise ConfigError("fl.max_rounds must be >= 1")


def init_device(device_id: int, params: ParamVector, cfg: FlConfig) -> DeviceState:
    return DeviceState(device_id, params, sync_target(params, cfg.target_sync_period),
                       deque(maxlen=cfg.replay_capacity))


def mixing_weights(device_id: int, neighborhood_sizes: Mapping[int, int]) -> dict[int, float]:
    """Size-proportional weights over a device's neighborhood (they sum to 1)."""
    if not neighborhood_sizes:
        raise IsolatedDeviceError(f"device {device_id} has no neighbors")
    if any(size <= 0 for size in neighborhood_sizes.values()):
        raise ConfigError("neighborhood dataset sizes must be > 0")
    total = sum(neighborhood_sizes.values())
    return {h: size / total for h, size in neighborhood_sizes.items()}


def consensus_step(states: Mapping[int, DeviceState],
                   neighbors: Mapping[int, Sequence[int]], damping: float) -> None:
    """Synchronous damped mixing toward each neighborhood's weighted average.

    All reads come from pre-step values; damping 1 applies the undamped rule.
    """
    if not 0.0 < damping <= 1.0:
        raise ConfigError("damping must lie in (0, 1]")
    layout = next(iter(states.values())).params.layout
    for state in states.values():
        if state.params.layout != layout:
            raise LayoutError("cluster devices hold different parameter layouts")
    before = {dev: state.params.values for dev, state in states.items()}
    sizes = {dev: state.dataset_size for dev, state in states.items()}
    updates = {}
    for dev, state in states.items():
        hood = neighbors.get(dev, ())
        weights = mixing_weights(dev, {h: sizes[h] for h in hood})
        delta = np.zeros_like(before[dev])
        for h, weight in weights.items():
            delta += weight * (before[h] - before[dev])
        updates[dev] = before[dev] + damping * delta
    for dev, state in states.items():
        state.params = state.params.with_values(updates[dev])


def _local_training(state: DeviceState, cfg: FlConfig, rng: np.random.Generator) -> None:
    """The device's per-round SGD batches on its replay memory."""
    pool = state.transitions
    for _ in range(cfg.batches_per_round):
        if state.batches_done % cfg.target_sync_period == 0:
            state.target = sync_target(state.params, cfg.target_sync_period)
        idx = rng.integers(len(pool), size=cfg.batch_size)
        batch = [pool[i] for i in idx]
        grad = dql_grad(state.params, state.target, batch, cfg.nu)
        state.params = sgd_step(state.params, grad, cfg.local_lr)
        state.batches_done += 1


@dataclass(frozen=True)
class FlRoundLog:
    """Per-round metrics and ledger events of one cluster."""

    round_index: int
    task_id: int
    device_rewards: dict[int, float]
    mean_reward: float
    grad_events: tuple[GradientEvent, ...]
    comm_events: tuple[CommEvent, ...]


def evaluate_cluster(states: Mapping[int, DeviceState], task, grid, cfg: FlConfig,
                     rngs: Mapping[int, np.random.Generator]) -> dict[int, float]:
    """Greedy (epsilon=0) one-episode running reward per device."""
    rewards = {}
    for dev in sorted(states):
        rollout = env_mod.collect_episode(grid, task, states[dev].params, 0.0,
                                          cfg.episode_steps, rngs[dev], device_id=dev)
        rewards[dev] = env_mod.episode_running_reward(rollout, cfg.nu)
    return rewards


def fl_round(states: Mapping[int, DeviceState], task, grid, cfg: FlConfig,
             topology: Topology, rngs: Mapping[int, np.random.Generator],
             round_index: int, data_bytes: int | None = None) -> FlRoundLog:
    """One adaptation round: collect, train, mix, evaluate.

    Every device collects one fresh epsilon-greedy episode into its replay
    memory, runs the configured number of SGD batches, then the cluster takes
    one synchronous consensus step. Ledger events record the per-device batch
    count and one model payload per directed neighbor link.
    """
    neighbors = topology.cluster_neighbors(task.task_id)
    grad_events = []
    comm_events = []
    for dev in sorted(states):
        state = states[dev]
        episode = env_mod.collect_episode(
            grid, task, state.params, cfg.epsilon, cfg.episode_steps, rngs[dev],
            device_id=dev, byte_size=data_bytes or env_mod.DEFAULT_EPISODE_BYTES)
        state.replay.append(episode)
        _local_training(state, cfg, rngs[dev])
        grad_events.append(GradientEvent("adapt", round_index, task.task_id, dev,
                                         cfg.batches_per_round))
    consensus_step(states, neighbors, cfg.mixing_damping)
    for dev in sorted(states):
        for h in neighbors[dev]:
            comm_events.append(CommEvent("adapt", round_index, topology.link_kind(dev, h),
                                         dev, h, states[dev].params.byte_size, task.task_id))
    rewards = evaluate_cluster(states, task, grid, cfg, rngs)
    return FlRoundLog(round_index, task.task_id, rewards,
                      float(np.mean(list(rewards.values()))), tuple(grad_events),
                      tuple(comm_events))


@dataclass(frozen=True)
class AdaptResult:
    """Outcome of adapting one cluster to one task."""

    rounds: int
    converged: bool
    reward_history: tuple[float, ...]
    round_logs: tuple[FlRoundLog, ...]


def adapt_until(states: Mapping[int, DeviceState], task, grid, cfg: FlConfig,
                topology: Topology, reward_threshold: float, max_rounds: int,
                rngs: Mapping[int, np.random.Generator],
                data_bytes: int | None = None) -> AdaptResult:
    """Run adaptation rounds until the cluster-average greedy running reward
    reaches the threshold; hitting the cap returns a non-converged result."""
    if max_rounds < 1:
        raise ConfigError("max_rounds must be >= 1")
    if not np.isfinite(reward_threshold):
        raise ConfigError("reward_threshold must be finite")
    initial = evaluate_cluster(states, task, grid, cfg, rngs)
    history = [float(np.mean(list(initial.values())))]
    if history[0] >= reward_threshold:
        return AdaptResult(0, True, tuple(history), ())
    logs = []
    for round_index in range(1, max_rounds + 1):
        log = fl_round(states, task, grid, cfg, topology, rngs, round_index, data_bytes)
        logs.append(log)
        history.append(log.mean_reward)
        if log.mean_reward >= reward_threshold:
            return AdaptResult(round_index, True, tuple(history), tuple(logs))
    return AdaptResult(max_rounds, False, tuple(history), tuple(logs))
