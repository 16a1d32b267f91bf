"""Gradient-based meta-optimization of a shared initialization.

Each round splits every contributing device's fresh batch into an adaptation
part and a validation part, takes one summed-gradient step per training task
to get a task-adapted vector, and then steps the shared parameters against the
sum of per-task validation gradients. In first-order mode the validation
gradient is used as-is; in full mode it is pushed back through the adaptation
step, whose Jacobian is ``I - mu * H`` (H the Hessian of the summed adaptation
loss at the shared parameters), applied as a single Hessian-vector product.

The per-task objective is injected as a (loss, grad, hvp) triple so the same
round logic runs against the TD objective of the simulator or any synthetic
loss used in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .energy import CommEvent, GradientEvent
from .errors import ConfigError, LayoutError
from .qlearn import ParamVector, sgd_step


class TaskObjective(Protocol):
    """What the meta-optimizer needs from a per-task loss."""

    def loss(self, params: ParamVector, batch) -> float: ...

    def grad(self, params: ParamVector, batch) -> ParamVector: ...

    def hvp(self, params: ParamVector, batch, direction: ParamVector) -> ParamVector: ...


@dataclass(frozen=True)
class MamlConfig:
    inner_lr: float = 0.01
    meta_lr: float = 0.001
    rounds: int = 210
    training_tasks: tuple[int, ...] = (1, 2, 6)
    split_ratio: float = 0.5
    first_order: bool = True
    batches_adapt: int = 10
    batches_meta: int = 10

    def __post_init__(self) -> None:
        if self.inner_lr < 0 or self.meta_lr < 0:
            raise ConfigError("maml: learning rates must be >= 0")
        if self.rounds < 0:
            raise ConfigError("maml.rounds must be >= 0")
        if not self.training_tasks:
            raise ConfigError("maml.training_tasks must not be empty")
        if len(set(self.training_tasks)) != len(self.training_tasks):
            raise ConfigError("maml.training_tasks must be distinct")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("maml.split_ratio must lie in (0, 1)")
        if self.batches_adapt < 1 or self.batches_meta < 1:
            raise ConfigError("maml batch counts must be >= 1")


@dataclass(frozen=True)
class MetaState:
    """Shared parameters, the round counter, and the last per-task adaptations."""

    meta_params: ParamVector
    round: int = 0
    adaptations: Mapping[int, ParamVector] = field(default_factory=dict)


def split_data(batch, ratio: float, seed: int):
    """Disjoint partition of a batch's transitions; the first part gets
    ``round(ratio * n)`` of them. The same seed always yields the same split.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError("split ratio must lie in (0, 1)")
    n = len(batch.transitions)
    if n == 0:
        raise ConfigError("cannot split an empty batch")
    n_a = int(round(ratio * n))
    if n_a == 0 or n_a == n:
        raise ConfigError(f"split of {n} transitions at ratio {ratio} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    part = lambda idx, bytes_: replace(  # noqa: E731
        batch,
        transitions=tuple(batch.transitions[i] for i in idx),
        byte_size=bytes_,
    )
    bytes_a = max(1, round(batch.byte_size * n_a / n))
    return (part(np.sort(order[:n_a]), bytes_a),
            part(np.sort(order[n_a:]), max(1, batch.byte_size - bytes_a)))


def inner_adapt(meta_params: ParamVector, task_data_a: Sequence, mu: float,
                objective: TaskObjective) -> ParamVector:
    """One summed-gradient step over all contributing devices' adaptation data."""
    if not task_data_a:
        raise ConfigError("inner_adapt: no adaptation data")
    total = np.zeros(len(meta_params))
    for batch in task_data_a:
        total = total + objective.grad(meta_params, batch).values
    return sgd_step(meta_params, meta_params.with_values(total), mu)


def meta_gradient(meta_params: ParamVector, phi: ParamVector, task_data_a: Sequence,
                  task_data_b: Sequence, mu: float, objective: TaskObjective,
                  first_order: bool) -> ParamVector:
    """Gradient of the validation loss at ``phi`` w.r.t. the shared parameters.

    ``v = sum_k grad(phi | data_b[k])``; first-order mode returns ``v``, full
    mode returns ``(I - mu * H) v`` with H the Hessian of the summed
    adaptation loss at ``meta_params``, formed as one Hessian-vector product.
    """
    if phi.layout != meta_params.layout:
        raise LayoutError("adapted parameters do not match the shared layout")
    if not task_data_b:
        raise ConfigError("meta_gradient: no validation data")
    v = np.zeros(len(meta_params))
    for batch in task_data_b:
        v = v + objective.grad(phi, batch).values
    if first_order or mu == 0.0:
        return meta_params.with_values(v)
    direction = meta_params.with_values(v)
    hv = np.zeros(len(meta_params))
    for batch in task_data_a:
        hv = hv + objective.hvp(meta_params, batch, direction).values
    return meta_params.with_values(v - mu * hv)


@dataclass(frozen=True)
class MamlRoundLog:
    """Ledger slice of one round: what was computed and what was uploaded."""

    round_index: int
    grad_events: tuple[GradientEvent, ...]
    comm_events: tuple[CommEvent, ...]

    def gradient_tally(self, curvature_factor: float = 1.0) -> float:
        """Total billed gradient batches, meta batches weighted by the premium."""
        return float(sum(e.batches + curvature_factor * e.batches_curvature
                         for e in self.grad_events))


def maml_round(state: MetaState, fresh_data: Mapping[int, Mapping[int, object]],
               cfg: MamlConfig,
               objective_for_task: Callable[[int, ParamVector], TaskObjective],
               split_seed: int) -> tuple[MetaState, MamlRoundLog]:
    """One meta-training round over fresh per-task, per-device batches.

    ``fresh_data`` maps task id -> {device id: batch} and must cover exactly
    the configured training tasks. Returns the advanced state plus the round's
    ledger events (one uplink payload per contributing batch, one gradient
    record per task/device with the configured batch counts).
    """
    if set(fresh_data) != set(cfg.training_tasks):
        raise ConfigError(
            f"fresh data covers tasks {sorted(fresh_data)}, "
            f"expected {sorted(cfg.training_tasks)}"
        )
    grad_events = []
    comm_events = []
    adaptations: dict[int, ParamVector] = {}
    meta_step = np.zeros(len(state.meta_params))
    for task_id in cfg.training_tasks:
        device_batches = fresh_data[task_id]
        if not device_batches:
            raise ConfigError(f"task {task_id}: no contributing device data")
        objective = objective_for_task(task_id, state.meta_params)
        parts_a, parts_b = [], []
        for device_id in sorted(device_batches):
            batch = device_batches[device_id]
            part_a, part_b = split_data(batch, cfg.split_ratio,
                                        split_seed + 1000 * task_id + device_id)
            parts_a.append(part_a)
            parts_b.append(part_b)
            comm_events.append(CommEvent("meta", state.round, "UL", device_id, 0,
                                         batch.byte_size, task_id))
            grad_events.append(GradientEvent("meta", state.round, task_id, 0,
                                             cfg.batches_adapt, cfg.batches_meta))
        phi = inner_adapt(state.meta_params, parts_a, cfg.inner_lr, objective)
        adaptations[task_id] = phi
        meta_step = meta_step + meta_gradient(
            state.meta_params, phi, parts_a, parts_b, cfg.inner_lr, objective,
            cfg.first_order,
        ).values
    new_params = sgd_step(state.meta_params, state.meta_params.with_values(meta_step),
                          cfg.meta_lr)
    new_state = MetaState(new_params, state.round + 1, adaptations)
    return new_state, MamlRoundLog(state.round, tuple(grad_events), tuple(comm_events))
