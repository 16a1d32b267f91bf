"""Small fully-connected Q-network with hand-written forward/backward passes.

Parameters live in a flat float64 vector (`ParamVector`) so they can be
shuttled unchanged between the meta-optimizer, the consensus averaging step
and the link-payload ledger. The temporal-difference loss follows the
standard double-learning form: the bootstrap target comes from a frozen
snapshot network and, inside the squared error, the online network is read at
the action that was actually taken.

Besides the analytic gradient, the module provides an exact Hessian-vector
product (forward-over-reverse differentiation of the backward pass), which the
meta-optimizer uses for its curvature-corrected mode. Hidden layers use tanh,
so both derivatives exist everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, LayoutError

Layout = tuple[tuple[str, tuple[int, ...]], ...]

#: Default logical payload of a parameter vector (bytes): 5.6 MB. Energy
#: accounting reads this, not the in-memory size.
DEFAULT_MODEL_BYTES = 5_600_000


def mlp_layout(layer_widths: Sequence[int]) -> Layout:
    """Weight/bias layout for a dense net with the given layer widths."""
    if len(layer_widths) < 2:
        raise ConfigError("layer_widths needs at least input and output widths")
    entries = []
    for i, (n_in, n_out) in enumerate(zip(layer_widths, layer_widths[1:]), start=1):
        entries.append((f"w{i}", (int(n_out), int(n_in))))
        entries.append((f"b{i}", (int(n_out),)))
    return tuple(entries)


def layout_size(layout: Layout) -> int:
    return int(sum(np.prod(shape, dtype=np.int64) for _, shape in layout))


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector plus the layout describing its layers.

    The value array is locked read-only on construction; all updates return
    new vectors, so snapshots and cross-device copies are always safe.
    """

    values: np.ndarray
    layout: Layout
    byte_size: int = DEFAULT_MODEL_BYTES

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise LayoutError("parameter values must be a flat vector")
        if values.shape[0] != layout_size(self.layout):
            raise LayoutError(
                f"{values.shape[0]} values do not fit layout of size {layout_size(self.layout)}"
            )
        if self.byte_size <= 0:
            raise ConfigError("byte_size must be > 0")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return replace(self, values=values)

    def __len__(self) -> int:
        return self.values.shape[0]


def unpack(params: ParamVector) -> list[np.ndarray]:
    """Views of the flat vector reshaped per layout entry."""
    sizes = [int(np.prod(shape, dtype=np.int64)) for _, shape in params.layout]
    splits = np.split(params.values, np.cumsum(sizes)[:-1])
    return [part.reshape(shape) for part, (_, shape) in zip(splits, params.layout)]


def pack(arrays: Iterable[np.ndarray], layout: Layout, byte_size: int) -> ParamVector:
    flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    return ParamVector(flat, layout, byte_size)


@dataclass(frozen=True)
class QNetConfig:
    """Architecture and initialization of the Q-network.

    The first width must equal the observation length and the last the action
    count. Hidden layers use tanh (the only supported nonlinearity). Weights
    and biases of each layer are drawn uniformly from
    ``[-init_scale/sqrt(fan_in), init_scale/sqrt(fan_in)]``.
    """

    layer_widths: tuple[int, ...] = (40, 64, 64, 4)
    activation: str = "tanh"
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.layer_widths) < 2:
            raise ConfigError("qnet.layer_widths needs at least two entries")
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError("qnet.layer_widths entries must be >= 1")
        if self.activation != "tanh":
            raise ConfigError("qnet.activation: only 'tanh' is supported")
        if self.init_scale <= 0:
            raise ConfigError("qnet.init_scale must be > 0")


def init_params(cfg: QNetConfig, byte_size: int = DEFAULT_MODEL_BYTES,
                rng: np.random.Generator | None = None) -> ParamVector:
    """Deterministically initialize parameters for the given config."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    arrays = []
    for n_in, n_out in zip(cfg.layer_widths, cfg.layer_widths[1:]):
        bound = cfg.init_scale / np.sqrt(n_in)
        arrays.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        arrays.append(rng.uniform(-bound, bound, size=n_out))
    return pack(arrays, mlp_layout(cfg.layer_widths), byte_size)


def zeros_like(params: ParamVector) -> ParamVector:
    return params.with_values(np.zeros(len(params)))


def _layers(params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    parts = unpack(params)
    return [(parts[i], parts[i + 1]) for i in range(0, len(parts), 2)]


def _check_layouts(*params: ParamVector) -> None:
    first = params[0].layout
    for p in params[1:]:
        if p.layout != first:
            raise LayoutError("parameter layouts differ")


def _forward(layers: list[tuple[np.ndarray, np.ndarray]], x: np.ndarray) -> list[np.ndarray]:
    """Activations [A0..AL] for a batch laid out one column per sample."""
    acts = [x]
    a = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = w @ a + b[:, None]
        a = z if i == last else np.tanh(z)
        acts.append(a)
    return acts


def q_forward(params: ParamVector, obs: np.ndarray) -> np.ndarray:
    """Per-action values for a single observation."""
    layers = _layers(params)
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (layers[0][0].shape[1],):
        raise LayoutError(
            f"observation of length {obs.shape} does not match input width {layers[0][0].shape[1]}"
        )
    return _forward(layers, obs[:, None])[-1][:, 0]


def greedy_action(q_values: np.ndarray) -> int:
    """Index of the maximal action value (lowest index wins ties)."""
    return int(np.argmax(q_values))


@dataclass(frozen=True)
class TargetNetwork:
    """Frozen parameter snapshot used for bootstrap targets."""

    params: ParamVector
    sync_period: int = 10


def sync_target(online: ParamVector, sync_period: int = 10) -> TargetNetwork:
    """Snapshot the online parameters; later online updates leave it unchanged."""
    return TargetNetwork(online.with_values(online.values.copy()), sync_period)


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    transitions = batch.transitions if hasattr(batch, "transitions") else tuple(batch)
    if not transitions:
        raise ConfigError("empty transition batch")
    states = np.stack([t.state for t in transitions], axis=1)
    next_states = np.stack([t.next_state for t in transitions], axis=1)
    actions = np.array([t.action for t in transitions], dtype=np.intp)
    rewards = np.array([t.reward for t in transitions], dtype=np.float64)
    nonterminal = np.array([0.0 if t.terminal else 1.0 for t in transitions])
    return states, actions, rewards, next_states, nonterminal


def _td_targets(target: TargetNetwork, rewards, next_states, nonterminal, nu: float) -> np.ndarray:
    next_q = _forward(_layers(target.params), next_states)[-1]
    return rewards + nu * nonterminal * next_q.max(axis=0)


def dql_loss(params: ParamVector, target: TargetNetwork, transition, nu: float) -> float:
    """Squared temporal-difference error of one transition.

    ``(r + nu * max_y q~(next, y) - q(state, taken action))^2``; the bootstrap
    term is dropped for terminal transitions. The online network is evaluated
    at the taken action (the standard reading of the squared Bellman error).
    """
    if not 0.0 <= nu <= 1.0:
        raise ConfigError("nu must lie in [0, 1]")
    _check_layouts(params, target.params)
    states, actions, rewards, next_states, nonterminal = _batch_arrays([transition])
    q = _forward(_layers(params), states)[-1]
    y = _td_targets(target, rewards, next_states, nonterminal, nu)
    err = q[actions[0], 0] - y[0]
    return float(err * err)


def dql_batch_loss(params: ParamVector, target: TargetNetwork, batch, nu: float) -> float:
    """Summed squared TD error over a batch."""
    _check_layouts(params, target.params)
    states, actions, rewards, next_states, nonterminal = _batch_arrays(batch)
    q = _forward(_layers(params), states)[-1]
    y = _td_targets(target, rewards, next_states, nonterminal, nu)
    err = q[actions, np.arange(len(actions))] - y
    return float(err @ err)


def _backward(layers, acts, out_grad) -> list[np.ndarray]:
    """Gradients [dW1, db1, ..., dWL, dbL] given d(loss)/d(output)."""
    grads: list[np.ndarray] = []
    g = out_grad
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads.append(g.sum(axis=1))          # db_i
        grads.append(g @ acts[i].T)          # dW_i
        if i > 0:
            g = (w.T @ g) * (1.0 - acts[i] ** 2)
    grads.reverse()
    return grads


def dql_grad(params: ParamVector, target: TargetNetwork, batch, nu: float) -> ParamVector:
    """Analytic gradient of the summed TD loss w.r.t. the online parameters.

    Target parameters are treated as constants.
    """
    if not 0.0 <= nu <= 1.0:
        raise ConfigError("nu must lie in [0, 1]")
    _check_layouts(params, target.params)
    states, actions, rewards, next_states, nonterminal = _batch_arrays(batch)
    layers = _layers(params)
    acts = _forward(layers, states)
    y = _td_targets(target, rewards, next_states, nonterminal, nu)
    cols = np.arange(len(actions))
    out_grad = np.zeros_like(acts[-1])
    out_grad[actions, cols] = 2.0 * (acts[-1][actions, cols] - y)
    return pack(_backward(layers, acts, out_grad), params.layout, params.byte_size)


def dql_hvp(params: ParamVector, target: TargetNetwork, batch, nu: float,
            direction: ParamVector) -> ParamVector:
    """Exact Hessian-vector product of the summed TD loss.

    Forward-over-reverse: the tangent of every forward activation and of every
    backward sensitivity is propagated alongside the primal pass, never
    materializing the Hessian.
    """
    _check_layouts(params, target.params, direction)
    states, actions, rewards, next_states, nonterminal = _batch_arrays(batch)
    layers = _layers(params)
    tangents = _layers(direction)
    last = len(layers) - 1

    # Forward pass with tangents.
    acts = [states]
    dacts = [np.zeros_like(states)]
    for i, ((w, b), (v, c)) in enumerate(zip(layers, tangents)):
        z = w @ acts[-1] + b[:, None]
        dz = v @ acts[-1] + w @ dacts[-1] + c[:, None]
        if i == last:
            acts.append(z)
            dacts.append(dz)
        else:
            a = np.tanh(z)
            acts.append(a)
            dacts.append((1.0 - a ** 2) * dz)

    y = _td_targets(target, rewards, next_states, nonterminal, nu)
    cols = np.arange(len(actions))
    g = np.zeros_like(acts[-1])
    g[actions, cols] = 2.0 * (acts[-1][actions, cols] - y)
    dg = np.zeros_like(acts[-1])
    dg[actions, cols] = 2.0 * dacts[-1][actions, cols]

    # Backward pass with tangents.
    hv: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        v, _ = tangents[i]
        hv.append(dg.sum(axis=1))                       # d/deps of db_i
        hv.append(dg @ acts[i].T + g @ dacts[i].T)      # d/deps of dW_i
        if i > 0:
            back = w.T @ g
            dback = v.T @ g + w.T @ dg
            sech2 = 1.0 - acts[i] ** 2
            g = back * sech2
            dg = dback * sech2 + back * (-2.0 * acts[i] * dacts[i])
    hv.reverse()
    return pack(hv, params.layout, params.byte_size)


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    """One plain gradient-descent step: ``params - lr * grad``."""
    _check_layouts(params, grad)
    if lr < 0:
        raise ConfigError("lr must be >= 0")
    return params.with_values(params.values - lr * grad.values)


@dataclass(frozen=True)
class DqlObjective:
    """TD loss bound to a frozen target network and discount factor.

    Exposes the (loss, gradient, Hessian-vector product) triple the
    meta-optimizer needs from any per-task objective.
    """

    target: TargetNetwork
    nu: float = 0.99

    def loss(self, params: ParamVector, batch) -> float:
        return dql_batch_loss(params, self.target, batch, self.nu)

    def grad(self, params: ParamVector, batch) -> ParamVector:
        return dql_grad(params, self.target, batch, self.nu)

    def hvp(self, params: ParamVector, batch, direction: ParamVector) -> ParamVector:
        return dql_hvp(params, self.target, batch, self.nu, direction)


def save_params(params: ParamVector, path: str | Path, metadata: dict | None = None) -> None:
    """Write a little-endian float64 blob plus a JSON sidecar with the layout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params.values.astype("<f8").tofile(path)
    sidecar = {
        "dtype": "<f8",
        "layout": [[name, list(shape)] for name, shape in params.layout],
        "byte_size": params.byte_size,
    }
    if metadata:
        sidecar["metadata"] = metadata
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8"
    )


def load_params(path: str | Path) -> ParamVector:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    layout = tuple((name, tuple(shape)) for name, shape in sidecar["layout"])
    values = np.fromfile(path, dtype="<f8").astype(np.float64)
    return ParamVector(values, layout, int(sidecar["byte_size"]))
