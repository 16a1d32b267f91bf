"""Experiment orchestration.

A pipeline run executes the two-phase process end to end: meta-training at
the data center (skipped when the round budget is zero), broadcast of the
shared initialization to every device, then independent adaptation of each
cluster to its task until the reward threshold or the round cap. Every
gradient batch and every payload is logged as a ledger event; closed-form
energy reports are stored alongside and must match a replay of the ledger
bit for bit.

Monte-Carlo ensembles and the meta-budget sweep derive per-run seeds from the
master seed, so (config, master_seed) fully determines all outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import consensus as fl_mod
from . import env as env_mod
from . import maml as maml_mod
from .energy import (
    BUILTIN_PROFILES,
    BUILTIN_RESPONSES,
    EnergyProfile,
    EnergyReport,
    SweepResult,
    energy_from_events,
    event_from_dict,
    event_to_dict,
    fl_energy,
    load_profile,
    maml_energy,
    profile_from_dict,
    profile_to_dict,
    sweep_t0,
    total_budget,
)
from .errors import ConfigError, SimulationError
from .qlearn import DqlObjective, QNetConfig, init_params, save_params, sync_target

RECORD_SCHEMA = "runrecord-v1"
CSV_SCHEMAS = {"tradeoff": "tradeoff-v1", "rounds": "rounds-v1", "bars": "bars-v1",
               "rounds_matrix": "rounds-matrix-v1"}

TRADEOFF_COLUMNS = ["schema", "t0", "setting", "uplink_bit_per_joule",
                    "sidelink_bit_per_joule", "maml_kj", "fl_sum_kj", "total_kj",
                    "is_argmin"]
ROUNDS_COLUMNS = ["schema", "t0", "task_id", "seen", "mean_rounds", "median_rounds",
                  "std_rounds"]
BARS_COLUMNS = ["schema", "entry", "energy_with_meta_kj", "energy_no_meta_kj",
                "rounds_with_meta", "rounds_no_meta"]


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of labels (reproducible parallelism)."""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class EfficiencySetting:
    """A named uplink/sidelink efficiency pair for tradeoff sweeps."""

    name: str
    uplink_eff: float
    sidelink_eff: float

    def apply(self, profile: EnergyProfile) -> EnergyProfile:
        return replace(profile, uplink_eff=self.uplink_eff, sidelink_eff=self.sidelink_eff)


DEFAULT_SETTINGS = (
    EfficiencySetting("sidelink_fast", 200e3, 500e3),
    EfficiencySetting("uplink_fast", 500e3, 200e3),
)


@dataclass(frozen=True)
class ExperimentConfig:
    grid: env_mod.GridWorld
    tasks: dict[int, env_mod.TaskSpec]
    qnet: QNetConfig
    maml: maml_mod.MamlConfig
    fl: fl_mod.FlConfig
    topology: fl_mod.Topology
    profile: EnergyProfile
    t0_candidates: tuple[int, ...] = (0, 42, 66, 90, 132, 210, 240)
    monte_carlo_runs: int = 15
    master_seed: int = 1
    workers: int = 1
    collectors_per_task: int = 1
    efficiency_settings: tuple[EfficiencySetting, ...] = DEFAULT_SETTINGS

    def config_hash(self) -> str:
        doc = config_to_dict(self)
        doc.pop("workers")  # execution detail, not experiment identity
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def reward_threshold(self) -> float:
        r_max = next(iter(self.tasks.values())).r_max
        ceiling = env_mod.max_running_reward(r_max, self.fl.nu, self.fl.episode_steps)
        return self.fl.threshold_fraction * ceiling


def validate_config(cfg: ExperimentConfig) -> None:
    widths = cfg.qnet.layer_widths
    if widths[0] != cfg.grid.n_cells:
        raise ConfigError(
            f"qnet.layer_widths[0]={widths[0]} must equal the observation length "
            f"{cfg.grid.n_cells}"
        )
    if widths[-1] != env_mod.N_ACTIONS:
        raise ConfigError(f"qnet.layer_widths[-1]={widths[-1]} must equal {env_mod.N_ACTIONS}")
    if set(cfg.topology.clusters) != set(cfg.tasks):
        raise ConfigError("topology.clusters must cover exactly the configured task ids")
    if not set(cfg.maml.training_tasks) <= set(cfg.tasks):
        raise ConfigError("maml.training_tasks must be a subset of the task ids")
    # Ledger closure needs one source of truth for billed batch counts.
    if cfg.profile.batches_adapt != cfg.maml.batches_adapt:
        raise ConfigError("profile.batches_adapt must equal maml.batches_adapt")
    if cfg.profile.batches_meta != cfg.maml.batches_meta:
        raise ConfigError("profile.batches_meta must equal maml.batches_meta")
    if cfg.profile.batches_local != cfg.fl.batches_per_round:
        raise ConfigError("profile.batches_local must equal fl.batches_per_round")
    if not cfg.t0_candidates:
        raise ConfigError("t0_candidates must not be empty")
    if list(cfg.t0_candidates) != sorted(set(cfg.t0_candidates)):
        raise ConfigError("t0_candidates must be sorted and distinct")
    if any(t0 < 0 for t0 in cfg.t0_candidates):
        raise ConfigError("t0_candidates must be >= 0")
    if cfg.monte_carlo_runs < 1:
        raise ConfigError("monte_carlo_runs must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.collectors_per_task < 1:
        raise ConfigError("collectors_per_task must be >= 1")
    for task_id in cfg.maml.training_tasks:
        if cfg.collectors_per_task > len(cfg.topology.clusters[task_id]):
            raise ConfigError(
                f"collectors_per_task exceeds the size of cluster {task_id}"
            )


def default_config() -> ExperimentConfig:
    return config_from_dict({})


def config_from_dict(doc: Mapping) -> ExperimentConfig:
    """Resolve a JSON config document, applying defaults per section."""
    doc = dict(doc)

    def section(name: str) -> dict:
        value = doc.get(name, {})
        if not isinstance(value, Mapping):
            raise ConfigError(f"{name}: expected an object")
        return dict(value)

    try:
        grid_doc = section("grid")
        grid = env_mod.GridWorld(
            int(grid_doc.get("width", 5)), int(grid_doc.get("height", 8)),
            tuple(grid_doc.get("entry", (2, 1))))
        tasks_value = doc.get("tasks", "builtin")
        r_max = float(doc.get("r_max", env_mod.DEFAULT_R_MAX))
        if tasks_value == "builtin":
            tasks = env_mod.builtin_tasks(grid, r_max)
        elif isinstance(tasks_value, str) or isinstance(tasks_value, Path):
            grid, tasks = env_mod.load_tasks(tasks_value)
        else:
            grid, tasks = env_mod.tasks_from_dict(
                {"grid": grid_doc or {"width": grid.width, "height": grid.height,
                                      "entry": list(grid.entry_cell)},
                 "r_max": r_max, "tasks": tasks_value})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid/tasks: {exc}") from exc

    qnet_doc = section("qnet")
    hidden = tuple(int(w) for w in qnet_doc.get("hidden", (64, 64)))
    qnet = QNetConfig(
        layer_widths=(grid.n_cells, *hidden, env_mod.N_ACTIONS),
        init_scale=float(qnet_doc.get("init_scale", 1.0)),
        seed=int(qnet_doc.get("seed", 0)))

    maml_doc = section("maml")
    maml_cfg = maml_mod.MamlConfig(
        inner_lr=float(maml_doc.get("inner_lr", 0.01)),
        meta_lr=float(maml_doc.get("meta_lr", 0.001)),
        rounds=int(maml_doc.get("rounds", 210)),
        training_tasks=tuple(int(t) for t in maml_doc.get("training_tasks", (1, 2, 6))),
        split_ratio=float(maml_doc.get("split_ratio", 0.5)),
        first_order=bool(maml_doc.get("first_order", True)),
        batches_adapt=int(maml_doc.get("batches_adapt", 10)),
        batches_meta=int(maml_doc.get("batches_meta", 10)))

    fl_doc = section("fl")
    fl_cfg = fl_mod.FlConfig(
        mixing_damping=float(fl_doc.get("mixing_damping", 0.5)),
        batches_per_round=int(fl_doc.get("batches_per_round", 20)),
        batch_size=int(fl_doc.get("batch_size", 16)),
        local_lr=float(fl_doc.get("local_lr", 0.01)),
        nu=float(fl_doc.get("nu", 0.99)),
        epsilon=float(fl_doc.get("epsilon", 0.1)),
        episode_steps=int(fl_doc.get("episode_steps", 20)),
        replay_capacity=int(fl_doc.get("replay_capacity", 40)),
        target_sync_period=int(fl_doc.get("target_sync_period", 10)),
        threshold_fraction=float(fl_doc.get("threshold_fraction", 0.8)),
        max_rounds=int(fl_doc.get("max_rounds", 300)))

    topo_value = doc.get("topology", "pairs")
    if isinstance(topo_value, str) and topo_value in fl_mod.BUILTIN_TOPOLOGIES:
        topology = fl_mod.builtin_topology(topo_value, n_tasks=len(tasks))
    elif isinstance(topo_value, str):
        topology = fl_mod.load_topology(topo_value)
    else:
        topology = fl_mod.topology_from_dict(topo_value)

    profile = resolve_profile(doc.get("profile", "table1"))

    settings_doc = doc.get("efficiency_settings")
    if settings_doc is None:
        settings = DEFAULT_SETTINGS
    else:
        settings = tuple(
            EfficiencySetting(str(s["name"]), float(s["uplink_bit_per_joule"]),
                              float(s["sidelink_bit_per_joule"]))
            for s in settings_doc)
        if not settings:
            raise ConfigError("efficiency_settings must not be empty")

    cfg = ExperimentConfig(
        grid=grid, tasks=tasks, qnet=qnet, maml=maml_cfg, fl=fl_cfg,
        topology=topology, profile=profile,
        t0_candidates=tuple(int(t) for t in doc.get("t0_candidates",
                                                    (0, 42, 66, 90, 132, 210, 240))),
        monte_carlo_runs=int(doc.get("monte_carlo_runs", 15)),
        master_seed=int(doc.get("master_seed", 1)),
        workers=int(doc.get("workers", 1)),
        collectors_per_task=int(doc.get("collectors_per_task", 1)),
        efficiency_settings=settings)
    validate_config(cfg)
    return cfg


def resolve_profile(value) -> EnergyProfile:
    if isinstance(value, EnergyProfile):
        return value
    if isinstance(value, str):
        if value in BUILTIN_PROFILES:
            return BUILTIN_PROFILES[value]()
        return load_profile(value)
    return profile_from_dict(value)


def resolve_response(value) -> dict[int, tuple[float, ...]]:
    if isinstance(value, str):
        if value in BUILTIN_RESPONSES:
            return BUILTIN_RESPONSES[value]()
        with open(value, encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = value
    return {int(t0): tuple(float(x) for x in rounds) for t0, rounds in doc.items()}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical resolved document (used for hashing and persistence)."""
    return {
        "grid": {"width": cfg.grid.width, "height": cfg.grid.height,
                 "entry": list(cfg.grid.entry_cell)},
        "r_max": next(iter(cfg.tasks.values())).r_max,
        "tasks": [{"id": tid, "trajectory": [list(c) for c in task.trajectory]}
                  for tid, task in sorted(cfg.tasks.items())],
        "qnet": {"hidden": list(cfg.qnet.layer_widths[1:-1]),
                 "init_scale": cfg.qnet.init_scale, "seed": cfg.qnet.seed},
        "maml": {"inner_lr": cfg.maml.inner_lr, "meta_lr": cfg.maml.meta_lr,
                 "rounds": cfg.maml.rounds,
                 "training_tasks": list(cfg.maml.training_tasks),
                 "split_ratio": cfg.maml.split_ratio,
                 "first_order": cfg.maml.first_order,
                 "batches_adapt": cfg.maml.batches_adapt,
                 "batches_meta": cfg.maml.batches_meta},
        "fl": {"mixing_damping": cfg.fl.mixing_damping,
               "batches_per_round": cfg.fl.batches_per_round,
               "batch_size": cfg.fl.batch_size, "local_lr": cfg.fl.local_lr,
               "nu": cfg.fl.nu, "epsilon": cfg.fl.epsilon,
               "episode_steps": cfg.fl.episode_steps,
               "replay_capacity": cfg.fl.replay_capacity,
               "target_sync_period": cfg.fl.target_sync_period,
               "threshold_fraction": cfg.fl.threshold_fraction,
               "max_rounds": cfg.fl.max_rounds},
        "topology": fl_mod.topology_to_dict(cfg.topology),
        "profile": profile_to_dict(cfg.profile),
        "t0_candidates": list(cfg.t0_candidates),
        "monte_carlo_runs": cfg.monte_carlo_runs,
        "master_seed": cfg.master_seed,
        "workers": cfg.workers,
        "collectors_per_task": cfg.collectors_per_task,
        "efficiency_settings": [
            {"name": s.name, "uplink_bit_per_joule": s.uplink_eff,
             "sidelink_bit_per_joule": s.sidelink_eff}
            for s in cfg.efficiency_settings],
    }


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return default_config()
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


@dataclass
class RunRecord:
    """Everything one pipeline run produced."""

    schema: str
    config_hash: str
    seed: int
    t0: int
    seen_tasks: dict[int, bool]
    rounds: dict[int, int]
    converged: dict[int, bool]
    reward_history: dict[int, tuple[float, ...]]
    events: list
    energy_maml: EnergyReport
    energy_fl: dict[int, EnergyReport]
    energy_total: EnergyReport
    wall_clock_s: float
    meta_params = None  # set by run_pipeline; not serialized

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "t0": self.t0,
            "seen_tasks": {str(t): v for t, v in sorted(self.seen_tasks.items())},
            "rounds": {str(t): v for t, v in sorted(self.rounds.items())},
            "converged": {str(t): v for t, v in sorted(self.converged.items())},
            "reward_history": {str(t): list(v)
                               for t, v in sorted(self.reward_history.items())},
            "events": [event_to_dict(e) for e in self.events],
            "energy": {"maml": self.energy_maml.to_dict(),
                       "fl": {str(t): r.to_dict()
                              for t, r in sorted(self.energy_fl.items())},
                       "total": self.energy_total.to_dict()},
            "wall_clock_s": self.wall_clock_s,
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "RunRecord":
        return RunRecord(
            schema=doc["schema"],
            config_hash=doc["config_hash"],
            seed=doc["seed"],
            t0=doc["t0"],
            seen_tasks={int(t): v for t, v in doc["seen_tasks"].items()},
            rounds={int(t): v for t, v in doc["rounds"].items()},
            converged={int(t): v for t, v in doc["converged"].items()},
            reward_history={int(t): tuple(v) for t, v in doc["reward_history"].items()},
            events=[event_from_dict(e) for e in doc["events"]],
            energy_maml=EnergyReport.from_dict(doc["energy"]["maml"]),
            energy_fl={int(t): EnergyReport.from_dict(r)
                       for t, r in doc["energy"]["fl"].items()},
            energy_total=EnergyReport.from_dict(doc["energy"]["total"]),
            wall_clock_s=doc["wall_clock_s"],
        )

    def fingerprint(self) -> str:
        """Canonical JSON of everything except wall clock."""
        doc = self.to_dict()
        doc.pop("wall_clock_s")
        return json.dumps(doc, sort_keys=True)


def run_pipeline(cfg: ExperimentConfig, seed: int, t0: int | None = None) -> RunRecord:
    """Execute meta-training, broadcast, and per-task adaptation for one seed."""
    start = time.perf_counter()
    t0 = cfg.maml.rounds if t0 is None else int(t0)
    if t0 < 0:
        raise ConfigError("t0 must be >= 0")
    profile = cfg.profile
    events: list = []

    meta_params = None
    if t0 > 0:
        meta_params = init_params(cfg.qnet, byte_size=int(profile.model_bytes),
                                  rng=np.random.default_rng(derive_seed(seed, "meta-init")))
        state = maml_mod.MetaState(meta_params)
        maml_cfg = replace(cfg.maml, rounds=t0)
        make_objective = lambda task_id, params: DqlObjective(  # noqa: E731
            sync_target(params), cfg.fl.nu)
        for round_index in range(t0):
            fresh: dict[int, dict[int, env_mod.ExperienceBatch]] = {}
            for task_id in maml_cfg.training_tasks:
                collectors = cfg.topology.clusters[task_id][:cfg.collectors_per_task]
                fresh[task_id] = {
                    dev: env_mod.collect_episode(
                        cfg.grid, cfg.tasks[task_id], state.meta_params,
                        cfg.fl.epsilon, cfg.fl.episode_steps,
                        np.random.default_rng(
                            derive_seed(seed, "meta-collect", round_index, task_id, dev)),
                        device_id=dev, byte_size=int(profile.data_bytes))
                    for dev in collectors}
            state, log = maml_mod.maml_round(
                state, fresh, maml_cfg, make_objective,
                derive_seed(seed, "split", round_index))
            events.extend(log.grad_events)
            events.extend(log.comm_events)
        meta_params = state.meta_params
        for dev in cfg.topology.devices:
            events.append(fl_mod.CommEvent("transfer", t0, "DL", 0, dev,
                                           profile.model_bytes))

    threshold = cfg.reward_threshold()
    rounds: dict[int, int] = {}
    converged: dict[int, bool] = {}
    histories: dict[int, tuple[float, ...]] = {}
    for task_id in sorted(cfg.tasks):
        task = cfg.tasks[task_id]
        states = {}
        for dev in cfg.topology.clusters[task_id]:
            if meta_params is not None:
                params = meta_params
            else:
                params = init_params(
                    cfg.qnet, byte_size=int(profile.model_bytes),
                    rng=np.random.default_rng(derive_seed(seed, "device-init", dev)))
            states[dev] = fl_mod.init_device(dev, params, cfg.fl)
        rngs = {dev: np.random.default_rng(derive_seed(seed, "device", task_id, dev))
                for dev in states}
        result = fl_mod.adapt_until(states, task, cfg.grid, cfg.fl, cfg.topology,
                                    threshold, cfg.fl.max_rounds, rngs,
                                    data_bytes=int(profile.data_bytes))
        rounds[task_id] = result.rounds
        converged[task_id] = result.converged
        histories[task_id] = result.reward_history
        for log in result.round_logs:
            events.extend(log.grad_events)
            events.extend(log.comm_events)

    maml_report = maml_energy(
        t0, {tid: cfg.collectors_per_task for tid in cfg.maml.training_tasks},
        cfg.topology.n_devices, profile)
    fl_reports = {tid: fl_energy(rounds[tid], cfg.topology.cluster_neighbors(tid),
                                 profile, cfg.topology.link_kinds)
                  for tid in sorted(cfg.tasks)}
    total = total_budget(maml_report, [fl_reports[t] for t in sorted(fl_reports)])

    record = RunRecord(
        schema=RECORD_SCHEMA, config_hash=cfg.config_hash(), seed=seed, t0=t0,
        seen_tasks={tid: tid in cfg.maml.training_tasks for tid in sorted(cfg.tasks)},
        rounds=rounds, converged=converged, reward_history=histories, events=events,
        energy_maml=maml_report, energy_fl=fl_reports, energy_total=total,
        wall_clock_s=time.perf_counter() - start)
    record.meta_params = meta_params
    verify_ledger(record, profile)
    return record


def verify_ledger(record: RunRecord, profile: EnergyProfile) -> None:
    """Replay the event ledger; stored reports must match bit for bit."""
    task_ids = sorted(record.rounds)
    meta, fl, _ = energy_from_events(record.events, profile)
    fl = {tid: fl.get(tid, fl_energy(0, {}, profile)) for tid in task_ids}
    total = total_budget(meta, [fl[t] for t in task_ids])
    mismatches = []
    if meta != record.energy_maml:
        mismatches.append("maml")
    for tid in task_ids:
        if fl[tid] != record.energy_fl[tid]:
            mismatches.append(f"fl[{tid}]")
    if total != record.energy_total:
        mismatches.append("total")
    if mismatches:
        raise SimulationError(
            f"ledger replay disagrees with closed-form reports: {mismatches}")


@dataclass(frozen=True)
class MonteCarloResult:
    records: tuple[RunRecord, ...]
    mean_rounds: dict[int, float]
    median_rounds: dict[int, float]
    std_rounds: dict[int, float]
    mean_energy_total_j: float
    mean_energy_learning_j: float
    mean_energy_comm_j: float

    def to_dict(self) -> dict:
        return {
            "runs": len(self.records),
            "mean_rounds": {str(t): v for t, v in sorted(self.mean_rounds.items())},
            "median_rounds": {str(t): v for t, v in sorted(self.median_rounds.items())},
            "std_rounds": {str(t): v for t, v in sorted(self.std_rounds.items())},
            "mean_energy_total_j": self.mean_energy_total_j,
            "mean_energy_learning_j": self.mean_energy_learning_j,
            "mean_energy_comm_j": self.mean_energy_comm_j,
        }


def _mc_worker(args: tuple[dict, int, int | None]) -> dict:
    doc, seed, t0 = args
    return run_pipeline(config_from_dict(doc), seed, t0).to_dict()


def monte_carlo(cfg: ExperimentConfig, t0: int | None = None) -> MonteCarloResult:
    """Run the pipeline over derived seeds and aggregate per-task round counts."""
    seeds = [derive_seed(cfg.master_seed, run_index)
             for run_index in range(cfg.monte_carlo_runs)]
    if cfg.workers > 1 and len(seeds) > 1:
        doc = config_to_dict(cfg)
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            docs = list(pool.map(_mc_worker, [(doc, s, t0) for s in seeds]))
        records = [RunRecord.from_dict(d) for d in docs]
    else:
        records = [run_pipeline(cfg, s, t0) for s in seeds]
    task_ids = sorted(cfg.tasks)
    per_task = {tid: [r.rounds[tid] for r in records] for tid in task_ids}
    return MonteCarloResult(
        records=tuple(records),
        mean_rounds={t: statistics.fmean(v) for t, v in per_task.items()},
        median_rounds={t: float(statistics.median(v)) for t, v in per_task.items()},
        std_rounds={t: statistics.pstdev(v) if len(v) > 1 else 0.0
                    for t, v in per_task.items()},
        mean_energy_total_j=statistics.fmean(r.energy_total.total_j for r in records),
        mean_energy_learning_j=statistics.fmean(r.energy_total.learning_j for r in records),
        mean_energy_comm_j=statistics.fmean(r.energy_total.communication_j for r in records),
    )


def tradeoff_rows(response: Mapping[int, Sequence[float]], cfg_profile: EnergyProfile,
                  clusters: Mapping[int, Mapping[int, Sequence[int]]],
                  training_tasks: Sequence[int],
                  settings: Sequence[EfficiencySetting],
                  collectors_per_task: int = 1,
                  link_kinds: Mapping[tuple[int, int], str] | None = None
                  ) -> tuple[list[dict], dict[str, SweepResult]]:
    """Tradeoff CSV rows (one per t0 x setting) plus the per-setting sweeps."""
    rows = []
    sweeps: dict[str, SweepResult] = {}
    for setting in settings:
        result = sweep_t0(response, setting.apply(cfg_profile), clusters,
                          training_tasks, collectors_per_task, link_kinds)
        sweeps[setting.name] = result
        for row in result.rows:
            rows.append({
                "schema": CSV_SCHEMAS["tradeoff"],
                "t0": row.t0,
                "setting": setting.name,
                "uplink_bit_per_joule": setting.uplink_eff,
                "sidelink_bit_per_joule": setting.sidelink_eff,
                "maml_kj": row.maml.total_j / 1e3,
                "fl_sum_kj": row.fl_sum.total_j / 1e3,
                "total_kj": row.total.total_j / 1e3,
                "is_argmin": int(row.t0 == result.argmin_t0),
            })
    return rows, sweeps


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Mapping]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)


@dataclass(frozen=True)
class SweepOutput:
    per_t0: dict[int, MonteCarloResult]
    tradeoff_rows: list[dict]
    rounds_rows: list[dict]
    rounds_matrix_rows: list[dict]
    bars_rows: list[dict]


def sweep(cfg: ExperimentConfig, t0_candidates: Sequence[int] | None = None) -> SweepOutput:
    """Monte-Carlo the pipeline per t0 candidate and price the mean response."""
    candidates = tuple(t0_candidates) if t0_candidates is not None else cfg.t0_candidates
    if len(candidates) < 2:
        raise ConfigError("a sweep needs at least two t0 candidates")
    task_ids = sorted(cfg.tasks)
    per_t0 = {t0: monte_carlo(cfg, t0=t0) for t0 in candidates}
    response = {t0: tuple(result.mean_rounds[tid] for tid in task_ids)
                for t0, result in per_t0.items()}
    clusters = {tid: cfg.topology.cluster_neighbors(tid) for tid in task_ids}
    t_rows, _ = tradeoff_rows(response, cfg.profile, clusters, cfg.maml.training_tasks,
                              cfg.efficiency_settings, cfg.collectors_per_task,
                              cfg.topology.link_kinds)
    rounds_rows = [{
        "schema": CSV_SCHEMAS["rounds"], "t0": t0, "task_id": tid,
        "seen": int(tid in cfg.maml.training_tasks),
        "mean_rounds": result.mean_rounds[tid],
        "median_rounds": result.median_rounds[tid],
        "std_rounds": result.std_rounds[tid],
    } for t0, result in per_t0.items() for tid in task_ids]
    # wide per-candidate matrix: one row per t0, one column per task
    matrix_rows = [{
        "schema": CSV_SCHEMAS["rounds_matrix"], "t0": t0,
        **{f"task_{tid}": result.mean_rounds[tid] for tid in task_ids},
    } for t0, result in per_t0.items()]
    bars_rows = _bars_rows(cfg, per_t0, task_ids)
    return SweepOutput(per_t0, t_rows, rounds_rows, matrix_rows, bars_rows)


def _bars_rows(cfg: ExperimentConfig, per_t0: Mapping[int, MonteCarloResult],
               task_ids: Sequence[int]) -> list[dict]:
    """Per-entry energy/rounds of the largest-budget arm vs the no-transfer arm."""
    positive = [t0 for t0 in per_t0 if t0 > 0]
    if not positive or 0 not in per_t0:
        return []
    t0_max = max(positive)
    with_meta, no_meta = per_t0[t0_max], per_t0[0]
    clusters = {tid: cfg.topology.cluster_neighbors(tid) for tid in task_ids}
    maml_report = maml_energy(
        t0_max, {tid: cfg.collectors_per_task for tid in cfg.maml.training_tasks},
        cfg.topology.n_devices, cfg.profile)
    rows = [{
        "schema": CSV_SCHEMAS["bars"], "entry": "meta",
        "energy_with_meta_kj": maml_report.total_j / 1e3,
        "energy_no_meta_kj": 0.0,
        "rounds_with_meta": t0_max, "rounds_no_meta": 0.0,
    }]
    for tid in task_ids:
        rows.append({
            "schema": CSV_SCHEMAS["bars"], "entry": f"task_{tid}",
            "energy_with_meta_kj": fl_energy(with_meta.mean_rounds[tid], clusters[tid],
                                             cfg.profile,
                                             cfg.topology.link_kinds).total_j / 1e3,
            "energy_no_meta_kj": fl_energy(no_meta.mean_rounds[tid], clusters[tid],
                                           cfg.profile,
                                           cfg.topology.link_kinds).total_j / 1e3,
            "rounds_with_meta": with_meta.mean_rounds[tid],
            "rounds_no_meta": no_meta.mean_rounds[tid],
        })
    return rows


def save_record(record: RunRecord, out_dir: Path) -> Path:
    records_dir = out_dir / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    path = records_dir / f"run_{record.t0}_{record.seed}.json"
    path.write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True),
                    encoding="utf-8")
    return path


def save_run_outputs(cfg: ExperimentConfig, record: RunRecord, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(config_to_dict(cfg), indent=2, sort_keys=True), encoding="utf-8")
    save_record(record, out_dir)
    if record.meta_params is not None:
        save_params(record.meta_params, out_dir / "params" / f"meta_t{record.t0}.bin",
                    metadata={"config_hash": record.config_hash, "round": record.t0})
