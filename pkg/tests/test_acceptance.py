"""Acceptance suite: one test per criterion, at the stated tolerances.

The desk-scale ensemble experiment (few-shot benefit, seen-vs-unseen) runs
once in a session fixture and is shared by the tests that assert on it.
"""

import dataclasses
import json
import statistics
import time

import numpy as np
import pytest

from metafed import cli, energy, maml, runner
from metafed import consensus as fl
from metafed import qlearn as q
from metafed.env import GridWorld, Transition, builtin_tasks, collect_episode

SEEN, UNSEEN = (1, 2, 6), (3, 4, 5)

# Frozen configuration of the ensemble experiment. Spec-pinned scenario:
# 5x8 grid (40 cells), 6 tasks, training tasks {1, 2, 6}, >= 10 seeds,
# meta budget = largest configured candidate. Learning rates, discount and
# exploration are tuned within their config-exposed ranges; defaults diverge
# at this scale (see decisions ledger).
EXPERIMENT = {
    "maml": {"rounds": 480, "inner_lr": 0.002, "meta_lr": 0.0007},
    "fl": {"nu": 0.9, "local_lr": 0.002, "batch_size": 8, "max_rounds": 150,
           "epsilon": 0.2},
    "collectors_per_task": 1,
    "monte_carlo_runs": 15,
    "master_seed": 2026,
    "t0_candidates": [0, 480],
}

LEDGER_RUN = {
    "maml": {"rounds": 6, "inner_lr": 0.002, "meta_lr": 0.0007},
    "fl": {"nu": 0.9, "local_lr": 0.002, "batch_size": 8, "max_rounds": 12,
           "epsilon": 0.2},
    "monte_carlo_runs": 1,
    "t0_candidates": [0, 6],
    "master_seed": 5,
}


@pytest.fixture(scope="session")
def ensemble():
    cfg = runner.config_from_dict(EXPERIMENT)
    t0_max = cfg.t0_candidates[-1]
    with_meta = runner.monte_carlo(cfg, t0=t0_max)
    without = runner.monte_carlo(cfg, t0=0)
    return cfg, with_meta, without


def test_energy_oracle_equivalence():
    """Closed-form operations match a brute-force term-by-term evaluator to
    relative error < 1e-12 on >= 20 random parameter sets plus the two
    hand-worked examples. Runtime < 1 s."""
    start = time.perf_counter()

    def brute_maml(t0, counts, k, p):
        learning = comm = 0.0
        for _ in range(t0):
            for count in counts:
                for _ in range(count):
                    learning += p.dc_pue * p.batches_adapt / p.dc_compute_eff
                    learning += (p.dc_pue * p.jacobian_factor * p.batches_meta
                                 / p.dc_compute_eff)
                    comm += 8.0 * p.data_bytes / p.uplink_eff
        if t0 > 0:
            for _ in range(k):
                comm += 8.0 * p.model_bytes / p.downlink_eff
        return learning, comm

    def brute_fl(t_i, cluster, p):
        learning = comm = 0.0
        for dev, neighbors in cluster.items():
            learning += t_i * p.batches_local / p.device_compute_eff
            for _ in neighbors:
                comm += t_i * 8.0 * p.model_bytes / p.sidelink_eff
        return learning, comm

    # hand-worked example 1 (meta phase): 28 J learning, 16 J UL, 4 J DL
    p1 = energy.EnergyProfile(
        uplink_eff=1e6, downlink_eff=2e6, sidelink_eff=1e6, dc_compute_eff=0.5,
        device_compute_eff=0.5, dc_pue=1.0, net_pue=1.0, jacobian_factor=1.0,
        model_bytes=500_000, data_bytes=1_000_000, batches_adapt=3,
        batches_meta=4, batches_local=5)
    rep = energy.maml_energy(2, {1: 1}, 2, p1)
    assert rep.learning_j == pytest.approx(28.0, rel=1e-12)
    assert rep.communication_j == pytest.approx(20.0, rel=1e-12)
    assert rep.total_j == pytest.approx(48.0, rel=1e-12)

    # hand-worked example 2 (adaptation phase): 60 J learning, 24 J comm
    rep = energy.fl_energy(3, {1: (2,), 2: (1,)}, p1)
    assert rep.learning_j == pytest.approx(60.0, rel=1e-12)
    assert rep.communication_j == pytest.approx(24.0, rel=1e-12)

    rng = np.random.default_rng(123)
    for _ in range(20):
        p = energy.EnergyProfile(
            uplink_eff=float(rng.uniform(1e4, 1e7)),
            downlink_eff=float(rng.uniform(1e4, 1e7)),
            sidelink_eff=float(rng.uniform(1e4, 1e7)),
            dc_compute_eff=float(rng.uniform(0.01, 10)),
            device_compute_eff=float(rng.uniform(0.01, 10)),
            dc_pue=float(rng.uniform(1, 3)), net_pue=float(rng.uniform(1, 3)),
            jacobian_factor=float(rng.uniform(1, 4)),
            model_bytes=int(rng.integers(1_000, 10_000_000)),
            data_bytes=int(rng.integers(1_000, 100_000_000)),
            batches_adapt=int(rng.integers(1, 40)),
            batches_meta=int(rng.integers(1, 40)),
            batches_local=int(rng.integers(1, 40)))
        t0 = int(rng.integers(0, 250))
        counts = [int(c) for c in rng.integers(1, 4, size=3)]
        k = int(rng.integers(1, 24))
        got = energy.maml_energy(t0, counts, k, p)
        learning, comm = brute_maml(t0, counts, k, p)
        assert got.learning_j == pytest.approx(learning, rel=1e-12)
        assert got.communication_j == pytest.approx(comm, rel=1e-12)

        cluster = {1: (2, 3), 2: (1, 3), 3: (1, 2)}
        t_i = float(rng.uniform(0, 400))
        got_fl = energy.fl_energy(t_i, cluster, p)
        l2, c2 = brute_fl(t_i, cluster, p)
        assert got_fl.learning_j == pytest.approx(l2, rel=1e-12)
        assert got_fl.communication_j == pytest.approx(c2, rel=1e-12)

        total = energy.total_budget(got, [got_fl])
        assert total.total_j == pytest.approx(learning + comm + l2 + c2, rel=1e-12)
    assert time.perf_counter() - start < 1.0


def test_ledger_closure():
    """Energy recomputed from the event ledger of full pipeline runs equals
    the stored closed-form reports bit for bit, over 5 runs."""
    cfg = runner.config_from_dict(LEDGER_RUN)
    task_ids = sorted(cfg.tasks)
    for seed in range(5):
        record = runner.run_pipeline(cfg, seed=seed)
        meta, fl_reports, _ = energy.energy_from_events(record.events, cfg.profile)
        fl_reports = {tid: fl_reports.get(tid, energy.fl_energy(0, {}, cfg.profile))
                      for tid in task_ids}
        total = energy.total_budget(meta, [fl_reports[t] for t in task_ids])
        assert meta == record.energy_maml
        for tid in task_ids:
            assert fl_reports[tid] == record.energy_fl[tid]
        assert total == record.energy_total
        # bit-identical doubles, not approximately equal
        assert total.total_j.hex() == record.energy_total.total_j.hex()


def test_table2_fixture_sweep():
    """With the built-in profile and response fixtures: every positive meta
    budget beats zero in both efficiency settings, the best budget saves
    >= 1.5x, and the optimum under cheap sidelinks is strictly below the
    optimum under cheap uplinks. Runtime < 1 s."""
    start = time.perf_counter()
    profile = energy.table1()
    response = energy.table2_response()
    clusters = {tid: {2 * tid - 1: (2 * tid,), 2 * tid: (2 * tid - 1,)}
                for tid in range(1, 7)}
    argmins = {}
    for name, (e_ul, e_sl) in {"sidelink_fast": (200e3, 500e3),
                               "uplink_fast": (500e3, 200e3)}.items():
        p = dataclasses.replace(profile, uplink_eff=e_ul, sidelink_eff=e_sl)
        result = energy.sweep_t0(response, p, clusters, SEEN)
        totals = {row.t0: row.total.total_j for row in result.rows}
        base = totals[0]
        for t0, total in totals.items():
            if t0 > 0:
                assert total < base, f"{name}: t0={t0} does not beat t0=0"
        best = min(totals[t0] for t0 in totals if t0 > 0)
        assert base / best >= 1.5
        argmins[name] = result.argmin_t0
    assert argmins["sidelink_fast"] < argmins["uplink_fast"]
    assert time.perf_counter() - start < 1.0


def test_gradient_correctness():
    """Analytic TD gradients and curvature-corrected meta-gradients match
    central finite differences (rel error < 1e-4) on <= 200-parameter nets
    over >= 10 seeds; first-order equals full mode at mu=0 to < 1e-12."""
    widths = (5, 6, 4)  # 64 parameters

    def onehot(i):
        v = np.zeros(5)
        v[i] = 1.0
        return v

    for seed in range(10):
        rng = np.random.default_rng(seed)
        params = q.init_params(q.QNetConfig(layer_widths=widths, seed=seed),
                               byte_size=64)
        target = q.sync_target(q.init_params(
            q.QNetConfig(layer_widths=widths, seed=seed + 1000), byte_size=64))
        batch = [Transition(onehot(rng.integers(5)), int(rng.integers(4)),
                            float(rng.normal()), onehot(rng.integers(5)))
                 for _ in range(6)]

        analytic = q.dql_grad(params, target, batch, 0.99).values
        h = 1e-5
        numeric = np.zeros_like(analytic)
        for i in range(len(params)):
            up, down = params.values.copy(), params.values.copy()
            up[i] += h
            down[i] -= h
            numeric[i] = (q.dql_batch_loss(params.with_values(up), target, batch, 0.99)
                          - q.dql_batch_loss(params.with_values(down), target,
                                             batch, 0.99)) / (2 * h)
        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-4

        obj = q.DqlObjective(target, 0.99)
        data_a = [[Transition(onehot(rng.integers(5)), int(rng.integers(4)),
                              float(rng.normal()), onehot(rng.integers(5)))
                   for _ in range(5)]]
        data_b = [[Transition(onehot(rng.integers(5)), int(rng.integers(4)),
                              float(rng.normal()), onehot(rng.integers(5)))
                   for _ in range(5)]]
        mu = 0.01
        phi = maml.inner_adapt(params, data_a, mu, obj)
        full = maml.meta_gradient(params, phi, data_a, data_b, mu, obj, False).values

        def composite(values):
            adapted = maml.inner_adapt(params.with_values(values), data_a, mu, obj)
            return sum(obj.loss(adapted, b) for b in data_b)

        numeric_meta = np.zeros_like(full)
        for i in range(len(params)):
            up, down = params.values.copy(), params.values.copy()
            up[i] += h
            down[i] -= h
            numeric_meta[i] = (composite(up) - composite(down)) / (2 * h)
        assert (np.linalg.norm(full - numeric_meta)
                / np.linalg.norm(numeric_meta)) < 1e-4

        phi0 = maml.inner_adapt(params, data_a, 0.0, obj)
        first = maml.meta_gradient(params, phi0, data_a, data_b, 0.0, obj, True).values
        full0 = maml.meta_gradient(params, phi0, data_a, data_b, 0.0, obj, False).values
        denom = max(np.linalg.norm(full0), 1.0)
        assert np.linalg.norm(first - full0) / denom < 1e-12


def test_consensus_properties():
    """Fixed point on identical models, one-step exact pairwise averaging at
    damping 0.5, and agreement < 1e-9 within 200 steps on every built-in
    topology. Runtime < 1 s."""
    start = time.perf_counter()
    layout = (("w", (3,)),)

    def device(dev, values, n=20):
        state = fl.DeviceState(dev, q.ParamVector(np.asarray(values, float),
                                                  layout, 8),
                               q.sync_target(q.ParamVector(
                                   np.asarray(values, float), layout, 8)))
        state.replay.append(type("B", (), {"transitions": tuple(range(n))})())
        return state

    # fixed point
    states = {1: device(1, [1.0, 2.0, 3.0]), 2: device(2, [1.0, 2.0, 3.0])}
    fl.consensus_step(states, {1: (2,), 2: (1,)}, 0.5)
    for s in states.values():
        assert np.array_equal(s.params.values, [1.0, 2.0, 3.0])

    # exact pairwise averaging in one step
    states = {1: device(1, [0.0, 2.0, 4.0]), 2: device(2, [4.0, 6.0, 0.0])}
    fl.consensus_step(states, {1: (2,), 2: (1,)}, 0.5)
    assert np.array_equal(states[1].params.values, [2.0, 4.0, 2.0])
    assert np.array_equal(states[2].params.values, [2.0, 4.0, 2.0])

    # agreement on all built-in topologies
    rng = np.random.default_rng(0)
    for name in fl.BUILTIN_TOPOLOGIES:
        topology = fl.builtin_topology(name, n_tasks=6)
        for task_id, devices in topology.clusters.items():
            states = {dev: device(dev, rng.normal(size=3), int(rng.integers(5, 50)))
                      for dev in devices}
            neighbors = topology.cluster_neighbors(task_id)
            for _ in range(200):
                fl.consensus_step(states, neighbors, 0.5)
            stack = np.stack([s.params.values for s in states.values()])
            assert np.ptp(stack, axis=0).max() < 1e-9
    assert time.perf_counter() - start < 1.0


def test_few_shot_benefit(ensemble):
    """Median adaptation rounds with the meta initialization (largest
    configured budget) beat random initialization on at least 4 of 6 tasks,
    and mean total rounds drop by at least 2x."""
    cfg, with_meta, without = ensemble
    assert cfg.monte_carlo_runs >= 10
    wins = sum(with_meta.median_rounds[t] < without.median_rounds[t]
               for t in sorted(cfg.tasks))
    assert wins >= 4, (with_meta.median_rounds, without.median_rounds)
    sum_meta = sum(with_meta.mean_rounds.values())
    sum_plain = sum(without.mean_rounds.values())
    assert sum_plain / sum_meta >= 2.0, (sum_meta, sum_plain)


def test_seen_vs_unseen_rounds(ensemble):
    """Held-out tasks need at least as many adaptation rounds on average as
    the tasks the meta model was trained on."""
    cfg, with_meta, _ = ensemble
    mean_seen = statistics.fmean(with_meta.mean_rounds[t] for t in SEEN)
    mean_unseen = statistics.fmean(with_meta.mean_rounds[t] for t in UNSEEN)
    assert mean_unseen >= mean_seen, (mean_unseen, mean_seen)


def test_simulate_determinism(tmp_path):
    """Two `simulate` executions with the same config and seed produce
    identical run records apart from wall clock."""
    config = tmp_path / "config.json"
    config.write_text(json.dumps(LEDGER_RUN))
    records = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["simulate", "--config", str(config), "--seed", "11",
                         "--out", str(out)]) == 0
        doc = json.loads((out / "records" / "run_6_11.json").read_text())
        doc.pop("wall_clock_s")
        records.append(json.dumps(doc, sort_keys=True))
    assert records[0] == records[1]
