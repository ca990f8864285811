"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Criteria 5 and 6 share one trained pipeline built with the shipped
``RunConfig`` defaults on the large maze (1000 demos, 200 pose pairs x 3
repeats). Thresholds and runtime budgets are applied as stated; nothing is
relaxed when a check fails.
"""
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from guidedflow import persist
from guidedflow.appcli import RunConfig, main
from guidedflow.density import KdeModel, build_kde, grad_log_density, log_density
from guidedflow.evalbench import flow_policy, format_table, make_suite, run_bench, run_lambda_ablation
from guidedflow.flowmatch import InferenceConfig, TrainConfig, sample_guided, sample_plain, train
from guidedflow.mazeworld import (Normalization, check_demonstration, gen_demoset, load_maze,
                                  segment_collides)
from guidedflow.nnet import VectorFieldNet, backward_batch, forward_batch
from guidedflow.potential import (PotentialField, SafeSet, build_field, distance_to_safe,
                                  field_over_series, potential, potential_gradient)


def record(capsys, number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# -- 1 -----------------------------------------------------------------------

def _net_fd_error(k):
    rng = np.random.default_rng(1000 + k)
    net = VectorFieldNet.create(8, 4, hidden=(12, 10), activation=("relu", "tanh")[k % 2],
                                time_features=3, seed=k,
                                parameterization=("velocity", "endpoint")[(k // 2) % 2])
    for b in net.biases:
        b[:] = 0.1 * rng.normal(size=b.shape)
    A, O = rng.normal(size=(6, 8)), rng.normal(size=(6, 4))
    t, U = rng.uniform(size=6), rng.normal(size=(6, 8))
    _, cache = forward_batch(net, A, t, O)
    grads = backward_batch(net, cache, U).as_list()
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        flat = p.ravel()
        for j in rng.choice(flat.size, size=min(8, flat.size), replace=False):
            old = flat[j]
            flat[j] = old + 1e-5
            lp = np.sum(U * forward_batch(net, A, t, O)[0])
            flat[j] = old - 1e-5
            lm = np.sum(U * forward_batch(net, A, t, O)[0])
            flat[j] = old
            fd, an = (lp - lm) / 2e-5, g.ravel()[j]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-4))
    return worst


def test_criterion_1_gradient_correctness(capsys):
    t0 = time.perf_counter()
    net_err = max(_net_fd_error(k) for k in range(24))
    kde_err = pot_err = 0.0
    eps = 1e-6
    for s in range(24):
        rng = np.random.default_rng(s)
        kde = KdeModel(rng.uniform(-1, 1, size=(40, 2)), rng.uniform(0.2, 0.6))
        field = build_field(kde, 0.2, -0.8, np.inf)
        for a in rng.uniform(-1.4, 1.4, size=(10, 2)):
            E = np.eye(2) * eps
            fd = np.array([(log_density(kde, a + e) - log_density(kde, a - e)) / (2 * eps) for e in E])
            an = grad_log_density(kde, a)
            kde_err = max(kde_err, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-3))
            if distance_to_safe(field.safe, a)[0] > 0.01:
                fd = np.array([(potential(field, a + e) - potential(field, a - e)) / (2 * eps) for e in E])
                an = potential_gradient(field, a)
                pot_err = max(pot_err, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-3))
    dt = time.perf_counter() - t0
    ok = net_err < 1e-5 and kde_err < 1e-6 and pot_err < 1e-6 and dt < 30
    record(capsys, 1, "gradient correctness", ok,
           f"net {net_err:.2e} (<1e-5), kde {kde_err:.2e} (<1e-6), potential {pot_err:.2e} (<1e-6), "
           f"{dt:.1f}s (<30s)")


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_reduction_identity(capsys):
    t0 = time.perf_counter()
    net = VectorFieldNet.create(160, 4, activation="tanh", seed=0, parameterization="endpoint")
    rng = np.random.default_rng(0)
    field = lambda A: np.ones_like(A)  # noqa: E731
    mismatches = 0
    for i in range(1000):
        seed = int(rng.integers(2**31))
        o = rng.uniform(-1, 1, size=4)
        a = sample_plain(net, o, InferenceConfig(seed=seed))
        b = sample_guided(net, o, InferenceConfig(seed=seed, guidance_weight=0.0), field)
        mismatches += not np.array_equal(a, b)
    dt = time.perf_counter() - t0
    record(capsys, 2, "reduction identity", mismatches == 0 and dt < 10,
           f"{mismatches} mismatches over 1000 pairs, {dt:.1f}s (<10s)")


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_oracle_equivalence(capsys):
    rng = np.random.default_rng(3)
    kde_err = 0.0
    for _ in range(1000):
        pts = rng.uniform(-1, 1, size=(int(rng.integers(1, 40)), 2))
        h = rng.uniform(0.1, 1.0)
        a = rng.uniform(-1.3, 1.3, size=2)
        total = 0.0
        for x in pts:
            sq = 0.0
            for k in range(2):
                sq += ((a[k] - x[k]) / h) ** 2
            total += np.exp(-0.5 * sq) / (2 * np.pi)
        ref = np.log(total / (len(pts) * h * h))
        kde_err = max(kde_err, abs(log_density(KdeModel(pts, h), a) - ref) / abs(ref))
    nn_bad = 0
    for _ in range(1000):
        anchors = rng.uniform(-1, 1, size=(int(rng.integers(1, 60)), 2))
        a = rng.uniform(-1.5, 1.5, size=2)
        dists = [np.sqrt(np.sum((a - x) ** 2)) for x in anchors]
        j = int(np.argmin(dists))
        d, n = distance_to_safe(SafeSet(anchors, 0.0, 0.5), a)
        nn_bad += not (d == dists[j] and np.array_equal(n, anchors[j]))
    maze = load_maze("large")
    x0, y0, x1, y1 = maze.bounds
    w = maze.walls
    s = np.linspace(0, 1, 2000)
    seg_bad = 0
    for _ in range(1000):
        p = rng.uniform([x0, y0], [x1, y1])
        q = p + rng.normal(scale=1.5, size=2)
        pts = p + s[:, None] * (q - p)
        inside = ((w[None, :, 0] <= pts[:, None, 0]) & (pts[:, None, 0] <= w[None, :, 2]) &
                  (w[None, :, 1] <= pts[:, None, 1]) & (pts[:, None, 1] <= w[None, :, 3]))
        if inside.any() != segment_collides(maze, p, q):
            # tolerated only inside the 1e-6 band around wall outlines
            gap = np.minimum.reduce([np.abs(pts[:, None, 0] - w[None, :, 0]),
                                     np.abs(pts[:, None, 0] - w[None, :, 2]),
                                     np.abs(pts[:, None, 1] - w[None, :, 1]),
                                     np.abs(pts[:, None, 1] - w[None, :, 3])])
            seg_bad += gap.min() > 1e-6
    ok = kde_err < 1e-10 and nn_bad == 0 and seg_bad == 0
    record(capsys, 3, "oracle equivalence", ok,
           f"kde rel err {kde_err:.1e} (<1e-10), nearest-anchor mismatches {nn_bad}, "
           f"segment disagreements {seg_bad} (1000 cases each)")


# -- 4 -----------------------------------------------------------------------

def test_criterion_4_training_sanity(capsys):
    cfg = RunConfig()
    t0 = time.perf_counter()
    maze = load_maze("medium")
    ds = gen_demoset(maze, 200, 80, seed=cfg.seed)
    net = VectorFieldNet.create(160, 4, tuple(cfg.hidden), cfg.activation, seed=cfg.seed,
                                parameterization=cfg.parameterization)
    tc = TrainConfig(epochs=300, loss_weighting=cfg.loss_weighting)
    _, losses = train(net, ds, tc, rng_seed=cfg.seed)
    ratio = losses[-30:].mean() / losses[:30].mean()
    obs, tg = ds.training_arrays()
    net = VectorFieldNet.create(160, 4, tuple(cfg.hidden), cfg.activation, seed=cfg.seed,
                                parameterization=cfg.parameterization)
    net, _ = train(net, (obs[:1], tg[:1]), TrainConfig(epochs=2000, loss_weighting=cfg.loss_weighting),
                   rng_seed=cfg.seed)
    rmse = max(np.sqrt(np.mean((sample_plain(net, obs[0], InferenceConfig(seed=s)) - tg[0]) ** 2))
               for s in range(10))
    dt = time.perf_counter() - t0
    ok = ratio < 0.25 and rmse < 0.05 and dt < 300
    record(capsys, 4, "training sanity", ok,
           f"final/first decile loss {ratio:.3f} (<0.25), single-demo RMSE {rmse:.4f} (<0.05), "
           f"{dt:.0f}s (<300s)")


# -- 5 and 6 -----------------------------------------------------------------

@pytest.fixture(scope="module")
def large_pipeline():
    cfg = RunConfig(episodes=200, repeats=3)
    t0 = time.perf_counter()
    maze = load_maze(cfg.maze)
    norm = Normalization.from_bounds(maze.bounds)
    ds = gen_demoset(maze, cfg.demo_count, cfg.horizon, cfg.seed, cfg.min_goal_separation, cfg.clearance)
    net = VectorFieldNet.create(ds.horizon * 2, 4, tuple(cfg.hidden), cfg.activation,
                                cfg.time_features, cfg.seed, parameterization=cfg.parameterization)
    net, losses = train(net, ds, cfg.train_config(), cfg.seed)
    kde = build_kde(ds, cfg.subsample, cfg.bandwidth, cfg.seed)
    field = build_field(kde, cfg.quantile, cfg.alpha, cfg.cap)
    suite = make_suite(maze, cfg.episodes, cfg.min_goal_separation, cfg.seed, cfg.repeats, cfg.clearance)
    build_time = time.perf_counter() - t0
    return dict(cfg=cfg, maze=maze, norm=norm, net=net, field=field, suite=suite,
                build_time=build_time, losses=losses)


def test_criterion_5_headline_safety_effect(capsys, large_pipeline):
    p = large_pipeline
    cfg = p["cfg"]
    t0 = time.perf_counter()
    fmp = run_bench(p["maze"], flow_policy(p["net"], cfg.inference_config(0.0)), p["suite"], p["norm"],
                    policy_tag="FMP")
    pf = run_bench(p["maze"], flow_policy(p["net"], cfg.inference_config(0.8), p["field"]), p["suite"],
                   p["norm"], policy_tag="PF2MP")
    dt = p["build_time"] + time.perf_counter() - t0
    with capsys.disabled():
        print("\n" + format_table([fmp, pf], "Large maze, 200 pairs x 3 repeats, N=5, lambda=0.8"))
    coll_ok = pf.collision_rate.mean <= 0.6 * fmp.collision_rate.mean
    succ_ok = abs(pf.success_rate.mean - fmp.success_rate.mean) <= 3.0
    record(capsys, 5, "headline safety effect", coll_ok and succ_ok and dt < 600,
           f"collision PF2MP {pf.collision_rate} vs FMP {fmp.collision_rate} "
           f"(need <= 0.6x: {'ok' if coll_ok else 'not met'}); success {pf.success_rate} vs "
           f"{fmp.success_rate} (need |diff| <= 3: {'ok' if succ_ok else 'not met'}); {dt:.0f}s (<600s)")


def test_criterion_6_lambda_ablation(capsys, large_pipeline):
    p = large_pipeline
    cfg = p["cfg"]
    t0 = time.perf_counter()
    abl = run_lambda_ablation(p["maze"], p["net"], p["field"], p["suite"], [0.01, 0.4, 0.8, 5.0],
                              p["norm"], config=cfg.inference_config())
    dt = time.perf_counter() - t0
    with capsys.disabled():
        print("\n" + format_table(abl.reports, "Guidance weight sweep (large maze)"))
    c = {lam: r.collision_rate.mean for lam, r in zip(abl.lambdas, abl.reports)}
    s = {lam: r.success_rate.mean for lam, r in zip(abl.lambdas, abl.reports)}
    coll_ok = c[0.8] < c[0.01]
    succ_ok = s[5.0] < s[0.8] - 5.0
    record(capsys, 6, "lambda ablation shape", coll_ok and succ_ok and dt < 300,
           f"collision(0.8) {c[0.8]:.1f} < collision(0.01) {c[0.01]:.1f}: "
           f"{'ok' if coll_ok else 'not met'}; success(5.0) {s[5.0]:.1f} < success(0.8) - 5 = "
           f"{s[0.8] - 5:.1f}: {'ok' if succ_ok else 'not met'}; {dt:.0f}s (<300s)")


# -- 7 -----------------------------------------------------------------------

def _cli_chain(root, cfg_path):
    c = ["--config", str(cfg_path)]
    art = ["--checkpoint", str(root / "m.pfck"), "--field", str(root / "f.pfpf")]
    codes = [
        main(["gen-demos", *c, "--out", str(root / "d.pfdm")]),
        main(["train", *c, "--demos", str(root / "d.pfdm"), "--out", str(root / "m.pfck")]),
        main(["build-field", *c, "--demos", str(root / "d.pfdm"), "--out", str(root / "f.pfpf")]),
        main(["eval", *c, *art, "--policy", "pf2mp", "--out", str(root / "e.json")]),
        main(["ablate", *c, *art, "--lambdas", "0.4,0.8", "--out", str(root / "a.json")]),
    ]
    return codes


def test_criterion_7_determinism_and_persistence(capsys, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"maze": "medium", "demo_count": 60, "epochs": 10, "episodes": 6,
                                    "repeats": 2, "hidden": [64, 64], "subsample": 1000, "seed": 5}))
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    codes = _cli_chain(a, cfg_path) + _cli_chain(b, cfg_path)
    names = ["d.pfdm", "d.pfdm.json", "m.pfck", "m.loss.csv", "f.pfpf", "e.json", "a.json"]
    differ = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    net, _ = persist.load_checkpoint(a / "m.pfck")
    net2, _ = persist.checkpoint_from_bytes(persist.checkpoint_bytes(net))
    rng = np.random.default_rng(0)
    A, O, t = rng.normal(size=(100, 160)), rng.normal(size=(100, 4)), rng.uniform(size=100)
    fwd_ok = np.array_equal(forward_batch(net, A, t, O)[0], forward_batch(net2, A, t, O)[0])
    field, _ = persist.load_field(a / "f.pfpf")
    field2, _ = persist.field_from_bytes(persist.field_bytes(field))
    Q = rng.uniform(-1.2, 1.2, size=(100, 2))
    fld_ok = np.array_equal(field_over_series(field, Q), field_over_series(field2, Q))
    ok = codes == [0] * 10 and not differ and fwd_ok and fld_ok
    record(capsys, 7, "determinism and persistence", ok,
           f"exit codes {codes}, differing artifacts {differ or 'none'}, "
           f"forward parity {fwd_ok}, field parity {fld_ok}")


# -- 8 -----------------------------------------------------------------------

def test_criterion_8_demo_integrity(capsys, tmp_path):
    bad = 0
    checked = 0
    for name in ("medium", "large"):
        maze = load_maze(name)
        ds = gen_demoset(maze, 1000, 80, seed=8)
        persist.save_demoset(tmp_path / f"{name}.pfdm", ds)
        loaded = persist.load_demoset(tmp_path / f"{name}.pfdm")
        for d in loaded.demos:
            checked += 1
            try:
                check_demonstration(maze, d, 80)
                if not (np.array_equal(d.waypoints[0], d.start) and np.array_equal(d.waypoints[-1], d.goal)):
                    raise ValueError("endpoints not exact")
            except ValueError:
                bad += 1
    record(capsys, 8, "demo integrity", bad == 0 and checked == 2000,
           f"{bad} violations over {checked} demos (two 1000-demo corpora, after save/load)")
