"""Acceptance gate: one test per release criterion, each printing a verdict line.

Heavy criteria pin their full protocol (target, seeds, budgets) here so a
green run certifies the stated tolerances, not a lucky configuration.
"""

import time

import numpy as np

from charflow.cgen import CgTrainConfig, StudentNet, g_apply, multi_step, one_step, train_cg
from charflow.metrics import order_fit, w2_exact, w2_gaussian
from charflow.net import NetSpec, net_init
from charflow.oracle import (OracleContext, denoiser_exact, manifold_decompose, score_exact,
                             velocity_exact)
from charflow.rng import Rng
from charflow.sampler import TimeGrid, euler_flow, push_samples
from charflow.schedule import Schedule
from charflow.target import atomic_mixture, embed_target, sample_target, swiss_roll
from charflow.velocity import (TrainConfig, denoiser_loss, draw_batch, estimate_sigma_data,
                               make_denoiser, make_velocity, train, velocity_from_denoiser,
                               velocity_loss)
from charflow.verify import _gaussian_factors

LINEAR = Schedule("linear")
FOLLMER = Schedule("follmer")


def _report(num, name, ok, detail, elapsed, budget):
    status = "PASS" if ok and elapsed < budget else "FAIL"
    print(f"\nACCEPTANCE {num:2d} [{name}] {status}  {detail}  ({elapsed:.1f}s / budget {budget:.0f}s)")
    assert ok, f"criterion {num} ({name}): {detail}"
    assert elapsed < budget, f"criterion {num} exceeded its {budget:.0f}s budget ({elapsed:.1f}s)"


def test_01_oracle_identity_suite():
    start = time.time()
    rng = Rng(1001)
    families = [
        (atomic_mixture(np.array([[-1.0], [1.0]]), sigma=0.25), LINEAR),
        (atomic_mixture(np.array([[0.1, 0.2], [0.8, 0.6], [0.4, 0.9]]), sigma=0.5,
                        weights=np.array([0.5, 0.3, 0.2])), FOLLMER),
        (embed_target(atomic_mixture(np.array([[0.0], [1.0]]), sigma=0.4),
                      np.linalg.qr(Rng(7).normal((3, 1)))[0]), LINEAR),
    ]
    worst = 0.0
    for spec, sch in families:
        ctx = OracleContext(spec, sch)
        t = 0.01 + 0.98 * rng.uniform(1000)
        x = 3.0 * rng.normal((1000, spec.dim))
        a, b, da, db = sch.coeffs(t)
        b_star = velocity_exact(ctx, t, x)
        via_score = (db / b)[:, None] * x \
            + (a * a * (db / b - da / a))[:, None] * score_exact(ctx, t, x)
        den = lambda tt, X: denoiser_exact(ctx, tt, X)
        via_denoiser = velocity_from_denoiser(den, sch, t, x)
        worst = max(worst,
                    float(np.max(np.abs(via_score - b_star))),
                    float(np.max(np.abs(via_denoiser - b_star))))
    _report(1, "oracle-identities", worst < 1e-10,
            f"max cross-identity deviation {worst:.2e} (tol 1e-10, 1000 probes x 3 families)",
            time.time() - start, 5.0)


def test_02_euler_discretization_order():
    start = time.time()
    d, sigma, T = 2, 0.5, 0.9
    pts = []
    for K in (10, 20, 40, 80, 160):
        f_euler, _, f_star = _gaussian_factors(LINEAR, sigma, T, K)
        err = w2_gaussian(np.zeros(d), f_euler**2 * np.eye(d),
                          np.zeros(d), f_star**2 * np.eye(d))
        pts.append((1.0 / K, err))
    slope, _, r2 = order_fit(pts)
    _report(2, "euler-order", 0.9 <= slope <= 1.1,
            f"W2 endpoint error slope {slope:.3f} (r2 {r2:.5f}) over K in 10..160",
            time.time() - start, 10.0)


def test_03_exponential_integrator_superiority():
    start = time.time()
    sigma, T = 0.5, 0.9
    # linear schedule: the two maps coincide algebraically, so allow float ties
    ok = True
    rows = []
    for K in (10, 20, 40, 80, 160):
        f_euler, f_ei, f_star = _gaussian_factors(LINEAR, sigma, T, K)
        ei, eu = abs(f_ei - f_star), abs(f_euler - f_star)
        rows.append(f"K={K}:{ei:.2e}<={eu:.2e}")
        ok &= ei <= eu * (1.0 + 1e-12)
    for K in (10, 20, 40, 80, 160):
        f_euler, f_ei, f_star = _gaussian_factors(FOLLMER, sigma, T, K)
        ok &= abs(f_ei - f_star) < abs(f_euler - f_star)
    _report(3, "ei-beats-euler", ok,
            "linear ties within 1e-12, follmer strictly better at every K; " + " ".join(rows[:2]),
            time.time() - start, 10.0)


def _velocity_oracle_rmse(field, ctx, n_probe=8192, seed=900, T=0.9):
    data = sample_target(ctx.spec, n_probe, seed=seed)
    probe = draw_batch(data, ctx.schedule, T, n_probe, seed=seed + 1)
    b_star = velocity_exact(ctx, probe.t, probe.xt)
    b_hat = field(probe.t, probe.xt)
    return float(np.sqrt(np.mean(np.sum((b_hat - b_star) ** 2, axis=1))))


def test_04_velocity_training_vs_oracle():
    start = time.time()
    spec_target = atomic_mixture(np.array([[-1.0], [1.0]]), sigma=0.25)
    ctx = OracleContext(spec_target, LINEAR)
    errs = []
    for seed in (0, 1, 2):
        data = sample_target(spec_target, 16384, seed=seed + 200)
        net_spec = NetSpec(2, (64, 64), 1, activation="relu")
        config = TrainConfig(schedule=LINEAR, net_spec=net_spec, stop_time=0.9,
                             iterations=5000, batch_size=512, lr=1e-3, seed=seed,
                             loss="velocity")
        net, _ = train(config, data)
        errs.append(_velocity_oracle_rmse(make_velocity(net), ctx))
    med = float(np.median(errs))
    _report(4, "velocity-training", med <= 0.1,
            f"median time-averaged L2 error {med:.4f} over seeds 0,1,2 (tol 0.1; errs {np.round(errs, 4)})",
            time.time() - start, 120.0)


def test_05_gaussian_end_to_end_marginal():
    start = time.time()
    sigma, T, K, m, d = 0.5, 0.99, 200, 8192, 2
    ctx = OracleContext(atomic_mixture(np.zeros((1, d)), sigma=sigma), LINEAR)
    grid = TimeGrid(stop_time=T, steps=K)
    batch = push_samples("euler", lambda t, X: velocity_exact(ctx, t, X), m, d, grid, seed=77)
    target = float(np.sqrt(LINEAR.alpha(T) ** 2 + sigma**2 * LINEAR.beta(T) ** 2))
    std = batch.endpoints().std(axis=0)
    rel = float(np.max(np.abs(std - target) / target))
    _report(5, "gaussian-marginal", rel < 0.03,
            f"per-coordinate std {np.round(std, 5)} vs {target:.5f} (worst rel {rel:.4f}, tol 3%)",
            time.time() - start, 5.0)


def _swiss_roll_run(seed):
    T, K = 0.99, 100
    spec_target = swiss_roll()
    data = sample_target(spec_target, 4096, seed=seed * 100)
    holdout = sample_target(spec_target, 2048, seed=seed * 100 + 1)

    teacher_spec = NetSpec(3, (64, 64), 2, activation="silu")
    teacher_cfg = TrainConfig(schedule=FOLLMER, net_spec=teacher_spec, stop_time=T,
                              iterations=4000, batch_size=256, lr=1e-3, seed=seed * 100 + 2,
                              loss="denoiser")
    teacher_net, _ = train(teacher_cfg, data)
    sigma_data = estimate_sigma_data(data)
    denoiser = make_denoiser(teacher_net, FOLLMER, sigma_data)
    field = lambda t, X: velocity_from_denoiser(denoiser, FOLLMER, t, X)

    grid = TimeGrid(stop_time=T, steps=K)
    corpus = push_samples("euler", field, 2048, 2, grid, seed=seed * 100 + 3)
    euler_samples = corpus.endpoints()

    student_spec = NetSpec(4, (64, 64), 2, activation="silu")
    cg_cfg = CgTrainConfig(mode="regression", schedule=FOLLMER, net_spec=student_spec,
                           stop_time=T, iterations=3000, batch_size=128, lr=1e-3,
                           lambda_semigroup=0.1, pairs_per_particle=8,
                           triples_per_particle=4, seed=seed * 100 + 4,
                           sigma_data=sigma_data)
    student, _ = train_cg(cg_cfg, corpus=corpus)

    one = one_step(student, 2048, T, seed=seed * 100 + 5)
    multi = multi_step(student, np.array([0.0, T / 3, 2 * T / 3, T]), 2048, seed=seed * 100 + 5)
    return (w2_exact(one, holdout), w2_exact(euler_samples, holdout), w2_exact(multi, holdout))


def test_06_swiss_roll_one_step():
    start = time.time()
    results = np.array([_swiss_roll_run(seed) for seed in (1, 2, 3)])
    w2_one, w2_euler, w2_multi = np.median(results, axis=0)
    ok = (w2_one <= 1.5 * w2_euler) and (w2_multi <= w2_one + 0.02)
    _report(6, "swiss-roll-one-step", ok,
            f"median W2: one-step {w2_one:.4f} vs 1.5x euler-100 {1.5 * w2_euler:.4f}; "
            f"multi(4 nodes) {w2_multi:.4f} <= one-step + 0.02 "
            f"(per-seed rows {np.round(results, 4).tolist()})",
            time.time() - start, 600.0)


def test_07_semigroup_exactness():
    start = time.time()
    ctx = OracleContext(atomic_mixture(np.zeros((1, 2)), sigma=0.5), LINEAR)
    field = lambda t, X: velocity_exact(ctx, t, X)
    grid = TimeGrid(stop_time=0.9, steps=24)
    x0 = Rng(3).normal((8, 2))
    full = euler_flow(field, x0, grid)
    resumed = full[10].copy()
    for k in range(10, 24):
        resumed = resumed + (grid.nodes[k + 1] - grid.nodes[k]) * field(grid.nodes[k], resumed)
    euler_exact = np.array_equal(resumed, full[-1])

    student = StudentNet(net=net_init(NetSpec(4, (8,), 2), 1), schedule=LINEAR,
                         stop_time=0.9, sigma_data=1.0)
    x = Rng(4).normal((64, 2))
    diag_exact = all(np.array_equal(g_apply(student, t, t, x), x) for t in (0.0, 0.45, 0.9))

    from charflow.cgen import semigroup_penalty
    from charflow.verify import _trajectory_lookup

    batch = push_samples("euler", field, 6, 2, grid, seed=9)
    raw = Rng(5).integers(24, (60, 3))
    raw.sort(axis=1)
    triples = np.concatenate([Rng(6).integers(6, (60,))[:, None], raw], axis=1)
    pen, _ = semigroup_penalty(_trajectory_lookup(batch), batch, triples)

    ok = euler_exact and diag_exact and pen == 0.0
    _report(7, "semigroup-exactness", ok,
            f"euler composition bit-exact={euler_exact}, g(t,t,x)=x exact={diag_exact}, "
            f"lookup penalty={pen}",
            time.time() - start, 1.0)


def test_08_manifold_decomposition():
    start = time.time()
    rng = Rng(1313)
    frame = np.linalg.qr(rng.normal((3, 1)))[0]
    emb = embed_target(atomic_mixture(np.array([[-1.0], [1.0]]), sigma=0.5), frame)
    ctx = OracleContext(emb, LINEAR)
    t = 0.99 * rng.uniform(1000)
    x = 2.0 * rng.normal((1000, 3))
    tang, norm, _ = manifold_decompose(ctx, t, x)
    worst = float(np.max(np.abs(tang + norm - velocity_exact(ctx, t, x))))
    _report(8, "manifold-decomposition", worst < 1e-8,
            f"max |tangential + normal - velocity| = {worst:.2e} over 1000 probes (tol 1e-8)",
            time.time() - start, 5.0)


def test_09_gradient_correctness():
    from charflow.cgen import (global_loss, local_loss, make_teacher_flow, regression_loss,
                               sample_index_pairs, semigroup_penalty)

    start = time.time()
    rng = Rng(4242)
    target = atomic_mixture(np.array([[-1.0], [1.0]]), sigma=0.25)
    ctx = OracleContext(target, LINEAR)
    data = sample_target(target, 512, seed=500)
    worst = 0.0
    checked = 0

    def fd_check(params, loss_at, grad, h=1e-6):
        nonlocal worst, checked
        v = rng.normal(params.shape)
        v /= np.linalg.norm(v)
        saved = params.copy()
        params[:] = saved + h * v
        up = loss_at()
        params[:] = saved - h * v
        dn = loss_at()
        params[:] = saved
        fd = (up - dn) / (2 * h)
        an = float(grad @ v)
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-9)
        worst = max(worst, rel)
        checked += 1
        return rel

    for trial in range(4):
        hidden = (int(4 + 8 * rng.uniform()), int(4 + 8 * rng.uniform()))
        act = "silu" if rng.uniform() < 0.5 else "relu"
        batch = draw_batch(data, LINEAR, 0.9, 16, seed=600 + trial)

        net = net_init(NetSpec(2, hidden, 1, activation=act), trial)
        _, grad = velocity_loss(net, batch)
        fd_check(net.params, lambda: velocity_loss(net, batch)[0], grad)

        net2 = net_init(NetSpec(2, hidden, 1, activation=act), trial + 50)
        _, grad2 = denoiser_loss(net2, batch, 0.9, LINEAR)
        fd_check(net2.params, lambda: denoiser_loss(net2, batch, 0.9, LINEAR)[0], grad2)

        student = StudentNet(net_init(NetSpec(3, hidden, 1, activation=act), trial + 100),
                             LINEAR, 0.9, sigma_data=0.9)
        corpus = push_samples("euler", lambda t, X: velocity_exact(ctx, t, X), 8, 1,
                              TimeGrid(0.9, 10), seed=700 + trial)
        pairs = np.concatenate([rng.integers(8, (12,))[:, None],
                                sample_index_pairs(rng, 12, 10)], axis=1)
        _, grad3 = regression_loss(student, corpus, pairs)
        fd_check(student.net.params, lambda: regression_loss(student, corpus, pairs)[0], grad3)

        raw = rng.integers(10, (12, 3))
        raw.sort(axis=1)
        triples = np.concatenate([rng.integers(8, (12,))[:, None], raw], axis=1)
        _, grad4 = semigroup_penalty(student, corpus, triples)
        if grad4 is not None and np.linalg.norm(grad4) > 0:
            fd_check(student.net.params, lambda: semigroup_penalty(student, corpus, triples)[0], grad4)

        _, grad5 = local_loss(student, batch)
        fd_check(student.net.params, lambda: local_loss(student, batch)[0], grad5)

        offline = StudentNet(net_init(NetSpec(3, hidden, 1, activation=act), trial + 150),
                             LINEAR, 0.9, sigma_data=0.9)
        teacher = make_teacher_flow(lambda t, X: denoiser_exact(ctx, t, X), LINEAR, steps=2)
        u = batch.t + (0.9 - batch.t) * rng.uniform(16)
        s = u + (0.9 - u) * rng.uniform(16)
        _, grad6 = global_loss(student, offline, teacher, batch, u, s)
        fd_check(student.net.params, lambda: global_loss(student, offline, teacher, batch, u, s)[0],
                 grad6)

    _report(9, "gradient-correctness", worst <= 1e-4 and checked >= 20,
            f"{checked} loss-gradient checks, worst FD relative error {worst:.2e} (tol 1e-4)",
            time.time() - start, 30.0)


def test_10_sample_size_monotonicity():
    start = time.time()
    spec_target = atomic_mixture(np.array([[-1.0], [1.0]]), sigma=0.25)
    ctx = OracleContext(spec_target, LINEAR)
    medians = []
    for n in (1024, 4096, 16384):
        errs = []
        for seed in (0, 1, 2):
            data = sample_target(spec_target, n, seed=seed + 300)
            net_spec = NetSpec(2, (64, 64), 1, activation="relu")
            config = TrainConfig(schedule=LINEAR, net_spec=net_spec, stop_time=0.9,
                                 iterations=3000, batch_size=512, lr=1e-3, seed=seed,
                                 loss="velocity")
            net, _ = train(config, data)
            errs.append(_velocity_oracle_rmse(make_velocity(net), ctx))
        medians.append(float(np.median(errs)))
    ok = medians[0] > medians[1] > medians[2]
    _report(10, "sample-size-monotonicity", ok,
            f"median oracle error by n: 1024 -> {medians[0]:.4f}, 4096 -> {medians[1]:.4f}, "
            f"16384 -> {medians[2]:.4f} (must strictly decrease)",
            time.time() - start, 360.0)
