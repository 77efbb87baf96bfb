"""End-to-end acceptance battery.

One test per claim the package stands behind, each printing a single
PASS/FAIL line with the measured quantities next to the bound it must
meet.  Criteria 4/5 share one benchmark measurement and criterion 9 is
soft: it reports a direction and warns instead of failing, since the
direction is dataset dependent.
"""

import statistics
import time
import warnings

import numpy as np
import pytest

from bruno import bench, netdata, neurons, quant, tape, training, verify


def _line(capsys, num, ok, name, detail):
    tag = "PASS" if ok else "FAIL"
    with capsys.disabled():
        print(f"\n[criterion {num:2d}] {tag} {name}: {detail}", flush=True)


@pytest.fixture(scope="module")
def desk_dataset():
    return netdata.generate_dataset(
        netdata.DatasetSpec(samples_per_class=40, seed=0))


@pytest.fixture(scope="module")
def bench_pair():
    # repeats=1 (warm-up plus one timed run per mode): the vanilla tape
    # at this size peaks near 5 GB, so the run count is kept minimal
    t0 = time.perf_counter()
    rows = {m: bench.bench_cell(64, 200, m, substeps=1000, repeats=1)
            for m in ("bruno", "vanilla")}
    rows["wall"] = time.perf_counter() - t0
    return rows


def test_criterion_01_single_substep_identity(capsys):
    t0 = time.perf_counter()
    spec = netdata.NetworkSpec(kind="felif", n_in=6, n_hidden=6, n_out=2,
                               current_scale=5e-9)
    net = netdata.build_network(spec, seed=0)
    rng = np.random.default_rng(0)
    frames = rng.poisson(0.8, size=(2, 20, 6)).astype(np.float64)
    labels = np.array([0, 1])
    out = {}
    for mode in ("bruno", "vanilla"):
        cfg = training.TrainConfig(mode=mode, substeps=1, t_steps=20)
        res = training.forward_sequence(net, frames, cfg)
        loss = training.class_loss(res.counts, labels)
        grads = training.gradient_dict(res, loss)
        weights = {k: w.copy() for k, w in net.weights.items()}
        training.Adam(weights, lr=1e-3).step(grads)
        out[mode] = (tape.raw(res.counts), float(tape.raw(loss)), grads,
                     weights)
    b, v = out["bruno"], out["vanilla"]
    same_fwd = np.array_equal(b[0], v[0]) and b[1] == v[1]
    same_grad = all(np.array_equal(b[2][k], v[2][k]) for k in b[2])
    same_upd = all(np.array_equal(b[3][k], v[3][k]) for k in b[3])
    wall = time.perf_counter() - t0
    ok = same_fwd and same_grad and same_upd and wall < 1.0
    _line(capsys, 1, ok, "substeps=1 mode identity",
          f"forward={same_fwd} grads={same_grad} updates={same_upd} "
          f"bitwise over 8 neurons x 20 windows, {wall:.2f}s (< 1 s)")
    assert ok


def test_criterion_02_finite_difference(capsys):
    t0 = time.perf_counter()
    res = verify.check_finite_difference(rel_tol=1e-4, eps=1e-5)
    wall = time.perf_counter() - t0
    ok = res.passed and wall < 10.0
    _line(capsys, 2, ok, "fine-graph gradients vs central differences",
          f"{res.detail}, {wall:.1f}s (< 10 s)")
    assert ok


def test_criterion_03_window_jacobian_oracle(capsys):
    t0 = time.perf_counter()
    p = neurons.FeLifParams(v_thr=30.0)
    rng = np.random.default_rng(7)
    w0 = rng.normal(0.0, 0.3, size=(2, 2))
    u = rng.poisson(1.5, size=(3, 2)).astype(np.float64) + 1.0
    scale = 2.4e-10
    cfg = training.TrainConfig(mode="bruno", substeps=10, t_steps=3)

    # engine: three spliced windows on one tape, loss reads every state
    tp = tape.Tape()
    wl = tp.leaf(w0)
    v, pol = np.zeros(2), np.zeros(2)
    total = 0.0
    spliced = []
    for t in range(3):
        i_syn = tape.matvec(wl, u[t]) * scale
        v, pol = training._felif_window(v, pol, i_syn, cfg, p)
        total = total + tape.vsum(v) + 5.0 * tape.vsum(pol)
        spliced.append((tape.raw(v).copy(), tape.raw(pol).copy()))
    g_engine = tp.backward(total).wrt(wl)

    # oracle: the fine trajectory computed off the graph ...
    fine = [(np.zeros(2), np.zeros(2))]
    for t in range(3):
        vf, pf = neurons.felif_integrate(fine[-1][0], fine[-1][1],
                                         (w0 @ u[t]) * scale,
                                         cfg.dt_fine, cfg.substeps, p)
        fine.append((np.asarray(vf), np.asarray(pf)))
    traj_ok = all(np.array_equal(se[0], fe[0]) and np.array_equal(se[1], fe[1])
                  for se, fe in zip(spliced, fine[1:]))

    # ... then one-window coarse graphs at those points, composed by a
    # hand-written adjoint recursion with no splice or detach involved
    lam_v, lam_p = np.ones(2), np.full(2, 5.0)
    g_oracle = np.zeros((2, 2))
    for t in (2, 1, 0):
        tpw = tape.Tape()
        vp = tpw.leaf(fine[t][0])
        pp = tpw.leaf(fine[t][1])
        ww = tpw.leaf(w0)
        i_syn = tape.matvec(ww, u[t]) * scale
        vc, pc = neurons.felif_step_core(vp, pp, i_syn, cfg.dt_coarse, p)
        g = tpw.backward(tape.vsum(vc * lam_v) + tape.vsum(pc * lam_p))
        g_oracle += g.wrt(ww)
        lam_v = g.wrt(vp) + (1.0 if t > 0 else 0.0)
        lam_p = g.wrt(pp) + (5.0 if t > 0 else 0.0)

    err = float(np.max(np.abs(g_engine - g_oracle))
                / np.max(np.abs(g_oracle)))
    wall = time.perf_counter() - t0
    ok = traj_ok and err <= 1e-12 and wall < 1.0
    _line(capsys, 3, ok, "spliced gradient vs composed window Jacobians",
          f"trajectory exact={traj_ok}, rel err {err:.2e} (<= 1e-12), "
          f"{wall:.2f}s (< 1 s)")
    assert ok


def test_criterion_04_graph_size_ratio(capsys, bench_pair):
    nb = bench_pair["bruno"].peak_nodes
    nv = bench_pair["vanilla"].peak_nodes
    ratio = nb / nv
    same_spikes = (bench_pair["bruno"].spike_total
                   == bench_pair["vanilla"].spike_total)
    wall = bench_pair["wall"]
    ok = (bench_pair["bruno"].status == "ok"
          and bench_pair["vanilla"].status == "ok"
          and same_spikes and ratio <= 0.005 and wall < 300.0)
    _line(capsys, 4, ok, "graph size, 64 outputs x 200 windows x 1000 substeps",
          f"nodes {nb} vs {nv}, ratio {ratio:.5f} (<= 0.005), "
          f"identical forward spikes={same_spikes}, "
          f"measured in {wall:.0f}s (< 300 s)")
    assert ok


def test_criterion_05_backward_wall_clock(capsys, bench_pair):
    tb = bench_pair["bruno"].bwd_s
    tv = bench_pair["vanilla"].bwd_s
    wall = bench_pair["wall"]
    ok = np.isfinite(tb) and np.isfinite(tv) and tb <= tv / 5.0 and wall < 600.0
    _line(capsys, 5, ok, "backward time, same configuration",
          f"median bwd {tb:.3f}s vs {tv:.3f}s, speedup {tv / tb:.1f}x "
          f"(>= 5x), measured in {wall:.0f}s (< 600 s)")
    assert ok


def test_criterion_06_trace_fidelity(capsys):
    t0 = time.perf_counter()
    res = verify.check_fidelity()   # 308 pA, 50 ms, 1 us vs 10 ns
    wall = time.perf_counter() - t0
    ok = res.passed and wall < 120.0
    _line(capsys, 6, ok, "microsecond trace vs 10 ns reference",
          f"{res.detail}, {wall:.0f}s (< 120 s)")
    assert ok


def test_criterion_07_quantization_suite(capsys):
    t0 = time.perf_counter()
    n = 10 ** 5
    rng = np.random.default_rng(3)
    bias_ok = True
    bias_bits = []
    for x in (2.3, -0.5, 0.0):
        draws = np.asarray(quant.sround(np.full(n, x), rng))
        frac = x - np.floor(x)
        sigma = float(np.sqrt(frac * (1.0 - frac) / n))
        err = abs(float(draws.mean()) - x)
        this = err <= 4.0 * sigma if sigma > 0.0 else err == 0.0
        bias_ok = bias_ok and this
        bias_bits.append(f"x={x}: |bias|={err:.1e}")

    card_ok = True
    for bits in (3, 4, 8):
        spec = quant.QuantSpec(bits=bits)
        levels, _ = quant.quantize_array(rng.normal(0, 0.5, (48, 48)),
                                         spec, rng)
        card_ok = card_ok and (np.unique(levels).size <= 2 ** bits - 1
                               and np.abs(levels).max() <= spec.max_index)

    tp = tape.Tape()
    w = tp.leaf(np.array([0.1, -0.25, 5.0]))
    out = quant.quantize_ste(w, quant.QuantSpec(bits=3), scale=0.1,
                             stochastic=False)
    g = tp.backward(tape.vsum(out)).wrt(w)
    ste_ok = np.array_equal(g, [1.0, 1.0, 0.0])

    wall = time.perf_counter() - t0
    ok = bias_ok and card_ok and ste_ok and wall < 30.0
    _line(capsys, 7, ok, "rounding bias, level grid, straight-through",
          f"{'; '.join(bias_bits)} (4-sigma at 1e5 draws); "
          f"cardinality ok={card_ok}; gradient [1,1,0] exact={ste_ok}; "
          f"{wall:.1f}s (< 30 s)")
    assert ok


def test_criterion_08_learnability(capsys, desk_dataset):
    t0 = time.perf_counter()
    cfg_l, spec_l = training.default_cell("lif",
                                          overrides={"epochs": 50, "seed": 0})
    net_l = netdata.build_network(spec_l, seed=cfg_l.seed)
    run_l = training.train(net_l, desk_dataset, cfg_l)
    best_train = max(e["train_acc"] for e in run_l.epochs)

    cfg_f, spec_f = training.default_cell("felif", overrides={"seed": 0})
    net_f = netdata.build_network(spec_f, seed=cfg_f.seed)
    run_f = training.train(net_f, desk_dataset, cfg_f)

    wall = time.perf_counter() - t0
    ok = (run_l.status == "completed" and best_train >= 0.90
          and run_f.status == "completed" and run_f.test_acc >= 0.80
          and wall < 900.0)
    _line(capsys, 8, ok, "desk-scale task is learned",
          f"lif train acc {best_train:.3f} (>= 0.90 within 50 epochs); "
          f"felif spliced test acc {run_f.test_acc:.3f} (>= 0.80); "
          f"{wall:.0f}s (< 900 s)")
    assert ok


def test_criterion_09_low_bit_direction(capsys, desk_dataset):
    seeds = [0, 1, 2, 3, 4]
    runs = bench.grid_run(["lif", "felif"], [0, 3], seeds, desk_dataset,
                          base_config={"epochs": 18, "substeps": 200})
    acc = {(r.arch, r.bits, r.seed): r.test_acc for r in runs}
    bad = [f"{r.arch}/{r.bits}/s{r.seed}:{r.status}" for r in runs
           if r.status != "completed"]
    drop = {arch: statistics.median(acc[(arch, 0, s)] - acc[(arch, 3, s)]
                                    for s in seeds)
            for arch in ("lif", "felif")}
    ok = drop["felif"] < drop["lif"] and not bad
    detail = (f"median 3-bit drop felif {drop['felif']:+.3f} vs "
              f"lif {drop['lif']:+.3f} over {len(seeds)} seeds"
              + (f"; failed cells: {bad}" if bad else ""))
    _line(capsys, 9, ok, "3-bit robustness direction (soft)", detail)
    if not ok:
        warnings.warn("soft criterion: 3-bit accuracy drop direction not "
                      "reproduced on this dataset: " + detail)


def test_criterion_10_fine_graph_explosion_is_reported(capsys):
    t0 = time.perf_counter()
    t_steps, substeps = 500, 1000
    u = 230.0                       # drive charge per window, V-equivalents
    c_tot = 0.558e-12 + 15e-15
    scale = 1e-9
    a = u * c_tot / 1e-3 / scale
    spec = netdata.NetworkSpec(kind="felif", n_in=2, n_hidden=2, n_out=2,
                               hidden=neurons.LifParams(alpha=1e-3, beta=1e-3),
                               out_felif=neurons.FeLifParams(v_thr=500.0),
                               current_scale=scale, w_gain=1.0)
    net = netdata.build_network(spec, seed=0)
    # hidden unit k fires exactly on channel k's windows; the
    # antisymmetric output rows then flip the output drive sign every
    # window, so the film re-switches each window and nothing ever
    # crosses threshold to cut the chain
    net.weights["w_in"] = np.array([[8.0, 0.0], [0.0, 8.0]])
    net.weights["w_out"] = np.array([[a, -a], [-a, a]])
    w0 = {k: w.copy() for k, w in net.weights.items()}
    frames = np.zeros((1, t_steps, 2))
    frames[0, 0::2, 0] = 1.0
    frames[0, 1::2, 1] = 1.0
    empty = (np.zeros((0, t_steps, 2)), np.zeros(0, dtype=np.int64))
    ds = {"train": (frames, np.array([0])), "val": empty, "test": empty}
    cfg = training.TrainConfig(mode="vanilla", substeps=substeps,
                               t_steps=t_steps, epochs=1, lr=1e-3, seed=0)

    run = training.train(net, ds, cfg)

    wall = time.perf_counter() - t0
    reported = run.status.startswith("gradient-explosion")
    untouched = all(np.array_equal(net.weights[k], w0[k]) for k in w0)
    finite = all(np.isfinite(w).all() for w in net.weights.values())
    ok = reported and untouched and finite and not run.epochs
    _line(capsys, 10, ok, "full fine-grid backward overflow is caught",
          f"status {run.status!r}; weights finite={finite} "
          f"untouched={untouched}; {wall:.0f}s")
    assert ok
