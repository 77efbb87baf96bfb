"""Self-checks built on independently written references.

Every check here reconstructs its expected answer from scratch: a slow
scalar reference integrator for the membrane traces, central finite
differences for gradients, brute-force statistics for the stochastic
rounding.  None of them call into the code path they are checking to
produce the expectation, so a pass means two separate derivations
agree, not that one function equals itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import neurons, netdata, quant, tape, training
from .neurons import FeLifParams, LifParams

__all__ = [
    "CheckResult",
    "reference_trace",
    "check_fidelity",
    "check_finite_difference",
    "check_splice_identity",
    "check_rounding",
    "run_all",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def reference_trace(p: FeLifParams, i_syn: float, t_end: float,
                    dt: float = 1e-8):
    """Scalar reference run in plain Python floats.

    Textbook update order, written without looking at the production
    integrator: polarization relaxes toward the signed saturation
    value with the field-activated time constant, then the membrane
    absorbs the synaptic, leak and displacement currents.  Meant to be
    run at a much smaller dt than the model under test.
    """
    c_tot = p.c0 + p.c_par
    n = int(round(t_end / dt))
    v = 0.0
    pol = 0.0
    v_out = np.empty(n)
    p_out = np.empty(n)
    spikes = []
    exp = math.exp
    for k in range(n):
        e = v / p.d_fe
        if e == 0.0:
            pol_new = pol
        else:
            barrier = (p.e_a / abs(e)) ** p.alpha_merz
            # exp(709) is the float64 ceiling; beyond it the rate is
            # zero to machine precision anyway
            if barrier > 700.0:
                pol_new = pol
            else:
                rate = exp(-barrier) / p.tau0
                target = p.p_s if e > 0.0 else -p.p_s
                pol_new = pol + dt * rate * (target - pol)
                if pol_new > p.p_s:
                    pol_new = p.p_s
                elif pol_new < -p.p_s:
                    pol_new = -p.p_s
        i_p = p.area * (pol_new - pol) / dt
        v = v + dt * (i_syn - v / p.r_leak - i_p) / c_tot
        pol = pol_new
        if v >= p.v_thr:
            spikes.append((k + 1) * dt)
            v = 0.0
            pol = 0.0
        v_out[k] = v
        p_out[k] = pol
    t = (np.arange(n, dtype=np.float64) + 1.0) * dt
    return {"t": t, "v": v_out, "pol": p_out, "spike_t": spikes}


def check_fidelity(p: FeLifParams | None = None, i_syn: float = 308e-12,
                   t_end: float = 50e-3, dt_model: float = 1e-6,
                   dt_ref: float = 1e-8) -> CheckResult:
    """Production integrator vs the fine reference under DC drive.

    Passes when, before the first spike of either trace, the membrane
    voltages agree within 1% of threshold, the first spike times agree
    within 100 us, and the trace has the expected shape: a fast charge
    toward the switching knee, a long dwell while the film polarizes,
    full polarization before firing, then a fast run to threshold.
    """
    p = p or FeLifParams()
    ref = reference_trace(p, i_syn, t_end, dt_ref)
    mod = neurons.simulate_felif(p, i_syn, t_end, dt_model)
    stride = int(round(dt_model / dt_ref))
    v_ref = ref["v"][stride - 1::stride]
    v_mod = mod["v"][:v_ref.size]

    if not ref["spike_t"] or not mod["spike_t"]:
        return CheckResult("fidelity", False,
                           f"no spike within {t_end * 1e3:g} ms "
                           f"(ref {len(ref['spike_t'])}, model {len(mod['spike_t'])})")
    t1_ref = ref["spike_t"][0]
    t1_mod = mod["spike_t"][0]
    spike_err = abs(t1_ref - t1_mod)
    n_cmp = int(min(t1_ref, t1_mod) / dt_model) - 1
    dv_max = float(np.max(np.abs(v_mod[:n_cmp] - v_ref[:n_cmp])))

    # shape of the model trace up to its first spike
    k1 = int(t1_mod / dt_model) - 1
    v = mod["v"][:k1]
    pol = mod["pol"][:k1]
    dv = np.diff(v)
    early = float(np.mean(dv[:200]))
    knee = (v[1:] > 0.9) & (v[1:] < 1.3)
    knee_rate = float(np.mean(dv[knee])) if knee.any() else float("inf")
    late = float(np.mean(dv[-200:]))
    shape_ok = (knee.sum() > 100
                and knee_rate < 0.25 * early
                and late > 2.0 * knee_rate
                and pol[-1] >= 0.99 * p.p_s)

    ok = (dv_max <= 0.01 * p.v_thr and spike_err <= 100e-6 and shape_ok)
    return CheckResult(
        "fidelity", ok,
        f"max|dV|={dv_max * 1e3:.3f} mV (limit {10 * p.v_thr:.0f} mV), "
        f"first spike {t1_mod * 1e3:.3f} vs {t1_ref * 1e3:.3f} ms, "
        f"shape {'ok' if shape_ok else 'BAD'}")


def check_finite_difference(seed: int = 0, rel_tol: float = 1e-4,
                            eps: float = 1e-5) -> CheckResult:
    """Full fine-graph gradient vs central differences, all 10 weights.

    Runs subthreshold (no spikes, no resets) so the forward is smooth
    and the exact-graph gradient must match finite differences to
    discretization error.  The loss reads membrane and polarization
    directly rather than spike counts, which are locally constant.
    """
    rng = np.random.default_rng(seed)
    p = FeLifParams(v_thr=30.0)
    w0 = rng.normal(0.0, 0.3, size=(2, 5))
    x = rng.poisson(1.0, size=(5, 5)).astype(np.float64)
    cfg = training.TrainConfig(mode="vanilla", substeps=8, t_steps=5)

    def run(w, record):
        tp = tape.Tape()
        wl = tp.leaf(w) if record else w
        v = np.zeros(2)
        pol = np.zeros(2)
        total = 0.0
        for t in range(5):
            # drive tuned so V reaches the switching knee and the
            # polarization moves but stays well inside +-p_s; at the
            # saturation clamp one-sided FD would be meaningless
            i_syn = tape.matvec(wl, x[t]) * 2.4e-10
            v, pol = training._felif_window(v, pol, i_syn, cfg, p)
            total = total + tape.vsum(v) + 5.0 * tape.vsum(pol)
        if record:
            return total, tp, wl
        return float(tape.raw(total))

    loss, tp, wl = run(w0, True)
    g = tp.backward(loss).wrt(wl)
    worst = 0.0
    for idx in np.ndindex(w0.shape):
        wp = w0.copy(); wp[idx] += eps
        wm = w0.copy(); wm[idx] -= eps
        fd = (run(wp, False) - run(wm, False)) / (2 * eps)
        denom = max(abs(fd), abs(g[idx]), 1e-12)
        worst = max(worst, abs(fd - g[idx]) / denom)
    return CheckResult("finite-difference", worst <= rel_tol,
                       f"max rel err {worst:.2e} over {w0.size} weights "
                       f"(limit {rel_tol:g})")


def check_splice_identity(seed: int = 0) -> CheckResult:
    """substeps=1 spliced training must equal the plain fine graph bitwise."""
    spec = netdata.NetworkSpec(kind="felif", n_in=6, n_hidden=8, n_out=3,
                               current_scale=5e-9)
    net = netdata.build_network(spec, seed=seed)
    rng = np.random.default_rng(seed)
    frames = rng.poisson(0.8, size=(4, 12, 6)).astype(np.float64)
    labels = np.array([0, 1, 2, 0])
    grads = {}
    for mode in ("bruno", "vanilla"):
        cfg = training.TrainConfig(mode=mode, substeps=1, t_steps=12)
        res = training.forward_sequence(net, frames, cfg)
        loss = training.class_loss(res.counts, labels)
        grads[mode] = training.gradient_dict(res, loss)
    same = all(np.array_equal(grads["bruno"][k], grads["vanilla"][k])
               for k in grads["bruno"])
    return CheckResult("splice-identity", same,
                       "substeps=1 gradients bitwise equal" if same
                       else "substeps=1 gradients differ")


def check_rounding(bits: int = 3, n: int = 200_000,
                   seed: int = 0) -> CheckResult:
    """Stochastic rounding is unbiased and stays on the level grid."""
    rng = np.random.default_rng(seed)
    frac = 0.3
    draws = np.asarray(quant.sround(np.full(n, 4.0 + frac), rng))
    mean = float(draws.mean())
    sigma = math.sqrt(frac * (1 - frac) / n)
    bias_ok = abs(mean - (4.0 + frac)) <= 4.0 * sigma

    spec = quant.QuantSpec(bits=bits)
    w = rng.normal(0.0, 0.4, size=(64, 64))
    levels, s_w = quant.quantize_array(w, spec, rng)
    n_levels = np.unique(levels).size
    grid_ok = (n_levels <= 2 ** bits - 1
               and levels.max() <= 2 ** (bits - 1) - 1
               and levels.min() >= -(2 ** (bits - 1) - 1))
    ok = bias_ok and grid_ok
    return CheckResult(
        "stochastic-rounding", ok,
        f"mean {mean:.4f} vs {4 + frac}, {n_levels} levels used "
        f"(max {2 ** bits - 1})")


def run_all(fast: bool = False) -> list[CheckResult]:
    """Run every check and print one PASS/FAIL line each.

    fast=True swaps the 10 ns fidelity reference for a 100 ns one,
    which keeps the whole battery under a few seconds.
    """
    checks = [
        check_fidelity(dt_ref=1e-7 if fast else 1e-8),
        check_finite_difference(),
        check_splice_identity(),
        check_rounding(),
    ]
    for c in checks:
        print(c.line())
    return checks
