"""Neuron models: ferroelectric integrate-and-fire and discrete LIF.

The ferroelectric cell (FeLIF) couples a leaky membrane capacitance to
a polarization charge reservoir.  Charge balance on the membrane node:

    (C0 + Cpar) dV/dt = I_syn - V / R_leak - A dP/dt

and the film polarization relaxes toward its saturated value with a
field-dependent switching time following the Merz law:

    dP/dt = (sign(E) Ps - P) / tau(E),  tau(E) = tau0 exp((Ea / |E|)^alpha)

where E = V / d_fe is the field across the film.  tau spans tens of
orders of magnitude: below the activation field switching is frozen
(tau -> infinity), above it switching completes within picoseconds.
That stiffness is why the polarization update is clamped to |P| <= Ps;
with the clamp, plain explicit Euler at microsecond steps is stable and
accurate at the operating currents (see `verify.check_felif_fidelity`).

All step functions are written against the polymorphic ops in
`bruno.tape`, so the same code integrates off the tape (plain numpy)
and on the tape (recording the gradient graph), producing bit-identical
trajectories in both modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import tape

__all__ = [
    "FeLifParams",
    "LifParams",
    "NeuronState",
    "tau_fe",
    "merz_rate",
    "felif_derivatives",
    "felif_step_core",
    "felif_integrate",
    "felif_step",
    "simulate_felif",
    "lif_step",
    "save_params",
    "load_params",
    "parse_kv_text",
    "format_kv",
]


@dataclass
class FeLifParams:
    """Physical and circuit parameters of one ferroelectric cell.

    Device constants (area through alpha_merz) come from capacitor
    characterization; d_fe, r_leak and v_thr are circuit-level choices.
    The defaults give a membrane time constant near 100 ms and a
    threshold reachable by sub-nanoamp synaptic currents.
    """

    area: float = 25e-12        # film area, m^2
    c0: float = 0.558e-12       # dielectric capacitance, F
    c_par: float = 15e-15       # parasitic capacitance, F
    p_s: float = 0.22           # saturation polarization, C/m^2
    e_a: float = 1.27e9         # activation field, V/m
    tau0: float = 0.1e-12       # switching time prefactor, s
    alpha_merz: float = 1.3     # Merz exponent
    d_fe: float = 10e-9         # film thickness, m
    r_leak: float = 1.75e11     # membrane leak, ohm
    v_thr: float = 3.0          # firing threshold, V
    t_refr: float = 0.0         # refractory hold, s
    jac_guard: float = 0.0      # backward damping bound; 0 disables

    def __post_init__(self):
        for name in ("area", "c0", "p_s", "e_a", "tau0", "alpha_merz",
                     "d_fe", "r_leak", "v_thr"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.c_par < 0.0 or self.t_refr < 0.0 or self.jac_guard < 0.0:
            raise ValueError("c_par, t_refr and jac_guard must be non-negative")

    @property
    def c_total(self) -> float:
        return self.c0 + self.c_par


@dataclass
class LifParams:
    """Discrete leaky integrate-and-fire cell updated once per window.

    alpha and beta are the per-step decay factors of membrane potential
    and synaptic current.  soft_reset subtracts the threshold on spike;
    with soft_reset False the membrane is gated to zero instead.
    """

    alpha: float = 0.9
    beta: float = 0.8
    v_thr: float = 1.0
    soft_reset: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.v_thr <= 0.0:
            raise ValueError("v_thr must be positive")


@dataclass
class NeuronState:
    """Scalar FeLIF state: membrane voltage, polarization, refractory."""

    v_mem: float = 0.0
    p_pol: float = 0.0
    refr_left: float = 0.0


def tau_fe(e_field, p: FeLifParams):
    """Merz switching time tau0 * exp((Ea/|E|)^alpha) in seconds.

    Saturates to +inf as |E| -> 0.  Diagnostic helper on raw arrays;
    the differentiable path uses `merz_rate`.
    """
    ae = np.abs(np.asarray(e_field, dtype=np.float64))
    with np.errstate(divide="ignore", over="ignore"):
        return p.tau0 * np.exp((p.e_a / ae) ** p.alpha_merz)


def _merz_forward(e, aux):
    ea, tau0, alpha = aux
    # (ea/|e|)^alpha may overflow to +inf for vanishing fields; that is
    # benign because exp(-inf) is exactly 0
    with np.errstate(divide="ignore", over="ignore"):
        expo = (ea / np.abs(e)) ** alpha
    # exp(-expo) underflows cleanly to 0 for weak fields; never overflows
    return np.exp(-expo) / tau0


def _merz_vjp(g, e, rate, aux):
    ea, tau0, alpha = aux
    ae = np.abs(e)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        slope = rate * (alpha * (ea / ae) ** alpha / ae)
        return np.where(rate > 0.0, g * slope * np.sign(e), 0.0)


def merz_rate(e_field, p: FeLifParams):
    """Switching rate 1/tau(E); exactly zero in the frozen-field limit.

    Implemented as rate = exp(-(Ea/|E|)^alpha) / tau0, whose exponent
    is never positive, so the forward pass cannot overflow no matter
    how small the field gets.  The analytic gradient carries the rate
    as a factor and is therefore zero wherever the rate underflows.
    """
    aux = (p.e_a, p.tau0, p.alpha_merz)
    return tape.custom_unary(e_field, _merz_forward, _merz_vjp, aux)


def felif_derivatives(v_mem, p_pol, i_syn, p: FeLifParams):
    """Instantaneous (dV/dt, dP/dt) of the cell at the given state."""
    e = v_mem * (1.0 / p.d_fe)
    rate = merz_rate(e, p)
    dpdt = (tape.sign(e) * p.p_s - p_pol) * rate
    i_leak = v_mem * (1.0 / p.r_leak)
    dvdt = (i_syn - i_leak - p.area * dpdt) * (1.0 / p.c_total)
    return dvdt, dpdt


def _guard_rate(rate, v_raw, p_raw, dt, p: FeLifParams):
    """Damp the backward response of the switching rate to the membrane.

    A start-of-step voltage perturbation dV carries extra charge C dV,
    and the film cannot absorb more than that over the step, so the
    honest linearized response (A/C) dt |Ps_target - P| |d rate/dV|
    never exceeds ~1.  The explicit-Euler linearization violates that
    bound by orders of magnitude around the switching knee, where the
    true flow is strongly attracting; scaling the rate gradient back to
    the bound recovers the attractor's sensitivity.  Forward values are
    untouched, and the scaling is inactive wherever the linearization
    already respects the bound.
    """
    r_raw = tape.raw(rate)
    av = np.abs(v_raw)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        expo = (p.e_a * p.d_fe / av) ** p.alpha_merz
        slope = r_raw * (p.alpha_merz * expo / np.maximum(av, 1e-300))
    rprime = np.where(r_raw > 0.0, slope, 0.0)
    head = np.abs(np.sign(v_raw) * p.p_s - p_raw)
    lin = (p.area / p.c_total) * dt * head * rprime
    damp = np.where(lin > p.jac_guard,
                    p.jac_guard / np.maximum(lin, 1e-300), 1.0)
    return tape.ste(rate, r_raw, damp)


def felif_step_core(v_mem, p_pol, i_syn, dt, p: FeLifParams):
    """One explicit-Euler substep without threshold handling.

    The polarization update is clamped to +-Ps, and the polarization
    current drawn from the membrane is computed from the post-clamp
    change, so membrane charge stays consistent with what the film
    actually absorbed even when a substep overshoots saturation.  With
    jac_guard > 0 the backward pass through the switching rate is
    damped to the charge-conservation bound (see `_guard_rate`).
    """
    e = v_mem * (1.0 / p.d_fe)
    rate = merz_rate(e, p)
    if p.jac_guard > 0.0 and isinstance(rate, tape.Value):
        rate = _guard_rate(rate, tape.raw(v_mem), tape.raw(p_pol), dt, p)
    dpdt = (tape.sign(e) * p.p_s - p_pol) * rate
    p_next = tape.clamp(p_pol + dpdt * dt, -p.p_s, p.p_s)
    dp_eff = p_next - p_pol
    i_leak = v_mem * (1.0 / p.r_leak)
    v_next = v_mem + ((i_syn - i_leak) * (dt / p.c_total)
                      - dp_eff * (p.area / p.c_total))
    return v_next, p_next


def felif_integrate(v_mem, p_pol, i_syn, dt, steps, p: FeLifParams):
    """Run `steps` Euler substeps under a constant synaptic current.

    Pure numpy when all arguments are raw; records the full step graph
    when any argument is a tape Value.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    for _ in range(steps):
        v_mem, p_pol = felif_step_core(v_mem, p_pol, i_syn, dt, p)
    if not isinstance(v_mem, tape.Value):
        if not (np.all(np.isfinite(v_mem)) and np.all(np.isfinite(p_pol))):
            raise tape.NumericInstabilityError(
                f"non-finite neuron state after {steps} substeps at dt={dt:g}"
            )
    return v_mem, p_pol


def felif_step(state: NeuronState, i_syn: float, dt: float,
               p: FeLifParams) -> tuple[NeuronState, bool]:
    """Advance one scalar cell by dt with threshold, reset, refractory.

    On crossing v_thr both V and P reset to zero (the output discharge
    depolarizes the film) and the cell holds at rest for t_refr.
    """
    if state.refr_left > 0.0:
        nxt = NeuronState(0.0, state.p_pol, max(0.0, state.refr_left - dt))
        return nxt, False
    v, pol = felif_step_core(state.v_mem, state.p_pol, i_syn, dt, p)
    v = float(v)
    pol = float(pol)
    if not (math.isfinite(v) and math.isfinite(pol)):
        raise tape.NumericInstabilityError(
            f"non-finite neuron state at dt={dt:g}: V={v}, P={pol}"
        )
    if v >= p.v_thr:
        return NeuronState(0.0, 0.0, p.t_refr), True
    return NeuronState(v, pol, 0.0), False


def simulate_felif(p: FeLifParams, i_syn: float, t_end: float, dt: float):
    """Constant-current scalar run; returns sampled traces and spikes.

    Keys of the returned dict: t, v, pol (arrays sampled after each
    step) and spike_t (list of spike times in seconds).
    """
    n = int(round(t_end / dt))
    t = (np.arange(n, dtype=np.float64) + 1.0) * dt
    v_trace = np.empty(n)
    p_trace = np.empty(n)
    spike_t = []
    state = NeuronState()
    for k in range(n):
        state, spiked = felif_step(state, i_syn, dt, p)
        if spiked:
            spike_t.append(t[k])
        v_trace[k] = state.v_mem
        p_trace[k] = state.p_pol
    return {"t": t, "v": v_trace, "pol": p_trace, "spike_t": spike_t}


def lif_step(v_mem, i_cur, drive, p: LifParams, slope: float = 10.0):
    """One discrete LIF update; returns (v_next, i_next, spikes).

    Synaptic current integrates the drive first, then the membrane
    integrates the current; spikes come from the surrogate-gradient
    threshold so the update is usable on the tape.
    """
    i_next = p.beta * i_cur + drive
    v_pre = p.alpha * v_mem + i_next
    s = tape.spike_sg(v_pre, p.v_thr, slope)
    # reset through a detached spike: the learning signal routes through
    # the surrogate on s itself, not through reset arithmetic, keeping
    # state-chain products across spikes from compounding
    if p.soft_reset:
        v_next = v_pre - p.v_thr * tape.detach(s)
    else:
        v_next = v_pre * (1.0 - tape.detach(s))
    return v_next, i_next, s


# --- flat key = value parameter files ---------------------------------

_PARAM_KINDS = {"felif": FeLifParams, "lif": LifParams}


def format_kv(pairs: dict) -> str:
    lines = [f"{k} = {_format_value(v)}" for k, v in pairs.items()]
    return "\n".join(lines) + "\n"


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return v if isinstance(v, str) else f"{v!r}"


def parse_kv_text(text: str, source: str = "<text>") -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ValueError(f"{source}:{lineno}: empty key or value")
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def coerce_kv(value: str, like):
    """Parse a kv string into the type of an existing field value."""
    if isinstance(like, bool):
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def save_params(params, path) -> None:
    """Write neuron parameters as flat `key = value` text."""
    for kind, cls in _PARAM_KINDS.items():
        if isinstance(params, cls):
            break
    else:
        raise TypeError(f"unsupported params type {type(params).__name__}")
    pairs = {"kind": kind}
    for f in fields(params):
        pairs[f.name] = getattr(params, f.name)
    with open(path, "w") as fh:
        fh.write(format_kv(pairs))


def load_params(path):
    """Read a parameter file written by `save_params`."""
    with open(path) as fh:
        raw = parse_kv_text(fh.read(), source=str(path))
    kind = raw.pop("kind", None)
    if kind not in _PARAM_KINDS:
        raise ValueError(f"{path}: missing or unknown kind {kind!r}")
    cls = _PARAM_KINDS[kind]
    defaults = cls()
    kwargs = {}
    known = {f.name for f in fields(cls)}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"{path}: unknown parameter {key!r} for kind {kind}")
        kwargs[key] = coerce_kv(value, getattr(defaults, key))
    return cls(**kwargs)
