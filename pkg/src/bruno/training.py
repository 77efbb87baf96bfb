"""Dual-timescale training loop for networks with ferroelectric cells.

The ferroelectric dynamics need microsecond steps to be accurate, but a
gradient graph over every microsecond step is enormous and, worse, its
per-substep Jacobians compound into exploding adjoints over long runs.
The engine therefore advances each coarse window twice:

  * a fine pass of `substeps` explicit-Euler steps off the tape, which
    produces the trajectory the physics requires;
  * a single coarse Euler step on the tape, which defines the window's
    contribution to the gradient graph.

The two are spliced per state variable as

    state = fine + (coarse - detach(coarse))

whose forward value equals the fine result exactly (the parenthesised
term is identically zero) and whose gradient is the coarse step's.
Thresholding, reset and the loss see only the spliced per-window
states.  With substeps=1 the fine and coarse passes execute the same
float sequence and the spliced mode is bit-identical to recording the
step directly.

`mode="vanilla"` records every fine substep on the tape instead: the
exact fine-grid gradient at fine-grid graph cost.  It is the reference
the spliced mode is measured against for node count, wall clock and
gradient stability.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import neurons, netdata, quant, tape

__all__ = [
    "TrainConfig",
    "TrainRun",
    "Adam",
    "ForwardResult",
    "multirate_splice",
    "multirate_step",
    "forward_sequence",
    "class_loss",
    "softmax",
    "accuracy",
    "gradient_dict",
    "clip_gradients_",
    "evaluate",
    "train",
    "default_cell",
]


@dataclass
class TrainConfig:
    mode: str = "bruno"      # "bruno" (spliced) or "vanilla" (full fine graph)
    dt_coarse: float = 1e-3  # window length, s
    substeps: int = 1000     # fine steps per window; dt_fine = dt_coarse/substeps
    t_steps: int = 200       # windows per sample
    epochs: int = 30
    batch_size: int = 0      # 0 trains full batch
    lr: float = 2.5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    grad_clip: float = 0.0   # global-norm ceiling; 0 disables
    surrogate_slope: float = 10.0
    loss_temp: float = 1.0   # divides spike counts before the softmax
    freeze_rounding: bool = False  # reuse identical rounding draws every pass
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("bruno", "vanilla"):
            raise ValueError(f"mode must be 'bruno' or 'vanilla', got {self.mode!r}")
        if self.dt_coarse <= 0.0:
            raise ValueError("dt_coarse must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if self.epochs < 0 or self.batch_size < 0:
            raise ValueError("epochs and batch_size must be non-negative")

    @property
    def dt_fine(self) -> float:
        return self.dt_coarse / self.substeps

    @property
    def window_us(self) -> int:
        return int(round(self.dt_coarse * 1e6))


class Adam(object):
    """Diagonal Adam with bias correction; updates params in place."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            self.params[k] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def multirate_splice(fine, coarse):
    """Fine forward value carrying the coarse step's gradient."""
    if isinstance(coarse, tape.Value):
        return fine + (coarse - tape.detach(coarse))
    return fine


def multirate_step(states, fine_fn, coarse_fn):
    """Advance one window with any paired fine/coarse steppers.

    `fine_fn` gets the raw state arrays and returns the fine endpoint
    tuple; `coarse_fn` gets the tape-side states and returns the
    matching coarse endpoint tuple.  Each pair is spliced so values
    follow the fine pass and gradients the coarse graph.
    """
    fine = fine_fn(*(tape.raw(s) for s in states))
    coarse = coarse_fn(*states)
    return tuple(multirate_splice(f, c) for f, c in zip(fine, coarse))


def _felif_window(v, pol, i_syn, cfg: TrainConfig, fp: neurons.FeLifParams):
    if cfg.mode == "vanilla":
        return neurons.felif_integrate(v, pol, i_syn, cfg.dt_fine,
                                       cfg.substeps, fp)
    i_raw = tape.raw(i_syn)
    return multirate_step(
        (v, pol),
        lambda vr, pr: neurons.felif_integrate(vr, pr, i_raw, cfg.dt_fine,
                                               cfg.substeps, fp),
        lambda vt, pt: neurons.felif_step_core(vt, pt, i_syn,
                                               cfg.dt_coarse, fp),
    )


@dataclass
class ForwardResult:
    counts: object           # summed output spikes per class; Value when recorded
    tp: tape.Tape | None
    leaves: dict


def forward_sequence(net: netdata.Network, frames, cfg: TrainConfig,
                     rng: np.random.Generator | None = None,
                     eval_mode: bool = False,
                     record: bool = True) -> ForwardResult:
    """Unroll the network over all windows of one sample or batch.

    frames: (T, I) or (B, T, I) event counts per window.  With
    record=False everything runs off the tape through the same code
    path, so evaluation sees bit-identical forward dynamics at zero
    graph cost.  eval_mode switches rounding from stochastic to
    nearest, the draw a programmed device would hold.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim not in (2, 3):
        raise ValueError(f"frames must be (T, I) or (B, T, I), got {frames.shape}")
    spec = net.spec
    if frames.shape[-1] != spec.n_in:
        raise ValueError(
            f"frames have {frames.shape[-1]} channels, network wants {spec.n_in}")
    if record:
        tp = tape.Tape()
        base = {k: tp.leaf(w) for k, w in net.weights.items()}
        leaves = base
    else:
        tp = None
        base = dict(net.weights)
        leaves = {}
    if spec.quant is None:
        wq = base
    else:
        wq = {k: quant.quantize_ste(w, spec.quant, rng=rng,
                                    stochastic=not eval_mode)
              for k, w in base.items()}
    lead = frames.shape[:-2]
    slope = cfg.surrogate_slope
    v_h = np.zeros(lead + (spec.n_hidden,))
    i_h = np.zeros(lead + (spec.n_hidden,))
    s_h = np.zeros(lead + (spec.n_hidden,))
    v_o = np.zeros(lead + (spec.n_out,))
    aux_o = np.zeros(lead + (spec.n_out,))  # polarization or LIF current
    counts = np.zeros(lead + (spec.n_out,))
    for t_i in range(frames.shape[-2]):
        u = frames[..., t_i, :]
        drive = tape.matvec(wq["w_in"], u)
        if spec.kind == "rlif":
            drive = drive + tape.matvec(wq["w_rec"], s_h)
        v_h, i_h, s_h = neurons.lif_step(v_h, i_h, drive, spec.hidden, slope)
        out_drive = tape.matvec(wq["w_out"], s_h)
        if spec.kind == "felif":
            i_syn = out_drive * spec.current_scale
            v_o, aux_o = _felif_window(v_o, aux_o, i_syn, cfg, spec.out_felif)
            s_o = tape.spike_sg(v_o, spec.out_felif.v_thr, slope)
            # spike discharge: gate both membrane and polarization to
            # zero through a detached spike (see neurons.lif_step)
            gate = 1.0 - tape.detach(s_o)
            v_o = v_o * gate
            aux_o = aux_o * gate
        else:
            v_o, aux_o, s_o = neurons.lif_step(v_o, aux_o, out_drive,
                                               spec.out_lif, slope)
        counts = counts + s_o
    return ForwardResult(counts, tp, leaves)


def class_loss(counts, labels, temp: float = 1.0):
    """Mean softmax cross-entropy over time-summed spike counts.

    temp divides the counts before the softmax; spike totals grow with
    the window count, so without it a long sequence saturates the
    softmax and the gradient collapses onto the single argmax class.
    The per-row maximum is subtracted as a detached constant before the
    exponential, so the exponent stays in range and the gradient is
    exactly (softmax - onehot) / temp.
    """
    z = counts * (1.0 / temp) if temp != 1.0 else counts
    m = np.max(tape.raw(z), axis=-1, keepdims=True)
    zs = z - m
    lse = tape.ln(tape.vsum(tape.exp(zs), axis=-1))
    zy = tape.pick(zs, labels)
    return tape.mean_all(lse - zy)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def accuracy(counts, labels) -> float:
    pred = np.argmax(np.asarray(counts), axis=-1)
    return float(np.mean(pred == np.asarray(labels)))


def gradient_dict(result: ForwardResult, loss) -> dict:
    """Backward sweep mapped onto weight names."""
    grads = result.tp.backward(loss)
    return {k: np.asarray(grads.wrt(v), dtype=np.float64)
            for k, v in result.leaves.items()}


def clip_gradients_(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to a global-norm ceiling; returns the
    pre-clip norm.  max_norm <= 0 only measures."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0.0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def evaluate(net: netdata.Network, x, y, cfg: TrainConfig,
             rng: np.random.Generator | None = None) -> float:
    """Off-tape accuracy with nearest (programmed) rounding."""
    if len(y) == 0:
        return float("nan")
    if rng is None and net.spec.quant is not None and net.spec.quant.read_noise > 0.0:
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(cfg.seed, spawn_key=(99,))))
    with np.errstate(all="ignore"):
        res = forward_sequence(net, x, cfg, rng=rng, eval_mode=True,
                               record=False)
    return accuracy(res.counts, y)


@dataclass
class TrainRun:
    """Record of one training run; serializes to JSONL, one object per
    epoch plus a trailing summary object."""

    arch: str
    bits: int               # 0 means full precision
    mode: str
    seed: int
    config: dict
    param_count: int
    epochs: list = field(default_factory=list)
    status: str = "completed"
    test_acc: float = float("nan")
    wall_s: float = 0.0

    def summary(self) -> dict:
        return {
            "kind": "summary",
            "arch": self.arch,
            "bits": self.bits,
            "mode": self.mode,
            "seed": self.seed,
            "status": self.status,
            "epochs_run": len(self.epochs),
            "test_acc": self.test_acc,
            "wall_s": self.wall_s,
            "param_count": self.param_count,
            "config": self.config,
        }

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.epochs:
                fh.write(json.dumps({"kind": "epoch", **e}) + "\n")
            fh.write(json.dumps(self.summary()) + "\n")

    @staticmethod
    def read_jsonl(path) -> "TrainRun":
        epochs = []
        summary = None
        with open(path) as fh:
            for line in fh:
                obj = json.loads(line)
                if obj.get("kind") == "epoch":
                    epochs.append(obj)
                elif obj.get("kind") == "summary":
                    summary = obj
        if summary is None:
            raise ValueError(f"{path}: no summary object")
        run = TrainRun(arch=summary["arch"], bits=summary["bits"],
                       mode=summary["mode"], seed=summary["seed"],
                       config=summary["config"],
                       param_count=summary["param_count"])
        run.epochs = epochs
        run.status = summary["status"]
        run.test_acc = summary["test_acc"]
        run.wall_s = summary["wall_s"]
        return run


def _framed(dataset, cfg: TrainConfig):
    if isinstance(dataset, dict):
        return dataset
    out = {}
    for split in ("train", "val", "test"):
        streams = dataset.split(split)
        if streams:
            out[split] = netdata.framed_streams(streams, cfg.t_steps,
                                                cfg.window_us)
        else:
            out[split] = (np.zeros((0, cfg.t_steps, dataset.spec.channels)),
                          np.zeros(0, dtype=np.int64))
    return out


def _rounding_rng(cfg: TrainConfig):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(cfg.seed, spawn_key=(11,))))


def train(net: netdata.Network, dataset, cfg: TrainConfig,
          log_path=None, verbose: bool = False) -> TrainRun:
    """Train the network in place and return the run record.

    dataset is either a `netdata.SpikeDataset` or a dict of framed
    splits {"train": (x, y), "val": (x, y), "test": (x, y)}.  A
    gradient explosion or forward instability stops training and is
    reported in the run status rather than raised.
    """
    splits = _framed(dataset, cfg)
    x_tr, y_tr = splits["train"]
    x_va, y_va = splits.get("val", (np.zeros((0,)), np.zeros(0, dtype=np.int64)))
    x_te, y_te = splits.get("test", (np.zeros((0,)), np.zeros(0, dtype=np.int64)))
    if len(y_tr) == 0:
        raise ValueError("empty training split")
    spec = net.spec
    run = TrainRun(
        arch=spec.kind,
        bits=0 if spec.quant is None else spec.quant.bits,
        mode=cfg.mode,
        seed=cfg.seed,
        config=asdict(cfg),
        param_count=net.param_count(),
    )
    rng_batch = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(cfg.seed, spawn_key=(10,))))
    rng_round = _rounding_rng(cfg)
    adam = Adam(net.weights, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam)
    t0 = time.perf_counter()
    stopped = False
    for ep in range(cfg.epochs):
        ep_t0 = time.perf_counter()
        order = rng_batch.permutation(len(y_tr))
        bs = cfg.batch_size or len(y_tr)
        loss_sum = 0.0
        hits = 0
        peak_nodes = 0
        for lo in range(0, len(order), bs):
            idx = order[lo:lo + bs]
            rng_q = _rounding_rng(cfg) if cfg.freeze_rounding else rng_round
            try:
                with np.errstate(all="ignore"):
                    res = forward_sequence(net, x_tr[idx], cfg, rng=rng_q)
                    loss = class_loss(res.counts, y_tr[idx], cfg.loss_temp)
                    grads = gradient_dict(res, loss)
            except tape.GradientExplosionError as exc:
                run.status = (f"gradient-explosion epoch={ep} "
                              f"node={exc.node_id}")
                stopped = True
                break
            except tape.NumericInstabilityError as exc:
                run.status = f"numeric-instability epoch={ep}: {exc}"
                stopped = True
                break
            loss_sum += float(tape.raw(loss)) * len(idx)
            hits += int(np.sum(np.argmax(tape.raw(res.counts), axis=-1)
                               == y_tr[idx]))
            peak_nodes = max(peak_nodes, res.tp.node_count())
            clip_gradients_(grads, cfg.grad_clip)
            adam.step(grads)
        if stopped:
            break
        entry = {
            "epoch": ep,
            "loss": loss_sum / len(y_tr),
            "train_acc": hits / len(y_tr),
            "val_acc": evaluate(net, x_va, y_va, cfg),
            "peak_nodes": peak_nodes,
            "wall_s": time.perf_counter() - ep_t0,
        }
        run.epochs.append(entry)
        if verbose:
            print(f"epoch {ep:3d}  loss {entry['loss']:.4f}  "
                  f"train {entry['train_acc']:.3f}  val {entry['val_acc']:.3f}  "
                  f"nodes {peak_nodes}  {entry['wall_s']:.1f}s")
    run.test_acc = evaluate(net, x_te, y_te, cfg)
    run.wall_s = time.perf_counter() - t0
    if log_path is not None:
        run.write_jsonl(log_path)
    return run


# architecture-level defaults; training-level knobs live in TrainConfig
_CELL_DEFAULTS = {
    "lif": dict(alpha_hid=0.9, beta_hid=0.8, alpha_out=0.9, beta_out=0.8,
                lr=5e-3, w_gain=1.0, current_scale=1e-9, v_thr_out=1.0),
    "rlif": dict(alpha_hid=0.9, beta_hid=0.8, alpha_out=0.9, beta_out=0.8,
                 lr=5e-3, w_gain=1.0, current_scale=1e-9, v_thr_out=1.0),
    "felif": dict(alpha_hid=0.299, beta_hid=0.147, alpha_out=0.9,
                  beta_out=0.8, lr=1e-2, w_gain=4.0, current_scale=1.2e-8,
                  v_thr_out=4.0, jac_guard=1.0, loss_temp=10.0,
                  surrogate_slope=1.0, batch_size=56),
}


def default_cell(arch: str, bits: int = 0,
                 overrides: dict | None = None
                 ) -> tuple[TrainConfig, netdata.NetworkSpec]:
    """Known-good starting configuration for one grid cell.

    Returns a fresh (TrainConfig, NetworkSpec) pair.  `overrides` is a
    flat key=value mapping covering both objects: decay factors as
    alpha_hid/beta_hid/alpha_out/beta_out, the output threshold as
    v_thr_out, plus any TrainConfig field and the NetworkSpec sizing
    fields.  Unknown keys raise, so typos in config files fail loudly
    instead of silently training the default.
    """
    if arch not in netdata.ARCHS:
        raise ValueError(f"arch must be one of {netdata.ARCHS}, got {arch!r}")
    if bits and bits < 2:
        raise ValueError("bits must be 0 (full precision) or >= 2")
    o = {**_CELL_DEFAULTS[arch], **(overrides or {})}

    def take(key, cast=float):
        return cast(o.pop(key))

    hidden = neurons.LifParams(alpha=take("alpha_hid"), beta=take("beta_hid"))
    out_lif = neurons.LifParams(alpha=take("alpha_out"), beta=take("beta_out"))
    out_felif = neurons.FeLifParams(
        v_thr=take("v_thr_out"),
        jac_guard=float(o.pop("jac_guard", 0.0)))
    qspec = None
    if bits:
        qspec = quant.QuantSpec(bits=bits,
                                read_noise=float(o.pop("read_noise", 0.0)))
    spec = netdata.NetworkSpec(
        kind=arch,
        n_in=int(o.pop("n_in", 12)),
        n_hidden=int(o.pop("n_hidden", 64)),
        n_out=int(o.pop("n_out", 4)),
        hidden=hidden, out_lif=out_lif, out_felif=out_felif,
        current_scale=take("current_scale"),
        w_gain=take("w_gain"),
        quant=qspec,
    )
    cfg = TrainConfig()
    for f in fields(TrainConfig):
        if f.name in o:
            val = o.pop(f.name)
            setattr(cfg, f.name, type(getattr(cfg, f.name))(val))
    if o:
        raise ValueError(f"unknown config keys: {sorted(o)}")
    return cfg, spec
