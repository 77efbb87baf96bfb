"""Network construction, synthetic event data, and on-disk formats.

Three reference topologies share one feed-forward skeleton of input ->
hidden -> output:

  lif    hidden and output are discrete LIF cells
  rlif   as lif, plus a recurrent hidden weight matrix
  felif  discrete LIF hidden layer, ferroelectric output layer whose
         state advances with fine substeps inside every window

Synaptic weights are dimensionless; for the ferroelectric layer the
summed drive is converted to amperes by `current_scale`.

The event file format is line based:

    channels=<I> duration_us=<D> label=<L>
    <t_us>,<channel>
    ...

with event times in non-decreasing order.  A dataset is a directory of
event files plus a JSON manifest mapping files to labels and splits.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .neurons import FeLifParams, LifParams
from .quant import QuantSpec

__all__ = [
    "ARCHS",
    "NetworkSpec",
    "Network",
    "build_network",
    "SpikeEventStream",
    "EventFormatError",
    "save_events",
    "load_events",
    "DatasetSpec",
    "SpikeDataset",
    "class_patterns",
    "generate_sample",
    "generate_dataset",
    "write_dataset",
    "load_dataset",
    "framed_streams",
]

ARCHS = ("lif", "rlif", "felif")


@dataclass
class NetworkSpec:
    """Architecture description; see module docstring for the kinds."""

    kind: str = "felif"
    n_in: int = 12
    n_hidden: int = 256
    n_out: int = 27
    hidden: LifParams = field(default_factory=LifParams)
    out_lif: LifParams = field(default_factory=LifParams)
    out_felif: FeLifParams = field(default_factory=FeLifParams)
    current_scale: float = 1e-9  # amperes per unit of synaptic drive
    w_gain: float = 1.0          # init range multiplier
    quant: QuantSpec | None = None

    def __post_init__(self):
        if self.kind not in ARCHS:
            raise ValueError(f"kind must be one of {ARCHS}, got {self.kind!r}")
        for name in ("n_in", "n_hidden", "n_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.current_scale <= 0.0:
            raise ValueError("current_scale must be positive")


@dataclass
class Network:
    spec: NetworkSpec
    weights: dict[str, np.ndarray]

    def param_count(self) -> int:
        return sum(w.size for w in self.weights.values())

    def copy(self) -> "Network":
        return Network(self.spec, {k: w.copy() for k, w in self.weights.items()})


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    """Draw weights uniform in +-w_gain/sqrt(fan_in).

    Matrices are drawn in the fixed order w_in, w_rec, w_out so that
    architectures sharing a prefix of that list get identical draws
    from the same seed.
    """
    rng = np.random.Generator(np.random.Philox(seed))

    def draw(n_out, n_in):
        b = spec.w_gain / math.sqrt(n_in)
        return rng.uniform(-b, b, size=(n_out, n_in))

    weights = {"w_in": draw(spec.n_hidden, spec.n_in)}
    if spec.kind == "rlif":
        weights["w_rec"] = draw(spec.n_hidden, spec.n_hidden)
    weights["w_out"] = draw(spec.n_out, spec.n_hidden)
    return Network(spec, weights)


# --- event streams ----------------------------------------------------


class EventFormatError(ValueError):
    pass


@dataclass
class SpikeEventStream:
    """One labelled sample: (time_us, channel) pairs, times sorted."""

    channels: int
    duration_us: int
    label: int
    events: np.ndarray  # (N, 2) int64

    def __post_init__(self):
        ev = np.asarray(self.events, dtype=np.int64).reshape(-1, 2)
        self.events = ev
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.duration_us < 1:
            raise ValueError("duration_us must be >= 1")
        if len(ev):
            if ev[:, 0].min() < 0 or ev[:, 0].max() >= self.duration_us:
                raise ValueError("event time outside [0, duration_us)")
            if ev[:, 1].min() < 0 or ev[:, 1].max() >= self.channels:
                raise ValueError("event channel out of range")
            if np.any(np.diff(ev[:, 0]) < 0):
                raise ValueError("event times must be non-decreasing")

    def frames(self, n_windows: int, window_us: int) -> np.ndarray:
        """Per-window event counts, shape (n_windows, channels).

        Windows beyond the stream are zero; events beyond the window
        span are dropped with a warning.
        """
        out = np.zeros((n_windows, self.channels))
        if len(self.events):
            w = self.events[:, 0] // window_us
            keep = w < n_windows
            if not keep.all():
                warnings.warn(
                    f"{int((~keep).sum())} events beyond "
                    f"{n_windows * window_us} us dropped", stacklevel=2)
            np.add.at(out, (w[keep], self.events[keep, 1]), 1.0)
        return out

    def rate_hz(self) -> float:
        return len(self.events) / (self.channels * self.duration_us * 1e-6)


def save_events(stream: SpikeEventStream, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"channels={stream.channels} "
                 f"duration_us={stream.duration_us} "
                 f"label={stream.label}\n")
        for t, ch in stream.events:
            fh.write(f"{t},{ch}\n")


def load_events(path) -> SpikeEventStream:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise EventFormatError(f"{path}:1: empty file")
    header = {}
    for tok in lines[0].split():
        key, sep, value = tok.partition("=")
        if not sep or key not in ("channels", "duration_us", "label"):
            raise EventFormatError(f"{path}:1: bad header token {tok!r}")
        try:
            header[key] = int(value)
        except ValueError:
            raise EventFormatError(
                f"{path}:1: non-integer header value {tok!r}") from None
    missing = {"channels", "duration_us", "label"} - set(header)
    if missing:
        raise EventFormatError(f"{path}:1: header missing {sorted(missing)}")
    rows = []
    last_t = -1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise EventFormatError(
                f"{path}:{lineno}: expected 't_us,channel', got {line!r}")
        try:
            t, ch = int(parts[0]), int(parts[1])
        except ValueError:
            raise EventFormatError(
                f"{path}:{lineno}: non-integer field in {line!r}") from None
        if not 0 <= t < header["duration_us"]:
            raise EventFormatError(
                f"{path}:{lineno}: time {t} outside [0, {header['duration_us']})")
        if not 0 <= ch < header["channels"]:
            raise EventFormatError(f"{path}:{lineno}: channel {ch} out of range")
        if t < last_t:
            raise EventFormatError(
                f"{path}:{lineno}: time {t} decreases (previous {last_t})")
        last_t = t
        rows.append((t, ch))
    events = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
    return SpikeEventStream(header["channels"], header["duration_us"],
                            header["label"], events)


# --- synthetic task ---------------------------------------------------


@dataclass
class DatasetSpec:
    """Poisson pattern task: each class activates a fixed subset of
    channels in each time segment; the rest tick at the base rate."""

    classes: int = 4
    channels: int = 12
    duration_ms: float = 200.0
    segments: int = 4
    base_rate_hz: float = 10.0
    active_rate_hz: float = 200.0
    jitter_ms: float = 2.0
    samples_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("classes", "channels", "segments", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.duration_ms <= 0.0:
            raise ValueError("duration_ms must be positive")
        if self.base_rate_hz < 0.0 or self.active_rate_hz <= 0.0:
            raise ValueError("rates must be non-negative (active positive)")
        if self.jitter_ms < 0.0:
            raise ValueError("jitter_ms must be non-negative")

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_ms * 1000.0))


@dataclass
class SpikeDataset:
    spec: DatasetSpec
    train: list
    val: list
    test: list

    def split(self, name: str) -> list:
        return getattr(self, name)


def class_patterns(spec: DatasetSpec) -> np.ndarray:
    """Boolean (classes, segments, channels) mask of active channels,
    fixed by the dataset seed."""
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(spec.seed, spawn_key=(0,))))
    k = max(1, spec.channels // 3)
    pat = np.zeros((spec.classes, spec.segments, spec.channels), dtype=bool)
    for c in range(spec.classes):
        for s in range(spec.segments):
            pat[c, s, rng.choice(spec.channels, size=k, replace=False)] = True
    return pat


def generate_sample(spec: DatasetSpec, patterns: np.ndarray, label: int,
                    index: int) -> SpikeEventStream:
    """Draw one sample with a per-sample derived seed, so generation
    can be sharded without changing the data."""
    ss = np.random.SeedSequence(spec.seed, spawn_key=(1, label, index))
    rng = np.random.Generator(np.random.Philox(ss))
    dur_s = spec.duration_ms * 1e-3
    seg_s = dur_s / spec.segments
    ts, chs = [], []
    for s in range(spec.segments):
        for ch in range(spec.channels):
            rate = (spec.active_rate_hz if patterns[label, s, ch]
                    else spec.base_rate_hz)
            n = rng.poisson(rate * seg_s)
            if n:
                ts.append(s * seg_s + rng.random(n) * seg_s)
                chs.append(np.full(n, ch, dtype=np.int64))
    if ts:
        t = np.concatenate(ts)
        ch = np.concatenate(chs)
    else:
        t = np.empty(0)
        ch = np.empty(0, dtype=np.int64)
    if spec.jitter_ms > 0.0 and len(t):
        t = t + rng.normal(0.0, spec.jitter_ms * 1e-3, size=t.shape)
    t = np.clip(t, 0.0, dur_s * (1.0 - 1e-12))
    order = np.argsort(t, kind="stable")
    t_us = np.minimum(np.floor(t[order] * 1e6).astype(np.int64),
                      spec.duration_us - 1)
    events = np.stack([t_us, ch[order]], axis=1)
    return SpikeEventStream(spec.channels, spec.duration_us, label, events)


def generate_dataset(spec: DatasetSpec) -> SpikeDataset:
    """Full dataset with a stratified, seed-stable 70/15/15 split."""
    patterns = class_patterns(spec)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(spec.seed, spawn_key=(2,))))
    train, val, test = [], [], []
    n = spec.samples_per_class
    n_tr = round(0.70 * n)
    n_va = round(0.15 * n)
    for c in range(spec.classes):
        streams = [generate_sample(spec, patterns, c, i) for i in range(n)]
        perm = rng.permutation(n)
        train += [streams[i] for i in perm[:n_tr]]
        val += [streams[i] for i in perm[n_tr:n_tr + n_va]]
        test += [streams[i] for i in perm[n_tr + n_va:]]
    for part in (train, val, test):
        rng.shuffle(part)
    return SpikeDataset(spec, train, val, test)


def write_dataset(ds: SpikeDataset, outdir) -> str:
    """Write event files plus manifest.json; returns the manifest path."""
    os.makedirs(outdir, exist_ok=True)
    manifest = {"format": "events-v1", "spec": asdict(ds.spec), "splits": {}}
    for split in ("train", "val", "test"):
        os.makedirs(os.path.join(outdir, split), exist_ok=True)
        entries = []
        for i, stream in enumerate(ds.split(split)):
            rel = os.path.join(split, f"{split}_{i:04d}.ev")
            save_events(stream, os.path.join(outdir, rel))
            entries.append({"path": rel, "label": int(stream.label)})
        manifest["splits"][split] = entries
    mpath = os.path.join(outdir, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return mpath


def load_dataset(manifest_path) -> SpikeDataset:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    spec = DatasetSpec(**manifest["spec"])
    parts = {}
    for split in ("train", "val", "test"):
        streams = []
        for entry in manifest["splits"].get(split, []):
            stream = load_events(os.path.join(base, entry["path"]))
            if stream.label != entry["label"]:
                raise EventFormatError(
                    f"{entry['path']}: label {stream.label} does not match "
                    f"manifest label {entry['label']}")
            streams.append(stream)
        parts[split] = streams
    return SpikeDataset(spec, parts["train"], parts["val"], parts["test"])


def framed_streams(streams, n_windows: int, window_us: int):
    """Stack streams into (N, T, I) count frames plus (N,) labels."""
    x = np.stack([s.frames(n_windows, window_us) for s in streams])
    y = np.asarray([s.label for s in streams], dtype=np.int64)
    return x, y
