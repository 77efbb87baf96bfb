"""Quantization-aware synapse handling with stochastic rounding.

Weights live in full precision; every forward pass maps them onto a
symmetric integer grid of 2^N - 1 levels (zero-centered, max index
2^(N-1) - 1) with the scale recomputed from the current extreme value.
Rounding is stochastic: floor(x) plus a Bernoulli draw on the
fractional part, so the rounded value is unbiased and weight updates
smaller than one level gap still register in expectation.  Gradients
take the straight-through path back to the full-precision weights,
zeroed where the quantizer clamped.

Optional read noise models device-to-device dispersion as a Gaussian
perturbation of the dequantized weight, parameterized as a fraction of
one level gap.  A fraction of 0.5 or more makes neighbouring levels
statistically indistinguishable and is rejected outright.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tape

__all__ = [
    "QuantSpec",
    "weight_scale",
    "sround",
    "quantize_array",
    "dequantize",
    "quantize_ste",
    "save_quantized",
    "load_quantized",
]


@dataclass
class QuantSpec:
    bits: int = 8
    read_noise: float = 0.0  # sigma of the read perturbation, in level gaps

    def __post_init__(self):
        if self.bits < 2:
            raise ValueError("bits must be >= 2")
        if self.read_noise < 0.0:
            raise ValueError("read_noise must be non-negative")
        if self.read_noise >= 0.5:
            raise ValueError(
                f"read_noise {self.read_noise} >= 0.5 level gaps makes "
                "adjacent levels indistinguishable"
            )

    @property
    def max_index(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def n_levels(self) -> int:
        return 2 * self.max_index + 1


def weight_scale(w, bits: int) -> float:
    """Level gap max|w| / (2^(N-1) - 1); 1.0 for an all-zero tensor."""
    peak = float(np.max(np.abs(w))) if np.size(w) else 0.0
    if peak == 0.0:
        return 1.0
    return peak / (2 ** (bits - 1) - 1)


def sround(x, rng: np.random.Generator):
    """Stochastic round: floor(x) + Bernoulli(frac(x)).

    Unbiased by construction, E[sround(x)] = x exactly.
    """
    f = np.floor(x)
    return f + (rng.random(np.shape(x)) < (x - f))


def quantize_array(w, spec: QuantSpec, rng: np.random.Generator | None = None,
                   scale: float | None = None, stochastic: bool = True):
    """Map a raw tensor to (level indices, scale).

    With scale=None the scale is recomputed from this tensor, in which
    case no index can exceed the grid; an explicit scale may clamp.
    """
    w = np.asarray(w, dtype=np.float64)
    s_w = weight_scale(w, spec.bits) if scale is None else float(scale)
    if s_w <= 0.0:
        raise ValueError("scale must be positive")
    x = w / s_w
    if stochastic:
        if rng is None:
            raise ValueError("stochastic rounding needs an rng")
        idx = sround(x, rng)
    else:
        idx = np.round(x)
    m = spec.max_index
    return np.clip(idx, -m, m), s_w


def dequantize(levels, s_w: float):
    return np.asarray(levels, dtype=np.float64) * s_w


def quantize_ste(w, spec: QuantSpec, rng: np.random.Generator | None = None,
                 scale: float | None = None, stochastic: bool = True):
    """Quantize for one forward pass with a straight-through gradient.

    Accepts a tape Value or a raw array.  The gradient mask is exact:
    identity inside the representable range, zero where the explicit
    scale forced clamping (with a recomputed scale nothing clamps).
    Fresh rounding and read-noise draws are taken on every call.
    """
    wd = tape.raw(w)
    s_w = weight_scale(wd, spec.bits) if scale is None else float(scale)
    if s_w <= 0.0:
        raise ValueError("scale must be positive")
    if rng is None and (stochastic or spec.read_noise > 0.0):
        raise ValueError("stochastic rounding or read noise needs an rng")
    x = np.asarray(wd, dtype=np.float64) / s_w
    idx = sround(x, rng) if stochastic else np.round(x)
    m = spec.max_index
    q = np.clip(idx, -m, m) * s_w
    if spec.read_noise > 0.0:
        q = q + rng.normal(0.0, spec.read_noise * s_w, size=np.shape(q))
    mask = None if scale is None else (np.abs(x) <= m).astype(np.float64)
    return tape.ste(w, q, mask)


def save_quantized(weights: dict, spec: QuantSpec, path) -> None:
    """Write a programming snapshot: level indices, scale and bit width.

    Uses nearest rounding, the deterministic draw a device would be
    programmed with once.
    """
    tensors = {}
    for name, w in weights.items():
        idx, s_w = quantize_array(w, spec, stochastic=False)
        tensors[name] = {"scale": s_w, "levels": idx.astype(int).tolist()}
    payload = {"bits": spec.bits, "read_noise": spec.read_noise,
               "tensors": tensors}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_quantized(path) -> tuple[dict, QuantSpec]:
    """Read a snapshot back as dequantized float tensors plus its spec."""
    with open(path) as fh:
        payload = json.load(fh)
    spec = QuantSpec(bits=int(payload["bits"]),
                     read_noise=float(payload.get("read_noise", 0.0)))
    weights = {}
    for name, entry in payload["tensors"].items():
        idx = np.asarray(entry["levels"], dtype=np.float64)
        if np.any(np.abs(idx) > spec.max_index):
            raise ValueError(
                f"{path}: tensor {name!r} has levels outside the "
                f"{spec.n_levels}-level grid"
            )
        weights[name] = dequantize(idx, float(entry["scale"]))
    return weights, spec
