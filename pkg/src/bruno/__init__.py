"""Dual-timescale training engine for spiking networks with
ferroelectric neurons and quantized synapses."""

from .tape import (
    Tape,
    Value,
    Gradients,
    TapeError,
    NumericInstabilityError,
    GradientExplosionError,
    NODE_BYTES,
)
from .neurons import (
    FeLifParams,
    LifParams,
    NeuronState,
    tau_fe,
    merz_rate,
    felif_derivatives,
    felif_step_core,
    felif_integrate,
    felif_step,
    simulate_felif,
    lif_step,
    save_params,
    load_params,
)
from .quant import (
    QuantSpec,
    weight_scale,
    sround,
    quantize_array,
    dequantize,
    quantize_ste,
    save_quantized,
    load_quantized,
)
from .netdata import (
    ARCHS,
    NetworkSpec,
    Network,
    build_network,
    SpikeEventStream,
    EventFormatError,
    save_events,
    load_events,
    DatasetSpec,
    SpikeDataset,
    generate_dataset,
    write_dataset,
    load_dataset,
    framed_streams,
)
from .training import (
    TrainConfig,
    TrainRun,
    Adam,
    multirate_splice,
    multirate_step,
    forward_sequence,
    class_loss,
    evaluate,
    train,
    default_cell,
)

__version__ = "0.1.0"
