"""d2nn: simulate and train all-optical diffractive deep neural networks."""

from .optics import (
    Wavefield,
    PropagationPlan,
    NonlinearKind,
    NonlinearSpec,
    make_plan,
    propagate,
    modulate,
    apply_nonlinearity,
    total_power,
)
from .network import (
    DiffractiveLayer,
    DetectorLayout,
    Encoding,
    NetworkConfig,
    ForwardTrace,
    encode_input,
    forward,
    detector_readout,
    classify,
    squeeze_to_matrix,
    save_network,
    load_network,
)
from .training import (
    TrainConfig,
    GradientSet,
    OptimizerState,
    loss_and_signal_grad,
    intensity_seed,
    backward,
    step,
    train,
    lego_patch,
)
from .data import Dataset, load_idx, resample, split_and_batch, synthetic_two_blob
from .metrics import (
    SampleMetrics,
    ReportRow,
    RunReport,
    power_efficiency,
    signal_contrast,
    evaluate,
    depth_sweep,
    perturbation_sweep,
)

__version__ = "0.1.0"
