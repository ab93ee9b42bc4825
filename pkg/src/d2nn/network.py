"""The diffractive network: encoding, layers, forward pass, and readout.

A network is a stack of trainable diffractive layers separated by free-space
gaps. Light enters at the input plane, is modulated by each layer in turn
(with an optional intensity-dependent response right after each layer), and
the output plane is read out by 10 disjoint detector rectangles, one per class.
"""

import io
import json
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import optics
from .errors import (
    FormatError,
    InvalidGeometryError,
    InvalidInputError,
    InvalidLayerError,
    UnsupportedOperationError,
)
from .optics import NonlinearKind, NonlinearSpec, Wavefield


class Encoding:
    AMPLITUDE = "amplitude"
    PHASE = "phase"


@dataclass(frozen=True)
class DetectorLayout:
    """Ten axis-aligned detector rectangles on the output grid.

    Each region is (row0, col0, row1, col1) with half-open bounds.
    """

    grid_n: int
    regions: tuple

    def __post_init__(self):
        if len(self.regions) != 10:
            raise InvalidGeometryError(f"need exactly 10 regions, got {len(self.regions)}")
        covered = np.zeros((self.grid_n, self.grid_n), dtype=bool)
        for r0, c0, r1, c1 in self.regions:
            if not (0 <= r0 < r1 <= self.grid_n and 0 <= c0 < c1 <= self.grid_n):
                raise InvalidGeometryError(
                    f"region ({r0},{c0},{r1},{c1}) outside {self.grid_n}x{self.grid_n} grid"
                )
            if covered[r0:r1, c0:c1].any():
                raise InvalidGeometryError("detector regions overlap")
            covered[r0:r1, c0:c1] = True
        object.__setattr__(self, "regions", tuple(tuple(map(int, r)) for r in self.regions))

    @classmethod
    def default(cls, grid_n):
        """Two centered rows of five square detectors, side ceil(grid_n/10).

        Detectors are separated by at least one pixel whenever the grid allows
        it; on very small grids the gap degrades to zero (still disjoint).
        """
        side = -(-grid_n // 10)
        gap = max((grid_n - 5 * side) // 6, 1)
        if 5 * side + 4 * gap > grid_n:
            gap = max((grid_n - 5 * side) // 4, 0)
        row_w = 5 * side + 4 * gap
        if row_w > grid_n:
            raise InvalidGeometryError(f"grid_n={grid_n} too small for 10 detectors")
        vgap = gap if 2 * side + gap <= grid_n else 0
        col0 = (grid_n - row_w) // 2
        row_top = (grid_n - (2 * side + vgap)) // 2
        regions = []
        for row in range(2):
            r0 = row_top + row * (side + vgap)
            for i in range(5):
                c0 = col0 + i * (side + gap)
                regions.append((r0, c0, r0 + side, c0 + side))
        return cls(grid_n, tuple(regions))

    def masks(self):
        """Boolean mask per region, shape (10, n, n)."""
        m = np.zeros((10, self.grid_n, self.grid_n), dtype=bool)
        for c, (r0, c0, r1, c1) in enumerate(self.regions):
            m[c, r0:r1, c0:c1] = True
        return m


@dataclass
class DiffractiveLayer:
    """One diffractive surface: per-pixel transmission t = amp * exp(i theta)."""

    theta: np.ndarray
    amp: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        self.amp = np.ascontiguousarray(self.amp, dtype=np.float64)
        if self.theta.shape != self.amp.shape or self.theta.ndim != 2:
            raise InvalidLayerError(
                f"theta/amp shapes mismatch: {self.theta.shape} vs {self.amp.shape}"
            )
        if self.amp.min() < 0.0 or self.amp.max() > 1.0:
            raise InvalidLayerError("amp must lie in [0, 1]")

    @classmethod
    def phase_only(cls, grid_n, rng=None):
        """Unit amplitude, theta uniform in [0, 2pi) (or zero without an rng)."""
        if rng is None:
            theta = np.zeros((grid_n, grid_n))
        else:
            theta = rng.uniform(0.0, 2.0 * np.pi, size=(grid_n, grid_n))
        return cls(theta, np.ones((grid_n, grid_n)))

    def transmission(self):
        return self.amp * np.exp(1j * self.theta)

    def copy(self):
        return DiffractiveLayer(self.theta.copy(), self.amp.copy(), self.trainable)


@dataclass(frozen=True)
class NetworkConfig:
    """Geometry and physics of a diffractive network."""

    grid_n: int
    num_layers: int
    pitch: float = 0.5
    layer_spacing: float = 40.0
    input_to_first: float = None
    last_to_output: float = None
    encoding: str = Encoding.AMPLITUDE
    nonlinearity: NonlinearSpec = field(default_factory=NonlinearSpec)
    detector_layout: DetectorLayout = None
    # optional per-gap distances between consecutive layers (num_layers - 1
    # entries), overriding the uniform layer_spacing; used by lego patching
    layer_gaps: tuple = None

    def __post_init__(self):
        if self.num_layers < 0:
            raise InvalidGeometryError("num_layers must be >= 0")
        if self.input_to_first is None:
            object.__setattr__(self, "input_to_first", self.layer_spacing)
        if self.last_to_output is None:
            object.__setattr__(self, "last_to_output", self.layer_spacing)
        for name in ("layer_spacing", "input_to_first", "last_to_output"):
            if getattr(self, name) < 0:
                raise InvalidGeometryError(f"{name} must be >= 0")
        if self.layer_gaps is not None:
            gaps = tuple(float(g) for g in self.layer_gaps)
            if len(gaps) != max(self.num_layers - 1, 0):
                raise InvalidGeometryError(
                    f"layer_gaps needs {max(self.num_layers - 1, 0)} entries, "
                    f"got {len(gaps)}"
                )
            if any(g < 0 for g in gaps):
                raise InvalidGeometryError("layer_gaps must be >= 0")
            object.__setattr__(self, "layer_gaps", gaps)
        if self.layer_spacing > 50.0:
            warnings.warn(
                f"layer_spacing={self.layer_spacing} exceeds the recommended 50 wavelengths",
                stacklevel=2,
            )
        if self.encoding not in (Encoding.AMPLITUDE, Encoding.PHASE):
            raise InvalidInputError(f"unknown encoding {self.encoding!r}")
        if self.detector_layout is None:
            object.__setattr__(self, "detector_layout", DetectorLayout.default(self.grid_n))
        elif self.detector_layout.grid_n != self.grid_n:
            raise InvalidGeometryError("detector layout grid does not match config grid")

    def gap_after(self, i):
        """Distance from layer i to the next plane (layer i+1 or the output)."""
        if i == self.num_layers - 1:
            return self.last_to_output
        if self.layer_gaps is not None:
            return self.layer_gaps[i]
        return self.layer_spacing


@dataclass
class ForwardTrace:
    """Cached state of one forward pass, consumed by the reverse pass."""

    pre_layer_fields: list
    output_field: Wavefield
    detector_signals: np.ndarray
    total_output_power: float


_plan_cache = {}


def plan_for(grid_n, pitch, distance):
    key = (grid_n, float(pitch), float(distance))
    plan = _plan_cache.get(key)
    if plan is None:
        plan = _plan_cache[key] = optics.make_plan(grid_n, pitch, distance)
    return plan


def encode_input(image, mode, pitch=0.5):
    """Map an image in [0,1] to an input field.

    Amplitude mode: E = image (real). Phase mode: E = exp(i pi image).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.min() < 0.0 or image.max() > 1.0:
        raise InvalidInputError("image pixels must lie in [0, 1]")
    return Wavefield(image.shape[-1], pitch, encode_values(image, mode))


def encode_values(images, mode):
    """Vectorized encoding of (..., n, n) images to complex field arrays."""
    if mode == Encoding.AMPLITUDE:
        return images.astype(np.complex128)
    if mode == Encoding.PHASE:
        return np.exp(1j * np.pi * images)
    raise InvalidInputError(f"unknown encoding {mode!r}")


def _check_stack(config, layers):
    if len(layers) != config.num_layers:
        raise InvalidGeometryError(
            f"expected {config.num_layers} layers, got {len(layers)}"
        )
    for i, layer in enumerate(layers):
        if layer.theta.shape != (config.grid_n, config.grid_n):
            raise InvalidGeometryError(f"layer {i} shape {layer.theta.shape} != grid")


def forward_values(config, layers, values, keep_trace=False):
    """Batched forward pass on raw arrays of shape (..., n, n).

    Returns (pre_layer_fields, output_values); pre_layer_fields is the list of
    fields arriving at each layer (before modulation), empty unless keep_trace.
    """
    n, pitch = config.grid_n, config.pitch
    num = config.num_layers
    pre = []
    vals = optics.propagate_values(values, plan_for(n, pitch, config.input_to_first))
    for i, layer in enumerate(layers):
        if keep_trace:
            pre.append(vals)
        vals = vals * layer.transmission()
        vals = optics.apply_nonlinearity_values(vals, config.nonlinearity)
        vals = optics.propagate_values(vals, plan_for(n, pitch, config.gap_after(i)))
    if num == 0:
        vals = optics.propagate_values(vals, plan_for(n, pitch, config.last_to_output))
    return pre, vals


def readout_values(output_values, layout):
    """Detector signals (..., 10) and total power (...) from raw output fields."""
    intensity = np.abs(output_values) ** 2
    masks = layout.masks()
    signals = np.einsum("...ij,cij->...c", intensity, masks)
    total = intensity.sum(axis=(-2, -1))
    return signals, total


def forward(config, layers, input_field):
    """Run one field through the stack, caching what the reverse pass needs."""
    _check_stack(config, layers)
    if input_field.grid_n != config.grid_n or input_field.pitch != config.pitch:
        raise InvalidGeometryError("input field geometry does not match config")
    pre, out = forward_values(config, layers, input_field.values, keep_trace=True)
    out_field = Wavefield(config.grid_n, config.pitch, out)
    signals, total = readout_values(out, config.detector_layout)
    return ForwardTrace(
        pre_layer_fields=[Wavefield(config.grid_n, config.pitch, p) for p in pre],
        output_field=out_field,
        detector_signals=signals,
        total_output_power=float(total),
    )


def detector_readout(output_field, layout):
    """Per-class integrated intensities and total output-plane power."""
    if layout.grid_n != output_field.grid_n:
        raise InvalidGeometryError("layout grid does not match field grid")
    signals, total = readout_values(output_field.values, layout)
    return signals, float(total)


def classify(signals):
    """Argmax over the 10 detector signals; ties break to the lowest index."""
    return int(np.argmax(np.asarray(signals)))


def squeeze_to_matrix(config, layers, max_grid=32):
    """Collapse a linear network into one grid_n^2 x grid_n^2 complex matrix.

    Column j is the flattened output field for the j-th standard-basis input;
    by linearity the matrix reproduces the layered forward pass exactly.
    """
    if config.nonlinearity.kind is not NonlinearKind.LINEAR:
        raise UnsupportedOperationError("a nonlinear network has no equivalent matrix")
    if config.grid_n > max_grid:
        raise InvalidGeometryError(
            f"grid_n={config.grid_n} exceeds the {max_grid} cost guard"
        )
    _check_stack(config, layers)
    n = config.grid_n
    basis = np.eye(n * n, dtype=np.complex128).reshape(n * n, n, n)
    _, out = forward_values(config, layers, basis)
    return out.reshape(n * n, n * n).T


# --- serialization ---------------------------------------------------------

_MAGIC = b"D2NN"
_VERSION = 1


def nonlinearity_to_dict(spec):
    return {
        "kind": spec.kind.value,
        "kerr_gamma": spec.kerr_gamma,
        "sa_t_min": spec.sa_t_min,
        "sa_t_max": spec.sa_t_max,
        "sa_i_sat": spec.sa_i_sat,
    }


def nonlinearity_from_dict(d):
    return NonlinearSpec(
        kind=NonlinearKind(d["kind"]),
        kerr_gamma=d.get("kerr_gamma", 0.0),
        sa_t_min=d.get("sa_t_min", 0.1),
        sa_t_max=d.get("sa_t_max", 0.9),
        sa_i_sat=d.get("sa_i_sat", 1.0),
    )


def config_to_dict(config):
    return {
        "grid_n": config.grid_n,
        "num_layers": config.num_layers,
        "pitch": config.pitch,
        "layer_spacing": config.layer_spacing,
        "input_to_first": config.input_to_first,
        "last_to_output": config.last_to_output,
        "encoding": config.encoding,
        "nonlinearity": nonlinearity_to_dict(config.nonlinearity),
        "detector_regions": list(config.detector_layout.regions),
        "layer_gaps": None if config.layer_gaps is None else list(config.layer_gaps),
    }


def config_from_dict(d):
    return NetworkConfig(
        grid_n=d["grid_n"],
        num_layers=d["num_layers"],
        pitch=d["pitch"],
        layer_spacing=d["layer_spacing"],
        input_to_first=d["input_to_first"],
        last_to_output=d["last_to_output"],
        encoding=d["encoding"],
        nonlinearity=nonlinearity_from_dict(d["nonlinearity"]),
        detector_layout=DetectorLayout(d["grid_n"], tuple(map(tuple, d["detector_regions"]))),
        layer_gaps=d.get("layer_gaps"),
    )


def save_network(path, config, layers):
    """Write config + layer parameters; float64 round-trip is bit-exact."""
    _check_stack(config, layers)
    cfg = json.dumps(config_to_dict(config), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", _VERSION, len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(layers)))
    for layer in layers:
        buf.write(struct.pack("<B", 1 if layer.trainable else 0))
        buf.write(layer.theta.astype("<f8").tobytes())
        buf.write(layer.amp.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_network(path):
    """Read a network file; returns (config, layers)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {_MAGIC!r}")
    version, cfg_len = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported network file version {version}")
    off = 12
    try:
        cfg = config_from_dict(json.loads(data[off : off + cfg_len]))
    except (ValueError, KeyError) as e:
        raise FormatError(f"corrupt config block: {e}") from e
    off += cfg_len
    (num_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    n = cfg.grid_n
    layers = []
    arr_bytes = n * n * 8
    expected = off + num_layers * (1 + 2 * arr_bytes)
    if len(data) < expected:
        raise FormatError(f"truncated network file: {len(data)} < {expected} bytes")
    for _ in range(num_layers):
        trainable = bool(data[off])
        off += 1
        theta = np.frombuffer(data, "<f8", n * n, off).reshape(n, n).copy()
        off += arr_bytes
        amp = np.frombuffer(data, "<f8", n * n, off).reshape(n, n).copy()
        off += arr_bytes
        layers.append(DiffractiveLayer(theta, amp, trainable))
    return cfg, layers
