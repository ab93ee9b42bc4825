"""Training: MSE loss on normalized detector signals and the adjoint pass.

The reverse pass is derived by hand. Writing A = dL/dE* (Wirtinger gradient
with respect to the conjugate field), the seed at the output plane is
A = (dL/dI) * E_out, free-space propagation backpropagates through the
conjugated transfer function, modulation through the conjugated transmission,
and the per-pixel phase gradient is dL/dtheta = 2 Re(conj(A) * i t E_in).
Nonlinear stacks are inference-only: backward refuses them rather than
returning a wrong gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from . import network, optics
from .errors import (
    D2NNError,
    DegenerateOutputError,
    EmptySplitError,
    UnsupportedOperationError,
)
from .network import DiffractiveLayer, classify, encode_values, forward_values, plan_for, readout_values
from .optics import NonlinearKind


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-2
    optimizer: str = "adam"  # "adam" or "sgd"
    seed: int = 0
    loss: str = "mse"
    train_amp: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise D2NNError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise D2NNError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "mse":
            raise D2NNError(f"unknown loss {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise D2NNError("epochs and batch_size must be >= 1")


@dataclass
class GradientSet:
    """Per-layer parameter gradients, same shapes as the layer arrays."""

    d_theta: list
    d_amp: list


def loss_and_signal_grad(signals, total, target_class):
    """MSE on power-normalized signals against a one-hot target.

    Returns (loss, dL/d signals, dL/d total), all exact partials.
    """
    signals = np.asarray(signals, dtype=np.float64)
    if total <= 0:
        raise DegenerateOutputError(f"total output power {total} <= 0")
    target = np.zeros(10)
    target[target_class] = 1.0
    norm = signals / total
    resid = norm - target
    loss = float(np.mean(resid**2))
    d_signals = 0.2 * resid / total
    d_total = float(-0.2 * np.dot(resid, signals) / total**2)
    return loss, d_signals, d_total


def intensity_seed(layout, d_signals, d_total):
    """Per-pixel dL/dI on the output plane from signal/total partials.

    d_total touches every pixel (total power integrates the whole plane);
    d_signals only the corresponding detector rectangles.
    """
    seed = np.full((layout.grid_n, layout.grid_n), d_total, dtype=np.float64)
    for c, (r0, c0, r1, c1) in enumerate(layout.regions):
        seed[r0:r1, c0:c1] += d_signals[..., c, None, None]
    return seed


def _backward_values(config, layers, pre_fields, output_values, seed):
    """Adjoint pass on raw (..., n, n) arrays; gradients summed over the batch."""
    if config.nonlinearity.kind is not NonlinearKind.LINEAR:
        raise UnsupportedOperationError(
            "gradients through nonlinear layers are not supported (inference only)"
        )
    n, pitch = config.grid_n, config.pitch
    num = config.num_layers
    adj = seed * output_values
    d_theta = [None] * num
    d_amp = [None] * num
    for i in range(num - 1, -1, -1):
        adj = optics.propagate_values(adj, plan_for(n, pitch, config.gap_after(i)), conjugate=True)
        t = layers[i].transmission()
        e_in = pre_fields[i]
        co = np.conj(adj) * e_in
        sum_axes = tuple(range(co.ndim - 2))
        d_theta[i] = 2.0 * np.real(co * 1j * t).sum(axis=sum_axes)
        d_amp[i] = 2.0 * np.real(co * np.exp(1j * layers[i].theta)).sum(axis=sum_axes)
        adj = adj * np.conj(t)
    return GradientSet(d_theta, d_amp)


def backward(config, layers, trace, d_intensity_seed):
    """Gradients of a scalar loss given dL/d(output intensity) per pixel.

    `trace` must come from forward() on the same layers. Layers with
    trainable=False get exactly-zero gradients.
    """
    seed = np.asarray(d_intensity_seed, dtype=np.float64)
    if seed.shape != (config.grid_n, config.grid_n):
        raise D2NNError(f"seed shape {seed.shape} does not match the grid")
    grads = _backward_values(
        config,
        layers,
        [f.values for f in trace.pre_layer_fields],
        trace.output_field.values,
        seed,
    )
    for i, layer in enumerate(layers):
        if not layer.trainable:
            grads.d_theta[i] = np.zeros_like(layer.theta)
            grads.d_amp[i] = np.zeros_like(layer.amp)
    return grads


@dataclass
class OptimizerState:
    """SGD or Adam (beta1=0.9, beta2=0.999, eps=1e-8) over the layer stack."""

    kind: str
    learning_rate: float
    train_amp: bool = False
    t: int = 0
    m_theta: list = field(default_factory=list)
    v_theta: list = field(default_factory=list)
    m_amp: list = field(default_factory=list)
    v_amp: list = field(default_factory=list)

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    @classmethod
    def for_layers(cls, tc, layers):
        state = cls(kind=tc.optimizer, learning_rate=tc.learning_rate, train_amp=tc.train_amp)
        for layer in layers:
            state.m_theta.append(np.zeros_like(layer.theta))
            state.v_theta.append(np.zeros_like(layer.theta))
            state.m_amp.append(np.zeros_like(layer.amp))
            state.v_amp.append(np.zeros_like(layer.amp))
        return state


def _adam_update(m, v, g, t, lr):
    b1, b2, eps = OptimizerState.BETA1, OptimizerState.BETA2, OptimizerState.EPS
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * g * g
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return lr * m_hat / (np.sqrt(v_hat) + eps)


def step(state, layers, grads, freeze=None):
    """One in-place optimizer update; frozen layers stay bit-identical."""
    if freeze is None:
        freeze = [False] * len(layers)
    state.t += 1
    for i, layer in enumerate(layers):
        if freeze[i] or not layer.trainable:
            continue
        if state.kind == "sgd":
            layer.theta -= state.learning_rate * grads.d_theta[i]
            if state.train_amp:
                layer.amp -= state.learning_rate * grads.d_amp[i]
        else:
            layer.theta -= _adam_update(
                state.m_theta[i], state.v_theta[i], grads.d_theta[i], state.t, state.learning_rate
            )
            if state.train_amp:
                layer.amp -= _adam_update(
                    state.m_amp[i], state.v_amp[i], grads.d_amp[i], state.t, state.learning_rate
                )
        if state.train_amp:
            np.clip(layer.amp, 0.0, 1.0, out=layer.amp)


def batch_loss_and_grads(config, layers, images, labels, base_index=0):
    """Mean loss and mean-gradient over one batch of images (B, n, n)."""
    values = encode_values(images, config.encoding)
    pre, out = forward_values(config, layers, values, keep_trace=True)
    signals, totals = readout_values(out, config.detector_layout)
    bad = np.flatnonzero(totals <= 0)
    if bad.size:
        raise DegenerateOutputError(
            f"sample {base_index + int(bad[0])}: total output power "
            f"{totals[bad[0]]} <= 0"
        )
    batch = len(labels)
    target = np.zeros((batch, 10))
    target[np.arange(batch), labels] = 1.0
    norm = signals / totals[:, None]
    resid = norm - target
    losses = np.mean(resid**2, axis=-1)
    d_signals = 0.2 * resid / totals[:, None]
    d_total = -0.2 * np.sum(resid * signals, axis=-1) / totals**2
    # mean over the batch folded into the per-sample seeds
    seed = np.broadcast_to(
        d_total[:, None, None], (batch, config.grid_n, config.grid_n)
    ).copy()
    for c, (r0, c0, r1, c1) in enumerate(config.detector_layout.regions):
        seed[:, r0:r1, c0:c1] += d_signals[:, c, None, None]
    seed /= batch
    grads = _backward_values(config, layers, pre, out, seed)
    for i, layer in enumerate(layers):
        if not layer.trainable:
            grads.d_theta[i] = np.zeros_like(layer.theta)
            grads.d_amp[i] = np.zeros_like(layer.amp)
    preds = np.argmax(signals, axis=-1)
    return float(np.mean(losses)), grads, preds


def _eval_accuracy(config, layers, dataset, chunk=256):
    correct = 0
    for lo in range(0, len(dataset.labels), chunk):
        images = dataset.images[lo : lo + chunk]
        values = encode_values(images, config.encoding)
        _, out = forward_values(config, layers, values)
        signals, _ = readout_values(out, config.detector_layout)
        correct += int(np.sum(np.argmax(signals, axis=-1) == dataset.labels[lo : lo + chunk]))
    return correct / len(dataset.labels)


def train(config, layers, dataset, tc, val_set=None, freeze=None, quiet=True):
    """Mini-batch gradient descent over the dataset.

    The shuffle order is fully determined by tc.seed (epoch e reshuffles with
    seed + e); batch gradients are accumulated in sample-index order, so two
    runs with the same inputs produce bit-identical parameters and history.
    Returns (layers, history) where history rows are (epoch, split, loss, accuracy).
    """
    if len(dataset.labels) == 0:
        raise EmptySplitError("training dataset is empty")
    state = OptimizerState.for_layers(tc, layers)
    history = []
    n_samples = len(dataset.labels)
    for epoch in range(tc.epochs):
        order = np.random.default_rng(tc.seed + epoch).permutation(n_samples)
        epoch_loss = 0.0
        epoch_correct = 0
        for lo in range(0, n_samples, tc.batch_size):
            idx = order[lo : lo + tc.batch_size]
            loss, grads, preds = batch_loss_and_grads(
                config, layers, dataset.images[idx], dataset.labels[idx], base_index=lo
            )
            step(state, layers, grads, freeze)
            epoch_loss += loss * len(idx)
            epoch_correct += int(np.sum(preds == dataset.labels[idx]))
        history.append((epoch, "train", epoch_loss / n_samples, epoch_correct / n_samples))
        if val_set is not None and len(val_set.labels):
            acc = _eval_accuracy(config, layers, val_set)
            history.append((epoch, "val", float("nan"), acc))
        if not quiet:
            print(f"epoch {epoch}: {history[-1]}")
    return layers, history


def lego_patch(frozen_layers, num_new_layers, insert, config, dataset, tc, val_set=None):
    """Freeze an existing stack and train additional layers around it.

    New layers start transparent (theta = 0, amp = 1) and are laminated at
    zero gap onto the last layer (append) or first layer (prepend), so the
    optical path is unchanged and the patched network initially reproduces
    the frozen baseline bit-exactly. Returns (extended config, extended
    layers, history); the frozen arrays are the caller's objects and stay
    bit-identical.
    """
    if num_new_layers < 1:
        raise D2NNError("num_new_layers must be >= 1")
    if insert not in ("append", "prepend"):
        raise D2NNError(f"insert must be 'append' or 'prepend', got {insert!r}")
    for layer in frozen_layers:
        layer.trainable = False
    new = [DiffractiveLayer.phase_only(config.grid_n) for _ in range(num_new_layers)]
    from dataclasses import replace

    if config.layer_gaps is not None:
        gaps = list(config.layer_gaps)
    else:
        gaps = [config.layer_spacing] * max(config.num_layers - 1, 0)
    if insert == "append":
        stack = list(frozen_layers) + new
        patched = replace(
            config,
            num_layers=config.num_layers + num_new_layers,
            layer_gaps=tuple(gaps + [0.0] * num_new_layers),
        )
    else:
        stack = new + list(frozen_layers)
        patched = replace(
            config,
            num_layers=config.num_layers + num_new_layers,
            layer_gaps=tuple([0.0] * num_new_layers + gaps),
        )
    freeze = [not l.trainable for l in stack]
    stack, history = train(patched, stack, dataset, tc, val_set=val_set, freeze=freeze)
    return patched, stack, history


def history_to_csv(history):
    """`epoch,split,loss,accuracy` with 17-significant-digit floats."""
    lines = ["epoch,split,loss,accuracy"]
    for epoch, split, loss, acc in history:
        lines.append(f"{epoch},{split},{loss:.17g},{acc:.17g}")
    return "\n".join(lines) + "\n"
