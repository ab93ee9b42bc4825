"""Evaluation metrics and the experiment procedures.

Per-sample metrics follow the power-normalized definitions: efficiency is the
target-detector signal over total output power, contrast is the margin over
the strongest competitor detector, also normalized by total power. Reported
means average over all test samples (correct and incorrect alike); every
report header states this.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from concurrent.futures import ThreadPoolExecutor

from . import network, training
from .errors import DegenerateOutputError, EmptySplitError, D2NNError
from .network import config_to_dict, encode_values, forward_values, readout_values


@dataclass(frozen=True)
class SampleMetrics:
    correct: bool
    power_efficiency: float
    signal_contrast: float


def power_efficiency(signals, total, target_class):
    """Fraction of the total output-plane power landing on the target detector."""
    if total <= 0:
        raise DegenerateOutputError(f"total output power {total} <= 0")
    return float(signals[target_class] / total)


def signal_contrast(signals, total, target_class):
    """(target signal - strongest competitor signal) / total output power."""
    if total <= 0:
        raise DegenerateOutputError(f"total output power {total} <= 0")
    others = np.delete(np.asarray(signals, dtype=np.float64), target_class)
    return float((signals[target_class] - others.max()) / total)


@dataclass
class ReportRow:
    dataset: str
    variant: str
    num_layers: int
    epsilon: float | None
    n_samples: int
    accuracy: float
    mean_efficiency: float
    mean_contrast: float
    seed: int
    config_digest: str


CSV_HEADER = (
    "dataset,variant,num_layers,epsilon,n_samples,accuracy,"
    "mean_efficiency,mean_contrast,seed,config_digest"
)


@dataclass
class RunReport:
    rows: list = field(default_factory=list)

    def to_csv(self):
        lines = [CSV_HEADER]
        for r in self.rows:
            eps = "" if r.epsilon is None else f"{r.epsilon:.17g}"
            lines.append(
                f"{r.dataset},{r.variant},{r.num_layers},{eps},{r.n_samples},"
                f"{r.accuracy:.17g},{r.mean_efficiency:.17g},{r.mean_contrast:.17g},"
                f"{r.seed},{r.config_digest}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write(self.to_csv())

    def write_plot_data(self, out_dir):
        """One x<TAB>y series file per metric, split by dataset/variant."""
        import os

        os.makedirs(out_dir, exist_ok=True)
        series = {}
        for r in self.rows:
            x = r.epsilon if r.epsilon is not None else r.num_layers
            for metric in ("accuracy", "mean_efficiency", "mean_contrast"):
                key = f"{r.dataset}_{r.variant}_{metric}"
                series.setdefault(key, []).append((x, getattr(r, metric)))
        for key, pts in sorted(series.items()):
            with open(os.path.join(out_dir, key + ".dat"), "w") as f:
                for x, y in pts:
                    f.write(f"{x:.17g}\t{y:.17g}\n")


def config_digest(config):
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _metrics_for_batch(config, layers, images, labels):
    values = encode_values(images, config.encoding)
    _, out = forward_values(config, layers, values)
    signals, totals = readout_values(out, config.detector_layout)
    if np.any(totals <= 0):
        raise DegenerateOutputError("zero total output power during evaluation")
    preds = np.argmax(signals, axis=-1)
    idx = np.arange(len(labels))
    target = signals[idx, labels]
    masked = signals.copy()
    masked[idx, labels] = -np.inf
    competitor = masked.max(axis=-1)
    eff = target / totals
    contrast = (target - competitor) / totals
    return preds == labels, eff, contrast


def evaluate(config, layers, test_set, variant="eval", seed=0, threads=1, chunk=256):
    """One RunReport row: accuracy, mean efficiency, mean contrast over a set.

    Chunks may be evaluated by a small thread pool; results are reassembled in
    chunk order, so the report is identical for any thread count.
    """
    n = len(test_set)
    if n == 0:
        raise EmptySplitError("test set is empty")
    chunks = [
        (test_set.images[lo : lo + chunk], test_set.labels[lo : lo + chunk])
        for lo in range(0, n, chunk)
    ]
    job = lambda pair: _metrics_for_batch(config, layers, *pair)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, chunks))
    else:
        results = [job(pair) for pair in chunks]
    ok = np.concatenate([r[0] for r in results])
    eff = np.concatenate([r[1] for r in results])
    contrast = np.concatenate([r[2] for r in results])
    return ReportRow(
        dataset=test_set.name,
        variant=variant,
        num_layers=config.num_layers,
        epsilon=None,
        n_samples=n,
        accuracy=float(np.mean(ok)),
        mean_efficiency=float(np.mean(eff)),
        mean_contrast=float(np.mean(contrast)),
        seed=seed,
        config_digest=config_digest(config),
    )


def depth_sweep(base_config, depths, datasets, tc, threads=1, quiet=True):
    """Train and evaluate one network per depth per dataset, matched budget.

    `datasets` maps name -> (train_set, test_set). Every depth starts from the
    same seed and training budget; only num_layers varies. Returns
    (RunReport, trained) where trained maps (name, depth) -> (config, layers).
    """
    report = RunReport()
    trained = {}
    for name, (train_set, test_set) in datasets.items():
        for depth in depths:
            config = replace(base_config, num_layers=depth)
            rng = np.random.default_rng(tc.seed)
            layers = [network.DiffractiveLayer.phase_only(config.grid_n, rng) for _ in range(depth)]
            layers, _ = training.train(config, layers, train_set, tc, quiet=quiet)
            row = evaluate(
                config, layers, test_set, variant="depth_sweep", seed=tc.seed, threads=threads
            )
            report.rows.append(row)
            trained[(name, depth)] = (config, layers)
    return report, trained


def perturb_images(images, epsilon, rng):
    """Seeded Gaussian noise rescaled to L2 norm epsilon per image, then clamped.

    Returns (perturbed images, achieved per-image L2 distances after clamping).
    """
    if epsilon < 0:
        raise D2NNError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon == 0:
        return images, np.zeros(len(images))
    noise = rng.standard_normal(images.shape)
    norms = np.sqrt(np.sum(noise**2, axis=(-2, -1), keepdims=True))
    noise *= epsilon / norms
    perturbed = np.clip(images + noise, 0.0, 1.0)
    achieved = np.sqrt(np.sum((perturbed - images) ** 2, axis=(-2, -1)))
    return perturbed, achieved


def perturbation_sweep(config, layers, test_set, epsilons, seed, threads=1):
    """Accuracy vs. L2 input-perturbation magnitude.

    Epsilons must be ascending with first entry 0, so the first row is the
    clean baseline. Returns (RunReport, achieved mean distances per epsilon).
    """
    if list(epsilons) != sorted(epsilons) or (len(epsilons) and epsilons[0] != 0):
        raise D2NNError("epsilons must be ascending and start at 0")
    report = RunReport()
    achieved_means = []
    from .data import Dataset

    for i, eps in enumerate(epsilons):
        rng = np.random.default_rng(seed + i)
        images, achieved = perturb_images(test_set.images, eps, rng)
        noisy = Dataset(images, test_set.labels, test_set.name)
        row = evaluate(config, layers, noisy, variant="perturb", seed=seed, threads=threads)
        row.epsilon = float(eps)
        report.rows.append(row)
        achieved_means.append(float(np.mean(achieved)))
    return report, achieved_means
