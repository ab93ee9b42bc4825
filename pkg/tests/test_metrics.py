import numpy as np
import pytest

from d2nn import data, metrics, network, training
from d2nn.errors import D2NNError, DegenerateOutputError, EmptySplitError
from d2nn.metrics import (
    RunReport,
    depth_sweep,
    evaluate,
    perturb_images,
    perturbation_sweep,
    power_efficiency,
    signal_contrast,
)
from d2nn.network import DiffractiveLayer, NetworkConfig, encode_input, forward


@pytest.fixture
def small_net(rng):
    cfg = NetworkConfig(grid_n=16, num_layers=1, layer_spacing=8.0)
    layers = [DiffractiveLayer.phase_only(16, rng)]
    return cfg, layers


class TestPowerEfficiency:
    def test_all_power_on_target(self):
        signals = np.zeros(10)
        signals[4] = 2.5
        assert power_efficiency(signals, 2.5, 4) == pytest.approx(1.0)

    def test_area_ratio(self):
        # 100-pixel detector on a uniform 100x100 unit-intensity plane
        signals = np.full(10, 100.0)
        assert power_efficiency(signals, 10000.0, 2) == pytest.approx(0.01)

    def test_matches_pixel_sum_oracle(self, rng, small_net):
        cfg, layers = small_net
        inp = encode_input(rng.uniform(0, 1, (16, 16)), cfg.encoding)
        trace = forward(cfg, layers, inp)
        target = 3
        r0, c0, r1, c1 = cfg.detector_layout.regions[target]
        v = trace.output_field.values
        direct = sum(abs(v[i, j]) ** 2 for i in range(r0, r1) for j in range(c0, c1))
        eff = power_efficiency(trace.detector_signals, trace.total_output_power, target)
        assert abs(eff - direct / trace.total_output_power) < 1e-12

    def test_degenerate(self):
        with pytest.raises(DegenerateOutputError):
            power_efficiency(np.zeros(10), 0.0, 0)


class TestSignalContrast:
    def test_all_equal_zero_margin(self):
        assert signal_contrast(np.ones(10), 10.0, 5) == pytest.approx(0.0)

    def test_arithmetic(self):
        signals = np.full(10, 0.1)
        signals[7] = 0.3
        assert signal_contrast(signals, 1.0, 7) == pytest.approx(0.2)

    def test_misclassified_is_negative(self):
        signals = np.full(10, 0.1)
        signals[2] = 0.5
        assert signal_contrast(signals, 1.0, 8) < 0

    def test_contrast_sign_matches_correctness(self, rng, small_net):
        cfg, layers = small_net
        for _ in range(20):
            inp = encode_input(rng.uniform(0, 1, (16, 16)), cfg.encoding)
            trace = forward(cfg, layers, inp)
            label = int(rng.integers(0, 10))
            contrast = signal_contrast(trace.detector_signals, trace.total_output_power, label)
            correct = network.classify(trace.detector_signals) == label
            if contrast > 0:
                assert correct
            if correct:
                assert contrast >= 0


class TestEvaluate:
    def test_untrained_near_chance(self, rng):
        cfg = NetworkConfig(grid_n=28, num_layers=1, layer_spacing=20.0)
        layers = [DiffractiveLayer.phase_only(28, rng)]
        images = rng.uniform(0, 1, (600, 28, 28))
        labels = rng.integers(0, 10, 600)
        ds = data.Dataset(images, labels, name="noise")
        row = evaluate(cfg, layers, ds)
        assert 0.02 <= row.accuracy <= 0.25

    def test_deterministic(self, rng, small_net):
        cfg, layers = small_net
        ds = data.synthetic_two_blob(30, 16, seed=2)
        a = evaluate(cfg, layers, ds)
        b = evaluate(cfg, layers, ds)
        assert a == b

    def test_thread_count_does_not_change_result(self, rng, small_net):
        cfg, layers = small_net
        ds = data.synthetic_two_blob(64, 16, seed=2)
        a = evaluate(cfg, layers, ds, threads=1, chunk=16)
        b = evaluate(cfg, layers, ds, threads=4, chunk=16)
        assert a == b

    def test_bounds(self, rng, small_net):
        cfg, layers = small_net
        ds = data.synthetic_two_blob(30, 16, seed=2)
        row = evaluate(cfg, layers, ds)
        assert 0.0 <= row.mean_efficiency <= 1.0
        assert -1.0 <= row.mean_contrast <= 1.0
        assert round(row.accuracy * row.n_samples) == pytest.approx(row.accuracy * row.n_samples)

    def test_empty_set(self, rng, small_net):
        cfg, layers = small_net
        ds = data.Dataset(np.zeros((0, 16, 16)), np.zeros(0, dtype=int))
        with pytest.raises(EmptySplitError):
            evaluate(cfg, layers, ds)


class TestDepthSweep:
    def test_single_depth_single_row(self, rng):
        cfg = NetworkConfig(grid_n=16, num_layers=1, layer_spacing=8.0)
        ds = data.synthetic_two_blob(40, 16, seed=1)
        streams = data.split_and_batch(ds, (0.75, 0.0, 0.25), 8, seed=1)
        tc = training.TrainConfig(epochs=1, batch_size=8, learning_rate=0.05, seed=1)
        report, trained = depth_sweep(
            cfg, [1], {"two_blob": (streams.train, streams.test)}, tc
        )
        assert len(report.rows) == 1
        assert report.rows[0].num_layers == 1
        assert ("two_blob", 1) in trained


class TestPerturbationSweep:
    def test_epsilon_zero_matches_clean(self, rng, small_net):
        cfg, layers = small_net
        ds = data.synthetic_two_blob(40, 16, seed=4)
        clean = evaluate(cfg, layers, ds)
        report, achieved = perturbation_sweep(cfg, layers, ds, [0.0, 1.0], seed=11)
        assert report.rows[0].accuracy == clean.accuracy
        assert achieved[0] == 0.0

    def test_achieved_distance_tracks_request(self, rng):
        images = rng.uniform(0.3, 0.7, (50, 16, 16))  # interior: little clamping
        perturbed, achieved = perturb_images(images, 0.5, np.random.default_rng(3))
        assert np.all(np.abs(achieved - 0.5) < 0.05 * 0.5)
        assert perturbed.min() >= 0.0 and perturbed.max() <= 1.0

    def test_unsorted_epsilons_rejected(self, rng, small_net):
        cfg, layers = small_net
        ds = data.synthetic_two_blob(10, 16, seed=4)
        with pytest.raises(D2NNError):
            perturbation_sweep(cfg, layers, ds, [1.0, 0.0], seed=1)

    def test_negative_epsilon_rejected(self, rng):
        with pytest.raises(D2NNError):
            perturb_images(np.zeros((1, 8, 8)), -1.0, np.random.default_rng(0))


class TestRunReport:
    def test_csv_schema(self, rng, small_net):
        cfg, layers = small_net
        ds = data.synthetic_two_blob(20, 16, seed=6)
        row = evaluate(cfg, layers, ds)
        report = RunReport([row])
        csv = report.to_csv()
        header, line = csv.strip().split("\n")
        assert header == metrics.CSV_HEADER
        assert line.startswith("two_blob,eval,1,,20,")

    def test_plot_data_files(self, tmp_path, rng, small_net):
        cfg, layers = small_net
        ds = data.synthetic_two_blob(20, 16, seed=6)
        report = RunReport([evaluate(cfg, layers, ds)])
        report.write_plot_data(tmp_path)
        files = sorted(p.name for p in tmp_path.iterdir())
        assert "two_blob_eval_accuracy.dat" in files
        content = (tmp_path / "two_blob_eval_accuracy.dat").read_text()
        x, y = content.split()
        assert float(x) == 1 and 0.0 <= float(y) <= 1.0
