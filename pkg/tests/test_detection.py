"""MII detection tests: estimator oracles, indicator contracts, decisions."""

import numpy as np
import pytest

from shmsim.detection import (
    LAMBDA_MAX,
    CorrelationModel,
    DegenerateSignalWarning,
    DetectionConfig,
    DetectionError,
    UnreliableEstimateWarning,
    correlation_coefficient,
    decide_faulty,
    default_edges,
    detection_round,
    deviation_score,
    fault_indicator,
    mutual_information_binned,
    train_correlation_model,
)
from shmsim.sensing import SignalWindow
from shmsim.structure import ExcitationSpec, simulate_response, uniform_chain

# closed-form MI of a bivariate Gaussian: -0.5 ln(1 - rho^2), rho = 0.9
GAUSSIAN_MI_RHO09 = 0.8303656034108254

WINDOW = 550
N_CHANNELS = 10


@pytest.fixture(scope="module")
def bench():
    """Sine-plus-ambient chain episodes with 10% measurement noise.

    Returns (make_round, model, config, signal_rms): make_round(tag) yields
    one fresh dict of channel windows; the model is trained on 6 fault-free
    rounds over the pair set of a +-2 line neighborhood.
    """
    spec = uniform_chain(N_CHANNELS, 1000.0, 1.769e6, 0.02, (WINDOW + 1) * 0.02)
    sine = simulate_response(spec, ExcitationSpec("sine", 1.0, frequency=0.9))

    def make_round(tag):
        ambient = simulate_response(
            spec, ExcitationSpec("white_noise", 0.02, seed=90_000 + tag)
        )
        clean = sine.accelerations[:, :WINDOW] + ambient.accelerations[:, :WINDOW]
        rms = np.sqrt(np.mean(clean**2, axis=1))
        rng = np.random.default_rng(80_000 + tag)
        noisy = clean + 0.1 * rms[:, None] * rng.standard_normal(clean.shape)
        return {
            ch: SignalWindow(
                sensor_id=ch, start_time=0.0, dt=0.02, samples=noisy[ch], round_index=tag
            )
            for ch in range(N_CHANNELS)
        }, rms

    config = DetectionConfig(bins=16, R=5, threshold=0.5)
    training = {ch: [] for ch in range(N_CHANNELS)}
    for d in range(6):
        windows, rms = make_round(d)
        for ch in range(N_CHANNELS):
            training[ch].append(windows[ch])
    pairs = [
        (i, j) for i in range(N_CHANNELS) for j in range(i + 1, min(i + 3, N_CHANNELS))
    ]
    model = train_correlation_model(training, config, pairs=pairs)
    return make_round, model, config, rms


class TestCorrelationCoefficient:
    def test_identical_windows(self):
        u = np.sin(np.arange(100) * 0.17)
        assert correlation_coefficient(u, u) == pytest.approx(1.0, abs=1e-12)

    def test_negated_windows(self):
        u = np.sin(np.arange(100) * 0.17)
        assert correlation_coefficient(u, -u) == pytest.approx(-1.0, abs=1e-12)

    def test_independent_windows_small(self):
        rng = np.random.default_rng(4)
        u, v = rng.standard_normal(100_000), rng.standard_normal(100_000)
        assert abs(correlation_coefficient(u, v)) < 0.02  # ~1/sqrt(n) sampling bound

    def test_length_mismatch(self):
        with pytest.raises(DetectionError):
            correlation_coefficient(np.ones(5), np.ones(6))

    def test_flat_window_flags_degeneracy(self):
        with pytest.warns(DegenerateSignalWarning):
            assert correlation_coefficient(np.ones(50), np.arange(50.0)) == 0.0


class TestMutualInformation:
    def test_independent_windows_near_zero(self):
        rng = np.random.default_rng(7)
        u, v = rng.standard_normal(100_000), rng.standard_normal(100_000)
        edges = (default_edges(u, 16), default_edges(v, 16))
        assert mutual_information_binned(u, v, edges) <= 0.02

    def test_exact_symmetry(self):
        rng = np.random.default_rng(8)
        u = rng.standard_normal(5000)
        v = 0.7 * u + rng.standard_normal(5000)
        edges_u, edges_v = default_edges(u, 16), default_edges(v, 16)
        assert mutual_information_binned(u, v, (edges_u, edges_v)) == mutual_information_binned(
            v, u, (edges_v, edges_u)
        )

    def test_gaussian_closed_form_oracle(self):
        rng = np.random.default_rng(7)
        xy = rng.multivariate_normal([0.0, 0.0], [[1.0, 0.9], [0.9, 1.0]], size=100_000)
        u, v = xy[:, 0], xy[:, 1]
        omega = mutual_information_binned(u, v, (default_edges(u, 32), default_edges(v, 32)))
        assert abs(omega - GAUSSIAN_MI_RHO09) / GAUSSIAN_MI_RHO09 < 0.15

    def test_self_information_equals_binned_entropy(self):
        rng = np.random.default_rng(9)
        u = rng.standard_normal(20_000)
        edges = default_edges(u, 16)
        counts, _ = np.histogram(u, bins=edges)
        p = counts / counts.sum()
        entropy = -float(np.sum(p[p > 0] * np.log(p[p > 0])))
        omega = mutual_information_binned(u, u, (edges, edges))
        assert omega == pytest.approx(entropy, abs=1e-12)

    def test_affine_rescaling_with_cotransformed_edges(self):
        rng = np.random.default_rng(10)
        u = rng.standard_normal(8000)
        v = 0.5 * u + rng.standard_normal(8000)
        edges_u, edges_v = default_edges(u, 16), default_edges(v, 16)
        base = mutual_information_binned(u, v, (edges_u, edges_v))
        a, b = 3.7, -1.2
        scaled = mutual_information_binned(a * u + b, v, (a * edges_u + b, edges_v))
        assert scaled == base

    def test_offset_beyond_reference_range_raises_indicator(self):
        rng = np.random.default_rng(11)
        u = rng.standard_normal(8000)
        v = 0.9 * u + 0.3 * rng.standard_normal(8000)
        edges = (default_edges(u, 16), default_edges(v, 16))
        ref = mutual_information_binned(u, v, edges)
        shifted = mutual_information_binned(u + 10.0, v, edges)  # far outside range
        assert fault_indicator(shifted, ref) > 0.5

    def test_nonnegative(self, bench):
        make_round, model, config, _ = bench
        windows, _ = make_round(500)
        for (i, j) in [(0, 1), (3, 5), (7, 9)]:
            assert model.pair_mi(windows[i], windows[j], i, j) >= 0.0

    def test_undersampled_estimate_warns(self):
        rng = np.random.default_rng(12)
        u, v = rng.standard_normal(20), rng.standard_normal(20)
        edges = (default_edges(u, 16), default_edges(v, 16))
        with pytest.warns(UnreliableEstimateWarning):
            mutual_information_binned(u, v, edges)

    def test_length_mismatch(self):
        with pytest.raises(DetectionError):
            mutual_information_binned(np.ones(5), np.ones(6), (np.linspace(0, 1, 5),) * 2)


class TestFaultIndicator:
    def test_no_change(self):
        assert fault_indicator(0.8, 0.8) == 0.0

    def test_halved_mi(self):
        assert fault_indicator(0.4, 0.8) == pytest.approx(1.0)

    def test_degenerate_sentinel(self):
        with pytest.warns(DegenerateSignalWarning):
            assert fault_indicator(1e-12, 0.8) == LAMBDA_MAX

    def test_negative_rejected(self):
        with pytest.raises(DetectionError):
            fault_indicator(-0.1, 0.5)
        with pytest.raises(DetectionError):
            fault_indicator(0.1, -0.5)


class TestDeviationScore:
    def _groups(self, windows, n_rounds_windows):
        n_group = {ch: [w[ch] for w in n_rounds_windows] for ch in (3, 4, 6, 7)}
        return n_group

    def test_empty_faulty_group_nonnegative(self, bench):
        make_round, model, config, _ = bench
        rounds = [make_round(600 + t)[0] for t in range(2)]
        n_group = self._groups(None, rounds)
        delta = deviation_score(n_group, {}, model, R=2)
        assert delta >= 0.0

    def test_duplicate_group_cancels(self, bench):
        make_round, model, config, _ = bench
        rounds = [make_round(610 + t)[0] for t in range(2)]
        n_group = self._groups(None, rounds)
        f_group = {ch: list(wins) for ch, wins in n_group.items()}
        assert abs(deviation_score(n_group, f_group, model, R=2)) < 1e-12

    def test_stuck_channel_raises_deviation(self, bench):
        """Empirical ordering: a stuck channel in F lifts Delta on every seed."""
        make_round, model, config, rms = bench
        for tag in range(20):
            windows, _ = make_round(700 + tag)
            n_group = {ch: [windows[ch]] for ch in (3, 4, 6, 7)}
            healthy_f = {5: [windows[5]]}
            stuck = SignalWindow(
                sensor_id=5,
                start_time=0.0,
                dt=0.02,
                samples=np.full(WINDOW, 3 * rms[5]),
                round_index=700 + tag,
            )
            stuck_f = {5: [stuck]}
            base = deviation_score(n_group, healthy_f, model, R=1)
            lifted = deviation_score(n_group, stuck_f, model, R=1)
            assert lifted > base

    def test_empty_nonfaulty_group_rejected(self, bench):
        _, model, config, _ = bench
        with pytest.raises(DetectionError):
            deviation_score({}, {}, model, R=1)


class TestTraining:
    def test_retraining_identical(self, bench):
        make_round, _, config, _ = bench
        training = {ch: [] for ch in range(N_CHANNELS)}
        for d in range(5):
            windows, _ = make_round(d)
            for ch in range(N_CHANNELS):
                training[ch].append(windows[ch])
        m1 = train_correlation_model(training, config)
        m2 = train_correlation_model(training, config)
        assert m1.omega_ref == m2.omega_ref
        for ch in range(N_CHANNELS):
            assert np.array_equal(m1.edges[ch], m2.edges[ch])

    def test_adjacent_pair_reference_exceeds_far_pair(self):
        """Spatial correlation decay under broadband ambient excitation."""
        spec = uniform_chain(N_CHANNELS, 1000.0, 1.769e6, 0.02, (WINDOW + 1) * 0.02)
        config = DetectionConfig(bins=16, R=5)
        training = {ch: [] for ch in range(N_CHANNELS)}
        for d in range(6):
            rec = simulate_response(spec, ExcitationSpec("white_noise", 1.0, seed=300 + d))
            clean = rec.accelerations[:, :WINDOW]
            rms = np.sqrt(np.mean(clean**2, axis=1))
            rng = np.random.default_rng(400 + d)
            noisy = clean + 0.1 * rms[:, None] * rng.standard_normal(clean.shape)
            for ch in range(N_CHANNELS):
                training[ch].append(
                    SignalWindow(
                        sensor_id=ch, start_time=0.0, dt=0.02, samples=noisy[ch], round_index=d
                    )
                )
        model = train_correlation_model(training, config, pairs=[(0, 1), (0, 9)])
        assert model.reference(0, 1) > model.reference(0, 9)

    def test_constant_channel_flagged(self, bench):
        make_round, _, config, _ = bench
        windows, _ = make_round(0)
        training = {ch: [] for ch in (0, 1, 2)}
        for d in range(5):
            w, _ = make_round(d)
            training[0].append(w[0])
            training[1].append(w[1])
            training[2].append(
                SignalWindow(sensor_id=2, start_time=0.0, dt=0.02, samples=np.ones(WINDOW), round_index=d)
            )
        with pytest.warns(DegenerateSignalWarning):
            model = train_correlation_model(training, config)
        assert 2 in model.degenerate_channels
        assert model.reference(1, 2) == 0.0

    def test_insufficient_windows_names_pair(self, bench):
        make_round, _, config, _ = bench
        windows, _ = make_round(0)
        training = {0: [windows[0]], 1: [windows[1]]}
        with pytest.raises(DetectionError, match=r"\(0, 1\)"):
            train_correlation_model(training, config)


def _neighbor_map():
    return {
        ch: [j for j in range(N_CHANNELS) if j != ch and abs(j - ch) <= 2]
        for ch in range(N_CHANNELS)
    }


class TestDecideFaulty:
    def test_fault_free_rounds_all_clear(self, bench):
        """Zero false positives over 20 independent fault-free rounds."""
        make_round, model, config, _ = bench
        neighbor_map = _neighbor_map()
        for tag in range(20):
            windows, _ = make_round(1000 + tag)
            decisions = detection_round(windows, neighbor_map, model, config, round_index=tag)
            assert all(d.verdict == "non_faulty" for d in decisions.values())

    def test_stuck_node_flagged_same_round(self, bench):
        make_round, model, config, rms = bench
        neighbor_map = _neighbor_map()
        for tag in range(20):
            windows, _ = make_round(2000 + tag)
            windows[5] = SignalWindow(
                sensor_id=5, start_time=0.0, dt=0.02,
                samples=np.full(WINDOW, 3 * rms[5]), round_index=tag,
            )
            decisions = detection_round(windows, neighbor_map, model, config, round_index=tag)
            assert decisions[5].verdict == "faulty"
            clean = [ch for ch in range(N_CHANNELS) if ch != 5]
            assert all(decisions[ch].verdict == "non_faulty" for ch in clean)

    def test_huge_threshold_clears_everything(self, bench):
        make_round, model, _, rms = bench
        config = DetectionConfig(bins=16, R=5, threshold=1e9)
        windows, _ = make_round(3000)
        windows[5] = SignalWindow(
            sensor_id=5, start_time=0.0, dt=0.02,
            samples=np.full(WINDOW, 3 * rms[5]), round_index=0,
        )
        decisions = detection_round(windows, _neighbor_map(), model, config)
        assert all(d.verdict == "non_faulty" for d in decisions.values())

    def test_zero_neighbors_rejected(self, bench):
        make_round, model, config, _ = bench
        windows, _ = make_round(3100)
        with pytest.raises(DetectionError):
            decide_faulty(0, {0: windows[0]}, model, config)

    def test_absent_window_marked_faulty(self, bench):
        make_round, model, config, _ = bench
        windows, _ = make_round(3200)
        windows[5] = None
        decisions = detection_round(windows, _neighbor_map(), model, config)
        assert decisions[5].verdict == "faulty"
        assert decisions[5].lambda_agg == LAMBDA_MAX

    def test_offset_indicator_monotone_in_magnitude(self, bench):
        """Median indicator over 20 rounds never decreases with offset size."""
        make_round, model, config, rms = bench
        grid = [0.0, 1.25, 2.5, 3.75, 5.0]
        medians = []
        for factor in grid:
            lams = []
            for tag in range(20):
                windows, _ = make_round(4000 + tag)
                shifted = SignalWindow(
                    sensor_id=5, start_time=0.0, dt=0.02,
                    samples=windows[5].samples + factor * rms[5], round_index=tag,
                )
                omega = model.pair_mi(shifted, windows[4], 5, 4)
                lams.append(fault_indicator(omega, model.reference(4, 5)))
            medians.append(float(np.median(lams)))
        assert all(b >= a for a, b in zip(medians, medians[1:])), medians
