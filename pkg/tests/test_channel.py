import numpy as np
import pytest

from beamalign import channel as ch
from beamalign.beammaps import lws_map
from beamalign.geometry import AngleGrid, Query, steering_vector


@pytest.fixture
def grid():
    return AngleGrid(-60, 60, M=8, k=2, N_R=8)


def test_receive_matched_filter_noise_free(grid):
    rng = np.random.default_rng(0)
    w = steering_vector(13.0, grid)
    params = ch.ChannelParams(sigma2=0.0)
    assert ch.receive(w, 13.0, grid, params, rng) == pytest.approx(1.0, abs=1e-12)


def test_receive_orthogonal_directions():
    grid = AngleGrid(-90, 90, M=2, k=1, N_R=2)
    rng = np.random.default_rng(0)
    w = steering_vector(90.0, grid)
    y = ch.receive(w, 0.0, grid, ch.ChannelParams(sigma2=0.0), rng)
    assert abs(y) < 1e-12


def test_receive_scales_with_gain_and_power(grid):
    rng = np.random.default_rng(0)
    w = steering_vector(-20.0, grid)
    params = ch.ChannelParams(alpha=2j, power=4.0, sigma2=0.0)
    assert ch.receive(w, -20.0, grid, params, rng) == pytest.approx(4j, abs=1e-12)


def test_receive_rejects_non_unit_beam(grid):
    with pytest.raises(ValueError):
        ch.receive(np.ones(grid.N_R), 0.0, grid, ch.ChannelParams(), np.random.default_rng(0))


def test_combined_noise_variance(grid):
    rng = np.random.default_rng(7)
    w = lws_map(Query([2, 5]), grid)
    params = ch.ChannelParams(alpha=0.0, sigma2=0.8)
    ys = np.array([ch.receive(w, 0.0, grid, params, rng) for _ in range(100_000)])
    assert np.var(ys.real) == pytest.approx(0.4, rel=0.05)
    assert np.var(ys.imag) == pytest.approx(0.4, rel=0.05)


def test_measure_full_is_identity():
    for y in (0.0, 1 + 1j, -3.0):
        assert ch.measure_full(y) == y


def test_measure_1bit_strict_threshold():
    assert ch.measure_1bit(np.sqrt(2.0), 1.0) == 1
    assert ch.measure_1bit(np.sqrt(0.5), 1.0) == 0
    assert ch.measure_1bit(1.0, 1.0) == 0   # |y|^2 == iota is a 0
    assert ch.measure_1bit(ch.measure_full(2.0), 1.0) == ch.measure_1bit(2.0, 1.0)


def test_qd_bsc_zero_crossover_is_clean():
    bsc = ch.QueryDependentChannel("bsc", lambda s: 0.0)
    rng = np.random.default_rng(0)
    assert all(ch.qd_channel_sample(bsc, 1, 0.3, rng) == 1 for _ in range(100))


def test_qd_awgn_zero_noise_is_clean():
    awgn = ch.QueryDependentChannel("awgn", lambda s: 0.0)
    rng = np.random.default_rng(0)
    assert ch.qd_channel_sample(awgn, 0.7, 0.3, rng) == 0.7


def test_qd_bsc_empirical_flip_rate():
    bsc = ch.QueryDependentChannel("bsc", lambda s: 0.1)
    rng = np.random.default_rng(3)
    flips = sum(ch.qd_channel_sample(bsc, 0, 0.5, rng) for _ in range(100_000))
    assert flips / 100_000 == pytest.approx(0.1, abs=0.01)


def test_qd_awgn_noise_scale():
    awgn = ch.QueryDependentChannel("awgn", lambda s: 0.5, sigma=2.0)
    rng = np.random.default_rng(3)
    ys = np.array([ch.qd_channel_sample(awgn, 1.0, 0.2, rng) for _ in range(50_000)])
    assert ys.std() == pytest.approx(1.0, rel=0.05)   # beta*sigma = 1


def test_qd_channel_rejects_bad_query_size():
    bsc = ch.QueryDependentChannel("bsc", lambda s: 0.1)
    with pytest.raises(ValueError):
        ch.qd_channel_sample(bsc, 1, 1.5, np.random.default_rng(0))


def test_affine_beta_clipping():
    beta = ch.affine_beta(0.05, 0.2, clip=0.45)
    assert beta(0.0) == pytest.approx(0.05)
    assert beta(1.0) == pytest.approx(0.25)
    assert ch.affine_beta(0.4, 1.0)(1.0) == pytest.approx(0.45)


def test_flip_prob_estimator_rejects_bad_args(grid):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        ch.estimate_effective_flip_prob(lws_map, grid, 2, 0.0, 0, rng)
    with pytest.raises(ValueError):
        ch.estimate_effective_flip_prob(lws_map, grid, 9, 0.0, 10, rng)


def test_flip_prob_zero_for_ideal_responses(grid, monkeypatch):
    """With an ideal questioner-channel substituted for the physical pipeline
    (measurement == region indicator), the empirical crossover rate is 0."""
    state = {}
    real_receive = ch.receive

    def spy_receive(w, theta, g, params, rng):
        state["theta"] = theta
        return real_receive(w, theta, g, params, rng)

    def ideal_measure(y, iota):
        q: Query = state["query"]
        u = (state["theta"] - grid.theta_min) / grid.span
        return int(int(np.ceil(u * grid.M)) in set(q.bins))

    def spy_mapper(q, g):
        state["query"] = q
        return lws_map(q, g)

    monkeypatch.setattr(ch, "receive", spy_receive)
    monkeypatch.setattr(ch, "measure_1bit", ideal_measure)
    rate = ch.estimate_effective_flip_prob(spy_mapper, grid, 3, 0.0, 400,
                                           np.random.default_rng(1))
    assert rate == 0.0


def test_flip_prob_noise_dominated_limit(grid):
    """Pure-noise powers against a fixed threshold with balanced in/out
    sampling give a crossover rate of 1/2."""
    rng = np.random.default_rng(5)
    rate = ch.estimate_effective_flip_prob(lws_map, grid, 2, -80.0, 4000, rng)
    assert rate == pytest.approx(0.5, abs=0.05)


def test_calibrate_flip_probs_clips_into_open_interval(grid):
    rng = np.random.default_rng(5)
    table = ch.calibrate_flip_probs(lws_map, grid, -80.0, 200, rng, k_max=3)
    assert set(table) == {1, 2, 3}
    assert all(0.0 < p < 0.5 for p in table.values())


def test_snr_roundtrip():
    params = ch.ChannelParams.from_snr_db(7.0)
    assert params.snr_db == pytest.approx(7.0)
    assert ch.ChannelParams(sigma2=0.0).snr_db == np.inf
