import json

import numpy as np
import pytest

from quasistat.channel import SamplingGrid
from quasistat.errors import ConfigError
from quasistat.synth import (
    ScattererCluster,
    SteeringModel,
    generate,
    ground_truth_psd,
    load_scene,
    scene_from_dict,
)

GRID = SamplingGrid(1e-3, 1e5, 2.5e9, 256, 64, (1.0,) * 256)


def _single(clusters, grid=GRID, **kw):
    angles = tuple(0.0 for _ in clusters)
    return generate(clusters, SteeringModel(rx_angles=angles, tx_angles=angles, **kw),
                    grid, seed=5)


def test_zero_clusters():
    t = _single([])
    assert t.samples.shape == (256, 64, 1, 1)
    assert not np.any(t.samples)


def test_single_cluster_doppler_peak():
    nu = 125.0
    t = _single([ScattererCluster(doppler_hz=nu, delay_s=0.0)])
    h = t.samples[:, :, 0, 0]
    np.testing.assert_allclose(np.abs(h), np.broadcast_to(np.abs(h[:, :1]), h.shape), rtol=1e-12)
    spectrum = np.abs(np.fft.fft(h[:, 0])) ** 2
    freqs = np.fft.fftfreq(GRID.n_time, GRID.time_spacing)
    assert abs(freqs[np.argmax(spectrum)] - nu) <= 1.0 / (GRID.n_time * GRID.time_spacing)


def test_power_ratio_in_delay_domain():
    clusters = [ScattererCluster(doppler_hz=50, delay_s=10 / (64 * 1e5), power=1.0),
                ScattererCluster(doppler_hz=-80, delay_s=30 / (64 * 1e5), power=4.0)]
    t = _single(clusters)
    p = (np.abs(np.fft.ifft(t.samples[:, :, 0, 0], axis=1)) ** 2).mean(axis=0)
    assert abs(p[30] / p[10] - 4.0) < 0.04


def test_deterministic():
    c = [ScattererCluster(doppler_hz=20, delay_s=1e-6, doppler_spread_hz=5)]
    a = _single(c)
    b = _single(c)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_average_power_matches_cluster_sum():
    c = [ScattererCluster(doppler_hz=20, delay_s=1e-6, power=0.7, doppler_spread_hz=30),
         ScattererCluster(doppler_hz=-90, delay_s=3e-6, power=1.8, doppler_spread_hz=10)]
    t = _single(c)
    assert t.grid.n_time * t.grid.n_freq >= 4096
    mean = np.mean(np.abs(t.samples) ** 2)
    assert abs(mean - 2.5) / 2.5 < 0.05


def test_birth_death_and_ramp():
    c = ScattererCluster(doppler_hz=0, delay_s=0, birth_time=10, death_time=20, ramp=4)
    t = _single([c])
    power = np.abs(t.samples[:, 0, 0, 0]) ** 2
    assert not power[:10].any() and not power[20:].any()
    env = c.envelope(GRID.n_time)
    assert env[10] == 0.25 and env[15] == 1.0 and env[19] == 0.25


def test_cross_polar_coupling():
    c = ScattererCluster(doppler_hz=0, delay_s=0, pol_gain=((1.0, 0.0), (0.0, 0.25)))
    t = _single([c], rx_positions=(0.0, 0.0), tx_positions=(0.0, 0.0),
                pol_rx=("V", "H"), pol_tx=("V", "H"))
    p = np.abs(t.samples[0, 0]) ** 2
    np.testing.assert_allclose(p, [[1.0, 0.0], [0.0, 0.25]], atol=1e-12)


def test_steering_rank_one():
    c = ScattererCluster(doppler_hz=10, delay_s=0)
    steer = SteeringModel(rx_positions=(0, 0.5, 1.0), tx_positions=(0, 0.5),
                          rx_angles=(0.4,), tx_angles=(1.1,))
    h = generate([c], steer, GRID, 0).samples[3, 2]
    s = np.linalg.svd(h, compute_uv=False)
    assert s[1] < 1e-10 * s[0]


@pytest.mark.parametrize("kw", [
    {"doppler_hz": 600.0, "delay_s": 0.0},      # beyond 1/(2 T_m) = 500 Hz
    {"doppler_hz": 0.0, "delay_s": 2e-5},       # beyond 1/F_m = 10 us
    {"doppler_hz": 0.0, "delay_s": 0.0, "birth_time": 30, "death_time": 20},
    {"doppler_hz": 0.0, "delay_s": 0.0, "power": -1.0},
])
def test_invalid_cluster(kw):
    with pytest.raises(ConfigError):
        _single([ScattererCluster(**kw)])


def test_missing_angles():
    with pytest.raises(ConfigError):
        generate([ScattererCluster(0, 0)], SteeringModel(), GRID, 0)


class TestGroundTruth:
    def test_delta_at_bin(self):
        nu = 3 / (63 * GRID.time_spacing)
        dop, dly = ground_truth_psd([ScattererCluster(nu, 0.0, power=2.0)], GRID, 0)
        power = dop.bin_power
        assert power[31 + 3] == pytest.approx(2.0)
        assert np.count_nonzero(power) == 1
        assert dly.bin_power[0] == pytest.approx(2.0)

    def test_dead_cluster_excluded(self):
        c = ScattererCluster(0.0, 0.0, birth_time=100)
        dop, _ = ground_truth_psd([c], GRID, 50)
        assert not dop.values.any()

    def test_additive(self):
        cs = [ScattererCluster(0.0, 0.0, power=1.5), ScattererCluster(0.0, 0.0, power=0.5)]
        dop, dly = ground_truth_psd(cs, GRID, 0)
        assert dop.bin_power[31] == pytest.approx(2.0)
        assert dly.bin_power[0] == pytest.approx(2.0)


def test_scene_json(tmp_path):
    doc = {
        "grid": {"T_m": 1e-3, "F_m": 1e5, "f_c": 2.5e9, "n_time": 32, "n_freq": 8, "speed": 1.5},
        "steering": {"rx_positions": [0, 0.5], "tx_positions": [[0, 0]],
                     "pol_rx": ["V", "H"], "pol_tx": ["V"]},
        "clusters": [{"doppler_hz": 5, "delay_s": 0, "rx_angle": 0.2, "tx_angle": 0.1,
                      "pol_gain": [[1, 0.1], [0.1, 1]]}],
        "seed": 9,
    }
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(doc))
    scene = load_scene(p)
    assert scene.seed == 9 and scene.grid.mean_speed == 1.5
    t = generate(scene.clusters, scene.steering, scene.grid, scene.seed)
    assert t.samples.shape == (32, 8, 2, 1)
    with pytest.raises(ConfigError):
        scene_from_dict({"clusters": []})
