import math

import numpy as np
import pytest

from quasistat.channel import (
    PhaseOffsets,
    SamplingGrid,
    SubArraySelection,
    apply_noise_floor,
    apply_phase_offsets,
    decode_container,
    encode_container,
    make_tensor,
    normalize_copolarized,
    read_container,
    select_subarray,
    write_container,
)
from quasistat.errors import (
    ConfigError,
    DataError,
    DegenerateBlockWarning,
    FormatError,
    InsufficientData,
)


def _db(x):
    return 10 * np.log10(x)


class TestGrid:
    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(ConfigError):
            SamplingGrid(0.0, 1.0, 1.0, 4, 4)

    def test_rejects_negative_speed(self):
        with pytest.raises(ConfigError):
            SamplingGrid(1.0, 1.0, 1.0, 2, 2, (1.0, -1.0))

    def test_speed_defaults_to_zero(self):
        g = SamplingGrid(1.0, 1.0, 1.0, 3, 2)
        assert g.speed_per_sample == (0.0, 0.0, 0.0)
        assert g.mean_speed == 0.0

    def test_tensor_rejects_nonfinite(self):
        with pytest.raises(DataError):
            make_tensor(np.array([[np.nan]]))

    def test_tensor_is_read_only(self):
        t = make_tensor(np.ones((2, 2)))
        with pytest.raises(ValueError):
            t.samples[0, 0, 0, 0] = 2


class TestContainer:
    def test_minimal_round_trip(self, tmp_path):
        t = make_tensor(np.array([[1 + 0j]]))
        p = tmp_path / "one.ctf"
        write_container(t, p)
        back = read_container(p)
        assert back.samples.shape == (1, 1, 1, 1)
        assert back.samples[0, 0, 0, 0] == 1 + 0j

    def test_byte_identical_rewrite(self, tmp_path, rng):
        h = rng.standard_normal((5, 6, 2, 2)) + 1j * rng.standard_normal((5, 6, 2, 2))
        t = make_tensor(h, 1e-3, 2e4, 2.5e9, ("V", "H"), ("H", "V"), [1.0] * 5)
        p1, p2 = tmp_path / "a.ctf", tmp_path / "b.ctf"
        write_container(t, p1)
        write_container(read_container(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_metadata_survives(self, rng):
        t = make_tensor(np.ones((3, 4, 1, 2)), 0.5, 3.0, 7.0, ("H",), ("V", "H"), [0, 1, 2])
        back = decode_container(encode_container(t))
        assert back.grid == t.grid
        assert back.pol_rx == ("H",) and back.pol_tx == ("V", "H")

    def test_short_payload(self):
        t = make_tensor(np.ones((2, 128)))
        data = encode_container(t)
        # one frequency row missing
        with pytest.raises(FormatError):
            decode_container(data[:-8])

    def test_declared_freq_mismatch(self):
        t = make_tensor(np.ones((1, 127)))
        data = encode_container(t).replace(b'"n_freq":127', b'"n_freq":128')
        with pytest.raises(FormatError):
            decode_container(data)

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            decode_container(b'{"magic":"XXXX"}\n')

    def test_missing_terminator(self):
        with pytest.raises(FormatError):
            decode_container(b'{"magic":"CTF1"')

    def test_nonfinite_payload(self):
        t = make_tensor(np.ones((1, 1)))
        data = encode_container(t)
        bad = data[:-8] + np.array([np.inf + 0j], dtype="<c8").tobytes()
        with pytest.raises(DataError):
            decode_container(bad)


def _tap_plus_noise(rng, n_time=8, n_freq=256, tap=10, snr_db=40.0):
    delay = np.zeros((n_time, n_freq), dtype=complex)
    delay[:, tap] = 10 ** (snr_db / 20)
    noise = (rng.standard_normal((n_time, n_freq))
             + 1j * rng.standard_normal((n_time, n_freq))) / math.sqrt(2)
    return np.fft.fft(delay + noise, axis=1) / 1.0, tap


class TestNoiseFloor:
    def test_zero_tensor(self):
        t = make_tensor(np.zeros((4, 16)))
        out = apply_noise_floor(t)
        assert not np.any(out.samples)

    def test_tap_preserved_noise_suppressed(self, rng):
        # Expected suppression for exponential noise powers at a 6 dB margin is
        # about 10.4 dB, so the construction must be large enough to average.
        h, tap = _tap_plus_noise(rng, n_time=64, n_freq=1024)
        t = make_tensor(h)
        out = apply_noise_floor(t, 6.0)
        before = np.abs(np.fft.ifft(t.samples[:, :, 0, 0], axis=1)) ** 2
        after = np.abs(np.fft.ifft(out.samples[:, :, 0, 0], axis=1)) ** 2
        tap_change = _db(after[:, tap].sum()) - _db(before[:, tap].sum())
        assert abs(tap_change) < 0.1
        off = np.ones(h.shape[1], dtype=bool)
        off[tap] = False
        reduction = _db(before[:, off].sum()) - _db(after[:, off].sum())
        assert reduction >= 10.0

    def test_idempotent(self, rng):
        h, _ = _tap_plus_noise(rng)
        once = apply_noise_floor(make_tensor(h))
        twice = apply_noise_floor(once)
        np.testing.assert_allclose(twice.samples, once.samples, atol=1e-12)

    def test_all_above_threshold_is_noop(self):
        # flat delay profile: every bin equals the raw noise level
        h = np.fft.fft(np.ones((2, 16)), axis=1)
        t = make_tensor(h)
        assert apply_noise_floor(t, 0.0, calibrated=False) is t

    def test_calibrated_floor_removes_flat_rows(self):
        # a flat profile is indistinguishable from noise once calibrated
        h = np.fft.fft(np.ones((2, 16)), axis=1)
        out = apply_noise_floor(make_tensor(h), 0.0)
        assert not np.any(out.samples)

    def test_too_few_frequencies(self):
        with pytest.raises(InsufficientData):
            apply_noise_floor(make_tensor(np.ones((2, 3))))

    def test_negative_margin(self):
        with pytest.raises(ConfigError):
            apply_noise_floor(make_tensor(np.ones((2, 8))), -1.0)


class TestNormalize:
    def test_constant_magnitude_two(self):
        h = np.full((4, 8, 2, 2), 2.0 + 0j)
        t = make_tensor(h, pol_rx=("V", "H"), pol_tx=("V", "H"))
        out = normalize_copolarized(t, 4, 8)
        np.testing.assert_allclose(np.abs(out.samples), 1.0)
        co = out.copolarized_mask()
        per_matrix = (np.abs(out.samples) ** 2 * co).sum(axis=(2, 3))
        np.testing.assert_allclose(per_matrix.mean(), co.sum(), rtol=1e-12)

    def test_all_v_block_power(self, rng):
        h = rng.standard_normal((16, 128, 2, 3)) + 1j * rng.standard_normal((16, 128, 2, 3))
        out = normalize_copolarized(make_tensor(h))
        power = (np.abs(out.samples) ** 2).sum(axis=(2, 3)).mean()
        assert abs(power - 6) / 6 < 1e-10

    def test_block_scalars_ratio(self):
        h = np.ones((8, 4, 1, 1), dtype=complex)
        h[4:] *= 2.0  # power 4P in the second block
        out = normalize_copolarized(make_tensor(h), 4, 4)
        s1 = out.samples[0, 0, 0, 0] / h[0, 0, 0, 0]
        s2 = out.samples[4, 0, 0, 0] / h[4, 0, 0, 0]
        assert abs(s1 / s2 - 2.0) < 1e-12

    def test_partial_block_mean(self, rng):
        h = rng.standard_normal((20, 10, 1, 1)) + 0j
        out = normalize_copolarized(make_tensor(h), 16, 128)
        p = np.abs(out.samples[16:, :, 0, 0]) ** 2
        assert abs(p.mean() - 1.0) < 1e-10

    def test_degenerate_block_flagged(self):
        h = np.ones((8, 4, 1, 1), dtype=complex)
        h[:4] = 0
        with pytest.warns(DegenerateBlockWarning):
            out = normalize_copolarized(make_tensor(h), 4, 4)
        assert out.degenerate[:4].all() and not out.degenerate[4:].any()
        assert out.flagged_times().tolist() == [True] * 4 + [False] * 4

    def test_no_copolarized_links(self):
        t = make_tensor(np.ones((2, 2, 1, 1)), pol_rx=("V",), pol_tx=("H",))
        with pytest.raises(ConfigError):
            normalize_copolarized(t)


class TestPhaseAndSelection:
    def test_zero_phases_identity(self, rng):
        h = rng.standard_normal((3, 4, 2, 2)) + 0j
        t = make_tensor(h)
        out = apply_phase_offsets(t, PhaseOffsets((0.0, 0.0), (0.0, 0.0)))
        np.testing.assert_array_equal(out.samples, t.samples)

    def test_sign_flip(self):
        out = apply_phase_offsets(make_tensor(np.ones((1, 1))), PhaseOffsets((math.pi,), (0.0,)))
        assert abs(out.samples[0, 0, 0, 0] + 1) < 1e-15

    def test_magnitudes_and_inverse(self, rng):
        h = rng.standard_normal((3, 4, 2, 3)) + 1j * rng.standard_normal((3, 4, 2, 3))
        t = make_tensor(h)
        p = PhaseOffsets(tuple(rng.uniform(0, 6, 3)), tuple(rng.uniform(0, 6, 2)))
        out = apply_phase_offsets(t, p)
        np.testing.assert_allclose(np.abs(out.samples), np.abs(h), rtol=1e-14)
        inv = PhaseOffsets(tuple(-x for x in p.tx_phases), tuple(-x for x in p.rx_phases))
        np.testing.assert_allclose(apply_phase_offsets(out, inv).samples, h, atol=1e-14)

    def test_wrong_length(self):
        with pytest.raises(ConfigError):
            apply_phase_offsets(make_tensor(np.ones((1, 1))), PhaseOffsets((0, 0), (0,)))

    def test_identity_selection(self, rng):
        t = make_tensor(rng.standard_normal((2, 2, 2, 2)) + 0j)
        assert select_subarray(t, SubArraySelection((0, 1), (0, 1))) == t

    def test_projection(self, rng):
        h = rng.standard_normal((2, 3, 2, 2)) + 0j
        out = select_subarray(make_tensor(h), SubArraySelection((0,), (0,)))
        assert out.samples.shape == (2, 3, 1, 1)
        np.testing.assert_array_equal(out.samples[:, :, 0, 0], h[:, :, 0, 0])

    def test_pol_labels_carried(self):
        t = make_tensor(np.ones((1, 1, 2, 2)), pol_rx=("V", "H"), pol_tx=("V", "H"))
        out = select_subarray(t, SubArraySelection((0,), (0,), "vv"))
        assert (out.pol_rx, out.pol_tx) == (("V",), ("V",))

    @pytest.mark.parametrize("rx,tx", [((), (0,)), ((0, 0), (0,)), ((2,), (0,))])
    def test_invalid_selection(self, rx, tx):
        with pytest.raises(ConfigError):
            select_subarray(make_tensor(np.ones((1, 1, 2, 2))), SubArraySelection(rx, tx))
