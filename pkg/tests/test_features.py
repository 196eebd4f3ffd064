import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hearsight.arraysim import COMPASS, MultiChannelClip, PureTone, SourceSpec, far_field_delays, sector_center, synth_clip
from hearsight.errors import DomainError
from hearsight.features import (
    Spectrogram,
    StftConfig,
    ipd,
    phase_matrix,
    read_tensor,
    stft,
    wrap,
    write_tensor,
)

SR = 16000


def naive_stft(x, n, hop, w):
    # the textbook double sum, one frame and bin at a time
    T = (len(x) - n) // hop + 1
    k = np.arange(n)
    out = np.zeros((n // 2 + 1, T), dtype=complex)
    for tau in range(T):
        seg = x[tau * hop : tau * hop + n] * w
        for f in range(n // 2 + 1):
            out[f, tau] = np.sum(seg * np.exp(-2j * np.pi * k * f / n))
    return out


def test_config_validation():
    for kw in ({"window_len": 511}, {"hop": 0}, {"hop": 600}, {"window_fn": "kaiser"}):
        with pytest.raises(DomainError):
            StftConfig(**kw)


def test_frame_count_matches_enumeration():
    cfg = StftConfig()
    n = 32000
    starts = [s for s in range(0, n) if s + 512 <= n and s % 256 == 0]
    assert cfg.num_frames(n) == len(starts) == 124
    assert stft(np.zeros(n), cfg).bins.shape == (257, 124)


def test_stft_matches_direct_sum(rng):
    cfg = StftConfig(16, 6, "hamming")
    x = rng.standard_normal(70)
    assert np.allclose(stft(x, cfg).bins, naive_stft(x, 16, 6, cfg.window()), atol=1e-12)


def test_window_shapes():
    assert np.allclose(StftConfig(8, 4, "rect").window(), 1)
    h = StftConfig(8, 4, "hann").window()
    assert h[0] == 0 and h[4] == pytest.approx(1)


def test_zero_signal_gives_zero_spectrogram():
    assert not np.any(stft(np.zeros(2048), StftConfig()).bins)


def test_bin_centred_tone_rect_window():
    cfg = StftConfig(512, 256, "rect")
    k = 37
    t = np.arange(8192) / SR
    X = stft(np.cos(2 * np.pi * k * SR / 512 * t), cfg, SR).bins
    mag = np.abs(X)
    assert np.allclose(mag[k], 256, rtol=1e-9)
    others = np.delete(mag, k, axis=0)
    assert others.max() <= 1e-9 * 256


@given(arrays(np.float64, 600, elements=st.floats(-1, 1)), st.sampled_from(["hann", "hamming", "rect"]))
def test_parseval_per_frame(x, win):
    cfg = StftConfig(64, 32, win)
    X = stft(x, cfg).bins
    w = cfg.window()
    for tau in range(X.shape[1]):
        seg = x[tau * 32 : tau * 32 + 64] * w
        # one-sided spectrum: double every bin except DC and Nyquist
        e = np.abs(X[0, tau]) ** 2 + np.abs(X[-1, tau]) ** 2 + 2 * np.sum(np.abs(X[1:-1, tau]) ** 2)
        ref = 64 * np.sum(seg**2)
        assert e == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_spectrogram_resolution():
    s = stft(np.zeros(4096), StftConfig(), SR)
    assert s.freq_resolution == pytest.approx(31.25)
    assert s.frame_rate == pytest.approx(62.5)


def test_short_signal_rejected():
    with pytest.raises(DomainError):
        stft(np.zeros(100), StftConfig())


# -- wrapping and IPD ----------------------------------------------------------


def test_wrap_example_and_boundaries():
    assert wrap(3.0 - (-3.0)) == pytest.approx(6.0 - 2 * math.pi)
    assert wrap(math.pi) == math.pi
    assert wrap(-math.pi) == math.pi
    assert wrap(3 * math.pi) == pytest.approx(math.pi)


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_range_and_congruence(phi):
    w = wrap(phi)
    assert -math.pi < w <= math.pi
    # wrap(phi) - phi is a multiple of 2 pi
    m = (w - phi) / (2 * math.pi)
    assert abs(m - round(m)) < 1e-9


def _spec(bins, cfg=StftConfig(8, 4)):
    return Spectrogram(np.asarray(bins, dtype=complex), SR, cfg)


def test_ipd_identical_is_zero(rng):
    X = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
    assert not np.any(ipd(_spec(X), _spec(X)))


def test_ipd_of_opposite_phases():
    a = _spec([[np.exp(3.0j)]])
    b = _spec([[np.exp(-3.0j)]])
    assert ipd(a, b)[0, 0] == pytest.approx(6.0 - 2 * math.pi, abs=1e-12)


def test_ipd_shape_mismatch():
    with pytest.raises(DomainError):
        ipd(_spec(np.ones((3, 4))), _spec(np.ones((3, 5))))


@given(
    arrays(np.float64, (4, 6), elements=st.floats(-3.1, 3.1)),
    arrays(np.float64, (4, 6), elements=st.floats(-3.1, 3.1)),
    st.integers(-5, 5),
)
def test_ipd_wrap_closure_and_antisymmetry(pa, pb, k):
    a = _spec(np.exp(1j * pa))
    b = _spec(np.exp(1j * pb))
    d = ipd(a, b)
    assert np.all(d > -math.pi) and np.all(d <= math.pi)
    # adding 2 pi k to one channel's phase changes nothing
    b2 = _spec(np.exp(1j * (pb + 2 * math.pi * k)))
    assert np.allclose(ipd(a, b2), d, atol=1e-9)
    back = ipd(b, a)
    # antisymmetric modulo 2 pi
    assert np.allclose(np.exp(1j * back), np.exp(-1j * d), atol=1e-9)


def test_ipd_antisymmetry_at_pi():
    a = _spec([[1.0]])
    b = _spec([[-1.0]])
    assert ipd(a, b)[0, 0] == math.pi
    assert ipd(b, a)[0, 0] == math.pi  # -pi maps onto pi


def test_time_shift_covariance():
    cfg = StftConfig()
    k, m = 20, 3
    f = k * SR / 512
    t = np.arange(16000) / SR
    ref = stft(np.sin(2 * np.pi * f * t), cfg, SR)
    other = stft(np.sin(2 * np.pi * f * (t - m / SR)), cfg, SR)
    got = ipd(ref, other)[k]
    assert np.allclose(got, wrap(2 * np.pi * f * m / SR), atol=1e-3)


# -- phase matrix -------------------------------------------------------------


def test_identical_channels_give_zero_tensor(rng):
    x = rng.standard_normal(4000)
    clip = MultiChannelClip(np.tile(x, (4, 1)), SR)
    assert not np.any(phase_matrix(clip, StftConfig()))


def test_channel_permutation_swaps_rows(rng):
    x = rng.standard_normal((4, 3000))
    pm = phase_matrix(MultiChannelClip(x, SR), StftConfig())
    swapped = phase_matrix(MultiChannelClip(x[[0, 1, 3, 2]], SR), StftConfig())
    assert np.array_equal(swapped, pm[[0, 2, 1]])


def test_phase_matrix_matches_geometry_for_all_classes(geometry):
    cfg = StftConfig()
    k = 24  # 750 Hz, below aliasing on every pair
    f = k * SR / cfg.window_len
    for label in COMPASS:
        az = sector_center(label) + 7.0
        clip = synth_clip(geometry, SourceSpec(label, az % 360, 1e4, PureTone(f)), 1.0, SR)
        pm = phase_matrix(clip, cfg)
        tau = far_field_delays(geometry, az)
        for r in range(3):
            want = wrap(2 * np.pi * f * (tau[r + 1] - tau[0]))
            assert np.max(np.abs(wrap(pm[r, k] - want))) < 1e-3


def test_phase_matrix_needs_four_channels():
    class Two:
        channels = np.zeros((2, 1024))
        sample_rate = SR

    with pytest.raises(DomainError):
        phase_matrix(Two(), StftConfig())


# -- tensor files -------------------------------------------------------------


def test_tensor_roundtrip(tmp_path, rng):
    t = rng.standard_normal((3, 5, 7))
    p = write_tensor(tmp_path / "x.pmx", t, {"label": "front"})
    raw = p.read_bytes()
    assert raw[:4] == b"PMX1" and len(raw) == 16 + 4 * t.size
    assert np.allclose(read_tensor(p), t.astype(np.float32))
    assert (tmp_path / "x.json").exists()


def test_tensor_rejects_corruption(tmp_path):
    p = tmp_path / "x.pmx"
    write_tensor(p, np.zeros((1, 2, 2)))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(DomainError):
        read_tensor(p)
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(DomainError):
        read_tensor(p)
