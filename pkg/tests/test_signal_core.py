import math

import numpy as np
import pytest

from affectloop.signal_core import (
    AMPLITUDE_LIMIT_UV,
    BANDS,
    CHANNEL_LABELS,
    N_CHANNELS,
    ChannelMontage,
    EegEpoch,
    EegFrame,
    FilterBandError,
    InsufficientHistoryError,
    OnlineBandpass,
    UnrecoverableEpochError,
    bandpass,
    clamp_amplitude,
    default_montage,
    detect_bad_channels,
    extract_band_powers,
    interpolate,
    rereference_average,
    total_band_power,
    window_epoch,
    window_stream,
)

FS = 250.0


def make_epoch(data, start=0.0, fs=FS):
    return EegEpoch(start, fs, np.asarray(data, dtype=float))


def sine_epoch(freq, duration, amp=1.0, fs=FS, start=0.0):
    t = np.arange(int(round(duration * fs))) / fs
    row = amp * np.sin(2 * np.pi * freq * t)
    return make_epoch(np.tile(row, (N_CHANNELS, 1)), start=start, fs=fs)


def analog_butter_bandpass_db(freq, low=1.0, high=40.0, order=4):
    """Analytic magnitude of the analog Butterworth bandpass prototype, in dB."""
    w, w1, w2 = 2 * np.pi * freq, 2 * np.pi * low, 2 * np.pi * high
    w0sq, bw = w1 * w2, w2 - w1
    mag_sq = 1.0 / (1.0 + ((w * w - w0sq) / (w * bw)) ** (2 * order))
    return 10 * math.log10(mag_sq)


def steady_amplitude(epoch, discard_s=2.0):
    n0 = int(discard_s * epoch.sample_rate)
    seg = epoch.data[0, n0:-n0] if n0 > 0 else epoch.data[0]
    return np.sqrt(2.0) * np.sqrt(np.mean(seg**2))


# ---------------------------------------------------------------- montage

def test_default_montage_shape_and_labels():
    m = default_montage()
    assert m.labels == CHANNEL_LABELS
    assert len(set(m.labels)) == 32
    norms = np.linalg.norm(m.positions, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-9)
    # Label set matches the headset's published 10-20 list.
    expected = {
        "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FT9", "FC5", "FC1",
        "FC2", "FC6", "FT10", "T7", "C3", "Cz", "C4", "T8", "TP9", "CP5",
        "CP1", "CP2", "CP6", "TP10", "P7", "P3", "Pz", "P4", "P8", "POz",
        "O1", "O2",
    }
    assert set(m.labels) == expected


def test_montage_geometry_makes_sense():
    m = default_montage()
    pos = {lab: m.positions[i] for i, lab in enumerate(m.labels)}
    assert np.allclose(pos["Cz"], [0, 0, 1], atol=1e-12)
    # x is right: even-numbered electrodes sit on the right hemisphere.
    assert pos["F4"][0] > 0 > pos["F3"][0]
    assert pos["Fp2"][0] > 0 > pos["Fp1"][0]
    # y is anterior: frontal positive, occipital negative.
    assert pos["Fz"][1] > 0 > pos["Pz"][1]
    assert pos["O1"][1] < 0 and pos["O2"][1] < 0
    # Left/right mirror pairs are symmetric in x.
    for a, b in [("F3", "F4"), ("T7", "T8"), ("O1", "O2"), ("FT9", "FT10")]:
        assert np.allclose(pos[a] * [-1, 1, 1], pos[b], atol=1e-12)


def test_montage_csv_round_trip(tmp_path):
    m = default_montage()
    path = tmp_path / "montage.csv"
    m.to_csv(str(path))
    m2 = ChannelMontage.from_csv(str(path))
    assert m2.labels == m.labels
    assert np.array_equal(m2.positions, m.positions)


def test_montage_rejects_bad_input():
    m = default_montage()
    with pytest.raises(ValueError):
        ChannelMontage(m.labels[:31], m.positions[:31])
    with pytest.raises(ValueError):
        ChannelMontage(("Cz",) * 32, m.positions)
    with pytest.raises(ValueError):
        ChannelMontage(m.labels, m.positions * 2.0)


# ---------------------------------------------------------------- bandpass

def test_bandpass_passband_attenuation_vs_analytic_oracle():
    # 10 Hz must pass nearly untouched; zero-phase doubles the dB of the
    # analytic single-pass response.
    epoch = sine_epoch(10.0, 20.0)
    out = bandpass(epoch)
    measured_db = 20 * math.log10(steady_amplitude(out))
    assert abs(measured_db) < 1.0
    expected_db = 2 * analog_butter_bandpass_db(10.0)
    assert abs(measured_db - expected_db) < 0.5


def test_bandpass_rejects_drift():
    epoch = sine_epoch(0.1, 40.0)
    out = bandpass(epoch)
    measured_db = 20 * math.log10(max(steady_amplitude(out, discard_s=5.0), 1e-300))
    assert measured_db < -20.0
    # The analytic oracle puts the true attenuation far below the bar.
    assert 2 * analog_butter_bandpass_db(0.1) < -100.0


def test_bandpass_zero_in_zero_out():
    epoch = make_epoch(np.zeros((N_CHANNELS, 500)))
    out = bandpass(epoch)
    assert np.array_equal(out.data, np.zeros((N_CHANNELS, 500)))


def test_bandpass_rejects_bad_bands_and_nonfinite():
    epoch = sine_epoch(10.0, 2.0)
    with pytest.raises(FilterBandError):
        bandpass(epoch, 1.0, 130.0)  # above Nyquist
    with pytest.raises(FilterBandError):
        bandpass(epoch, 40.0, 1.0)
    with pytest.raises(FilterBandError):
        bandpass(epoch, 0.0, 40.0)
    data = np.zeros((N_CHANNELS, 100))
    data[3, 50] = np.nan
    with pytest.raises(ValueError):
        EegEpoch(0.0, FS, data)


def test_online_bandpass_blockwise_equals_single_pass():
    rng = np.random.default_rng(11)
    data = rng.normal(size=(N_CHANNELS, 1000))
    whole = OnlineBandpass().process(data)
    streamed = OnlineBandpass()
    parts = [streamed.process(data[:, i:i + 130]) for i in range(0, 1000, 130)]
    assert np.array_equal(np.concatenate(parts, axis=1), whole)


def test_online_and_offline_agree_within_1db_in_band():
    for freq in (4.0, 10.0, 20.0, 30.0):
        epoch = sine_epoch(freq, 20.0)
        off_amp = steady_amplitude(bandpass(epoch))
        on = OnlineBandpass().process_epoch(epoch)
        on_amp = steady_amplitude(on, discard_s=5.0)
        diff_db = abs(20 * math.log10(on_amp / off_amp))
        assert diff_db < 1.0, f"{freq} Hz: {diff_db:.3f} dB"


# ------------------------------------------------------- bad channels

def noise_epochs(rng, duration=6.0, scale=10.0):
    n = int(duration * FS)
    return make_epoch(rng.normal(scale=scale, size=(N_CHANNELS, n)))


def test_flat_channel_flagged():
    rng = np.random.default_rng(21)
    epoch = noise_epochs(rng)
    data = epoch.data.copy()
    data[7] = 3.5  # constant the whole time
    assert 7 in detect_bad_channels(make_epoch(data))


def test_flat_run_inside_noisy_channel_flagged():
    rng = np.random.default_rng(22)
    epoch = noise_epochs(rng, duration=12.0)
    data = epoch.data.copy()
    n5 = int(5.0 * FS)
    data[12, 300:300 + n5] = data[12, 300]  # flat for exactly 5 s
    flagged = detect_bad_channels(make_epoch(data))
    assert 12 in flagged


def test_hf_noise_flagged_and_matches_brute_force_z():
    rng = np.random.default_rng(23)
    epoch = noise_epochs(rng)
    t = np.arange(epoch.n_samples) / FS
    data = epoch.data.copy()
    data[5] += 100.0 * np.sin(2 * np.pi * 30.0 * t)
    flagged = detect_bad_channels(make_epoch(data))
    assert 5 in flagged

    # Brute-force oracle: robust z of the 20-40 Hz residual SD via FFT masking.
    centered = data - data.mean(axis=1, keepdims=True)
    spec = np.fft.rfft(centered, axis=1)
    freqs = np.fft.rfftfreq(epoch.n_samples, d=1.0 / FS)
    spec[:, (freqs < 20.0) | (freqs > 40.0)] = 0.0
    resid = np.fft.irfft(spec, n=epoch.n_samples, axis=1)
    sd = resid.std(axis=1)
    med = np.median(sd)
    mad = np.median(np.abs(sd - med))
    z = (sd - med) / (1.4826 * mad)
    assert z[5] > 4.0
    assert all(z[i] < 4.0 for i in range(N_CHANNELS) if i != 5)


def test_clean_channels_rarely_flagged():
    # 20 seeded runs of i.i.d. equal-variance noise: at most one false flag.
    total = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        total += len(detect_bad_channels(noise_epochs(rng)))
    assert total <= 1


def test_detect_requires_5s_history():
    rng = np.random.default_rng(24)
    short = make_epoch(rng.normal(size=(N_CHANNELS, int(4.9 * FS))))
    with pytest.raises(InsufficientHistoryError):
        detect_bad_channels(short)


def test_detect_accepts_epoch_list():
    rng = np.random.default_rng(25)
    a = noise_epochs(rng, duration=3.0)
    b = make_epoch(rng.normal(scale=10.0, size=(N_CHANNELS, int(3.0 * FS))),
                   start=3.0)
    data = a.data.copy()
    data[0] = 1.0
    flagged = detect_bad_channels([make_epoch(data), b])
    assert isinstance(flagged, set)


# ------------------------------------------------------- interpolation

def two_source_montage(theta_deg=30.0):
    """Channel 0 at the vertex, channel 1 at theta, channel 2 at 2*theta."""
    pos = np.zeros((N_CHANNELS, 3))
    pos[0] = (0.0, 0.0, 1.0)
    for k, ang in ((1, math.radians(theta_deg)), (2, math.radians(2 * theta_deg))):
        pos[k] = (math.sin(ang), 0.0, math.cos(ang))
    for i in range(3, N_CHANNELS):  # park the rest away from the action
        az = 2 * math.pi * (i - 3) / (N_CHANNELS - 3)
        inc = math.radians(120.0)
        pos[i] = (math.sin(inc) * math.cos(az), math.sin(inc) * math.sin(az),
                  math.cos(inc))
    labels = tuple(f"ch{i:02d}" for i in range(N_CHANNELS))
    return ChannelMontage(labels, pos)


def test_interpolate_two_sources_weighting():
    # Sources at distances d and 2d with values 1 and 0: weights 1/d^2 and
    # 1/(2d)^2 give (1/d^2)/(1/d^2 + 1/(2d)^2) = 0.8.
    montage = two_source_montage()
    data = np.zeros((N_CHANNELS, 10))
    data[1] = 1.0
    bad = set(range(N_CHANNELS)) - {1, 2}
    out = interpolate(make_epoch(data), bad, montage)
    assert np.allclose(out.data[0], 0.8, atol=1e-12)


def test_interpolate_equal_values_identity():
    montage = default_montage()
    data = np.full((N_CHANNELS, 50), 7.25)
    out = interpolate(make_epoch(data), {4, 9}, montage)
    assert np.allclose(out.data[4], 7.25, atol=1e-12)
    assert np.allclose(out.data[9], 7.25, atol=1e-12)


def test_interpolate_leaves_good_channels_and_empty_set_identity():
    rng = np.random.default_rng(31)
    montage = default_montage()
    epoch = noise_epochs(rng)
    out = interpolate(epoch, {3}, montage)
    good = [i for i in range(N_CHANNELS) if i != 3]
    assert np.array_equal(out.data[good], epoch.data[good])
    same = interpolate(epoch, set(), montage)
    assert np.array_equal(same.data, epoch.data)


def test_interpolated_values_bounded_by_good_channels():
    rng = np.random.default_rng(32)
    montage = default_montage()
    epoch = noise_epochs(rng, duration=5.0)
    bad = {0, 15, 31}
    out = interpolate(epoch, bad, montage)
    good = [i for i in range(N_CHANNELS) if i not in bad]
    lo = epoch.data[good].min(axis=0)
    hi = epoch.data[good].max(axis=0)
    for b in bad:
        assert np.all(out.data[b] >= lo - 1e-9)
        assert np.all(out.data[b] <= hi + 1e-9)


def test_interpolate_all_bad_is_unrecoverable():
    montage = default_montage()
    epoch = make_epoch(np.zeros((N_CHANNELS, 10)))
    with pytest.raises(UnrecoverableEpochError):
        interpolate(epoch, set(range(N_CHANNELS)), montage)
    with pytest.raises(ValueError):
        interpolate(epoch, {40}, montage)


# ------------------------------------------------------- re-referencing

def test_rereference_zero_mean_and_idempotent():
    rng = np.random.default_rng(41)
    epoch = noise_epochs(rng, duration=2.0)
    out = rereference_average(epoch)
    assert np.all(np.abs(out.data.mean(axis=0)) < 1e-9)
    again = rereference_average(out)
    assert np.allclose(again.data, out.data, atol=1e-12)
    # Channel differences survive re-referencing.
    assert np.allclose(out.data[4] - out.data[9], epoch.data[4] - epoch.data[9],
                       atol=1e-9)


def test_rereference_identical_channels_zero():
    epoch = make_epoch(np.full((N_CHANNELS, 20), 42.0))
    out = rereference_average(epoch)
    assert np.allclose(out.data, 0.0, atol=1e-12)


# ------------------------------------------------------- windowing

def frames_for(duration, fs=FS, t0=0.0, seed=51):
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    return [EegFrame(t0 + i / fs, rng.normal(size=N_CHANNELS)) for i in range(n)]


def test_window_stream_10s_gives_6_windows():
    wins = window_stream(frames_for(10.0))
    assert len(wins) == 6
    starts = [w.start_time for w in wins]
    assert starts == pytest.approx([0.0, 1.5, 3.0, 4.5, 6.0, 7.5])
    assert all(w.n_samples == 500 for w in wins)


def test_window_stream_edge_lengths():
    assert len(window_stream(frames_for(2.0))) == 1
    assert window_stream(frames_for(1.9)) == []
    assert window_stream([]) == []


def test_window_stream_honors_t0():
    wins = window_stream(frames_for(4.0, t0=100.0))
    assert [w.start_time for w in wins] == pytest.approx([100.0, 101.5])


def test_window_stream_rejects_bad_params_and_order():
    frames = frames_for(4.0)
    with pytest.raises(ValueError):
        window_stream(frames, window_s=0.5, overlap_s=0.5)
    shuffled = [frames[1], frames[0]] + frames[2:]
    with pytest.raises(ValueError):
        window_stream(shuffled)


def test_window_epoch_matches_window_stream():
    frames = frames_for(10.0)
    via_stream = window_stream(frames)
    data = np.stack([f.samples for f in frames], axis=1)
    via_epoch = window_epoch(make_epoch(data))
    assert len(via_stream) == len(via_epoch)
    for a, b in zip(via_stream, via_epoch):
        assert a.start_time == b.start_time
        assert np.array_equal(a.data, b.data)


# ------------------------------------------------------- band powers

def periodogram_band_powers(epoch):
    """Dense-FFT periodogram oracle, independent of the Welch path."""
    n = epoch.n_samples
    fs = epoch.sample_rate
    spec = np.fft.rfft(epoch.data, axis=1)
    psd = (np.abs(spec) ** 2) * 2.0 / (fs * n)
    psd[:, 0] /= 2.0
    if n % 2 == 0:
        psd[:, -1] /= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    df = freqs[1] - freqs[0]
    out = np.empty((N_CHANNELS, 3))
    for j, (_, lo, hi) in enumerate(BANDS):
        mask = (freqs >= lo) & (freqs < hi)
        out[:, j] = psd[:, mask].sum(axis=1) * df
    return out


def test_band_powers_10hz_sine():
    epoch = sine_epoch(10.0, 2.0)
    bp = extract_band_powers(epoch)
    theta, alpha, beta = bp.powers[0]
    assert alpha == pytest.approx(0.5, rel=0.05)  # A^2/2 for A = 1
    assert theta < 0.01 and beta < 0.01
    oracle = periodogram_band_powers(epoch)
    assert oracle[0, 1] == pytest.approx(0.5, rel=0.01)
    assert alpha == pytest.approx(oracle[0, 1], rel=0.05)


def test_band_powers_scale_quadratically():
    rng = np.random.default_rng(61)
    base = rng.normal(size=(N_CHANNELS, 500))
    p1 = extract_band_powers(make_epoch(base)).powers
    p3 = extract_band_powers(make_epoch(3.0 * base)).powers
    assert np.allclose(p3, 9.0 * p1, rtol=1e-9)


def test_band_powers_zero_and_duration_contract():
    zero = make_epoch(np.zeros((N_CHANNELS, 500)))
    assert np.array_equal(extract_band_powers(zero).powers, np.zeros((32, 3)))
    with pytest.raises(ValueError):
        extract_band_powers(make_epoch(np.zeros((N_CHANNELS, 499))))


def test_band_powers_additive_under_total():
    rng = np.random.default_rng(62)
    raw = make_epoch(rng.normal(size=(N_CHANNELS, 500)))
    epoch = bandpass(raw)  # stationary 1-40 Hz noise
    bp = extract_band_powers(epoch)
    total = total_band_power(epoch)
    assert np.all(bp.powers.sum(axis=1) <= total * 1.02)


def test_band_power_window_validation():
    bp = extract_band_powers(sine_epoch(10.0, 2.0), bad_channels=[2, 2, 5])
    assert bp.bad_channels == frozenset({2, 5})
    with pytest.raises(ValueError):
        type(bp)(0.0, -np.ones((32, 3)))


# ------------------------------------------------------- clamp + determinism

def test_clamp_amplitude():
    data = np.zeros((N_CHANNELS, 100))
    data[0, 0] = 500.0
    data[1, 1] = -300.0
    clamped, n = clamp_amplitude(make_epoch(data))
    assert n == 2
    assert clamped.data[0, 0] == AMPLITUDE_LIMIT_UV
    assert clamped.data[1, 1] == -AMPLITUDE_LIMIT_UV
    assert np.all(np.abs(clamped.data) <= AMPLITUDE_LIMIT_UV)
    same, n0 = clamp_amplitude(make_epoch(np.ones((N_CHANNELS, 10))))
    assert n0 == 0 and np.array_equal(same.data, np.ones((N_CHANNELS, 10)))


def test_pipeline_determinism():
    rng = np.random.default_rng(71)
    epoch = noise_epochs(rng)
    a = extract_band_powers(window_epoch(rereference_average(bandpass(epoch)))[0])
    b = extract_band_powers(window_epoch(rereference_average(bandpass(epoch)))[0])
    assert np.array_equal(a.powers, b.powers)
