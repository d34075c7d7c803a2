import struct

import numpy as np
import pytest

from styleclone.audio import (LOG_FLOOR, AudioError, MelSpectrogram, Waveform,
                              invert_mel, load_mel, load_wav, mel_center_freqs,
                              mel_spectrogram, save_mel, save_wav)
from styleclone.pitch import extract_pitch


def tone(freq=220.0, seconds=1.0, amp=0.5):
    t = np.arange(int(16000 * seconds)) / 16000
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


def test_one_second_gives_80_frames():
    mel = mel_spectrogram(tone())
    assert mel.frames.shape == (80, 80)


def test_frame_count_is_floor_of_samples_over_hop():
    for n in (16000, 16199, 16200, 7000):
        mel = mel_spectrogram(Waveform(0.1 * np.random.default_rng(0).standard_normal(n)))
        assert mel.frames.shape[0] == n // 200


def test_silence_hits_log_floor():
    mel = mel_spectrogram(Waveform(np.zeros(16000)))
    assert np.all(mel.frames == LOG_FLOOR)


def test_tone_argmax_bin_matches_filterbank_centers():
    mel = mel_spectrogram(tone(220.0))
    centers = mel_center_freqs()
    expected = int(np.abs(centers - 220.0).argmin())
    argmax = mel.frames[5:-5].argmax(axis=1)
    assert np.all(argmax == expected)


def test_mel_is_deterministic():
    w = Waveform(np.clip(0.3 * np.random.default_rng(1).standard_normal(9000), -1, 1))
    a = mel_spectrogram(w).frames
    b = mel_spectrogram(w).frames
    assert np.array_equal(a, b)


def test_too_short_waveform_raises():
    with pytest.raises(AudioError):
        mel_spectrogram(Waveform(np.zeros(300)))


def test_floor_mel_inverts_to_near_silence():
    w = invert_mel(MelSpectrogram(np.full((40, 80), LOG_FLOOR)))
    assert np.sqrt(np.mean(w.samples ** 2)) < 1e-3


def test_tone_pitch_survives_inversion():
    inv = invert_mel(mel_spectrogram(tone(220.0)))
    c = extract_pitch(inv)
    mid = c.f0_hz[10:-10][c.voiced[10:-10]]
    assert mid.size > 0
    assert abs(np.median(mid) - 220.0) <= 5.0


def test_round_trip_log_mel_error_bounded(toy_utterance):
    mel = mel_spectrogram(toy_utterance.wave)
    back = mel_spectrogram(invert_mel(mel))
    err = np.abs(back.frames - mel.frames).mean()
    assert err <= 0.5  # measured ~0.2 on toy utterances; spec ceiling is 1.0


def test_mel_binary_round_trip(tmp_path):
    mel = mel_spectrogram(tone(seconds=0.5))
    path = tmp_path / "m.mel"
    save_mel(path, mel)
    raw = path.read_bytes()
    assert raw[:4] == b"USML"
    t, c = struct.unpack("<II", raw[4:12])
    assert (t, c) == mel.frames.shape
    assert len(raw) == 12 + 4 * t * c
    again = load_mel(path)
    assert np.allclose(again.frames, mel.frames, atol=1e-4)


def test_mel_binary_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.mel"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(AudioError):
        load_mel(path)


def test_wav_round_trip(tmp_path):
    w = tone(seconds=0.3)
    path = tmp_path / "t.wav"
    save_wav(path, w)
    again = load_wav(path)
    assert again.sample_rate == 16000
    assert np.max(np.abs(again.samples - w.samples)) < 1.0 / 32000


def test_waveform_validates_range():
    with pytest.raises(AudioError):
        Waveform(np.array([0.0, 2.0]))
    with pytest.raises(AudioError):
        Waveform(np.array([np.nan, 0.0]))
