#!/usr/bin/env python3
"""
Tests for manifests, audio decoding, channel simulation and the
synthetic corpus generator.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

# Add project root to path to import modules
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.append(str(PROJECT_ROOT))

from speakerid.corpus import (
    CHANNELS,
    MAX_POLE_RADIUS,
    ConditionKey,
    UtteranceRecord,
    apply_channel,
    build_synth_corpus,
    channel_response,
    decode_audio,
    load_manifest,
    make_speakers,
    records_frame,
    synth_utterance,
    write_manifest,
    write_wav,
)
from speakerid.errors import AudioFormatError, DataError, InvalidInputError, ManifestError
from speakerid.frontend import AudioClip

HEADER = "speaker,session,microphone,language,role,index,path,duration\n"


def write_pcm(path, rate, samples):
    wavfile.write(path, rate, np.round(np.asarray(samples) * 32767).astype(np.int16))
    return path


def make_manifest(tmp_path, rows, touch=True):
    for row in rows:
        audio = row.split(",")[6]
        if touch and audio:
            write_pcm(tmp_path / audio, 8000, np.zeros(800))
    manifest = tmp_path / "manifest.csv"
    manifest.write_text(HEADER + "".join(row + "\n" for row in rows), encoding="utf-8")
    return manifest


def test_load_manifest_reads_rows(tmp_path):
    manifest = make_manifest(tmp_path, [
        "spk01,S1,M1,c,train,0,a.wav,0.1",
        "spk01,S1,M1,c,test,1,b.wav,0.1",
    ])
    records = load_manifest(manifest)
    assert len(records) == 2
    assert records[0].key == ConditionKey(speaker="spk01", session="S1", microphone="M1", language="c", role="train")
    assert records[1].key.index == 1
    assert records[1].path == tmp_path.absolute() / "b.wav"
    assert records[0].duration_s == pytest.approx(0.1)


def test_manifest_write_then_load(tmp_path):
    records = [
        UtteranceRecord(
            key=ConditionKey(speaker=f"spk0{i}", session="S1", microphone="M3", language="s", role="test", index=i),
            path=write_pcm(tmp_path / f"u{i}.wav", 8000, np.zeros(80)).absolute(),
            duration_s=0.01,
        )
        for i in range(1, 4)
    ]
    manifest = write_manifest(records, tmp_path / "manifest.csv")
    assert "u1.wav" in manifest.read_text(encoding="utf-8")
    assert str(tmp_path) not in manifest.read_text(encoding="utf-8")
    assert load_manifest(manifest) == records
    assert list(records_frame(records)["speaker"]) == ["spk01", "spk02", "spk03"]


def test_manifest_errors_name_the_line(tmp_path):
    duplicate = make_manifest(tmp_path, [
        "spk01,S1,M1,c,train,0,a.wav,1.0",
        "spk01,S1,M1,c,train,0,b.wav,1.0",
    ])
    with pytest.raises(ManifestError) as info:
        load_manifest(duplicate)
    assert info.value.line == 3
    assert "duplicate" in str(info.value)

    missing_audio = make_manifest(tmp_path, ["spk01,S1,M1,c,train,0,nowhere.wav,1.0"], touch=False)
    with pytest.raises(ManifestError) as info:
        load_manifest(missing_audio)
    assert info.value.line == 2
    assert len(load_manifest(missing_audio, check_files=False)) == 1

    bad_role = make_manifest(tmp_path, ["spk01,S1,M1,c,enroll,0,a.wav,1.0"])
    with pytest.raises(ManifestError) as info:
        load_manifest(bad_role)
    assert info.value.line == 2

    empty_path = make_manifest(tmp_path, ["spk01,S1,M1,c,train,0,,1.0"])
    with pytest.raises(ManifestError):
        load_manifest(empty_path)


def test_manifest_missing_columns_and_files(tmp_path):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("speaker,session,path\nspk01,S1,a.wav\n", encoding="utf-8")
    with pytest.raises(ManifestError) as info:
        load_manifest(manifest)
    assert info.value.line == 1

    with pytest.raises(DataError):
        load_manifest(tmp_path / "missing.csv")

    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    assert load_manifest(empty) == []


def test_decode_audio_8k(tmp_path):
    samples = 0.25 * np.sin(2 * np.pi * 300 * np.arange(800) / 8000)
    clip = decode_audio(write_pcm(tmp_path / "a.wav", 8000, samples))
    assert clip.sample_rate_hz == 8000
    assert clip.samples.shape == (800,)
    assert np.max(np.abs(clip.samples - samples)) < 1e-4


def test_decode_audio_downsamples_16k(tmp_path):
    t = np.arange(16000) / 16000
    wide = 0.4 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 1800 * t) + 0.2 * np.sin(2 * np.pi * 6000 * t)
    clip = decode_audio(write_pcm(tmp_path / "w.wav", 16000, wide))
    assert clip.sample_rate_hz == 8000
    assert clip.samples.size == 8000

    t8 = np.arange(8000) / 8000
    in_band = 0.4 * np.sin(2 * np.pi * 440 * t8) + 0.2 * np.sin(2 * np.pi * 1800 * t8)
    interior = slice(200, -200)
    assert np.max(np.abs(clip.samples[interior] - in_band[interior])) < 0.01


def test_decode_audio_rejections(tmp_path):
    stereo = tmp_path / "stereo.wav"
    wavfile.write(stereo, 8000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(AudioFormatError):
        decode_audio(stereo)

    other_rate = write_pcm(tmp_path / "44k.wav", 44100, np.zeros(100))
    with pytest.raises(AudioFormatError):
        decode_audio(other_rate)

    floats = tmp_path / "float.wav"
    wavfile.write(floats, 8000, np.zeros(100, dtype=np.float32))
    with pytest.raises(AudioFormatError):
        decode_audio(floats)

    with pytest.raises(DataError):
        decode_audio(tmp_path / "missing.wav")


def test_write_wav_clips_and_reads_back(tmp_path):
    path = write_wav(np.array([0.5, -0.5, 2.0, -2.0]), tmp_path / "c.wav")
    clip = decode_audio(path)
    assert np.allclose(clip.samples, [0.5, -0.5, 32767 / 32768, -1.0])


def test_synth_utterance_is_seeded():
    speaker = make_speakers(2, master_seed=0)[0]
    first = synth_utterance(speaker, 1.5, 3)
    assert first.samples.size == 12000
    assert np.max(np.abs(first.samples)) == pytest.approx(0.5)
    assert np.array_equal(first.samples, synth_utterance(speaker, 1.5, 3).samples)
    assert not np.array_equal(first.samples, synth_utterance(speaker, 1.5, 4).samples)
    with pytest.raises(InvalidInputError):
        synth_utterance(speaker, 0.0, 0)


def test_languages_change_the_timing():
    speaker = make_speakers(1, master_seed=0)[0]
    catalan = synth_utterance(speaker, 2.0, 0, language="c").samples
    spanish = synth_utterance(speaker, 2.0, 0, language="s").samples
    assert not np.array_equal(catalan, spanish)
    assert np.array_equal(synth_utterance(speaker, 2.0, 0, language="xx").samples,
                          synth_utterance(speaker, 2.0, 0, language="xx").samples)


def test_make_speakers_are_distinct_and_stable():
    speakers = make_speakers(8, master_seed=1)
    assert [s.id for s in speakers] == [f"spk0{i}" for i in range(1, 9)]
    for i, a in enumerate(speakers):
        for b in speakers[i + 1:]:
            assert np.linalg.norm(a.cepstrum() - b.cepstrum()) > 1e-3
    again = make_speakers(8, master_seed=1)
    assert all(np.array_equal(a.ar_coeffs, b.ar_coeffs) for a, b in zip(speakers, again))


def test_session_jitter_is_bounded():
    speaker = make_speakers(1, master_seed=2)[0]
    session = speaker.for_session(7)
    moved = np.abs(np.abs(session.poles) - np.abs(speaker.poles))
    assert moved.max() <= 0.02 + 1e-12
    assert np.abs(session.state_poles).max() <= MAX_POLE_RADIUS
    assert np.allclose(np.angle(session.poles), np.angle(speaker.poles))


def test_channels():
    x = np.random.default_rng(0).standard_normal(500)
    clip = AudioClip(x, 8000)
    assert apply_channel(clip, "M1") is clip

    impulse = np.zeros(64)
    impulse[0] = 1.0
    for name in CHANNELS:
        taps = channel_response(name)
        assert taps.size <= 32
        response = apply_channel(impulse, name).samples
        assert np.allclose(response[:taps.size], taps, rtol=0.0, atol=1e-10)
        assert np.allclose(response[taps.size:], 0.0, rtol=0.0, atol=1e-10)

    h1, h2 = channel_response("M2"), channel_response("M3")
    twice = apply_channel(apply_channel(x, h1), h2).samples
    assert np.allclose(twice, np.convolve(x, np.convolve(h1, h2))[:x.size], rtol=0.0, atol=1e-10)

    with pytest.raises(InvalidInputError):
        apply_channel(x, np.ones(33))
    with pytest.raises(InvalidInputError):
        channel_response("M9")


def test_build_synth_corpus(tmp_path):
    corpus = build_synth_corpus(
        tmp_path / "corpus",
        n_speakers=3,
        sessions=2,
        channels=("M1", "M3"),
        train_duration_s=2.0,
        test_duration_s=1.0,
        n_test=2,
    )
    assert len(corpus.speakers) == 3
    assert len(corpus.records) == 3 * 2 * 2 * 3
    assert corpus.manifest_path == tmp_path / "corpus" / "manifest.csv"

    frame = records_frame(load_manifest(corpus.manifest_path))
    assert (frame["role"] == "train").sum() == 12
    assert set(frame["session"]) == {"S1", "S2"}
    assert set(frame.loc[frame["role"] == "test", "index"]) == {1, 2}

    train = next(r for r in corpus.records if r.key.role == "train")
    clip = decode_audio(train.path)
    assert clip.samples.size == 16000


def test_build_synth_corpus_is_reproducible(tmp_path):
    first = build_synth_corpus(tmp_path / "a", n_speakers=2, train_duration_s=1.0, test_duration_s=0.5, n_test=1)
    second = build_synth_corpus(tmp_path / "b", n_speakers=2, train_duration_s=1.0, test_duration_s=0.5, n_test=1)
    for a, b in zip(first.records, second.records):
        assert a.path.read_bytes() == b.path.read_bytes()
    assert first.manifest_path.read_bytes() == second.manifest_path.read_bytes()

    with pytest.raises(InvalidInputError):
        build_synth_corpus(tmp_path / "c", n_speakers=2, channels=("M7",))
