#!/usr/bin/env python3
"""
Tests for the cepstral parameterizations and transform chains.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import signal

# Add project root to path to import modules
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.append(str(PROJECT_ROOT))

from speakerid.corpus import SynthSpeaker, synth_utterance
from speakerid.errors import ChainError, InsufficientDataError, InvalidInputError
from speakerid.frontend import FeatureSequence, FrontendConfig, extract, lpc_to_lpcc
from speakerid.transforms import (
    TABLE_CHAINS,
    PostfilterParams,
    SigmaWeights,
    StepKind,
    TransformChain,
    acw,
    apply_chain,
    bandpass_lifter,
    cms,
    drop_low2,
    linear_weight,
    postfilter_weight,
    sigma_apply,
    sigma_fit,
)


def seq_of(rows, **kwargs):
    return FeatureSequence(np.asarray(rows, dtype=float), **kwargs)


def random_poles(rng, order, max_radius=0.9):
    pairs = order // 2
    poles = rng.uniform(0.3, max_radius, pairs) * np.exp(1j * rng.uniform(0.1, np.pi - 0.1, pairs))
    roots = np.concatenate([poles, poles.conj()])
    if order % 2:
        roots = np.append(roots, rng.uniform(-max_radius, max_radius))
    return roots


def pole_sum_cepstrum(roots, order, n_fft=8192):
    """c_1..c_Q of sum_i 1/(1 - p_i e^-jw), through the log spectrum."""
    z_inv = np.exp(-2j * np.pi * np.arange(n_fft) / n_fft)
    spectrum = sum(1.0 / (1.0 - p * z_inv) for p in roots)
    real_cepstrum = np.fft.ifft(np.log(np.abs(spectrum))).real
    return 2.0 * real_cepstrum[1:order + 1]


def test_drop_low2_examples():
    out = drop_low2(seq_of([[1, 2, 3, 4]]))
    assert np.array_equal(out.vectors, [[3, 4]])
    assert out.first_index == 3
    assert np.array_equal(drop_low2(seq_of([[5, 6, 7]])).vectors, [[7]])
    empty = drop_low2(FeatureSequence(np.empty((0, 16))))
    assert empty.vectors.shape == (0, 14)
    with pytest.raises(InvalidInputError):
        drop_low2(seq_of([[1, 2]]))


def test_cms_examples(caplog):
    assert np.array_equal(cms(seq_of([[1, 2], [1, 2], [1, 2]])).vectors, np.zeros((3, 2)))
    assert np.array_equal(cms(seq_of([[1, 0], [3, 0]])).vectors, [[-1, 0], [1, 0]])

    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 8))
    bias = rng.standard_normal(8)
    assert np.allclose(cms(seq_of(x)).vectors, cms(seq_of(x + bias)).vectors, atol=1e-12)
    assert np.allclose(cms(seq_of(x)).vectors.mean(axis=0), 0.0, atol=1e-12)

    empty = FeatureSequence(np.empty((0, 4)))
    assert cms(empty) is empty
    assert "empty" in caplog.text


def test_acw_single_pole_equals_lpcc():
    out = acw([np.array([-0.5])], 5)
    assert np.allclose(out.vectors[0], [0.5 ** n / n for n in range(1, 6)])


def test_acw_is_real_for_conjugate_poles():
    roots = np.array([0.8 * np.exp(0.7j), 0.8 * np.exp(-0.7j)])
    a = np.poly(roots).real[1:]
    out = acw(a[None, :], 16)
    assert out.vectors.dtype == np.float64
    assert np.isfinite(out.vectors).all()


def test_acw_two_real_poles_matches_pole_sum_spectrum():
    roots = np.array([0.5, -0.3])
    out = acw(np.poly(roots)[None, 1:], 16)
    assert np.max(np.abs(out.vectors[0] - pole_sum_cepstrum(roots, 16))) < 1e-6


def test_acw_matches_pole_sum_spectrum_for_random_filters():
    rng = np.random.default_rng(1)
    for trial in range(50):
        roots = random_poles(rng, (10, 16, 20)[trial % 3] if trial % 2 else 12)
        a = np.poly(roots).real[1:]
        out = acw(a[None, :], 20)
        assert out.num_frames == 1
        assert np.max(np.abs(out.vectors[0] - pole_sum_cepstrum(roots, 20))) < 1e-6


def test_acw_ignores_lpc_gain():
    # gain never enters A(z), so scaling the frame leaves its ACW cepstrum unchanged
    speaker = SynthSpeaker.from_poles("g", np.array([0.8 * np.exp(0.5j), 0.7 * np.exp(1.5j)]), seed=3)
    clip = synth_utterance(speaker, 1.0, 0)
    loud = extract(clip.samples * 10.0)
    quiet = extract(clip.samples * 0.1)
    chain = TransformChain.parse("ACW")
    assert np.allclose(apply_chain(chain, loud).vectors, apply_chain(chain, quiet).vectors, atol=1e-8)


def test_linear_weight_examples():
    assert np.array_equal(linear_weight(seq_of([[1, 1, 1]])).vectors, [[1, 2, 3]])
    assert np.array_equal(linear_weight(seq_of([[0, 0, 0]])).vectors, [[0, 0, 0]])
    assert np.array_equal(linear_weight(linear_weight(seq_of([[1, 1, 1]]))).vectors, [[1, 4, 9]])
    assert np.array_equal(linear_weight(drop_low2(seq_of([[1, 1, 1, 1]]))).vectors, [[3, 4]])


def test_bandpass_lifter_examples():
    q = 16
    out = bandpass_lifter(seq_of(np.ones((1, q))))
    weights = out.vectors[0]
    assert weights[q - 1] == pytest.approx(1.0)
    assert weights[q // 2 - 1] == pytest.approx(1.0 + q / 2)
    x = np.random.default_rng(2).standard_normal((3, q))
    assert np.allclose(bandpass_lifter(seq_of(x), h=0.0).vectors, x)


def test_sigma_fit_examples():
    weights = sigma_fit([seq_of([[0.0, 5.0], [2.0, 5.0]])])
    assert weights.w[0] == pytest.approx(1.0)
    assert weights.w[1] == pytest.approx(1e8)

    rng = np.random.default_rng(3)
    corpus = [seq_of(rng.standard_normal((40, 6)) * rng.uniform(0.1, 3.0, 6)) for _ in range(4)]
    pooled = np.vstack([s.vectors for s in corpus])
    mean = pooled.sum(axis=0) / len(pooled)
    two_pass = np.sqrt(((pooled - mean) ** 2).sum(axis=0) / len(pooled))
    assert np.allclose(1.0 / sigma_fit(corpus).w, two_pass, atol=1e-10)

    normalized = np.vstack([sigma_apply(s, sigma_fit(corpus)).vectors for s in corpus])
    assert np.allclose(normalized.std(axis=0), 1.0, atol=1e-8)

    with pytest.raises(InvalidInputError):
        sigma_fit([])
    with pytest.raises(InsufficientDataError):
        sigma_fit([seq_of([[1.0, 2.0]])])


def test_sigma_apply_examples():
    x = seq_of([[2.0, 4.0]])
    assert np.array_equal(sigma_apply(x, SigmaWeights(np.ones(2))).vectors, x.vectors)
    assert np.array_equal(sigma_apply(x, SigmaWeights(np.array([0.5, 0.25]))).vectors, [[1.0, 1.0]])


def test_postfilter_examples():
    out = postfilter_weight(seq_of(np.ones((1, 20))), PostfilterParams(alpha=1.0, beta=0.9))
    assert out.vectors[0, 0] == pytest.approx(0.1)
    assert out.vectors[0, 19] == pytest.approx(1 - 0.9 ** 20)
    assert out.vectors[0, 19] == pytest.approx(0.8784, abs=1e-4)
    with pytest.raises(ValueError):
        PostfilterParams(alpha=0.9, beta=0.9)


def test_weightings_are_linear():
    rng = np.random.default_rng(4)
    x, y = seq_of(rng.standard_normal((5, 12))), seq_of(rng.standard_normal((5, 12)))
    combo = seq_of(2.0 * x.vectors - 3.0 * y.vectors)
    sigma = SigmaWeights(rng.uniform(0.5, 2.0, 12))
    for transform in (linear_weight, bandpass_lifter, postfilter_weight, lambda s: sigma_apply(s, sigma)):
        expected = 2.0 * transform(x).vectors - 3.0 * transform(y).vectors
        assert np.allclose(transform(combo).vectors, expected, atol=1e-12)


def test_chain_parsing():
    assert TransformChain.parse("LPCC").steps == ()
    assert [s.kind for s in TransformChain.parse("CMS+ACW+SIGMA").steps] == [StepKind.ACW, StepKind.CMS, StepKind.SIGMA]
    assert [s.kind for s in TransformChain.parse("CMS-LW").steps] == [StepKind.CMS, StepKind.LW]
    assert [s.kind for s in TransformChain.parse("LPCC_{3,P}").steps] == [StepKind.DROP_LOW2]
    assert [s.kind for s in TransformChain.parse("σ-LPCC").steps] == [StepKind.SIGMA]
    for name in TABLE_CHAINS:
        assert TransformChain.parse(name).name == name
    with pytest.raises(ChainError):
        TransformChain.parse("MFCC")
    with pytest.raises(ChainError):
        TransformChain.parse("ACW+ACW")


def test_apply_chain_examples():
    x = seq_of(np.random.default_rng(5).standard_normal((30, 16)))
    assert np.array_equal(apply_chain(TransformChain(), x).vectors, x.vectors)
    assert np.array_equal(apply_chain(TransformChain.parse("CMS"), seq_of(np.ones((4, 3)))).vectors, np.zeros((4, 3)))
    assert np.array_equal(
        apply_chain(TransformChain.parse("CMS+PF"), x).vectors,
        postfilter_weight(cms(x)).vectors,
    )
    assert apply_chain(TransformChain.parse("CMS+PF"), x).chain == "CMS+PF"


def test_sigma_chain_needs_fitting():
    x = seq_of(np.random.default_rng(6).standard_normal((30, 16)))
    chain = TransformChain.parse("CMS+SIGMA")
    assert not chain.is_fitted
    with pytest.raises(ChainError):
        apply_chain(chain, x)
    fitted = chain.fit([x])
    out = apply_chain(fitted, x)
    assert np.allclose(out.vectors.std(axis=0), 1.0, atol=1e-8)
    assert out.num_frames == x.num_frames


def test_transformed_sequences_are_not_transformed_twice():
    x = seq_of(np.random.default_rng(7).standard_normal((10, 16)))
    once = apply_chain(TransformChain.parse("CMS"), x)
    with pytest.raises(ChainError):
        apply_chain(TransformChain.parse("PF"), once)


def test_acw_chains_share_the_acw_cepstra():
    speaker = SynthSpeaker.from_poles("s", np.array([0.8 * np.exp(0.5j), 0.7 * np.exp(1.5j)]), seed=4)
    raw = extract(synth_utterance(speaker, 1.0, 0))
    direct = apply_chain(TransformChain.parse("CMS+ACW"), raw)
    shared = apply_chain(TransformChain.parse("CMS+ACW"), apply_chain(TransformChain.parse("ACW"), raw))
    assert np.array_equal(direct.vectors, shared.vectors)
    from_lpc = apply_chain(TransformChain.parse("CMS+ACW"), raw.lpc, order=16)
    assert np.allclose(from_lpc.vectors, direct.vectors)


def test_cms_removes_channel_bias():
    speaker = SynthSpeaker.from_poles(
        "c", np.array([0.85 * np.exp(0.4j), 0.8 * np.exp(1.2j), 0.75 * np.exp(1.9j), 0.7 * np.exp(2.5j)]), seed=5
    )
    clean = synth_utterance(speaker, 6.0, 0).samples
    channel = signal.lfilter([1.0], [1.0, -0.6], np.r_[1.0, np.zeros(31)])
    filtered = signal.lfilter(channel, [1.0], clean)
    cfg = FrontendConfig(energy_floor_db=200.0)
    a, b = extract(clean, cfg), extract(filtered, cfg)
    assert a.num_frames == b.num_frames
    without = np.linalg.norm(a.vectors - b.vectors, axis=1).mean()
    with_cms = np.linalg.norm(cms(a).vectors - cms(b).vectors, axis=1).mean()
    assert with_cms < 0.5 * without
