import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmbench.token_model import generate, plain_sampler, sample
from wmbench.watermark_soft import (SoftWatermarkConfig, SoftWatermarkSampler, apply_bias,
                                    biased_distribution, detect_z, green_mask, is_green,
                                    softmax, watermarked_sample, z_score)

CFG = SoftWatermarkConfig()


def test_defaults():
    assert (CFG.gamma, CFG.delta, CFG.context_width, CFG.scheme) == (0.25, 4.0, 4, "selfhash")
    with pytest.raises(ValueError):
        SoftWatermarkConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SoftWatermarkConfig(delta=-1)


def test_is_green_deterministic():
    assert is_green(CFG, [5, 9, 2, 40], 17) == is_green(CFG, [5, 9, 2, 40], 17)


def test_green_fraction_by_enumeration():
    frac = np.mean([is_green(CFG, [11, 3, 870, 44], c) for c in range(1000)])
    assert abs(frac - 0.25) <= 0.03


def test_green_mask_matches_scalar():
    mask = green_mask(CFG, [11, 3, 870, 44], 1000)
    assert [bool(x) for x in mask] == [is_green(CFG, [11, 3, 870, 44], c) for c in range(1000)]


def test_two_keys_agreement_by_enumeration():
    a = green_mask(CFG, [1, 2, 3, 4], 1000)
    b = green_mask(SoftWatermarkConfig(key=CFG.key + 1), [1, 2, 3, 4], 1000)
    assert abs(np.mean(a == b) - (0.25 ** 2 + 0.75 ** 2)) <= 0.05


def test_selfhash_candidate_enters_seed():
    # same window, different candidates give a non-constant mask
    mask = green_mask(CFG, [7, 7, 7, 7], 64)
    assert 0 < mask.sum() < 64


def test_lefthash_exact_fraction():
    cfg = SoftWatermarkConfig(scheme="lefthash")
    assert green_mask(cfg, [3, 4], 1000).sum() == 250


def test_apply_bias_examples():
    logits = np.zeros(4)
    np.testing.assert_array_equal(apply_bias(logits, np.array([1, 0, 0, 0], bool), 0.0), logits)
    np.testing.assert_array_equal(apply_bias(logits, np.array([1, 0, 0, 0], bool), 4.0),
                                  [4, 0, 0, 0])
    green_p = softmax(apply_bias(logits, np.array([1, 0, 0, 0], bool), 4.0))[0]
    assert green_p == pytest.approx(math.exp(4) / (math.exp(4) + 3), abs=1e-12)
    assert green_p == pytest.approx(0.9479, abs=1e-4)
    with pytest.raises(ValueError):
        apply_bias(np.array([0.0, np.nan]), np.array([True, False]), 1.0)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=30), st.integers(0, 2 ** 32))
def test_zero_delta_leaves_distribution(logits, seed):
    logits = np.array(logits)
    mask = np.random.default_rng(seed).random(len(logits)) < 0.25
    np.testing.assert_array_equal(softmax(apply_bias(logits, mask, 0.0)), softmax(logits))


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=30), st.integers(0, 2 ** 32),
       st.floats(0.1, 10))
def test_bias_moves_exactly_green_entries(logits, seed, delta):
    logits = np.array(logits)
    mask = np.random.default_rng(seed).random(len(logits)) < 0.5
    out = apply_bias(logits, mask, delta)
    np.testing.assert_allclose(out[mask], logits[mask] + delta)
    np.testing.assert_array_equal(out[~mask], logits[~mask])


def test_zero_delta_sampler_matches_plain(toy_model):
    cfg = SoftWatermarkConfig(delta=0.0)
    a = generate(toy_model, [0, 1, 2, 3], 40, SoftWatermarkSampler(cfg), rng=11)
    b = generate(toy_model, [0, 1, 2, 3], 40, plain_sampler, rng=11)
    assert a == b


def test_huge_delta_always_green(toy_model):
    cfg = SoftWatermarkConfig(delta=1e3)
    rng = np.random.default_rng(0)
    ctx = [3, 1, 4, 1]
    for _ in range(100):
        tok = watermarked_sample(toy_model, ctx, cfg, rng)
        assert is_green(cfg, ctx[-4:], tok)
        ctx.append(tok)


def test_biased_distribution_is_softmax_of_biased_logprobs(toy_model):
    ctx = [5, 6, 7, 8]
    p = toy_model.next_distribution(ctx)
    mask = green_mask(CFG, ctx, len(p))
    expected = np.exp(np.log(p) + 4.0 * mask)
    np.testing.assert_allclose(biased_distribution(p, ctx, CFG), expected / expected.sum())


def test_mean_green_fraction_simulation(toy_model):
    fracs = []
    for k in range(20):
        toks = generate(toy_model, [k, k + 1, k + 2, k + 3], 200, SoftWatermarkSampler(CFG), rng=k)
        r = detect_z(toks, CFG)
        fracs.append(r.green_count / r.T)
    assert statistics.fmean(fracs) >= 0.5


@pytest.mark.parametrize("T,g,z", [
    (100, 25, 0.0),
    (100, 100, 75 / math.sqrt(18.75)),
    (200, 70, 20 / math.sqrt(37.5)),
])
def test_z_closed_form(T, g, z):
    assert z_score(g, T, 0.25) == pytest.approx(z, abs=1e-12)


def test_z_worked_values():
    assert z_score(100, 100, 0.25) == pytest.approx(17.3205, abs=1e-4)
    assert z_score(70, 200, 0.25) == pytest.approx(3.266, abs=1e-3)


def test_detect_z_counts_and_pvalue(toy_model):
    toks = generate(toy_model, [1, 2, 3, 4], 60, SoftWatermarkSampler(CFG), rng=2)
    r = detect_z(toks, CFG)
    assert r.T == 56
    manual = sum(is_green(CFG, toks[i - 4:i], toks[i]) for i in range(4, 60))
    assert r.green_count == manual
    assert r.z == pytest.approx(z_score(manual, 56, 0.25))
    assert r.p_value == pytest.approx(0.5 * math.erfc(r.z / math.sqrt(2)))
    assert set(r.to_record()) == {"T", "green_count", "z", "p_value", "gamma", "delta", "key_id"}
    assert str(CFG.key) not in str(r.to_record())
    with pytest.raises(ValueError):
        detect_z([1, 2, 3, 4], CFG)


def test_dedup_counts_repeats_once():
    toks = [1, 2, 3, 4, 5] * 10
    cfg = SoftWatermarkConfig(dedup=True)
    assert detect_z(toks, cfg).T == 5
    assert detect_z(toks, CFG).T == 46


def test_null_calibration_random_streams():
    rng = np.random.default_rng(2024)
    zs = [detect_z(rng.integers(0, 1000, size=200).tolist(), CFG).z for _ in range(200)]
    assert abs(statistics.fmean(zs)) < 0.2
    assert np.mean(np.abs(zs) < 2) >= 0.95


def test_z_monotone_in_delta(toy_model):
    means = []
    for delta in (2.0, 4.0, 8.0):
        cfg = SoftWatermarkConfig(delta=delta)
        zs = [detect_z(generate(toy_model, [k, 2, 3, 4], 100, SoftWatermarkSampler(cfg), rng=k),
                       cfg).z for k in range(30)]
        means.append(statistics.fmean(zs))
    assert means[0] <= means[1] <= means[2]
