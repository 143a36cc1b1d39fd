import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nmtfusion import numerics as N
from nmtfusion.corpus.data import pad_batch, target_io
from nmtfusion.fusion import (
    LAMBDA_GRID,
    ColdFusion,
    FusedTranslator,
    FusionConfig,
    cold_fusion_step,
    combine_mixture,
    combine_multi_lm,
    combine_postnorm,
    combine_prenorm,
    log_softmax,
    shallow_fusion_score,
)
from nmtfusion.lm import RecurrentLM, UniformLM
from nmtfusion.seq2seq import TranslationModel
from nmtfusion.training import label_smoothed_nll

logits = arrays(np.float64, 6, elements=st.floats(-8, 8))


def lm_vec(rng, V=6):
    return log_softmax(rng.normal(size=V) * 2)


# PreNorm ---------------------------------------------------------------------------


def test_prenorm_examples():
    out = combine_prenorm(np.array([np.log(2.0), 0.0]), np.log([0.5, 0.5]))
    np.testing.assert_allclose(np.exp(out), [2 / 3, 1 / 3])
    with pytest.raises(ValueError):
        combine_prenorm(np.zeros(3), np.zeros(4))


@given(logits, st.floats(-30, 30), st.integers(0, 1000))
def test_prenorm_shift_and_uniform(S, c, seed):
    lm = lm_vec(np.random.default_rng(seed))
    np.testing.assert_allclose(combine_prenorm(S, lm + c), combine_prenorm(S, lm), atol=1e-9)
    uni = np.full(6, -np.log(6))
    np.testing.assert_allclose(combine_prenorm(S, uni), log_softmax(S), atol=1e-9)
    assert abs(np.logaddexp.reduce(combine_prenorm(S, lm))) <= 1e-9


# PostNorm ---------------------------------------------------------------------------


def test_postnorm_hand_example():
    out = combine_postnorm(np.array([1.0, 0.0, 0.0]), np.log([0.6, 0.3, 0.1]), renormalize=True)
    np.testing.assert_allclose(np.exp(out), [0.803, 0.148, 0.049], atol=1e-3)


@given(logits, st.integers(0, 1000))
def test_postnorm_literal_bound_and_uniform(S, seed):
    lm = lm_vec(np.random.default_rng(seed))
    lit = combine_postnorm(S, lm, renormalize=False)
    assert np.exp(lit).sum() <= 1 + 1e-9
    np.testing.assert_allclose(np.exp(lit).sum(), (np.exp(log_softmax(S)) * np.exp(lm)).sum(), rtol=1e-12)
    uni = np.full(6, -np.log(6))
    for renorm in (True, False):
        np.testing.assert_allclose(log_softmax(combine_postnorm(S, uni, renorm)), log_softmax(S), atol=1e-9)


@given(logits, st.integers(0, 1000))
def test_renormalized_postnorm_equals_prenorm(S, seed):
    lm = lm_vec(np.random.default_rng(seed))
    np.testing.assert_allclose(combine_postnorm(S, lm, True), combine_prenorm(S, lm), atol=1e-12)


def test_mixture_is_normalized():
    rng = np.random.default_rng(0)
    out = combine_mixture(rng.normal(size=6), lm_vec(rng))
    assert abs(np.logaddexp.reduce(out)) <= 1e-12


# shallow fusion ----------------------------------------------------------------------


def test_shallow_examples():
    tm, lm = np.array([-0.5, -1.2]), np.array([-1.5, -0.3])
    assert np.array_equal(shallow_fusion_score(tm, lm, 0.0), tm)
    assert np.argmax(shallow_fusion_score(tm, lm, 0.5)) == 0
    assert np.argmax(shallow_fusion_score(tm, lm, 2.0)) == 1
    with pytest.raises(ValueError):
        shallow_fusion_score(tm, lm, -0.1)


def test_shallow_argmax_shift():
    tm, lm = np.array([-0.5, -1.2, -2.0]), np.array([-1.5, -0.3, -0.9])
    shift = np.array([0.0, 3.0, 0.0])  # not a constant: only lambda 0 ignores it
    assert np.argmax(shallow_fusion_score(tm, lm + 5.0, 0.0)) == np.argmax(shallow_fusion_score(tm, lm, 0.0))
    assert np.argmax(shallow_fusion_score(tm, lm + 5.0, 1.0)) == np.argmax(shallow_fusion_score(tm, lm, 1.0))
    assert np.argmax(shallow_fusion_score(tm, lm + shift, 0.0)) == np.argmax(tm)
    assert np.argmax(shallow_fusion_score(tm, lm + shift, 1.0)) != np.argmax(tm)


def test_lambda_grid():
    assert LAMBDA_GRID[0] == 0.0 and LAMBDA_GRID[-1] == 0.5 and len(LAMBDA_GRID) == 11


# multi-LM -----------------------------------------------------------------------------


def test_multi_lm_properties():
    rng = np.random.default_rng(0)
    S, a, b = rng.normal(size=6), lm_vec(rng), lm_vec(rng)
    uni = np.full(6, -np.log(6))
    for strat in ("prenorm", "postnorm"):
        single = combine_prenorm(S, a) if strat == "prenorm" else combine_postnorm(S, a)
        np.testing.assert_allclose(combine_multi_lm(S, [a], strat), single, atol=1e-12)
        np.testing.assert_allclose(combine_multi_lm(S, [a, uni], strat), single, atol=1e-9)
        np.testing.assert_allclose(combine_multi_lm(S, [a, b], strat), combine_multi_lm(S, [b, a], strat), atol=1e-12)
    with pytest.raises(ValueError):
        combine_multi_lm(S, [])


# cold fusion ---------------------------------------------------------------------------


def test_cold_fusion_gate_and_normalization():
    rng = np.random.default_rng(0)
    cold = ColdFusion(5, 6, rng=rng)
    feat = rng.normal(size=(3, 5))
    a, b = lm_vec(rng)[None].repeat(3, 0), lm_vec(rng)[None].repeat(3, 0)
    out = cold_fusion_step(feat, a, cold)
    np.testing.assert_allclose(np.logaddexp.reduce(out, axis=1), 0.0, atol=1e-6)
    np.testing.assert_array_equal(
        cold_fusion_step(feat, a, cold, gate_override=0.0), cold_fusion_step(feat, b, cold, gate_override=0.0)
    )
    assert not np.allclose(cold_fusion_step(feat, a, cold), cold_fusion_step(feat, b, cold))
    with pytest.raises(ValueError):
        cold_fusion_step(feat[:, :4], a, cold)


@pytest.mark.parametrize("point", range(5))
def test_cold_fusion_gradient(point):
    rng = np.random.default_rng(point)
    cold = ColdFusion(5, 6, rng=rng)
    for p in cold.parameters():
        # O(1) parameters keep the gate away from saturation, so no gradient sinks below difference noise
        p.data = rng.uniform(-0.5, 0.5, size=p.shape)
    feat = N.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    lm = lm_vec(rng)[None].repeat(3, 0)
    w = rng.normal(size=(3, 6))
    params = {"feat": feat, **cold.named_parameters()}
    errs = N.check_gradients(lambda: N.tsum(cold_fusion_step(feat, lm, cold) * w), params, max_coords=20)
    assert max(errs.values()) <= 1e-4, errs


# training losses through the fused translator ---------------------------------------------


def _fused(strategy, lm=None, renorm=True, mixture=False, seed=0):
    tm = TranslationModel(7, 8, 4, 5, 1, rng=np.random.default_rng(seed))
    lms = [] if strategy == "baseline" else [lm or RecurrentLM(8, 3, 4, 1, rng=np.random.default_rng(9))]
    cfg = FusionConfig(strategy, postnorm_renormalize=renorm, mixture_mode=mixture)
    return FusedTranslator(tm, cfg, lms, rng=np.random.default_rng(seed + 1))


def _batch():
    src, mask = pad_batch([np.array([4, 5, 6]), np.array([5, 6])])
    tin, tout, tmask = target_io([np.array([4, 7]), np.array([6, 5, 4])])
    return src, mask, tin, tout, tmask


@pytest.mark.parametrize(
    "strategy,renorm,mixture",
    [("baseline", True, False), ("prenorm", True, False), ("postnorm", True, False),
     ("postnorm", False, False), ("postnorm", True, True), ("cold", True, False)],
)
@pytest.mark.parametrize("point", range(5))
def test_fusion_training_loss_gradients(strategy, renorm, mixture, point):
    fused = _fused(strategy, renorm=renorm, mixture=mixture, seed=point)
    rng = np.random.default_rng(100 + point)
    for p in fused.named_parameters().values():
        p.data = rng.uniform(-0.5, 0.5, size=p.shape)
    src, mask, tin, tout, tmask = _batch()
    params = dict(fused.named_parameters())
    errs = N.check_gradients(
        lambda: label_smoothed_nll(fused.train_logprobs(src, mask, tin), tout, tmask, 0.1)[0], params, max_coords=6
    )
    assert max(errs.values()) <= 1e-4, errs


def test_fusion_never_touches_lm():
    lm = RecurrentLM(8, 3, 4, 1, rng=np.random.default_rng(9))
    before = {k: v.copy() for k, v in lm.state_dict().items()}
    for strategy in ("prenorm", "postnorm", "cold"):
        fused = _fused(strategy, lm=lm)
        src, mask, tin, tout, tmask = _batch()
        loss, _ = label_smoothed_nll(fused.train_logprobs(src, mask, tin), tout, tmask, 0.1)
        loss.backward()
        assert all(p.grad is None for p in lm.parameters())
        assert not any(k.startswith("lm") for k in fused.named_parameters())
    assert all(np.array_equal(before[k], v) for k, v in lm.state_dict().items())


def test_config_validation():
    with pytest.raises(ValueError):
        FusionConfig("deep").validate(1)
    with pytest.raises(ValueError):
        FusionConfig("cold").validate(2)
    with pytest.raises(ValueError):
        FusionConfig("shallow", lam=-1).validate(1)
    with pytest.raises(ValueError):
        FusionConfig("baseline", mixture_mode=True).validate(0)
    FusionConfig("prenorm").validate(2)


def test_scorer_reduction_with_uniform_lm():
    tm = TranslationModel(7, 8, 4, 5, 1, rng=np.random.default_rng(0))
    base = FusedTranslator(tm, FusionConfig("baseline"))
    src = [np.array([4, 5, 6])]
    sb = base.scorer()
    state_b = sb.start(src)
    ref, _ = sb.step(state_b, [1])
    for strat, lam in (("prenorm", 0.0), ("postnorm", 0.0), ("shallow", 1.0)):
        fused = FusedTranslator(tm, FusionConfig(strat, lam=lam), [UniformLM(8)])
        sc = fused.scorer()
        out, _ = sc.step(sc.start(src), [1])
        np.testing.assert_allclose(log_softmax(out), ref, atol=1e-9)
