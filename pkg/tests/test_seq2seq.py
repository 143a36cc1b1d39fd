import numpy as np
import pytest

from nmtfusion import numerics as N
from nmtfusion.corpus import BOS, EOS
from nmtfusion.corpus.data import pad_batch, target_io
from nmtfusion.numerics.layers import dot_attention
from nmtfusion.seq2seq import TranslationModel
from nmtfusion.training import label_smoothed_nll

SV, TV = 11, 13


@pytest.fixture
def model():
    return TranslationModel(SV, TV, emb_dim=6, hidden=8, dec_layers=2, rng=np.random.default_rng(0))


def test_encode_shapes(model):
    enc = model.encode(np.array([5]))
    assert enc.annotations.shape == (1, 1, 8)
    enc = model.encode(np.array([5, 6, 7]))
    assert enc.annotations.shape == (1, 3, 8)
    with pytest.raises(ValueError):
        model.encode(np.array([], dtype=np.int64))
    with pytest.raises(IndexError):
        model.encode(np.array([SV]))


def test_encode_direction_sensitive(model):
    s = np.array([4, 5, 6, 7, 9])
    a = model.encode(s).annotations.data[0]
    b = model.encode(s[::-1]).annotations.data[0]
    assert not np.allclose(a, b[::-1]) and not np.allclose(a, b)


def test_encode_padding_invariant(model):
    alone = model.encode(np.array([4, 5, 6])).annotations.data[0]
    ids, mask = pad_batch([np.array([4, 5, 6]), np.array([7, 8, 9, 10, 4])])
    batched = model.encode(ids, mask).annotations.data[0, :3]
    np.testing.assert_allclose(alone, batched, atol=1e-12)


def test_encode_gradient(model):
    src = np.array([[4, 5, 6, 7]])
    w = np.random.default_rng(1).normal(size=(1, 4, 8))
    errs = N.check_gradients(
        lambda: N.tsum(model.encode(src).annotations * w),
        {"src_embed": model.src_embed.weight, "enc_bwd": model.enc_bwd.w_hh, "enc_top": model.enc_top.w_ih},
        max_coords=30,
    )
    assert max(errs.values()) <= 1e-4, errs


def _randomize(module, seed, scale=0.5):
    # O(1) parameters keep deep-layer gradients far above finite-difference noise
    rng = np.random.default_rng(seed)
    for p in module.parameters():
        p.data = rng.uniform(-scale, scale, size=p.shape)


@pytest.mark.parametrize("point", range(5))
def test_full_model_gradient(model, point):
    _randomize(model, point)
    src, mask = pad_batch([np.array([4, 5, 6]), np.array([7, 8])])
    tin, tout, tmask = target_io([np.array([5, 6, 7]), np.array([8])])
    params = {k: p for k, p in model.named_parameters().items()}
    errs = N.check_gradients(
        lambda: label_smoothed_nll(N.log_softmax(model.forward(src, mask, tin)), tout, tmask, 0.1)[0],
        params,
        max_coords=12,
    )
    assert max(errs.values()) <= 1e-4, errs


def test_decoder_step_is_raw_and_deterministic(model):
    enc = model.encode(np.array([4, 5]))
    s = model.start_state(enc)
    a, _ = model.decoder_step(s, [BOS], enc)
    b, _ = model.decoder_step(s, [BOS], enc)
    assert a.shape == (1, TV)
    assert np.array_equal(a, b)
    assert abs(np.logaddexp.reduce(a[0])) > 1e-3  # not log-normalized
    p = N.softmax(a).data
    assert abs(p.sum() - 1) <= 1e-9
    with pytest.raises(IndexError):
        model.decoder_step(s, [TV], enc)


def test_incremental_equals_teacher_forced(model):
    srcs = [np.array([4, 5, 6]), np.array([7, 8, 9, 10])]
    tgts = [np.array([5, 6, 7, 8]), np.array([9, 10])]
    src, mask = pad_batch(srcs)
    tin, tout, tmask = target_io(tgts)
    logits = model.forward(src, mask, tin).data
    enc = model.encode(src, mask)
    state = model.start_state(enc)
    for t in range(tin.shape[1]):
        step, state = model.decoder_step(state, tin[:, t], enc)
        for b in range(2):
            if tmask[b, t]:
                np.testing.assert_allclose(step[b], logits[b, t], atol=1e-5)
    # sequence log-likelihood via both paths
    lp = N.log_softmax(N.Tensor(logits)).data
    teacher = float(sum(lp[0, t, tout[0, t]] for t in range(len(tgts[0]) + 1)))
    enc1 = model.encode(srcs[0])
    st = model.start_state(enc1)
    total = 0.0
    for prev, y in zip([BOS, *tgts[0]], [*tgts[0], EOS]):
        logit, st = model.decoder_step(st, [prev], enc1)
        total += N.log_softmax(N.Tensor(logit)).data[0, y]
    assert abs(total - teacher) <= 1e-9


def test_state_clone_transparent(model):
    enc = model.encode(np.array([4, 5, 6]))
    s = model.start_state(enc)
    _, s = model.decoder_step(s, [BOS], enc)
    clone = s.select([0, 0])
    a, _ = model.decoder_step(s, [7], enc)
    b, _ = model.decoder_step(clone, [7, 7], enc)
    # batch size changes BLAS rounding only
    np.testing.assert_allclose(b[0], a[0], atol=1e-12)
    np.testing.assert_allclose(b[1], a[0], atol=1e-12)


def test_attention_weights_normalized(model):
    enc = model.encode(np.array([4, 5, 6]))
    s = model.start_state(enc)
    _, s = model.decoder_step(s, [BOS], enc)
    q = N.Tensor(s.h[-1].reshape(1, 1, -1))
    _, w = dot_attention(q, enc.annotations, enc.annotations, enc.mask)
    assert abs(w.data.sum() - 1.0) <= 1e-6


def test_descriptor_round_trip(model):
    clone = TranslationModel.from_descriptor(model.descriptor())
    clone.load_state_dict(model.state_dict())
    src = np.array([[4, 5]])
    tin = np.array([[BOS, 6]])
    assert np.array_equal(clone.forward(src, None, tin).data, model.forward(src, None, tin).data)
