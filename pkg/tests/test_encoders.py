import numpy as np
import pytest
import torch

from gesturestyle.encoders import (
    ContentEncoder,
    EncoderConfig,
    MultiHeadSelfAttention,
    SpeechFrameEncoder,
    StyleEncoder,
    encode_dialog_tags,
)
from gesturestyle.model import ModelConfig, StyleTransferModel

from conftest import fd_grad, rel_err


def _inputs(cfg, B=2, T=64, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    r = lambda *s: torch.randn(*s, generator=g, dtype=dtype) * 0.5
    tags = (torch.rand(B, cfg.n_tags, generator=g) < 0.2).to(dtype)
    return r(B, T, cfg.mel_bins), r(B, T, cfg.text_dim), r(B, T, cfg.pose_dim), r(B, T, cfg.face_dim), tags


def test_speech_frames_shape_and_determinism():
    torch.manual_seed(0)
    enc = SpeechFrameEncoder(128, 64)
    x = torch.randn(1, 64, 128)
    y = enc(x)
    assert y.shape == (1, 64, 64)
    assert torch.equal(y, enc(x.clone()))


def test_speech_frames_rejects_wrong_width():
    enc = SpeechFrameEncoder(128, 64)
    with pytest.raises(ValueError, match="mel bins"):
        enc(torch.randn(1, 64, 100))


def test_speech_frames_gradient_matches_fd(float64):
    torch.manual_seed(1)
    enc = SpeechFrameEncoder(16, 8, channels=4)
    x = torch.randn(2, 6, 16)
    loss = lambda: enc(x).mean()
    params = list(enc.parameters())
    enc.zero_grad()
    loss().backward()
    for p, (idx, est) in zip(params, fd_grad(loss, params)):
        assert rel_err(p.grad.view(-1)[idx].numpy(), est) <= 1e-4


def test_content_shape_default_dims():
    torch.manual_seed(0)
    cfg = EncoderConfig(d_model=64, mel_bins=128)
    enc = ContentEncoder(cfg)
    speech, text, *_ = _inputs(cfg, B=1)
    assert enc(speech, text).shape == (1, 64, 832)


def test_content_zero_everything_is_finite():
    cfg = EncoderConfig(d_model=8, text_dim=16, mel_bins=16)
    enc = ContentEncoder(cfg)
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    out = enc(torch.zeros(1, 64, 16), torch.zeros(1, 64, 16))
    assert torch.isfinite(out).all()


def test_content_frame_mismatch():
    cfg = EncoderConfig(d_model=8, text_dim=16, mel_bins=16)
    with pytest.raises(ValueError, match="frame-count"):
        ContentEncoder(cfg)(torch.zeros(1, 64, 16), torch.zeros(1, 63, 16))


@pytest.mark.parametrize("pe", [False, True])
def test_content_permutation_equivariance_only_without_positions(pe):
    torch.manual_seed(2)
    cfg = EncoderConfig(d_model=8, text_dim=16, mel_bins=16, positional_encoding=pe)
    enc = ContentEncoder(cfg).double()
    speech, text, *_ = _inputs(cfg, B=1, T=12, dtype=torch.float64)
    perm = torch.randperm(12)
    inv = torch.argsort(perm)
    out = enc(speech, text)
    out_p = enc(speech[:, perm], text[:, perm])[:, inv]
    assert torch.allclose(out, out_p, atol=1e-10) is (not pe)


def test_attention_rounds_width_up_to_heads():
    att = MultiHeadSelfAttention(10, 4)
    assert att.inner == 12
    assert att(torch.randn(2, 5, 10)).shape == (2, 5, 10)


def test_dialog_tags():
    vocab = [f"t{i}" for i in range(38)]
    np.testing.assert_array_equal(encode_dialog_tags([], vocab), np.zeros(38))
    v = encode_dialog_tags(["t2", "t5"], vocab)
    assert set(np.flatnonzero(v)) == {2, 5}
    np.testing.assert_array_equal(encode_dialog_tags([2, 5], vocab), v)
    with pytest.raises(KeyError, match="Foo"):
        encode_dialog_tags(["Foo"], vocab)


def test_style_vector_dimension_and_tag_slice():
    torch.manual_seed(0)
    cfg = EncoderConfig(d_model=64, mel_bins=32)
    enc = StyleEncoder(cfg)
    inputs = _inputs(cfg, B=2)
    h = enc(*inputs)
    assert h.shape == (2, 998) and cfg.style_dim == 832 + 64 + 64 + 38
    assert torch.equal(h[:, enc.tag_slice()], inputs[4])
    assert torch.equal(h, enc(*[x.clone() for x in inputs]))
    vocab = [f"tag{i:02d}" for i in range(38)]
    on = [vocab[i] for i in np.flatnonzero(inputs[4][0].numpy())]
    np.testing.assert_array_equal(h[0, enc.tag_slice()].detach().numpy(), encode_dialog_tags(on, vocab))


def test_style_dimension_mismatch():
    cfg = EncoderConfig(d_model=8, text_dim=16, mel_bins=16)
    speech, text, pose, face, tags = _inputs(cfg)
    with pytest.raises(ValueError, match="pose"):
        StyleEncoder(cfg)(speech, text, pose[..., :20], face, tags)


@pytest.mark.parametrize("d_model", [8, 16, 64])
def test_shape_contracts_across_widths(d_model):
    cfg = EncoderConfig(d_model=d_model, text_dim=32, mel_bins=16)
    speech, text, pose, face, tags = _inputs(cfg, B=1, T=16)
    assert ContentEncoder(cfg)(speech, text).shape == (1, 16, d_model + 32)
    assert StyleEncoder(cfg)(speech, text, pose, face, tags).shape == (1, d_model + 32 + 2 * d_model + 38)


def test_every_parameter_gets_gradient_from_total_loss(float64):
    from gesturestyle.disentangle import adversarial_loss
    from gesturestyle.generator import GestureOutput, reconstruction_loss

    torch.manual_seed(3)
    mcfg = ModelConfig(EncoderConfig(d_model=4, text_dim=8, mel_bins=8, n_heads=4))
    model = StyleTransferModel(mcfg)
    enc = mcfg.encoder
    speech, text, pose, face, tags = _inputs(enc, B=3, T=8, dtype=torch.float64)
    hc = model.encode_content(speech, text)
    hs = model.encode_style(speech.roll(1, 0), text.roll(1, 0), pose.roll(1, 0), face.roll(1, 0), tags.roll(1, 0))
    out = model.generate(hc, hs)
    loss = reconstruction_loss(out, GestureOutput(pose, face)) + 0.5 * adversarial_loss(hs, model.discriminator(hc))
    loss.backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not torch.any(p.grad != 0)]
    assert dead == []
