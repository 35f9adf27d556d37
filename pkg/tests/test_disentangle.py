import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from gesturestyle.disentangle import (
    Discriminator,
    adversarial_loss,
    discriminator_loss,
    lambda_at_step,
    total_generator_loss,
)

from conftest import fd_grad, rel_err


def test_discriminator_output_dim():
    d = Discriminator(832, 998)
    assert d(torch.randn(2, 64, 832)).shape == (2, 998)


def test_discriminator_zero_weights_returns_bias():
    d = Discriminator(12, 7, hidden=16)
    with torch.no_grad():
        for p in d.parameters():
            p.zero_()
        d.net[-1].bias.fill_(0.25)
    np.testing.assert_array_equal(d(torch.randn(3, 8, 12)).detach().numpy(), 0.25)


def test_discriminator_deterministic_and_checks_width():
    torch.manual_seed(0)
    d = Discriminator(12, 7, hidden=16)
    x = torch.randn(3, 8, 12)
    assert torch.equal(d(x), d(x.clone()))
    with pytest.raises(ValueError):
        d(torch.randn(3, 8, 11))


def test_discriminator_loss_values():
    s = torch.randn(4, 998, dtype=torch.float64)
    assert discriminator_loss(s, s).item() == 0.0
    assert discriminator_loss(s, s - 1).item() == pytest.approx(math.sqrt(998), abs=1e-12)
    assert math.sqrt(998) == pytest.approx(31.5911, abs=1e-4)


def test_discriminator_loss_brute_force():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(6, 40)), rng.normal(size=(6, 40))
    expected = sum(math.sqrt(sum((a[i, j] - b[i, j]) ** 2 for j in range(40))) for i in range(6)) / 6
    assert abs(discriminator_loss(torch.tensor(a), torch.tensor(b)).item() - expected) <= 1e-9


def test_adversarial_loss_values():
    s = torch.randn(3, 50, dtype=torch.float64)
    assert adversarial_loss(s, s).item() == 1.0
    assert adversarial_loss(s, s + 1.0).item() == pytest.approx(0.5, abs=1e-15)
    assert adversarial_loss(s, s + 1e12).item() < 1e-11


def test_losses_reject_dim_mismatch():
    with pytest.raises(ValueError):
        discriminator_loss(torch.zeros(2, 5), torch.zeros(2, 6))
    with pytest.raises(ValueError):
        adversarial_loss(torch.zeros(2, 5), torch.zeros(2, 6))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 10.0))
def test_adversarial_strictly_decreasing(seed, bump):
    rng = np.random.default_rng(seed)
    s = torch.tensor(rng.normal(size=(2, 16)))
    r = torch.tensor(np.abs(rng.normal(size=(2, 16))))
    sign = torch.tensor(rng.choice([-1.0, 1.0], size=(2, 16)))
    near = adversarial_loss(s, s + sign * r)
    far = adversarial_loss(s, s + sign * (r + bump))
    assert far.item() < near.item()
    assert 0.0 < far.item() <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_discriminator_loss_zero_iff_exact(seed):
    rng = np.random.default_rng(seed)
    s = torch.tensor(rng.normal(size=(3, 9)))
    p = s.clone()
    assert discriminator_loss(s, p).item() == 0.0
    p[rng.integers(3), rng.integers(9)] += 1e-6
    assert discriminator_loss(s, p).item() > 0.0


@pytest.mark.parametrize("loss_fn", [discriminator_loss, adversarial_loss])
def test_loss_gradients_match_fd(loss_fn):
    rng = np.random.default_rng(4)
    s = torch.tensor(rng.normal(size=(3, 12)))
    p = torch.tensor(rng.normal(size=(3, 12)), requires_grad=True)
    loss_fn(s, p).backward()
    (idx, est), = fd_grad(lambda: loss_fn(s, p), [p], max_entries=36)
    assert rel_err(p.grad.view(-1)[idx].numpy(), est) <= 1e-4


def test_fader_objectives_agree_along_rays():
    """Scaling the residual up lowers the adversarial loss and raises the discriminator loss."""
    rng = np.random.default_rng(5)
    for _ in range(50):
        s = torch.tensor(rng.normal(size=(1, 20)))
        u = torch.tensor(rng.normal(size=(1, 20)))
        ts = rng.uniform(0.0, 5.0, size=8)
        dis = [discriminator_loss(s, s + t * u).item() for t in ts]
        adv = [adversarial_loss(s, s + t * u).item() for t in ts]
        assert int(np.argmax(dis)) == int(np.argmin(adv))
        assert int(np.argmin(dis)) == int(np.argmax(adv))


def test_total_loss():
    assert total_generator_loss(2.0, 0.5, 0.0) == 2.0
    assert total_generator_loss(2.0, 0.5, 1.0) == 2.5
    assert total_generator_loss(0.0, 0.0, 0.37) == 0.0


def test_lambda_schedule():
    assert lambda_at_step(0) == 0.0
    assert lambda_at_step(50) == 0.5
    assert lambda_at_step(200) == 1.0
    vals = [lambda_at_step(t) for t in range(400)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        lambda_at_step(-1)
