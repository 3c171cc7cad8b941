import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import MLP, brute_anchor, brute_re, brute_ss, brute_st, ident
from moext.errors import ConfigError, NumericError
from moext.losses import (
    CrossEntropy,
    LossConfig,
    cross_entropy,
    mean_shape_anchor,
    reconstruction_loss,
    ss_loss,
    st_loss,
    total_pretrain_loss,
)



@pytest.fixture(autouse=True)
def _float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def test_reconstruction_examples():
    x = torch.rand(2, 3, 4, 4)
    assert reconstruction_loss(x, x).item() == 0.0
    assert reconstruction_loss(torch.ones(2, 3, 4, 4), torch.zeros(2, 3, 4, 4)).item() == 1.0
    y = x.clone()
    y[..., :2] += 0.4
    assert reconstruction_loss(x, y).item() == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(ValueError):
        reconstruction_loss(x, x[:1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_reconstruction_symmetric_and_matches_oracle(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.rand(2, 3, 5, 5, generator=g), torch.rand(2, 3, 5, 5, generator=g)
    assert reconstruction_loss(a, b).item() == reconstruction_loss(b, a).item()
    assert abs(reconstruction_loss(a, b).item() - brute_re(a, b)) < 1e-12


def test_anchor_examples():
    v = torch.tensor([1.0, -2.0, 3.0])
    assert torch.equal(mean_shape_anchor(v.expand(2, 4, 3)), v)
    assert torch.equal(mean_shape_anchor(torch.stack([v, -v])[None]), torch.zeros(3))
    with pytest.raises(ValueError):
        mean_shape_anchor(torch.zeros(0, 2, 3))
    S = torch.randn(3, 4, 5)
    assert np.allclose(mean_shape_anchor(S).tolist(), brute_anchor(S.tolist()), atol=1e-12, rtol=0)


@pytest.mark.parametrize("seed", range(20))
def test_st_ss_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, m, d = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
    S = torch.from_numpy(rng.normal(size=(n, 2 * m, d)))
    T = torch.from_numpy(rng.normal(size=(n, 2 * m, d)))
    eps = float(rng.uniform(0.2, 0.5))
    f = MLP(d, seed)
    with torch.no_grad():
        assert abs(st_loss(S, T, f, eps).item() - brute_st(S.tolist(), T.tolist(), f.py, eps)) < 1e-10
        assert abs(ss_loss(S, f, eps).item() - brute_ss(S.tolist(), f.py, eps)) < 1e-10
        assert abs(st_loss(S, T, ident, eps).item() - brute_st(S.tolist(), T.tolist(), ident, eps)) < 1e-10


def test_st_collapsed_gives_epsilon():
    S = torch.full((2, 4, 6), 0.7)
    assert st_loss(S, S.clone(), MLP(6, 0), 0.3).item() == pytest.approx(0.3, abs=1e-15)


def test_st_inactive_hinge_is_zero():
    S = torch.zeros(1, 2, 2)
    T = torch.tensor([[[5.0, 0.0], [0.0, 5.0]]])
    assert st_loss(S, T, ident, 0.3).item() == 0.0


@pytest.mark.parametrize("m", [1, 2, 3])
def test_ss_collapsed_set_gives_half_epsilon(m):
    S = torch.ones(1, 2 * m, 4)
    assert ss_loss(S, ident, 0.4).item() == pytest.approx(0.2, abs=1e-15)


def test_ss_separated_pair_is_zero():
    S = torch.tensor([[[0.0, 0.0], [0.5, 0.0]]])
    assert ss_loss(S, ident, 0.3).item() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_ss_invariant_to_within_set_permutation(seed, m):
    g = torch.Generator().manual_seed(seed)
    S = torch.randn(2, 2 * m, 4, generator=g)
    perm = torch.cat([torch.randperm(m, generator=g), m + torch.randperm(m, generator=g)])
    assert ss_loss(S, ident, 0.3).item() == pytest.approx(ss_loss(S[:, perm], ident, 0.3).item(), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    S, T = torch.randn(2, 4, 3, generator=g), torch.randn(2, 4, 3, generator=g)
    assert st_loss(S, T, ident, 0.3) >= 0
    assert ss_loss(S, ident, 0.3) >= 0
    assert reconstruction_loss(S, T) >= 0
    p = torch.softmax(torch.randn(4, 3, generator=g), 1)
    assert cross_entropy(p, torch.tensor([0, 1, 2, 0])) >= 0


def test_total_loss():
    cfg = LossConfig()
    z = torch.tensor(0.0)
    assert total_pretrain_loss(z, z, z, cfg).item() == 0.0
    assert total_pretrain_loss(torch.tensor(1.0), torch.tensor(2.0), torch.tensor(3.0), cfg).item() == 5.0
    assert total_pretrain_loss(torch.tensor(2.0), torch.tensor(4.0), torch.tensor(6.0), cfg).item() == 10.0
    with pytest.raises(NumericError):
        total_pretrain_loss(torch.tensor(float("nan")), z, z, cfg)


def test_loss_config_validation():
    for bad in (dict(epsilon=0.1), dict(epsilon=0.6), dict(alpha_1=2.0), dict(m=0)):
        with pytest.raises(ConfigError):
            LossConfig(**bad)


def test_cross_entropy_values():
    assert cross_entropy(torch.tensor([[1.0, 0.0, 0.0]]), torch.tensor([0])).item() == 0.0
    p = torch.full((4, 3), 1 / 3)
    assert cross_entropy(p, torch.tensor([0, 1, 2, 1])).item() == pytest.approx(math.log(3), abs=1e-12)
    ce = CrossEntropy()
    val = ce(torch.tensor([[0.0, 1.0], [0.5, 0.5]]), torch.tensor([0, 0]))
    assert ce.clamped == 1
    assert val.item() == pytest.approx((-math.log(1e-12) + math.log(2)) / 2)
    with pytest.raises(ValueError):
        cross_entropy(p, torch.tensor([0, 1, 2, 3]))


def test_cross_entropy_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(3)
    z = torch.randn(5, 4, generator=g, requires_grad=True)
    y = torch.tensor([0, 3, 1, 2, 2])

    def f(logits):
        return cross_entropy(torch.softmax(logits, 1), y)

    f(z).backward()
    h = 1e-6
    num = torch.zeros_like(z)
    with torch.no_grad():
        for idx in np.ndindex(*z.shape):
            zp, zm = z.clone(), z.clone()
            zp[idx] += h
            zm[idx] -= h
            num[idx] = (f(zp) - f(zm)) / (2 * h)
    assert torch.allclose(z.grad, num, rtol=1e-4, atol=1e-9)
