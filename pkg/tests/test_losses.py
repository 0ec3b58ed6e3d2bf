import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import (central_difference, conditional_entropy_bruteforce, lifted_loss_bruteforce,
                     marginal_entropy_bruteforce, rel_err)
from skillemb import losses
from skillemb.config import LossConfig


def _t(x):
    return torch.tensor(np.asarray(x, dtype=np.float64))


def _batch(rng, m=8, dim=4, scale=1.0):
    labels = np.repeat(np.arange(m // 2), 2)
    emb = rng.standard_normal((m, dim)) * scale
    return emb, labels


def test_lifted_hand_example():
    # two positive pairs with S = lambda, every cross pair orthogonal
    lam = 1.0
    emb = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]])
    labels = np.array([0, 0, 1, 1])
    cfg = LossConfig(lambda_margin=lam, xi_sim=math.inf)
    val = float(losses.lifted_asn_loss(_t(emb), labels, cfg))
    # each anchor: log(e^0) + log(2 * e^0)
    assert val == pytest.approx(4 * math.log(2), rel=1e-12)


def test_lifted_identical_embeddings_match_oracle():
    emb = np.ones((6, 3)) * 0.7
    labels = np.array([0, 0, 1, 1, 2, 2])
    cfg = LossConfig(xi_sim=math.inf)
    val = float(losses.lifted_asn_loss(_t(emb), labels, cfg))
    assert val == pytest.approx(lifted_loss_bruteforce(emb, labels, cfg.lambda_margin, math.inf), rel=1e-12)


def test_normal_lifted_not_larger_when_bound_triggers(rng):
    emb, labels = _batch(rng, scale=3.0)
    cfg = LossConfig(xi_sim=2.0)
    s = emb @ emb.T
    assert np.any((s > 2.0) & (labels[:, None] == labels[None, :]) & ~np.eye(8, dtype=bool))
    bounded = float(losses.lifted_asn_loss(_t(emb), labels, cfg, bound=True))
    plain = float(losses.lifted_asn_loss(_t(emb), labels, cfg, bound=False))
    assert plain <= bounded


@pytest.mark.parametrize("scale", [0.3, 1.0, 2.5])
def test_lifted_matches_bruteforce_with_negative_mask(rng, scale):
    emb, labels = _batch(rng, m=8, scale=scale)
    mask = rng.random((8, 8)) < 0.7
    cfg = LossConfig(xi_sim=1.5)
    got = float(losses.lifted_asn_loss(_t(emb), labels, cfg, negative_mask=mask))
    want = lifted_loss_bruteforce(emb, labels, cfg.lambda_margin, cfg.xi_sim, mask)
    assert rel_err(got, want) < 1e-6


def test_lifted_bruteforce_large_batch(rng):
    labels = np.repeat(np.arange(16), 2)
    emb = rng.standard_normal((32, 6))
    cfg = LossConfig(xi_sim=3.0)
    got = float(losses.lifted_asn_loss(_t(emb), labels, cfg))
    assert rel_err(got, lifted_loss_bruteforce(emb, labels, 1.0, 3.0)) < 1e-6


def test_lifted_single_member_label_drops_positive_term():
    emb = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
    labels = np.array([0, 0, 1])
    cfg = LossConfig(xi_sim=math.inf)
    got = float(losses.lifted_asn_loss(_t(emb), labels, cfg))
    assert got == pytest.approx(lifted_loss_bruteforce(emb, labels, 1.0, math.inf), rel=1e-12)


def test_lifted_degenerate_batch_raises():
    emb = torch.randn(4, 3, dtype=torch.float64)
    with pytest.raises(losses.DegenerateBatchError):
        losses.lifted_asn_loss(emb, np.array([0, 1, 2, 3]))
    with pytest.raises(losses.DegenerateBatchError):
        losses.lifted_asn_loss(emb, np.array([0, 0, 0, 0]))


def test_lifted_gradient_matches_finite_differences(rng):
    emb, labels = _batch(rng, m=8, scale=0.8)
    mask = np.abs(np.arange(8)[:, None] - np.arange(8)[None, :]) >= 2
    cfg = LossConfig(xi_sim=0.5)
    x = _t(emb).requires_grad_(True)
    losses.lifted_asn_loss(x, labels, cfg, negative_mask=mask).backward()
    fd = central_difference(lambda e: float(losses.lifted_asn_loss(_t(e), labels, cfg, negative_mask=mask)),
                            emb)
    assert rel_err(x.grad.numpy(), fd) < 1e-4


def test_lifted_permutation_invariant(rng):
    emb, labels = _batch(rng)
    perm = rng.permutation(8)
    a = float(losses.lifted_asn_loss(_t(emb), labels))
    b = float(losses.lifted_asn_loss(_t(emb[perm]), labels[perm]))
    assert a == pytest.approx(b, rel=1e-12)


def test_neg_sqdist_similarity():
    e = _t([[0.0, 0.0], [3.0, 4.0]])
    s = losses.similarity_matrix(e, "neg_sqdist")
    assert s.numpy().tolist() == [[0.0, -25.0], [-25.0, 0.0]]
    with pytest.raises(ValueError):
        losses.similarity_matrix(e, "cosine")


def test_baseline_metric_losses_run(rng):
    emb, labels = _batch(rng)
    for name in ("triplet", "npair", "lifted", "lifted_asn"):
        v = losses.metric_loss(_t(emb), labels, LossConfig(metric=name))
        assert torch.isfinite(v)
    with pytest.raises(ValueError):
        losses.metric_loss(_t(emb), labels, LossConfig(metric="contrastive"))


# -- entropies ---------------------------------------------------------------


def test_conditional_entropy_examples():
    assert float(losses.conditional_entropy(torch.full((3, 4), 0.25))) == pytest.approx(math.log(4))
    assert float(losses.conditional_entropy(torch.eye(4))) == 0.0
    val = float(losses.conditional_entropy(_t([[0.5, 0.5], [1.0, 0.0]])))
    assert val == pytest.approx(0.5 * math.log(2), abs=1e-12)
    assert round(val, 4) == 0.3466


def test_marginal_entropy_examples():
    assert float(losses.marginal_entropy(_t([[1, 0], [0, 1]]))) == pytest.approx(math.log(2))
    assert float(losses.marginal_entropy(_t([[1, 0], [1, 0]]))) == 0.0
    val = float(losses.marginal_entropy(_t([[0.8, 0.2], [0.4, 0.6]])))
    assert val == pytest.approx(-(0.6 * math.log(0.6) + 0.4 * math.log(0.4)), abs=1e-12)
    assert round(val, 4) == 0.6730


def test_marginal_of_identical_rows_equals_row_entropy(rng):
    row = rng.dirichlet(np.ones(5))
    probs = _t(np.tile(row, (7, 1)))
    assert float(losses.marginal_entropy(probs)) == pytest.approx(float(losses.conditional_entropy(probs)))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (6, 4), elements=st.floats(0.0, 1.0)))
def test_entropies_bounded(raw):
    raw = raw + 1e-12
    probs = raw / raw.sum(1, keepdims=True)
    for fn in (losses.conditional_entropy, losses.marginal_entropy):
        h = float(fn(_t(probs)))
        assert -1e-12 <= h <= math.log(4) + 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(0.01, 1.0)), st.permutations(range(5)))
def test_entropies_permutation_invariant(raw, perm):
    probs = raw / raw.sum(1, keepdims=True)
    p2 = probs[list(perm)]
    for fn in (losses.conditional_entropy, losses.marginal_entropy):
        assert float(fn(_t(probs))) == pytest.approx(float(fn(_t(p2))), rel=1e-12, abs=1e-15)


def test_entropies_match_bruteforce(rng):
    probs = rng.dirichlet(np.ones(4), size=8)
    assert rel_err(float(losses.conditional_entropy(_t(probs))), conditional_entropy_bruteforce(probs)) < 1e-12
    assert rel_err(float(losses.marginal_entropy(_t(probs))), marginal_entropy_bruteforce(probs)) < 1e-12


def test_entropy_handles_exact_zeros_in_gradient():
    p = _t([[1.0, 0.0], [0.5, 0.5]]).requires_grad_(True)
    losses.conditional_entropy(p).backward()
    assert torch.all(torch.isfinite(p.grad))


# -- composite objectives ------------------------------------------------------


def test_discriminator_loss_examples():
    cfg = LossConfig(beta=1.0)
    uni = torch.full((4, 4), 0.25, dtype=torch.float64)
    assert float(losses.discriminator_loss(uni, torch.tensor(0.0), cfg)) == pytest.approx(0.0, abs=1e-12)
    spread = torch.eye(4, dtype=torch.float64)
    assert float(losses.discriminator_loss(spread, torch.tensor(0.0), cfg)) == pytest.approx(-math.log(4))
    probs = _t([[0.8, 0.2], [0.4, 0.6]])
    want = -marginal_entropy_bruteforce(probs.numpy()) + conditional_entropy_bruteforce(probs.numpy()) + 0.5
    assert float(losses.discriminator_loss(probs, torch.tensor(0.5), cfg)) == pytest.approx(want, rel=1e-12)


def test_encoder_loss_examples():
    cfg = LossConfig(alpha=0.1)
    uni = torch.full((3, 4), 0.25, dtype=torch.float64)
    assert float(losses.encoder_loss(uni, torch.tensor(0.0), cfg)) == pytest.approx(2 * math.log(4))
    one_hot = torch.tensor([[1.0, 0.0]] * 3, dtype=torch.float64)
    assert float(losses.encoder_loss(one_hot, torch.tensor(0.0), cfg)) == 0.0
    val = float(losses.encoder_loss(uni, torch.tensor(3.0, dtype=torch.float64), cfg))
    assert val == pytest.approx(2 * math.log(4) - 0.3, rel=1e-12)
    assert round(val, 4) == 2.4726


def test_ablation_switches():
    probs = torch.full((2, 2), 0.5, dtype=torch.float64)
    no_enc_entropy = LossConfig(alpha=0.1, encoder_entropy=False)
    assert float(losses.encoder_loss(probs, torch.tensor(2.0), no_enc_entropy)) == pytest.approx(-0.2)
    no_entropy = LossConfig(beta=2.0, entropy=False)
    assert float(losses.discriminator_loss(probs, torch.tensor(0.25), no_entropy)) == pytest.approx(0.5)
    assert float(losses.encoder_loss(probs, torch.tensor(2.0), no_entropy)) == pytest.approx(-0.2)


def test_composite_gradients_match_finite_differences(rng):
    logits = rng.standard_normal((6, 3))
    cfg = LossConfig(alpha=0.1, beta=1.0)

    def probs_of(x):
        return torch.softmax(_t(x), dim=-1) if not isinstance(x, torch.Tensor) else torch.softmax(x, -1)

    for fn in (lambda p: losses.discriminator_loss(p, torch.tensor(0.3, dtype=torch.float64), cfg),
               lambda p: losses.encoder_loss(p, torch.tensor(1.7, dtype=torch.float64), cfg),
               losses.conditional_entropy, losses.marginal_entropy):
        x = _t(logits).requires_grad_(True)
        fn(probs_of(x)).backward()
        fd = central_difference(lambda z: float(fn(probs_of(z))), logits)
        assert rel_err(x.grad.numpy(), fd) < 1e-4
