import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penaltydrive import autodiff as ad
from penaltydrive.autodiff import Tensor
from penaltydrive.losses import (LossWeights, NumericalError, PenaltyContext, PenaltyParams, contrastive_align,
                                 curvature_speed_penalty, estimated_speed, pairwise_sym_kl, policy_loss,
                                 red_light_penalty, stop_sign_penalty, sym_kl, total_loss)

finite = st.floats(-30, 30, allow_nan=False)
wp_strategy = st.lists(st.tuples(finite, finite), min_size=4, max_size=4).map(np.array)


# ---------------------------------------------------------------- policy


def test_policy_zero_and_hand_sum():
    t = np.arange(8.0).reshape(4, 2)
    assert policy_loss(t, t).item() == 0.0
    assert policy_loss(t + np.array([1.0, 0.0]), t).item() == 4.0


@given(wp_strategy, wp_strategy)
def test_policy_swap_axes_invariant(a, b):
    assert policy_loss(a, b).item() == pytest.approx(policy_loss(a[:, ::-1], b[:, ::-1]).item(), abs=1e-12)


def test_policy_shape_error():
    with pytest.raises(ad.ShapeError):
        policy_loss(np.zeros((4, 2)), np.zeros((3, 2)))


# ---------------------------------------------------------------- KL / alignment


def _kl_oracle(m1, v1, m2, v2):
    # Textbook KL(N1 || N2) for diagonal Gaussians, symmetrised by averaging.
    kl = lambda a, va, b, vb: 0.5 * np.sum(np.log(vb / va) + (va + (a - b) ** 2) / vb - 1)  # noqa: E731
    return 0.5 * (kl(m1, v1, m2, v2) + kl(m2, v2, m1, v1))


def test_sym_kl_examples():
    assert sym_kl(([0.0], [1.0]), ([0.0], [1.0])).item() == 0.0
    assert sym_kl(([0.0], [1.0]), ([1.0], [1.0])).item() == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31))
def test_sym_kl_matches_textbook(seed):
    rng = np.random.default_rng(seed)
    m1, m2 = rng.normal(size=3), rng.normal(size=3)
    v1, v2 = rng.uniform(0.1, 3, 3), rng.uniform(0.1, 3, 3)
    got = sym_kl((m1, v1), (m2, v2)).item()
    assert got == pytest.approx(_kl_oracle(m1, v1, m2, v2), rel=1e-10, abs=1e-12)
    assert got == pytest.approx(sym_kl((m2, v2), (m1, v1)).item(), abs=1e-12)


def test_sym_kl_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        sym_kl(([0.0], [0.0]), ([0.0], [1.0]))


def test_contrastive_identical_pair():
    g = (np.zeros((2, 3)), np.zeros((2, 3)))
    assert contrastive_align(g, g, eps_a=1.0).item() == pytest.approx(0.5, abs=1e-15)


def test_contrastive_zero_when_separated():
    mu = np.array([[0.0, 0.0], [10.0, 10.0]])
    g = (mu, np.zeros((2, 2)))
    assert contrastive_align(g, g, eps_a=5.0).item() == 0.0


def test_contrastive_decreases_as_pair_meets():
    lv = np.zeros((2, 2))
    far = contrastive_align((np.array([[0.0, 0], [9, 9]]), lv), (np.array([[2.0, 0], [9, 9]]), lv), 1.0).item()
    near = contrastive_align((np.array([[0.0, 0], [9, 9]]), lv), (np.array([[1.0, 0], [9, 9]]), lv), 1.0).item()
    assert near < far


def test_contrastive_needs_two():
    g = (np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        contrastive_align(g, g, 1.0)


def test_pairwise_matches_loop():
    rng = np.random.default_rng(0)
    g1 = (rng.normal(size=(3, 4)), rng.normal(size=(3, 4)) * 0.3)
    g2 = (rng.normal(size=(3, 4)), rng.normal(size=(3, 4)) * 0.3)
    D = pairwise_sym_kl(g1, g2).data
    for i in range(3):
        for j in range(3):
            want = _kl_oracle(g1[0][i], np.exp(g1[1][i]), g2[0][j], np.exp(g2[1][j]))
            assert D[i, j] == pytest.approx(want, rel=1e-10)


# ---------------------------------------------------------------- penalties


def test_red_light_examples():
    wp = np.array([[0, 4.0], [0, 5.0], [0, 6.0], [0, 7.0]])
    assert red_light_penalty(wp, PenaltyContext.single(is_red=0, y_stop=5)).item() == 0.0
    assert red_light_penalty(wp, PenaltyContext.single(is_red=1, y_stop=5)).item() == 0.75


@given(wp_strategy, st.floats(0, 30), st.integers(0, 3), st.floats(0, 5))
def test_red_light_monotone(wp, y_stop, t, bump):
    ctx = PenaltyContext.single(is_red=1, y_stop=y_stop)
    up = wp.copy()
    up[t, 1] += bump
    assert red_light_penalty(up, ctx).item() >= red_light_penalty(wp, ctx).item()


def test_speed_examples():
    assert estimated_speed(np.array([[0, 0], [0, 2.0], [0, 4], [0, 6]]), 0.5).item() == 4.0
    assert estimated_speed(np.zeros((4, 2)), 0.5).item() == 0.0


@given(wp_strategy, st.floats(-math.pi, math.pi))
def test_speed_rotation_invariant(wp, a):
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    assert estimated_speed(wp @ R.T, 0.5).item() == pytest.approx(estimated_speed(wp, 0.5).item(), abs=1e-9)


def test_stop_sign_examples():
    wp = np.array([[0, 0], [0, 2.0], [0, 4], [0, 6]])
    assert stop_sign_penalty(wp, PenaltyContext.single(is_stop_sign=0)).item() == 0.0
    assert stop_sign_penalty(wp, PenaltyContext.single(is_stop_sign=1)).item() == 3.5
    slow = np.array([[0, 0], [0, 0.25], [0, 0.5], [0, 0.75]])
    assert stop_sign_penalty(slow, PenaltyContext.single(is_stop_sign=1)).item() == 0.0


def test_curvature_examples():
    fast = np.array([[0, 0], [0, 3.0], [0, 6], [0, 9]])
    assert curvature_speed_penalty(fast, PenaltyContext.single(delta_heading=0.0)).item() == 0.0
    slow = np.array([[0, 0], [0, 1.0], [0, 2], [0, 3]])
    assert curvature_speed_penalty(slow, PenaltyContext.single(delta_heading=math.pi / 6)).item() == 0.0
    v = curvature_speed_penalty(fast, PenaltyContext.single(delta_heading=math.pi / 6)).item()
    assert v == pytest.approx(2.0, abs=1e-12)


def test_penalty_batched_matches_single():
    rng = np.random.default_rng(0)
    wps = rng.normal(size=(5, 4, 2)) * 5
    ctx = PenaltyContext(np.array([1, 0, 1, 1, 0.0]), rng.uniform(0, 5, 5), np.array([1, 1, 0, 1, 0.0]),
                         rng.normal(size=5))
    for fn in (red_light_penalty, stop_sign_penalty, curvature_speed_penalty):
        batched = fn(wps, ctx).data
        for i in range(5):
            one = PenaltyContext.single(ctx.is_red[i], ctx.y_stop[i], ctx.is_stop_sign[i], ctx.delta_heading[i])
            assert batched[i] == fn(wps[i], one).item()


def test_penalty_gradients():
    wp = Tensor(np.array([[0.1, 1.0], [0.3, 3.2], [0.2, 6.1], [0.4, 8.9]]), requires_grad=True)
    ctx = PenaltyContext.single(is_red=1, y_stop=4.0, is_stop_sign=1, delta_heading=0.4)
    f = lambda: red_light_penalty(wp, ctx) + stop_sign_penalty(wp, ctx) + curvature_speed_penalty(wp, ctx)  # noqa
    assert ad.grad_check(f, wp) <= 1e-6


def test_waypoint_weights_validated():
    with pytest.raises(ValueError):
        PenaltyParams(c=(0.5, 0.5, 0.5, 0.5)).weights(4)


# ---------------------------------------------------------------- total loss


class _Out:
    def __init__(self, rng, n=2, with_penalty_room=True):
        self.waypoints = Tensor(rng.normal(size=(n, 4, 2)))
        self.front_seg_logits = Tensor(rng.normal(size=(n, 4, 3, 5)))
        self.td_seg_logits = Tensor(rng.normal(size=(n, 4, 4, 4)))
        self.light_logits = Tensor(rng.normal(size=(n, 4)))
        self.stop_logit = Tensor(rng.normal(size=(n, 1)))
        self.gauss_img = (Tensor(rng.normal(size=(n, 3))), Tensor(rng.normal(size=(n, 3)) * 0.1))
        self.gauss_lidar = (Tensor(rng.normal(size=(n, 3))), Tensor(rng.normal(size=(n, 3)) * 0.1))


class _Batch:
    def __init__(self, rng, n=2, feasible=False):
        self.waypoints = rng.normal(size=(n, 4, 2))
        self.front_seg = np.eye(4)[rng.integers(0, 4, (n, 3, 5))].transpose(0, 3, 1, 2)
        self.td_seg = np.eye(4)[rng.integers(0, 4, (n, 4, 4))].transpose(0, 3, 1, 2)
        self.light_state = np.eye(4)[rng.integers(0, 4, n)]
        self.stop_sign_flag = np.zeros(n) if feasible else np.ones(n)
        self.is_red = np.zeros(n) if feasible else np.ones(n)
        self.y_stop = np.full(n, -5.0)
        self.delta_heading = np.zeros(n) if feasible else np.full(n, 0.5)


def test_total_degenerate_weights_is_policy():
    rng = np.random.default_rng(0)
    out, batch = _Out(rng), _Batch(rng)
    zero = LossWeights(0, 0, 0, 0, 0, 0, 0, 0)
    loss, br = total_loss(out, batch, zero)
    assert loss.item() == ad.mean(policy_loss(out.waypoints, batch.waypoints)).item()
    assert set(br) == {"policy", "total"}


def test_total_feasible_independent_of_lambda():
    rng = np.random.default_rng(1)
    out, batch = _Out(rng), _Batch(rng, feasible=True)
    a, _ = total_loss(out, batch, LossWeights(lambda_red=0.1, lambda_stop=0.2, lambda_speed=0.3))
    b, _ = total_loss(out, batch, LossWeights(lambda_red=9, lambda_stop=9, lambda_speed=9))
    assert a.item() == b.item()


def test_breakdown_sums_to_total():
    rng = np.random.default_rng(2)
    loss, br = total_loss(_Out(rng), _Batch(rng))
    parts = [v for k, v in br.items() if k != "total"]
    assert math.fsum(parts) == pytest.approx(br["total"], abs=1e-12)
    assert br["total"] == loss.item()
    assert br["p_red"] > 0 and br["p_stop"] >= 0


def test_non_finite_names_term():
    rng = np.random.default_rng(3)
    out, batch = _Out(rng), _Batch(rng)
    out.light_logits = Tensor(np.full((2, 4), np.nan))
    with pytest.raises(NumericalError, match="light"):
        total_loss(out, batch)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(lambda_red=-1)
