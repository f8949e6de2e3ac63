import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from schedcost.errors import ValidationError
from schedcost.gradcheck import check_loss
from schedcost.losses import delta_ndcg, lambda_rank_loss, mse_loss


def test_mse_examples():
    assert mse_loss([0.5], [1.0])[0] == 0.25
    loss, grad = mse_loss([0.2, 0.4], [0.2, 0.4])
    assert loss == 0.0 and not grad.any()
    assert mse_loss([1.0, 3.0], [0.0, 0.0])[1].tolist() == [1.0, 3.0]  # 2r/B
    with pytest.raises(ValidationError):
        mse_loss([], [])


def test_lambda_rank_tie_is_zero():
    loss, grad = lambda_rank_loss([0.3, 0.9], [0.7, 0.7], [0, 0])
    assert loss == 0.0 and not grad.any()


def test_lambda_rank_margin_zero_pair():
    s, y = np.array([0.5, 0.5]), np.array([1.0, 0.5])
    w = delta_ndcg(s, y)[0, 1]
    assert lambda_rank_loss(s, y, [0, 0])[0] == pytest.approx(w * 1.0)


def test_delta_ndcg_by_hand():
    # ranks 1 and 2; gains 1 and sqrt(2)-1; discounts 1 and 1/log2(3)
    s, y = np.array([0.0, 1.0]), np.array([1.0, 0.5])
    g = np.array([1.0, math.sqrt(2) - 1])
    d = np.array([1 / math.log2(3), 1.0])
    idcg = g[0] + g[1] / math.log2(3)
    assert delta_ndcg(s, y)[0, 1] == pytest.approx(abs((g[0] - g[1]) * (d[0] - d[1])) / idcg)


def test_pairs_only_within_groups():
    s = np.array([0.0, 1.0, 0.0, 1.0])
    y = np.array([1.0, 0.5, 1.0, 0.5])
    both = lambda_rank_loss(s, y, [0, 0, 1, 1])[0]
    one = lambda_rank_loss(s[:2], y[:2], [0, 0])[0]
    assert both == pytest.approx(one)
    assert lambda_rank_loss(s, y, [0, 1, 2, 3])[0] == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_mse_gradient_fd(seed):
    assert check_loss("mse", seed, h=1e-5) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_lambda_rank_gradient_fd(seed):
    assert check_loss("lambda_rank", seed, h=1e-5) < 1e-5


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 1.0))
def test_lowering_the_worse_item_lowers_the_loss(si, sj, delta):
    a = lambda_rank_loss([si, sj], [1.0, 0.4], [0, 0])[0]
    b = lambda_rank_loss([si, sj - delta], [1.0, 0.4], [0, 0])[0]
    assert b < a
