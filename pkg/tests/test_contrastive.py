import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import infonce
from tokenalign import autodiff as ad
from tokenalign.contrastive import ContrastiveConfig, infonce_loss
from tokenalign.errors import BatchError, DimensionError, ParameterError


def test_identical_embeddings_give_log_b():
    e = np.ones((2, 3))
    assert abs(infonce_loss(e, e).item() - math.log(2)) < 1e-15
    e = np.tile([[0.3, -1.0, 2.0]], (5, 1))
    assert abs(infonce_loss(e, e).item() - math.log(5)) < 1e-12


def test_separated_pairs_cold_limit():
    e = np.eye(4)
    assert infonce_loss(e, e, ContrastiveConfig(temperature=1e-3)).item() < 1e-12


def test_row_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    for sym in (True, False):
        cfg = ContrastiveConfig(0.07, sym)
        assert abs(infonce_loss(a, b, cfg).item() - infonce(a.tolist(), b.tolist(), 0.07, sym)) < 1e-12


def test_errors():
    with pytest.raises(BatchError):
        infonce_loss(np.ones((1, 3)), np.ones((1, 3)))
    with pytest.raises(DimensionError):
        infonce_loss(np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(ParameterError):
        ContrastiveConfig(temperature=0)


def test_default_temperature():
    assert ContrastiveConfig().temperature == 0.07


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_nonnegative_and_rotation_invariant(B, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(B, 4)), rng.normal(size=(B, 4))
    loss = infonce_loss(a, b).item()
    assert loss >= 0
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    assert abs(infonce_loss(a @ Q, b @ Q).item() - loss) < 1e-10


def test_gradients():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        cfg = ContrastiveConfig(0.5)
        assert ad.grad_check(lambda n: infonce_loss(n, b, cfg), a) < 1e-5
        assert ad.grad_check(lambda n: infonce_loss(a, n, cfg), b) < 1e-5
