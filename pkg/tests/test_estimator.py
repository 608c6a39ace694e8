import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from twotower import TwoTowerDepthEstimator
from twotower._validation import check_stereo_batch, pack_samples
from twotower.data import make_dataset


@pytest.fixture(scope="module")
def Xy():
    samples, _ = make_dataset(10, 16, seed=8)
    return pack_samples(samples)


def small(**kw):
    return TwoTowerDepthEstimator(levels=2, base_channels=2, epochs=2, batch_size=4, **kw)


def test_params_and_clone():
    est = small(lr=5e-3)
    params = est.get_params()
    assert params["lr"] == 5e-3 and params["levels"] == 2
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(epochs=7)
    assert est.epochs == 7


def test_fit_predict_score(Xy):
    X, y = Xy
    est = small().fit(X, y)
    pred = est.predict(X)
    assert pred.shape == (10, 1, 16, 16)
    assert np.all((pred > 0) & (pred < 1))
    assert est.score(X, y) <= 0
    assert len(est.loss_curve_) == 2
    assert est.input_shape_ == (16, 16)


def test_deterministic(Xy):
    X, y = Xy
    a = small(random_state=3).fit(X, y).predict(X)
    b = small(random_state=3).fit(X, y).predict(X)
    assert a.tobytes() == b.tobytes()


def test_validation_fraction(Xy):
    X, y = Xy
    est = small(validation_fraction=0.1).fit(X, y)
    assert len(est.loss_curve_) == 2


def test_without_clue(Xy):
    X, y = Xy
    est = small(clue_enabled=False).fit(X[:, :6], y[:, 0])
    assert est.params_["primary.0.conv1.weight"].shape[1] == 3
    assert est.predict(X).shape == (10, 1, 16, 16)


def test_not_fitted(Xy):
    with pytest.raises(NotFittedError):
        small().predict(Xy[0])


def test_clue_required(Xy):
    X, y = Xy
    with pytest.raises(ValueError, match="7-channel"):
        small().fit(X[:, :6], y)


@pytest.mark.parametrize(
    "bad, match",
    [
        (np.zeros((2, 7, 16)), "4-D"),
        (np.zeros((2, 5, 16, 16)), "channels"),
        (np.full((1, 7, 16, 16), 2.0), r"\[0, 1\]"),
        (np.full((1, 7, 16, 16), np.nan), "NaN"),
        (np.zeros((1, 7, 16, 12)), "width"),
    ],
)
def test_input_validation(bad, match):
    with pytest.raises(ValueError, match=match):
        check_stereo_batch(bad, levels=3)


def test_target_validation(Xy):
    X, y = Xy
    with pytest.raises(ValueError, match="target shape"):
        small().fit(X, y[:5])
    with pytest.raises(ValueError, match="positive"):
        small().fit(X, np.zeros_like(y))
