import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.utils.estimator_checks import parametrize_with_checks

from hamnet.data import gen_double_moons
from hamnet.estimator import HamiltonianNetClassifier


@parametrize_with_checks([HamiltonianNetClassifier(n_layers=2, epochs=3, batch_size=20)])
def test_sklearn_compatible(estimator, check):
    check(estimator)


def test_fit_predict_string_labels():
    d = gen_double_moons(400, seed=0)
    labels = np.where(d.y == 0, "upper", "lower")
    clf = HamiltonianNetClassifier(n_layers=2, epochs=15, batch_size=50).fit(d.X, labels)
    assert set(clf.classes_) == {"lower", "upper"}
    assert clf.score(d.X, labels) > 0.9
    np.testing.assert_allclose(clf.predict_proba(d.X).sum(axis=1), 1.0)
    assert clf.transform(d.X[:5]).shape == (5, 4)


def test_matches_direct_training():
    from hamnet.layers import NetworkParams, OutputHead
    from hamnet.training import TrainConfig, train_coordinate_descent
    d = gen_double_moons(200, seed=1)
    clf = HamiltonianNetClassifier(n_layers=3, epochs=2, batch_size=50, random_state=7).fit(d.X, d.y)
    p = NetworkParams.initialize("H1", 4, 3, 0.2 / 3, 7)
    head = OutputHead.zeros(4, 2)
    X = np.hstack([d.X, np.zeros((200, 2))])
    train_coordinate_descent(p, head, X, d.y, TrainConfig(epochs=2, batch_size=50, seed=7))
    np.testing.assert_array_equal(clf.params_.K[2], p.K[2])


def test_params_round_trip_and_clone():
    clf = HamiltonianNetClassifier(architecture="H2", n_layers=8)
    assert clf.get_params()["n_layers"] == 8
    assert clone(clf).set_params(alpha=0.1).alpha == 0.1


@pytest.mark.parametrize("kw, err", [(dict(architecture="H7"), ValueError), (dict(n_layers=-1), ValueError),
                                     (dict(n_state=1), ValueError), (dict(n_layers=1.5), TypeError)])
def test_invalid_params(kw, err):
    d = gen_double_moons(20)
    with pytest.raises(err):
        HamiltonianNetClassifier(epochs=1, **kw).fit(d.X, d.y)


def test_unfitted_and_feature_mismatch():
    clf = HamiltonianNetClassifier(epochs=1)
    with pytest.raises(NotFittedError):
        clf.predict(np.zeros((1, 2)))
    d = gen_double_moons(20)
    clf.fit(d.X, d.y)
    with pytest.raises(ValueError, match="features"):
        clf.predict(np.zeros((1, 3)))


def test_in_pipeline():
    d = gen_double_moons(200, seed=2, standardized=False)
    pipe = make_pipeline(StandardScaler(), HamiltonianNetClassifier(n_layers=2, epochs=5, batch_size=50))
    assert pipe.fit(d.X, d.y).score(d.X, d.y) > 0.8
