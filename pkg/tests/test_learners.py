import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bagdp.errors import InvalidArgumentError
from bagdp.learners import (
    KNNLearner,
    LabeledExample,
    LogisticLearner,
    LogisticModel,
    MajorityClassLearner,
    fit_knn,
    fit_logistic,
    fit_majority_class,
    make_learner,
    model_from_dict,
    serialize_example,
    softmax_loss_and_grad,
)


def ex(x, y):
    return LabeledExample(tuple(x) if isinstance(x, (list, tuple)) else (x,), y)


# ---------------------------------------------------------------- k-NN

def test_knn_single_point():
    assert fit_knn([ex([0], 1)], 1).predict([100]) == 1


def test_knn_majority_of_three():
    m = fit_knn([ex([0], 0), ex([1], 1), ex([2], 1)], 3)
    assert m.predict([0]) == 1


def test_knn_ties():
    # label tie among neighbours -> smallest label
    m = fit_knn([ex([1], 1), ex([-1], 0)], 2)
    assert m.predict([0]) == 0
    # distance tie -> earliest stored example
    m = fit_knn([ex([1], 3), ex([-1], 2)], 1)
    assert m.predict([0]) == 3
    m = fit_knn([ex([-1], 2), ex([1], 3)], 1)
    assert m.predict([0]) == 2


def test_knn_canonical_form_determinism_and_order():
    a = [ex([0.5], 1), ex([2.0], 0)]
    assert fit_knn(a).canonical_form == fit_knn(list(a)).canonical_form
    assert fit_knn(a).canonical_form != fit_knn(a[::-1]).canonical_form
    assert fit_knn(a, ordered=False).canonical_form == fit_knn(a[::-1], ordered=False).canonical_form


@settings(max_examples=200, deadline=None)
@given(
    a=st.lists(st.tuples(st.integers(-3, 3), st.integers(0, 2)), min_size=1, max_size=4),
    b=st.lists(st.tuples(st.integers(-3, 3), st.integers(0, 2)), min_size=1, max_size=4),
    ordered=st.booleans(),
)
def test_knn_canonical_form_is_injective(a, b, ordered):
    ea = [ex([float(x)], y) for x, y in a]
    eb = [ex([float(x)], y) for x, y in b]
    same = ea == eb if ordered else sorted(a) == sorted(b)
    assert (fit_knn(ea, ordered=ordered).canonical_form == fit_knn(eb, ordered=ordered).canonical_form) == same


def test_serialization_distinguishes_widths_and_labels():
    assert serialize_example(ex([1.0], 0)) != serialize_example(ex([1.0], 1))
    assert serialize_example(ex([1.0, 2.0], 0)) != serialize_example(ex([1.0], 0))


def test_knn_errors():
    with pytest.raises(InvalidArgumentError):
        fit_knn([], 1)
    with pytest.raises(InvalidArgumentError):
        fit_knn([ex([0], 0)], 2)


# ---------------------------------------------------------------- majority class

def test_majority_class_examples():
    assert fit_majority_class([ex([0], 2), ex([1], 2), ex([2], 0)]).predict([9]) == 2
    assert fit_majority_class([ex([0], 0), ex([1], 1)]).predict([9]) == 0
    m = fit_majority_class([ex([i], 5) for i in range(7)])
    assert (m.predict_many(np.zeros((4, 1))) == 5).all()
    with pytest.raises(InvalidArgumentError):
        fit_majority_class([])


def test_negative_label_rejected():
    with pytest.raises(InvalidArgumentError):
        LabeledExample((0.0,), -1)


# ---------------------------------------------------------------- logistic

def _separable_blob():
    rng = np.random.default_rng(5)
    pts = []
    for i in range(40):
        y = i % 2
        x1 = (1.0 + rng.uniform(0, 2)) * (1 if y else -1)
        pts.append(ex([x1, rng.uniform(-3, 3)], y))
    return pts


def test_blob_is_separable_with_margin():
    # direction (1, 0) through the origin separates the classes by at least 1
    for e in _separable_blob():
        signed = e.features[0] * (1 if e.label else -1)
        assert signed >= 1.0


def test_logistic_fits_separable_blob():
    data = _separable_blob()
    m = fit_logistic(data, epochs=500, learning_rate=0.1)
    X = np.array([e.features for e in data])
    y = np.array([e.label for e in data])
    assert (m.predict_many(X) == y).mean() == 1.0


def test_logistic_single_class():
    m = fit_logistic([ex([i, -i], 3) for i in range(5)])
    assert (m.predict_many(np.random.default_rng(0).normal(size=(20, 2))) == 3).all()


def test_logistic_determinism_and_seed():
    data = _separable_blob()
    a = fit_logistic(data, epochs=20, init_seed=1)
    b = fit_logistic(data, epochs=20, init_seed=1)
    c = fit_logistic(data, epochs=20, init_seed=2)
    assert a.canonical_form == b.canonical_form
    assert a.canonical_form != c.canonical_form


def test_logistic_errors():
    with pytest.raises(InvalidArgumentError):
        fit_logistic([ex([float("nan")], 0), ex([1.0], 1)])
    with pytest.raises(InvalidArgumentError):
        fit_logistic([ex([0.0], 0)], epochs=0)
    with pytest.raises(InvalidArgumentError):
        fit_logistic([ex([0.0], 0)], learning_rate=0.0)
    with pytest.raises(InvalidArgumentError):
        fit_logistic([ex([0.0], 0)], l2=-1.0)


def test_logistic_subset_of_classes_predicts_only_those():
    data = [ex([0.0], 4), ex([1.0], 7), ex([2.0], 7)]
    m = fit_logistic(data, epochs=50)
    assert set(m.predict_many(np.linspace(-5, 5, 30).reshape(-1, 1))) <= {4, 7}


def _finite_difference(W, X, Y, l2, h=1e-6):
    g = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        g[idx] = (softmax_loss_and_grad(Wp, X, Y, l2)[0] - softmax_loss_and_grad(Wm, X, Y, l2)[0]) / (2 * h)
    return g


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        m, d, c = rng.integers(2, 8), rng.integers(1, 5), rng.integers(2, 5)
        X = np.hstack([rng.normal(size=(m, d)), np.ones((m, 1))])
        Y = np.eye(c)[rng.integers(0, c, m)]
        W = rng.normal(size=(d + 1, c))
        l2 = float(rng.uniform(0, 0.5))
        _, g = softmax_loss_and_grad(W, X, Y, l2)
        fd = _finite_difference(W, X, Y, l2)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    assert worst <= 1e-5


# ---------------------------------------------------------------- learner objects

def test_make_learner_and_round_trip():
    data = [ex([0.0, 1.0], 0), ex([1.0, 0.0], 1), ex([2.0, 2.0], 1)]
    for learner in (KNNLearner(2), MajorityClassLearner(), LogisticLearner(epochs=30)):
        model = learner(data)
        back = model_from_dict(model.to_dict())
        assert back.canonical_form == model.canonical_form
        X = np.array([[0.1, 0.9], [3.0, 3.0]])
        assert (back.predict_many(X) == model.predict_many(X)).all()
    assert make_learner("knn", k_neighbors=2) == KNNLearner(2)
    with pytest.raises(InvalidArgumentError):
        make_learner("forest")
    with pytest.raises(InvalidArgumentError):
        model_from_dict({"kind": "forest"})


def test_logistic_model_from_dict_keeps_weights():
    m = LogisticModel((0, 1), np.arange(6, dtype=float).reshape(3, 2))
    assert (model_from_dict(m.to_dict()).weights == m.weights).all()
