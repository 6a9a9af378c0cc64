import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pdnet import PathfinderClassifier, TieStrengthFeatures
from pdnet.features import METRICS, feature_matrix
from pdnet.sparse import CsrMatrix
from pdnet.synth import SyntheticConfig, generate


@pytest.fixture(scope="module")
def data():
    ds = generate(SyntheticConfig(n=40, F=6, D=3, P=0.15, Q=0.02, seed=2))
    return ds.node_features, ds.labels, ds.graph.to_scipy(), ds.edge_features


@pytest.mark.parametrize("kind", ["gcn", "pdn", "pdn_attention", "pdn_edgeconv", "pdn_multiscale"])
def test_fit_predict_each_model(kind, data):
    x, y, g, ef = data
    clf = PathfinderClassifier(model=kind, epochs=5, hidden=8)
    clf.fit(x, y, graph=g, edge_features=np.abs(ef))
    pred = clf.predict(x)
    assert pred.shape == (120,) and set(pred) <= set(y)
    proba = clf.predict_proba(x)
    assert np.allclose(proba.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_unlabeled_nodes_and_label_encoding(data):
    x, y, g, ef = data
    named = np.array(["a", "b", "c"])[y].astype(object)
    named[::3] = -1
    clf = PathfinderClassifier(epochs=3).fit(x, named, graph=g, edge_features=ef)
    assert list(clf.classes_) == ["a", "b", "c"]
    assert set(clf.predict(x)) <= {"a", "b", "c"}


def test_get_params_and_clone():
    clf = PathfinderClassifier(model="gcn", hidden=7, random_state=3)
    assert clf.get_params()["hidden"] == 7
    twin = clone(clf)
    assert twin.get_params() == clf.get_params() and twin is not clf


def test_fit_is_deterministic(data):
    x, y, g, ef = data
    a = PathfinderClassifier(epochs=5).fit(x, y, graph=g, edge_features=ef).decision_function(x)
    b = PathfinderClassifier(epochs=5).fit(x, y, graph=g, edge_features=ef).decision_function(x)
    assert np.array_equal(a, b)


def test_learned_graph_on_edges(data):
    x, y, g, ef = data
    clf = PathfinderClassifier(epochs=2).fit(x, y, graph=g, edge_features=ef)
    lg = clf.learned_graph()
    assert (lg != 0).nnz == g.nnz
    assert abs(lg - lg.T).max() == 0.0
    with pytest.raises(AttributeError):
        PathfinderClassifier(model="gcn", epochs=1).fit(x, y, graph=g).learned_graph()


def test_per_stored_entry_edge_features(data):
    x, y, g, ef = data
    csr = sp.csr_matrix(g)
    rows = np.repeat(np.arange(csr.shape[0]), np.diff(csr.indptr))
    full = np.zeros((csr.nnz, ef.shape[1]))
    full[rows < csr.indices] = ef
    a = PathfinderClassifier(epochs=3).fit(x, y, graph=g, edge_features=ef).decision_function(x)
    b = PathfinderClassifier(epochs=3).fit(x, y, graph=g, edge_features=full).decision_function(x)
    assert np.array_equal(a, b)


def test_validation_errors(data):
    x, y, g, ef = data
    clf = PathfinderClassifier(epochs=1)
    with pytest.raises(NotFittedError):
        clf.predict(x)
    with pytest.raises(ValueError, match="one entry per node"):
        clf.fit(x, y[:-1], graph=g)
    with pytest.raises(ValueError, match="labeled"):
        clf.fit(x, -np.ones_like(y), graph=g)
    with pytest.raises(ValueError, match="rows"):
        clf.fit(x[:-1], y[:-1], graph=g)
    with pytest.raises(ValueError, match="self loops"):
        clf.fit(np.ones((2, 1)), [0, 1], graph=np.eye(2))
    with pytest.raises(ValueError, match="undirected"):
        clf.fit(np.ones((2, 1)), [0, 1], graph=np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="feature rows"):
        clf.fit(x, y, graph=g, edge_features=ef[:-1])
    with pytest.raises(ValueError, match="unknown model"):
        PathfinderClassifier(model="gat").fit(x, y, graph=g)
    fitted = PathfinderClassifier(epochs=1).fit(x, y, graph=g, edge_features=ef)
    with pytest.raises(ValueError, match="features"):
        fitted.predict(x[:, :-1])
    with pytest.raises(ValueError, match="graph="):
        fitted.predict(x[:-1])


def test_tie_strength_transformer(data):
    _, _, g, _ = data
    raw = TieStrengthFeatures(scaling=None).fit_transform(g)
    assert np.array_equal(raw, feature_matrix(CsrMatrix.from_scipy(g)).values)
    std = TieStrengthFeatures().fit_transform(g)
    assert np.allclose(std.mean(axis=0), 0.0, atol=1e-12)
    mx = TieStrengthFeatures(scaling="max").fit_transform(g)
    assert mx.min() >= 0.0 and mx.max() <= 1.0
    assert list(TieStrengthFeatures().get_feature_names_out()) == list(METRICS)
    with pytest.raises(ValueError):
        TieStrengthFeatures(scaling="robust").fit(g)


def test_tie_strength_binarizes_weights(data):
    _, _, g, _ = data
    weighted = g * 3.0
    assert np.array_equal(TieStrengthFeatures(scaling=None).fit_transform(weighted),
                          TieStrengthFeatures(scaling=None).fit_transform(g))


def test_tie_strength_feeds_attention(data):
    x, y, g, _ = data
    ef = TieStrengthFeatures(scaling="max").fit_transform(g)
    clf = PathfinderClassifier(model="pdn_attention", epochs=3).fit(x, y, graph=g, edge_features=ef)
    assert clf.predict(x).shape == y.shape
