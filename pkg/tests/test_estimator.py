import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lpn.config import load_config
from lpn.estimator import LayoutProposalNetwork
from lpn.experiment import make_scenes


@pytest.fixture(scope="module")
def data():
    cfg = load_config()
    return make_scenes(cfg, 4, 3, "fit"), make_scenes(cfg, 2, 3, "hold")


def test_params_round_trip():
    est = LayoutProposalNetwork(epochs=5, kernel=False, sigma_x=20.0)
    params = est.get_params()
    assert params["epochs"] == 5 and params["kernel"] is False and params["sigma_x"] == 20.0
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(top_n=50)
    assert est.top_n == 50


def test_unfitted_raises(data):
    with pytest.raises(NotFittedError):
        LayoutProposalNetwork().predict(data[1])


def test_fit_predict_score(data):
    train, test = data
    est = LayoutProposalNetwork(epochs=20).fit(train)
    assert est.n_features_in_ == 65 and len(est.history_) == 21
    counts = est.predict(test)
    assert counts.shape == (2,) and counts.dtype == np.int64 and np.all(counts >= 0)
    probs = est.predict_proba(test)
    assert len(probs) == 2 and np.all((probs[0] > 0) & (probs[0] < 1))
    props = est.propose(test, top_n=10)
    assert all(len(p) == 10 for p in props)
    assert 0.0 <= est.score(test) <= 1.0


def test_images_with_separate_boxes_give_same_model(data):
    train, _ = data
    a = LayoutProposalNetwork(epochs=10).fit(train)
    b = LayoutProposalNetwork(epochs=10).fit([s.grid for s in train], [s.boxes for s in train])
    assert a.model_.weights.tobytes() == b.model_.weights.tobytes()
    np.testing.assert_array_equal(a.predict([s.grid for s in train]), b.predict(train))


def test_kernel_flag_changes_training(data):
    train, _ = data
    on = LayoutProposalNetwork(epochs=10).fit(train)
    off = LayoutProposalNetwork(epochs=10, kernel=False).fit(train)
    assert on.model_.weights.tobytes() != off.model_.weights.tobytes()


def test_input_validation(data):
    train, _ = data
    est = LayoutProposalNetwork(epochs=2)
    with pytest.raises(ValueError):
        est.fit([])
    with pytest.raises(ValueError):
        est.fit([s.grid for s in train])  # no boxes
    with pytest.raises(ValueError):
        est.fit([s.grid for s in train], [s.boxes for s in train[:2]])
    bad = train[0].grid.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        est.fit([bad], [train[0].boxes])
    with pytest.raises(ValueError):
        est.fit([train[0].grid], [[[5, 5, 1, 1]]])
    with pytest.raises(ValueError):
        LayoutProposalNetwork(epochs=2, random_state="x").fit(train)
