import numpy as np
import pytest

from qcmm.model import ModelSpec, ParamStore, init_params, input_density, parameter_breakdown, predict_proba, encode
from qcmm.qcnn import forward_arrays


class TestSpec:
    def test_routes(self):
        assert ModelSpec().route == "fused"
        assert ModelSpec("classical").route == "concat"
        assert ModelSpec("circuit-block").route == "entangled"
        assert ModelSpec(ablation="hsi-only").route == "product"

    def test_fixed_fusion_requires_qcmm(self):
        with pytest.raises(ValueError):
            ModelSpec("classical", ablation="fixed-fusion")

    def test_no_mlp_width(self):
        with pytest.raises(ValueError):
            ModelSpec(ablation="no-mlp", d=6)
        ModelSpec("circuit-block", ablation="no-mlp", d=6)

    def test_unknown(self):
        with pytest.raises(ValueError):
            ModelSpec(ablation="bogus")


class TestParamStore:
    def test_round_trip(self):
        store = init_params(ModelSpec("classical"), 3)
        back = store.unflatten(store.flatten())
        assert back.names() == store.names()
        assert all(np.array_equal(back[k], store[k]) for k in store.names())

    def test_bad_length(self):
        with pytest.raises(ValueError):
            init_params(ModelSpec(), 0).unflatten(np.zeros(3))

    def test_mask(self):
        store = init_params(ModelSpec(ablation="fixed-fusion"), 0)
        mask = store.unflatten(store.mask(("fusion.theta",)))
        assert not mask["fusion.theta"].any() and mask["conv.0"].all()

    def test_fusion_init(self):
        assert np.array_equal(init_params(ModelSpec(), 0)["fusion.theta"], np.full(8, np.pi))

    def test_deterministic(self):
        a, b = init_params(ModelSpec(), 9), init_params(ModelSpec(), 9)
        assert np.array_equal(a.flatten(), b.flatten())


@pytest.mark.parametrize("strategy,kernel,expected", [
    ("qcmm", "SU4", {"mlp": 2192, "fusion": 8, "qcnn": 34, "total": 2234}),
    ("qcmm", "SO4", {"mlp": 2192, "fusion": 8, "qcnn": 16, "total": 2216}),
    ("classical", "SO4", {"mlp": 2192, "fusion": 136, "qcnn": 16, "total": 2344}),
    ("circuit-block", "SO4", {"mlp": 2 * 836, "fusion": 0, "qcnn": 16, "total": 1688}),
])
def test_parameter_breakdown(strategy, kernel, expected):
    assert parameter_breakdown(ModelSpec(strategy, kernel)) == expected


@pytest.mark.parametrize("strategy", ["qcmm", "all-to-all", "circuit-block", "classical"])
def test_fast_path_matches_materialized(strategy, rng):
    spec = ModelSpec(strategy, "U6")
    store = init_params(spec, 4)
    x_h, x_l = rng.normal(size=(2, 3, 8))
    fast = predict_proba(spec, store, x_h, x_l)
    rho = input_density(spec, encode(spec, store, x_h, x_l).factors)
    slow = forward_arrays(rho, spec.qcnn_config, store.qcnn(spec.qcnn_config))
    assert np.allclose(fast, slow, atol=1e-10)
