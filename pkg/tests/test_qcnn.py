import numpy as np
import pytest

from qcmm import qtensor as qt
from qcmm.ansatz import conv_layer, pool_layer_dense
from qcmm.fusion import fuse
from qcmm.qcnn import (
    QcnnConfig,
    QcnnParams,
    count_parameters,
    forward_arrays,
    observables,
    product_input_probs,
    qcnn_forward,
)
from qcmm.qtensor import DensityMatrix, PureState

from conftest import random_density


def dense_forward(rho, config, params):
    """Oracle: dense conv unitaries, apply-then-trace pooling, then readout."""
    state = DensityMatrix(rho)
    for plan, conv, pool in zip(config.plans, params.conv, params.pool):
        u = conv_layer(plan, conv).matrix
        state = DensityMatrix(u @ state.data @ u.conj().T)
        state = pool_layer_dense(state, plan, pool[0], pool[1])
    if state.n_qubits > 2:
        state = qt.partial_trace(state, range(2, state.n_qubits))
    return np.real(np.diag(state.data))


class TestForward:
    def test_zero_params_ground_state(self):
        cfg = QcnnConfig("SO4")
        pred = qcnn_forward(PureState(np.eye(256)[0]), cfg, QcnnParams.zeros(cfg))
        assert np.allclose(pred.probs, [1, 0, 0, 0])
        assert pred.label == 0

    @pytest.mark.parametrize("kernel", ["SO4", "U6", "SU4"])
    def test_maximally_mixed(self, kernel, rng):
        cfg = QcnnConfig(kernel)
        params = QcnnParams.random(cfg, rng)
        for p in params.pool:
            p[:] = 0.0
        pred = qcnn_forward(DensityMatrix(np.eye(256) / 256), cfg, params)
        assert np.allclose(pred.probs, 0.25)

    @pytest.mark.parametrize("kernel", ["TTN", "U13", "SU4"])
    def test_normalization(self, kernel, rng):
        cfg = QcnnConfig(kernel)
        pred = qcnn_forward(DensityMatrix(random_density(rng, 8, 3)), cfg, QcnnParams.random(cfg, rng))
        assert abs(pred.probs.sum() - 1) <= 1e-9 and np.all(pred.probs >= -1e-12)

    @pytest.mark.parametrize("blocks", [1, 2])
    def test_matches_dense_oracle(self, blocks, rng):
        cfg = QcnnConfig("U5", blocks=blocks)
        params = QcnnParams.random(cfg, rng)
        rho = random_density(rng, 8, 2)
        assert np.allclose(forward_arrays(rho, cfg, params), dense_forward(rho, cfg, params), atol=1e-10)

    def test_fused_input_factored(self, rng):
        cfg = QcnnConfig("SO4")
        params = QcnnParams.random(cfg, rng)
        st = fuse(*rng.uniform(0, np.pi, (3, 8)))
        assert np.allclose(qcnn_forward(st, cfg, params).probs,
                           forward_arrays(st.materialize().data, cfg, params))

    def test_wrong_width(self):
        cfg = QcnnConfig()
        with pytest.raises(ValueError):
            qcnn_forward(DensityMatrix(np.eye(16) / 16), cfg, QcnnParams.zeros(cfg))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            QcnnConfig(blocks=3)


class TestHeisenberg:
    @pytest.mark.parametrize("kernel,blocks", [("SO4", 2), ("SU4", 2), ("U9", 1)])
    def test_observables_match_forward(self, kernel, blocks, rng):
        cfg = QcnnConfig(kernel, blocks=blocks)
        params = QcnnParams.random(cfg, rng)
        obs = observables(cfg, params)
        rho = random_density(rng, 8, 2)
        probs = np.real(np.einsum("kab,ba->k", obs, rho))
        assert np.allclose(probs, forward_arrays(rho, cfg, params), atol=1e-10)

    def test_product_input_probs(self, rng):
        cfg = QcnnConfig("U15")
        params = QcnnParams.random(cfg, rng)
        factors = np.stack([[random_density(rng, 1, 1).real for _ in range(8)] for _ in range(3)])
        obs = observables(cfg, params, real_inputs=True)
        got = product_input_probs(obs, factors)
        for b in range(3):
            ref = forward_arrays(qt.kron_all(factors[b]), cfg, params)
            assert np.allclose(got[b], ref, atol=1e-10)

    def test_observables_sum_to_identity(self, rng):
        cfg = QcnnConfig("U14")
        obs = observables(cfg, QcnnParams.random(cfg, rng))
        assert np.allclose(obs.sum(axis=0), np.eye(256), atol=1e-10)


class TestCounts:
    def test_su4(self):
        assert count_parameters(QcnnConfig("SU4"), 8) == {"fusion": 8, "qcnn": 34, "total_quantum": 42}

    @pytest.mark.parametrize("kernel,total", [("SO4", 24), ("U15", 20), ("TTN", 16)])
    def test_totals(self, kernel, total):
        assert count_parameters(QcnnConfig(kernel), 8)["total_quantum"] == total

    def test_random_params_shapes(self, rng):
        cfg = QcnnConfig("U6")
        p = QcnnParams.random(cfg, rng)
        assert [c.shape for c in p.conv] == [(10,), (10,)]
        assert all(np.all((x >= 0) & (x < 2 * np.pi)) for x in p.conv + p.pool)
