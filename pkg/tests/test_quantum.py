import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpatchformer.autodiff import Tensor
from qpatchformer.exceptions import ParameterError
from qpatchformer.quantum import (CircuitParams, apply_cnot, apply_ry,
                                  expect_z, expectation_map, init_state,
                                  qcsa_expectation, qcsa_expectation_fast,
                                  qcsa_expectation_grad)


class TestInitState:
    def test_one_qubit(self):
        np.testing.assert_array_equal(init_state(1).amplitudes, [1, 0])

    def test_two_qubits(self):
        np.testing.assert_array_equal(init_state(2).amplitudes, [1, 0, 0, 0])

    def test_norm(self):
        assert init_state(4).norm() == pytest.approx(1.0)

    @pytest.mark.parametrize("n", [0, 13, -1])
    def test_out_of_range(self, n):
        with pytest.raises(ParameterError):
            init_state(n)


class TestApplyRy:
    def test_pi_flips(self):
        state = apply_ry(init_state(1), 0, np.pi)
        np.testing.assert_allclose(state.amplitudes, [0, 1], atol=1e-15)

    def test_zero_is_identity(self):
        state = apply_ry(init_state(2), 1, 0.0)
        np.testing.assert_array_equal(state.amplitudes, init_state(2).amplitudes)

    def test_half_rotation(self):
        state = apply_ry(init_state(1), 0, np.pi / 2)
        np.testing.assert_allclose(state.amplitudes,
                                   [np.cos(np.pi / 4), np.sin(np.pi / 4)])

    def test_bad_index(self):
        with pytest.raises(IndexError):
            apply_ry(init_state(2), 2, 0.1)


class TestApplyCnot:
    def test_10_to_11(self):
        state = init_state(2)
        state = apply_ry(state, 0, np.pi)  # |10>
        state = apply_cnot(state, 0, 1)
        np.testing.assert_allclose(np.abs(state.amplitudes) ** 2,
                                   [0, 0, 0, 1], atol=1e-15)

    def test_00_unchanged(self):
        state = apply_cnot(init_state(2), 0, 1)
        np.testing.assert_array_equal(state.amplitudes, init_state(2).amplitudes)

    def test_involution_on_random_state(self):
        rng = np.random.default_rng(5)
        state = init_state(3)
        for q, a in enumerate(rng.uniform(0, np.pi, 3)):
            state = apply_ry(state, q, a)
        twice = apply_cnot(apply_cnot(state, 1, 2), 1, 2)
        np.testing.assert_allclose(twice.amplitudes, state.amplitudes, atol=1e-14)

    def test_equal_indices_rejected(self):
        with pytest.raises(ParameterError):
            apply_cnot(init_state(2), 1, 1)


class TestExpectZ:
    def test_zero_state(self):
        assert expect_z(init_state(1), 0) == pytest.approx(1.0)

    def test_one_state(self):
        state = apply_ry(init_state(1), 0, np.pi)
        assert expect_z(state, 0) == pytest.approx(-1.0)

    def test_equator(self):
        state = apply_ry(init_state(1), 0, np.pi / 2)
        assert abs(expect_z(state, 0)) <= 1e-14


class TestCircuitExpectation:
    def test_zero_angles(self):
        params = CircuitParams(np.zeros(4), 4)
        assert qcsa_expectation(params, 0.0) == pytest.approx(1.0)

    def test_first_qubit_pi(self):
        theta = np.zeros(4)
        theta[0] = np.pi
        params = CircuitParams(theta, 4)
        assert qcsa_expectation(params, 0.0) == pytest.approx(-1.0)

    def test_analytic_oracle_1000_random(self):
        # Z on qubit 0 commutes with the CNOT chain (qubit 0 only controls),
        # so <Z_0> = cos(theta_0 + tanh(score) * scale).
        rng = np.random.default_rng(0)
        for _ in range(1000):
            theta = rng.uniform(-np.pi, np.pi, 4)
            score = rng.normal() * 3
            scale = rng.uniform(0.1, 2.0)
            params = CircuitParams(theta, 4, scale)
            expected = np.cos(theta[0] + np.tanh(score) * scale)
            assert abs(qcsa_expectation(params, score) - expected) <= 1e-12

    def test_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            params = CircuitParams(rng.uniform(-10, 10, 3), 3,
                                   rng.uniform(0, 5))
            val = qcsa_expectation(params, rng.normal() * 10)
            assert -1.0 <= val <= 1.0

    def test_norm_preserved_through_gates(self):
        rng = np.random.default_rng(2)
        state = init_state(5)
        for _ in range(20):
            state = apply_ry(state, int(rng.integers(5)), rng.normal())
            q = int(rng.integers(4))
            state = apply_cnot(state, q, q + 1)
            assert abs(state.norm() - 1.0) <= 1e-12


class TestFastPath:
    def test_matches_simulator(self):
        rng = np.random.default_rng(3)
        for n in (1, 2, 4, 6):
            for _ in range(50):
                params = CircuitParams(rng.uniform(-np.pi, np.pi, n), n,
                                       rng.uniform(0.1, 2.0))
                score = rng.normal()
                assert abs(qcsa_expectation_fast(params, score)
                           - qcsa_expectation(params, score)) <= 1e-12

    def test_identity_circuit(self):
        params = CircuitParams(np.zeros(2), 2)
        assert qcsa_expectation_fast(params, 0.0) == pytest.approx(1.0)

    def test_quarter_turn(self):
        params = CircuitParams(np.array([np.pi / 2, 0.0]), 2)
        assert abs(qcsa_expectation_fast(params, 0.0)) <= 1e-15


class TestParameterShift:
    def test_zero_angles_zero_grad(self):
        params = CircuitParams(np.zeros(3), 3)
        d_theta, _ = qcsa_expectation_grad(params, 0.0)
        assert d_theta[0] == pytest.approx(0.0, abs=1e-12)

    def test_cosine_derivative(self):
        theta = np.zeros(3)
        theta[0] = np.pi / 2
        params = CircuitParams(theta, 3)
        d_theta, _ = qcsa_expectation_grad(params, 0.0)
        assert d_theta[0] == pytest.approx(-1.0, abs=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        h = 1e-6
        for _ in range(20):
            n = int(rng.integers(1, 5))
            theta = rng.uniform(-np.pi, np.pi, n)
            scale = rng.uniform(0.1, 2.0)
            score = rng.normal()
            params = CircuitParams(theta, n, scale)
            d_theta, d_score = qcsa_expectation_grad(params, score)
            for i in range(n):
                plus, minus = theta.copy(), theta.copy()
                plus[i] += h
                minus[i] -= h
                fd = (qcsa_expectation(CircuitParams(plus, n, scale), score)
                      - qcsa_expectation(CircuitParams(minus, n, scale), score)) / (2 * h)
                assert abs(d_theta[i] - fd) <= 1e-6
            fd_s = (qcsa_expectation(params, score + h)
                    - qcsa_expectation(params, score - h)) / (2 * h)
            assert abs(d_score - fd_s) <= 1e-6


class TestExpectationMap:
    @pytest.mark.parametrize("backend", ["fast", "statevector"])
    def test_backends_agree(self, backend):
        rng = np.random.default_rng(6)
        scores = Tensor(rng.normal(size=(2, 3)))
        theta = Tensor(rng.uniform(-1, 1, 3))
        out = expectation_map(scores, theta, 0.7, backend)
        want = np.cos(theta.data[0] + np.tanh(scores.data) * 0.7)
        np.testing.assert_allclose(out.data, want, atol=1e-12)

    @pytest.mark.parametrize("backend", ["fast", "statevector"])
    def test_gradients(self, backend):
        from qpatchformer.autodiff import grad_check
        rng = np.random.default_rng(7)
        scores = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        theta = Tensor(rng.uniform(-1, 1, 2), requires_grad=True)
        err = grad_check(
            lambda s, t: (expectation_map(s, t, 0.9, backend) ** 2).sum(),
            [scores, theta], h=1e-5)
        assert err <= 1e-4

    def test_unknown_backend(self):
        with pytest.raises(ParameterError):
            expectation_map(Tensor([0.0]), Tensor([0.0]), 1.0, "noisy")
