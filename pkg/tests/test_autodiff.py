import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpatchformer.autodiff import (Tensor, activation, contract, dropout, gelu,
                                   grad_check, layer_norm, relu, softmax, tanh)
from qpatchformer.exceptions import DimensionError, GraphError, ParameterError


def naive_contract(a, b, spec):
    """Nested-loop einsum oracle, independent of the optimized path."""
    inputs, out_spec = spec.split("->")
    a_spec, b_spec = inputs.split(",")
    dims = {}
    for letters, arr in ((a_spec, a), (b_spec, b)):
        for letter, size in zip(letters, arr.shape):
            dims[letter] = size
    out = np.zeros([dims[c] for c in out_spec])
    summed = [c for c in dims if c not in out_spec]

    def rec(assign, letters):
        if not letters:
            a_idx = tuple(assign[c] for c in a_spec)
            b_idx = tuple(assign[c] for c in b_spec)
            o_idx = tuple(assign[c] for c in out_spec)
            out[o_idx] += a[a_idx] * b[b_idx]
            return
        c = letters[0]
        for v in range(dims[c]):
            assign[c] = v
            rec(assign, letters[1:])

    rec({}, out_spec + "".join(summed))
    return out


class TestContract:
    def test_matrix_product_of_ones(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.ones((3, 4)))
        out = contract(a, b, "ij,jk->ik")
        assert out.shape == (2, 4)
        np.testing.assert_allclose(out.data, 3.0)

    def test_attention_score_shape(self):
        q = Tensor(np.ones((1, 2, 1, 2)))
        k = Tensor(np.ones((1, 2, 1, 2)))
        out = contract(q, k, "blhe,bshe->bhls")
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_allclose(out.data, 2.0)

    def test_random_4axis_vs_nested_loop_oracle(self):
        rng = np.random.default_rng(42)
        for spec in ["abcd,aecd->abe", "blhe,bshe->bhls", "bnd,de->bne"]:
            inputs, _ = spec.split("->")
            a_spec, b_spec = inputs.split(",")
            dims = {c: int(rng.integers(2, 6)) for c in set(a_spec + b_spec)}
            a = rng.normal(size=[dims[c] for c in a_spec])
            b = rng.normal(size=[dims[c] for c in b_spec])
            got = contract(Tensor(a), Tensor(b), spec).data
            want = naive_contract(a, b, spec)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            contract(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))), "ij,jk->ik")

    def test_unmatched_index_rejected(self):
        with pytest.raises(DimensionError):
            contract(Tensor(np.ones((2, 3))), Tensor(np.ones((3,))), "ij,j->j")


class TestSoftmax:
    def test_symmetry(self):
        out = softmax(Tensor([0.0, 0.0]), axis=-1)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_masked_element(self):
        out = softmax(Tensor([-np.inf, 0.0]), axis=-1)
        np.testing.assert_allclose(out.data, [0.0, 1.0])

    def test_extended_precision_oracle(self):
        import mpmath
        mpmath.mp.dps = 50
        xs = [1, 2, 3]
        exps = [mpmath.e ** x for x in xs]
        total = sum(exps)
        want = np.array([float(e / total) for e in exps])
        got = softmax(Tensor([1.0, 2.0, 3.0]), axis=-1).data
        np.testing.assert_allclose(got, want, atol=1e-14)

    def test_all_minus_inf_slice_errors(self):
        with pytest.raises(ParameterError):
            softmax(Tensor([-np.inf, -np.inf]), axis=-1)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    @settings(max_examples=100, deadline=None)
    def test_rows_nonnegative_sum_to_one(self, values):
        out = softmax(Tensor(values), axis=-1).data
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-12


class TestLayerNorm:
    def test_constant_slice_collapses_to_beta(self):
        out = layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(1.0), Tensor(0.0),
                         axis=-1, eps=1e-12)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_point_standardization(self):
        out = layer_norm(Tensor([1.0, 3.0]), Tensor(1.0), Tensor(0.0),
                         axis=-1, eps=1e-14)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-6)

    def test_mean_var_against_direct_computation(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 7))
        out = layer_norm(Tensor(x), Tensor(np.ones(7)), Tensor(np.zeros(7)),
                         axis=-1, eps=1e-12).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-10)

    def test_bad_eps(self):
        with pytest.raises(ParameterError):
            layer_norm(Tensor([1.0]), Tensor(1.0), Tensor(0.0), eps=0.0)


class TestActivations:
    def test_relu_values(self):
        out = activation(Tensor([-1.0, 2.0]), "relu")
        np.testing.assert_allclose(out.data, [0.0, 2.0])

    def test_gelu_zero(self):
        assert gelu(Tensor([0.0])).data[0] == 0.0

    def test_gelu_one_matches_formula(self):
        import mpmath
        mpmath.mp.dps = 50
        c = mpmath.mpf("0.7978845608")
        x = mpmath.mpf(1)
        want = float(0.5 * x * (1 + mpmath.tanh(c * (x + mpmath.mpf("0.044715") * x ** 3))))
        got = gelu(Tensor([1.0])).data[0]
        assert abs(got - want) <= 1e-12

    def test_tanh(self):
        np.testing.assert_allclose(tanh(Tensor([0.5])).data, np.tanh(0.5))

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            activation(Tensor([1.0]), "swish")


class TestDropout:
    def test_p_zero_identity(self):
        x = Tensor(np.arange(5.0))
        out = dropout(x, 0.0, np.random.default_rng(0), training=True)
        np.testing.assert_array_equal(out.data, x.data)

    def test_eval_mode_identity(self):
        x = Tensor(np.arange(5.0))
        out = dropout(x, 0.9, np.random.default_rng(0), training=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_survivor_statistics(self):
        rng = np.random.default_rng(7)
        x = Tensor(np.ones(100_000))
        out = dropout(x, 0.5, rng, training=True).data
        survivors = np.count_nonzero(out) / out.size
        assert abs(survivors - 0.5) <= 0.01
        assert abs(out.mean() - 1.0) <= 0.02

    def test_p_one_rejected(self):
        with pytest.raises(ParameterError):
            dropout(Tensor([1.0]), 1.0, np.random.default_rng(0))


class TestBackward:
    def test_sum_grad_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4)),
                   requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            (x * x).backward()

    def test_second_backward_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    @pytest.mark.parametrize("op_name,f", [
        ("contract", lambda x: contract(x, Tensor(np.linspace(0.1, 1, 12).reshape(4, 3)), "ij,jk->ik").sum()),
        ("softmax", lambda x: (softmax(x, axis=-1) * Tensor(np.arange(12.0).reshape(3, 4))).sum()),
        ("layer_norm", lambda x: (layer_norm(x, Tensor(np.full(4, 1.3)), Tensor(np.full(4, 0.2)), eps=1e-5) ** 2).sum()),
        ("relu", lambda x: (relu(x) * relu(x)).sum()),
        ("gelu", lambda x: (gelu(x) ** 2).sum()),
        ("tanh", lambda x: (tanh(x) ** 2).sum()),
        ("mean", lambda x: (x.mean() ** 2).sum()),
        ("transpose", lambda x: (x.transpose((1, 0)) ** 3).sum()),
    ])
    def test_op_gradients_match_finite_differences(self, op_name, f):
        rng = np.random.default_rng(hash(op_name) % 2 ** 31)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        assert grad_check(f, [x], h=1e-5) <= 1e-4


class TestGradCheck:
    def test_linear_is_exact(self):
        x = Tensor(np.random.default_rng(1).normal(size=(5,)))
        assert grad_check(lambda t: t.sum(), [x], h=1e-5) <= 1e-10

    def test_softmax_sum_constant(self):
        x = Tensor(np.random.default_rng(2).normal(size=(6,)))
        assert grad_check(lambda t: softmax(t, axis=-1).sum(), [x], h=1e-5) <= 1e-6


class TestDeterminism:
    def test_forward_deterministic_under_seed(self):
        def run():
            rng = np.random.default_rng(11)
            x = Tensor(np.linspace(-1, 1, 10))
            return dropout(gelu(x), 0.3, rng, training=True).data
        np.testing.assert_array_equal(run(), run())
