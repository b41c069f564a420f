"""Exact statevector simulation of the RY/CNOT-chain attention circuit.

The circuit applies RY(theta_i + tanh(score) * scale) to every qubit,
entangles with the chain CNOT(i, i+1), and measures <Z> on qubit 0.
Because qubit 0 only ever acts as a control, the chain commutes with Z_0
and the expectation reduces to cos(theta_0 + tanh(score) * scale); that
closed form is exposed as a fast path and used as a test oracle against
the simulator. Gradients come from the parameter-shift rule.

Qubit 0 is the most significant bit of the amplitude index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .autodiff import Tensor
from .exceptions import ParameterError

MAX_QUBITS = 12


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray  # complex128, length 2**n_qubits

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))


@dataclass
class CircuitParams:
    theta: np.ndarray  # one angle per qubit, radians
    n_qubits: int
    angle_encoding_scale: float = 1.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.n_qubits < 1:
            raise ParameterError("n_qubits must be >= 1")
        if self.theta.shape != (self.n_qubits,):
            raise ParameterError(
                f"theta must have length n_qubits={self.n_qubits}, got {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise ParameterError("theta must be finite")


def init_state(n: int) -> StateVector:
    """|0...0> on n qubits."""
    if not 1 <= n <= MAX_QUBITS:
        raise ParameterError(f"qubit count must be in [1, {MAX_QUBITS}], got {n}")
    amps = np.zeros(2 ** n, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n, amps)


def apply_ry(state: StateVector, qubit: int, angle: float) -> StateVector:
    """RY = [[cos(a/2), -sin(a/2)], [sin(a/2), cos(a/2)]] on one qubit."""
    n = state.n_qubits
    if not 0 <= qubit < n:
        raise IndexError(f"qubit {qubit} out of range for {n}-qubit state")
    c, s = np.cos(angle / 2.0), np.sin(angle / 2.0)
    psi = state.amplitudes.reshape([2] * n)
    psi = np.moveaxis(psi, qubit, -1)
    a0, a1 = psi[..., 0].copy(), psi[..., 1].copy()
    psi[..., 0] = c * a0 - s * a1
    psi[..., 1] = s * a0 + c * a1
    psi = np.moveaxis(psi, -1, qubit)
    return StateVector(n, np.ascontiguousarray(psi.reshape(-1)))


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    n = state.n_qubits
    if control == target:
        raise ParameterError("CNOT control and target must differ")
    if not (0 <= control < n and 0 <= target < n):
        raise IndexError("CNOT qubit index out of range")
    psi = state.amplitudes.reshape([2] * n).copy()
    idx0 = [slice(None)] * n
    idx1 = [slice(None)] * n
    idx0[control], idx0[target] = 1, 0
    idx1[control], idx1[target] = 1, 1
    psi[tuple(idx0)], psi[tuple(idx1)] = (psi[tuple(idx1)].copy(),
                                          psi[tuple(idx0)].copy())
    return StateVector(n, psi.reshape(-1))


def expect_z(state: StateVector, qubit: int) -> float:
    """<Z> on one qubit: P(bit 0) - P(bit 1)."""
    n = state.n_qubits
    if not 0 <= qubit < n:
        raise IndexError(f"qubit {qubit} out of range for {n}-qubit state")
    probs = np.abs(state.amplitudes) ** 2
    bit = (np.arange(2 ** n) >> (n - 1 - qubit)) & 1
    return float(np.sum(probs * np.where(bit == 0, 1.0, -1.0)))


def _run_circuit(theta: np.ndarray, n: int) -> StateVector:
    state = init_state(n)
    for i in range(n):
        state = apply_ry(state, i, theta[i])
    for i in range(n - 1):
        state = apply_cnot(state, i, i + 1)
    return state


def qcsa_expectation(params: CircuitParams, score: float) -> float:
    """<Z_0> of the score-encoded circuit, via full statevector simulation."""
    shift = np.tanh(score) * params.angle_encoding_scale
    state = _run_circuit(params.theta + shift, params.n_qubits)
    return expect_z(state, 0)


def qcsa_expectation_fast(params: CircuitParams, score) -> float | np.ndarray:
    """Closed form cos(theta_0 + tanh(score) * scale); vectorizes over score."""
    arg = params.theta[0] + np.tanh(score) * params.angle_encoding_scale
    return np.cos(arg)


def qcsa_expectation_grad(params: CircuitParams, score: float):
    """Parameter-shift gradient: (d/dtheta vector, d/dscore scalar)."""
    n = params.n_qubits
    shift = np.tanh(score) * params.angle_encoding_scale
    d_theta = np.zeros(n)
    for i in range(n):
        plus = params.theta.copy()
        plus[i] += np.pi / 2.0
        minus = params.theta.copy()
        minus[i] -= np.pi / 2.0
        e_plus = expect_z(_run_circuit(plus + shift, n), 0)
        e_minus = expect_z(_run_circuit(minus + shift, n), 0)
        d_theta[i] = (e_plus - e_minus) / 2.0
    sech2 = 1.0 - np.tanh(score) ** 2
    d_score = float(np.sum(d_theta) * sech2 * params.angle_encoding_scale)
    return d_theta, d_score


def init_circuit_theta(n_qubits: int, rng: np.random.Generator) -> np.ndarray:
    """Near-identity start: uniform angles in [-0.1, 0.1]."""
    return rng.uniform(-0.1, 0.1, size=n_qubits)


def expectation_map(scores: Tensor, theta: Tensor, scale: float,
                    backend: str = "fast") -> Tensor:
    """Differentiable elementwise circuit expectation of a score tensor.

    ``theta`` is the learnable angle vector shared across all score
    elements; gradients accumulate over every element. The fast backend
    uses the closed form, the statevector backend simulates per element
    and differentiates with the parameter-shift rule.
    """
    if backend not in ("fast", "statevector"):
        raise ParameterError(f"unknown quantum backend {backend!r}")
    s = scores.data
    th = theta.data
    if backend == "fast":
        t = np.tanh(s)
        arg = th[0] + t * scale
        out = Tensor(np.cos(arg))
        if scores._needs_graph(theta):
            def bw(g):
                neg_sin = -np.sin(arg)
                scores._accumulate(g * neg_sin * (1.0 - t * t) * scale)
                g_theta = np.zeros_like(th)
                g_theta[0] = np.sum(g * neg_sin)
                theta._accumulate(g_theta)
            out._parents, out._backward = (scores, theta), bw
        return out

    params = CircuitParams(th, th.size, scale)
    flat = s.reshape(-1)
    vals = np.array([qcsa_expectation(params, x) for x in flat])
    out = Tensor(vals.reshape(s.shape))
    if scores._needs_graph(theta):
        def bw(g):
            g_flat = g.reshape(-1)
            g_scores = np.zeros_like(flat)
            g_theta = np.zeros_like(th)
            for i, x in enumerate(flat):
                d_theta, d_score = qcsa_expectation_grad(params, x)
                g_scores[i] = g_flat[i] * d_score
                g_theta += g_flat[i] * d_theta
            scores._accumulate(g_scores.reshape(s.shape))
            theta._accumulate(g_theta)
        out._parents, out._backward = (scores, theta), bw
    return out
