"""Patch-based time-series transformer with hybrid quantum-classical
attention, exact statevector circuit simulation, and a reverse-mode
autodiff engine."""

from .autodiff import (Tensor, activation, contract, dropout, gelu, grad_check,
                       layer_norm, relu, softmax, tanh)
from .attention import (AttentionConfig, AttentionOutput, full_attention,
                        multi_head, qcsa_attention, qcsa_scores,
                        select_attention)
from .model import (Model, ModelConfig, ModelParams, de_normalize,
                    instance_normalize, load_checkpoint, model_forward,
                    save_checkpoint)
from .patching import (PatchLayout, evaluate_patch_params, make_patches,
                       patch_embed)
from .quantum import (CircuitParams, StateVector, apply_cnot, apply_ry,
                      expect_z, init_state, qcsa_expectation,
                      qcsa_expectation_fast, qcsa_expectation_grad)
from .training import (TrainConfig, TrainHistory, anomaly_scores, classify,
                       cross_entropy_loss, detect_anomalies, mse_loss, train)

__version__ = "0.1.0"
