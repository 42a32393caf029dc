"""Residual linear propagation ``E <- E + P E`` and its adjoint."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class PropagationTrace:
    layer_outputs: list[np.ndarray]
    operator: sp.csr_matrix
    _transpose: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def layers(self) -> int:
        return len(self.layer_outputs) - 1

    @property
    def output(self) -> np.ndarray:
        return self.layer_outputs[-1]

    @property
    def transpose(self) -> sp.csr_matrix:
        if self._transpose is None:
            self._transpose = self.operator.T.tocsr()
        return self._transpose


def propagate(operator: sp.spmatrix, embeddings: np.ndarray, layers: int) -> PropagationTrace:
    """Run ``layers`` steps of ``E^{t+1} = E^t + operator @ E^t``."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or operator.shape != (x.shape[0], x.shape[0]):
        raise ValueError(
            f"operator shape {operator.shape} incompatible with embeddings {x.shape}"
        )
    op = sp.csr_matrix(operator)
    outputs = [x]
    for _ in range(layers):
        x = x + op @ x
        outputs.append(x)
    return PropagationTrace(outputs, op)


def backpropagate(trace: PropagationTrace, grad_output: np.ndarray) -> np.ndarray:
    """Pull a gradient at the last layer back to the input: ``(I + P^T)^L g``."""
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise ValueError(f"gradient shape {g.shape} != output shape {trace.output.shape}")
    opT = trace.transpose
    for _ in range(trace.layers):
        g = g + opT @ g
    return g
