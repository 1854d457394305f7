"""Learnable soft codebook: fusion, hard retrieval and utilization.

Node embeddings are compared to every prototype by cosine similarity.
Soft fusion adds a similarity-weighted prototype mixture back onto the
embedding with an adaptive residual scale; hard retrieval picks the
single best prototype per row, with no gradient through the selection
but full gradient into the selected row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor

FUSION_EPS = 1e-8  # residual-scale division guard
COSINE_EPS = ad.COSINE_EPS


def _row_normalize(x: Tensor) -> Tensor:
    return ad.div(x, ad.add(ad.l2_norm(x, axis=-1, keepdims=True), Tensor(COSINE_EPS)))


def soft_fuse(g: Tensor, codebook: Tensor) -> tuple[Tensor, np.ndarray]:
    """Residual fusion of each row of ``g`` with the prototype mixture.

    Returns the fused rows and the softmax weight matrix (as plain data,
    for the utilization diagnostic).
    """
    sims = ad.matmul(_row_normalize(g), ad.transpose_last2(_row_normalize(codebook)))
    weights = ad.softmax(sims, axis=-1)
    quantized = ad.matmul(weights, codebook)
    scale = ad.div(ad.l2_norm(quantized, axis=-1, keepdims=True),
                   ad.add(ad.l2_norm(g, axis=-1, keepdims=True), Tensor(FUSION_EPS)))
    fused = ad.add(g, ad.mul(scale, quantized))
    return fused, weights.data.copy()


def retrieve(g: Tensor, codebook: Tensor) -> tuple[np.ndarray, Tensor]:
    """Most-similar prototype per row by cosine; ties go to the lowest index.

    The argmax is not differentiated; gradients flow only into the
    selected codebook rows.
    """
    g_data = g.data
    c_data = codebook.data
    g_norm = g_data / (np.linalg.norm(g_data, axis=-1, keepdims=True) + COSINE_EPS)
    c_norm = c_data / (np.linalg.norm(c_data, axis=-1, keepdims=True) + COSINE_EPS)
    sims = g_norm @ c_norm.T
    indices = sims.argmax(axis=1)
    return indices, ad.gather_rows(codebook, indices)


@dataclass
class UtilizationReport:
    mean_weights: np.ndarray  # per-prototype mean assignment weight
    utilization: float        # fraction of prototypes above the uniform level


def utilization(weights: np.ndarray) -> UtilizationReport:
    """Fraction of prototypes whose mean weight exceeds uniform 1/K."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] == 0:
        raise ContractError(f"utilization needs a non-empty 2-d weight matrix, "
                            f"got shape {weights.shape}")
    row_sums = weights.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ContractError(f"weight row {worst} sums to {row_sums[worst]}, not 1")
    k = weights.shape[1]
    mean_weights = weights.mean(axis=0)
    return UtilizationReport(
        mean_weights=mean_weights,
        utilization=float((mean_weights > 1.0 / k).mean()),
    )
