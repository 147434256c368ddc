"""Orthonormal type-II cosine transform along the temporal axis.

Rows of the input are coordinate channels, columns are frames; the
transform projects each row onto cosine components.  With orthonormal
scaling the inverse is the transpose, so both directions are plain
matrix products and therefore exactly differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, as_tensor, matmul


@dataclass(frozen=True)
class DctBasis:
    size: int
    matrix: np.ndarray  # (size, size), rows are cosine components


def dct_basis(size: int) -> DctBasis:
    if size < 1:
        raise ConfigurationError(f"basis size must be positive, got {size}")
    k = np.arange(size, dtype=np.float64)[:, None]
    t = np.arange(size, dtype=np.float64)[None, :]
    matrix = np.sqrt(2.0 / size) * np.cos(np.pi * (t + 0.5) * k / size)
    matrix[0] *= np.sqrt(0.5)  # constant row becomes 1/sqrt(size)
    matrix.setflags(write=False)
    return DctBasis(size, matrix)


def _check_size(x: Tensor, basis: DctBasis, op: str):
    if x.shape[-1] != basis.size:
        raise DimensionError(
            f"{op}: trailing axis has {x.shape[-1]} frames but basis size is {basis.size}")


def dct(x, basis: DctBasis) -> Tensor:
    """Pose-space rows -> frequency coefficients: x @ basis^T."""
    x = as_tensor(x)
    _check_size(x, basis, "dct")
    return matmul(x, Tensor(basis.matrix.T))


def idct(coeffs, basis: DctBasis) -> Tensor:
    """Frequency coefficients -> pose-space rows: exact inverse of dct."""
    coeffs = as_tensor(coeffs)
    _check_size(coeffs, basis, "idct")
    return matmul(coeffs, Tensor(basis.matrix))
