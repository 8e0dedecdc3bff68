"""Subspace kernels over spatial maps and FNC vectors.

The similarity between two subjects' selected spatial maps is the sum of
the cosines of the principal angles between their component subspaces,
passed through a tanh: K(U, V) = tanh(gamma * sum_k sigma_k), where the
sigma_k are the singular values of U^T V for column-orthonormal U, V.
Maps are orthonormalized first so the singular values are genuine cosines
(bounded by 1); without that step the sum is not a subspace metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import SubjectFeatures, as_matrix
from .fnc import fisher_z

SPECTRUM_FIXES = ("none", "clip", "ridge")


class RankDeficiencyError(ValueError):
    """Selected spatial-map rows do not span a full-rank subspace."""


@dataclass(frozen=True)
class PabsKernelParams:
    """Kernel hyperparameters.

    gamma scales the subspace similarity (1.0 matches the reference setup);
    combine_weight w blends w * K_maps + (1 - w) * K_fnc when FNC features
    are enabled. The tanh kernel is generally indefinite, so `spectrum_fix`
    selects how training kernels are repaired: "clip" zeroes negative
    eigenvalues, "ridge" adds ridge_lambda to the diagonal, "none" passes
    the matrix through.
    """

    gamma: float = 1.0
    fnc_gamma: float = 1.0
    combine_weight: float = 0.5
    spectrum_fix: str = "clip"
    ridge_lambda: float = 1e-6

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.fnc_gamma > 0:
            raise ValueError(f"fnc_gamma must be positive, got {self.fnc_gamma}")
        if not 0.0 <= self.combine_weight <= 1.0:
            raise ValueError(f"combine_weight must be in [0, 1], got {self.combine_weight}")
        if self.spectrum_fix not in SPECTRUM_FIXES:
            raise ValueError(
                f"spectrum_fix must be one of {SPECTRUM_FIXES}, got {self.spectrum_fix!r}"
            )
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric N x N subject-similarity matrix with row/column ids."""

    values: np.ndarray
    subject_ids: tuple[str, ...]

    def __post_init__(self):
        values = as_matrix(self.values, "kernel")
        n = values.shape[0]
        if values.shape != (n, n):
            raise ValueError(f"kernel must be square, got {values.shape}")
        if len(self.subject_ids) != n:
            raise ValueError("subject_ids length must match kernel size")
        if np.abs(values - values.T).max() > 1e-12:
            raise ValueError("kernel is not symmetric")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))


def orthonormalize(maps_subset, rcond: float = 1e-10) -> np.ndarray:
    """Column-orthonormal V x K basis spanning the rows of a K x V map subset.

    Raises RankDeficiencyError when the rows are (numerically) dependent.
    """
    maps_subset = as_matrix(maps_subset, "map subset")
    u, s, _ = np.linalg.svd(maps_subset.T, full_matrices=False)
    if s[0] <= 0 or s[-1] <= rcond * s[0]:
        raise RankDeficiencyError(
            f"map subset of {maps_subset.shape[0]} rows has numerical rank "
            f"{int((s > rcond * s[0]).sum())}"
        )
    return u


def pabs_similarity(a, b) -> float:
    """Sum of principal-angle cosines between two orthonormal bases."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"basis shapes differ: {a.shape} vs {b.shape}")
    s = np.linalg.svd(a.T @ b, compute_uv=False)
    return float(s.sum())


def pabs_kernel(a, b, params: PabsKernelParams) -> float:
    return float(np.tanh(params.gamma * pabs_similarity(a, b)))


def fnc_kernel(a, b, params: PabsKernelParams) -> float:
    """tanh of the scaled cosine similarity between two FNC vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"FNC vectors must be equal-length, got {a.shape}, {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= 0.0 or nb <= 0.0:
        raise ValueError("FNC kernel undefined for a zero-norm vector")
    return float(np.tanh(params.fnc_gamma * (a @ b) / (na * nb)))


def apply_spectrum_fix(matrix, params: PabsKernelParams) -> np.ndarray:
    """Repair an (indefinite) symmetric kernel according to params.spectrum_fix."""
    m = as_matrix(matrix, "kernel")
    if params.spectrum_fix == "none":
        return m.copy()
    if params.spectrum_fix == "ridge":
        return m + params.ridge_lambda * np.eye(m.shape[0])
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    fixed = (v * w) @ v.T
    return (fixed + fixed.T) / 2.0


def build_kernel_matrix(
    features: list[SubjectFeatures],
    selected,
    params: PabsKernelParams,
    use_fnc: bool = False,
    subject_ids=None,
) -> KernelMatrix:
    """Assemble the N x N kernel over subjects from selected components.

    Each subject's selected spatial-map rows are orthonormalized and compared
    pairwise with the PABS tanh kernel. With `use_fnc`, the Fisher-z upper
    triangle of each subject's FNC restricted to the selected components
    feeds a cosine tanh kernel, and the two are blended by combine_weight;
    a single-component selection has no connectivity pairs, so the map
    kernel stands alone in that case. Entries are computed once per (i, j)
    pair, so symmetry is exact; the spectrum fix from `params` is applied
    to the assembled matrix.
    """
    n = len(features)
    if n == 0:
        raise ValueError("no subjects")
    selected = [int(i) for i in selected]
    if len(set(selected)) != len(selected):
        raise ValueError(f"selected components must be distinct: {selected}")
    k = features[0].n_components
    v = features[0].spatial_maps.shape[1]
    for idx in selected:
        if not 0 <= idx < k:
            raise ValueError(f"component index {idx} out of range [0, {k})")
    if subject_ids is None:
        subject_ids = tuple(f"s{i:04d}" for i in range(n))

    bases = []
    for i, f in enumerate(features):
        if f.spatial_maps.shape != (k, v):
            raise ValueError(f"subject {i}: spatial map shape mismatch")
        try:
            bases.append(orthonormalize(f.spatial_maps[selected, :]))
        except RankDeficiencyError as e:
            raise RankDeficiencyError(
                f"subject {subject_ids[i]}, components {selected}: {e}"
            ) from e

    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            values[i, j] = values[j, i] = pabs_kernel(bases[i], bases[j], params)

    if use_fnc and len(selected) >= 2:
        sub = np.ix_(selected, selected)
        vecs = []
        for i, f in enumerate(features):
            if f.fnc is None:
                raise ValueError(f"subject {subject_ids[i]}: FNC not computed")
            vecs.append(fisher_z(f.fnc[sub]))
        fvals = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                fvals[i, j] = fvals[j, i] = fnc_kernel(vecs[i], vecs[j], params)
        w = params.combine_weight
        values = w * values + (1.0 - w) * fvals

    return KernelMatrix(apply_spectrum_fix(values, params), tuple(subject_ids))
