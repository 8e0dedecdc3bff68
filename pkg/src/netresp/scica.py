"""Spatially constrained ICA: one anchored unit per template component.

Each template row seeds a one-unit fixed-point ICA iteration (negentropy
contrast) augmented with a penalty pulling the unit's output map toward
positive correlation with its reference. Units are not orthogonalized
against each other, so constrained components may correlate; each one is
identified by its own reference, not by deflation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import derive_seed, parallel_map
from .datamodel import SubjectFeatures, Template, as_matrix

NONLINEARITIES = ("tanh", "gauss", "cube")


class ZeroVarianceVoxelError(ValueError):
    """A voxel has no variance over time, so it cannot be normalized."""


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class ScicaConfig:
    max_iters: int = 500
    tol: float = 1e-6
    constraint_weight: float = 1.0
    nonlinearity: str = "tanh"
    pca_retained: int | None = None  # None: match the template's K

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.constraint_weight < 0:
            raise ValueError("constraint_weight must be non-negative")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(
                f"nonlinearity must be one of {NONLINEARITIES}, got {self.nonlinearity!r}"
            )
        if self.pca_retained is not None and self.pca_retained < 1:
            raise ValueError("pca_retained must be at least 1")


@dataclass(frozen=True)
class WhitenedData:
    """Whitened spatial views of one subject's bold run.

    `whitened` rows are zero-mean, unit-variance and mutually uncorrelated
    over voxels; `mixing_back @ whitened` reconstructs the normalized,
    row-centered bold up to PCA truncation.
    """

    whitened: np.ndarray  # (R, V)
    mixing_back: np.ndarray  # (T, R)
    voxel_means: np.ndarray
    voxel_stds: np.ndarray


def _apply_contrast(name: str, y: np.ndarray) -> tuple[np.ndarray, float]:
    """g(y) and the mean of g'(y) for the chosen contrast."""
    if name == "tanh":
        gy = np.tanh(y)
        return gy, float(np.mean(1.0 - gy * gy))
    if name == "gauss":
        e = np.exp(-0.5 * y * y)
        return y * e, float(np.mean((1.0 - y * y) * e))
    return y**3, float(np.mean(3.0 * y * y))


def preprocess_subject(bold, pca_retained: int | None = None) -> WhitenedData:
    """Normalize voxel amplitudes, center, and whiten to `pca_retained` rows.

    Each voxel's time series is z-scored (population convention), each
    timepoint's mean over voxels removed, then the rows are rotated and
    scaled so their sample covariance over voxels is the identity.
    """
    bold = as_matrix(bold, "bold")
    t, v = bold.shape
    if t < 2:
        raise ValueError("bold needs at least 2 timepoints")
    r = min(t - 1, v) if pca_retained is None else int(pca_retained)
    if not 1 <= r <= min(t - 1, v):
        raise ValueError(
            f"pca_retained={r} must be in [1, min(T-1, V)] = [1, {min(t - 1, v)}]"
        )
    mu = bold.mean(axis=0)
    sd = bold.std(axis=0)
    dead = np.flatnonzero(sd <= 1e-12 * max(sd.max(), 1e-300))
    if dead.size:
        raise ZeroVarianceVoxelError(
            f"zero-variance voxels (first few): {dead[:8].tolist()}"
        )
    xz = (bold - mu) / sd
    xc = xz - xz.mean(axis=1, keepdims=True)
    cov = xc @ xc.T / v
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:r]
    lam = evals[order]
    if lam[-1] <= 1e-12 * max(lam[0], 1e-300):
        raise RankError(
            f"data rank below pca_retained={r}: eigenvalue {lam[-1]:.3e}"
        )
    e = evecs[:, order]
    whitened = (e / np.sqrt(lam)).T @ xc
    mixing_back = e * np.sqrt(lam)
    return WhitenedData(
        whitened=whitened, mixing_back=mixing_back, voxel_means=mu, voxel_stds=sd
    )


DAMPING = 0.3


def constrained_unit_update(w, whitened, reference_projected, cfg: ScicaConfig) -> np.ndarray:
    """One damped constrained fixed-point step for a unit-norm weight vector.

    The negentropy fixed-point direction (sign-aligned with the incoming
    weight so the iteration cannot oscillate between antipodes) is applied
    as a damped displacement on the unit sphere and combined with the
    spherical gradient of the output's correlation with the reference,
    weighted by constraint_weight:

        w_next = normalize(w + DAMPING * (fp_hat - w) + mu * (b - <w, b> w))

    Damping keeps the same fixed points as the raw fixed-point map while
    making the constrained iteration a contraction; the constraint term
    vanishes exactly when the output is fully aligned with the reference,
    so an aligned fixed point is returned unchanged. A degenerate
    zero-length update falls back to the incoming weight.
    """
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(reference_projected, dtype=np.float64)
    v = whitened.shape[1]
    y = w @ whitened
    gy, gp_mean = _apply_contrast(cfg.nonlinearity, y)
    w_fp = whitened @ gy / v - gp_mean * w
    if w_fp @ w < 0:
        w_fp = -w_fp
    n_fp = np.linalg.norm(w_fp)
    rho = float(w @ b)
    step = cfg.constraint_weight * (b - rho * w)
    if n_fp > 1e-12:
        step = step + DAMPING * (w_fp / n_fp - w)
    w_next = w + step
    norm = np.linalg.norm(w_next)
    if norm < 1e-12:
        return w.copy()
    return w_next / norm


def _reference_projection(whitened: np.ndarray, ref_scaled: np.ndarray) -> np.ndarray:
    """Vector b with corr(w @ whitened, reference) = <w, b> for unit w."""
    v = whitened.shape[1]
    rc = ref_scaled - ref_scaled.mean()
    nrm = np.linalg.norm(rc)
    if nrm <= 0:
        return np.zeros(whitened.shape[0])
    return whitened @ rc / (np.sqrt(v) * nrm)


def extract_subject(
    bold, template: Template, cfg: ScicaConfig, seed: int = 0
) -> SubjectFeatures:
    """Recover one spatial map and time course per template component.

    The unit for component k is initialized from the whitening-space
    projection of template row k and iterated with
    :func:`constrained_unit_update` until |<w_new, w_old>| > 1 - tol or
    max_iters is reached (non-convergence sets the per-component flag,
    it is not an error). Output maps are expressed in data units (the
    voxel normalization is undone), z-scored over voxels and sign-aligned
    to the template; time courses come from least-squares regression of
    the normalized bold onto the maps. Deterministic given the seed, which
    only matters for the degenerate case of a reference with no energy in
    the retained subspace.
    """
    bold = as_matrix(bold, "bold")
    t, v = bold.shape
    if v != template.n_voxels:
        raise ValueError(f"bold has {v} voxels, template has {template.n_voxels}")
    k = template.n_components
    r = cfg.pca_retained if cfg.pca_retained is not None else min(k, t - 1, v)
    wd = preprocess_subject(bold, r)
    w_data = wd.whitened
    sd = wd.voxel_stds

    maps = np.zeros((k, v))
    converged = np.zeros(k, dtype=bool)
    rng = np.random.default_rng(derive_seed(seed, "scica-degenerate"))
    for comp in range(k):
        ref = template.maps[comp]
        b = _reference_projection(w_data, ref / sd)
        nb = np.linalg.norm(b)
        if nb > 1e-8:
            w = b / nb
        else:
            w = rng.standard_normal(w_data.shape[0])
            w /= np.linalg.norm(w)
        for _ in range(cfg.max_iters):
            w_new = constrained_unit_update(w, w_data, b, cfg)
            done = abs(float(w_new @ w)) > 1.0 - cfg.tol
            w = w_new
            if done:
                converged[comp] = True
                break
        y = w @ w_data
        m = y * sd  # back to data units so map shapes match the references
        m = m - m.mean()
        m_sd = m.std()
        if m_sd > 0:
            m = m / m_sd
        ref_c = ref - ref.mean()
        if float(m @ ref_c) < 0:
            m = -m
        maps[comp] = m

    xz = (bold - wd.voxel_means) / sd
    tc, *_ = np.linalg.lstsq(maps.T, xz.T, rcond=None)
    return SubjectFeatures(
        spatial_maps=maps, time_courses=tc.T, converged=converged
    )


def extract_cohort(
    subjects_bold,
    template: Template,
    cfg: ScicaConfig,
    seed: int = 0,
    threads: int = 1,
) -> list[SubjectFeatures]:
    """Extract features for a list of bold matrices, in input order.

    Subjects run independently (optionally in parallel) with per-subject
    seeds derived from `seed`.
    """
    items = list(enumerate(subjects_bold))

    def one(item):
        idx, bold = item
        return extract_subject(bold, template, cfg, seed=derive_seed(seed, "subject", idx))

    return parallel_map(one, items, threads)
