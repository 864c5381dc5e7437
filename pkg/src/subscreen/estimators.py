"""Subspace estimators and the split moment proxies feeding the screener.

Per-source moments are computed on two disjoint halves of each sample so
that cross products of the halves are unbiased for the signal outer
product without a squared-noise term on the diagonal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .simulate import SourceDataset

EIGEN_GAP_TOL = 1e-12


@dataclass
class MomentProxies:
    """Stacked split moments of a population.

    ``a_hat`` is the entrywise sum of the two half matrices; ``z_hat`` the
    unweighted sum of cross outer products; ``z_scaled`` its sample-size
    weighted average.
    """

    zbar: np.ndarray       # d x M
    ztilde: np.ndarray     # d x M
    a_hat: np.ndarray      # d x M
    z_hat: np.ndarray      # d x d
    z_scaled: np.ndarray   # d x d
    sample_sizes: np.ndarray

    @property
    def num_sources(self) -> int:
        return self.zbar.shape[1]


@dataclass
class SubspaceEstimate:
    basis: np.ndarray      # d x k, orthonormal columns
    spectrum: np.ndarray   # k leading eigenvalue magnitudes, nonincreasing
    estimator_name: str


def local_moment_split(ds: SourceDataset) -> tuple[np.ndarray, np.ndarray]:
    """Average response-weighted covariates over the two sample halves.

    Odd counts put the extra row in the second half; each half is averaged
    with its own size so both stay unbiased for the weighted signal.
    """
    n = ds.num_samples
    if n < 2:
        raise ValueError("moment split needs at least two samples")
    half = n // 2
    yx = ds.responses[:, None] * ds.covariates
    zbar = yx[:half].sum(axis=0) / half
    ztilde = yx[half:].sum(axis=0) / (n - half)
    return zbar, ztilde


def build_moment_proxies(sources: list[SourceDataset]) -> MomentProxies:
    """Assemble the split-moment matrices for a population."""
    if len(sources) < 1:
        raise ValueError("need at least one source")
    d = sources[0].covariates.shape[1]
    m = len(sources)
    zbar = np.zeros((d, m))
    ztilde = np.zeros((d, m))
    sizes = np.zeros(m)
    for j, ds in enumerate(sources):
        zbar[:, j], ztilde[:, j] = local_moment_split(ds)
        sizes[j] = ds.num_samples
    z_hat = zbar @ ztilde.T
    z_scaled = (zbar * sizes) @ ztilde.T / sizes.sum()
    return MomentProxies(zbar=zbar, ztilde=ztilde, a_hat=zbar + ztilde,
                         z_hat=z_hat, z_scaled=z_scaled, sample_sizes=sizes)


def _top_k_eigvecs(sym: np.ndarray, k: int, name: str) -> tuple[np.ndarray, np.ndarray]:
    """Top-k eigenvectors by absolute eigenvalue with a stable tie-break."""
    eigvals, eigvecs = np.linalg.eigh(sym)
    order = np.argsort(-np.abs(eigvals), kind="stable")
    mags = np.abs(eigvals[order])
    if sym.shape[0] > k and mags[k - 1] - mags[k] <= EIGEN_GAP_TOL:
        warnings.warn(
            f"{name}: degenerate eigen-gap at position {k}; "
            "basis chosen by deterministic index tie-break", RuntimeWarning)
    keep = order[:k]
    return eigvecs[:, keep], mags[:k]


def split_averaging_estimate(sources: list[SourceDataset], k: int) -> SubspaceEstimate:
    """Basis from the symmetrized weighted sum of split cross products.

    The cross product of independent halves is unbiased for the weighted
    signal outer product, so its symmetric part carries the shared span.
    """
    proxies = build_moment_proxies(sources)
    return split_averaging_from_proxies(proxies, k)


def split_averaging_from_proxies(proxies: MomentProxies, k: int) -> SubspaceEstimate:
    d = proxies.zbar.shape[0]
    if k > d:
        raise ValueError(f"k={k} exceeds the ambient dimension {d}")
    sym = (proxies.z_scaled + proxies.z_scaled.T) / 2.0
    basis, spectrum = _top_k_eigvecs(sym, k, "split_averaging")
    return SubspaceEstimate(basis=basis, spectrum=spectrum, estimator_name="split_averaging")


def mom_estimate(sources: list[SourceDataset], k: int) -> SubspaceEstimate:
    """Basis from the pooled squared-response second moment.

    The isotropic additive part contributed by noise shifts every
    eigenvalue equally and leaves the leading eigenvectors unchanged, so no
    shift correction is applied.
    """
    if len(sources) < 1:
        raise ValueError("need at least one source")
    d = sources[0].covariates.shape[1]
    if k > d:
        raise ValueError(f"k={k} exceeds the ambient dimension {d}")
    w = np.zeros((d, d))
    total = 0
    for ds in sources:
        w += (ds.covariates * (ds.responses ** 2)[:, None]).T @ ds.covariates
        total += ds.num_samples
    w /= total
    basis, spectrum = _top_k_eigvecs(w, k, "mom")
    return SubspaceEstimate(basis=basis, spectrum=spectrum, estimator_name="mom")


def dfht_estimate(sources: list[SourceDataset], k: int) -> SubspaceEstimate:
    """Reserved slot for an external spectral estimator plugin."""
    raise NotImplementedError(
        "the dfht estimator is a named slot without an implementation; "
        "choose split_averaging or mom")


ESTIMATORS = {
    "split_averaging": split_averaging_estimate,
    "mom": mom_estimate,
    "dfht": dfht_estimate,
}
