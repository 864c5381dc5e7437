"""Synthetic multi-source population generator.

Each population is a shared orthonormal basis, one low-dimensional head per
source, per-source covariate covariances, and Gaussian response noise.  The
head regimes mirror the benchmark settings: clustered half-space supports,
heterogeneous Gaussian heads, and repeated orthogonal heads with prescribed
multiplicities.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .linalg import ORTHONORMALITY_TOL

REGIMES = ("orthogonal", "clustered", "hetero_gaussian")

# sub-stream tags so that sources can be generated concurrently and still
# reproduce bit-identical output for a fixed population seed
_STREAM_TRUTH = 0
_STREAM_SIZES = 1
_STREAM_SOURCE = 2


@dataclass
class PopulationConfig:
    """Shape, regime, and seeding of one synthetic population."""

    M: int = 100
    d: int = 30
    k: int = 6
    n_range: tuple[int, int] | None = None
    regime: str = "clustered"
    cluster_prob: float = 0.2
    orthogonal_multiplicities: list[int] | None = None
    noise_std: float = 1.0
    seed: int = 0
    # sample sizes are redrawn for every seed rather than fixed per population
    resample_sizes: bool = True

    def __post_init__(self):
        if self.M < 1 or self.d < 1 or self.k < 1:
            raise ValueError("M, d, k must be positive")
        if self.k > self.d:
            raise ValueError(f"k={self.k} must not exceed d={self.d}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.n_range is None:
            self.n_range = (math.ceil(self.d / 3), self.d)
        self.n_range = (int(self.n_range[0]), int(self.n_range[1]))
        if self.n_range[0] < 2 or self.n_range[1] < self.n_range[0]:
            raise ValueError(f"invalid sample-size range {self.n_range}")
        if self.regime == "clustered" and self.k % 2 != 0:
            raise ValueError("clustered regime requires an even latent dimension")
        if not 0.0 <= self.cluster_prob <= 1.0:
            raise ValueError("cluster probability must lie in [0, 1]")
        if self.regime == "orthogonal":
            if self.orthogonal_multiplicities is None:
                base = self.M // self.k
                mults = [base] * self.k
                for j in range(self.M - base * self.k):
                    mults[j] += 1
                self.orthogonal_multiplicities = mults
            mults = list(self.orthogonal_multiplicities)
            if sum(mults) != self.M:
                raise ValueError("orthogonal multiplicities must sum to the number of sources")
            if any(m < 1 for m in mults):
                raise ValueError("orthogonal multiplicities must be positive")
            if any(mults[j] < mults[j + 1] for j in range(len(mults) - 1)):
                raise ValueError("orthogonal multiplicities must be nonincreasing")
            if len(mults) != self.k:
                raise ValueError("need one multiplicity per latent direction")
            self.orthogonal_multiplicities = mults


@dataclass
class GroundTruth:
    """Generative state of a population.

    ``theta`` is derived so that covariance-weighted parameters lie exactly
    in the span of ``shared_basis``: Gamma_i theta_i = B alpha_i.
    """

    shared_basis: np.ndarray          # d x k, orthonormal columns
    heads: np.ndarray                 # k x M
    noise_std: float
    covariances: np.ndarray | None = None   # M x d x d, None = (1/d) I for all
    cluster_labels: np.ndarray | None = None
    theta: np.ndarray = field(init=False)   # d x M

    def __post_init__(self):
        d, k = self.shared_basis.shape
        dev = np.linalg.norm(self.shared_basis.T @ self.shared_basis - np.eye(k), 2)
        if dev > ORTHONORMALITY_TOL:
            raise ValueError(f"shared basis is not orthonormal (deviation {dev:.2e})")
        if self.heads.shape[0] != k:
            raise ValueError("head dimension does not match the basis")
        signal = self.shared_basis @ self.heads
        if self.covariances is None:
            self.theta = d * signal
        else:
            self.theta = np.stack(
                [np.linalg.solve(self.covariances[i], signal[:, i])
                 for i in range(self.heads.shape[1])], axis=1)

    @property
    def num_sources(self) -> int:
        return self.heads.shape[1]

    @property
    def dim(self) -> int:
        return self.shared_basis.shape[0]

    def covariance(self, i: int) -> np.ndarray:
        d = self.dim
        if self.covariances is None:
            return np.eye(d) / d
        return self.covariances[i]


@dataclass
class SourceDataset:
    """One source's covariate/response sample."""

    covariates: np.ndarray   # n_i x d
    responses: np.ndarray    # n_i
    source_id: int

    def __post_init__(self):
        if self.responses.shape[0] != self.covariates.shape[0]:
            raise ValueError("response count must match covariate rows")
        if self.covariates.shape[0] < 2:
            raise ValueError("each source needs at least two samples")

    @property
    def num_samples(self) -> int:
        return self.covariates.shape[0]


def truth_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAM_TRUTH])


def sizes_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAM_SIZES])


def source_rng(seed: int, source_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAM_SOURCE, source_id])


def haar_orthonormal(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed d x k orthonormal frame via sign-corrected QR."""
    q, r = np.linalg.qr(rng.standard_normal((d, k)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def sample_heads_clustered(M: int, k: int, g: float,
                           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two groups supported on disjoint halves of the latent coordinates.

    Group 1 (probability ``g``) draws the first k/2 coordinates standard
    normal and zeroes the rest; group 2 uses the complementary half.
    """
    if k % 2 != 0:
        raise ValueError("clustered heads need an even latent dimension")
    half = k // 2
    labels = np.where(rng.random(M) < g, 1, 2)
    heads = np.zeros((k, M))
    for i in range(M):
        z = rng.standard_normal(half)
        if labels[i] == 1:
            heads[:half, i] = z
        else:
            heads[half:, i] = z
    return heads, labels


def sample_heads_hetero_gaussian(M: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Per-source Gaussian heads with random trace-normalized covariances.

    Each covariance is the symmetrized uniform matrix shifted by 3 I and
    rescaled so its average eigenvalue is one.
    """
    heads = np.zeros((k, M))
    for i in range(M):
        a = rng.random((k, k))
        psi = (a + a.T) / 2.0 + 3.0 * np.eye(k)
        psi *= k / np.trace(psi)
        heads[:, i] = np.linalg.cholesky(psi) @ rng.standard_normal(k)
    return heads


def sample_heads_sphere(M: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Unit heads drawn uniformly from the k-sphere."""
    heads = rng.standard_normal((k, M))
    return heads / np.linalg.norm(heads, axis=0)


def sample_heads_orthogonal(k: int, multiplicities, rng: np.random.Generator) -> np.ndarray:
    """Repeated orthonormal heads: direction j serves multiplicities[j] sources."""
    mults = list(multiplicities)
    if any(m < 1 for m in mults):
        raise ValueError("multiplicities must be positive")
    if len(mults) != k:
        raise ValueError("need exactly one multiplicity per direction")
    frame = haar_orthonormal(k, k, rng)
    cols = []
    for j, m in enumerate(mults):
        cols.extend([frame[:, j]] * m)
    return np.stack(cols, axis=1)


def sample_ground_truth(config: PopulationConfig, rng: np.random.Generator) -> GroundTruth:
    """Draw the basis and heads for one population.

    The basis is Haar, covariates default to the isotropic (1/d) I
    covariance, and the head regime comes from the config.
    """
    basis = haar_orthonormal(config.d, config.k, rng)
    labels = None
    if config.regime == "clustered":
        heads, labels = sample_heads_clustered(config.M, config.k, config.cluster_prob, rng)
    elif config.regime == "hetero_gaussian":
        heads = sample_heads_hetero_gaussian(config.M, config.k, rng)
    else:
        heads = sample_heads_orthogonal(config.k, config.orthogonal_multiplicities, rng)
        labels = np.concatenate([
            np.full(m, j, dtype=int) for j, m in enumerate(config.orthogonal_multiplicities)])
    return GroundTruth(shared_basis=basis, heads=heads, noise_std=config.noise_std,
                       cluster_labels=labels)


def generate_source_data(gt: GroundTruth, source_id: int, n_i: int,
                         rng: np.random.Generator) -> SourceDataset:
    """Sample one source: Gaussian covariates and noisy linear responses."""
    if n_i < 2:
        raise ValueError("each source needs at least two samples")
    d = gt.dim
    if gt.covariances is None:
        x = rng.standard_normal((n_i, d)) / math.sqrt(d)
    else:
        root = np.linalg.cholesky(gt.covariances[source_id])
        x = rng.standard_normal((n_i, d)) @ root.T
    noise = gt.noise_std * rng.standard_normal(n_i) if gt.noise_std > 0 else 0.0
    y = x @ gt.theta[:, source_id] + noise
    return SourceDataset(covariates=x, responses=y, source_id=source_id)


def draw_sample_sizes(config: PopulationConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = config.n_range
    return rng.integers(lo, hi + 1, size=config.M)


def generate_population(config: PopulationConfig) -> tuple[GroundTruth, list[SourceDataset]]:
    """Deterministic population draw from the config seed.

    Ground truth, sample sizes, and every source use their own derived
    stream, so identical configs reproduce identical bytes and sources may
    be generated in any order.
    """
    gt = sample_ground_truth(config, truth_rng(config.seed))
    sizes = draw_sample_sizes(config, sizes_rng(config.seed))
    datasets = [
        generate_source_data(gt, i, int(sizes[i]), source_rng(config.seed, i))
        for i in range(config.M)
    ]
    return gt, datasets


def diversity_matrix(heads: np.ndarray, sample_sizes) -> np.ndarray:
    """Sample-size-weighted average of head outer products.

    Reduces to the plain average of outer products when all sources hold
    the same number of samples.
    """
    sizes = np.asarray(sample_sizes, dtype=float)
    if sizes.shape[0] != heads.shape[1]:
        raise ValueError("need one sample size per head column")
    total = sizes.sum()
    weighted = heads * sizes
    return (weighted @ heads.T) / total


def dump_population(config: PopulationConfig, gt: GroundTruth,
                    datasets: list[SourceDataset], csv_path, sidecar_path=None) -> None:
    """Write the population to CSV plus a JSON sidecar with config and basis.

    CSV header: source_id, row_id, x_1..x_d, y.
    """
    csv_path = str(csv_path)
    if sidecar_path is None:
        sidecar_path = csv_path[:-4] + ".json" if csv_path.endswith(".csv") else csv_path + ".json"
    d = gt.dim
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "row_id"] + [f"x_{j + 1}" for j in range(d)] + ["y"])
        for ds in datasets:
            for r in range(ds.num_samples):
                writer.writerow([ds.source_id, r]
                                + [repr(v) for v in ds.covariates[r]]
                                + [repr(float(ds.responses[r]))])
    sidecar = {
        "config": asdict(config),
        "shared_basis": gt.shared_basis.tolist(),
        "noise_std": gt.noise_std,
        "cluster_labels": None if gt.cluster_labels is None else gt.cluster_labels.tolist(),
    }
    with open(str(sidecar_path), "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_population_csv(csv_path) -> list[SourceDataset]:
    """Read a dumped population back into per-source datasets."""
    rows_by_source: dict[int, list[tuple[int, list[float], float]]] = {}
    with open(str(csv_path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 3
        for row in reader:
            sid = int(row[0])
            rows_by_source.setdefault(sid, []).append(
                (int(row[1]), [float(v) for v in row[2:2 + d]], float(row[-1])))
    datasets = []
    for sid in sorted(rows_by_source):
        rows = sorted(rows_by_source[sid])
        x = np.array([r[1] for r in rows])
        y = np.array([r[2] for r in rows])
        datasets.append(SourceDataset(covariates=x, responses=y, source_id=sid))
    return datasets
