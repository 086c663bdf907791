"""Quantitative evaluation of trained models and exact tabular theory checks.

Model metrics (mode coverage, reconstruction, latent occupancy, cycle
errors) work on plain arrays. The tabular part checks the optimal
discriminator ``q / (q + p)`` and the identity

    V(q, p, D*) = -log 4 + 2 * JSD(q || p)

on small discrete joints, where everything can be summed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, DomainError
from .mixture import GaussianMixture, assign_components
from .nn import LOG_SIGMA_MAX, LOG_SIGMA_MIN, MlpParameters, mlp_apply

LOG4 = float(np.log(4.0))
LOG2 = float(np.log(2.0))


# -- mode coverage ------------------------------------------------------


@dataclass(frozen=True)
class ModeCoverageReport:
    n_samples: int
    counts: list[int]
    covered: int
    dropped: int

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "counts": list(self.counts),
            "covered": self.covered,
            "dropped": self.dropped,
        }


def mode_coverage(mix: GaussianMixture, samples: np.ndarray) -> ModeCoverageReport:
    """Assign each sample to its argmax-responsibility component and count."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 1:
        raise ContractError("need at least one sample")
    labels = assign_components(mix, samples)
    counts = np.bincount(labels, minlength=mix.n_components)
    covered = int(np.count_nonzero(counts))
    return ModeCoverageReport(
        n_samples=int(samples.shape[0]),
        counts=[int(c) for c in counts],
        covered=covered,
        dropped=mix.n_components - covered,
    )


def aggregate_coverage(covered: list[int]) -> dict:
    """Mean, std, min and max of per-run covered-mode counts."""
    a = np.asarray(covered, dtype=np.float64)
    return {
        "runs": int(a.size),
        "mean": float(a.mean()),
        "std": float(a.std()),
        "min": int(a.min()),
        "max": int(a.max()),
    }


# -- encoder / decoder diagnostics --------------------------------------


def _gaussian_stats(params: MlpParameters, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    out = mlp_apply(params, x)
    d = out.shape[1] // 2
    return out[:, :d], np.clip(out[:, d:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)


def encoder_mean(encoder: MlpParameters, x: np.ndarray) -> np.ndarray:
    return _gaussian_stats(encoder, x)[0]


def encoder_sample(encoder: MlpParameters, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mu, log_sigma = _gaussian_stats(encoder, x)
    return mu + np.exp(log_sigma) * rng.standard_normal(mu.shape)


def decoder_mean(decoder: MlpParameters, z: np.ndarray) -> np.ndarray:
    """Decoder output; the mean half when the decoder has a gaussian head."""
    if decoder.head == "gaussian":
        return _gaussian_stats(decoder, z)[0]
    return mlp_apply(decoder, z)


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.sum((a - b) ** 2, axis=1)))


def reconstruct(
    encoder: MlpParameters, decoder: MlpParameters, x: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """One stochastic encode, one deterministic decode; returns ``(x_hat, mse)``.

    The error is the mean over points of the squared Euclidean distance.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_hat = decoder_mean(decoder, encoder_sample(encoder, x, rng))
    return x_hat, _mse(x, x_hat)


def latent_interpolate(
    encoder: MlpParameters,
    decoder: MlpParameters,
    x1: np.ndarray,
    x2: np.ndarray,
    steps: int,
) -> np.ndarray:
    """Decode ``steps`` evenly spaced points between the encoder means of x1 and x2."""
    if steps < 2:
        raise ContractError("steps must be >= 2")
    z1 = encoder_mean(encoder, np.atleast_2d(x1))[0]
    z2 = encoder_mean(encoder, np.atleast_2d(x2))[0]
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return decoder_mean(decoder, (1.0 - t) * z1 + t * z2)


@dataclass(frozen=True)
class LatentOccupancy:
    mean: np.ndarray
    covariance: np.ndarray
    histogram: np.ndarray
    edges: np.ndarray
    distance: float
    z: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "moment_distance": self.distance,
            "histogram": self.histogram.tolist(),
            "edges": self.edges.tolist(),
        }


def moment_distance(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """``||mean|| + ||cov - I||_F`` of a sample cloud."""
    mean = z.mean(axis=0)
    cov = np.atleast_2d(np.cov(z, rowvar=False))
    dist = float(np.linalg.norm(mean) + np.linalg.norm(cov - np.eye(z.shape[1])))
    return mean, cov, dist


def latent_occupancy(
    encoder: MlpParameters | None,
    data: np.ndarray,
    rng: np.random.Generator,
    bins: int = 40,
    extent: float = 4.0,
) -> LatentOccupancy:
    """Aggregate posterior from one ``z`` draw per data point.

    ``encoder=None`` treats ``data`` as latent draws already. The histogram
    covers the first two latent coordinates on ``[-extent, extent]^2``; points
    outside are counted in the border bins so the mass sums to one.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] < 100:
        raise ContractError("latent occupancy needs at least 100 points")
    z = data if encoder is None else encoder_sample(encoder, data, rng)
    mean, cov, dist = moment_distance(z)
    pts = np.clip(z[:, :2], -extent, extent)
    if pts.shape[1] == 1:
        pts = np.hstack([pts, np.zeros_like(pts)])
    edges = np.linspace(-extent, extent, bins + 1)
    hist, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=[edges, edges])
    return LatentOccupancy(mean, cov, hist / hist.sum(), edges, dist, z)


def invertibility_diagnostic(
    encoder: MlpParameters,
    decoder: MlpParameters,
    data: np.ndarray,
    rng: np.random.Generator,
) -> dict:
    """Cycle errors of the encoder-mean / decoder pair.

    ``x_cycle_mse = E||x - G_x(G_z(x))||^2`` over ``data`` and
    ``z_cycle_mse = E||z - G_z(G_x(z))||^2`` over fresh prior draws.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    x_back = decoder_mean(decoder, encoder_mean(encoder, data))
    z = rng.standard_normal((data.shape[0], decoder.in_dim))
    z_back = encoder_mean(encoder, decoder_mean(decoder, z))
    return {"x_cycle_mse": _mse(data, x_back), "z_cycle_mse": _mse(z, z_back)}


# -- tabular theory -----------------------------------------------------


@dataclass(frozen=True)
class DiscreteJoint:
    """Probability table over (x-cell, z-cell) pairs."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ContractError("joint must be nonnegative and sum to 1")
        object.__setattr__(self, "mass", m)

    @classmethod
    def random(
        cls, shape: tuple[int, int], rng: np.random.Generator, zero_fraction: float = 0.0
    ) -> "DiscreteJoint":
        m = rng.random(shape)
        if zero_fraction:
            m[rng.random(shape) < zero_fraction] = 0.0
            if not m.any():
                m.flat[0] = 1.0
        return cls(m / m.sum())


def _table(t) -> np.ndarray:
    return t.mass if isinstance(t, DiscreteJoint) else np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class OptimalDiscriminator:
    values: np.ndarray  # NaN on excluded cells
    excluded: np.ndarray  # True where q == p == 0


def optimal_discriminator(q, p) -> OptimalDiscriminator:
    """Cellwise ``q / (q + p)``; cells with no mass on either side are flagged."""
    qm, pm = _table(q), _table(p)
    if qm.shape != pm.shape:
        raise ContractError(f"table shapes differ: {qm.shape} vs {pm.shape}")
    total = qm + pm
    excluded = total == 0
    values = np.full(qm.shape, np.nan)
    np.divide(qm, total, out=values, where=~excluded)
    return OptimalDiscriminator(values, excluded)


def value_at(q, p, d) -> float:
    """``sum q log D + sum p log(1 - D)``; zero-mass terms are skipped."""
    qm, pm = _table(q), _table(p)
    dv = d.values if isinstance(d, OptimalDiscriminator) else np.asarray(d, dtype=np.float64)
    on_q, on_p = qm > 0, pm > 0
    if np.any(~(dv[on_q] > 0)) or np.any(~(dv[on_p] < 1)):
        raise DomainError("discriminator hits 0 or 1 (or is undefined) on a cell with mass")
    return float(np.sum(qm[on_q] * np.log(dv[on_q])) + np.sum(pm[on_p] * np.log1p(-dv[on_p])))


def _kl(a: np.ndarray, b: np.ndarray) -> float:
    on = a > 0
    return float(np.sum(a[on] * (np.log(a[on]) - np.log(b[on]))))


def jsd_discrete(q, p) -> float:
    """Jensen-Shannon divergence in nats, with ``0 log 0 = 0``."""
    qm, pm = _table(q), _table(p)
    m = 0.5 * (qm + pm)
    return 0.5 * _kl(qm, m) + 0.5 * _kl(pm, m)


def grid_search_discriminator(q, p, grid: np.ndarray | None = None) -> np.ndarray:
    """Per-cell maximizer of ``q log D + p log(1 - D)`` over a grid of D values.

    Brute force, independent of the closed form; excluded cells are NaN.
    """
    qm, pm = _table(q), _table(p)
    if grid is None:
        grid = np.round(np.arange(1, 1000) * 1e-3, 3)
    qf, pf = qm.reshape(-1, 1), pm.reshape(-1, 1)
    scores = qf * np.log(grid)[None, :] + pf * np.log1p(-grid)[None, :]
    best = grid[np.argmax(scores, axis=1)].reshape(qm.shape)
    return np.where((qm + pm) == 0, np.nan, best)


@dataclass(frozen=True)
class OracleCheck:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_joint_pairs(
    n: int, max_size: int, rng: np.random.Generator, zero_fraction: float = 0.2
) -> list[tuple[DiscreteJoint, DiscreteJoint]]:
    """``n`` pairs of same-shape random joints, sides drawn from ``1..max_size``."""
    if n < 1 or max_size < 1:
        raise ContractError("need n >= 1 and max_size >= 1")
    pairs = []
    for _ in range(n):
        shape = tuple(int(s) for s in rng.integers(1, max_size + 1, size=2))
        pairs.append(
            (DiscreteJoint.random(shape, rng, zero_fraction), DiscreteJoint.random(shape, rng, zero_fraction))
        )
    return pairs


def perturbed_discriminator(d: OptimalDiscriminator, rng: np.random.Generator, scale: float = 0.2) -> np.ndarray:
    v = np.where(d.excluded, 0.5, d.values)
    return np.clip(v + scale * rng.standard_normal(v.shape), 1e-6, 1 - 1e-6)


def run_oracles(n_joints: int = 100, max_size: int = 16, seed: int = 0, n_perturb: int = 100) -> list[OracleCheck]:
    """Closed-form optimal discriminator and value identities on random tables."""
    rng = np.random.default_rng(seed)
    pairs = random_joint_pairs(n_joints, max_size, rng)
    grid_err, identity_err, beaten, excluded, flags_ok = 0.0, 0.0, 0, 0, True
    for q, p in pairs:
        d = optimal_discriminator(q, p)
        excluded += int(d.excluded.sum())
        flags_ok &= bool(
            np.array_equal(d.excluded, (q.mass + p.mass) == 0)
            and np.all(np.isnan(d.values[d.excluded]))
            and not np.any(np.isnan(d.values[~d.excluded]))
        )
        keep = ~d.excluded
        grid_err = max(grid_err, float(np.max(np.abs(grid_search_discriminator(q, p) - d.values)[keep], initial=0.0)))
        v_star = value_at(q, p, d)
        identity_err = max(identity_err, abs(v_star - (-LOG4 + 2.0 * jsd_discrete(q, p))))
        for _ in range(n_perturb):
            beaten += value_at(q, p, perturbed_discriminator(d, rng)) <= v_star
    same_err = 0.0
    for q, _ in pairs:
        d = optimal_discriminator(q, q)
        same_err = max(same_err, abs(value_at(q, q, d) + LOG4), jsd_discrete(q, q))
    n_cmp = n_joints * n_perturb
    return [
        OracleCheck(
            "optimal discriminator vs grid search",
            grid_err <= 1e-3 + 1e-12,
            f"max |D* - D_grid| = {grid_err:.2e} (tol 1e-3) over {n_joints} joints",
        ),
        OracleCheck(
            "optimal discriminator maximality",
            beaten == n_cmp,
            f"D* >= perturbed D in {beaten}/{n_cmp} comparisons",
        ),
        OracleCheck(
            "V(D*) = -log 4 + 2 JSD",
            identity_err <= 1e-10,
            f"max error {identity_err:.2e} (tol 1e-10)",
        ),
        OracleCheck(
            "q == p gives V(D*) = -log 4 and JSD = 0",
            same_err <= 1e-12,
            f"max error {same_err:.2e}",
        ),
        OracleCheck(
            "cells with q = p = 0 are excluded",
            flags_ok,
            f"{excluded} excluded cells flagged",
        ),
    ]
