"""Turn a posterior trace into decisions: source-count detection, DoA
relabeling and summaries, and latent source-signal reconstruction."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from .model import FreqData, ModelConfig, ModelState, steering_stripe
from .sampler import ChainTrace
from .stripe import (
    DecompositionFailure,
    StripeMatrix,
    backward_substitute_adjoint,
    block_ldl,
    forward_substitute,
    gram,
)

logger = logging.getLogger(__name__)

LOSSES = ("l1_median", "zero_one_mode")


@dataclass(frozen=True)
class DetectionResult:
    """Posterior over the number of sources and the Bayes-optimal count."""

    k_hat: int
    posterior_pmf: np.ndarray
    loss: str


@dataclass(frozen=True)
class MixtureLabeling:
    """Gaussian-plus-uniform-outlier mixture fitted to the pooled DoA draws,
    with per-sample component assignments (0 marks the outlier component)."""

    kappa: int
    means: np.ndarray
    sds: np.ndarray
    weights: np.ndarray
    outlier_weight: float
    assignments: list
    log_likelihood: float


def empirical_order_pmf(trace: ChainTrace, k_max: int) -> np.ndarray:
    if len(trace) == 0:
        raise ValueError("empty trace")
    counts = np.bincount(trace.ks, minlength=k_max + 1).astype(float)
    return counts / counts.sum()


def detect_order(
    trace: ChainTrace,
    k_max: int,
    loss: Union[str, np.ndarray] = "l1_median",
) -> DetectionResult:
    """Bayes decision on the source count under the given loss.

    ``loss`` is one of the named losses or a custom (k_max+1, k_max+1) table
    indexed [true, decision]. Ties break toward the smaller count.
    """
    pmf = empirical_order_pmf(trace, k_max)
    support = np.arange(k_max + 1)
    if isinstance(loss, str):
        if loss == "l1_median":
            table = np.abs(support[:, None] - support[None, :]).astype(float)
        elif loss == "zero_one_mode":
            table = 1.0 - np.eye(k_max + 1)
        else:
            raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
        name = loss
    else:
        table = np.asarray(loss, dtype=float)
        if table.shape != (k_max + 1, k_max + 1):
            raise ValueError(f"loss table shape {table.shape} != ({k_max + 1}, {k_max + 1})")
        name = "custom"
    risks = pmf @ table
    k_hat = int(np.argmin(risks))  # argmin takes the first, i.e. smallest, minimizer
    return DetectionResult(k_hat=k_hat, posterior_pmf=pmf, loss=name)


def choose_kappa(trace: ChainTrace, k_max: int) -> int:
    """Smallest count whose cumulative posterior mass reaches 90%."""
    pmf = empirical_order_pmf(trace, k_max)
    return int(np.searchsorted(np.cumsum(pmf), 0.9 - 1e-12))


# ---------------------------------------------------------------------------
# relabeling
# ---------------------------------------------------------------------------

_OUTLIER_DENSITY = 1.0 / np.pi  # uniform over [-pi/2, pi/2]
_MIN_SD = 1e-4


def _mixture_loglik(pooled, means, sds, weights, outlier_weight):
    dens = outlier_weight * _OUTLIER_DENSITY + np.sum(
        weights[None, :]
        * np.exp(-0.5 * ((pooled[:, None] - means[None, :]) / sds[None, :]) ** 2)
        / (sds[None, :] * np.sqrt(2 * np.pi)),
        axis=1,
    )
    return float(np.sum(np.log(np.maximum(dens, 1e-300))))


def _kmeanspp_means(pooled: np.ndarray, kappa: int, rng: np.random.Generator) -> np.ndarray:
    means = [pooled[rng.integers(len(pooled))]]
    for _ in range(kappa - 1):
        d2 = np.min((pooled[:, None] - np.array(means)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            means.append(pooled[rng.integers(len(pooled))])
            continue
        means.append(pooled[rng.choice(len(pooled), p=d2 / total)])
    return np.array(means)


@dataclass(frozen=True)
class MixtureFit:
    """Converged mixture parameters plus the EM log-likelihood path."""

    means: np.ndarray
    sds: np.ndarray
    weights: np.ndarray
    outlier_weight: float
    log_likelihood: float
    log_likelihood_path: tuple


def fit_doa_mixture(
    pooled: np.ndarray,
    kappa: int,
    rng: np.random.Generator,
    n_restarts: int = 5,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> MixtureFit:
    """EM fit of kappa Gaussians plus a uniform outlier component.

    Restarted from k-means++ seedings; the best-likelihood run wins. The
    likelihood path is non-decreasing within each run.
    """
    pooled = np.asarray(pooled, dtype=float)
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if len(pooled) == 0:
        raise ValueError("no DoA draws to fit")
    best = None
    for _ in range(n_restarts):
        means = _kmeanspp_means(pooled, kappa, rng)
        sds = np.full(kappa, max(pooled.std() / kappa, _MIN_SD))
        weights = np.full(kappa, 0.95 / kappa)
        outlier_weight = 0.05
        path = []
        prev = -np.inf
        for _ in range(max_iter):
            # E-step: responsibilities, outlier component last
            gauss = (
                weights[None, :]
                * np.exp(-0.5 * ((pooled[:, None] - means[None, :]) / sds[None, :]) ** 2)
                / (sds[None, :] * np.sqrt(2 * np.pi))
            )
            out = np.full(len(pooled), outlier_weight * _OUTLIER_DENSITY)
            norm = gauss.sum(axis=1) + out
            norm = np.maximum(norm, 1e-300)
            resp = gauss / norm[:, None]
            resp_out = out / norm
            # M-step
            mass = resp.sum(axis=0)
            mass_out = resp_out.sum()
            total = mass.sum() + mass_out
            for c in range(kappa):
                if mass[c] > 1e-12:
                    means[c] = float((resp[:, c] * pooled).sum() / mass[c])
                    var = float((resp[:, c] * (pooled - means[c]) ** 2).sum() / mass[c])
                    sds[c] = max(np.sqrt(var), _MIN_SD)
            weights = mass / total
            outlier_weight = mass_out / total
            cur = _mixture_loglik(pooled, means, sds, weights, outlier_weight)
            path.append(cur)
            if abs(cur - prev) < tol * max(1.0, abs(cur)):
                prev = cur
                break
            prev = cur
        fit = MixtureFit(
            means=means.copy(),
            sds=sds.copy(),
            weights=weights.copy(),
            outlier_weight=float(outlier_weight),
            log_likelihood=prev,
            log_likelihood_path=tuple(path),
        )
        if best is None or fit.log_likelihood > best.log_likelihood:
            best = fit
    return best


def relabel(trace: ChainTrace, kappa: int, rng=None) -> MixtureLabeling:
    """Fit the DoA mixture and assign each draw in each retained sample to at
    most one Gaussian component (greedy best responsibility, surplus draws to
    the outlier), resolving label switching."""
    rng = np.random.default_rng(rng if rng is not None else 0)
    pooled = np.concatenate([p for p in trace.phis if len(p)]) if any(len(p) for p in trace.phis) else np.empty(0)
    fit = fit_doa_mixture(pooled, kappa, rng)
    means, sds, weights, outlier_weight = fit.means, fit.sds, fit.weights, fit.outlier_weight

    assignments = []
    for sample in trace.phis:
        labels = np.zeros(len(sample), dtype=int)
        if len(sample) == 0:
            assignments.append(labels)
            continue
        gauss = (
            weights[None, :]
            * np.exp(-0.5 * ((sample[:, None] - means[None, :]) / sds[None, :]) ** 2)
            / (sds[None, :] * np.sqrt(2 * np.pi))
        )
        out = np.full(len(sample), outlier_weight * _OUTLIER_DENSITY)
        free_draws = set(range(len(sample)))
        free_comps = set(range(kappa))
        while free_draws and free_comps:
            best_pair, best_val = None, -np.inf
            for i in free_draws:
                for c in free_comps:
                    if gauss[i, c] > best_val:
                        best_val, best_pair = gauss[i, c], (i, c)
            i, c = best_pair
            free_draws.discard(i)
            if best_val > out[i]:
                labels[i] = c + 1
                free_comps.discard(c)
            # else: draw stays with the outlier; the component remains usable
        assignments.append(labels)
    return MixtureLabeling(
        kappa=kappa,
        means=means,
        sds=sds,
        weights=weights,
        outlier_weight=outlier_weight,
        assignments=assignments,
        log_likelihood=fit.log_likelihood,
    )


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Reconstruction:
    """Source-signal draws across retained samples and their pointwise mean."""

    draws: np.ndarray  # (n_draws, k, period)
    posterior_mean: np.ndarray  # (k, period)
    dof: float

    def credible_band(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        tail = 100.0 * (1.0 - level) / 2.0
        return (
            np.percentile(self.draws, tail, axis=0),
            np.percentile(self.draws, 100.0 - tail, axis=0),
        )


def reconstruction_dof(cfg: ModelConfig) -> float:
    """Degrees of freedom of the source-signal conditional (Student-t)."""
    return 2.0 * cfg.alpha + cfg.num_sensors * cfg.n_samples


def reconstruct_sources(
    data: FreqData,
    sample: ModelState,
    cfg: ModelConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the latent source signals conditional on one posterior sample.

    The conditional is multivariate Student-t; a Gaussian draw is whitened
    through the stripe factorization and divided by a single chi-square scale,
    then inverse-DFT'd back to real periodic time signals of shape (k, period).
    """
    k, n_p = sample.k, cfg.period
    if k < 1:
        raise ValueError("reconstruction requires at least one source")
    steering = steering_stripe(sample.phis, cfg.geometry, cfg.signal)
    reg = gram(steering).data.copy()
    idx = np.arange(k)
    reg[idx, idx, :] += (1.0 / sample.gammas)[:, None]
    factors = block_ldl(StripeMatrix(reg))
    lower, diag = factors.unit_lower, factors.diag

    projected = np.einsum("ijn,in->jn", steering.data.conj(), data.spectra)
    whitened = forward_substitute(lower, projected)
    mean_freq = backward_substitute_adjoint(lower, whitened / diag)

    quad = float(((whitened.real**2 + whitened.imag**2) / diag).sum())
    shape = cfg.alpha + cfg.num_sensors * cfg.n_samples / 2.0
    scale = cfg.beta + 0.5 * (data.energy - quad)
    if scale <= 0 or not np.isfinite(scale):
        raise DecompositionFailure("nonpositive posterior scale")

    # Unitary DFT of a real standard normal is standard normal on the
    # conjugate-symmetric subspace; solving through the conjugate-symmetric
    # factors keeps the draw on that subspace, hence real in time.
    noise_time = rng.standard_normal((k, n_p))
    noise_freq = np.fft.fft(noise_time, axis=1) / np.sqrt(n_p)
    colored = backward_substitute_adjoint(lower, noise_freq / np.sqrt(diag))
    dof = 2.0 * shape
    t_scale = np.sqrt(scale / shape) / np.sqrt(rng.chisquare(dof) / dof)
    draw_freq = mean_freq + t_scale * colored

    signals = np.fft.ifft(draw_freq, axis=1) * np.sqrt(n_p)
    residue = float(np.abs(signals.imag).max())
    if residue > 1e-6:
        logger.warning("reconstruction imaginary residue %.3e", residue)
    return signals.real


def reconstruction_mean(data: FreqData, sample: ModelState, cfg: ModelConfig) -> np.ndarray:
    """Conditional posterior mean of the source signals, shape (k, period)."""
    k, n_p = sample.k, cfg.period
    steering = steering_stripe(sample.phis, cfg.geometry, cfg.signal)
    reg = gram(steering).data.copy()
    idx = np.arange(k)
    reg[idx, idx, :] += (1.0 / sample.gammas)[:, None]
    factors = block_ldl(StripeMatrix(reg))
    projected = np.einsum("ijn,in->jn", steering.data.conj(), data.spectra)
    whitened = forward_substitute(factors.unit_lower, projected)
    mean_freq = backward_substitute_adjoint(factors.unit_lower, whitened / factors.diag)
    return (np.fft.ifft(mean_freq, axis=1) * np.sqrt(n_p)).real


def reconstruct_from_trace(
    data: FreqData,
    trace: ChainTrace,
    k: int,
    cfg: ModelConfig,
    rng: np.random.Generator,
    thin: int = 1,
) -> Reconstruction:
    """Draw source signals for every retained sample with ``k`` components.

    Components within each sample are registered by sorting on DoA, so draw j
    consistently tracks the j-th source from the left. Samples whose
    factorization fails are skipped with a warning.
    """
    draws = []
    for i in range(0, len(trace), thin):
        if trace.ks[i] != k:
            continue
        order = np.argsort(trace.phis[i])
        sample = ModelState(trace.phis[i][order], trace.gammas[i][order])
        try:
            draws.append(reconstruct_sources(data, sample, cfg, rng))
        except DecompositionFailure:
            logger.warning("skipping retained sample %d: factorization failed", i)
    if not draws:
        raise ValueError(f"no usable retained samples with k = {k}")
    stacked = np.stack(draws)
    return Reconstruction(
        draws=stacked,
        posterior_mean=stacked.mean(axis=0),
        dof=reconstruction_dof(cfg),
    )


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def summarize(trace: ChainTrace, labeling: MixtureLabeling) -> list[dict]:
    """Per-source point estimates and 95% credible intervals, weight-sorted.

    Components with no assigned draws are reported with null estimates.
    """
    per_comp_phis = [[] for _ in range(labeling.kappa)]
    per_comp_gammas = [[] for _ in range(labeling.kappa)]
    for phis, gammas, labels in zip(trace.phis, trace.gammas, labeling.assignments):
        for phi, gamma_, lab in zip(phis, gammas, labels):
            if lab > 0:
                per_comp_phis[lab - 1].append(phi)
                per_comp_gammas[lab - 1].append(gamma_)

    rows = []
    for c in range(labeling.kappa):
        phis = np.array(per_comp_phis[c])
        gammas = np.array(per_comp_gammas[c])
        row = {
            "component": c + 1,
            "weight": float(labeling.weights[c]),
            "mixture_mean_rad": float(labeling.means[c]),
            "mixture_sd_rad": float(labeling.sds[c]),
        }
        if len(phis):
            snr_db = 10.0 * np.log10(gammas)
            row.update(
                n_draws=int(len(phis)),
                doa_mean_rad=float(phis.mean()),
                doa_sd_rad=float(phis.std()),
                doa_mean_deg=float(np.degrees(phis.mean())),
                doa_ci95_rad=[float(v) for v in np.percentile(phis, [2.5, 97.5])],
                snr_db_mean=float(snr_db.mean()),
                snr_db_sd=float(snr_db.std()),
                snr_db_ci95=[float(v) for v in np.percentile(snr_db, [2.5, 97.5])],
            )
        else:
            row.update(
                n_draws=0,
                doa_mean_rad=None,
                doa_sd_rad=None,
                doa_mean_deg=None,
                doa_ci95_rad=None,
                snr_db_mean=None,
                snr_db_sd=None,
                snr_db_ci95=None,
            )
        rows.append(row)
    rows.sort(key=lambda r: r["weight"], reverse=True)
    return rows
