"""Joint-distribution correctness harness for the transition kernel.

Two simulators target the same prior-predictive joint: the marginal-conditional
simulator draws parameters from the prior directly; the successive-conditional
simulator alternates kernel transitions with re-simulation of the data given
the current parameters. If and only if the kernel leaves the posterior
invariant do the parameter marginals of the two simulators agree, which is
checked with two-sample statistics on the count, DoA, and SNR marginals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .model import LogPosterior, ModelConfig, ModelState, log_prior_order, prepare_freq_data
from .sampler import SamplerConfig, make_rng, nrjmcmc_step
from .signals import _phase_ramp_spectra, sensor_delays


def _inv_gamma(shape: float, scale: float, rng: np.random.Generator) -> float:
    """Inverse-gamma draw; redraws on underflow so the result is finite."""
    for _ in range(100):
        g = rng.gamma(shape, 1.0 / scale)
        if g > 0 and np.isfinite(1.0 / g):
            return 1.0 / g
    raise RuntimeError("inverse-gamma sampling kept underflowing")


def sample_prior_state(cfg: ModelConfig, rng: np.random.Generator) -> ModelState:
    """Draw (k, doas, snrs) from the prior; the lifting direction is uniform."""
    logpmf = np.array([log_prior_order(k, cfg) for k in range(cfg.k_max + 1)])
    pmf = np.exp(logpmf)
    k = int(rng.choice(cfg.k_max + 1, p=pmf / pmf.sum()))
    phis = rng.uniform(-np.pi / 2, np.pi / 2, size=k)
    gammas = np.array([_inv_gamma(cfg.alpha_gamma, cfg.beta_gamma, rng) for _ in range(k)])
    direction = 1 if rng.uniform() < 0.5 else -1
    return ModelState(phis, gammas, direction)


def simulate_observation(state: ModelState, cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """Simulate sensor data from the generative model given (doas, snrs).

    The noise variance and the latent source signals are drawn fresh from
    their conditionals (the priors), exactly as the collapsed likelihood
    integrates them out. Requires proper noise hyperparameters.
    """
    if cfg.alpha <= 0 or cfg.beta <= 0:
        raise ValueError("simulating data requires proper alpha, beta > 0")
    m, n, n_p = cfg.num_sensors, cfg.n_samples, cfg.period
    noise_var = _inv_gamma(cfg.alpha, cfg.beta, rng)
    y = np.sqrt(noise_var) * rng.standard_normal((m, n))
    for phi, gamma_ in zip(state.phis, state.gammas):
        source = np.sqrt(noise_var * gamma_) * rng.standard_normal(n_p)
        spectra = _phase_ramp_spectra(sensor_delays(cfg.geometry, phi), n_p)
        source_fft = np.fft.fft(source)
        y += np.fft.ifft(spectra * source_fft[None, :], axis=1).real[:, :n]
    return y


def marginal_conditional(cfg: ModelConfig, n_draws: int, rng: np.random.Generator) -> list[ModelState]:
    return [sample_prior_state(cfg, rng) for _ in range(n_draws)]


def successive_conditional(
    cfg: ModelConfig,
    scfg: SamplerConfig,
    n_draws: int,
    rng: np.random.Generator,
    kernel_steps: int = 5,
    rounds_per_draw: int = 10,
    death_proposal_term: bool = True,
) -> list[ModelState]:
    """Alternate kernel transitions with data re-simulation, recording one
    state per ``rounds_per_draw`` rounds of (kernel_steps transitions + data
    refresh).

    Records of adjacent rounds are autocorrelated, which makes the two-sample
    comparisons anti-conservative; the default thinning keeps that inflation
    well below the test threshold.
    """
    state = sample_prior_state(cfg, rng)
    draws = []
    for _ in range(n_draws):
        for _ in range(rounds_per_draw):
            y = simulate_observation(state, cfg, rng)
            data = prepare_freq_data(y, cfg)
            logpost = LogPosterior(data, cfg)
            logp = logpost.of_state(state)
            for _ in range(kernel_steps):
                result = nrjmcmc_step(
                    state, data, cfg, scfg, rng, logpost, logp,
                    death_proposal_term=death_proposal_term,
                )
                state, logp = result.state, result.logp
        draws.append(state)
    return draws


def design_effect(series: np.ndarray, max_lag: int = 50) -> float:
    """Variance inflation of a mean estimate from an autocorrelated series.

    1 + 2 * sum of positive-prefix autocorrelations (initial positive
    sequence truncation); 1.0 for an iid or constant series.
    """
    series = np.asarray(series, dtype=float)
    centered = series - series.mean()
    var = centered.var()
    if var <= 0 or len(series) < 4:
        return 1.0
    total = 0.0
    for lag in range(1, min(max_lag, len(series) - 1)):
        rho = float((centered[:-lag] * centered[lag:]).mean() / var)
        if rho <= 0:
            break
        total += rho
    return 1.0 + 2.0 * total


def compare_marginals(
    draws_a: list[ModelState],
    draws_b: list[ModelState],
    k_max: int,
    count_design_effect: float = 1.0,
) -> dict[str, float]:
    """Two-sample p-values for the count, DoA, and SNR marginals.

    ``count_design_effect`` is the variance inflation of sample b's count
    series (1.0 when iid); the count chi-square statistic is deflated by the
    corresponding first-order correction so that residual autocorrelation in
    a simulator does not masquerade as a kernel bug.
    """
    ks_a = np.array([s.k for s in draws_a])
    ks_b = np.array([s.k for s in draws_b])
    counts = np.stack(
        [np.bincount(ks_a, minlength=k_max + 1), np.bincount(ks_b, minlength=k_max + 1)]
    )
    counts = counts[:, counts.sum(axis=0) > 0]
    if counts.shape[1] < 2:
        p_count = 1.0
    else:
        statistic, _, dof, _ = stats.chi2_contingency(counts)
        n_a, n_b = len(ks_a), len(ks_b)
        inflation = (1.0 / n_a + count_design_effect / n_b) / (1.0 / n_a + 1.0 / n_b)
        p_count = float(stats.chi2.sf(statistic / inflation, dof))

    phis_a = np.concatenate([s.phis for s in draws_a]) if ks_a.sum() else np.empty(0)
    phis_b = np.concatenate([s.phis for s in draws_b]) if ks_b.sum() else np.empty(0)
    gammas_a = np.concatenate([s.gammas for s in draws_a]) if ks_a.sum() else np.empty(0)
    gammas_b = np.concatenate([s.gammas for s in draws_b]) if ks_b.sum() else np.empty(0)
    if len(phis_a) and len(phis_b):
        p_phi = float(stats.ks_2samp(phis_a, phis_b).pvalue)
        p_gamma = float(stats.ks_2samp(np.log(gammas_a), np.log(gammas_b)).pvalue)
    else:
        p_phi = p_gamma = 1.0
    return {"count": p_count, "doa": p_phi, "snr": p_gamma}


@dataclass(frozen=True)
class JointTestReport:
    p_values: dict
    corrected_p_values: dict
    passed: bool
    n_draws: int
    threshold: float


def tiny_test_config(
    num_sensors: int = 2,
    n_samples: int = 8,
    k_max: int = 2,
) -> ModelConfig:
    """Small, properly-specified model for the joint-distribution test.

    filter_len is 1 so the frequency-domain likelihood is exact, and the noise
    and SNR hyperpriors are proper (the shipped alpha = beta = 0 cannot be
    simulated from), keeping prior draws in a numerically sane range.
    """
    from .signals import ArrayGeometry, FilterConfig

    geom = ArrayGeometry(
        num_sensors=num_sensors, spacing=0.5, wave_speed=1500.0, sample_rate=3000.0
    )
    filt = FilterConfig(n_samples=n_samples, filter_len=1)
    return ModelConfig(
        geometry=geom,
        signal=filt,
        alpha=3.0,
        beta=2.0,
        alpha_gamma=1.0,
        beta_gamma=1.0,
        k_max=k_max,
    )


def joint_distribution_test(
    cfg: Optional[ModelConfig] = None,
    scfg: Optional[SamplerConfig] = None,
    n_draws: int = 10_000,
    seed: int = 0,
    threshold: float = 0.01,
    death_proposal_term: bool = True,
    kernel_steps: int = 5,
    rounds_per_draw: int = 10,
) -> JointTestReport:
    """Run both simulators and compare marginals with Bonferroni correction."""
    cfg = cfg or tiny_test_config()
    scfg = scfg or SamplerConfig(n_samples=0, n_burnin=0, seed=seed)
    rng_mc = make_rng(seed, 1)
    rng_sc = make_rng(seed, 2)
    draws_mc = marginal_conditional(cfg, n_draws, rng_mc)
    draws_sc = successive_conditional(
        cfg, scfg, n_draws, rng_sc,
        kernel_steps=kernel_steps,
        rounds_per_draw=rounds_per_draw,
        death_proposal_term=death_proposal_term,
    )
    deff = design_effect(np.array([s.k for s in draws_sc]))
    p_values = compare_marginals(draws_mc, draws_sc, cfg.k_max, count_design_effect=deff)
    corrected = {k: min(1.0, v * len(p_values)) for k, v in p_values.items()}
    passed = all(v > threshold for v in corrected.values())
    return JointTestReport(
        p_values=p_values,
        corrected_p_values=corrected,
        passed=passed,
        n_draws=n_draws,
        threshold=threshold,
    )
