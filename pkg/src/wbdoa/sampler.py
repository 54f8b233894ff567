"""Non-reversible jump MCMC over (number of sources, DoAs, SNRs).

One transition either runs a coordinate-wise slice-sampling update at fixed
dimension, or proposes the jump dictated by the lifting direction v: a birth
(insert a fresh source drawn from the proposal) when v = +1, a death (remove a
uniformly chosen source) when v = -1. v flips exactly when a jump proposal is
rejected, boundary proposals included; update moves never touch it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import FreqData, LogPosterior, ModelConfig, ModelState, prepare_freq_data

logger = logging.getLogger(__name__)

NEG_INF = -np.inf


@dataclass(frozen=True)
class SamplerConfig:
    """Tuning knobs of the transition kernel and chain length."""

    n_samples: int
    n_burnin: int
    seed: int = 0
    update_prob: float = 0.1
    slice_width: float = 2.0
    birth_gamma_logmean: float = 0.0
    birth_gamma_logsd: float = 2.0
    max_shrink: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.update_prob < 1.0:
            raise ValueError("update_prob must lie in (0, 1)")
        if self.slice_width <= 0:
            raise ValueError("slice_width must be positive")
        if self.n_samples < 0 or self.n_burnin < 0:
            raise ValueError("chain lengths must be nonnegative")


@dataclass
class ChainTrace:
    """Retained posterior samples plus per-step move bookkeeping."""

    ks: np.ndarray
    phis: list
    gammas: list
    logps: np.ndarray
    moves: list
    accepted: np.ndarray
    directions: np.ndarray
    steps: np.ndarray

    def __len__(self) -> int:
        return len(self.ks)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(len(self.ks)):
                record = {
                    "step": int(self.steps[i]),
                    "k": int(self.ks[i]),
                    "phis": [float(v) for v in self.phis[i]],
                    "gammas": [float(v) for v in self.gammas[i]],
                    "logp": float(self.logps[i]),
                    "move": self.moves[i],
                    "accepted": bool(self.accepted[i]),
                    "v": int(self.directions[i]),
                }
                fh.write(json.dumps(record) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "ChainTrace":
        ks, phis, gammas, logps, moves, accepted, directions, steps = ([] for _ in range(8))
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                ks.append(rec["k"])
                phis.append(np.array(rec["phis"]))
                gammas.append(np.array(rec["gammas"]))
                logps.append(rec["logp"])
                moves.append(rec["move"])
                accepted.append(rec["accepted"])
                directions.append(rec["v"])
                steps.append(rec["step"])
        return cls(
            ks=np.array(ks, dtype=int),
            phis=phis,
            gammas=gammas,
            logps=np.array(logps),
            moves=moves,
            accepted=np.array(accepted, dtype=bool),
            directions=np.array(directions, dtype=int),
            steps=np.array(steps, dtype=int),
        )


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator addressed by (seed, stream) for exact replay."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


# ---------------------------------------------------------------------------
# jump-move proposal and acceptance ratios
# ---------------------------------------------------------------------------

def log_birth_proposal(phi: float, gamma_: float, scfg: SamplerConfig) -> float:
    """Log density of the newborn proposal: uniform DoA x log-normal SNR."""
    if not -np.pi / 2 <= phi <= np.pi / 2 or gamma_ <= 0:
        return NEG_INF
    s = scfg.birth_gamma_logsd
    z = (np.log(gamma_) - scfg.birth_gamma_logmean) / s
    return float(
        -np.log(np.pi) - np.log(gamma_) - np.log(s) - 0.5 * np.log(2 * np.pi) - 0.5 * z * z
    )


def birth_log_ratio(
    state: ModelState,
    newborn: tuple[float, float],
    data: FreqData,
    cfg: ModelConfig,
    scfg: SamplerConfig,
    insert_at: int = 0,
    logpost: Optional[LogPosterior] = None,
    current_logp: Optional[float] = None,
) -> float:
    """Log MH ratio of inserting ``newborn`` at ``insert_at``.

    The uniform insertion-position terms cancel between the forward and
    reverse jumps, leaving log pi(new) - log pi(old) - log q(newborn).
    """
    if state.k >= cfg.k_max:
        raise ValueError("birth move invalid at k = k_max")
    phi, gamma_ = newborn
    logpost = logpost or LogPosterior(data, cfg)
    if current_logp is None:
        current_logp = logpost.of_state(state)
    grown = state.insert(insert_at, phi, gamma_)
    return logpost.of_state(grown) - current_logp - log_birth_proposal(phi, gamma_, scfg)


def death_log_ratio(
    state: ModelState,
    remove_index: int,
    data: FreqData,
    cfg: ModelConfig,
    scfg: SamplerConfig,
    logpost: Optional[LogPosterior] = None,
    current_logp: Optional[float] = None,
) -> float:
    """Log MH ratio of removing source ``remove_index`` (0-based).

    Exact negative of the birth ratio that would re-insert the same source:
    log pi(new) - log pi(old) + log q(removed).
    """
    if state.k < 1:
        raise ValueError("death move invalid at k = 0")
    if not 0 <= remove_index < state.k:
        raise ValueError(f"remove_index {remove_index} outside 0..{state.k - 1}")
    logpost = logpost or LogPosterior(data, cfg)
    if current_logp is None:
        current_logp = logpost.of_state(state)
    shrunk = state.remove(remove_index)
    removed = (float(state.phis[remove_index]), float(state.gammas[remove_index]))
    return logpost.of_state(shrunk) - current_logp + log_birth_proposal(*removed, scfg)


# ---------------------------------------------------------------------------
# slice-sampling update move
# ---------------------------------------------------------------------------

def slice_sample_coordinate(
    logdensity: Callable[[float], float],
    x0: float,
    width: float,
    rng: np.random.Generator,
    max_shrink: int = 10_000,
) -> tuple[float, float]:
    """One stepping-out slice-sampling move on a univariate log density.

    Returns (new point, log density there). If the shrink loop fails to find
    an acceptable point within ``max_shrink`` iterations the old point is kept
    and a warning is logged.
    """
    logf0 = logdensity(x0)
    level = logf0 - rng.exponential()
    offset = rng.uniform()
    left = x0 - offset * width
    right = left + width
    while logdensity(left) > level:
        left -= width
    while logdensity(right) > level:
        right += width
    for _ in range(max_shrink):
        x1 = rng.uniform(left, right)
        logf1 = logdensity(x1)
        if logf1 > level:
            return x1, logf1
        if x1 < x0:
            left = x1
        else:
            right = x1
    logger.warning("slice shrink loop exhausted after %d iterations; keeping old value", max_shrink)
    return x0, logf0


def scan_order(n_coords: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random coordinate visit order for one Gibbs scan."""
    return rng.permutation(n_coords)


def slice_update(
    state: ModelState,
    data: FreqData,
    cfg: ModelConfig,
    scfg: SamplerConfig,
    rng: np.random.Generator,
    logpost: Optional[LogPosterior] = None,
) -> ModelState:
    """Update all (DoA, log SNR) coordinates by slice sampling in a random
    permutation order; the number of sources and the lifting direction are
    untouched. SNRs move in log space, with the change-of-variable term folded
    into the conditional."""
    k = state.k
    if k == 0:
        return state
    logpost = logpost or LogPosterior(data, cfg)
    phis = state.phis.copy()
    gammas = state.gammas.copy()
    for coord in scan_order(2 * k, rng):
        j = coord % k
        if coord < k:

            def conditional(phi, j=j):
                trial = phis.copy()
                trial[j] = phi
                return logpost(trial, gammas)

            phis[j], _ = slice_sample_coordinate(
                conditional, float(phis[j]), scfg.slice_width, rng, scfg.max_shrink
            )
        else:

            def conditional(log_gamma, j=j):
                if abs(log_gamma) > 700.0:  # exp would over/underflow
                    return NEG_INF
                trial = gammas.copy()
                trial[j] = np.exp(log_gamma)
                return logpost(phis, trial) + log_gamma

            new_log, _ = slice_sample_coordinate(
                conditional, float(np.log(gammas[j])), scfg.slice_width, rng, scfg.max_shrink
            )
            gammas[j] = np.exp(new_log)
    return ModelState(phis, gammas, state.direction)


# ---------------------------------------------------------------------------
# full transition and chain driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepResult:
    state: ModelState
    move: str
    accepted: bool
    logp: float


def nrjmcmc_step(
    state: ModelState,
    data: FreqData,
    cfg: ModelConfig,
    scfg: SamplerConfig,
    rng: np.random.Generator,
    logpost: Optional[LogPosterior] = None,
    current_logp: Optional[float] = None,
    death_proposal_term: bool = True,
) -> StepResult:
    """One lifted transition: update move with probability ``update_prob``,
    otherwise the jump selected by the current direction.

    ``death_proposal_term=False`` drops the reverse-proposal density from the
    death ratio; this deliberate mutation exists so correctness harnesses can
    verify they would catch a broken kernel. Leave it at True for inference.
    """
    logpost = logpost or LogPosterior(data, cfg)
    if current_logp is None:
        current_logp = logpost.of_state(state)

    if rng.uniform() < scfg.update_prob:
        new_state = slice_update(state, data, cfg, scfg, rng, logpost)
        return StepResult(new_state, "update", True, logpost.of_state(new_state))

    proposed_k = state.k + state.direction
    move = "birth" if state.direction > 0 else "death"
    if not 0 <= proposed_k <= cfg.k_max:
        return StepResult(state.with_direction(-state.direction), move, False, current_logp)

    if move == "birth":
        phi = rng.uniform(-np.pi / 2, np.pi / 2)
        gamma_ = np.exp(rng.normal(scfg.birth_gamma_logmean, scfg.birth_gamma_logsd))
        position = int(rng.integers(state.k + 1))
        proposal = state.insert(position, phi, gamma_)
        proposal_logp = logpost.of_state(proposal)
        log_ratio = proposal_logp - current_logp - log_birth_proposal(phi, gamma_, scfg)
    else:
        position = int(rng.integers(state.k))
        proposal = state.remove(position)
        proposal_logp = logpost.of_state(proposal)
        log_ratio = proposal_logp - current_logp
        if death_proposal_term:
            log_ratio += log_birth_proposal(
                float(state.phis[position]), float(state.gammas[position]), scfg
            )

    if np.isfinite(log_ratio) or log_ratio == np.inf:
        accept = np.log(rng.uniform()) < log_ratio
    else:
        accept = False
    if accept:
        return StepResult(proposal, move, True, proposal_logp)
    return StepResult(state.with_direction(-state.direction), move, False, current_logp)


def run_chain(
    y: np.ndarray,
    cfg: ModelConfig,
    scfg: SamplerConfig,
    stream: int = 0,
    initial: Optional[ModelState] = None,
) -> ChainTrace:
    """Run one chain: ``n_burnin`` discarded transitions followed by
    ``n_samples`` retained ones. Deterministic given (seed, stream)."""
    data = prepare_freq_data(np.asarray(y, dtype=float), cfg)
    rng = make_rng(scfg.seed, stream)
    logpost = LogPosterior(data, cfg)
    state = initial if initial is not None else ModelState.empty()
    logp = logpost.of_state(state)

    total = scfg.n_burnin + scfg.n_samples
    ks = np.empty(scfg.n_samples, dtype=int)
    phis, gammas, moves = [], [], []
    logps = np.empty(scfg.n_samples)
    accepted = np.empty(scfg.n_samples, dtype=bool)
    directions = np.empty(scfg.n_samples, dtype=int)
    steps = np.empty(scfg.n_samples, dtype=int)

    for step in range(total):
        result = nrjmcmc_step(state, data, cfg, scfg, rng, logpost, logp)
        state, logp = result.state, result.logp
        if step >= scfg.n_burnin:
            i = step - scfg.n_burnin
            ks[i] = state.k
            phis.append(state.phis.copy())
            gammas.append(state.gammas.copy())
            logps[i] = logp
            moves.append(result.move)
            accepted[i] = result.accepted
            directions[i] = state.direction
            steps[i] = step
    return ChainTrace(ks, phis, gammas, logps, moves, accepted, directions, steps)
