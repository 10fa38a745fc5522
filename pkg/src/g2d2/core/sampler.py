"""End-to-end solvers: the star-shaped reverse process and its Markov counterpart.

Both variants share one loop. Per diffusion step t = T..1 they

1. query the denoising prior for p(z_0 | z_t),
2. initialize the variational logits from the previous step (forget coefficient),
3. run a fixed number of optimizer steps on the per-step objective,
4. draw z_{t-1} from the variant's reverse kernel.

Randomness is consumed in the same order by both variants (Gumbel draws, then one
uniform per dimension for z_{t-1}), so runs with one seed differ only where the
sampled z_{t-1} differ.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from g2d2.core.decoder import Codebook, Decoder, hard_decode
from g2d2.core.errors import NonFiniteError
from g2d2.core.noise_process import (
    TERMINAL_MASK_FLOOR,
    TransitionSchedule,
    markov_reverse_kernel,
    star_reverse_kernel,
    terminal_distribution,
)
from g2d2.core.objective import ObjectiveConfig, draw_gumbel, loss_and_gradient
from g2d2.core.operators import LinearProblem
from g2d2.core.optimizer import RAdamState, ScheduleParams, adam_step, effective_settings, radam_step
from g2d2.core.prior import DenoisingPrior
from g2d2.core.types import CategoricalField, TokenField
from g2d2.utils.numerics import clamped_log, row_softmax, sample_categorical

logger = logging.getLogger(__name__)

# Called with the time index of a freshly drawn state and the state itself.
Corruption = Callable[[int, TokenField], TokenField]


class SolverConfig(BaseModel):
    """Hyperparameters of one solver run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    T: int = Field(20, ge=1, description="Number of diffusion steps")
    inner_iters: int = Field(30, ge=0, description="Optimizer steps per diffusion step")
    gamma: float = Field(0.3, ge=0.0, le=1.0, description="Forget coefficient (weight on the previous alpha)")
    tau: float = Field(1.0, gt=0.0)
    eta_kl_base: float = Field(3e-4, ge=0.0)
    lr_base: float = Field(10.0, gt=0.0)
    lambda_lr: float = 1.0
    lambda_kl: float = 2.0
    seed: int = 0
    variant: Literal["star", "markov"] = "star"
    n_mc: int = Field(1, ge=1)
    likelihood_weight: float = Field(1.0, ge=0.0)
    # "gaussian" divides likelihood_weight by 2 sigma_eta^2 (exact negative log-likelihood)
    likelihood_scale: Literal["fixed", "gaussian"] = "fixed"
    likelihood_form: Literal["squared", "norm"] = "squared"
    optimizer: Literal["radam", "adam"] = "radam"
    carry_optimizer_state: bool = False
    record_losses: bool = True

    def schedule_params(self) -> ScheduleParams:
        return ScheduleParams(lambda_lr=self.lambda_lr, lambda_kl=self.lambda_kl, T=self.T)

    def effective_likelihood_weight(self, sigma_eta: float) -> float:
        if self.likelihood_scale == "fixed":
            return self.likelihood_weight
        if sigma_eta <= 0:
            raise ValueError("Gaussian likelihood scaling needs sigma_eta > 0.")
        return self.likelihood_weight / (2.0 * sigma_eta**2)

    def objective(self, eta_kl: float, sigma_eta: float = 1.0) -> ObjectiveConfig:
        return ObjectiveConfig(
            eta_kl=eta_kl,
            tau=self.tau,
            n_mc=self.n_mc,
            likelihood_weight=self.effective_likelihood_weight(sigma_eta),
            likelihood_form=self.likelihood_form,
        )


@dataclass(frozen=True)
class StepRecord:
    """What happened at diffusion step ``t``: z_t in, alpha_t optimized, z_{t-1} out."""

    t: int
    zt: TokenField
    alpha: CategoricalField
    z_prev: TokenField
    losses: np.ndarray
    lr: float
    eta_kl: float

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1]) if self.losses.size else float("nan")

    @property
    def remasked(self) -> int:
        return int(np.sum(~self.zt.masked & self.z_prev.masked))


class RemaskCount(NamedTuple):
    t: int
    remasked: int
    eligible: int


@dataclass
class Trajectory:
    variant: str
    z_T: TokenField
    records: List[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def states(self) -> List[TokenField]:
        """z_T, z_{T-1}, ..., z_0 in sampling order."""
        return [self.z_T] + [r.z_prev for r in self.records]

    def remask_events(self) -> List[RemaskCount]:
        """Per step, unmasked dimensions of z_t that became MASK in z_{t-1}."""
        return [
            RemaskCount(r.t, r.remasked, int(np.sum(~r.zt.masked))) for r in self.records
        ]

    def final_losses(self) -> np.ndarray:
        return np.array([r.final_loss for r in self.records])

    def to_records(self) -> List[Dict[str, Any]]:
        rows = []
        for r in self.records:
            rows.append(
                {
                    "t": r.t,
                    "z_t": " ".join("M" if v == r.zt.K else str(int(v)) for v in r.zt.tokens),
                    "z_prev": " ".join("M" if v == r.z_prev.K else str(int(v)) for v in r.z_prev.tokens),
                    "alpha_argmax": " ".join(str(int(v)) for v in r.alpha.argmax().tokens),
                    "alpha_max": float(r.alpha.probs.max(axis=1).min()),
                    "final_loss": r.final_loss,
                    "lr": r.lr,
                    "eta_kl": r.eta_kl,
                    "remasked": r.remasked,
                }
            )
        return rows


class SolveResult(NamedTuple):
    z0: TokenField
    x0: np.ndarray
    trajectory: Trajectory


def init_alpha(
    prev_alpha: Optional[CategoricalField], prior_out: CategoricalField, gamma: float
) -> np.ndarray:
    """Initial logits: gamma * log prev_alpha + (1 - gamma) * log prior_out.

    Without a previous alpha (the first step) this is log prior_out. Each log is
    clamped at LOG_FLOOR before blending.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"Forget coefficient must lie in [0, 1], got {gamma}.")
    log_prior = clamped_log(prior_out.probs)
    if prev_alpha is None:
        return log_prior
    if prev_alpha.probs.shape != prior_out.probs.shape:
        raise ValueError(
            f"Previous alpha has shape {prev_alpha.probs.shape}, prior output {prior_out.probs.shape}."
        )
    return gamma * clamped_log(prev_alpha.probs) + (1.0 - gamma) * log_prior


def early_error_injector(truth: TokenField, inject_at: int, dims: Sequence[int]) -> Corruption:
    """Corruption hook forcing a wrong unmasked token into ``dims`` of z_{inject_at}.

    The wrong token is ``(truth + 1) mod K``; other steps pass through untouched.
    """
    if truth.K < 2:
        raise ValueError("Injecting a wrong token needs K >= 2.")
    if not truth.is_clean:
        raise ValueError("The reference field must be fully unmasked.")
    dims = [int(d) for d in dims]
    if any(not 0 <= d < truth.d_z for d in dims):
        raise ValueError(f"Injection dimensions must lie in [0, {truth.d_z - 1}].")

    def corrupt(t: int, z: TokenField) -> TokenField:
        if t != inject_at:
            return z
        tokens = z.tokens.copy()
        tokens[dims] = (truth.tokens[dims] + 1) % truth.K
        return z.with_tokens(tokens)

    return corrupt


def _check_problem(
    prior: DenoisingPrior, s: TransitionSchedule, cb: Codebook, dec: Decoder, cfg: SolverConfig
) -> None:
    if not prior.K == s.K == cb.K:
        raise ValueError(f"K disagrees: prior {prior.K}, schedule {s.K}, codebook {cb.K}.")
    if prior.d_z != dec.d_z:
        raise ValueError(f"d_z disagrees: prior {prior.d_z}, decoder {dec.d_z}.")
    if cb.d_b != dec.d_b:
        raise ValueError(f"Codebook d_b={cb.d_b} does not match decoder d_b={dec.d_b}.")
    if cfg.T != s.T:
        raise ValueError(f"Solver T={cfg.T} does not match schedule T={s.T}.")


def _solve(
    cfg: SolverConfig,
    prior: DenoisingPrior,
    s: TransitionSchedule,
    cb: Codebook,
    dec: Decoder,
    prob: LinearProblem,
    rng: Optional[np.random.Generator],
    corruption: Optional[Corruption],
) -> SolveResult:
    _check_problem(prior, s, cb, dec, cfg)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    K, d_z = s.K, prior.d_z
    step_fn = radam_step if cfg.optimizer == "radam" else adam_step
    params = cfg.schedule_params()

    if not s.terminal_is_masked:
        logger.warning(
            "Terminal MASK mass %.4g is below %.2f; z_T keeps unmasked tokens",
            s.gamma_bar[-1],
            TERMINAL_MASK_FLOOR,
        )
    all_masked = TokenField.all_masked(d_z, K)
    zt = TokenField(sample_categorical(terminal_distribution(s, prior.predict(all_masked, s.T)), rng), K)
    if corruption is not None:
        zt = corruption(s.T, zt)
    traj = Trajectory(cfg.variant, zt)

    prev_alpha: Optional[CategoricalField] = None
    state: Optional[RAdamState] = None
    for t in range(s.T, 0, -1):
        prior_out = prior.predict(zt, t)
        lr, eta_kl = effective_settings(t, params, cfg.lr_base, cfg.eta_kl_base)
        obj_cfg = cfg.objective(eta_kl, prob.sigma_eta)
        logits = init_alpha(prev_alpha, prior_out, cfg.gamma)
        if state is None or not cfg.carry_optimizer_state:
            state = RAdamState.zeros_like(logits)

        losses = []
        for it in range(cfg.inner_iters):
            g = draw_gumbel(rng, obj_cfg, d_z, K)
            try:
                value, grad = loss_and_gradient(logits, prior_out, prob, cb, dec, obj_cfg, g)
                state, logits = step_fn(state, logits, grad, lr)
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"Non-finite objective at step t={t}, iteration {it}.",
                    state={"t": t, "iteration": it, "logits": logits.copy(), "zt": zt, **exc.state},
                ) from exc
            losses.append(value)
        if not np.all(np.isfinite(logits)):
            raise NonFiniteError(
                f"Optimizer produced non-finite logits at step t={t}.",
                state={"t": t, "logits": logits.copy(), "zt": zt},
            )
        alpha = CategoricalField(row_softmax(logits))

        if cfg.variant == "star":
            kernel = star_reverse_kernel(s, t, alpha)
        else:
            kernel = markov_reverse_kernel(s, t, alpha, zt)
        z_prev = TokenField(sample_categorical(kernel, rng), K)
        if corruption is not None:
            z_prev = corruption(t - 1, z_prev)

        kept = np.asarray(losses if cfg.record_losses else losses[-1:], dtype=float)
        traj.records.append(StepRecord(t, zt, alpha, z_prev, kept, lr, eta_kl))
        logger.debug(
            "%s step %d/%d: loss %.4g, masked %d/%d",
            cfg.variant,
            t,
            s.T,
            losses[-1] if losses else float("nan"),
            int(z_prev.masked.sum()),
            d_z,
        )
        prev_alpha, zt = alpha, z_prev

    if not zt.is_clean:
        raise ValueError("Sampling ended with MASK tokens in z_0; check the corruption hook.")
    return SolveResult(zt, hard_decode(cb, dec, zt), traj)


def g2d2_solve(
    cfg: SolverConfig,
    prior: DenoisingPrior,
    s: TransitionSchedule,
    cb: Codebook,
    dec: Decoder,
    prob: LinearProblem,
    rng: Optional[np.random.Generator] = None,
    corruption: Optional[Corruption] = None,
) -> SolveResult:
    """Sample z_0 given y with the star-shaped reverse kernel (re-masking allowed).

    Without ``rng`` the generator is seeded from ``cfg.seed``.
    """
    if cfg.variant != "star":
        raise ValueError(f"g2d2_solve runs the star variant, config asks for {cfg.variant!r}.")
    return _solve(cfg, prior, s, cb, dec, prob, rng, corruption)


def g2d2_markov_solve(
    cfg: SolverConfig,
    prior: DenoisingPrior,
    s: TransitionSchedule,
    cb: Codebook,
    dec: Decoder,
    prob: LinearProblem,
    rng: Optional[np.random.Generator] = None,
    corruption: Optional[Corruption] = None,
) -> SolveResult:
    """Same loop with the Markov absorbing posterior; unmasked tokens stay unmasked."""
    if cfg.variant != "markov":
        raise ValueError(f"g2d2_markov_solve runs the markov variant, config asks for {cfg.variant!r}.")
    return _solve(cfg, prior, s, cb, dec, prob, rng, corruption)


def solve(
    cfg: SolverConfig,
    prior: DenoisingPrior,
    s: TransitionSchedule,
    cb: Codebook,
    dec: Decoder,
    prob: LinearProblem,
    rng: Optional[np.random.Generator] = None,
    corruption: Optional[Corruption] = None,
) -> SolveResult:
    """Dispatch on ``cfg.variant``."""
    runner = g2d2_solve if cfg.variant == "star" else g2d2_markov_solve
    return runner(cfg, prior, s, cb, dec, prob, rng, corruption)
