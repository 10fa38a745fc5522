"""Verification suites run by ``g2d2 verify``: oracle identities and numerical checks."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from g2d2.core.decoder import random_codebook, random_linear_decoder, random_mlp_decoder
from g2d2.core.noise_process import cumulative_matrix, single_step_matrix
from g2d2.core.objective import ObjectiveConfig, draw_gumbel, gradient_relative_error
from g2d2.core.operators import LinearProblem
from g2d2.core.optimizer import schedule_weight
from g2d2.core.oracle import (
    check_lemma1_decomposition,
    check_theorem1,
    enumerate_posterior,
    enumerate_star_decomp_marginal,
    exact_conditional_parameters,
    random_instance,
    random_operator,
    random_schedule,
    random_variational_parameters,
)
from g2d2.core.types import CategoricalField, TokenField

logger = logging.getLogger(__name__)

SCHEDULE_TOL = 1e-12
MARGINAL_TOL = 1e-10
THEOREM_TOL = 1e-8
OPTIMUM_TOL = 1e-10
DECOMP_TOL = 1e-9
GRADIENT_TOL = 1e-4


@dataclass(frozen=True)
class VerificationResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    @classmethod
    def at_most(cls, name: str, value: float, tolerance: float, detail: str = "") -> "VerificationResult":
        return cls(name, float(value), tolerance, bool(value <= tolerance), detail)


def _tiny_shape(rng: np.random.Generator) -> Dict[str, int]:
    return {"K": int(rng.integers(2, 4)), "d_z": int(rng.integers(1, 3)), "T": int(rng.integers(1, 5))}


def verify_schedule(rng: np.random.Generator, lam: float = 0.0) -> List[VerificationResult]:
    """Closed-form cumulative matrices against explicit per-step products."""
    worst = 0.0
    count = 0
    for K in range(2, 9):
        for T in range(2, 21):
            s = random_schedule(rng, T, K)
            product = np.eye(K + 1)
            for t in range(1, T + 1):
                product = single_step_matrix(s, t) @ product
                worst = max(worst, float(np.abs(product - cumulative_matrix(s, t)).max()))
            count += 1
    weights = [schedule_weight(t, 10, lam) for t in range(0, 11)]
    results = [
        VerificationResult.at_most("closed_form", worst, SCHEDULE_TOL, f"{count} schedules"),
    ]
    if lam == 0.0:
        results.append(
            VerificationResult.at_most("weights_flat", max(abs(w - 1.0) for w in weights), 0.0, "lambda = 0")
        )
    else:
        increasing = all(b > a for a, b in zip(weights, weights[1:])) if lam > 0 else True
        results.append(
            VerificationResult("weights_monotone", float(weights[-1]), 0.0, increasing, f"lambda = {lam}")
        )
    return results


def verify_lemma_marginal(rng: np.random.Generator, n: int = 20) -> List[VerificationResult]:
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng, **_tiny_shape(rng))
        exact = enumerate_posterior(inst.prior, inst.codebook, inst.decoder, inst.problem)
        chain = enumerate_star_decomp_marginal(inst.prior, inst.schedule, inst.codebook, inst.decoder, inst.problem)
        worst = max(worst, exact.tv(chain))
    return [VerificationResult.at_most("tv", worst, MARGINAL_TOL, f"{n} instances")]


def verify_theorem1(rng: np.random.Generator, n: int = 50) -> List[VerificationResult]:
    worst_gap = -np.inf
    for i in range(n):
        inst = random_instance(rng, **_tiny_shape(rng))
        alpha = random_variational_parameters(
            rng, inst.schedule.T, inst.prior.K, inst.prior.d_z, degenerate=(i % 10 == 9)
        )
        lhs, rhs = check_theorem1(inst.prior, inst.schedule, inst.codebook, inst.decoder, inst.problem, alpha)
        worst_gap = max(worst_gap, lhs - rhs)

    inst = random_instance(rng, K=3, d_z=2, T=4, product_form=True)
    alpha = exact_conditional_parameters(inst.prior, inst.schedule, inst.codebook, inst.decoder, inst.problem)
    lhs, rhs = check_theorem1(inst.prior, inst.schedule, inst.codebook, inst.decoder, inst.problem, alpha)
    return [
        VerificationResult.at_most("bound", worst_gap, THEOREM_TOL, f"max lhs - rhs over {n} draws"),
        VerificationResult.at_most("optimum", max(lhs, rhs), OPTIMUM_TOL, "exact conditionals, product form"),
    ]


def verify_lemma_decomp(rng: np.random.Generator, n: int = 20) -> List[VerificationResult]:
    worst = 0.0
    for _ in range(n):
        shape = _tiny_shape(rng)
        inst = random_instance(rng, **shape)
        s = inst.schedule
        t = int(rng.integers(1, s.T + 1))
        zt = TokenField(rng.integers(0, s.K + 1, size=inst.prior.d_z), s.K)
        alpha = CategoricalField(rng.dirichlet(np.ones(s.K), size=inst.prior.d_z))
        lhs, rhs, _ = check_lemma1_decomposition(
            alpha, inst.prior, inst.problem, inst.codebook, inst.decoder, s, t, zt
        )
        worst = max(worst, abs(lhs - rhs))
    return [VerificationResult.at_most("identity", worst, DECOMP_TOL, f"{n} instances")]


def verify_gradients(rng: np.random.Generator, n: int = 100) -> List[VerificationResult]:
    """Analytic objective gradients against central differences over mixed configurations."""
    operators = ("identity", "inpainting", "downsample", "blur", "zero")
    worst = 0.0
    for i in range(n):
        K = int(rng.integers(2, 5))
        d_z = int(rng.integers(1, 4))
        d_b = int(rng.integers(1, 3))
        d_x0 = 2 * int(rng.integers(2, 4))
        cb = random_codebook(rng, K, d_b)
        if i % 2 == 0:
            dec = random_linear_decoder(rng, d_z, d_b, d_x0)
        else:
            dec = random_mlp_decoder(rng, d_z, d_b, d_x0, hidden=int(rng.integers(3, 8)))
        op = random_operator(rng, operators[i % len(operators)], d_x0)
        prob = LinearProblem(op, rng.standard_normal(op.d_y), sigma_eta=0.1)
        cfg = ObjectiveConfig(
            eta_kl=float(rng.uniform(0.1, 2.0)),
            tau=float(rng.uniform(0.5, 2.0)),
            n_mc=int(rng.integers(1, 3)),
            likelihood_weight=float(rng.uniform(0.1, 2.0)),
            likelihood_form="squared" if i % 4 else "norm",
        )
        prior_out = CategoricalField(rng.dirichlet(np.ones(K), size=d_z))
        logits = rng.standard_normal((d_z, K))
        g = draw_gumbel(rng, cfg, d_z, K)
        worst = max(worst, gradient_relative_error(logits, prior_out, prob, cb, dec, cfg, g))
    return [VerificationResult.at_most("relative_error", worst, GRADIENT_TOL, f"{n} configurations")]


SUITES: Dict[str, Callable[[np.random.Generator], List[VerificationResult]]] = {
    "theorem1": verify_theorem1,
    "lemma_marginal": verify_lemma_marginal,
    "lemma_decomp": verify_lemma_decomp,
    "gradients": verify_gradients,
    "schedule": verify_schedule,
}


def run_suite(name: str, seed: int = 0) -> List[VerificationResult]:
    if name not in SUITES:
        raise ValueError(f"Unknown verification suite {name!r}; choose from {', '.join(SUITES)}.")
    results = SUITES[name](np.random.default_rng(seed))
    for r in results:
        log = logger.info if r.passed else logger.error
        log("verify %s/%s: %.3g (tolerance %.1g) %s", name, r.name, r.value, r.tolerance, r.detail)
    return results
