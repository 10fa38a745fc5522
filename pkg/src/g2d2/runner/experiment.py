"""Seed-parallel experiment runner and CSV reporting."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from g2d2.core.decoder import (
    Codebook,
    Decoder,
    LinearDecoder,
    hard_decode,
    random_codebook,
    random_linear_decoder,
    random_mlp_decoder,
)
from g2d2.core.metrics import evaluate
from g2d2.core.noise_process import TransitionSchedule, build_schedule
from g2d2.core.operators import (
    BlurOperator,
    DownsampleOperator,
    IdentityOperator,
    LinearOperator,
    MaskingOperator,
    MatrixOperator,
    MeasurementModel,
    simulate_measurement,
)
from g2d2.core.prior import (
    DenoisingPrior,
    ProductMarginalDenoiser,
    TabularDenoiser,
    TabularJointPrior,
    UniformDenoiser,
    dirichlet_prior,
    independent_prior,
    markov_chain_prior,
)
from g2d2.core.sampler import Trajectory, early_error_injector, solve
from g2d2.runner.config import ExperimentConfig, OperatorSpec, load_config

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "seed",
    "variant",
    "T",
    "inner_iters",
    "gamma",
    "eta_kl_base",
    "lr_base",
    "psnr_db",
    "mse",
    "token_accuracy",
    "final_loss",
    "wall_ms",
)

# Columns that legitimately differ between identical runs.
TIMING_COLUMNS = ("wall_ms",)

TRAJECTORY_COLUMNS = ("t", "z_t", "z_prev", "alpha_argmax", "alpha_max", "final_loss", "lr", "eta_kl", "remasked")


@dataclass(frozen=True)
class Problem:
    """Everything fixed across seeds: the prior, the forward process and the measurement model."""

    prior: TabularJointPrior
    denoiser: DenoisingPrior
    schedule: TransitionSchedule
    codebook: Codebook
    decoder: Decoder
    measurement: MeasurementModel


@dataclass(frozen=True)
class SeedResult:
    row: Dict[str, Any]
    trajectory: Optional[Trajectory] = None


def build_operator(spec: OperatorSpec, d_x0: int) -> LinearOperator:
    if spec.name == "identity":
        return IdentityOperator(d_x0)
    if spec.name == "inpainting":
        return MaskingOperator(d_x0, spec.kept or [])
    if spec.name == "downsample":
        return DownsampleOperator(d_x0, spec.factor)
    if spec.name == "blur":
        return BlurOperator(d_x0, spec.blur_len, spec.blur_std)
    return MatrixOperator(np.asarray(spec.matrix, dtype=float))


def problem_from_config(cfg: ExperimentConfig) -> Problem:
    """Build the seed-independent parts of an experiment; deterministic in the config."""
    p = cfg.prior
    if p.kind == "independent":
        rows = p.rows
        if rows is None:
            rows = np.random.default_rng(p.seed).dirichlet(np.full(p.K, p.concentration), size=p.d_z)
        prior = independent_prior(np.asarray(rows, dtype=float))
    elif p.kind == "markov_chain":
        prior = markov_chain_prior(p.K, p.d_z, p.coupling)
    else:
        prior = dirichlet_prior(p.K, p.d_z, np.random.default_rng(p.seed), p.concentration)

    sch = cfg.schedule
    schedule = build_schedule(
        cfg.solver.T, p.K, sch.alpha_bar_1, sch.alpha_bar_T, sch.gamma_bar_1, sch.gamma_bar_T
    )

    cb_spec = cfg.codebook
    if cb_spec.vectors is not None:
        codebook = Codebook(np.asarray(cb_spec.vectors, dtype=float))
    else:
        codebook = random_codebook(np.random.default_rng(cb_spec.seed), p.K, cb_spec.d_b, cb_spec.scale)

    dec_spec = cfg.decoder
    dec_rng = np.random.default_rng(dec_spec.seed)
    if dec_spec.kind == "identity":
        decoder: Decoder = LinearDecoder.identity(p.d_z, cb_spec.d_b)
    elif dec_spec.kind == "linear":
        decoder = random_linear_decoder(dec_rng, p.d_z, cb_spec.d_b, cfg.d_x0, dec_spec.scale)
    else:
        decoder = random_mlp_decoder(dec_rng, p.d_z, cb_spec.d_b, cfg.d_x0, dec_spec.hidden, dec_spec.scale)

    if cfg.denoiser == "exact":
        denoiser: DenoisingPrior = TabularDenoiser(prior, schedule)
    elif cfg.denoiser == "marginal":
        denoiser = ProductMarginalDenoiser(prior.marginals().probs)
    else:
        denoiser = UniformDenoiser(p.d_z, p.K)

    measurement = MeasurementModel(build_operator(cfg.operator, decoder.d_x0), cfg.operator.sigma_eta)
    return Problem(prior, denoiser, schedule, codebook, decoder, measurement)


def run_seed(
    cfg: ExperimentConfig, seed: int, problem: Optional[Problem] = None, keep_trajectory: bool = False
) -> SeedResult:
    """Draw z0* and y from ``seed``, run the configured solver, and score it."""
    if problem is None:
        problem = problem_from_config(cfg)
    rng = np.random.default_rng(seed)
    truth = problem.prior.sample(rng)
    x_true = hard_decode(problem.codebook, problem.decoder, truth)
    prob = simulate_measurement(problem.measurement, x_true, rng)
    corruption = None
    if cfg.inject is not None:
        corruption = early_error_injector(truth, cfg.inject.at, cfg.inject.dims)

    solver_cfg = cfg.solver.model_copy(update={"seed": seed})
    start = time.perf_counter()
    result = solve(
        solver_cfg, problem.denoiser, problem.schedule, problem.codebook, problem.decoder, prob, rng, corruption
    )
    wall_ms = (time.perf_counter() - start) * 1000.0
    report = evaluate(result.x0, x_true, result.z0, truth, peak=cfg.peak)
    final = result.trajectory.final_losses()
    row = {
        "seed": seed,
        "variant": solver_cfg.variant,
        "T": solver_cfg.T,
        "inner_iters": solver_cfg.inner_iters,
        "gamma": solver_cfg.gamma,
        "eta_kl_base": solver_cfg.eta_kl_base,
        "lr_base": solver_cfg.lr_base,
        "psnr_db": report.psnr,
        "mse": report.mse,
        "token_accuracy": report.token_accuracy,
        "final_loss": float(final[-1]) if final.size else float("nan"),
        "wall_ms": wall_ms,
    }
    logger.info(
        "seed %d (%s): psnr %.3f dB, token accuracy %.3f, %.1f ms",
        seed,
        solver_cfg.variant,
        report.psnr,
        report.token_accuracy,
        wall_ms,
    )
    return SeedResult(row, result.trajectory if keep_trajectory else None)


def _seed_task(args: tuple) -> SeedResult:
    cfg, seed, keep_trajectory = args
    return run_seed(cfg, seed, keep_trajectory=keep_trajectory)


def run_experiment(
    cfg: Union[ExperimentConfig, str, Path],
    workers: int = 1,
    seed_offset: int = 0,
    out: Union[str, Path, None] = None,
    trajectory_out: Union[str, Path, None] = None,
) -> List[Dict[str, Any]]:
    """Run every configured seed and write the CSV; rows come back in seed-list order.

    ``out`` falls back to ``cfg.out``. With ``workers > 1`` seeds go to a process
    pool; rows are still collected and written by this process only.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}.")
    seeds = [seed + seed_offset for seed in cfg.seeds]
    keep = [trajectory_out is not None and i == 0 for i in range(len(seeds))]
    logger.info("Running %d seeds with %d worker(s)", len(seeds), workers)

    if workers == 1 or len(seeds) == 1:
        problem = problem_from_config(cfg)
        results = [run_seed(cfg, seed, problem, k) for seed, k in zip(seeds, keep)]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            results = list(pool.map(_seed_task, [(cfg, seed, k) for seed, k in zip(seeds, keep)]))

    rows = [r.row for r in results]
    target = out if out is not None else cfg.out
    if target is not None:
        write_csv(rows, target)
    if trajectory_out is not None and results[0].trajectory is not None:
        write_csv(results[0].trajectory.to_records(), trajectory_out, TRAJECTORY_COLUMNS)
    return rows


def run_forget_ablation(
    cfg: Union[ExperimentConfig, str, Path],
    gammas: Sequence[float] = (0.3, 0.0),
    seed_offset: int = 0,
) -> Dict[float, np.ndarray]:
    """Per-seed mean of the final per-step losses for each forget coefficient.

    Seeds are paired: every gamma sees the same z0*, y and random stream, and
    only ``solver.gamma`` changes. gamma = 0 starts each step from the denoiser
    output alone.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    if cfg.solver.inner_iters < 1:
        raise ValueError("The forget ablation compares optimized losses; inner_iters must be at least 1.")
    seeds = [seed + seed_offset for seed in cfg.seeds]
    problem = problem_from_config(cfg)
    out: Dict[float, np.ndarray] = {}
    for gamma in gammas:
        arm = cfg.model_copy(update={"solver": cfg.solver.model_copy(update={"gamma": float(gamma)})})
        means = [run_seed(arm, seed, problem, keep_trajectory=True).trajectory.final_losses().mean() for seed in seeds]
        out[float(gamma)] = np.asarray(means, dtype=float)
        logger.info("gamma %.2f: mean final loss %.4g over %d seeds", gamma, out[float(gamma)].mean(), len(seeds))
    return out


def _format(value: Any) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_csv(
    rows: Iterable[Dict[str, Any]],
    target: Union[str, Path, IO[str]],
    columns: Sequence[str] = CSV_COLUMNS,
) -> None:
    """Header plus one line per row, fixed column order; floats use ``repr`` for exact reruns."""
    if isinstance(target, (str, Path)):
        path = Path(target)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            _write_rows(rows, f, columns)
        logger.info("Wrote %s", path)
    else:
        _write_rows(rows, target, columns)


def _write_rows(rows: Iterable[Dict[str, Any]], f: IO[str], columns: Sequence[str]) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_format(row[c]) for c in columns])
