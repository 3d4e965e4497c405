"""Evaluation tooling: dense oracle, baselines, residual tests, benchmarks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import nlpca
from .builder import ModelBlueprint, build_blueprint, instantiate
from .datagen import KIND_INDEX, KINDS, GridDataset, generate, mask_missing
from .errors import ObservabilityError, SingularMatrixError
from .gaussian import CanonicalGaussian, LinearMap, robust_inv, symmetrize
from .graph import (
    ConditionalFactor,
    FactorGraph,
    JointFactor,
    VariableNode,
    initialize_estimates,
    relinearize,
    schedule,
    sweep,
)
from .partition import PartitionResult
from .seeds import derive_seed, substream
from .trainer import (
    EmConfig,
    em_train,
    evaluate,
    infer_series,
    make_removal_mask,
    prior_means_from_data,
)

SQRT2 = math.sqrt(2.0)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the C library error function."""
    return 0.5 * (1.0 + math.erf(float(x) / SQRT2))


@dataclass(frozen=True)
class ZTestResult:
    z: float
    probability: float
    flagged: bool
    n: int


def z_test(residuals, sigma: float, threshold: float = 0.99) -> ZTestResult:
    """Mean-residual Z test against a model-predicted standard deviation.

    ``z = mean(residual) * sqrt(n) / sigma``; the sensor is flagged when the
    normal probability leaves ``[1 - threshold, threshold]`` on either side.
    """
    residuals = np.asarray(residuals, dtype=float).reshape(-1)
    if residuals.size == 0:
        raise ValueError("need at least one residual")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    z = float(residuals.mean() * math.sqrt(residuals.size) / sigma)
    probability = normal_cdf(z)
    return ZTestResult(
        z=z,
        probability=probability,
        flagged=probability > threshold or probability < 1.0 - threshold,
        n=residuals.size,
    )


def rmse(estimates, truth, mask=None) -> float:
    """Root mean square error over the selected entries."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimates.shape} vs {truth.shape}")
    if mask is None:
        mask = np.ones(estimates.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != estimates.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {estimates.shape}")
    if not mask.any():
        raise ValueError("empty evaluation set")
    err = (estimates - truth)[mask]
    return float(np.sqrt((err * err).mean()))


# ---------------------------------------------------------------------------
# dense oracle


@dataclass(frozen=True)
class DenseSolution:
    means: dict[str, np.ndarray]
    covariances: dict[str, np.ndarray]
    joint_mean: np.ndarray
    joint_cov: np.ndarray
    order: tuple[str, ...]


def dense_solve(graph: FactorGraph, observations=None, **relinearize_kwargs) -> DenseSolution:
    """Stack all linearized factors into one global Gaussian and solve it.

    Uses the same initialization and linearization path as belief propagation,
    so on linear models the two agree exactly; this is the correctness oracle.
    """
    initialize_estimates(graph, observations)
    relinearize(graph, observations, **relinearize_kwargs)
    order = tuple(graph.variables)
    offsets = {}
    pos = 0
    for vid in order:
        offsets[vid] = pos
        pos += graph.variables[vid].dim
    J = np.zeros((pos, pos))
    h = np.zeros(pos)
    for fac in graph.factors.values():
        gidx = np.concatenate(
            [offsets[v] + np.asarray(idx) for v, idx in fac.scope]
        )
        J[np.ix_(gidx, gidx)] += fac.linearized.J
        h[gidx] += fac.linearized.h
    try:
        cov = robust_inv(J, name="global information matrix")
    except SingularMatrixError as exc:
        raise ObservabilityError(f"global system is unobservable: {exc}") from exc
    x0 = np.concatenate([graph.variables[vid].estimate for vid in order])
    mean = x0 + cov @ h
    means = {}
    covs = {}
    for vid in order:
        lo = offsets[vid]
        hi = lo + graph.variables[vid].dim
        means[vid] = mean[lo:hi].copy()
        covs[vid] = symmetrize(cov[lo:hi, lo:hi].copy())
    return DenseSolution(means, covs, mean, symmetrize(cov), order)


# ---------------------------------------------------------------------------
# centralized baseline


@dataclass(frozen=True)
class BaselineResult:
    rmse: float
    parameters: int
    network: nlpca.DecoderNetwork


def centralized_baseline(
    dataset: GridDataset,
    train_hours: Sequence[int],
    eval_hours: Sequence[int],
    removed: np.ndarray,
    *,
    epochs: int = 1500,
    lr: float = 0.1,
    seed: int = 0,
    invert_steps: int = 300,
) -> BaselineResult:
    """One decoder over every variable, scored on the hidden entries.

    The comparator for the factored model: identical sizing rule (latent =
    total/2, hidden = total), trained on the same window, reconstructing each
    evaluation hour from its visible components.
    """
    train_hours = np.asarray(train_hours, dtype=int)
    eval_hours = np.asarray(eval_hours, dtype=int)
    H, B, K = dataset.series.shape
    flat = dataset.series.reshape(H, B * K)
    flat_mask = (dataset.mask & np.isfinite(dataset.series)).reshape(H, B * K)

    sigma = np.array([dataset.noise_sigma[k] for k in KINDS])
    floor = np.tile(sigma**2, B)
    fit = nlpca.train(
        np.where(flat_mask[train_hours], flat[train_hours], 0.0),
        flat_mask[train_hours],
        epochs=epochs,
        lr=lr,
        seed=derive_seed(seed, "centralized"),
        standardize=True,
        noise_floor=floor,
    )
    removed_flat = np.asarray(removed, dtype=bool).reshape(eval_hours.size, B * K)
    truth_src = dataset.ground_truth if dataset.ground_truth is not None else dataset.series
    truth = truth_src[eval_hours].reshape(eval_hours.size, B * K)

    total_sq, count = 0.0, 0
    for row, hour in enumerate(eval_hours):
        visible = flat_mask[hour] & ~removed_flat[row]
        if not visible.any():
            continue
        recon = nlpca.reconstruct(
            fit.network, np.where(visible, flat[hour], 0.0), visible, steps=invert_steps
        )
        score = removed_flat[row] & np.isfinite(truth[row])
        if not score.any():
            continue
        err = (recon - truth[row])[score]
        total_sq += float(err @ err)
        count += int(score.sum())
    if count == 0:
        raise ValueError("no hidden entries to score")
    return BaselineResult(
        rmse=float(np.sqrt(total_sq / count)),
        parameters=nlpca.param_count(B * K),
        network=fit.network,
    )


# ---------------------------------------------------------------------------
# anomaly detection


@dataclass(frozen=True)
class SensorFlag:
    sensor: str
    bus: int
    kind: str
    z: float
    probability: float
    flagged: bool
    sigma: float
    mean_residual: float


def detect_anomalies(
    blueprint: ModelBlueprint,
    models,
    prior_means,
    dataset: GridDataset,
    hours: Sequence[int],
    threshold: float = 0.99,
    config: EmConfig = EmConfig(),
) -> list[SensorFlag]:
    """Z-test every sensor's filtering residual over the window.

    Residual is estimate minus measurement; sigma is the mean posterior
    standard deviation the model reports for that component.
    """
    hours = np.asarray(hours, dtype=int)
    graph = instantiate(blueprint, models, prior_means)
    series = infer_series(blueprint, graph, dataset, hours, config=config)
    flags = []
    for s in blueprint.sensors:
        k = KIND_INDEX[s.kind]
        measured = dataset.series[hours, s.bus, k]
        est = series.estimates[:, s.bus, k]
        sig = series.posterior_std[:, s.bus, k]
        valid = dataset.mask[hours, s.bus, k] & np.isfinite(measured) & np.isfinite(est)
        if not valid.any():
            continue
        sigma = float(np.nanmean(sig[valid]))
        sigma = max(sigma, 1e-12)
        result = z_test(est[valid] - measured[valid], sigma, threshold=threshold)
        flags.append(
            SensorFlag(
                sensor=s.id,
                bus=s.bus,
                kind=s.kind,
                z=result.z,
                probability=result.probability,
                flagged=result.flagged,
                sigma=sigma,
                mean_residual=float((est[valid] - measured[valid]).mean()),
            )
        )
    return flags


# ---------------------------------------------------------------------------
# scalability


def _chain_partition(n_sections: int, buses_per_section: int) -> PartitionResult:
    sections = tuple(
        tuple(range(s * buses_per_section, (s + 1) * buses_per_section))
        for s in range(n_sections)
    )
    assignment = np.repeat(np.arange(n_sections), buses_per_section)
    adjacency = tuple((s, s + 1, 1) for s in range(n_sections - 1))
    return PartitionResult(assignment, sections, adjacency)


def synthetic_chain_graph(
    n_sections: int, buses_per_section: int = 2, seed: int = 0
) -> tuple[ModelBlueprint, FactorGraph]:
    """Chain-structured grid graph with fixed random joint-factor canonicals.

    Used for sweep timing: the joint factors carry preset information forms
    so a sweep exercises pure message passing without decoder inversions.
    """
    blueprint = build_blueprint(_chain_partition(n_sections, buses_per_section))
    rng = substream(seed, "bench-graph")
    variables = [
        VariableNode(v.id, v.dim, labels=v.labels) for v in blueprint.variables
    ]
    factors: list = []
    for s in blueprint.sensors:
        factors.append(
            ConditionalFactor(
                s.id,
                scope=[(s.variable, [s.component])],
                mapping=LinearMap(np.eye(1)),
                noise=np.array([[s.sigma**2]]),
                observation=rng.normal(size=1),
            )
        )
    for j in blueprint.joints:
        fac = JointFactor(j.id, (j.variable_a, j.variable_b), model=None)
        d = j.output_dim
        a = rng.normal(size=(d, d)) / math.sqrt(d)
        fac.linearized = CanonicalGaussian(a.T @ a + 0.1 * np.eye(d), rng.normal(size=d) * 0.1)
        factors.append(fac)
    return blueprint, FactorGraph(variables, factors, strict=True)


def time_sweep(graph: FactorGraph, repeats: int = 30) -> float:
    """Median wall time of one full message schedule plus estimate updates."""
    order = schedule(graph)
    relinearize(graph, None)
    times = []
    for _ in range(int(repeats)):
        t0 = time.perf_counter()
        messages = sweep(graph, order)
        for vid, var in graph.variables.items():
            J = np.zeros((var.dim, var.dim))
            h = np.zeros(var.dim)
            for fid in graph.var_factors[vid]:
                mJ, mh = messages[(fid, vid)]
                J += mJ
                h += mh
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@dataclass(frozen=True)
class ScalingRow:
    sections: int
    variables: int
    graph_parameters: int
    centralized_parameters: int
    sweep_seconds: float
    rmse_at_10pct: Optional[float]


def scaling_benchmark(
    sizes: Sequence[int],
    *,
    buses_per_section: int = 2,
    seed: int = 0,
    with_rmse: bool = False,
    hours: int = 192,
    config: Optional[EmConfig] = None,
    repeats: int = 30,
) -> list[ScalingRow]:
    """Parameter counts, sweep timing, and optional imputation RMSE per size."""
    rows = []
    for size in sizes:
        blueprint, graph = synthetic_chain_graph(size, buses_per_section, seed)
        total = blueprint.total_dim()
        sweep_s = time_sweep(graph, repeats=repeats)
        score = None
        if with_rmse:
            cfg = config or EmConfig(em_iters=1, epochs=600, refine_epochs=200)
            dataset = generate(size * buses_per_section, max(hours, 96), seed)
            train_hours = np.arange(0, int(hours * 0.75))
            eval_hours = np.arange(int(hours * 0.75), hours)
            data_bp = build_blueprint(_chain_partition(size, buses_per_section))
            result = em_train(data_bp, dataset, train_hours, cfg)
            removed = make_removal_mask(dataset, eval_hours, 0.1, derive_seed(seed, "bench-mask"))
            ev = evaluate(
                data_bp, result.models, result.prior_means, dataset, eval_hours, removed, cfg
            )
            score = ev.rmse
        rows.append(
            ScalingRow(
                sections=int(size),
                variables=total,
                graph_parameters=blueprint.graph_parameters(),
                centralized_parameters=nlpca.param_count(total),
                sweep_seconds=sweep_s,
                rmse_at_10pct=score,
            )
        )
    return rows
