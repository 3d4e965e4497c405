"""Expectation-maximization over the grid factor graph.

Iteration 0 fits each pairwise decoder directly to the (possibly masked)
observations. Every later iteration infers full per-hour states with belief
propagation (E-step) and refits each decoder on those states (M-step), with
per-factor rollback whenever the monitored reconstruction error regresses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import nlpca
from .builder import ModelBlueprint
from .datagen import KIND_INDEX, GridDataset
from .graph import FactorGraph, run_inference
from .builder import instantiate
from .seeds import derive_seed


@dataclass(frozen=True)
class EmConfig:
    em_iters: int = 5
    epochs: int = 1500
    refine_epochs: int = 400
    lr: float = 0.1
    seed: int = 0
    max_outer: int = 8
    tol: float = 1e-5
    damping: float = 1.0
    invert_steps: int = 300
    invert_lr: float = 0.05


@dataclass(frozen=True)
class IterationStats:
    index: int
    factor_rmse: dict[str, float]
    mean_rmse: float
    accepted: dict[str, bool]


@dataclass(frozen=True)
class TrainReport:
    iterations: tuple[IterationStats, ...]
    best_iteration: dict[str, int]
    seed: int
    config: dict

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "best_iteration": dict(sorted(self.best_iteration.items())),
            "iterations": [
                {
                    "index": it.index,
                    "mean_rmse": it.mean_rmse,
                    "factor_rmse": dict(sorted(it.factor_rmse.items())),
                    "accepted": dict(sorted(it.accepted.items())),
                }
                for it in self.iterations
            ],
        }


@dataclass(frozen=True)
class EmResult:
    models: dict[str, nlpca.DecoderNetwork]
    prior_means: dict[str, np.ndarray]
    report: TrainReport


def _component_indices(blueprint: ModelBlueprint, components) -> tuple[np.ndarray, np.ndarray]:
    bus = np.array([b for b, _ in components], dtype=int)
    kind = np.array([KIND_INDEX[k] for _, k in components], dtype=int)
    return bus, kind


def _joint_slices(blueprint: ModelBlueprint):
    """Column ranges of each joint factor inside the stacked state matrix."""
    offsets = {}
    pos = 0
    for v in blueprint.variables:
        offsets[v.id] = (pos, pos + v.dim)
        pos += v.dim
    slices = {}
    for j in blueprint.joints:
        a, b = offsets[j.variable_a], offsets[j.variable_b]
        slices[j.id] = (np.r_[a[0] : a[1], b[0] : b[1]], offsets)
    return slices, offsets, pos


def observations_for_hour(
    blueprint: ModelBlueprint, dataset: GridDataset, hour: int, removed=None
) -> dict:
    """Per-sensor observation dict for one hour, honoring the dataset mask.

    ``removed`` optionally hides additional entries (evaluation masking).
    """
    obs = {}
    for s in blueprint.sensors:
        k = KIND_INDEX[s.kind]
        available = bool(dataset.mask[hour, s.bus, k])
        if removed is not None and removed[s.bus, k]:
            available = False
        value = dataset.series[hour, s.bus, k]
        if not np.isfinite(value):
            available = False
        obs[s.id] = (np.array([value if available else np.nan]), np.array([available]))
    return obs


def extract_training_matrix(
    blueprint: ModelBlueprint, dataset: GridDataset, hours: Sequence[int], components
):
    """Measured values and availability for the given (bus, kind) components."""
    bus, kind = _component_indices(blueprint, components)
    hours = np.asarray(hours, dtype=int)
    data = dataset.series[hours[:, None], bus[None, :], kind[None, :]]
    mask = dataset.mask[hours[:, None], bus[None, :], kind[None, :]]
    mask = mask & np.isfinite(data)
    return np.where(mask, data, 0.0), mask


def prior_means_from_data(
    blueprint: ModelBlueprint, dataset: GridDataset, hours: Sequence[int]
) -> dict[str, np.ndarray]:
    means = {}
    for v in blueprint.variables:
        data, mask = extract_training_matrix(blueprint, dataset, hours, v.components)
        counts = np.maximum(mask.sum(axis=0), 1)
        means[v.id] = np.where(mask, data, 0.0).sum(axis=0) / counts
    return means


def _monitored_rmse(net, data, mask, codes, config) -> float:
    """Reconstruction error on the observed measurements; comparable across
    EM iterations because the target never changes."""
    total, count = 0.0, 0
    for i in range(data.shape[0]):
        row_mask = mask[i]
        if not row_mask.any():
            continue
        z = nlpca.invert(
            net,
            data[i],
            row_mask,
            z0=codes[i] if codes is not None else None,
            steps=config.invert_steps,
            lr=config.invert_lr,
        )
        recon = nlpca.decode(net, z)
        resid = (recon - data[i])[row_mask]
        total += float(resid @ resid)
        count += int(row_mask.sum())
    return float(np.sqrt(total / max(count, 1)))


def em_train(
    blueprint: ModelBlueprint,
    dataset: GridDataset,
    hours: Sequence[int],
    config: EmConfig = EmConfig(),
) -> EmResult:
    """Alternate state inference and per-factor decoder fits.

    Returns the per-factor best models (rollback keeps an iteration's fit only
    if the monitored RMSE did not regress) plus a serializable report.
    """
    if config.em_iters < 1:
        raise ValueError("em_iters must be >= 1")
    hours = np.asarray(hours, dtype=int)
    prior_means = prior_means_from_data(blueprint, dataset, hours)

    factor_data = {}
    for j in blueprint.joints:
        comps = blueprint.joint_components(j)
        factor_data[j.id] = extract_training_matrix(blueprint, dataset, hours, comps)

    models: dict[str, nlpca.DecoderNetwork] = {}
    codes: dict[str, np.ndarray] = {}
    best_rmse: dict[str, float] = {}
    best_iter: dict[str, int] = {}
    iterations: list[IterationStats] = []

    # iteration 0: direct fit to observations (identity sensors bootstrap the
    # states, so the measured series are the state samples)
    stats0 = {}
    for j in blueprint.joints:
        data, mask = factor_data[j.id]
        fit = nlpca.train(
            data,
            mask,
            latent_dim=j.latent_dim,
            hidden_dim=j.hidden_dim,
            epochs=config.epochs,
            lr=config.lr,
            seed=derive_seed(config.seed, f"fit/{j.id}"),
            standardize=True,
            noise_floor=np.asarray(j.noise_floor),
        )
        models[j.id] = fit.network
        codes[j.id] = fit.codes
        rmse = _monitored_rmse(fit.network, data, mask, fit.codes, config)
        stats0[j.id] = rmse
        best_rmse[j.id] = rmse
        best_iter[j.id] = 0
    iterations.append(
        IterationStats(
            0,
            stats0,
            float(np.mean(list(stats0.values()))) if stats0 else 0.0,
            {k: True for k in stats0},
        )
    )

    slices, offsets, total_dim = _joint_slices(blueprint)
    for it in range(1, config.em_iters + 1):
        graph = instantiate(blueprint, models, prior_means)
        states = np.zeros((hours.size, total_dim))
        for row, hour in enumerate(hours):
            obs = observations_for_hour(blueprint, dataset, int(hour))
            result = run_inference(
                graph,
                obs,
                max_outer=config.max_outer,
                tol=config.tol,
                damping=config.damping,
                invert_steps=config.invert_steps,
                invert_lr=config.invert_lr,
            )
            for v in blueprint.variables:
                lo, hi = offsets[v.id]
                states[row, lo:hi] = result.estimates[v.id]

        stats = {}
        accepted = {}
        for j in blueprint.joints:
            cols, _ = slices[j.id]
            target = states[:, cols]
            fit = nlpca.train(
                target,
                None,
                epochs=config.refine_epochs,
                lr=config.lr,
                seed=derive_seed(config.seed, f"fit/{j.id}/{it}"),
                standardize=True,
                noise_floor=np.asarray(j.noise_floor),
                init=(models[j.id], codes[j.id]),
            )
            data, mask = factor_data[j.id]
            rmse = _monitored_rmse(fit.network, data, mask, fit.codes, config)
            if rmse <= best_rmse[j.id]:
                models[j.id] = fit.network
                codes[j.id] = fit.codes
                best_rmse[j.id] = rmse
                best_iter[j.id] = it
                stats[j.id] = rmse
                accepted[j.id] = True
            else:  # rollback: keep the previous fit
                stats[j.id] = best_rmse[j.id]
                accepted[j.id] = False
        iterations.append(
            IterationStats(
                it,
                stats,
                float(np.mean(list(stats.values()))) if stats else 0.0,
                accepted,
            )
        )

    report = TrainReport(
        iterations=tuple(iterations),
        best_iteration=best_iter,
        seed=config.seed,
        config={
            "em_iters": config.em_iters,
            "epochs": config.epochs,
            "refine_epochs": config.refine_epochs,
            "lr": config.lr,
            "max_outer": config.max_outer,
            "tol": config.tol,
            "invert_steps": config.invert_steps,
            "invert_lr": config.invert_lr,
        },
    )
    return EmResult(models=models, prior_means=prior_means, report=report)


@dataclass(frozen=True)
class SeriesEstimate:
    """Per-hour estimates and posterior standard deviations, (hours, buses, kinds)."""

    hours: np.ndarray
    estimates: np.ndarray
    posterior_std: np.ndarray
    converged: np.ndarray


def infer_series(
    blueprint: ModelBlueprint,
    graph: FactorGraph,
    dataset: GridDataset,
    hours: Sequence[int],
    removed=None,
    config: EmConfig = EmConfig(),
) -> SeriesEstimate:
    """Run per-hour inference; ``removed[i]`` hides extra (bus, kind) entries."""
    hours = np.asarray(hours, dtype=int)
    shape = (hours.size, dataset.n_buses, len(KIND_INDEX))
    estimates = np.full(shape, np.nan)
    sigma = np.full(shape, np.nan)
    converged = np.zeros(hours.size, dtype=bool)
    comp_maps = {
        v.id: _component_indices(blueprint, v.components) for v in blueprint.variables
    }
    for row, hour in enumerate(hours):
        obs = observations_for_hour(
            blueprint,
            dataset,
            int(hour),
            removed=None if removed is None else removed[row],
        )
        result = run_inference(
            graph,
            obs,
            max_outer=config.max_outer,
            tol=config.tol,
            damping=config.damping,
            invert_steps=config.invert_steps,
            invert_lr=config.invert_lr,
        )
        converged[row] = result.converged
        for v in blueprint.variables:
            bus, kind = comp_maps[v.id]
            estimates[row, bus, kind] = result.estimates[v.id]
            sigma[row, bus, kind] = np.sqrt(
                np.maximum(np.diag(result.covariances[v.id]), 0.0)
            )
    return SeriesEstimate(hours, estimates, sigma, converged)


@dataclass(frozen=True)
class EvalResult:
    rmse: float
    per_kind_rmse: dict[str, float]
    per_variable: dict[str, dict[str, float]]
    n_scored: int
    series: SeriesEstimate
    removed: np.ndarray


def evaluate(
    blueprint: ModelBlueprint,
    models: Mapping[str, nlpca.DecoderNetwork],
    prior_means: Mapping[str, np.ndarray],
    dataset: GridDataset,
    hours: Sequence[int],
    removed: np.ndarray,
    config: EmConfig = EmConfig(),
) -> EvalResult:
    """Hide ``removed`` entries, infer, and score the hidden entries only.

    Scoring compares against ground truth when the dataset carries it,
    otherwise against the measured values.
    """
    hours = np.asarray(hours, dtype=int)
    removed = np.asarray(removed, dtype=bool)
    if removed.shape != (hours.size, dataset.n_buses, len(KIND_INDEX)):
        raise ValueError(f"removed mask has shape {removed.shape}")
    graph = instantiate(blueprint, models, prior_means)
    series = infer_series(blueprint, graph, dataset, hours, removed=removed, config=config)

    truth_src = dataset.ground_truth if dataset.ground_truth is not None else dataset.series
    truth = truth_src[hours]
    score = removed & np.isfinite(truth) & np.isfinite(series.estimates)
    if not score.any():
        raise ValueError("no hidden entries to score")
    err = np.where(score, series.estimates - truth, 0.0)
    rmse = float(np.sqrt((err * err).sum() / score.sum()))

    per_kind = {}
    for kind, k in KIND_INDEX.items():
        sel = score[:, :, k]
        if sel.any():
            e = err[:, :, k][sel]
            per_kind[kind] = float(np.sqrt((e * e).mean()))
    per_variable = {}
    for v in blueprint.variables:
        bus, kind = _component_indices(blueprint, v.components)
        sel = score[:, bus, kind]
        if sel.any():
            e = err[:, bus, kind][sel]
            per_variable[v.id] = {
                "rmse": float(np.sqrt((e * e).mean())),
                "mean_residual": float(e.mean()),
                "count": int(sel.sum()),
            }
    return EvalResult(
        rmse=rmse,
        per_kind_rmse=per_kind,
        per_variable=per_variable,
        n_scored=int(score.sum()),
        series=series,
        removed=removed,
    )


def make_removal_mask(
    dataset: GridDataset, hours: Sequence[int], ratio: float, seed: int
) -> np.ndarray:
    """Random evaluation mask over currently-available entries."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must be in [0, 1), got {ratio}")
    hours = np.asarray(hours, dtype=int)
    rng = np.random.default_rng(derive_seed(seed, "eval-mask"))
    draw = rng.random((hours.size, dataset.n_buses, len(KIND_INDEX)))
    return (draw < ratio) & dataset.mask[hours]
