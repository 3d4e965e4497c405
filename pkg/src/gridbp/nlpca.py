"""Latent-manifold decoder: a small feed-forward net whose inputs are learned.

The decoder maps a low dimensional code ``z`` through one sigmoid hidden
layer to the full output vector. Training fits weights and per-sample codes
jointly by gradient descent on a masked squared error; encoding a new point
is gradient descent on ``z`` alone with the missing output components simply
dropped from the objective.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import (
    DegenerateModelError,
    InversionDivergenceError,
    SchemaError,
    TrainingError,
)
from .gaussian import CONDITION_LIMIT, RIDGE_SCALE, robust_solve, symmetrize

MODEL_FORMAT = "gridbp-decoder"
MODEL_VERSION = 1

DEFAULT_INVERT_STEPS = 500
DEFAULT_INVERT_LR = 0.05
MAX_CONSECUTIVE_REJECTS = 5
_ACCEPT_SLACK = 1e-12
_CONVERGE_RTOL = 1e-9
_STEP_TOL = 1e-9


def _sigmoid(x: np.ndarray) -> np.ndarray:
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, ex) / (1.0 + ex)


def _as_noise_matrix(noise, dim: int) -> np.ndarray:
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 0:
        noise = np.eye(dim) * float(noise)
    elif noise.ndim == 1:
        if noise.shape[0] != dim:
            raise ValueError(f"noise vector has length {noise.shape[0]}, expected {dim}")
        noise = np.diag(noise)
    elif noise.shape != (dim, dim):
        raise ValueError(f"noise covariance has shape {noise.shape}, expected ({dim},{dim})")
    if np.diag(noise).min() <= 0:
        raise ValueError("noise covariance must be positive definite")
    return symmetrize(noise)


@dataclass(frozen=True)
class DecoderNetwork:
    """Decoder weights plus the output-noise model and training context.

    ``train_inputs`` (NaN where a sample component was unobserved) and
    ``train_codes`` support nearest-neighbour warm starts for inversion.
    """

    w1: np.ndarray  # (hidden, latent)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (output, hidden)
    b2: np.ndarray  # (output,)
    noise_cov: np.ndarray  # (output, output)
    train_inputs: Optional[np.ndarray] = None
    train_codes: Optional[np.ndarray] = None
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        w1 = np.atleast_2d(np.asarray(self.w1, dtype=float))
        b1 = np.asarray(self.b1, dtype=float).reshape(-1)
        w2 = np.atleast_2d(np.asarray(self.w2, dtype=float))
        b2 = np.asarray(self.b2, dtype=float).reshape(-1)
        if w1.shape[0] != b1.shape[0]:
            raise ValueError("w1 rows and b1 length disagree")
        if w2.shape[1] != w1.shape[0]:
            raise ValueError("w2 columns must match the hidden width")
        if w2.shape[0] != b2.shape[0]:
            raise ValueError("w2 rows and b2 length disagree")
        for name, arr in (("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        noise = _as_noise_matrix(self.noise_cov, w2.shape[0])
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b2", b2)
        object.__setattr__(self, "noise_cov", noise)

    @property
    def latent_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[0]


def param_count(output_dim: int) -> int:
    """Decoder weight count at the default sizing (latent = output//2,
    hidden = output); the learned code inputs are excluded."""
    d = int(output_dim)
    if d < 1:
        raise ValueError("output dimension must be at least 1")
    q = d // 2
    if q < 1:
        raise ValueError(f"no latent dimension available for output dim {d}")
    m = d
    return q * m + m + m * d + d


def decode(net: DecoderNetwork, z) -> np.ndarray:
    """Forward pass; accepts a single code ``(q,)`` or a batch ``(n, q)``."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = np.atleast_2d(z)
    if zz.shape[1] != net.latent_dim:
        raise ValueError(f"code has length {zz.shape[1]}, expected {net.latent_dim}")
    out = _sigmoid(zz @ net.w1.T + net.b1) @ net.w2.T + net.b2
    return out[0] if single else out


def jacobian(net: DecoderNetwork, z) -> np.ndarray:
    """Derivative of the decoder output with respect to the code, (d, q)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != net.latent_dim:
        raise ValueError(f"code has length {z.shape[0]}, expected {net.latent_dim}")
    s = _sigmoid(net.w1 @ z + net.b1)
    return (net.w2 * (s * (1.0 - s))) @ net.w1


def _observed_mask(observed, dim: int) -> np.ndarray:
    if observed is None:
        return np.ones(dim, dtype=bool)
    observed = np.asarray(observed, dtype=bool).reshape(-1)
    if observed.shape[0] != dim:
        raise ValueError(f"mask has length {observed.shape[0]}, expected {dim}")
    return observed


def _nearest_code(net: DecoderNetwork, x: np.ndarray, observed: np.ndarray) -> np.ndarray:
    samples, codes = net.train_inputs, net.train_codes
    valid = observed[None, :] & np.isfinite(samples)
    counts = valid.sum(axis=1)
    diff = np.where(valid, samples - x[None, :], 0.0)
    scores = (diff * diff).sum(axis=1) / np.maximum(counts, 1)
    scores[counts == 0] = np.inf
    best = int(np.argmin(scores))
    if not np.isfinite(scores[best]):
        return np.zeros(net.latent_dim)
    return codes[best].astype(float).copy()


def invert(
    net: DecoderNetwork,
    x,
    observed=None,
    z0=None,
    steps: int = DEFAULT_INVERT_STEPS,
    lr: float = DEFAULT_INVERT_LR,
) -> np.ndarray:
    """Estimate the code whose decoding matches the observed components of ``x``.

    Minimizes ``sum_observed (x_i - decode(z)_i)^2 / noise_ii`` with damped
    Gauss-Newton steps (the damping relaxes toward pure Gauss-Newton on
    success and tightens toward gradient descent on any loss increase, which
    keeps the recorded loss monotone). Masked components never enter the
    objective, so their values are irrelevant.

    Args:
        x: full-length vector; only entries where ``observed`` is True are read.
        observed: boolean availability mask (default: everything observed).
        z0: starting code; defaults to the code of the nearest stored training
            sample in the observed coordinates (zeros if none are stored).
        lr: step-control knob; smaller values start with heavier damping.

    Raises:
        InversionDivergenceError: no finite descent step exists.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    obs = _observed_mask(observed, net.output_dim)
    if not obs.any():
        raise ValueError("inversion needs at least one observed component")
    if z0 is None:
        if net.train_codes is not None and net.train_inputs is not None:
            z = _nearest_code(net, x, obs)
        else:
            z = np.zeros(net.latent_dim)
    else:
        z = np.asarray(z0, dtype=float).reshape(-1).copy()
        if z.shape[0] != net.latent_dim:
            raise ValueError(f"z0 has length {z.shape[0]}, expected {net.latent_dim}")

    idx = np.flatnonzero(obs)
    target = x[idx]
    weights = 1.0 / np.diag(net.noise_cov)[idx]
    w2_obs = net.w2[idx]
    b2_obs = net.b2[idx]
    w1, b1 = net.w1, net.b1
    q = net.latent_dim
    eye = np.eye(q)

    def evaluate(code):
        s = _sigmoid(w1 @ code + b1)
        resid = target - (w2_obs @ s + b2_obs)
        value = float(np.dot(weights * resid, resid))
        jac = (w2_obs * (s * (1.0 - s))) @ w1  # observed rows of the Jacobian
        return value, resid, jac

    loss, resid, jac = evaluate(z)
    if not np.isfinite(loss):
        raise InversionDivergenceError(
            f"loss is non-finite at the starting code (loss={loss})"
        )
    damping = 1e-3 / max(float(lr), 1e-6)
    radius = 2.0 * (1.0 + float(np.abs(z).max(initial=0.0)))  # trust region, inf-norm
    rejects = 0
    last_reject = np.inf
    trace = [loss]
    for _ in range(int(steps)):
        grad = jac.T @ (weights * resid)  # half of the true gradient, sign flipped
        gscale = max(np.abs(weights * resid * resid).sum(), 1.0)
        if np.abs(grad).max(initial=0.0) <= 1e-12 * gscale:
            break
        gn = jac.T @ (weights[:, None] * jac)
        # Marquardt scaling: damp each direction relative to its own curvature
        diag = np.maximum(np.diag(gn), 1e-12 * max(np.diag(gn).max(), 1e-300))
        try:
            step = np.linalg.solve(gn + damping * np.diag(diag), grad)
        except np.linalg.LinAlgError:
            step = grad / (damping * diag)
        size = float(np.abs(step).max(initial=0.0))
        if size > radius:  # a damped step is always a descent direction, so a
            step = step * (radius / size)  # short enough one must improve
        trial = z + step
        trial_loss, trial_resid, trial_jac = evaluate(trial)
        if not np.isfinite(trial_loss) or trial_loss > loss * (1.0 + _ACCEPT_SLACK):
            if np.isfinite(trial_loss) and abs(trial_loss - loss) <= 1e-8 * (1.0 + loss):
                break  # flat to numerical precision: converged, not diverging
            damping = max(damping * 10.0, 1.0)
            radius *= 0.2
            # only a stalled rejection streak counts toward divergence; while
            # the rejected trials keep improving the damping search is healthy
            if not np.isfinite(trial_loss) or trial_loss >= last_reject:
                rejects += 1
            else:
                rejects = 1
            last_reject = trial_loss
            trace.append(trial_loss)
            if rejects >= MAX_CONSECUTIVE_REJECTS:
                raise InversionDivergenceError(
                    f"no descent step found after {rejects} stalled damping "
                    f"increases; loss trace {trace[-6:]}"
                )
            continue
        rejects = 0
        last_reject = np.inf
        improvement = loss - trial_loss
        z, loss, resid, jac = trial, trial_loss, trial_resid, trial_jac
        trace.append(loss)
        damping = max(damping * 0.3, 1e-9)
        radius = min(radius * 1.5, 1e3)
        if improvement <= _CONVERGE_RTOL * (1.0 + loss) or size <= _STEP_TOL:
            break
    return z


def reconstruct(net: DecoderNetwork, x, observed=None, **invert_kwargs) -> np.ndarray:
    """Full-length reconstruction of ``x`` from its observed components."""
    return decode(net, invert(net, x, observed, **invert_kwargs))


def factor_covariance(net: DecoderNetwork, z, observed=None):
    """Curvature statistics of a solved inversion.

    Returns ``(latent_cov, output_cov, sensitivity)`` where

    * ``latent_cov``  = (H~' R~^-1 H~)^-1 over the observed rows ``H~``,
    * ``output_cov``  = H latent_cov H' + R, the reconstruction uncertainty,
    * ``sensitivity`` = d(reconstruction)/d(input), a (d, d) matrix with zero
      columns at the unobserved inputs.
    """
    obs = _observed_mask(observed, net.output_dim)
    if not obs.any():
        raise ValueError("factor statistics need at least one observed component")
    H = jacobian(net, z)
    idx = np.flatnonzero(obs)
    H_obs = H[idx]
    R_obs = net.noise_cov[np.ix_(idx, idx)]
    ri_h = robust_solve(R_obs, H_obs, name="observed noise block")
    info = symmetrize(H_obs.T @ ri_h)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        info = info + (RIDGE_SCALE * max(np.trace(info), 0.0) / info.shape[0]) * np.eye(
            info.shape[0]
        )
        cond = np.linalg.cond(info)
        if not np.isfinite(cond) or cond > 1e14:
            raise DegenerateModelError(
                "observed-row Jacobian is rank deficient "
                f"({idx.size} rows for {net.latent_dim} latent dims)"
            )
    latent_cov = symmetrize(np.linalg.inv(info))
    output_cov = symmetrize(H @ latent_cov @ H.T + net.noise_cov)
    sensitivity = np.zeros((net.output_dim, net.output_dim))
    sensitivity[:, idx] = H @ latent_cov @ ri_h.T
    return latent_cov, output_cov, sensitivity


def _loss_and_grads(w1, b1, w2, b2, z, x, mask):
    """Masked mean squared error and its gradients for the joint fit."""
    a1 = z @ w1.T + b1
    s = _sigmoid(a1)
    out = s @ w2.T + b2
    err = np.where(mask, out - x, 0.0)
    count = mask.sum()
    loss = float((err * err).sum() / count)
    dout = (2.0 / count) * err
    gw2 = dout.T @ s
    gb2 = dout.sum(axis=0)
    da1 = (dout @ w2) * s * (1.0 - s)
    gw1 = da1.T @ z
    gb1 = da1.sum(axis=0)
    gz = da1 @ w1
    return loss, (gw1, gb1, gw2, gb2, gz)


@dataclass(frozen=True)
class TrainResult:
    network: DecoderNetwork
    codes: np.ndarray
    rmse: float
    history: np.ndarray  # loss of the retained parameters, per epoch


def _pca_codes(xw: np.ndarray, q: int) -> np.ndarray:
    """Principal-component scores as starting codes (zeros stall on the
    bilinear saddle where both codes and inner weights are near zero)."""
    n = xw.shape[0]
    u, s, _ = np.linalg.svd(xw, full_matrices=False)
    k = min(q, s.shape[0])
    z = np.zeros((n, q))
    z[:, :k] = u[:, :k] * s[:k]
    peak = np.abs(z).max()
    if peak > 0:
        z *= 2.0 / peak  # keep first hidden pre-activations in the live range
    return z


def train(
    data,
    observed=None,
    *,
    latent_dim: int | None = None,
    hidden_dim: int | None = None,
    epochs: int = 2000,
    lr: float = 0.01,
    seed: int = 0,
    standardize: bool = False,
    noise_floor=None,
    init: tuple[DecoderNetwork, np.ndarray] | None = None,
    batch_size: int | None = None,
    optimizer: str = "adam",
    code_init: str = "pca",
) -> TrainResult:
    """Fit decoder weights and per-sample codes to (partially) observed data.

    The default optimizer is Adam; ``optimizer="halving"`` selects plain
    gradient descent whose step is halved on any loss increase, making the
    recorded history non-increasing. ``standardize`` whitens each output
    column during optimization and bakes the scaling back into the output
    layer, so the returned network operates in raw units. The fitted
    per-column residual variance (floored by ``noise_floor``) becomes the
    network's output noise.

    Args:
        init: optional ``(network, codes)`` pair to continue training from.
        batch_size: optional mini-batch size (default: full batch).
        code_init: "pca" starts codes at principal-component scores,
            "zero" at the origin.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be a 2-D samples-by-components matrix")
    n, d = x.shape
    if n < 2 or d < 2:
        raise ValueError(f"need at least 2 samples and 2 components, got {x.shape}")
    mask = (
        np.ones((n, d), dtype=bool)
        if observed is None
        else np.asarray(observed, dtype=bool).reshape(n, d)
    )
    if not mask.any():
        raise ValueError("every entry is masked; nothing to fit")
    if not np.all(np.isfinite(np.where(mask, x, 0.0))):
        raise ValueError("observed entries contain non-finite values")
    if optimizer not in ("adam", "halving"):
        raise ValueError(f"unknown optimizer {optimizer!r}")

    q = int(latent_dim) if latent_dim else d // 2
    m = int(hidden_dim) if hidden_dim else d
    if q < 1:
        raise ValueError("latent dimension must be at least 1")

    if standardize:
        counts = np.maximum(mask.sum(axis=0), 1)
        mu = np.where(mask, x, 0.0).sum(axis=0) / counts
        var = np.where(mask, (x - mu) ** 2, 0.0).sum(axis=0) / counts
        sd = np.sqrt(np.maximum(var, 1e-24))
        sd[sd < 1e-12] = 1.0
    else:
        mu = np.zeros(d)
        sd = np.ones(d)
    xw = np.where(mask, (x - mu) / sd, 0.0)

    if init is not None:
        net0, codes0 = init
        if net0.output_dim != d:
            raise ValueError("warm-start network output dim does not match the data")
        q, m = net0.latent_dim, net0.hidden_dim
        w1 = net0.w1.copy()
        b1 = net0.b1.copy()
        w2 = net0.w2 / sd[:, None]
        b2 = (net0.b2 - mu) / sd
        z = np.asarray(codes0, dtype=float).reshape(n, q).copy()
    else:
        rng = np.random.default_rng(seed)
        w1 = rng.uniform(-1.0, 1.0, (m, q)) / np.sqrt(q)
        b1 = np.zeros(m)
        w2 = rng.uniform(-1.0, 1.0, (d, m)) / np.sqrt(m)
        b2 = np.zeros(d)
        z = _pca_codes(xw, q) if code_init == "pca" else np.zeros((n, q))

    if optimizer == "adam":
        params = [w1, b1, w2, b2, z]
        mom = [np.zeros_like(p) for p in params]
        sq = [np.zeros_like(p) for p in params]
        beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
        rng_batch = np.random.default_rng(seed + 1) if batch_size else None
        history = []
        t = 0
        for epoch in range(int(epochs)):
            if batch_size:
                order = rng_batch.permutation(n)
                chunks = [
                    order[s : s + int(batch_size)] for s in range(0, n, int(batch_size))
                ]
            else:
                chunks = [None]
            for rows in chunks:
                if rows is None:
                    loss, grads = _loss_and_grads(*params, xw, mask)
                else:
                    loss, grads = _loss_and_grads(
                        params[0], params[1], params[2], params[3],
                        params[4][rows], xw[rows], mask[rows],
                    )
                if not np.isfinite(loss):
                    raise TrainingError(f"loss became non-finite at epoch {epoch}")
                t += 1
                c1 = 1.0 - beta1**t
                c2 = 1.0 - beta2**t
                for i, g in enumerate(grads):
                    if rows is not None and i == 4:
                        mom[i][rows] = beta1 * mom[i][rows] + (1 - beta1) * g
                        sq[i][rows] = beta2 * sq[i][rows] + (1 - beta2) * g * g
                        params[i][rows] -= (
                            lr * (mom[i][rows] / c1) / (np.sqrt(sq[i][rows] / c2) + adam_eps)
                        )
                    else:
                        mom[i] = beta1 * mom[i] + (1 - beta1) * g
                        sq[i] = beta2 * sq[i] + (1 - beta2) * g * g
                        params[i] = params[i] - lr * (mom[i] / c1) / (
                            np.sqrt(sq[i] / c2) + adam_eps
                        )
            full_loss, _ = _loss_and_grads(*params, xw, mask)
            if not np.isfinite(full_loss):
                raise TrainingError(f"loss became non-finite at epoch {epoch}")
            history.append(full_loss)
        w1, b1, w2, b2, z = params
    elif batch_size:
        rng_batch = np.random.default_rng(seed + 1)
        history = []
        for epoch in range(int(epochs)):
            order = rng_batch.permutation(n)
            for start in range(0, n, int(batch_size)):
                rows = order[start : start + int(batch_size)]
                loss, (gw1, gb1, gw2, gb2, gz) = _loss_and_grads(
                    w1, b1, w2, b2, z[rows], xw[rows], mask[rows]
                )
                if not np.isfinite(loss):
                    raise TrainingError(f"loss became non-finite at epoch {epoch}")
                w1 -= lr * gw1
                b1 -= lr * gb1
                w2 -= lr * gw2
                b2 -= lr * gb2
                z[rows] -= lr * gz
            full_loss, _ = _loss_and_grads(w1, b1, w2, b2, z, xw, mask)
            if not np.isfinite(full_loss):
                raise TrainingError(f"loss became non-finite at epoch {epoch}")
            history.append(full_loss)
    else:
        loss, grads = _loss_and_grads(w1, b1, w2, b2, z, xw, mask)
        if not np.isfinite(loss):
            raise TrainingError("loss is non-finite at initialization")
        history = [loss]
        for epoch in range(int(epochs)):
            gw1, gb1, gw2, gb2, gz = grads
            trial = (
                w1 - lr * gw1,
                b1 - lr * gb1,
                w2 - lr * gw2,
                b2 - lr * gb2,
                z - lr * gz,
            )
            trial_loss, trial_grads = _loss_and_grads(*trial, xw, mask)
            if not np.isfinite(trial_loss):
                raise TrainingError(f"loss became non-finite at epoch {epoch}")
            if trial_loss > loss * (1.0 + _ACCEPT_SLACK):
                lr *= 0.5
                history.append(loss)
                if lr < 1e-14:
                    break
                continue
            w1, b1, w2, b2, z = trial
            loss, grads = trial_loss, trial_grads
            history.append(loss)

    out_raw = (_sigmoid(z @ w1.T + b1) @ w2.T + b2) * sd + mu
    resid = np.where(mask, out_raw - x, 0.0)
    counts = np.maximum(mask.sum(axis=0), 1)
    col_var = (resid * resid).sum(axis=0) / counts
    floor = np.full(d, 1e-12) if noise_floor is None else np.broadcast_to(
        np.asarray(noise_floor, dtype=float), (d,)
    )
    noise = np.maximum(col_var, np.maximum(floor, 1e-12))
    final_rmse = float(np.sqrt((resid * resid).sum() / mask.sum()))

    samples = np.where(mask, x, np.nan)
    net = DecoderNetwork(
        w1=w1,
        b1=b1,
        w2=sd[:, None] * w2,
        b2=sd * b2 + mu,
        noise_cov=np.diag(noise),
        train_inputs=samples,
        train_codes=z.copy(),
        meta={
            "seed": int(seed),
            "epochs": int(epochs),
            "final_rmse": final_rmse,
            "standardized": bool(standardize),
            "version": MODEL_VERSION,
        },
    )
    return TrainResult(net, z.copy(), final_rmse, np.asarray(history))


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(spec: dict) -> np.ndarray:
    raw = base64.b64decode(spec["data"])
    return np.frombuffer(raw, dtype=np.float64).reshape(spec["shape"]).copy()


def save_model(net: DecoderNetwork, path) -> None:
    """Write a decoder to a single deterministic JSON artifact."""
    arrays = {
        "w1": net.w1,
        "b1": net.b1,
        "w2": net.w2,
        "b2": net.b2,
        "noise_cov": net.noise_cov,
    }
    if net.train_inputs is not None:
        arrays["train_inputs"] = net.train_inputs
    if net.train_codes is not None:
        arrays["train_codes"] = net.train_codes
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": {
            "latent": net.latent_dim,
            "hidden": net.hidden_dim,
            "output": net.output_dim,
        },
        "arrays": {k: _encode_array(v) for k, v in sorted(arrays.items())},
        "meta": dict(net.meta),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> DecoderNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise SchemaError(f"{path}: unknown format {doc.get('format')!r}")
    if doc.get("version") != MODEL_VERSION:
        raise SchemaError(
            f"{path}: unsupported model version {doc.get('version')!r}"
        )
    try:
        arrays = {k: _decode_array(v) for k, v in doc["arrays"].items()}
        return DecoderNetwork(
            w1=arrays["w1"],
            b1=arrays["b1"],
            w2=arrays["w2"],
            b2=arrays["b2"],
            noise_cov=arrays["noise_cov"],
            train_inputs=arrays.get("train_inputs"),
            train_codes=arrays.get("train_codes"),
            meta=doc.get("meta", {}),
        )
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed model artifact ({exc})") from exc
