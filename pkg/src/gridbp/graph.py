"""Factor-graph model with tree message passing in information form.

Variables hold the current state estimate; factors hold a canonical Gaussian
over the correction to it, refreshed by relinearization. Inference repeats
relinearize / sweep / update until the corrections vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import nlpca
from .errors import (
    ObservabilityError,
    SchedulingError,
    ValidationError,
)
from .gaussian import (
    CanonicalGaussian,
    FunctionMap,
    linearize_conditional,
    robust_inv,
    robust_solve,
    symmetrize,
)


def _normalize_indices(indices, dim_hint=None) -> np.ndarray:
    idx = np.asarray(indices, dtype=int).reshape(-1)
    if idx.size == 0:
        raise ValueError("a scope entry must select at least one component")
    if np.unique(idx).size != idx.size:
        raise ValueError("scope component indices must be unique")
    return idx


class VariableNode:
    """A state sub-vector with its running estimate and covariance."""

    def __init__(self, id, dim, labels=None, estimate=None, covariance=None, prior_mean=None):
        self.id = str(id)
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError(f"variable {self.id}: dim must be >= 1")
        if labels is None:
            labels = tuple(f"{self.id}[{i}]" for i in range(self.dim))
        self.labels = tuple(str(x) for x in labels)
        if len(self.labels) != self.dim:
            raise ValueError(f"variable {self.id}: {len(self.labels)} labels for dim {self.dim}")
        self.estimate = (
            np.zeros(self.dim) if estimate is None else np.asarray(estimate, float).reshape(-1)
        )
        self.prior_mean = (
            np.zeros(self.dim) if prior_mean is None else np.asarray(prior_mean, float).reshape(-1)
        )
        self.covariance = (
            np.zeros((self.dim, self.dim))
            if covariance is None
            else symmetrize(np.asarray(covariance, float))
        )
        for name, arr, want in (
            ("estimate", self.estimate, (self.dim,)),
            ("prior_mean", self.prior_mean, (self.dim,)),
            ("covariance", self.covariance, (self.dim, self.dim)),
        ):
            if arr.shape != want:
                raise ValueError(f"variable {self.id}: {name} has shape {arr.shape}, expected {want}")


class ConditionalFactor:
    """Observation factor ``y = f(x_scope) + noise`` over selected components.

    ``scope`` is a sequence of ``(variable id, component indices)`` pairs; the
    mapping acts on the concatenation of the selected sub-vectors.
    """

    kind = "conditional"

    def __init__(self, id, scope, mapping, noise, observation=None, observed=None):
        self.id = str(id)
        self.scope = tuple((str(v), _normalize_indices(idx)) for v, idx in scope)
        if not self.scope:
            raise ValueError(f"factor {self.id}: empty scope")
        self.mapping = mapping
        noise = np.asarray(noise, dtype=float)
        if noise.ndim == 0:
            noise = noise.reshape(1, 1)
        elif noise.ndim == 1:
            noise = np.diag(noise)
        self.noise = symmetrize(noise)
        self.observation = (
            None if observation is None else np.asarray(observation, float).reshape(-1)
        )
        if self.observation is not None and self.observation.shape[0] != self.noise.shape[0]:
            raise ValueError(f"factor {self.id}: observation and noise dims disagree")
        self.observed = None if observed is None else np.asarray(observed, bool).reshape(-1)
        self.linearized: Optional[CanonicalGaussian] = None

    @property
    def scope_dim(self) -> int:
        return sum(idx.size for _, idx in self.scope)


class JointFactor:
    """Pairwise coupling factor backed by a latent-manifold decoder.

    The decoder's reconstruction residual acts as a zero-target pseudo
    measurement over the concatenated scope vector; relinearization solves
    the decoder inversion from the currently observed components.
    """

    kind = "joint"

    def __init__(self, id, scope, model=None):
        self.id = str(id)
        var_ids = tuple(str(v) for v in scope)
        if len(var_ids) < 1:
            raise ValueError(f"factor {self.id}: empty scope")
        self.variable_ids = var_ids
        self.model: Optional[nlpca.DecoderNetwork] = model
        self.scope: tuple = ()  # filled with component index ranges by FactorGraph
        self.linearized: Optional[CanonicalGaussian] = None
        self.cached_cov: Optional[np.ndarray] = None
        self._warm_code: Optional[np.ndarray] = None
        self._relin_cache: Optional[dict] = None

    @property
    def scope_dim(self) -> int:
        return sum(idx.size for _, idx in self.scope)


Factor = Union[ConditionalFactor, JointFactor]


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    problems: tuple[str, ...] = ()


@dataclass(frozen=True)
class Message:
    source: str
    target: str
    payload: CanonicalGaussian


class FactorGraph:
    """Bipartite graph of variables and factors with neighbor indices.

    Structural invariants (acyclicity, joint-degree bound, consistent
    dimensions) are checked on construction; the result is kept in
    ``self.validation`` and enforced by ``strict=True`` or at inference time.
    """

    def __init__(self, variables: Iterable[VariableNode], factors: Iterable[Factor], *, strict=False):
        self.variables: dict[str, VariableNode] = {}
        for var in variables:
            if var.id in self.variables:
                raise ValueError(f"duplicate variable id {var.id!r}")
            self.variables[var.id] = var
        self.factors: dict[str, Factor] = {}
        for fac in factors:
            if fac.id in self.factors:
                raise ValueError(f"duplicate factor id {fac.id!r}")
            if isinstance(fac, JointFactor) and not fac.scope:
                fac.scope = tuple(
                    (v, np.arange(self.variables[v].dim))
                    for v in fac.variable_ids
                    if v in self.variables
                )
            self.factors[fac.id] = fac

        self.var_factors: dict[str, list[str]] = {v: [] for v in self.variables}
        self.factor_vars: dict[str, list[str]] = {}
        for fid, fac in self.factors.items():
            self.factor_vars[fid] = [v for v, _ in fac.scope]
            for v, _ in fac.scope:
                if v in self.var_factors:
                    self.var_factors[v].append(fid)

        self.validation = self._validate()
        self._schedule_cache: Optional[list[tuple[str, str]]] = None
        if strict and not self.validation.ok:
            raise ValidationError("; ".join(self.validation.problems))

    def _validate(self) -> ValidationReport:
        problems: list[str] = []
        for fid, fac in self.factors.items():
            seen_vars = set()
            for v, idx in fac.scope:
                if v not in self.variables:
                    problems.append(f"factor {fid} references unknown variable {v}")
                    continue
                if v in seen_vars:
                    problems.append(f"factor {fid} lists variable {v} twice")
                seen_vars.add(v)
                if idx.min(initial=0) < 0 or idx.max(initial=-1) >= self.variables[v].dim:
                    problems.append(
                        f"factor {fid} selects out-of-range components of {v}"
                    )
            if isinstance(fac, ConditionalFactor):
                try:
                    jac = fac.mapping.jacobian(np.zeros(fac.scope_dim))
                    jac = np.atleast_2d(np.asarray(jac))
                    if jac.shape != (fac.noise.shape[0], fac.scope_dim):
                        problems.append(
                            f"factor {fid}: Jacobian shape {jac.shape} does not match "
                            f"noise dim {fac.noise.shape[0]} and scope dim {fac.scope_dim}"
                        )
                except Exception as exc:  # mapping may reject the probe point
                    problems.append(f"factor {fid}: mapping probe failed ({exc})")
            if isinstance(fac, JointFactor) and fac.model is not None:
                if fac.model.output_dim != fac.scope_dim:
                    problems.append(
                        f"factor {fid}: decoder output dim {fac.model.output_dim} "
                        f"does not match scope dim {fac.scope_dim}"
                    )

        for vid, fids in self.var_factors.items():
            joint_degree = sum(1 for f in fids if isinstance(self.factors[f], JointFactor))
            if joint_degree > 2:
                problems.append(f"variable {vid} has joint-degree {joint_degree} > 2")

        # union-find over the bipartite edges detects cycles
        parent: dict[tuple, tuple] = {}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for vid in self.variables:
            parent[("v", vid)] = ("v", vid)
        for fid in self.factors:
            parent[("f", fid)] = ("f", fid)
        cycle = False
        for fid, fac in self.factors.items():
            for v, _ in fac.scope:
                if v not in self.variables:
                    continue
                ra, rb = find(("f", fid)), find(("v", v))
                if ra == rb:
                    cycle = True
                else:
                    parent[ra] = rb
        if cycle:
            problems.append("graph contains a cycle")

        return ValidationReport(ok=not problems, problems=tuple(problems))

    def scope_vector(self, factor_id: str) -> np.ndarray:
        """Current estimates concatenated over the factor's scope."""
        fac = self.factors[factor_id]
        return np.concatenate(
            [self.variables[v].estimate[idx] for v, idx in fac.scope]
        )


def validate(graph: FactorGraph) -> ValidationReport:
    """Re-run the structural checks and return the report."""
    return graph._validate()


# ---------------------------------------------------------------------------
# observations


def _effective_observation(factor: ConditionalFactor, observations) -> tuple | None:
    """Resolve (values, availability) for a conditional factor for this run."""
    if observations is not None and factor.id in observations:
        entry = observations[factor.id]
        if entry is None:
            return None
        y, observed = entry if isinstance(entry, tuple) else (entry, None)
    else:
        y, observed = factor.observation, factor.observed
    if y is None:
        return None
    y = np.asarray(y, dtype=float).reshape(-1)
    if observed is None:
        observed = np.isfinite(y)
    else:
        observed = np.asarray(observed, dtype=bool).reshape(-1) & np.isfinite(y)
    return y, observed


def observed_component_info(
    graph: FactorGraph, observations
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-variable (mask, values) for components pinned by identity sensors."""
    info = {
        vid: (np.zeros(var.dim, dtype=bool), np.zeros(var.dim))
        for vid, var in graph.variables.items()
    }
    for fid, fac in graph.factors.items():
        if not isinstance(fac, ConditionalFactor):
            continue
        if not getattr(fac.mapping, "is_identity", False) or len(fac.scope) != 1:
            continue
        resolved = _effective_observation(fac, observations)
        if resolved is None:
            continue
        y, observed = resolved
        vid, idx = fac.scope[0]
        mask, values = info[vid]
        mask[idx[observed]] = True
        values[idx[observed]] = y[observed]
    return info


def observed_component_masks(graph: FactorGraph, observations) -> dict[str, np.ndarray]:
    """Per-variable flags for components pinned by an observed identity sensor."""
    return {vid: mask for vid, (mask, _) in observed_component_info(graph, observations).items()}


def initialize_estimates(graph: FactorGraph, observations) -> None:
    """Reset estimates to prior means, overwritten by identity observations."""
    for var in graph.variables.values():
        var.estimate = var.prior_mean.copy()
    for fid, fac in graph.factors.items():
        if not isinstance(fac, ConditionalFactor):
            continue
        if not getattr(fac.mapping, "is_identity", False) or len(fac.scope) != 1:
            continue
        resolved = _effective_observation(fac, observations)
        if resolved is None:
            continue
        y, observed = resolved
        vid, idx = fac.scope[0]
        graph.variables[vid].estimate[idx[observed]] = y[observed]


# ---------------------------------------------------------------------------
# relinearization


def _relinearize_conditional(graph, factor: ConditionalFactor, observations) -> None:
    resolved = _effective_observation(factor, observations)
    dim = factor.scope_dim
    if resolved is None:
        factor.linearized = CanonicalGaussian.zero(dim)
        return
    y, observed = resolved
    rows = np.flatnonzero(observed)
    if rows.size == 0:
        factor.linearized = CanonicalGaussian.zero(dim)
        return
    point = graph.scope_vector(factor.id)
    if (
        getattr(factor.mapping, "is_identity", False)
        and rows.size == dim
        and factor.noise.shape == (dim, dim)
        and dim == 1
    ):
        # fast path for the ubiquitous scalar identity sensor
        j = 1.0 / factor.noise[0, 0]
        factor.linearized = CanonicalGaussian(
            np.array([[j]]), np.array([j * (y[0] - point[0])])
        )
        return
    full_jac = np.atleast_2d(np.asarray(factor.mapping.jacobian(point), dtype=float))
    full_val = np.asarray(factor.mapping(point), dtype=float).reshape(-1)
    # unavailable observation components are dropped rather than zero weighted
    restricted = FunctionMap(lambda x, r=rows: full_val[r], lambda x, r=rows: full_jac[r])
    noise = factor.noise[np.ix_(rows, rows)]
    factor.linearized = linearize_conditional(restricted, noise, y[rows], point)


def _relinearize_joint(
    graph,
    factor: JointFactor,
    scope_obs: np.ndarray,
    scope_values: np.ndarray,
    *,
    invert_steps: int,
    invert_lr: float,
) -> None:
    net = factor.model
    if net is None:
        if factor.linearized is None:
            raise ValidationError(f"joint factor {factor.id} has no decoder model")
        return  # fixed canonical supplied externally (oracle/benchmark graphs)
    point = graph.scope_vector(factor.id)
    cache = factor._relin_cache
    fit_input = np.where(scope_obs, scope_values, 0.0)
    if (
        cache is None
        or not np.array_equal(cache["obs"], scope_obs)
        or not np.array_equal(cache["input"], fit_input)
    ):
        # the decoder fit targets the sensor snapshot, which is constant for
        # one inference run, so everything but the residual can be cached
        if scope_obs.any():
            code = nlpca.invert(
                net, fit_input, scope_obs, z0=factor._warm_code,
                steps=invert_steps, lr=invert_lr,
            )
            _, output_cov, sensitivity = nlpca.factor_covariance(net, code, scope_obs)
        else:
            code = (
                factor._warm_code
                if factor._warm_code is not None
                else np.zeros(net.latent_dim)
            )
            jac = nlpca.jacobian(net, code)
            output_cov = symmetrize(jac @ jac.T + net.noise_cov)
            sensitivity = np.zeros((net.output_dim, net.output_dim))
        factor._warm_code = code
        reconstruction = nlpca.decode(net, code)
        # zero-target pseudo measurement on the reconstruction residual
        # x - g(x): its information pulls unobserved components toward the
        # reconstruction while observed ones stay anchored by their sensors
        residual_jac = np.eye(net.output_dim) - sensitivity
        weighted = residual_jac.T @ robust_inv(
            output_cov, name=f"output covariance of {factor.id}"
        )
        cache = {
            "obs": scope_obs.copy(),
            "input": fit_input,
            "recon": reconstruction,
            "J": symmetrize(weighted @ residual_jac),
            "weighted": weighted,
            "cov": output_cov,
        }
        factor._relin_cache = cache
    factor.linearized = CanonicalGaussian(
        cache["J"], cache["weighted"] @ (cache["recon"] - point)
    )
    factor.cached_cov = cache["cov"]


def relinearize(
    graph: FactorGraph,
    observations=None,
    *,
    invert_steps: int = nlpca.DEFAULT_INVERT_STEPS,
    invert_lr: float = nlpca.DEFAULT_INVERT_LR,
) -> None:
    """Refresh every factor's canonical form at the current estimates."""
    comp_info = observed_component_info(graph, observations)
    for fac in graph.factors.values():
        if isinstance(fac, ConditionalFactor):
            _relinearize_conditional(graph, fac, observations)
        else:
            scope_obs = np.concatenate([comp_info[v][0][idx] for v, idx in fac.scope])
            scope_values = np.concatenate([comp_info[v][1][idx] for v, idx in fac.scope])
            _relinearize_joint(
                graph,
                fac,
                scope_obs,
                scope_values,
                invert_steps=invert_steps,
                invert_lr=invert_lr,
            )


# ---------------------------------------------------------------------------
# messages


def _scope_offsets(factor: Factor):
    offsets = {}
    pos = 0
    for v, idx in factor.scope:
        offsets[v] = (pos, pos + idx.size)
        pos += idx.size
    return offsets


def _payload(entry) -> tuple[np.ndarray, np.ndarray]:
    """Accept raw (J, h) pairs, CanonicalGaussian payloads, or Messages."""
    if isinstance(entry, tuple):
        return entry
    if isinstance(entry, Message):
        return entry.payload.J, entry.payload.h
    return entry.J, entry.h


def _var_to_factor_raw(graph, var_id, factor_id, messages):
    var = graph.variables[var_id]
    J = np.zeros((var.dim, var.dim))
    h = np.zeros(var.dim)
    for fid in graph.var_factors[var_id]:
        if fid == factor_id:
            continue
        entry = messages.get((fid, var_id))
        if entry is None:
            raise SchedulingError(
                f"message {fid}->{var_id} required by {var_id}->{factor_id} is missing"
            )
        mJ, mh = _payload(entry)
        J += mJ
        h += mh
    return J, h


def message_var_to_factor(graph, var_id, factor_id, messages) -> Message:
    """Sum of the payloads arriving from the variable's other factors."""
    J, h = _var_to_factor_raw(graph, var_id, factor_id, messages)
    return Message(var_id, factor_id, CanonicalGaussian(J, h))


def _factor_to_var_raw(graph, factor_id, var_id, messages):
    fac = graph.factors[factor_id]
    if fac.linearized is None:
        raise SchedulingError(f"factor {factor_id} has not been linearized")
    cg = fac.linearized
    offsets = _scope_offsets(fac)
    if var_id not in offsets:
        raise ValueError(f"variable {var_id} is not in the scope of factor {factor_id}")
    lo, hi = offsets[var_id]
    target = np.arange(lo, hi)
    others = [(v, idx, offsets[v]) for v, idx in fac.scope if v != var_id]

    if not others:
        Jm, hm = cg.J, cg.h
    else:
        other_slices = np.concatenate([np.arange(o[2][0], o[2][1]) for o in others])
        Jtt = cg.J[np.ix_(target, target)]
        Jto = cg.J[np.ix_(target, other_slices)]
        Joo = cg.J[np.ix_(other_slices, other_slices)].copy()
        ho = cg.h[other_slices].copy()
        pos = 0
        for v, idx, _ in others:
            entry = messages.get((v, factor_id))
            if entry is None:
                raise SchedulingError(
                    f"message {v}->{factor_id} required by {factor_id}->{var_id} is missing"
                )
            mJ, mh = _payload(entry)
            size = idx.size
            block = slice(pos, pos + size)
            Joo[block, block] += mJ[np.ix_(idx, idx)]
            ho[block] += mh[idx]
            pos += size
        solved = robust_solve(
            Joo,
            np.column_stack([Jto.T, ho[:, None]]),
            name=f"eliminated block of {factor_id} toward {var_id}",
        )
        Jm = Jtt - Jto @ solved[:, :-1]
        hm = cg.h[target] - Jto @ solved[:, -1]

    var = graph.variables[var_id]
    idx = dict(fac.scope)[var_id]
    J_full = np.zeros((var.dim, var.dim))
    h_full = np.zeros(var.dim)
    J_full[np.ix_(idx, idx)] = Jm
    h_full[idx] = hm
    return J_full, h_full


def message_factor_to_var(graph, factor_id, var_id, messages) -> Message:
    """Marginalize the factor onto one variable, folding in the other
    variables' incoming messages (block elimination of the non-targets)."""
    J, h = _factor_to_var_raw(graph, factor_id, var_id, messages)
    return Message(factor_id, var_id, CanonicalGaussian(J, h))


def schedule(graph: FactorGraph) -> list[tuple[str, str]]:
    """Two-sweep message order for a tree or forest.

    Every directed edge appears once, prerequisites always precede their
    dependents, and the length is twice the edge count.
    """
    adjacency: dict[tuple, list[tuple]] = {}
    for vid in graph.variables:
        adjacency[("v", vid)] = []
    for fid in graph.factors:
        adjacency[("f", fid)] = []
    edge_count = 0
    for fid, fac in graph.factors.items():
        for v, _ in fac.scope:
            if v not in graph.variables:
                raise ValueError(f"factor {fid} references unknown variable {v}")
            adjacency[("f", fid)].append(("v", v))
            adjacency[("v", v)].append(("f", fid))
            edge_count += 1
    for node in adjacency:
        adjacency[node].sort()

    order: list[tuple[str, str]] = []
    visited: set[tuple] = set()
    for root in sorted(adjacency):
        if root in visited:
            continue
        component: list[tuple] = []
        parent: dict[tuple, tuple | None] = {root: None}
        stack = [root]
        visited.add(root)
        comp_edges = 0
        while stack:
            node = stack.pop()
            component.append(node)
            for nb in adjacency[node]:
                comp_edges += 1
                if nb not in parent:
                    parent[nb] = node
                    visited.add(nb)
                    stack.append(nb)
        if comp_edges // 2 != len(component) - 1:
            raise SchedulingError("graph contains a cycle; tree scheduling is impossible")

        # upward sweep: children before parents (post-order)
        post: list[tuple] = []
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                post.append(node)
                continue
            stack.append((node, True))
            for nb in reversed(adjacency[node]):
                if parent.get(nb) == node:
                    stack.append((nb, False))
        for node in post:
            if parent[node] is not None:
                order.append((node[1], parent[node][1]))
        # downward sweep: parents before children (pre-order via BFS)
        queue = [root]
        while queue:
            node = queue.pop(0)
            for nb in adjacency[node]:
                if parent.get(nb) == node:
                    order.append((node[1], nb[1]))
                    queue.append(nb)
    return order


def sweep(graph: FactorGraph, order=None) -> dict[tuple[str, str], tuple]:
    """Run one full message schedule; returns the raw (J, h) message table.

    Once every factor message into a variable has arrived (second half of the
    schedule), outgoing sums are formed as total-minus-one instead of per-edge
    resummation, which keeps a sweep linear in the edge count.
    """
    if order is None:
        order = schedule(graph)
    messages: dict[tuple[str, str], tuple] = {}
    arrived: dict[str, int] = {vid: 0 for vid in graph.variables}
    totals: dict[str, tuple] = {}
    for src, dst in order:
        if src in graph.variables:
            degree = len(graph.var_factors[src])
            if arrived[src] == degree:
                cached = totals.get(src)
                if cached is None:
                    var = graph.variables[src]
                    J = np.zeros((var.dim, var.dim))
                    h = np.zeros(var.dim)
                    for fid in graph.var_factors[src]:
                        mJ, mh = messages[(fid, src)]
                        J += mJ
                        h += mh
                    cached = (J, h)
                    totals[src] = cached
                mJ, mh = messages[(dst, src)]
                entry = (cached[0] - mJ, cached[1] - mh)
            else:
                entry = _var_to_factor_raw(graph, src, dst, messages)
        else:
            entry = _factor_to_var_raw(graph, src, dst, messages)
            arrived[dst] += 1
        messages[(src, dst)] = entry
    return messages


def update_estimates(graph: FactorGraph, messages, *, damping: float = 1.0):
    """Combine incoming factor messages into per-variable corrections.

    Applies ``estimate += damping * delta`` and refreshes covariances;
    returns ``{variable id: (applied delta, covariance)}``.
    """
    results = {}
    unobservable = []
    for vid, var in graph.variables.items():
        J = np.zeros((var.dim, var.dim))
        h = np.zeros(var.dim)
        for fid in graph.var_factors[vid]:
            entry = messages.get((fid, vid))
            if entry is None:
                raise SchedulingError(f"message {fid}->{vid} missing; run a full sweep first")
            mJ, mh = _payload(entry)
            J += mJ
            h += mh
        if not J.any():
            unobservable.append(vid)
            continue
        delta = damping * robust_solve(J, h, name=f"information matrix of variable {vid}")
        cov = robust_inv(J, name=f"information matrix of variable {vid}")
        var.estimate = var.estimate + delta
        var.covariance = cov
        results[vid] = (delta, cov)
    if unobservable:
        raise ObservabilityError(
            "no information reaches variable(s): " + ", ".join(sorted(unobservable))
        )
    return results


@dataclass(frozen=True)
class InferenceResult:
    estimates: dict[str, np.ndarray]
    covariances: dict[str, np.ndarray]
    converged: bool
    iterations: int
    step_norms: tuple[float, ...]

    @property
    def final_step(self) -> float:
        return self.step_norms[-1] if self.step_norms else 0.0


def run_inference(
    graph: FactorGraph,
    observations=None,
    *,
    max_outer: int = 20,
    tol: float = 1e-6,
    damping: float = 1.0,
    invert_steps: int = nlpca.DEFAULT_INVERT_STEPS,
    invert_lr: float = nlpca.DEFAULT_INVERT_LR,
) -> InferenceResult:
    """Relinearize, sweep and update until the largest correction is below tol.

    Non-convergence within ``max_outer`` iterations is reported in the result,
    not raised. Requires a structurally valid graph and at least one observed
    component.
    """
    if not graph.validation.ok:
        raise ValidationError("; ".join(graph.validation.problems))
    if not any(
        _effective_observation(f, observations) is not None
        and _effective_observation(f, observations)[1].any()
        for f in graph.factors.values()
        if isinstance(f, ConditionalFactor)
    ):
        raise ObservabilityError("this run has no observed components at all")

    for fac in graph.factors.values():
        if isinstance(fac, JointFactor):
            fac._warm_code = None
            fac._relin_cache = None
    initialize_estimates(graph, observations)
    if graph._schedule_cache is None:
        graph._schedule_cache = schedule(graph)  # structure is fixed after build
    order = graph._schedule_cache
    step_norms: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, int(max_outer) + 1):
        relinearize(graph, observations, invert_steps=invert_steps, invert_lr=invert_lr)
        messages = sweep(graph, order)
        updates = update_estimates(graph, messages, damping=damping)
        step = max(
            (float(np.abs(delta).max(initial=0.0)) for delta, _ in updates.values()),
            default=0.0,
        )
        step_norms.append(step)
        if step < tol:
            converged = True
            break
    return InferenceResult(
        estimates={vid: var.estimate.copy() for vid, var in graph.variables.items()},
        covariances={vid: var.covariance.copy() for vid, var in graph.variables.items()},
        converged=converged,
        iterations=iterations,
        step_norms=tuple(step_norms),
    )
