"""Construct the grid factor graph from a partition and dataset metadata.

One variable node per section (all quantity kinds at its buses), one identity
conditional factor per metered series, and pairwise decoder-backed joint
factors on a cycle-free, degree-bounded subset of the section adjacencies.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import nlpca
from .datagen import KINDS, NOISE_SIGMA
from .errors import SchemaError, ValidationError
from .graph import ConditionalFactor, FactorGraph, JointFactor, VariableNode
from .gaussian import LinearMap
from .partition import PartitionResult

GRAPH_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class VariableSpec:
    id: str
    dim: int
    labels: tuple[str, ...]
    buses: tuple[int, ...]
    components: tuple[tuple[int, str], ...]  # (bus, kind) per component


@dataclass(frozen=True)
class SensorSpec:
    id: str
    bus: int
    kind: str
    variable: str
    component: int
    sigma: float


@dataclass(frozen=True)
class JointSpec:
    id: str
    variable_a: str
    variable_b: str
    output_dim: int
    latent_dim: int
    hidden_dim: int
    noise_floor: tuple[float, ...]  # per component, variance units
    weight: int  # inter-section edge count backing this coupling


@dataclass(frozen=True)
class ModelBlueprint:
    variables: tuple[VariableSpec, ...]
    sensors: tuple[SensorSpec, ...]
    joints: tuple[JointSpec, ...]

    def variable(self, vid: str) -> VariableSpec:
        for v in self.variables:
            if v.id == vid:
                return v
        raise KeyError(vid)

    def joint_components(self, joint: JointSpec) -> tuple[tuple[int, str], ...]:
        a = self.variable(joint.variable_a)
        b = self.variable(joint.variable_b)
        return a.components + b.components

    def graph_parameters(self) -> int:
        """Decoder weight count summed over the pairwise factors."""
        total = 0
        for j in self.joints:
            q, m, d = j.latent_dim, j.hidden_dim, j.output_dim
            total += q * m + m + m * d + d
        return total

    def total_dim(self) -> int:
        return sum(v.dim for v in self.variables)


def _max_spanning_tree(edges: Sequence[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
    """Kruskal on (a, b, weight), maximizing weight; ties prefer small ids."""
    parent: dict[int, int] = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen = []
    for a, b, w in sorted(edges, key=lambda e: (-e[2], e[0], e[1])):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append((a, b, w))
    return chosen


def _bound_degree(edges: list[tuple[int, int, int]], max_degree: int = 2):
    """Greedily drop the lowest-weight edges at any over-attached section."""
    edges = sorted(edges, key=lambda e: (e[0], e[1]))
    while True:
        degree: dict[int, int] = {}
        for a, b, _ in edges:
            degree[a] = degree.get(a, 0) + 1
            degree[b] = degree.get(b, 0) + 1
        hot = sorted(s for s, d in degree.items() if d > max_degree)
        if not hot:
            return edges
        s = hot[0]
        incident = sorted(
            (e for e in edges if s in (e[0], e[1])), key=lambda e: (e[2], e[0], e[1])
        )
        edges.remove(incident[0])


def build_blueprint(
    partition: PartitionResult,
    quantities: Optional[Mapping[int, Sequence[str]]] = None,
    noise: Optional[Mapping[str, float]] = None,
) -> ModelBlueprint:
    """Derive the factor-graph layout from a partition.

    Args:
        quantities: per-bus quantity kinds; defaults to all six kinds.
        noise: per-kind sensor standard deviation; defaults to the generator's.

    The joint couplings are a maximum spanning tree of the section adjacency
    (weighted by crossing-edge count), thinned until no variable touches more
    than two joint factors, so the resulting graph is always a tree or forest.
    """
    if not partition.sections:
        raise ValueError("partition has no sections")
    noise = dict(NOISE_SIGMA) if noise is None else dict(noise)

    variables = []
    sensors = []
    for sid, section in enumerate(partition.sections):
        if not section:
            raise ValueError(f"section {sid} is empty")
        components: list[tuple[int, str]] = []
        labels: list[str] = []
        for bus in section:
            kinds = tuple(quantities[bus]) if quantities is not None else KINDS
            if not kinds:
                raise ValueError(f"bus {bus} has no quantities")
            for kind in kinds:
                if kind not in noise:
                    raise ValueError(f"unknown quantity kind {kind!r} (no noise level)")
                components.append((int(bus), kind))
                labels.append(f"bus{bus}/{kind}")
        vid = f"s{sid}"
        variables.append(
            VariableSpec(
                id=vid,
                dim=len(components),
                labels=tuple(labels),
                buses=tuple(int(b) for b in section),
                components=tuple(components),
            )
        )
        for comp_idx, (bus, kind) in enumerate(components):
            sensors.append(
                SensorSpec(
                    id=f"y/{bus}/{kind}",
                    bus=bus,
                    kind=kind,
                    variable=vid,
                    component=comp_idx,
                    sigma=float(noise[kind]),
                )
            )

    tree = _max_spanning_tree(list(partition.section_adjacency))
    kept = _bound_degree(tree, max_degree=2)
    joints = []
    for a, b, w in sorted(kept):
        va, vb = variables[a], variables[b]
        d = va.dim + vb.dim
        floor = tuple(
            float(noise[kind]) ** 2 for _, kind in va.components + vb.components
        )
        joints.append(
            JointSpec(
                id=f"j/s{a}-s{b}",
                variable_a=va.id,
                variable_b=vb.id,
                output_dim=d,
                latent_dim=d // 2,
                hidden_dim=d,
                noise_floor=floor,
                weight=int(w),
            )
        )
    return ModelBlueprint(tuple(variables), tuple(sensors), tuple(joints))


def instantiate(
    blueprint: ModelBlueprint,
    models: Optional[Mapping[str, nlpca.DecoderNetwork]] = None,
    prior_means: Optional[Mapping[str, np.ndarray]] = None,
) -> FactorGraph:
    """Materialize a validated factor graph from a blueprint.

    ``models`` maps joint-factor ids to trained decoders and may be omitted
    only when the blueprint has no joint factors.
    """
    variables = []
    for spec in blueprint.variables:
        prior = None
        if prior_means is not None and spec.id in prior_means:
            prior = np.asarray(prior_means[spec.id], dtype=float)
        variables.append(
            VariableNode(spec.id, spec.dim, labels=spec.labels, prior_mean=prior)
        )
    factors: list = []
    for sensor in blueprint.sensors:
        factors.append(
            ConditionalFactor(
                sensor.id,
                scope=[(sensor.variable, [sensor.component])],
                mapping=LinearMap(np.eye(1)),
                noise=np.array([[sensor.sigma**2]]),
            )
        )
    for joint in blueprint.joints:
        if models is None or joint.id not in models:
            raise ValueError(f"no trained model supplied for joint factor {joint.id}")
        net = models[joint.id]
        if net.output_dim != joint.output_dim:
            raise ValidationError(
                f"joint factor {joint.id}: decoder output dim {net.output_dim} "
                f"does not match the blueprint dim {joint.output_dim}"
            )
        factors.append(JointFactor(joint.id, (joint.variable_a, joint.variable_b), model=net))
    return FactorGraph(variables, factors, strict=True)


# ---------------------------------------------------------------------------
# serialization (shared graph schema)


def blueprint_to_dict(
    blueprint: ModelBlueprint,
    prior_means: Optional[Mapping[str, np.ndarray]] = None,
    model_paths: Optional[Mapping[str, str]] = None,
) -> dict:
    doc = {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "variables": [
            {
                "id": v.id,
                "dim": v.dim,
                "labels": list(v.labels),
                "buses": list(v.buses),
                "components": [[b, k] for b, k in v.components],
                "prior_mean": (
                    [float(x) for x in prior_means[v.id]]
                    if prior_means is not None and v.id in prior_means
                    else None
                ),
            }
            for v in blueprint.variables
        ],
        "factors": [
            {
                "id": s.id,
                "kind": "conditional",
                "scope": [[s.variable, [s.component]]],
                "mapping": "identity",
                "bus": s.bus,
                "quantity": s.kind,
                "sigma": s.sigma,
            }
            for s in blueprint.sensors
        ]
        + [
            {
                "id": j.id,
                "kind": "joint",
                "scope": [j.variable_a, j.variable_b],
                "dims": {
                    "output": j.output_dim,
                    "latent": j.latent_dim,
                    "hidden": j.hidden_dim,
                },
                "noise_floor": list(j.noise_floor),
                "weight": j.weight,
                "model": None if model_paths is None else model_paths.get(j.id),
            }
            for j in blueprint.joints
        ],
        "edges": [
            [s.id, s.variable] for s in blueprint.sensors
        ]
        + [[j.id, j.variable_a] for j in blueprint.joints]
        + [[j.id, j.variable_b] for j in blueprint.joints],
    }
    return doc


def save_blueprint(blueprint: ModelBlueprint, path, prior_means=None, model_paths=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            blueprint_to_dict(blueprint, prior_means, model_paths),
            fh,
            sort_keys=True,
            indent=1,
        )
        fh.write("\n")


def _blueprint_from_dict(doc: dict):
    if doc.get("schema_version") != GRAPH_SCHEMA_VERSION:
        raise SchemaError(f"unsupported graph schema version {doc.get('schema_version')!r}")
    variables = []
    prior_means = {}
    for v in doc["variables"]:
        variables.append(
            VariableSpec(
                id=str(v["id"]),
                dim=int(v["dim"]),
                labels=tuple(v["labels"]),
                buses=tuple(int(b) for b in v.get("buses", [])),
                components=tuple((int(b), str(k)) for b, k in v["components"]),
            )
        )
        if v.get("prior_mean") is not None:
            prior_means[str(v["id"])] = np.asarray(v["prior_mean"], dtype=float)
    sensors = []
    joints = []
    model_paths = {}
    for f in doc["factors"]:
        if f["kind"] == "conditional":
            (vid, comps), = f["scope"]
            sensors.append(
                SensorSpec(
                    id=str(f["id"]),
                    bus=int(f["bus"]),
                    kind=str(f["quantity"]),
                    variable=str(vid),
                    component=int(comps[0]),
                    sigma=float(f["sigma"]),
                )
            )
        elif f["kind"] == "joint":
            joints.append(
                JointSpec(
                    id=str(f["id"]),
                    variable_a=str(f["scope"][0]),
                    variable_b=str(f["scope"][1]),
                    output_dim=int(f["dims"]["output"]),
                    latent_dim=int(f["dims"]["latent"]),
                    hidden_dim=int(f["dims"]["hidden"]),
                    noise_floor=tuple(float(x) for x in f["noise_floor"]),
                    weight=int(f.get("weight", 1)),
                )
            )
            if f.get("model"):
                model_paths[str(f["id"])] = str(f["model"])
        else:
            raise SchemaError(f"unknown factor kind {f['kind']!r}")
    blueprint = ModelBlueprint(tuple(variables), tuple(sensors), tuple(joints))
    return blueprint, prior_means, model_paths


def load_blueprint(path):
    """Read a graph document; returns (blueprint, prior_means, model_paths)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return _blueprint_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed graph document ({exc})") from exc


def save_model_bundle(blueprint, models, prior_means, directory) -> None:
    """Write a trained bundle: graph document plus one decoder file per joint."""
    os.makedirs(os.path.join(directory, "models"), exist_ok=True)
    model_paths = {}
    for jid in sorted(models):
        rel = os.path.join("models", jid.replace("/", "_") + ".json")
        nlpca.save_model(models[jid], os.path.join(directory, rel))
        model_paths[jid] = rel
    save_blueprint(
        blueprint,
        os.path.join(directory, "model.graph"),
        prior_means=prior_means,
        model_paths=model_paths,
    )


def load_model_bundle(directory):
    """Read a trained bundle; returns (blueprint, models, prior_means)."""
    path = os.path.join(directory, "model.graph")
    blueprint, prior_means, model_paths = load_blueprint(path)
    models = {}
    for jid, rel in model_paths.items():
        models[jid] = nlpca.load_model(os.path.join(directory, rel))
    missing = [j.id for j in blueprint.joints if j.id not in models]
    if missing:
        raise SchemaError(f"{path}: missing trained models for {', '.join(missing)}")
    return blueprint, models, prior_means
