"""Synthetic categorical data from a causal DAG with explicit CPTs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import CategoricalDomain, Dataset, RoleSpec
from .errors import DataError

CPT_FLOOR = 0.02
SPEC_FORMAT = "latentrepair.dag"


@dataclass(frozen=True)
class Node:
    name: str
    size: int
    parents: tuple[str, ...] = ()


class CausalDagSpec:
    """Nodes with dense CPTs.

    ``cpts[name]`` has shape ``(prod(parent sizes), size)``; rows are indexed
    row-major over the parents in their listed order.
    """

    def __init__(self, nodes, cpts):
        self.nodes = [n if isinstance(n, Node) else Node(n[0], int(n[1]), tuple(n[2])) for n in nodes]
        self.cpts = {k: np.asarray(v, dtype=np.float64) for k, v in cpts.items()}
        self._by_name = {n.name: n for n in self.nodes}
        if len(self._by_name) != len(self.nodes):
            raise DataError("duplicate node names")
        self.order = self._topological_order()
        for n in self.nodes:
            if n.size < 1:
                raise DataError(f"node {n.name!r} has an empty domain")
            shape = (math.prod(self._by_name[p].size for p in n.parents), n.size)
            t = self.cpts.get(n.name)
            if t is None or t.shape != shape:
                raise DataError(f"CPT for {n.name!r} must have shape {shape}")
            if np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0, atol=1e-12, rtol=0):
                raise DataError(f"CPT rows for {n.name!r} must be distributions")

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def node(self, name: str) -> Node:
        return self._by_name[name]

    def parents(self, name: str) -> tuple[str, ...]:
        return self._by_name[name].parents

    def _topological_order(self) -> list[str]:
        indeg = {}
        children = {n.name: [] for n in self.nodes}
        for n in self.nodes:
            for p in n.parents:
                if p not in self._by_name:
                    raise DataError(f"node {n.name!r} has unknown parent {p!r}")
                if p == n.name:
                    raise DataError(f"node {n.name!r} is its own parent")
                children[p].append(n.name)
            indeg[n.name] = len(set(n.parents))
        ready = [n.name for n in self.nodes if indeg[n.name] == 0]
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            raise DataError("parent lists contain a cycle")
        return order

    def edges(self) -> list[tuple[str, str]]:
        return [(p, n.name) for n in self.nodes for p in n.parents]

    def to_dict(self) -> dict:
        return {
            "format": SPEC_FORMAT,
            "nodes": [{"name": n.name, "size": n.size, "parents": list(n.parents)} for n in self.nodes],
            "cpts": {k: self.cpts[k].tolist() for k in self.names},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> CausalDagSpec:
        nodes = [Node(d["name"], int(d["size"]), tuple(d["parents"])) for d in doc["nodes"]]
        return cls(nodes, doc["cpts"])


def labels_for(size: int) -> tuple[str, ...]:
    """Zero-padded labels so lexicographic order equals numeric order."""
    width = len(str(max(size - 1, 0)))
    return tuple(f"{i:0{width}d}" for i in range(size))


def generate(spec: CausalDagSpec, n: int, seed: int) -> Dataset:
    """Ancestral sampling of ``n`` records; columns follow the declared node order."""
    if n < 0:
        raise DataError("n must be non-negative")
    rng = np.random.default_rng(seed)
    cols: dict[str, np.ndarray] = {}
    for name in spec.order:
        node = spec.node(name)
        row = np.zeros(n, dtype=np.int64)
        for p in node.parents:
            row = row * spec.node(p).size + cols[p]
        cum = np.cumsum(spec.cpts[name], axis=1)
        u = rng.random(n)
        codes = np.zeros(n, dtype=np.int64)
        for j in range(node.size - 1):
            codes += u >= cum[row, j]
        cols[name] = codes
    domains = [CategoricalDomain(nd.name, labels_for(nd.size)) for nd in spec.nodes]
    return Dataset(domains, [cols[nd.name] for nd in spec.nodes], n_records=n)


def random_cpt(rng: np.random.Generator, n_rows: int, size: int, floor: float = CPT_FLOOR) -> np.ndarray:
    """Dirichlet(1) rows, floored at ``floor`` and renormalized."""
    t = rng.dirichlet(np.ones(size), size=n_rows)
    if size > 1 and floor > 0:
        t = np.maximum(t, floor)
        t /= t.sum(axis=1, keepdims=True)
    return t


def _fill_cpts(nodes, rng, floor=CPT_FLOOR, overrides=None):
    sizes = {n.name: n.size for n in nodes}
    cpts = {}
    for n in nodes:
        if overrides and n.name in overrides:
            cpts[n.name] = overrides[n.name]
            continue
        rows = math.prod(sizes[p] for p in n.parents)
        cpts[n.name] = random_cpt(rng, rows, n.size, floor)
    return cpts


def seven_node_spec(seed: int, domain_size: int = 4, label_domain: int = 2) -> tuple[CausalDagSpec, RoleSpec]:
    """Seven-node fixture: S={V0}, I={V2, V4}, A={V1, V3, V5}, label Y."""
    d = domain_size
    nodes = [
        Node("V0", d), Node("V1", d, ("V0",)), Node("V2", d, ("V0", "V1")), Node("V3", d, ("V1",)),
        Node("V4", d, ("V0", "V3")), Node("V5", d, ("V3",)),
        Node("Y", label_domain, ("V2", "V4", "V3", "V5")),
    ]
    rng = np.random.default_rng(seed)
    roles = RoleSpec(sensitive=("V0",), inadmissible=("V2", "V4"), admissible=("V1", "V3", "V5"),
                     additional=(), label="Y")
    return CausalDagSpec(nodes, _fill_cpts(nodes, rng)), roles


@dataclass(frozen=True)
class RolesTemplate:
    n_sensitive: int = 1
    n_inadmissible: int = 3
    n_label_parents: int = 2
    n_additional: int = 0
    direct_bias: bool = False


TEMPLATES = {
    "random": RolesTemplate(),
    # 13 attributes including the label, shaped like the census-income benchmark
    "adult": RolesTemplate(n_sensitive=2, n_inadmissible=5, n_label_parents=4, n_additional=2),
}


def random_spec(n_attrs: int, domain_size: int = 4, edge_density: float = 0.3,
                roles_template: str | RolesTemplate = "random", seed: int = 0,
                label_domain: int = 2, max_parents: int = 3) -> tuple[CausalDagSpec, RoleSpec]:
    """Random DAG with role assignment; ``n_attrs`` counts the label.

    Nodes are ordered sensitive first, then the rest shuffled, the label
    last.  Each earlier node becomes a parent with probability
    ``edge_density`` (capped at ``max_parents``).  With a nonzero density
    every inadmissible attribute gets a sensitive parent and the label gets
    ``n_label_parents`` inadmissible parents.  ``edge_density = 0`` gives
    independent roots.  The template name "seven_node" returns the fixed
    seven-node configuration.
    """
    if roles_template == "seven_node":
        if n_attrs != 7:
            raise DataError("the seven_node template has exactly 7 attributes")
        return seven_node_spec(seed, domain_size, label_domain)
    tpl = TEMPLATES[roles_template] if isinstance(roles_template, str) else roles_template
    if n_attrs < 4:
        raise DataError("need at least 4 attributes")
    if not 0.0 <= edge_density <= 1.0:
        raise DataError("edge_density must lie in [0, 1]")
    n_feat = n_attrs - 1
    n_adm = n_feat - tpl.n_sensitive - tpl.n_inadmissible - tpl.n_additional
    if tpl.n_sensitive < 1 or n_adm < 0 or tpl.n_label_parents > tpl.n_inadmissible:
        raise DataError("roles template does not fit the attribute count")
    rng = np.random.default_rng(seed)
    names = [f"V{i}" for i in range(n_feat)] + ["Y"]
    sens = names[:tpl.n_sensitive]
    rest = list(names[tpl.n_sensitive:n_feat])
    perm = rng.permutation(len(rest))
    shuffled = [rest[i] for i in perm]
    inad = sorted(shuffled[:tpl.n_inadmissible], key=names.index)
    addl = sorted(shuffled[tpl.n_inadmissible:tpl.n_inadmissible + tpl.n_additional], key=names.index)
    adm = sorted(shuffled[tpl.n_inadmissible + tpl.n_additional:], key=names.index)
    order = sens + [rest[i] for i in rng.permutation(len(rest))]
    parents: dict[str, list[str]] = {v: [] for v in names}
    for j, v in enumerate(order):
        cand = [u for u in order[:j] if rng.random() < edge_density]
        if len(cand) > max_parents:
            cand = [cand[i] for i in sorted(rng.choice(len(cand), max_parents, replace=False))]
        parents[v] = cand
        if edge_density > 0 and v in inad and not set(cand) & set(sens):
            s = sens[int(rng.integers(len(sens)))]
            parents[v] = [s] + cand[: max_parents - 1]
    if edge_density > 0:
        label_parents = [inad[i] for i in sorted(rng.choice(len(inad), tpl.n_label_parents, replace=False))]
        others = [v for v in adm + addl if rng.random() < edge_density]
        label_parents += others[: max(0, max_parents - len(label_parents))]
        if tpl.direct_bias:
            label_parents = sens[:1] + label_parents
        parents["Y"] = sorted(set(label_parents), key=order.index)
    sizes = {v: domain_size for v in names}
    sizes["Y"] = label_domain
    nodes = [Node(v, sizes[v], tuple(sorted(parents[v], key=order.index))) for v in names]
    roles = RoleSpec(sensitive=tuple(sens), inadmissible=tuple(inad), admissible=tuple(adm),
                     additional=tuple(addl), label="Y")
    return CausalDagSpec(nodes, _fill_cpts(nodes, rng)), roles


def planted_bias_spec(seed: int, strength: float = 0.35, n_admissible: int = 1,
                      domain_size: int = 3) -> tuple[CausalDagSpec, RoleSpec]:
    """Label with a direct sensitive edge plus an admissible path.

    S (binary) -> A_i, S -> I, A_i -> Y, and S -> Y with the given shift in
    P(Y=1).  The inadmissible attribute reaches Y only through S, so
    identification drops it and the repaired data runs without a latent
    variable.  Children of S get half-uniform CPTs so every (S, A) cell is
    well populated.
    """
    rng = np.random.default_rng(seed)
    adm = [f"A{i}" for i in range(n_admissible)]
    nodes = [Node("S", 2)]
    nodes += [Node(a, domain_size, ("S",)) for a in adm]
    nodes += [Node("I", domain_size, ("S",)), Node("W", domain_size)]
    nodes.append(Node("Y", 2, ("S", *adm)))
    rows = 2 * domain_size ** n_admissible
    base = rng.uniform(0.25, 0.45, size=rows // 2)
    # row index is s * |A| + a: the S=1 half gets the bias shift
    p1 = np.concatenate([base, np.minimum(base + strength, 0.95)])
    overrides = {"S": np.array([[0.5, 0.5]]), "Y": np.stack([1.0 - p1, p1], axis=1)}
    for name in adm + ["I"]:
        overrides[name] = 0.5 * random_cpt(rng, 2, domain_size) + 0.5 / domain_size
    spec = CausalDagSpec(nodes, _fill_cpts(nodes, rng, overrides=overrides))
    roles = RoleSpec(sensitive=("S",), inadmissible=("I",), admissible=tuple(adm),
                     additional=("W",), label="Y")
    return spec, roles


def write_spec(spec: CausalDagSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_spec(path: str | Path) -> CausalDagSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != SPEC_FORMAT:
        raise DataError(f"{path}: not a DAG spec file")
    return CausalDagSpec.from_dict(doc)
