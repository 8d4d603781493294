"""Symptom hierarchy with label-closure and tree-distance semantics."""
from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType

import yaml


class OntologyError(ValueError):
    """Raised when an ontology document violates the tree invariants."""

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message if node_id is None else f"{message}: {node_id!r}")
        self.node_id = node_id


@dataclass(frozen=True)
class SymptomNode:
    id: str
    name: str
    description: str
    parent_id: str | None = None


class SymptomOntology:
    """Immutable rooted tree of symptoms.

    A patient that has a symptom also has every ancestor of it, so most
    consumers work with :meth:`label_closure` rather than raw labels.
    """

    def __init__(self, nodes: Iterable[SymptomNode]):
        table: dict[str, SymptomNode] = {}
        for node in nodes:
            if node.id in table:
                raise OntologyError("duplicate node id", node.id)
            if not node.description or not node.description.strip():
                raise OntologyError("empty description", node.id)
            table[node.id] = node
        if not table:
            raise OntologyError("ontology has no nodes")

        for node in table.values():
            if node.parent_id is not None and node.parent_id not in table:
                raise OntologyError(f"dangling parent {node.parent_id!r} on node", node.id)

        children: dict[str, list[str]] = {nid: [] for nid in table}
        for node in table.values():
            if node.parent_id is not None:
                children[node.parent_id].append(node.id)
        self._children = MappingProxyType({k: tuple(v) for k, v in children.items()})

        # Walk up from every node; a walk longer than the node count is a cycle.
        ancestors: dict[str, tuple[str, ...]] = {}
        for nid in table:
            chain: list[str] = []
            cur = table[nid].parent_id
            while cur is not None:
                if cur == nid or len(chain) > len(table):
                    raise OntologyError("cycle through node", nid)
                chain.append(cur)
                cur = table[cur].parent_id
            ancestors[nid] = tuple(chain)
        self._ancestors = MappingProxyType(ancestors)

        roots = [n.id for n in table.values() if n.parent_id is None]
        if len(roots) != 1:
            raise OntologyError(
                "expected exactly one root, found " + (", ".join(sorted(roots)) or "none"),
                roots[1] if len(roots) > 1 else None,
            )
        self._nodes = MappingProxyType(table)
        self.root_id = roots[0]

    @property
    def nodes(self) -> Mapping[str, SymptomNode]:
        return self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def __iter__(self):
        return iter(self._nodes)

    def __getitem__(self, node_id: str) -> SymptomNode:
        return self._node(node_id)

    def _node(self, node_id: str) -> SymptomNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise KeyError(f"unknown symptom id {node_id!r}") from None

    def children(self, node_id: str) -> tuple[str, ...]:
        self._node(node_id)
        return self._children[node_id]

    def leaves(self) -> list[str]:
        return [nid for nid, kids in self._children.items() if not kids]

    def depth(self, node_id: str) -> int:
        return len(self.ancestors(node_id))

    def ancestors(self, node_id: str) -> list[str]:
        """Ancestors of ``node_id``, nearest parent first and root last."""
        self._node(node_id)
        return list(self._ancestors[node_id])

    def label_closure(self, symptom_ids: Iterable[str]) -> set[str]:
        closed: set[str] = set()
        for sid in symptom_ids:
            self._node(sid)
            closed.add(sid)
            closed.update(self._ancestors[sid])
        return closed

    def distance(self, a: str, b: str) -> int:
        """Number of edges on the tree path between ``a`` and ``b``."""
        path_a = [a, *self.ancestors(a)]
        path_b = [b, *self.ancestors(b)]
        pos_b = {nid: i for i, nid in enumerate(path_b)}
        for i, nid in enumerate(path_a):
            if nid in pos_b:
                return i + pos_b[nid]
        raise AssertionError("tree without common ancestor")  # unreachable for a validated tree

    def content_hash(self) -> str:
        """Stable digest of the node table, used to pin model artifacts to an ontology."""
        payload = json.dumps(self.to_document(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_document(self) -> dict:
        nodes = []
        for node in self._nodes.values():
            entry = {"id": node.id, "name": node.name, "description": node.description}
            if node.parent_id is not None:
                entry["parent"] = node.parent_id
            nodes.append(entry)
        return {"nodes": nodes}


# Module-level aliases for call sites that prefer free functions.
def ancestors(ontology: SymptomOntology, node_id: str) -> list[str]:
    return ontology.ancestors(node_id)


def label_closure(ontology: SymptomOntology, symptom_ids: Iterable[str]) -> set[str]:
    return ontology.label_closure(symptom_ids)


def hierarchy_distance(ontology: SymptomOntology, a: str, b: str) -> int:
    return ontology.distance(a, b)


def parse_ontology(document: Mapping) -> SymptomOntology:
    if not isinstance(document, Mapping) or not isinstance(document.get("nodes"), list):
        raise OntologyError("ontology document must be a mapping with a 'nodes' list")
    nodes = []
    for i, raw in enumerate(document["nodes"]):
        if not isinstance(raw, Mapping) or "id" not in raw:
            raise OntologyError(f"node entry {i} lacks an id")
        node_id = str(raw["id"])
        description = raw.get("description")
        if not isinstance(description, str):
            raise OntologyError("missing description", node_id)
        parent = raw.get("parent")
        nodes.append(
            SymptomNode(
                id=node_id,
                name=str(raw.get("name", node_id)),
                description=description,
                parent_id=None if parent is None else str(parent),
            )
        )
    return SymptomOntology(nodes)


def load_ontology(source: str | Path) -> SymptomOntology:
    """Load and validate an ontology YAML document from a path."""
    return loads_ontology(Path(source).read_text(encoding="utf-8"))


def loads_ontology(text: str) -> SymptomOntology:
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise OntologyError(f"unparseable ontology document: {exc}") from exc
    return parse_ontology(document)


def dumps_ontology(ontology: SymptomOntology) -> str:
    return yaml.safe_dump(ontology.to_document(), allow_unicode=True, sort_keys=False)


def default_ontology() -> SymptomOntology:
    """The bundled fixture hierarchy."""
    text = resources.files("anamnesis").joinpath("data/ontology.yaml").read_text(encoding="utf-8")
    return loads_ontology(text)
