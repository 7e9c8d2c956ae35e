"""Concept tables (ICD/MeSH with UMLS crosswalks): load, ancestors, grounding."""
from __future__ import annotations

import os
from dataclasses import dataclass, field


class OntologyError(Exception):
    pass


class CycleDetected(OntologyError):
    def __init__(self, chain):
        super().__init__("parent cycle: " + " -> ".join(chain))
        self.chain = list(chain)


class DanglingParent(OntologyError):
    def __init__(self, code, parent):
        super().__init__(f"concept {code} references unknown parent {parent}")
        self.code = code
        self.parent = parent


class UnknownCode(OntologyError):
    def __init__(self, code):
        super().__init__(f"unknown concept code {code}")
        self.code = code


@dataclass(frozen=True)
class Concept:
    code: str
    preferred_label: str
    parents: tuple[str, ...] = ()
    cui: str | None = None
    synonyms: tuple[str, ...] = ()
    vocabulary: str = ""


@dataclass
class OntologyTable:
    concepts: dict[str, Concept]
    # casefolded surface form -> codes; >1 code means a cross-vocabulary conflict
    surface_index: dict[str, list[str]] = field(default_factory=dict)

    def __len__(self):
        return len(self.concepts)

    def __contains__(self, code: str) -> bool:
        return code in self.concepts

    def get(self, code: str) -> Concept:
        try:
            return self.concepts[code]
        except KeyError:
            raise UnknownCode(code) from None

    def ancestors(self, code: str) -> list[Concept]:
        """Transitive parents, deduplicated, nearest first (breadth-first)."""
        start = self.get(code)
        seen: set[str] = set()
        order: list[Concept] = []
        frontier = list(start.parents)
        while frontier:
            next_frontier = []
            for p in frontier:
                if p in seen:
                    continue
                seen.add(p)
                concept = self.get(p)
                order.append(concept)
                next_frontier.extend(concept.parents)
            frontier = next_frontier
        return order

    def ground(self, term: str) -> Concept | None:
        """Exact case-folded match on preferred label or synonym."""
        codes = self.surface_index.get(term.strip().casefold())
        if not codes:
            return None
        return self.concepts[codes[0]]

    def grounding_conflicts(self) -> dict[str, list[str]]:
        return {s: c for s, c in self.surface_index.items() if len(c) > 1}


def _parse_tsv(path, vocabulary: str) -> list[Concept]:
    concepts = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cells = line.split("\t")
            if header is None:
                header = [c.strip().lower() for c in cells]
                continue
            row = dict(zip(header, cells))
            parents = tuple(p for p in row.get("parent", "").split("|") if p)
            synonyms = tuple(s.strip() for s in row.get("synonyms", "").split("|") if s.strip())
            concepts.append(Concept(
                code=row["code"].strip(),
                preferred_label=row["label"].strip(),
                parents=parents,
                cui=row.get("cui", "").strip() or None,
                synonyms=synonyms,
                vocabulary=vocabulary,
            ))
    return concepts


def load_ontology(directory) -> OntologyTable:
    """Load every .tsv in the directory (columns: code, label, parent, cui,
    synonyms) and verify parent links are acyclic and resolvable."""
    concepts: dict[str, Concept] = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".tsv"):
            continue
        vocabulary = os.path.splitext(name)[0]
        for concept in _parse_tsv(os.path.join(directory, name), vocabulary):
            concepts[concept.code] = concept

    for concept in concepts.values():
        for parent in concept.parents:
            if parent not in concepts:
                raise DanglingParent(concept.code, parent)

    # Cycle check: iterative DFS with an explicit on-path set.
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {c: WHITE for c in concepts}
    for root in concepts:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(concepts[root].parents))]
        color[root] = GRAY
        path = [root]
        while stack:
            node, parents = stack[-1]
            advanced = False
            for parent in parents:
                if color[parent] == GRAY:
                    raise CycleDetected(path[path.index(parent):] + [parent])
                if color[parent] == WHITE:
                    color[parent] = GRAY
                    path.append(parent)
                    stack.append((parent, iter(concepts[parent].parents)))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                path.pop()
                stack.pop()

    table = OntologyTable(concepts=concepts)
    for code, concept in concepts.items():
        for surface in (concept.preferred_label, *concept.synonyms):
            key = surface.strip().casefold()
            table.surface_index.setdefault(key, [])
            if code not in table.surface_index[key]:
                table.surface_index[key].append(code)
    return table


def default_ontology_dir() -> str:
    return os.path.join(os.path.dirname(__file__), "data")
