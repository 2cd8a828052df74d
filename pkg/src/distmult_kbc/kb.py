"""Triple files, vocabularies, query expansion and the filter index."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

SPLITS = ("train", "valid", "test")


class RawTriple(NamedTuple):
    head: str
    relation: str
    tail: str


class Triple(NamedTuple):
    h: int
    r: int
    t: int


class Direction(str, enum.Enum):
    TAIL = "tail"  # <h, r, ?>
    HEAD = "head"  # <?, r, t>


class Query(NamedTuple):
    """One directed prediction task.

    ``anchor`` is the known entity, ``truth`` the entity to be predicted.
    A tail query stands for ``(anchor, relation, truth)``, a head query for
    ``(truth, relation, anchor)``.
    """

    anchor: int
    relation: int
    direction: Direction
    truth: int

    def triple(self) -> Triple:
        if self.direction is Direction.TAIL:
            return Triple(self.anchor, self.relation, self.truth)
        return Triple(self.truth, self.relation, self.anchor)


class DataError(ValueError):
    """Raised for malformed or missing dataset files."""


def load_split(path: str | Path) -> list[RawTriple]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing split file: {path}")
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"expected 3 fields, got {len(fields)} at line {lineno} of {path}")
            fields = [f.strip() for f in fields]
            if not all(fields):
                raise DataError(f"empty field at line {lineno} of {path}")
            triples.append(RawTriple(*fields))
    return triples


@dataclass(frozen=True)
class Vocabulary:
    id_to_entity: tuple[str, ...]
    id_to_relation: tuple[str, ...]
    entity_to_id: dict[str, int] = field(init=False, repr=False, compare=False)
    relation_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ent = {name: i for i, name in enumerate(self.id_to_entity)}
        rel = {name: i for i, name in enumerate(self.id_to_relation)}
        if len(ent) != len(self.id_to_entity) or len(rel) != len(self.id_to_relation):
            raise ValueError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "entity_to_id", ent)
        object.__setattr__(self, "relation_to_id", rel)

    @property
    def num_entities(self) -> int:
        return len(self.id_to_entity)

    @property
    def num_relations(self) -> int:
        return len(self.id_to_relation)

    def save(self, directory: str | Path) -> None:
        """Write ``entities.txt`` and ``relations.txt``; line number is the id."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, tokens in (("entities.txt", self.id_to_entity), ("relations.txt", self.id_to_relation)):
            with open(directory / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.writelines(tok + "\n" for tok in tokens)

    @classmethod
    def load(cls, directory: str | Path) -> "Vocabulary":
        directory = Path(directory)
        tables = []
        for name in ("entities.txt", "relations.txt"):
            path = directory / name
            if not path.is_file():
                raise DataError(f"missing vocabulary file: {path}")
            with open(path, encoding="utf-8") as fh:
                tables.append(tuple(line.rstrip("\n") for line in fh))
        return cls(*tables)


def build_vocabulary(splits: Iterable[Sequence[RawTriple]]) -> Vocabulary:
    # first appearance order: splits in the given order, head before tail
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    for split in splits:
        for h, r, t in split:
            entities.setdefault(h, len(entities))
            relations.setdefault(r, len(relations))
            entities.setdefault(t, len(entities))
    return Vocabulary(tuple(entities), tuple(relations))


def encode(raw: Iterable[RawTriple], vocab: Vocabulary) -> list[Triple]:
    out = []
    ent, rel = vocab.entity_to_id, vocab.relation_to_id
    for h, r, t in raw:
        for token, table, kind in ((h, ent, "entity"), (r, rel, "relation"), (t, ent, "entity")):
            if token not in table:
                raise KeyError(f"unknown {kind} {token!r}")
        out.append(Triple(ent[h], rel[r], ent[t]))
    return out


def decode(triples: Iterable[Triple], vocab: Vocabulary) -> list[RawTriple]:
    return [
        RawTriple(vocab.id_to_entity[h], vocab.id_to_relation[r], vocab.id_to_entity[t])
        for h, r, t in triples
    ]


def expand_queries(triples: Iterable[Triple]) -> list[Query]:
    queries = []
    for h, r, t in triples:
        queries.append(Query(h, r, Direction.TAIL, t))
        queries.append(Query(t, r, Direction.HEAD, h))
    return queries


def query_arrays(queries: Sequence[Query]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Column arrays ``(anchors, relations, truths, is_head)`` for a query list."""
    n = len(queries)
    anchors = np.fromiter((q.anchor for q in queries), dtype=np.int64, count=n)
    relations = np.fromiter((q.relation for q in queries), dtype=np.int64, count=n)
    truths = np.fromiter((q.truth for q in queries), dtype=np.int64, count=n)
    is_head = np.fromiter((q.direction is Direction.HEAD for q in queries), dtype=bool, count=n)
    return anchors, relations, truths, is_head


class FilterIndex:
    """Set of every known true triple, indexed for filtered ranking.

    Besides plain membership it keeps, for each ``(h, r)`` the known tails
    and for each ``(r, t)`` the known heads, so a filtered candidate set can
    be built without scanning the entity table.
    """

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: set[Triple] = set()
        self._tails: dict[tuple[int, int], list[int]] = {}
        self._heads: dict[tuple[int, int], list[int]] = {}
        for h, r, t in triples:
            tr = Triple(int(h), int(r), int(t))
            if tr in self._triples:
                continue
            self._triples.add(tr)
            self._tails.setdefault((tr.h, tr.r), []).append(tr.t)
            self._heads.setdefault((tr.r, tr.t), []).append(tr.h)

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple) -> bool:
        return Triple(*triple) in self._triples

    def contains(self, triple) -> bool:
        return triple in self

    def known_answers(self, query: Query) -> list[int]:
        """Entities that complete ``query``'s open slot to a known triple."""
        if query.direction is Direction.TAIL:
            return self._tails.get((query.anchor, query.relation), [])
        return self._heads.get((query.relation, query.anchor), [])


def build_filter_index(*splits: Iterable[Triple]) -> FilterIndex:
    return FilterIndex(tr for split in splits for tr in split)


@dataclass(frozen=True)
class Dataset:
    vocabulary: Vocabulary
    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    filter: FilterIndex = field(repr=False)
    fingerprint: str = ""

    @property
    def num_entities(self) -> int:
        return self.vocabulary.num_entities

    @property
    def num_relations(self) -> int:
        return self.vocabulary.num_relations

    def split(self, name: str) -> list[Triple]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {', '.join(SPLITS)}")
        return getattr(self, name)

    @classmethod
    def from_raw(cls, train, valid, test, fingerprint: str = "") -> "Dataset":
        vocab = build_vocabulary([train, valid, test])
        enc = [encode(s, vocab) for s in (train, valid, test)]
        return cls(vocab, *enc, filter=build_filter_index(*enc), fingerprint=fingerprint)

    @classmethod
    def from_triples(cls, vocab: Vocabulary, train, valid, test) -> "Dataset":
        splits = [[Triple(*map(int, tr)) for tr in s] for s in (train, valid, test)]
        for split in splits:
            for h, r, t in split:
                if not (0 <= h < vocab.num_entities and 0 <= t < vocab.num_entities and 0 <= r < vocab.num_relations):
                    raise ValueError(f"triple {(h, r, t)} out of range for vocabulary")
        return cls(vocab, *splits, filter=build_filter_index(*splits))


def fingerprint_files(paths: Iterable[str | Path]) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(Path(path).name.encode())
        digest.update(b"\0")
        digest.update(Path(path).read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


def load_dataset(data_dir: str | Path) -> Dataset:
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` from ``data_dir``."""
    data_dir = Path(data_dir)
    paths = [data_dir / f"{name}.txt" for name in SPLITS]
    for path in paths:
        if not path.is_file():
            raise DataError(f"missing split file: {path}")
    raw = [load_split(p) for p in paths]
    return Dataset.from_raw(*raw, fingerprint=fingerprint_files(paths))
