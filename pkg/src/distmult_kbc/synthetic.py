"""Small synthetic knowledge bases with learnable cluster structure."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .kb import Dataset, Triple, Vocabulary


def make_cluster_kb(num_entities: int = 50, num_relations: int = 5, num_triples: int = 500,
                    num_clusters: int = 5, split=(0.9, 0.05, 0.05), seed: int = 0) -> Dataset:
    """Random KB in which each relation links clusters through a fixed pairing.

    Entities are dealt round-robin into clusters.  Every relation owns a
    random involution over clusters (so the structure is symmetric, which
    DistMult can express) and a triple ``(h, r, t)`` is only ever drawn
    with ``t`` in the cluster paired with ``h``'s.  Triples are distinct and
    shuffled into train/valid/test by ``split``.
    """
    rng = np.random.default_rng(seed)
    cluster = np.arange(num_entities) % num_clusters
    members = [np.flatnonzero(cluster == c) for c in range(num_clusters)]
    pairing = np.empty((num_relations, num_clusters), dtype=np.int64)
    for r in range(num_relations):
        perm = rng.permutation(num_clusters)
        pairing[r] = np.arange(num_clusters)
        for i in range(0, num_clusters - 1, 2):
            a, b = perm[i], perm[i + 1]
            pairing[r, a], pairing[r, b] = b, a
    capacity = sum(len(members[pairing[r, cluster[h]]]) for r in range(num_relations) for h in range(num_entities))
    if num_triples > capacity:
        raise ValueError(f"at most {capacity} distinct triples fit this structure, asked for {num_triples}")
    seen: set[Triple] = set()
    triples: list[Triple] = []
    while len(triples) < num_triples:
        h = int(rng.integers(num_entities))
        r = int(rng.integers(num_relations))
        t = int(rng.choice(members[pairing[r, cluster[h]]]))
        tr = Triple(h, r, t)
        if tr not in seen:
            seen.add(tr)
            triples.append(tr)
    n_train = int(round(split[0] * num_triples))
    n_valid = int(round(split[1] * num_triples))
    vocab = Vocabulary(tuple(f"e{i}" for i in range(num_entities)), tuple(f"r{i}" for i in range(num_relations)))
    return Dataset.from_triples(vocab, triples[:n_train], triples[n_train:n_train + n_valid],
                                triples[n_train + n_valid:])


def write_dataset(dataset: Dataset, directory: str | Path) -> None:
    """Write a dataset as ``train.txt``/``valid.txt``/``test.txt`` TSV files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    v = dataset.vocabulary
    for name in ("train", "valid", "test"):
        with open(directory / f"{name}.txt", "w", encoding="utf-8", newline="\n") as fh:
            for h, r, t in dataset.split(name):
                fh.write(f"{v.id_to_entity[h]}\t{v.id_to_relation[r]}\t{v.id_to_entity[t]}\n")
