import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from distmult_kbc.kb import Triple, Vocabulary, Dataset  # noqa: E402
from distmult_kbc.model import ModelParams  # noqa: E402


def random_kb(rng, max_entities=30, max_relations=5, max_triples=200):
    """Random encoded dataset: (num_entities, num_relations, train, valid, test)."""
    n_ent = int(rng.integers(2, max_entities + 1))
    n_rel = int(rng.integers(1, max_relations + 1))
    n_tr = int(rng.integers(1, max_triples + 1))
    trip = [Triple(int(rng.integers(n_ent)), int(rng.integers(n_rel)), int(rng.integers(n_ent))) for _ in range(n_tr)]
    a, b = sorted(rng.integers(0, n_tr + 1, size=2))
    return n_ent, n_rel, trip[:a], trip[a:b], trip[b:]


def dataset_from(n_ent, n_rel, train, valid, test):
    vocab = Vocabulary(tuple(f"e{i}" for i in range(n_ent)), tuple(f"r{i}" for i in range(n_rel)))
    return Dataset.from_triples(vocab, train, valid, test)


@pytest.fixture
def hand_params():
    # entity 0 = (1, 2), entity 1 = (5, 6), relation 0 = (3, 4)
    return ModelParams(np.array([[1.0, 2.0], [5.0, 6.0], [0.0, 0.0]]), np.array([[3.0, 4.0]]))


@pytest.fixture
def toy_kb():
    from distmult_kbc.synthetic import make_cluster_kb

    return make_cluster_kb(seed=0)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.kwargs["number"], marker.kwargs["title"]
    if call.when == "setup" and call.excinfo is not None:
        skipped = call.excinfo.errisinstance(pytest.skip.Exception)
        _CRITERIA[number] = (title, "SKIP" if skipped else "FAIL")
    elif call.when == "call":
        _CRITERIA[number] = (title, "FAIL" if call.excinfo is not None else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
