import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dataset_from, random_kb
from distmult_kbc.kb import Direction, Query, Triple, build_filter_index, expand_queries
from distmult_kbc.model import ModelParams, ScoredCandidates, init_params, score, score_all_candidates
from distmult_kbc.evaluator import (
    TiePolicy, build_candidates, evaluate, metrics_from_ranks, query_ranks, rank_of_truth,
    write_metrics_json, write_rank_csv,
)
from oracles import scan_filtered, sorted_ranks


def test_build_candidates_examples():
    f = build_filter_index([Triple(0, 0, 1)])
    assert build_candidates(Query(0, 0, Direction.TAIL, 1), 3, f).tolist() == [0, 1, 2]
    splits = [[Triple(0, 0, 1), Triple(0, 0, 2)], [], []]
    f2 = build_filter_index(*splits)
    expected = scan_filtered(0, 0, True, 1, 3, splits)
    assert build_candidates(Query(0, 0, Direction.TAIL, 1), 3, f2).tolist() == expected == [0, 1]
    assert build_candidates(Query(1, 0, Direction.HEAD, 0), 3, f).tolist() == [0, 1, 2]
    f3 = build_filter_index([Triple(0, 0, 1), Triple(2, 0, 1)])
    assert build_candidates(Query(1, 0, Direction.HEAD, 0), 3, f3).tolist() == [0, 1]


def sc(scores, truth):
    return ScoredCandidates(np.arange(len(scores)), scores, truth)


def test_rank_examples():
    for p in TiePolicy:
        assert rank_of_truth(sc([5.0, 3.0, 1.0], 0), p) == 1
        assert rank_of_truth(sc([5.0, 3.0, 1.0], 2), p) == 3
    flat = sc([2.0] * 11, 4)
    assert rank_of_truth(flat, TiePolicy.OPTIMISTIC) == 1
    assert rank_of_truth(flat, TiePolicy.PESSIMISTIC) == 11
    assert rank_of_truth(flat, TiePolicy.AVERAGE) == 6


def test_metric_fixture():
    m = metrics_from_ranks([1, 2, 10, 100], ks=(1, 10))
    assert m.mean_rank == 28.25
    assert m.mean_reciprocal_rank == 0.4025
    assert m.hits_at == {1: 0.25, 10: 0.75}
    perfect = metrics_from_ranks([1, 1, 1])
    assert (perfect.mean_rank, perfect.mean_reciprocal_rank) == (1.0, 1.0)
    assert set(perfect.hits_at.values()) == {1.0}
    single = metrics_from_ranks([7.5], ks=(1, 10))
    assert (single.mean_rank, single.mean_reciprocal_rank, single.hits_at) == (7.5, 1 / 7.5, {1: 0.0, 10: 1.0})


def test_evaluate_hand_model():
    # entity 1 scores highest for (0, r0, ?); entity 2 beats entity 3
    E = np.array([[1.0, 1.0], [3.0, 3.0], [2.0, 2.0], [1.0, 1.0]])
    p = ModelParams(E, np.array([[1.0, 1.0]]))
    ds = dataset_from(4, 1, [Triple(0, 0, 2)], [Triple(0, 0, 3)], [Triple(0, 0, 1)])
    q_tail = [q for q in expand_queries(ds.test) if q.direction is Direction.TAIL]
    assert evaluate(p, q_tail, 4, ds.filter).per_query_ranks == [1.0]
    q_valid = [q for q in expand_queries(ds.valid) if q.direction is Direction.TAIL]
    # (0, r0, ?) with truth 3: tails 1 and 2 are known, so candidates are {0, 3}, both scoring 2
    assert build_candidates(q_valid[0], 4, ds.filter).tolist() == [0, 3]
    for policy, rank in ((TiePolicy.OPTIMISTIC, 1), (TiePolicy.PESSIMISTIC, 2), (TiePolicy.AVERAGE, 1.5)):
        assert evaluate(p, q_valid, 4, ds.filter, policy).per_query_ranks == [rank]


def brute_force_ranks(params, ds, query, int_scores):
    E, R = params.entity_embeddings, params.relation_embeddings
    tail = query.direction is Direction.TAIL
    cands = scan_filtered(query.anchor, query.relation, tail, query.truth, ds.num_entities,
                          [ds.train, ds.valid, ds.test])
    if int_scores:
        fn = lambda e: sum(int(x) for x in E[query.anchor] * R[query.relation] * E[e])  # noqa: E731
    else:
        fn = lambda e: score(params, query.anchor, query.relation, e)  # noqa: E731
    scores = [fn(e) for e in cands]
    return sorted_ranks(scores, cands.index(query.truth))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_ranks_match_brute_force(seed, int_params):
    rng = np.random.default_rng(seed)
    n_ent, n_rel, *splits = random_kb(rng, max_triples=60)
    ds = dataset_from(n_ent, n_rel, *splits)
    dim = int(rng.integers(1, 5))
    if int_params:
        params = ModelParams(rng.integers(-1, 2, (n_ent, dim)), rng.integers(-1, 2, (n_rel, dim)))
    else:
        params = init_params(n_ent, n_rel, dim, seed=seed)
    queries = expand_queries(ds.train + ds.valid + ds.test)
    policies = [TiePolicy.OPTIMISTIC, TiePolicy.PESSIMISTIC, TiePolicy.AVERAGE]
    got = query_ranks(params, queries, n_ent, ds.filter, policies)
    for i, q in enumerate(queries):
        expected = brute_force_ranks(params, ds, q, int_params)
        assert tuple(got[p][i] for p in policies) == expected
        n_cands = len(build_candidates(q, n_ent, ds.filter))
        assert 1 <= got[TiePolicy.OPTIMISTIC][i] <= got[TiePolicy.AVERAGE][i] <= got[TiePolicy.PESSIMISTIC][i] <= n_cands


@settings(max_examples=50)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=30), st.data())
def test_shift_invariance(scores, data):
    truth = data.draw(st.integers(0, len(scores) - 1))
    shift = data.draw(st.sampled_from([-1024.0, -1.0, 0.5, 2048.0]))
    base = np.array(scores, dtype=float)
    for p in TiePolicy:
        assert rank_of_truth(sc(base, truth), p) == rank_of_truth(sc(base + shift, truth), p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_filtered_never_worse_than_raw(seed):
    rng = np.random.default_rng(seed)
    n_ent, n_rel, *splits = random_kb(rng, max_triples=80)
    ds = dataset_from(n_ent, n_rel, *splits)
    params = init_params(n_ent, n_rel, 3, seed=seed)
    queries = expand_queries(ds.train)
    filtered = query_ranks(params, queries, n_ent, ds.filter, list(TiePolicy))
    for i, q in enumerate(queries):
        raw = score_all_candidates(params, q, np.arange(n_ent))
        for p in TiePolicy:
            assert filtered[p][i] <= rank_of_truth(raw, p)


@settings(max_examples=50)
@given(st.lists(st.floats(1, 1000), min_size=1, max_size=50), st.lists(st.integers(1, 100), min_size=1, max_size=6))
def test_metric_invariants(ranks, ks):
    m = metrics_from_ranks(ranks, ks)
    assert m.mean_rank >= 1 and 0 < m.mean_reciprocal_rank <= 1
    ordered = [m.hits_at[k] for k in sorted(m.hits_at)]
    assert ordered == sorted(ordered) and all(0 <= h <= 1 for h in ordered)


def test_metrics_json_and_rank_csv(tmp_path, toy_kb):
    params = init_params(toy_kb.num_entities, toy_kb.num_relations, 8, seed=0)
    queries = expand_queries(toy_kb.test)
    m = evaluate(params, queries, toy_kb.num_entities, toy_kb.filter, TiePolicy.PESSIMISTIC, ks=(1, 10))
    write_metrics_json(m, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert set(doc) == {"mr", "mrr", "hits", "num_queries", "tie_policy", "per_direction"}
    assert set(doc["hits"]) == {"1", "10"}
    assert doc["tie_policy"] == "pessimistic"
    assert doc["num_queries"] == len(queries)
    assert set(doc["per_direction"]) == {"head", "tail"}
    assert sum(d["num_queries"] for d in doc["per_direction"].values()) == len(queries)
    write_rank_csv(m, queries, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == len(queries)
    assert rows[0]["direction"] == "tail" and rows[1]["direction"] == "head"
    assert [float(r["rank"]) for r in rows] == m.per_query_ranks


def test_evaluate_rejects_empty():
    with pytest.raises(ValueError):
        evaluate(init_params(2, 1, 2, 0), [], 2, build_filter_index())


def test_evaluate_rejects_nonfinite_scores(toy_kb):
    p = init_params(toy_kb.num_entities, toy_kb.num_relations, 4, seed=0)
    p.entity_embeddings[:] = 1e300
    with pytest.raises(FloatingPointError, match="non-finite"):
        evaluate(p, expand_queries(toy_kb.test), toy_kb.num_entities, toy_kb.filter)
