# %% [markdown]
# # Averaging several models
#
# Each member's scores become probabilities over the filtered candidate set;
# the ensemble averages those probabilities.  Members may have different
# embedding sizes since probabilities do not depend on score scale.

# %%
from distmult_kbc.ensemble import Ensemble
from distmult_kbc.evaluator import evaluate
from distmult_kbc.kb import expand_queries
from distmult_kbc.synthetic import make_cluster_kb
from distmult_kbc.trainer import TrainConfig, fit

ds = make_cluster_kb(seed=0)
members = []
for seed, dim in ((0, 16), (1, 32), (2, 48)):
    cfg = TrainConfig(dim=dim, batch_size=64, negatives=20, max_epochs=120, patience=20, valid_sample=None, seed=seed)
    members.append(fit(ds, cfg)[0])

test_q = expand_queries(ds.test)
for i, p in enumerate(members):
    m = evaluate(p, test_q, ds.num_entities, ds.filter)
    print(f"member {i} (N={p.dim}): MRR {m.mean_reciprocal_rank:.3f}  H@1 {m.hits_at[1]:.2f}")
m = evaluate(Ensemble(members), test_q, ds.num_entities, ds.filter)
print(f"ensemble:          MRR {m.mean_reciprocal_rank:.3f}  H@1 {m.hits_at[1]:.2f}")

# %% [markdown]
# An ensemble of copies of one model ranks exactly like the model itself.

# %%
single = evaluate(members[0], test_q, ds.num_entities, ds.filter)
copies = evaluate(Ensemble([members[0]] * 3), test_q, ds.num_entities, ds.filter)
print("identical ranks:", single.per_query_ranks == copies.per_query_ranks)
