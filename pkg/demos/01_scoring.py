# %% [markdown]
# # Scoring triples with DistMult
#
# A triple's score is the sum over dimensions of head * relation * tail.
# Swapping head and tail never changes it, so the model cannot tell a
# relation from its inverse.

# %%
import numpy as np

from distmult_kbc.kb import Direction, Query
from distmult_kbc.model import ModelParams, init_params, log_softmax_all, score, score_all_candidates

params = ModelParams(np.array([[1.0, 2.0], [5.0, 6.0], [0.5, -1.0]]), np.array([[3.0, 4.0]]))
print("s(0, r, 1) =", score(params, 0, 0, 1))  # 1*3*5 + 2*4*6 = 63
print("s(1, r, 0) =", score(params, 1, 0, 0))

# %% [markdown]
# Scoring a query against a list of candidates gives the same numbers, bit
# for bit, as scoring each triple separately.

# %%
scored = score_all_candidates(params, Query(0, 0, Direction.TAIL, 1), [0, 1, 2])
print(scored.scores, [score(params, 0, 0, c) for c in (0, 1, 2)])
print("P(candidate | 0, r):", np.exp(log_softmax_all(scored.scores)).round(4))

# %% [markdown]
# Random initialisation draws every entry from N(0, 1/N), so initial scores
# are small and the softmax over candidates starts close to uniform.

# %%
p = init_params(1000, 10, 128, seed=0)
print("entry std:", p.entity_embeddings.std().round(4), "expected:", round(1 / np.sqrt(128), 4))
