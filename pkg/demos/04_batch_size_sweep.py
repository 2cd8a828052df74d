# %% [markdown]
# # Batch-size sweep
#
# The same grid runner behind ``distmult-kbc sweep``, here at toy scale.
# Every grid point uses one seed, so only the batch size varies.

# %%
import tempfile
from pathlib import Path

from distmult_kbc.cli import cmd_plot_data, cmd_sweep
from distmult_kbc.synthetic import make_cluster_kb, write_dataset

work = Path(tempfile.mkdtemp())
write_dataset(make_cluster_kb(seed=0), work / "data")
(work / "sweep.cfg").write_text(
    "grid.b = 16, 64, 256, 1024\n"
    "N = 32\nM = 20\nmax_epochs = 60\npatience = 10\nvalid_sample = none\n"
)
csv_path = cmd_sweep(work / "data", work / "sweep.cfg", work / "out")
print(csv_path.read_text())

# %% [markdown]
# At this scale the large batches lose: with 900 training queries, b=1024 is
# a single Adam step per epoch, and early stopping gives up long before the
# model moves.  The batch-size effect of interest shows up on full-size data
# where every batch size gets many steps per epoch.
#
# ``plot-data`` turns the leaderboard into x/y columns (Hits@10 and Hits@1
# against batch size) ready for gnuplot or matplotlib.

# %%
print(cmd_plot_data(csv_path, x="b", ys=["H10", "H1"], header=True))
