"""Clustering two views so that their clusters predict each other.

Every sample has a point in X and a point in Y, drawn from three blobs in
each view.  The blob labels are perfectly coupled.  Associative clustering
looks for Voronoi partitions of both spaces whose contingency table
departs most from independence, as measured by a Bayes factor.  A
bootstrap then marks pairs of samples that reliably fall in the same
cross cluster.
"""

import numpy as np

from genedep.assoclust import ac_bootstrap, ac_fit
from genedep.datagen import gen_coupled_partitions

x, y, truth = gen_coupled_partitions(seed=2, n=100, dx=2, dy=2, kx=3, ky=3, coupling=1.0)
model = ac_fit(x, y, 3, 3)
print("contingency table:\n", model.table.counts)
print(f"log Bayes factor {model.log_bf:.1f} (independent k-means: {model.baseline_log_bf:.1f})")

co = ac_bootstrap(x, y, 3, 3, runs=10, seed=0)
same = truth.payload["labels_x"][:, None] == truth.payload["labels_x"][None, :]
pairs = np.array(co.reliable_pairs())
print("reliable pairs:", len(pairs))
if len(pairs):
    print("fraction from the same planted cell:", same[pairs[:, 0], pairs[:, 1]].mean())
