"""
Neighbour routing inside one disentangling layer
================================================

Each user keeps K chunks.  Edge confidences start uniform and are refined by
the dot product between a chunk and the neighbouring item, so items drift
towards the intent whose chunk they resemble.
"""

import tempfile

import numpy as np

from midgn import build_bipartite, InteractionMatrix
from midgn.disentangle import disentangle_layer, dump_confidences, plain_aggregate

# one user, four items: two point along x, two along y
items = np.array([[2.0, 0.0], [1.5, 0.2], [0.1, 2.0], [0.0, 1.8]])
g = build_bipartite(InteractionMatrix.from_pairs([0, 0, 0, 0], [0, 1, 2, 3], 1, 4))

# chunk 0 leans towards x, chunk 1 towards y
chunks = np.array([[[1.0, 0.0], [0.0, 1.0]]])
for t in (1, 2, 3):
    record = []
    out = disentangle_layer(g, chunks, items, t, record=record)
    print(f"T={t} routing weights per item (rows) and intent (cols):")
    print(record[-1].round(3))
print("chunk outputs after T=3:\n", out[0].round(3))

# with a single intent the layer is plain normalised aggregation
print("K=1 equals plain aggregation:",
      np.allclose(disentangle_layer(g, chunks[:, :1], items, 3)[:, 0], plain_aggregate(g, items)))

path = tempfile.mktemp(suffix=".tsv")
dump_confidences(g, record[-1], path)
print(open(path).read().splitlines()[:3])
