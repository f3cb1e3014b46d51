"""
Exact inference on a tiny label graph
-------------------------------------

Three fine classes, one coarse type with two coarse classes. Fine classes
1 and 2 share coarse class 1, class 3 sits alone under coarse class 2.
"""
import math

import numpy as np

from bgl import LabelGraph, ScoreSet, backward_fast, forward, nll
from bgl.oracle import enumerate_joint

graph = LabelGraph(3, [2], [[0], [0], [1]])
scores = ScoreSet([0.0, 0.0, 0.0], [[math.log(2), 0.0]])

post = forward(graph, scores)
print("h   =", np.exp(post.log_h))         # [2, 2, 1]
print("z   =", math.exp(post.log_z))       # 5
print("p   =", post.p)                     # [.4, .4, .2]
print("p^1 =", post.p_coarse[0])           # [.8, .2]

# the brute-force table visits every (i, c) pair and keeps only the k
# states allowed by the parent table
table = enumerate_joint(graph, scores)
print("supported joint states:", table.n_supported, "of", graph.k * graph.coarse_sizes[0])
print("oracle z =", table.z)

# loss and gradient for label 1 (0-based index 0)
print("nll(y=1) =", nll(graph, scores, 0))
grad = backward_fast(graph, post, 0)
print("d nll / d f   =", grad.df)
print("d nll / d f^1 =", grad.df_coarse[0])
print("sums:", grad.df.sum(), grad.df_coarse[0].sum())   # both 0
