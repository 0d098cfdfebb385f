"""Step-by-step evaluation of one LGR layer on the 2-leaf / 1-root graph.

Plain Python floats, no shared code with the C++ library. Writes the weights,
intermediate node states and the output feature map to a JSON fixture.
"""
import json
import math
import sys


def mm(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def tr(a):
    return [list(r) for r in zip(*a)]


def relu(a):
    return [[max(0.0, v) for v in r] for r in a]


def add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def softmax_row(r):
    m = max(r)
    e = [math.exp(v - m) for v in r]
    s = sum(e)
    return [v / s for v in e]


W = {
    "F": [[0.6, -0.2], [0.1, 0.9]],
    "node.scores": [[0.5, -0.3], [0.2, 0.4]],
    "node.features": [[0.7, 0.1], [-0.2, 0.8]],
    "up0.adj": [[0.8], [0.6]],
    "up0.feat": [[0.7], [0.5]],
    "up0.transform": [[0.6, 0.2], [-0.1, 0.9]],
    "down0.feat": [[0.9, 0.4]],
    "down0.transform": [[0.5, 0.3], [0.2, 0.8]],
    "reason0": [[0.9, -0.1], [0.3, 0.6]],
    "reason1": [[1.1, 0.2], [0.1, 0.7]],
    "map.scores": [[0.3], [-0.4], [0.6], [0.2]],
    "map.features": [[0.4, 0.7], [0.9, -0.2]],
}



def trace(a_leaf):
    F = W["F"]
    # Map-to-node    : softmax over the node axis of F Ws, then relu(Phi^T F Wf).
    phi = [softmax_row(r) for r in mm(F, W["node.scores"])]
    x_leaf = relu(mm(tr(phi), mm(F, W["node.features"])))

    x1 = relu(mm(mm(a_leaf, x_leaf), W["reason0"]))

    # Cluster into the root.
    x_up = relu(mm(mm(tr(W["up0.feat"]), mm(a_leaf, x1)), W["up0.transform"]))
    raw_up = relu(mm(mm(tr(W["up0.adj"]), a_leaf), W["up0.adj"]))
    # One node: symmetrizing keeps it, zeroing the diagonal gives 0, so the
    # renormalized adjacency is [[1]].
    a_up = [[1.0]]
    x_up2 = relu(mm(mm(a_up, x_up), W["reason1"]))

    # Deconvolve back to the leaves, add the cached leaf states, reason again.
    x_down = relu(mm(mm(tr(W["down0.feat"]), mm(a_up, x_up2)), W["down0.transform"]))
    x_evolved = relu(mm(mm(a_leaf, add(x_down, x1)), W["reason0"]))

    # Node-to-map: score of (pixel p, node n) = [F_p, X_n] . w.
    ws = [r[0] for r in W["map.scores"]]
    C = len(F[0])
    proj = relu(mm(x_evolved, W["map.features"]))
    out = []
    for p in range(len(F)):
        scores = [sum(F[p][c] * ws[c] for c in range(C)) + sum(x_evolved[n][k] * ws[C + k] for k in range(len(x_evolved[0])))
                  for n in range(len(x_evolved))]
        a = softmax_row(scores)
        out.append([max(0.0, sum(a[n] * proj[n][c] for n in range(len(a)))) for c in range(C)])
    return {
        "x_leaf": x_leaf,
        "x_after_leaf_reasoning": x1,
        "x_up": x_up,
        "raw_up_adjacency": raw_up,
        "x_evolved": x_evolved,
        "output": out,
    }


fixture = {
    "weights": W,
    # Leaves joined by an edge: normalized adjacency is 1/2 everywhere.
    "with_edge": trace([[0.5, 0.5], [0.5, 0.5]]),
    # No leaf edge: normalized adjacency is the identity.
    "no_edge": trace([[1.0, 0.0], [0.0, 1.0]]),
}
json.dump(fixture, open(sys.argv[1], "w") if len(sys.argv) > 1 else sys.stdout, indent=1)
