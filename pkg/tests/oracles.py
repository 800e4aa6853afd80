"""Independent brute-force oracles used by the test suite.

These deliberately avoid the library's own solution paths: transportation
optima come from enumerating every basic solution (spanning tree) of the
transportation polytope, assignment optima from enumerating permutations.
"""

import itertools

import numpy as np

from otbary._jit import njit


@njit(cache=True)
def _decode_tree(seq_r, seq_c, m, n, edge_r, edge_c):
    # Bipartite Prufer decode: leaves on the row side consume seq_r, leaves
    # on the column side consume seq_c, smallest-label leaf first. Returns
    # the number of edges written (m+n-1) and fills edge_r/edge_c.
    deg = np.ones(m + n, np.int64)
    for t in range(seq_r.shape[0]):
        deg[m + seq_r[t]] += 1
    for t in range(seq_c.shape[0]):
        deg[seq_c[t]] += 1
    alive = np.ones(m + n, np.bool_)
    pr = 0
    pc = 0
    ne = 0
    total = m + n
    while total > 2:
        leaf = -1
        for v in range(m + n):
            if alive[v] and deg[v] == 1:
                leaf = v
                break
        if leaf < 0:
            return -1
        if leaf < m:
            if pr >= seq_r.shape[0]:
                return -1
            other = m + seq_r[pr]
            pr += 1
            edge_r[ne] = leaf
            edge_c[ne] = other - m
        else:
            if pc >= seq_c.shape[0]:
                return -1
            other = seq_c[pc]
            pc += 1
            edge_r[ne] = other
            edge_c[ne] = leaf - m
        ne += 1
        alive[leaf] = False
        deg[leaf] = 0
        deg[other] -= 1
        total -= 1
    a = -1
    b = -1
    for v in range(m + n):
        if alive[v]:
            if a < 0:
                a = v
            else:
                b = v
    if a >= m or b < m:
        return -1
    edge_r[ne] = a
    edge_c[ne] = b - m
    return ne + 1


@njit(cache=True)
def _tree_flow_cost(edge_r, edge_c, supply, demand, cost):
    # Solve the unique flow on a spanning tree by leaf stripping; returns
    # the plan cost, or inf when some flow is negative (infeasible basis).
    m = supply.shape[0]
    n = demand.shape[0]
    ne = m + n - 1
    bal = np.empty(m + n)
    for i in range(m):
        bal[i] = supply[i]
    for j in range(n):
        bal[m + j] = demand[j]
    deg = np.zeros(m + n, np.int64)
    for e in range(ne):
        deg[edge_r[e]] += 1
        deg[m + edge_c[e]] += 1
    used = np.zeros(ne, np.bool_)
    total = 0.0
    for _ in range(ne):
        pick = -1
        for e in range(ne):
            if not used[e] and (deg[edge_r[e]] == 1 or deg[m + edge_c[e]] == 1):
                pick = e
                break
        if pick < 0:
            return np.inf
        r = edge_r[pick]
        c = m + edge_c[pick]
        if deg[r] == 1:
            f = bal[r]
            bal[c] -= f
        else:
            f = bal[c]
            bal[r] -= f
        if f < -1e-12:
            return np.inf
        total += f * cost[edge_r[pick], edge_c[pick]]
        used[pick] = True
        deg[r] -= 1
        deg[c] -= 1
    return total


@njit(cache=True)
def _enumerate_transportation(m, n, supply, demand, cost, masks):
    # Every spanning tree of K_{m,n} via all (seq_r, seq_c) Prufer pairs.
    # Each decoded tree is recorded as a bitmask over the m*n edge ids
    # (collision-free), so callers can verify the enumeration hits every
    # tree exactly once. Returns (optimum, number of valid trees decoded).
    best = np.inf
    count = 0
    nr = n ** (m - 1)
    nc = m ** (n - 1)
    seq_r = np.empty(m - 1, np.int64)
    seq_c = np.empty(n - 1, np.int64)
    edge_r = np.empty(m + n - 1, np.int64)
    edge_c = np.empty(m + n - 1, np.int64)
    for a in range(nr):
        x = a
        for t in range(m - 1):
            seq_r[t] = x % n
            x //= n
        for b in range(nc):
            x = b
            for t in range(n - 1):
                seq_c[t] = x % m
                x //= m
            ne = _decode_tree(seq_r, seq_c, m, n, edge_r, edge_c)
            if ne != m + n - 1:
                continue
            mask = 0
            for e in range(ne):
                mask |= 1 << (edge_r[e] * n + edge_c[e])
            masks[count] = mask
            count += 1
            val = _tree_flow_cost(edge_r, edge_c, supply, demand, cost)
            if val < best:
                best = val
    return best, count


def transportation_by_vertex_enumeration(cost, supply, demand):
    """Exact transportation optimum from enumerating all basic solutions.

    Verifies on the way that the enumeration produced exactly the
    m^(n-1) * n^(m-1) distinct spanning trees of K_{m,n}, i.e. that every
    vertex of the transportation polytope was inspected.
    """
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    if m * n > 62:
        raise ValueError("edge bitmask limited to 62 edges")
    expected = n ** (m - 1) * m ** (n - 1)
    masks = np.zeros(expected, dtype=np.int64)
    best, count = _enumerate_transportation(
        m, n, np.asarray(supply, dtype=np.float64), np.asarray(demand, dtype=np.float64), cost, masks
    )
    assert count == expected, f"decoded {count} trees, expected {expected}"
    assert np.unique(masks).size == expected, "tree enumeration produced duplicates"
    return float(best)


def assignment_by_permutation(cost):
    """Exact assignment optimum by enumerating all permutations."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    rng = range(n)
    return min(sum(cost[i, p[i]] for i in rng) for p in itertools.permutations(rng))
