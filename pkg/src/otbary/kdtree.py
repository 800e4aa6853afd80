"""Exact nearest-neighbor search over small-dimensional point clouds.

Balanced kd-trees (median splits, cycling axes) with deterministic
tie-breaking: among equidistant points the smallest stored index wins.
Besides the plain geometric query, the module provides the lifted index
used by the dual ascent: a tree over points ``(sqrt(lam/2) * z_k,
sqrt(offset - phi_k))`` whose nearest-neighbor query evaluates
``min_k lam/2 |y - z_k|^2 - phi_k`` without scanning all k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit

_STACK = 128  # DFS stack bound; ample for balanced trees up to 2**60 points


@njit(cache=True)
def _build_nodes(coords):
    # Iterative median-split build. Node slots are allocated in DFS order,
    # so slot 0 is the root. Returns (axis, point, left, right) per slot.
    n, dim = coords.shape
    order = np.arange(n)
    node_axis = np.empty(n, np.int64)
    node_point = np.empty(n, np.int64)
    node_left = np.full(n, -1, np.int64)
    node_right = np.full(n, -1, np.int64)
    # stack rows: start, end, depth, parent slot, is_left_child
    stack = np.empty((n + 2, 5), np.int64)
    top = 0
    stack[top, 0] = 0
    stack[top, 1] = n
    stack[top, 2] = 0
    stack[top, 3] = -1
    stack[top, 4] = 0
    top += 1
    nslots = 0
    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        depth = stack[top, 2]
        parent = stack[top, 3]
        is_left = stack[top, 4]
        if start >= end:
            continue
        axis = depth % dim
        sub = order[start:end].copy()
        col = coords[:, axis]
        key = col[sub]
        srt = np.argsort(key, kind="mergesort")
        for t in range(end - start):
            order[start + t] = sub[srt[t]]
        mid = (start + end) // 2
        slot = nslots
        nslots += 1
        node_axis[slot] = axis
        node_point[slot] = order[mid]
        if parent >= 0:
            if is_left == 1:
                node_left[parent] = slot
            else:
                node_right[parent] = slot
        stack[top, 0] = start
        stack[top, 1] = mid
        stack[top, 2] = depth + 1
        stack[top, 3] = slot
        stack[top, 4] = 1
        top += 1
        stack[top, 0] = mid + 1
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = slot
        stack[top, 4] = 0
        top += 1
    return node_axis, node_point, node_left, node_right


@njit(cache=True)
def _nearest(coords, node_axis, node_point, node_left, node_right, q):
    # Exact NN with smallest-index tie rule. Subtrees are pruned only when
    # the squared gap to their separating plane strictly exceeds the best
    # squared distance, so all tying candidates are visited.
    best_d2 = np.inf
    best_i = -1
    visits = 0
    stack_slot = np.empty(_STACK, np.int64)
    stack_gap = np.empty(_STACK, np.float64)
    top = 0
    stack_slot[top] = 0
    stack_gap[top] = 0.0
    top += 1
    dim = coords.shape[1]
    while top > 0:
        top -= 1
        slot = stack_slot[top]
        if stack_gap[top] > best_d2:
            continue
        visits += 1
        p = node_point[slot]
        d2 = 0.0
        for a in range(dim):
            diff = q[a] - coords[p, a]
            d2 += diff * diff
        if d2 < best_d2 or (d2 == best_d2 and p < best_i):
            best_d2 = d2
            best_i = p
        axis = node_axis[slot]
        delta = q[axis] - coords[node_point[slot], axis]
        gap2 = delta * delta
        if delta <= 0.0:
            near, far = node_left[slot], node_right[slot]
        else:
            near, far = node_right[slot], node_left[slot]
        if far >= 0:
            stack_slot[top] = far
            stack_gap[top] = gap2
            top += 1
        if near >= 0:
            stack_slot[top] = near
            stack_gap[top] = 0.0
            top += 1
    return best_i, best_d2, visits


@njit(cache=True)
def _ball(coords, node_axis, node_point, node_left, node_right, q, r2, out):
    # Indices of all points with squared distance <= r2, in visit order.
    count = 0
    stack_slot = np.empty(_STACK, np.int64)
    stack_gap = np.empty(_STACK, np.float64)
    top = 0
    stack_slot[top] = 0
    stack_gap[top] = 0.0
    top += 1
    dim = coords.shape[1]
    while top > 0:
        top -= 1
        slot = stack_slot[top]
        if stack_gap[top] > r2:
            continue
        p = node_point[slot]
        d2 = 0.0
        for a in range(dim):
            diff = q[a] - coords[p, a]
            d2 += diff * diff
        if d2 <= r2:
            out[count] = p
            count += 1
        axis = node_axis[slot]
        delta = q[axis] - coords[p, axis]
        gap2 = delta * delta
        if node_left[slot] >= 0:
            stack_slot[top] = node_left[slot]
            stack_gap[top] = gap2 if delta > 0.0 else 0.0
            top += 1
        if node_right[slot] >= 0:
            stack_slot[top] = node_right[slot]
            stack_gap[top] = gap2 if delta <= 0.0 else 0.0
            top += 1
    return count


@njit(cache=True)
def _nearest_potential(
    coords,
    node_axis,
    node_point,
    node_left,
    node_right,
    zpts,
    phi,
    halflam,
    offset,
    y,
):
    # Minimize v_k = halflam*|y - z_k|^2 - phi_k via the lifted tree.
    # Candidate values use the plain formula (bitwise equal to a linear
    # scan); pruning happens in lifted geometry with a relative slack so
    # rounding differences between the two formulas never cut a tie.
    best_v = np.inf
    best_i = -1
    d = zpts.shape[1]
    q = np.empty(d + 1, np.float64)
    root = np.sqrt(halflam)
    for a in range(d):
        q[a] = root * y[a]
    q[d] = 0.0
    stack_slot = np.empty(_STACK, np.int64)
    stack_gap = np.empty(_STACK, np.float64)
    top = 0
    stack_slot[top] = 0
    stack_gap[top] = 0.0
    top += 1
    while top > 0:
        top -= 1
        slot = stack_slot[top]
        if best_i >= 0:
            thresh = (best_v + offset) * (1.0 + 1e-9) + 1e-30
            if thresh < 0.0:
                thresh = 0.0
            if stack_gap[top] > thresh:
                continue
        p = node_point[slot]
        s = 0.0
        for a in range(d):
            diff = y[a] - zpts[p, a]
            s += diff * diff
        v = halflam * s - phi[p]
        if v < best_v or (v == best_v and p < best_i):
            best_v = v
            best_i = p
        axis = node_axis[slot]
        delta = q[axis] - coords[p, axis]
        gap2 = delta * delta
        if delta <= 0.0:
            near, far = node_left[slot], node_right[slot]
        else:
            near, far = node_right[slot], node_left[slot]
        if far >= 0:
            stack_slot[top] = far
            stack_gap[top] = gap2
            top += 1
        if near >= 0:
            stack_slot[top] = near
            stack_gap[top] = 0.0
            top += 1
    return best_i, best_v


@njit(cache=True)
def _nearest_potential_batch(
    coords,
    node_axis,
    node_point,
    node_left,
    node_right,
    zpts,
    phi,
    halflam,
    offset,
    ys,
    out_idx,
    out_val,
):
    for j in range(ys.shape[0]):
        k, v = _nearest_potential(
            coords,
            node_axis,
            node_point,
            node_left,
            node_right,
            zpts,
            phi,
            halflam,
            offset,
            ys[j],
        )
        out_idx[j] = k
        out_val[j] = v


@dataclass(frozen=True)
class KdTree:
    """Immutable balanced kd-tree over ``points``; safe for concurrent queries."""

    points: np.ndarray
    node_axis: np.ndarray
    node_point: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]

    def depth(self) -> int:
        """Maximum number of edges from the root to any node."""
        depths = np.zeros(len(self), dtype=np.int64)
        out = 0
        for slot in range(len(self)):  # parents precede children in slot order
            for child in (self.node_left[slot], self.node_right[slot]):
                if child >= 0:
                    depths[child] = depths[slot] + 1
                    out = max(out, depths[child])
        return out

    def nearest(self, query) -> tuple[int, float]:
        """Index and squared distance of the exact nearest stored point.

        Ties are broken toward the smallest index.
        """
        q = np.ascontiguousarray(query, dtype=np.float64)
        i, d2, _ = _nearest(
            self.points, self.node_axis, self.node_point, self.node_left, self.node_right, q
        )
        return int(i), float(d2)

    def nearest_with_visits(self, query) -> tuple[int, float, int]:
        q = np.ascontiguousarray(query, dtype=np.float64)
        i, d2, visits = _nearest(
            self.points, self.node_axis, self.node_point, self.node_left, self.node_right, q
        )
        return int(i), float(d2), int(visits)

    def ball(self, query, r2: float) -> np.ndarray:
        """Indices of all points with squared distance <= ``r2`` (sorted)."""
        q = np.ascontiguousarray(query, dtype=np.float64)
        out = np.empty(len(self), dtype=np.int64)
        count = _ball(
            self.points,
            self.node_axis,
            self.node_point,
            self.node_left,
            self.node_right,
            q,
            float(r2),
            out,
        )
        res = out[:count]
        res.sort()
        return res


def build(points) -> KdTree:
    """Build a balanced kd-tree (median splits, cycling axes) in O(N log N)."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("kd-tree needs at least one point")
    axis, point, left, right = _build_nodes(pts)
    return KdTree(pts, axis, point, left, right)


def nearest(index: KdTree, query) -> tuple[int, float]:
    return index.nearest(query)


@dataclass(frozen=True)
class LiftedIndex:
    """Search structure for ``min_k lam/2 |y - z_k|^2 - phi_k``.

    The tree holds the lifted points ``(sqrt(lam/2) z_k, sqrt(offset - phi_k))``
    with ``offset = max_k phi_k``, so the shifted minimum becomes a euclidean
    nearest-neighbor problem in d+1 dimensions. Rebuilt whenever ``phi``
    changes; queries are read-only.
    """

    tree: KdTree
    zpts: np.ndarray
    phi: np.ndarray
    halflam: float
    offset: float

    def min_potential(self, y) -> tuple[int, float]:
        """Arg-min index (smallest on ties) and minimal shifted value at ``y``."""
        yy = np.ascontiguousarray(y, dtype=np.float64)
        t = self.tree
        k, v = _nearest_potential(
            t.points,
            t.node_axis,
            t.node_point,
            t.node_left,
            t.node_right,
            self.zpts,
            self.phi,
            self.halflam,
            self.offset,
            yy,
        )
        return int(k), float(v)

    def min_potential_batch(self, ys) -> tuple[np.ndarray, np.ndarray]:
        yy = np.ascontiguousarray(ys, dtype=np.float64)
        idx = np.empty(yy.shape[0], dtype=np.int64)
        val = np.empty(yy.shape[0], dtype=np.float64)
        t = self.tree
        _nearest_potential_batch(
            t.points,
            t.node_axis,
            t.node_point,
            t.node_left,
            t.node_right,
            self.zpts,
            self.phi,
            self.halflam,
            self.offset,
            yy,
            idx,
            val,
        )
        return idx, val

    def active_below(self, y, bound: float) -> np.ndarray:
        """All k with ``lam/2 |y - z_k|^2 - phi_k <= bound`` (exact, sorted)."""
        yy = np.ascontiguousarray(y, dtype=np.float64)
        d = self.zpts.shape[1]
        q = np.empty(d + 1)
        q[:d] = np.sqrt(self.halflam) * yy
        q[d] = 0.0
        r2 = (bound + self.offset) * (1.0 + 1e-9) + 1e-30
        if r2 < 0.0:
            return np.empty(0, dtype=np.int64)
        cand = self.tree.ball(q, r2)
        if cand.size == 0:
            return cand
        diff = yy[None, :] - self.zpts[cand]
        vals = self.halflam * np.einsum("na,na->n", diff, diff) - self.phi[cand]
        return cand[vals <= bound]


def lift(zpts, phi, lam: float) -> LiftedIndex:
    """Lift grid points and potentials for one population and index them."""
    z = np.ascontiguousarray(zpts, dtype=np.float64)
    ph = np.ascontiguousarray(phi, dtype=np.float64)
    if z.shape[0] != ph.shape[0]:
        raise ValueError("phi length must match number of grid points")
    offset = float(ph.max())
    halflam = 0.5 * float(lam)
    lifted = np.empty((z.shape[0], z.shape[1] + 1))
    lifted[:, :-1] = np.sqrt(halflam) * z
    lifted[:, -1] = np.sqrt(offset - ph)
    return LiftedIndex(build(lifted), z, ph, halflam, offset)
