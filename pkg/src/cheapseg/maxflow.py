"""s-t max-flow / min-cut.

The production solver is the Boykov-Kolmogorov augmenting-path algorithm
(search trees grown from both terminals and reused across augmentations),
compiled with numba.  :func:`edmonds_karp` is a deliberately plain BFS
implementation kept as a cross-check.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np
from numba import njit

FREE, SRC, SNK = 0, 1, 2
TERMINAL, ORPHAN, NONE = -1, -2, -3
INF_DIST = 1 << 60


@dataclass
class FlowNetwork:
    n_nodes: int
    tails: np.ndarray
    heads: np.ndarray
    caps: np.ndarray
    source: int = 0
    sink: int = 1

    def __post_init__(self):
        self.tails = np.asarray(self.tails, dtype=np.int64)
        self.heads = np.asarray(self.heads, dtype=np.int64)
        self.caps = np.asarray(self.caps, dtype=np.float64)
        if self.source == self.sink:
            raise ValueError("source and sink must differ")
        if not (len(self.tails) == len(self.heads) == len(self.caps)):
            raise ValueError("arc arrays must have equal length")
        if (self.caps < 0).any():
            raise ValueError("capacities must be non-negative")
        for arr in (self.tails, self.heads):
            if len(arr) and (arr.min() < 0 or arr.max() >= self.n_nodes):
                raise ValueError("arc endpoint out of range")

    def cut_capacity(self, source_side):
        side = np.asarray(source_side, dtype=bool)
        crossing = side[self.tails] & ~side[self.heads]
        return float(self.caps[crossing].sum())


# ---------------------------------------------------------------------------
# Boykov-Kolmogorov kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def _q_push(q, in_q, qs, i):
    if not in_q[i]:
        n = len(q)
        q[qs[1]] = i
        qs[1] = (qs[1] + 1) % n
        qs[2] += 1
        in_q[i] = True


@njit(cache=True)
def _q_pop(q, in_q, qs):
    i = q[qs[0]]
    qs[0] = (qs[0] + 1) % len(q)
    qs[2] -= 1
    in_q[i] = False
    return i


@njit(cache=True)
def _bk_solve(first, head, sister, rcap, tr):
    n = len(tr)
    tree = np.zeros(n, np.int8)
    parent = np.full(n, NONE, np.int64)
    dist = np.zeros(n, np.int64)
    ts = np.zeros(n, np.int64)
    q = np.zeros(max(n, 1), np.int64)
    in_q = np.zeros(n, np.bool_)
    qs = np.zeros(3, np.int64)  # head, tail, count
    orphans = np.zeros(max(n, 1), np.int64)
    n_orph = 0
    flow = 0.0

    for i in range(n):
        if tr[i] > 0:
            tree[i] = SRC
            parent[i] = TERMINAL
            dist[i] = 1
            _q_push(q, in_q, qs, i)
        elif tr[i] < 0:
            tree[i] = SNK
            parent[i] = TERMINAL
            dist[i] = 1
            _q_push(q, in_q, qs, i)

    time = 0
    current = -1
    while True:
        i = -1
        if current != -1 and tree[current] != FREE:
            i = current
        else:
            current = -1
            while qs[2] > 0:
                j = _q_pop(q, in_q, qs)
                if tree[j] != FREE:
                    i = j
                    break
            if i == -1:
                break

        # growth
        mid = -1
        if tree[i] == SRC:
            for a in range(first[i], first[i + 1]):
                if rcap[a] > 0:
                    j = head[a]
                    if tree[j] == FREE:
                        tree[j] = SRC
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        _q_push(q, in_q, qs, j)
                    elif tree[j] == SNK:
                        mid = a
                        break
        else:
            for a in range(first[i], first[i + 1]):
                if rcap[sister[a]] > 0:
                    j = head[a]
                    if tree[j] == FREE:
                        tree[j] = SNK
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        _q_push(q, in_q, qs, j)
                    elif tree[j] == SRC:
                        mid = sister[a]
                        break

        time += 1
        if mid == -1:
            current = -1
            continue
        current = i

        # augmentation
        snode = head[sister[mid]]
        tnode = head[mid]
        bott = rcap[mid]
        v = snode
        while parent[v] != TERMINAL:
            a = parent[v]
            if rcap[sister[a]] < bott:
                bott = rcap[sister[a]]
            v = head[a]
        if tr[v] < bott:
            bott = tr[v]
        v = tnode
        while parent[v] != TERMINAL:
            a = parent[v]
            if rcap[a] < bott:
                bott = rcap[a]
            v = head[a]
        if -tr[v] < bott:
            bott = -tr[v]

        rcap[sister[mid]] += bott
        rcap[mid] -= bott
        v = snode
        while parent[v] != TERMINAL:
            a = parent[v]
            rcap[a] += bott
            rcap[sister[a]] -= bott
            nxt = head[a]
            if rcap[sister[a]] <= 0:
                parent[v] = ORPHAN
                orphans[n_orph] = v
                n_orph += 1
            v = nxt
        tr[v] -= bott
        if tr[v] <= 0:
            parent[v] = ORPHAN
            orphans[n_orph] = v
            n_orph += 1
        v = tnode
        while parent[v] != TERMINAL:
            a = parent[v]
            rcap[sister[a]] += bott
            rcap[a] -= bott
            nxt = head[a]
            if rcap[a] <= 0:
                parent[v] = ORPHAN
                orphans[n_orph] = v
                n_orph += 1
            v = nxt
        tr[v] += bott
        if tr[v] >= 0:
            parent[v] = ORPHAN
            orphans[n_orph] = v
            n_orph += 1
        flow += bott

        # adoption
        while n_orph > 0:
            n_orph -= 1
            v = orphans[n_orph]
            side = tree[v]
            d_min = INF_DIST
            a0_min = -1
            for a in range(first[v], first[v + 1]):
                ok = rcap[sister[a]] > 0 if side == SRC else rcap[a] > 0
                if not ok:
                    continue
                j = head[a]
                if tree[j] != side or parent[j] == NONE:
                    continue
                d = 0
                k = j
                while True:
                    if ts[k] == time:
                        d += dist[k]
                        break
                    pa = parent[k]
                    d += 1
                    if pa == TERMINAL:
                        ts[k] = time
                        dist[k] = 1
                        break
                    if pa == ORPHAN:
                        d = INF_DIST
                        break
                    k = head[pa]
                if d < INF_DIST:
                    if d < d_min:
                        a0_min = a
                        d_min = d
                    k = j
                    while ts[k] != time:
                        ts[k] = time
                        dist[k] = d
                        d -= 1
                        k = head[parent[k]]
            if a0_min != -1:
                parent[v] = a0_min
                ts[v] = time
                dist[v] = d_min + 1
                continue
            for a in range(first[v], first[v + 1]):
                j = head[a]
                if tree[j] != side:
                    continue
                pa = parent[j]
                if pa == NONE:
                    continue
                act = rcap[sister[a]] > 0 if side == SRC else rcap[a] > 0
                if act:
                    _q_push(q, in_q, qs, j)
                if pa != TERMINAL and pa != ORPHAN and head[pa] == v:
                    parent[j] = ORPHAN
                    orphans[n_orph] = j
                    n_orph += 1
            tree[v] = FREE
            parent[v] = NONE
    return flow, tree


class CsrGraph:
    """Arc-pair graph in CSR order; ``fwd[e]``/``bwd[e]`` locate the two arcs of pair ``e``."""

    def __init__(self, n, u, v):
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        m = len(u)
        tails = np.empty(2 * m, dtype=np.int64)
        tails[0::2] = u
        tails[1::2] = v
        heads = np.empty(2 * m, dtype=np.int64)
        heads[0::2] = v
        heads[1::2] = u
        order = np.argsort(tails, kind="stable")
        pos = np.empty(2 * m, dtype=np.int64)
        pos[order] = np.arange(2 * m)
        self.n = n
        self.head = heads[order]
        partner = np.arange(2 * m) ^ 1
        self.sister = pos[partner[order]]
        self.first = np.searchsorted(tails[order], np.arange(n + 1)).astype(np.int64)
        self.fwd = pos[0::2]
        self.bwd = pos[1::2]

    def solve(self, cap_fwd, cap_bwd, src_cap, snk_cap):
        """Max-flow with per-pair capacities and terminal capacities.

        Returns ``(flow, tree)`` with ``tree`` holding ``SRC``/``SNK``/``FREE``
        per node.  ``tree == SRC`` is the minimal source side of a minimum
        cut and ``tree != SNK`` the maximal one.
        """
        rcap = np.empty(len(self.head), dtype=np.float64)
        rcap[self.fwd] = cap_fwd
        rcap[self.bwd] = cap_bwd
        src_cap = np.asarray(src_cap, dtype=np.float64)
        snk_cap = np.asarray(snk_cap, dtype=np.float64)
        base = float(np.minimum(src_cap, snk_cap).sum())
        tr = src_cap - snk_cap
        flow, tree = _bk_solve(self.first, self.head, self.sister, rcap, tr)
        return base + flow, tree


def max_flow(net):
    """Maximum s-t flow and a certifying minimum cut.

    Returns ``(value, source_side)`` where ``source_side`` is a boolean mask
    over all network nodes (source included, sink excluded).
    """
    n = net.n_nodes
    s, t = net.source, net.sink
    inner = np.array([i for i in range(n) if i not in (s, t)], dtype=np.int64)
    index = np.full(n, -1, dtype=np.int64)
    index[inner] = np.arange(len(inner))
    src_cap = np.zeros(len(inner))
    snk_cap = np.zeros(len(inner))
    direct = 0.0
    pu, pv, pc = [], [], []
    for a, b, c in zip(net.tails, net.heads, net.caps):
        if a == b or c == 0 or a == t or b == s:
            continue
        if a == s and b == t:
            direct += c
        elif a == s:
            src_cap[index[b]] += c
        elif b == t:
            snk_cap[index[a]] += c
        else:
            pu.append(index[a])
            pv.append(index[b])
            pc.append(c)
    graph = CsrGraph(len(inner), pu, pv)
    value, tree = graph.solve(np.array(pc, dtype=np.float64), np.zeros(len(pc)), src_cap, snk_cap)
    side = np.zeros(n, dtype=bool)
    side[s] = True
    side[inner] = tree == SRC
    return value + direct, side


def edmonds_karp(net):
    """Reference max-flow by shortest augmenting paths on a dense residual matrix."""
    n = net.n_nodes
    R = np.zeros((n, n))
    for a, b, c in zip(net.tails, net.heads, net.caps):
        if a != b:
            R[a, b] += c
    s, t = net.source, net.sink
    flow = 0.0
    while True:
        prev = [-1] * n
        prev[s] = s
        dq = deque([s])
        while dq and prev[t] == -1:
            u = dq.popleft()
            for v in range(n):
                if prev[v] == -1 and R[u, v] > 0:
                    prev[v] = u
                    dq.append(v)
        if prev[t] == -1:
            break
        bott = np.inf
        v = t
        while v != s:
            bott = min(bott, R[prev[v], v])
            v = prev[v]
        v = t
        while v != s:
            R[prev[v], v] -= bott
            R[v, prev[v]] += bott
            v = prev[v]
        flow += bott
    reach = np.zeros(n, dtype=bool)
    reach[s] = True
    dq = deque([s])
    while dq:
        u = dq.popleft()
        for v in range(n):
            if not reach[v] and R[u, v] > 0:
                reach[v] = True
                dq.append(v)
    return flow, reach
