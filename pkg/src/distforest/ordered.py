"""Order-statistics structures used by the split scans.

Three array-backed structures live here:

* ``SummingMinMaxHeap`` -- a min-max heap that also tracks the sum of its
  contents, so a bank of them can hand out cumulative sums of order
  statistics in O(1).
* ``FenwickTree`` -- prefix sums over a fixed slot array.
* ``RankTree`` -- a weight-balanced search tree that reports the rank at
  which each value is inserted.

Each structure stores its state in flat numpy buffers and is manipulated by
module-level ``numba`` kernels. The classes are thin wrappers around those
kernels; the scans in :mod:`distforest.pinball` and :mod:`distforest.crps`
call the kernels directly on raw buffers so the same code path serves both.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["SummingMinMaxHeap", "FenwickTree", "RankTree", "RANK_TREE_HEIGHT_FACTOR"]

# ---------------------------------------------------------------------------
# Min-max heap kernels. ``a[:n]`` holds the heap; even depths are min levels.
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _is_min_level(i):
    j = i + 1
    level = 0
    while j > 1:
        j >>= 1
        level += 1
    return level % 2 == 0


@njit(cache=True, nogil=True)
def _bubble_up_min(a, i):
    while i >= 3:
        g = ((i - 1) // 2 - 1) // 2
        if a[i] < a[g]:
            a[i], a[g] = a[g], a[i]
            i = g
        else:
            break


@njit(cache=True, nogil=True)
def _bubble_up_max(a, i):
    while i >= 3:
        g = ((i - 1) // 2 - 1) // 2
        if a[i] > a[g]:
            a[i], a[g] = a[g], a[i]
            i = g
        else:
            break


@njit(cache=True, nogil=True)
def mmh_push(a, n, v):
    """Insert ``v`` into the heap ``a[:n]``; the heap then occupies ``a[:n+1]``."""
    i = n
    a[i] = v
    if i == 0:
        return
    p = (i - 1) // 2
    if _is_min_level(i):
        if a[i] > a[p]:
            a[i], a[p] = a[p], a[i]
            _bubble_up_max(a, p)
        else:
            _bubble_up_min(a, i)
    else:
        if a[i] < a[p]:
            a[i], a[p] = a[p], a[i]
            _bubble_up_min(a, p)
        else:
            _bubble_up_max(a, i)


@njit(cache=True, nogil=True)
def _trickle_down_min(a, n, i):
    while True:
        c = 2 * i + 1
        if c >= n:
            return
        m = c
        best = a[c]
        if c + 1 < n and a[c + 1] < best:
            m = c + 1
            best = a[c + 1]
        g = 4 * i + 3
        for k in range(g, min(g + 4, n)):
            if a[k] < best:
                m = k
                best = a[k]
        if m >= g:
            if a[m] < a[i]:
                a[m], a[i] = a[i], a[m]
                p = (m - 1) // 2
                if a[m] > a[p]:
                    a[m], a[p] = a[p], a[m]
                i = m
            else:
                return
        else:
            if a[m] < a[i]:
                a[m], a[i] = a[i], a[m]
            return


@njit(cache=True, nogil=True)
def _trickle_down_max(a, n, i):
    while True:
        c = 2 * i + 1
        if c >= n:
            return
        m = c
        best = a[c]
        if c + 1 < n and a[c + 1] > best:
            m = c + 1
            best = a[c + 1]
        g = 4 * i + 3
        for k in range(g, min(g + 4, n)):
            if a[k] > best:
                m = k
                best = a[k]
        if m >= g:
            if a[m] > a[i]:
                a[m], a[i] = a[i], a[m]
                p = (m - 1) // 2
                if a[m] < a[p]:
                    a[m], a[p] = a[p], a[m]
                i = m
            else:
                return
        else:
            if a[m] > a[i]:
                a[m], a[i] = a[i], a[m]
            return


@njit(cache=True, nogil=True)
def _max_index(a, n):
    if n == 1:
        return 0
    if n == 2 or a[1] >= a[2]:
        return 1
    return 2


@njit(cache=True, nogil=True)
def mmh_min(a, n):
    return a[0]


@njit(cache=True, nogil=True)
def mmh_max(a, n):
    return a[_max_index(a, n)]


@njit(cache=True, nogil=True)
def mmh_second_max(a, n):
    """Second largest element of a heap with ``n >= 2`` elements."""
    p = _max_index(a, n)
    found = False
    best = 0.0
    other = 3 - p
    if other < n:
        best = a[other]
        found = True
    for k in (2 * p + 1, 2 * p + 2, 4 * p + 3, 4 * p + 4, 4 * p + 5, 4 * p + 6):
        if k < n and (not found or a[k] > best):
            best = a[k]
            found = True
    if not found:
        best = a[0]
    return best


@njit(cache=True, nogil=True)
def mmh_pop_min(a, n):
    v = a[0]
    n -= 1
    if n > 0:
        a[0] = a[n]
        _trickle_down_min(a, n, 0)
    return v


@njit(cache=True, nogil=True)
def mmh_pop_max(a, n):
    i = _max_index(a, n)
    v = a[i]
    n -= 1
    if i < n:
        a[i] = a[n]
        _trickle_down_max(a, n, i)
    return v


class SummingMinMaxHeap:
    """Double-ended priority queue over floats that tracks its running sum.

    ``min()``/``max()``/``pop_min()``/``pop_max()`` return ``None`` on an
    empty heap instead of raising.

    >>> h = SummingMinMaxHeap()
    >>> h.push(0.0); h.push(-2.0)
    >>> h.min(), h.max(), h.total
    (-2.0, 0.0, -2.0)
    """

    def __init__(self, capacity: int = 16):
        self._a = np.empty(max(int(capacity), 1), dtype=np.float64)
        self.count = 0
        self.total = 0.0

    def __len__(self) -> int:
        return self.count

    def push(self, v: float) -> None:
        if self.count == self._a.shape[0]:
            grown = np.empty(2 * self._a.shape[0], dtype=np.float64)
            grown[: self.count] = self._a[: self.count]
            self._a = grown
        v = float(v)
        mmh_push(self._a, self.count, v)
        self.count += 1
        self.total += v

    def min(self) -> float | None:
        return float(self._a[0]) if self.count else None

    def max(self) -> float | None:
        return float(mmh_max(self._a, self.count)) if self.count else None

    def pop_min(self) -> float | None:
        if not self.count:
            return None
        v = float(mmh_pop_min(self._a, self.count))
        self.count -= 1
        self.total -= v
        return v

    def pop_max(self) -> float | None:
        if not self.count:
            return None
        v = float(mmh_pop_max(self._a, self.count))
        self.count -= 1
        self.total -= v
        return v

    def values(self) -> np.ndarray:
        """Stored values in heap layout (not sorted)."""
        return self._a[: self.count].copy()

    def reset(self) -> None:
        self.count = 0
        self.total = 0.0


# ---------------------------------------------------------------------------
# Fenwick tree kernels. ``tree[1..n]`` holds partial sums, ``tree[0]`` unused.
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def fenwick_add(tree, pos, v):
    n = tree.shape[0] - 1
    while pos <= n:
        tree[pos] += v
        pos += pos & -pos


@njit(cache=True, nogil=True)
def fenwick_prefix(tree, k):
    s = 0.0
    while k > 0:
        s += tree[k]
        k -= k & -k
    return s


class FenwickTree:
    """Binary indexed tree over ``length`` slots addressed 1..length."""

    def __init__(self, length: int):
        if length < 0:
            raise ValueError("length must be non-negative")
        self.length = int(length)
        self._tree = np.zeros(self.length + 1, dtype=np.float64)

    def __len__(self) -> int:
        return self.length

    def add(self, pos: int, v: float) -> None:
        if not 1 <= pos <= self.length:
            raise IndexError(f"slot {pos} outside 1..{self.length}")
        fenwick_add(self._tree, int(pos), float(v))

    def prefix_sum(self, k: int) -> float:
        """Sum of slots ``1..k``; ``k = 0`` gives 0."""
        if not 0 <= k <= self.length:
            raise IndexError(f"prefix end {k} outside 0..{self.length}")
        return float(fenwick_prefix(self._tree, int(k)))

    def get(self, a: int, b: int) -> float:
        """Sum of slots ``a..b`` inclusive."""
        if not 1 <= a <= b <= self.length:
            raise IndexError(f"invalid range [{a}, {b}] for length {self.length}")
        return float(fenwick_prefix(self._tree, int(b)) - fenwick_prefix(self._tree, int(a) - 1))

    def reset(self) -> None:
        self._tree[:] = 0.0


# ---------------------------------------------------------------------------
# Weight-balanced tree kernels.
#
# Weights are ``size + 1``; a node is balanced when neither child outweighs
# the other by more than DELTA, and GAMMA picks single vs double rotation.
# (DELTA, GAMMA) = (3, 2) is the integer pair proven valid for insertion.
# Every child then carries at most 3/4 of its parent's weight, which bounds
# the height by log2(n + 1) / log2(4/3).
# ---------------------------------------------------------------------------

_DELTA = 3
_GAMMA = 2
RANK_TREE_HEIGHT_FACTOR = 1.0 / np.log2(4.0 / 3.0)
_PATH_CAPACITY = 256


# Node records are rows of an int32 table so one node fits in one cache line.
_L, _R, _SIZE = 0, 1, 2


@njit(cache=True, nogil=True)
def _weight(nodes, t):
    if t < 0:
        return 1
    return nodes[t, _SIZE] + 1


@njit(cache=True, nogil=True)
def _resize(nodes, t):
    nodes[t, _SIZE] = _weight(nodes, nodes[t, _L]) + _weight(nodes, nodes[t, _R]) - 1


@njit(cache=True, nogil=True)
def _rotate_left(nodes, t):
    r = nodes[t, _R]
    nodes[t, _R] = nodes[r, _L]
    nodes[r, _L] = t
    _resize(nodes, t)
    _resize(nodes, r)
    return r


@njit(cache=True, nogil=True)
def _rotate_right(nodes, t):
    l = nodes[t, _L]
    nodes[t, _L] = nodes[l, _R]
    nodes[l, _R] = t
    _resize(nodes, t)
    _resize(nodes, l)
    return l


@njit(cache=True, nogil=True)
def _rebalance(nodes, t):
    wl = _weight(nodes, nodes[t, _L])
    wr = _weight(nodes, nodes[t, _R])
    if wl > _DELTA * wr:
        l = nodes[t, _L]
        if _weight(nodes, nodes[l, _R]) >= _GAMMA * _weight(nodes, nodes[l, _L]):
            nodes[t, _L] = _rotate_left(nodes, l)
        return _rotate_right(nodes, t)
    if wr > _DELTA * wl:
        r = nodes[t, _R]
        if _weight(nodes, nodes[r, _L]) >= _GAMMA * _weight(nodes, nodes[r, _R]):
            nodes[t, _R] = _rotate_right(nodes, r)
        return _rotate_left(nodes, t)
    return t


@njit(cache=True, nogil=True)
def rank_tree_insert(val, nodes, meta, path, v):
    """Insert ``v`` and return its 1-based rank.

    ``nodes[k] = (left, right, size)``, ``meta = [root, count]``. Equal values
    go to the right of existing ones, so the rank is one plus the number of
    stored values ``<= v``.
    """
    new = meta[1]
    val[new] = v
    nodes[new, _L] = -1
    nodes[new, _R] = -1
    nodes[new, _SIZE] = 1
    meta[1] = new + 1
    if meta[0] < 0:
        meta[0] = new
        return 1
    rank = 1
    depth = 0
    cur = meta[0]
    while True:
        path[depth] = cur
        depth += 1
        nodes[cur, _SIZE] += 1
        if v >= val[cur]:
            rank += _weight(nodes, nodes[cur, _L])
            nxt = nodes[cur, _R]
            if nxt < 0:
                nodes[cur, _R] = new
                break
        else:
            nxt = nodes[cur, _L]
            if nxt < 0:
                nodes[cur, _L] = new
                break
        cur = nxt
    # sizes on the path are already updated; restore balance bottom-up
    for k in range(depth - 1, -1, -1):
        t = path[k]
        wl = _weight(nodes, nodes[t, _L])
        wr = _weight(nodes, nodes[t, _R])
        if wl <= _DELTA * wr and wr <= _DELTA * wl:
            continue
        nt = _rebalance(nodes, t)
        if k == 0:
            meta[0] = nt
        else:
            p = path[k - 1]
            if nodes[p, _L] == t:
                nodes[p, _L] = nt
            else:
                nodes[p, _R] = nt
    return rank


def new_rank_buffers(capacity: int) -> tuple[np.ndarray, np.ndarray]:
    capacity = max(int(capacity), 1)
    return np.empty(capacity, dtype=np.float64), np.empty((capacity, 3), dtype=np.int32)


class RankTree:
    """Weight-balanced BST over floats reporting insertion ranks.

    >>> t = RankTree()
    >>> [t.insert(v) for v in (2.0, 7.0, 5.0)]
    [1, 2, 2]
    """

    def __init__(self, capacity: int = 16):
        self._val, self._nodes = new_rank_buffers(capacity)
        self._meta = np.array([-1, 0], dtype=np.int64)
        self._path = np.empty(_PATH_CAPACITY, dtype=np.int64)

    def __len__(self) -> int:
        return int(self._meta[1])

    def _grow(self):
        n = len(self)
        val, nodes = new_rank_buffers(2 * self._val.shape[0])
        val[:n] = self._val[:n]
        nodes[:n] = self._nodes[:n]
        self._val, self._nodes = val, nodes

    def insert(self, v: float) -> int:
        if len(self) == self._val.shape[0]:
            self._grow()
        return int(rank_tree_insert(self._val, self._nodes, self._meta, self._path, float(v)))

    def reset(self) -> None:
        self._meta[0] = -1
        self._meta[1] = 0

    def _children(self, t: int) -> tuple[int, int]:
        return int(self._nodes[t, _L]), int(self._nodes[t, _R])

    def height(self) -> int:
        root = int(self._meta[0])
        if root < 0:
            return 0
        best = 0
        stack = [(root, 1)]
        while stack:
            t, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in self._children(t) if c >= 0)
        return best

    def inorder(self) -> list[float]:
        out: list[float] = []
        stack: list[int] = []
        t = int(self._meta[0])
        while stack or t >= 0:
            while t >= 0:
                stack.append(t)
                t = self._children(t)[0]
            t = stack.pop()
            out.append(float(self._val[t]))
            t = self._children(t)[1]
        return out

    def check_sizes(self) -> bool:
        """True when every node's size equals one plus its children's sizes."""
        for t in range(len(self)):
            expected = 1 + sum(int(self._nodes[c, _SIZE]) for c in self._children(t) if c >= 0)
            if int(self._nodes[t, _SIZE]) != expected:
                return False
        return True

    def is_weight_balanced(self) -> bool:
        for t in range(len(self)):
            wl, wr = (int(self._nodes[c, _SIZE]) + 1 if c >= 0 else 1 for c in self._children(t))
            if wl > _DELTA * wr or wr > _DELTA * wl:
                return False
        return True
