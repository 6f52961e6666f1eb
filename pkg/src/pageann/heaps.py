"""Min-max heap plus the bounded candidate list and result queue built on it.

The candidate list keeps at most `capacity` (pq_distance, id, expanded)
entries, evicting the globally worst entry on overflow; the best unexpanded
entry drives each search step. The result queue keeps the k best exact
distances. Ordering is (distance, id) lexicographic everywhere so traversal
is reproducible.
"""

from __future__ import annotations

import math


class MinMaxHeap:
    """Array-based min-max heap: O(1) peek at both ends, O(log n) push/pop.

    Even tree levels are min-ordered, odd levels max-ordered. Items must be
    mutually comparable (tuples compare lexicographically).
    """

    def __init__(self):
        self._a = []

    def __len__(self):
        return len(self._a)

    def __iter__(self):
        return iter(self._a)

    @staticmethod
    def _is_min_level(i: int) -> bool:
        return ((i + 1).bit_length() - 1) % 2 == 0

    def push(self, item) -> None:
        a = self._a
        a.append(item)
        i = len(a) - 1
        if i == 0:
            return
        parent = (i - 1) >> 1
        if self._is_min_level(i):
            if a[i] > a[parent]:
                a[i], a[parent] = a[parent], a[i]
                self._sift_up(parent, min_side=False)
            else:
                self._sift_up(i, min_side=True)
        else:
            if a[i] < a[parent]:
                a[i], a[parent] = a[parent], a[i]
                self._sift_up(parent, min_side=True)
            else:
                self._sift_up(i, min_side=False)

    def _sift_up(self, i: int, min_side: bool) -> None:
        a = self._a
        while i > 2:
            g = (((i - 1) >> 1) - 1) >> 1
            better = a[i] < a[g] if min_side else a[i] > a[g]
            if not better:
                break
            a[i], a[g] = a[g], a[i]
            i = g

    def peek_min(self):
        return self._a[0]

    def peek_max(self):
        a = self._a
        n = len(a)
        if n == 1:
            return a[0]
        if n == 2:
            return a[1]
        return a[1] if a[1] > a[2] else a[2]

    def pop_min(self):
        a = self._a
        item = a[0]
        last = a.pop()
        if a:
            a[0] = last
            self._sift_down(0, min_side=True)
        return item

    def pop_max(self):
        a = self._a
        n = len(a)
        if n == 1:
            return a.pop()
        if n == 2:
            return a.pop()
        i = 1 if a[1] > a[2] else 2
        item = a[i]
        last = a.pop()
        if i < len(a):
            a[i] = last
            self._sift_down(i, min_side=False)
        return item

    def _sift_down(self, i: int, min_side: bool) -> None:
        a = self._a
        n = len(a)
        while True:
            c0 = 2 * i + 1
            if c0 >= n:
                return
            # best among children {c0, c0+1} and grandchildren {4i+3..4i+6}
            best = c0
            for j in range(c0 + 1, min(n, c0 + 2)):
                if (a[j] < a[best]) if min_side else (a[j] > a[best]):
                    best = j
            grand0 = 4 * i + 3
            for j in range(grand0, min(n, grand0 + 4)):
                if (a[j] < a[best]) if min_side else (a[j] > a[best]):
                    best = j
            beats = (a[best] < a[i]) if min_side else (a[best] > a[i])
            if best >= grand0:
                if not beats:
                    return
                a[best], a[i] = a[i], a[best]
                p = (best - 1) >> 1
                violates = (a[best] > a[p]) if min_side else (a[best] < a[p])
                if violates:
                    a[best], a[p] = a[p], a[best]
                i = best
            else:
                if beats:
                    a[best], a[i] = a[i], a[best]
                return


class BoundedCandidateList:
    """Search beam: at most `capacity` candidates, expanded entries included.

    Internally the unexpanded frontier is a min-max heap (min drives the next
    expansion, max takes part in eviction) and expanded entries move to a
    second heap that only ever gives up its max. The globally worst entry is
    evicted on overflow, matching a capacity-L candidate list whose members
    carry an expanded flag.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._frontier = MinMaxHeap()
        self._expanded = MinMaxHeap()

    def __len__(self):
        return len(self._frontier) + len(self._expanded)

    def insert(self, dist: float, node_id: int) -> bool:
        """Insert an unexpanded candidate; returns False if it didn't fit."""
        key = (dist, node_id)
        if len(self) >= self.capacity:
            worst, side = self._worst()
            if key >= worst:
                return False
            side.pop_max()
        self._frontier.push(key)
        return True

    def _worst(self):
        if not len(self._expanded):
            return self._frontier.peek_max(), self._frontier
        if not len(self._frontier):
            return self._expanded.peek_max(), self._expanded
        wf = self._frontier.peek_max()
        we = self._expanded.peek_max()
        return (wf, self._frontier) if wf >= we else (we, self._expanded)

    def is_full(self) -> bool:
        return len(self) >= self.capacity

    def worst_key(self):
        """(dist, id) of the eviction target; only valid when non-empty."""
        return self._worst()[0]

    def has_unexpanded(self) -> bool:
        return len(self._frontier) > 0

    def peek_best_unexpanded(self):
        """(dist, id) of the next expansion target, or None."""
        if not len(self._frontier):
            return None
        return self._frontier.peek_min()

    def pop_best_unexpanded(self):
        """Remove the best unexpanded entry and retain it as expanded."""
        key = self._frontier.pop_min()
        self._expanded.push(key)
        return key

    def entries(self):
        """All (dist, id, expanded) entries, unordered."""
        for d, i in self._frontier:
            yield d, i, False
        for d, i in self._expanded:
            yield d, i, True


class ResultQueue:
    """Bounded max-heap of the k best (exact_distance, id) results."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._heap = MinMaxHeap()

    def __len__(self):
        return len(self._heap)

    def insert(self, dist: float, node_id: int) -> bool:
        key = (dist, node_id)
        if len(self._heap) >= self.capacity:
            if key >= self._heap.peek_max():
                return False
            self._heap.pop_max()
        self._heap.push(key)
        return True

    def kth_distance(self) -> float:
        """Distance bound used by the convergence test: +inf until full."""
        if len(self._heap) < self.capacity:
            return math.inf
        return self._heap.peek_max()[0]

    def sorted_items(self):
        """(distance, id) pairs ascending by (distance, id)."""
        return sorted(self._heap)
