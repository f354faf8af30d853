import heapq

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from eikmarch import FrontHeap


class TestFrontHeap:
    def test_extracts_in_key_order(self):
        h = FrontHeap(8)
        for key, node in ((3.0, 0), (1.0, 1), (2.0, 2)):
            h.insert(key, node)
        assert [h.extract_min()[0] for _ in range(3)] == [1.0, 2.0, 3.0]
        assert h.extract_min() is None

    def test_stale_entries_skipped(self):
        h = FrontHeap(8)
        h.insert(5.0, 1)
        h.mark_known(1)
        h.insert(4.0, 2)
        assert h.extract_min() == (4.0, 2)
        assert h.extract_min() is None

    def test_reinsertion_protocol(self):
        h = FrontHeap(8)
        h.insert(5.0, 1)
        h.insert(3.0, 1)  # improvement re-inserted, no decrease-key
        key, node = h.extract_min()
        assert (key, node) == (3.0, 1)
        h.mark_known(1)
        h.insert(4.0, 2)
        assert h.extract_min() == (4.0, 2)  # the stale (5.0, 1) is ignored

    def test_equal_keys_break_by_node(self):
        h = FrontHeap(8)
        h.insert(1.0, 7)
        h.insert(1.0, 2)
        h.insert(1.0, 5)
        assert [h.extract_min()[1] for _ in range(3)] == [2, 5, 7]

    def test_growth(self):
        h = FrontHeap(4, capacity=2)
        keys = np.random.default_rng(0).random(500)
        for i, k in enumerate(keys):
            h.insert(k, i % 4)
        assert len(h) == 500

    @given(st.lists(st.tuples(st.floats(0, 100), st.integers(0, 31)),
                    min_size=1, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_against_heapq(self, items):
        h = FrontHeap(32)
        ref = []
        for key, node in items:
            h.insert(key, node)
            heapq.heappush(ref, (key, node))
        out = []
        while (got := h.extract_min()) is not None:
            out.append(got)
        assert out == [heapq.heappop(ref) for _ in range(len(ref))]


class TestHeapStructure:
    def test_parent_child_invariant(self):
        h = FrontHeap(64)
        rng = np.random.default_rng(3)
        for i, k in enumerate(rng.random(200)):
            h.insert(float(k), i % 64)
        keys = h._keys[:len(h)]
        nodes = h._nodes[:len(h)]
        for i in range(1, len(h)):
            p = (i - 1) // 2
            assert (keys[p], nodes[p]) <= (keys[i], nodes[i])
