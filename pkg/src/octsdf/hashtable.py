import numpy as np

from . import kernels

_MAX_LOAD = 0.5


class HashTable:
    """Open-addressing (linear probing) map from uint64 Morton codes to int64 slots.

    The table never stores the all-ones key, which Morton codes of 21-bit
    indices cannot produce.
    """

    def __init__(self, capacity=1024):
        cap = 1 << max(4, int(np.ceil(np.log2(max(capacity, 16)))))
        self.keys = np.full(cap, kernels.EMPTY_KEY, dtype=np.uint64)
        self.vals = np.full(cap, -1, dtype=np.int64)
        self.size = 0

    def __len__(self):
        return self.size

    @property
    def capacity(self):
        return self.keys.shape[0]

    def lookup(self, codes):
        codes = np.asarray(codes, dtype=np.uint64)
        return kernels.hash_lookup(self.keys, self.vals, codes.ravel()).reshape(codes.shape)

    def _grow_to(self, n):
        cap = self.capacity
        while n > _MAX_LOAD * cap:
            cap *= 2
        if cap == self.capacity:
            return
        live = self.keys != kernels.EMPTY_KEY
        old_keys, old_vals = self.keys[live], self.vals[live]
        # reinsert in value order so the layout does not depend on history
        order = np.argsort(old_vals, kind="stable")
        self.keys = np.full(cap, kernels.EMPTY_KEY, dtype=np.uint64)
        self.vals = np.full(cap, -1, dtype=np.int64)
        self._place(old_keys[order], old_vals[order])

    def _place(self, keys, vals):
        # only valid on an empty table: hash_insert numbers the unique keys
        # 0..n-1, which then index into the real values
        if keys.size == 0:
            return
        kernels.hash_insert(self.keys, self.vals, keys, 0)
        live = self.keys != kernels.EMPTY_KEY
        self.vals[live] = vals[self.vals[live]]

    def insert(self, codes, next_slot):
        """Insert codes, giving unseen ones consecutive slots from ``next_slot``.

        Returns ``(slots, n_new)`` where ``slots`` matches ``codes`` elementwise.
        """
        codes = np.asarray(codes, dtype=np.uint64).ravel()
        self._grow_to(self.size + codes.size)
        slots, n_new = kernels.hash_insert(self.keys, self.vals, codes, next_slot)
        self.size += n_new
        return slots, n_new

    def items(self):
        """``(codes, slots)`` sorted by slot."""
        live = self.keys != kernels.EMPTY_KEY
        codes, slots = self.keys[live], self.vals[live]
        order = np.argsort(slots, kind="stable")
        return codes[order], slots[order]

    @classmethod
    def from_items(cls, codes, slots):
        table = cls(capacity=int(len(codes) / _MAX_LOAD) + 1)
        order = np.argsort(slots, kind="stable")
        table._place(np.asarray(codes, dtype=np.uint64)[order], np.asarray(slots, dtype=np.int64)[order])
        table.size = len(codes)
        return table
