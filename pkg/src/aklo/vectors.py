"""Sparse feature vectors and a scaled dense weight carrier.

The weight vector keeps a lazy multiplicative scale so the shrink step of
the regularized online update is O(1); every sparse kernel touches only the
stored nonzeros of its input.
"""

from __future__ import annotations

import numpy as np

# Below this magnitude the scale is folded back into the base array to stop
# denormal drift over very long tasks.
SCALE_FLOOR = 1e-150


class TouchCounter:
    """Counts base entries touched by the vector kernels.

    Used by the complexity probes: a step of the full algorithm with a
    knowledge base of size T and an input with k nonzeros must stay within
    a constant multiple of T*k + T + k touches.
    """

    __slots__ = ("touched",)

    def __init__(self) -> None:
        self.touched = 0

    def reset(self) -> None:
        self.touched = 0


counter = TouchCounter()


class SparseVec:
    """Feature vector stored as parallel (index, value) arrays.

    Indices are strictly increasing and below ``dim``; exact zeros are never
    stored.
    """

    __slots__ = ("idx", "val", "dim")

    def __init__(self, idx, val, dim: int) -> None:
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        val = np.ascontiguousarray(val, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != val.shape:
            raise ValueError("indices and values must be parallel 1-d arrays")
        if dim <= 0:
            raise ValueError("dim must be positive")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
            if idx[0] < 0 or int(idx[-1]) >= dim:
                raise ValueError(f"index {int(idx[-1])} out of range for dim {dim}")
            if np.any(val == 0.0):
                raise ValueError("zero values must not be stored")
        self.idx = idx
        self.val = val
        self.dim = int(dim)

    @classmethod
    def from_pairs(cls, pairs, dim: int) -> "SparseVec":
        """Build from an iterable of (index, value) pairs, dropping zeros."""
        pairs = sorted((int(i), float(v)) for i, v in pairs if float(v) != 0.0)
        idx = [i for i, _ in pairs]
        val = [v for _, v in pairs]
        return cls(np.asarray(idx, dtype=np.int64), np.asarray(val, dtype=np.float64), dim)

    @classmethod
    def from_dense(cls, arr) -> "SparseVec":
        arr = np.asarray(arr, dtype=np.float64)
        idx = np.nonzero(arr)[0]
        return cls(idx.astype(np.int64), arr[idx], arr.size)

    def nnz(self) -> int:
        return int(self.idx.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.idx] = self.val
        return out

    def norm(self) -> float:
        return float(np.linalg.norm(self.val))

    def __repr__(self) -> str:  # pragma: no cover
        return f"SparseVec(nnz={self.nnz()}, dim={self.dim})"


class ScaledDenseVec:
    """Dense vector whose logical value is ``scale * base``.

    ``scale == 0`` is a valid representation of the zero vector; the next
    sparse addition rebases (folds the scale into the base) before writing.
    """

    __slots__ = ("base", "scale")

    def __init__(self, dim: int) -> None:
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.base = np.zeros(dim)
        self.scale = 1.0

    @classmethod
    def from_dense(cls, arr) -> "ScaledDenseVec":
        v = cls(len(arr))
        v.base[:] = np.asarray(arr, dtype=np.float64)
        return v

    def __len__(self) -> int:
        return self.base.size

    def dot(self, x: SparseVec) -> float:
        """Inner product with a sparse vector; costs O(nnz(x))."""
        if x.dim > self.base.size:
            raise ValueError(f"sparse dim {x.dim} exceeds dense length {self.base.size}")
        counter.touched += x.idx.size
        if self.scale == 0.0 or x.idx.size == 0:
            return 0.0
        return self.scale * float(self.base[x.idx] @ x.val)

    def scale_in_place(self, c: float) -> None:
        """Multiply the logical vector by ``c`` in O(1)."""
        if not np.isfinite(c):
            raise ValueError("scale factor must be finite")
        counter.touched += 1
        self.scale *= c
        if self.scale != 0.0 and abs(self.scale) < SCALE_FLOOR:
            self._rebase()

    def axpy_sparse(self, a: float, x: SparseVec) -> None:
        """Add ``a * x`` to the logical vector; costs O(nnz(x))."""
        if not np.isfinite(a):
            raise ValueError("coefficient must be finite")
        if x.dim > self.base.size:
            raise ValueError(f"sparse dim {x.dim} exceeds dense length {self.base.size}")
        if a == 0.0 or x.idx.size == 0:
            return
        if abs(self.scale) < SCALE_FLOOR:
            self._rebase()
        counter.touched += x.idx.size
        # Indices are strictly increasing, so fancy-index += has no collisions.
        self.base[x.idx] += (a / self.scale) * x.val

    def l2_norm(self) -> float:
        return abs(self.scale) * float(np.linalg.norm(self.base))

    def to_dense(self) -> np.ndarray:
        return self.scale * self.base

    def _rebase(self) -> None:
        counter.touched += self.base.size
        self.base *= self.scale
        self.scale = 1.0
