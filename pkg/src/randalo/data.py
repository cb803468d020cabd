from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(eq=False)
class Dataset:
    """Design matrix (dense array or CSR/CSC matrix) and response vector."""

    X: object
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not sp.issparse(self.X):
            self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        if self.X.shape[0] != self.y.size:
            raise ValueError(f"X has {self.X.shape[0]} rows but y has {self.y.size} entries")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def sparse(self):
        return sp.issparse(self.X)

    @property
    def storage(self):
        return "sparse" if self.sparse else "dense"

    def subset(self, rows):
        X = self.X[rows]
        return Dataset(X, self.y[rows], dict(self.meta))

    def __iter__(self):
        # allows ``X, y = data``
        yield self.X
        yield self.y
