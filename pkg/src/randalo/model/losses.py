"""Losses ``l(y, z)`` with derivatives in the prediction ``z`` and the label ``y``."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import InvalidSpec


class Loss:
    kind: str = ""

    def value(self, y, z):
        raise NotImplementedError

    def d1(self, y, z):
        """dl/dz"""
        raise NotImplementedError

    def d2(self, y, z):
        """d^2 l/dz^2"""
        raise NotImplementedError

    def d1_dy(self, y, z):
        """d(dl/dz)/dy"""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(self.kind)


class SquaredLoss(Loss):
    """``0.5 * (y - z)**2``"""

    kind = "squared"

    def value(self, y, z):
        return 0.5 * (np.asarray(y) - z) ** 2

    def d1(self, y, z):
        return np.asarray(z, dtype=float) - y

    def d2(self, y, z):
        return np.ones(np.broadcast(y, z).shape)

    def d1_dy(self, y, z):
        return -np.ones(np.broadcast(y, z).shape)


class LogisticLoss(Loss):
    """``log(1 + exp(-y z))`` for labels in {-1, +1}.

    Derivatives treat ``y`` as continuous so that label perturbations (needed to
    normalize a raw Jacobian) are well defined.
    """

    kind = "logistic"

    def value(self, y, z):
        return np.logaddexp(0.0, -np.asarray(y) * z)

    def d1(self, y, z):
        y = np.asarray(y, dtype=float)
        return -y * expit(-y * z)

    def d2(self, y, z):
        y = np.asarray(y, dtype=float)
        u = y * z
        return y * y * expit(u) * expit(-u)

    def d1_dy(self, y, z):
        y = np.asarray(y, dtype=float)
        u = y * z
        return -expit(-u) + u * expit(u) * expit(-u)


LOSSES = {"squared": SquaredLoss, "logistic": LogisticLoss}


def get_loss(loss):
    if isinstance(loss, Loss):
        return loss
    try:
        return LOSSES[loss]()
    except KeyError:
        raise InvalidSpec(f"unknown loss {loss!r}; expected one of {sorted(LOSSES)}") from None
