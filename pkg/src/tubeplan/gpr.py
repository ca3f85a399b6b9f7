"""Online disturbance-bound identification via windowed GP regression.

Features are [v, theta] of the previous state; labels are the 4-D
residuals between the observed state and the one the bicycle model
predicts.  Four output dimensions share one squared-exponential kernel
but carry independent observation-noise levels, so each dimension gets
its own Cholesky factor of (K + sigma_n,d I).  The bound consumed by the
tube MPC is the posterior mean plus c predictive standard deviations,
where the predictive variance includes the observation noise (the model
bounds future residual realizations, not just the latent mean).
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dynamics import step, wrap_angle
from .polytope import Box

DEFAULT_LENGTH_SCALES = (2.0, 0.3)
DEFAULT_SIGNAL_STD = 0.08
# per-dimension observation-noise variances (px, py, v, theta); sized to
# cover the filtered one-step residual at the stock disturbance level
DEFAULT_NOISE_VAR = (0.016, 0.016, 0.006, 0.0008)
DEFAULT_CAPACITY = 200


def kernel(x1, x2, length_scales=DEFAULT_LENGTH_SCALES, signal_var=DEFAULT_SIGNAL_STD**2):
    """Squared-exponential covariance k(x1, x2)."""
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    ell = np.asarray(length_scales, dtype=float)
    return float(signal_var * np.exp(-0.5 * np.sum(((x1 - x2) / ell) ** 2)))


def _kernel_matrix(xa, xb, length_scales, signal_var):
    ell = np.asarray(length_scales, dtype=float)
    d = (xa[:, None, :] - xb[None, :, :]) / ell
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=2))


@dataclass(frozen=True)
class DisturbanceBound:
    """Per-dimension residual bound [center - half, center + half]."""

    center: np.ndarray
    half: np.ndarray

    @property
    def lower(self):
        return self.center - self.half

    @property
    def upper(self):
        return self.center + self.half

    def contains(self, y, tol=0.0):
        y = np.asarray(y, dtype=float)
        return bool(np.all(y >= self.lower - tol) and np.all(y <= self.upper + tol))

    def centered_box(self):
        return Box(-self.half, self.half)

    def centered_vertices(self):
        """Zero-centered box V-rep for the invariant-set construction."""
        return self.centered_box().vertices()


class GprModel:
    """Sliding-window GP over model residuals keyed by [v, theta].

    The window is a ring buffer of fixed capacity; every change rebuilds
    the per-dimension Cholesky factors.
    """

    def __init__(
        self,
        length_scales=DEFAULT_LENGTH_SCALES,
        signal_std=DEFAULT_SIGNAL_STD,
        noise_var=DEFAULT_NOISE_VAR,
        capacity=DEFAULT_CAPACITY,
    ):
        self.length_scales = np.asarray(length_scales, dtype=float)
        self.signal_var = float(signal_std) ** 2
        nv = np.asarray(noise_var, dtype=float)
        self.noise_var = np.full(4, float(nv)) if nv.ndim == 0 else nv
        if self.noise_var.shape != (4,):
            raise ValueError("noise_var must be scalar or length 4")
        self.capacity = int(capacity)
        self._X = np.zeros((0, 2))
        self._Y = np.zeros((0, 4))
        self._chol = None
        self._alpha = None

    def __len__(self):
        return self._X.shape[0]

    def _refactor(self):
        n = len(self)
        if n == 0:
            self._chol = None
            self._alpha = None
            return
        K = _kernel_matrix(self._X, self._X, self.length_scales, self.signal_var)
        self._chol = []
        self._alpha = np.zeros((4, n))
        for d in range(4):
            cf = cho_factor(K + self.noise_var[d] * np.eye(n), lower=True)
            self._chol.append(cf)
            self._alpha[d] = cho_solve(cf, self._Y[:, d])

    def ingest(self, x_prev, u_prev, x_obs, params):
        """Append the residual of one observed transition and refactorize.

        The label is x_obs - step(x_prev, u_prev); the heading component is
        wrapped so residuals near +-pi stay small.
        """
        pred = step(x_prev, u_prev, params).as_array()
        obs = x_obs.as_array()
        y = obs - pred
        y[3] = wrap_angle(y[3])
        feat = np.array([x_prev.v, x_prev.theta])
        self._X = np.vstack([self._X, feat])
        self._Y = np.vstack([self._Y, y])
        if len(self) > self.capacity:
            self._X = self._X[-self.capacity:]
            self._Y = self._Y[-self.capacity:]
        self._refactor()
        return self

    def predict(self, x_star):
        """Posterior mean and latent standard deviation per output dimension.

        Empty window returns the zero-mean prior with std sigma_f.
        """
        x_star = np.asarray(x_star, dtype=float).ravel()
        if len(self) == 0:
            return np.zeros(4), np.full(4, np.sqrt(self.signal_var))
        k_star = _kernel_matrix(
            x_star[None, :], self._X, self.length_scales, self.signal_var
        )[0]
        mean = self._alpha @ k_star
        var = np.empty(4)
        for d in range(4):
            w = cho_solve(self._chol[d], k_star)
            var[d] = self.signal_var - float(k_star @ w)
        var = np.maximum(var, 0.0)
        return mean, np.sqrt(var)

    def bounds(self, x_star, c=3.0):
        """Disturbance box at a query point: mean +- c predictive std.

        Predictive std adds the observation-noise variance to the latent
        variance so the box covers future residual realizations.
        """
        if c <= 0:
            raise ValueError("c must be positive")
        mean, std = self.predict(x_star)
        half = c * np.sqrt(std * std + self.noise_var)
        return DisturbanceBound(center=mean, half=half)

    def to_json(self):
        """Window dump (features, labels, hyperparameters) for inspection."""
        return json.dumps(
            {
                "length_scales": self.length_scales.tolist(),
                "signal_var": self.signal_var,
                "noise_var": self.noise_var.tolist(),
                "capacity": self.capacity,
                "features": self._X.tolist(),
                "labels": self._Y.tolist(),
            }
        )
