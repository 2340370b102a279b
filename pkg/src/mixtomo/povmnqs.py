"""Autoregressive POVM-NQS over base-4 outcome strings.

Site ``k`` owns an independent dense network: the one-hot encoding of the
prefix ``sigma_<k`` (``4k`` inputs) feeds two tanh layers of width 10 and a
4-way softmax. The product of conditionals is normalized by construction.

Flat layout: sites in qubit order; within a site ``W1 (10 x 4k), b1, W2
(10 x 10), b2, W3 (4 x 10), b3``, matrices row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import MAX_QUBITS, _kernels

WIDTHS = (10, 10)
WEIGHT_STD = 0.1


@dataclass(frozen=True)
class SiteLayout:
    offset: int
    n_in: int
    widths: tuple[int, int]

    def shapes(self):
        h1, h2 = self.widths
        return [(h1, self.n_in), (h1,), (h2, h1), (h2,), (4, h2), (4,)]

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes())


def outcome_digits(n: int) -> np.ndarray:
    """``(4**n, n)`` base-4 digits, qubit 0 most significant."""
    idx = np.arange(4**n)
    return (idx[:, None] // 4 ** np.arange(n - 1, -1, -1)) % 4


class PovmNqsModel:
    scheme = "povm4"
    kind = "povmnqs"

    def __init__(self, n: int, widths: tuple[int, int] = WIDTHS):
        if not 1 <= n <= MAX_QUBITS:
            raise ValueError(f"n must lie in [1, {MAX_QUBITS}]")
        self.n = n
        self.widths = tuple(widths)
        self.sites = []
        off = 0
        for k in range(n):
            site = SiteLayout(off, 4 * k, self.widths)
            self.sites.append(site)
            off += site.size
        self._n_params = off
        self.digits = outcome_digits(n)
        K = 4**n
        onehot = np.zeros((K, n, 4))
        onehot[np.arange(K)[:, None], np.arange(n)[None, :], self.digits] = 1.0
        self._onehot = onehot
        self._offsets = np.array([s.offset for s in self.sites], dtype=np.int64)
        self._inputs = [onehot[:, :k, :].reshape(K, 4 * k) for k in range(n)]

    @property
    def n_params(self) -> int:
        return self._n_params

    @property
    def n_pairs(self) -> int:
        return 4**self.n

    def init_params(self, rng: np.random.Generator, std: float = WEIGHT_STD) -> np.ndarray:
        theta = np.zeros(self.n_params)
        for site in self.sites:
            pos = site.offset
            for i, shp in enumerate(site.shapes()):
                size = int(np.prod(shp))
                if i % 2 == 0:
                    theta[pos:pos + size] = std * rng.standard_normal(size)
                pos += size
        return theta

    def site_params(self, theta: np.ndarray, k: int):
        site = self.sites[k]
        out = []
        pos = site.offset
        for shp in site.shapes():
            size = int(np.prod(shp))
            out.append(theta[pos:pos + size].reshape(shp))
            pos += size
        return out

    def _check(self, theta):
        theta = np.asarray(theta)
        if theta.dtype != np.longdouble:
            theta = theta.astype(float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        return theta

    def _site_forward(self, theta, k):
        W1, b1, W2, b2, W3, b3 = self.site_params(theta, k)
        x = self._inputs[k]
        h1 = np.tanh(x @ W1.T + b1)
        h2 = np.tanh(h1 @ W2.T + b2)
        z = h2 @ W3.T + b3
        z = z - z.max(axis=1, keepdims=True)
        log_sm = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return x, h1, h2, log_sm

    def conditionals(self, theta: np.ndarray) -> list[np.ndarray]:
        """Per site, ``q(. | sigma_<k)`` for every outcome string, shape ``(4**n, 4)``."""
        theta = self._check(theta)
        return [np.exp(self._site_forward(theta, k)[3]) for k in range(self.n)]

    def log_probs(self, theta: np.ndarray) -> np.ndarray:
        """``log q(sigma)`` for all outcomes, shape ``(1, 4**n)``."""
        theta = self._check(theta)
        K = 4**self.n
        total = np.zeros(K, dtype=theta.dtype)
        for k in range(self.n):
            log_sm = self._site_forward(theta, k)[3]
            total += log_sm[np.arange(K), self.digits[:, k]]
        return total[None, :]

    def probabilities(self, theta: np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs(theta))

    def full_distribution(self, theta: np.ndarray) -> np.ndarray:
        return self.probabilities(theta)[0]

    def log_probs_and_grads(self, theta: np.ndarray, fast: bool = True):
        """Log-probabilities of all outcomes and their gradients, ``(4**n,)`` and ``(4**n, P)``."""
        theta = self._check(theta)
        if fast:
            return _kernels.povm_tables(
                np.ascontiguousarray(theta, dtype=float), self.digits, self._offsets,
                self.widths[0], self.widths[1],
            )
        K = 4**self.n
        log_q = np.zeros(K)
        grad = np.zeros((K, self.n_params))
        rows = np.arange(K)
        for k, site in enumerate(self.sites):
            W1, b1, W2, b2, W3, b3 = self.site_params(theta, k)
            x, h1, h2, log_sm = self._site_forward(theta, k)
            log_q += log_sm[rows, self.digits[:, k]]
            dz = self._onehot[:, k, :] - np.exp(log_sm)
            da2 = (dz @ W3) * (1 - h2**2)
            da1 = (da2 @ W2) * (1 - h1**2)
            parts = [
                (da1[:, :, None] * x[:, None, :]).reshape(K, -1),
                da1,
                (da2[:, :, None] * h1[:, None, :]).reshape(K, -1),
                da2,
                (dz[:, :, None] * h2[:, None, :]).reshape(K, -1),
                dz,
            ]
            grad[:, site.offset:site.offset + site.size] = np.concatenate(parts, axis=1)
        return log_q, grad, np.zeros(K, dtype=bool)

    def log_prob(self, theta: np.ndarray, sigma: int) -> float:
        if not 0 <= sigma < 4**self.n:
            raise ValueError("outcome out of range")
        return float(self.log_probs(theta)[0, sigma])

    def grad_log_prob(self, theta: np.ndarray, sigma: int) -> np.ndarray:
        if not 0 <= sigma < 4**self.n:
            raise ValueError("outcome out of range")
        return self.log_probs_and_grads(theta)[1][sigma]

    def to_dict(self, theta: np.ndarray) -> dict:
        return {
            "scheme": "povmnqs",
            "n": self.n,
            "widths": list(self.widths),
            "theta": [float(x) for x in theta],
        }

    @classmethod
    def from_dict(cls, data: dict):
        if data.get("scheme") != "povmnqs":
            raise ValueError("not a POVM-NQS model record")
        model = cls(data["n"], tuple(data["widths"]))
        theta = np.array(data["theta"], dtype=float)
        if theta.shape != (model.n_params,):
            raise ValueError("parameter vector length does not match the architecture")
        return model, theta
