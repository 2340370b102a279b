"""Neural density operator: a latent-purification RBM density matrix.

Unnormalized matrix elements, with spins ``eta = 1 - 2 * bit``::

    rho(eta, eta') = exp(a.eta + conj(a).eta')
        * prod_h 2cosh(b_h + W_h.eta) * 2cosh(conj(b_h) + conj(W_h).eta')
        * prod_k 2cosh(Re(c_k) + U_k.eta + conj(U_k).eta')

The first line times the hidden product is ``psi(eta) conj(psi(eta'))`` and the
ancilla factor is a sum of such rank-one terms, so the matrix is PSD for any
parameters. Only the real part of an ancilla bias can enter without breaking
Hermiticity; the imaginary slot is kept in the layout but is inert.

Flat parameter layout: complex blocks ``a (n), b (n_hidden), c (n_ancilla),
W (n_hidden x n, row-major), U (n_ancilla x n, row-major)`` concatenated, each
complex entry stored as ``(real, imag)`` in adjacent slots.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import MAX_QUBITS, _kernels
from .measure import ProjectiveEnsemble

INIT_STD = 0.01
PROB_FLOOR = 1e-300


def _as_real(theta) -> np.ndarray:
    """Float array, keeping extended precision when the caller passes it."""
    theta = np.asarray(theta)
    return theta if theta.dtype == np.longdouble else theta.astype(float)


def spin_configs(n: int) -> np.ndarray:
    """``(2**n, n)`` spins with qubit 0 as the most significant bit."""
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return (1 - 2 * bits).astype(float)


def log2cosh(z: np.ndarray) -> np.ndarray:
    """``log(2 cosh z)`` without overflow; the imaginary part is defined mod 2 pi."""
    s = np.where(z.real >= 0, 1.0, -1.0)
    return s * z + np.log1p(np.exp(-2.0 * s * z))


@dataclass(frozen=True)
class NdoShape:
    n: int
    n_hidden: int
    n_ancilla: int

    @property
    def n_complex(self) -> int:
        n, h, k = self.n, self.n_hidden, self.n_ancilla
        return n + h + k + h * n + k * n

    @property
    def n_params(self) -> int:
        return 2 * self.n_complex


class NdoModel:
    """NDO over a projective Pauli ensemble, evaluated exactly by enumeration.

    All (basis, outcome) pairs are evaluated together; pair ``b * 2**n + s``
    is outcome ``s`` in basis ``b``.
    """

    scheme = "projective"
    kind = "ndo"

    def __init__(self, n: int, ensemble: ProjectiveEnsemble | None = None,
                 n_hidden: int | None = None, n_ancilla: int | None = None):
        if not 1 <= n <= MAX_QUBITS:
            raise ValueError(f"n must lie in [1, {MAX_QUBITS}]")
        self.shape = NdoShape(n, n if n_hidden is None else n_hidden,
                              n if n_ancilla is None else n_ancilla)
        self.n = n
        self.ensemble = ensemble if ensemble is not None else ProjectiveEnsemble(n)
        if self.ensemble.n_qubits != n:
            raise ValueError("ensemble acts on a different number of qubits")
        self.dim = 2**n
        self.spins = spin_configs(n)
        U = self.ensemble.unitaries
        # weights[b*D + s, i*D + j] = U_b[s, i] conj(U_b[s, j])
        self._pair_weights = np.einsum("bsi,bsj->bsij", U, U.conj()).reshape(
            self.ensemble.n_bases * self.dim, self.dim**2
        )
        self._diag = np.arange(self.dim) * (self.dim + 1)
        self._w_re = np.ascontiguousarray(self._pair_weights.real)
        self._w_im = np.ascontiguousarray(self._pair_weights.imag)

    @property
    def n_params(self) -> int:
        return self.shape.n_params

    @property
    def n_pairs(self) -> int:
        return self.ensemble.n_bases * self.dim

    def init_params(self, rng: np.random.Generator, std: float = INIT_STD) -> np.ndarray:
        return std * rng.standard_normal(self.n_params)

    def unpack(self, theta: np.ndarray):
        theta = _as_real(theta)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        z = theta[0::2] + 1j * theta[1::2]
        n, h, k = self.shape.n, self.shape.n_hidden, self.shape.n_ancilla
        a, z = z[:n], z[n:]
        b, z = z[:h], z[h:]
        c, z = z[:k], z[k:]
        W, z = z[: h * n].reshape(h, n), z[h * n:]
        U = z.reshape(k, n)
        return a, b, c, W, U

    def _terms(self, theta):
        a, b, c, W, U = self.unpack(theta)
        E = self.spins
        hid = b[None, :] + E @ W.T                    # (D, h)
        f = E @ a + log2cosh(hid).sum(axis=1)          # log psi(eta)
        anc = (c.real[None, None, :] + (E @ U.T)[:, None, :]
               + (E @ U.conj().T)[None, :, :])         # (D, D, k)
        log_rho = f[:, None] + f.conj()[None, :] + log2cosh(anc).sum(axis=2)
        return log_rho, hid, anc

    def log_unnormalized(self, theta: np.ndarray) -> np.ndarray:
        """Complex ``log rho~(eta, eta')``; imaginary parts are defined mod 2 pi."""
        return self._terms(theta)[0]

    def unnormalized_matrix(self, theta: np.ndarray) -> np.ndarray:
        out = np.exp(self.log_unnormalized(theta))
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("unnormalized NDO matrix overflowed; use density_matrix")
        return out

    def _scaled(self, theta):
        log_rho, hid, anc = self._terms(theta)
        shift = log_rho.real.max()
        R = np.exp(log_rho - shift)
        if not np.all(np.isfinite(R)):
            raise FloatingPointError("non-finite NDO matrix element")
        return R, hid, anc

    def density_matrix(self, theta: np.ndarray) -> np.ndarray:
        R = self._scaled(theta)[0]
        tr = np.trace(R).real
        if tr < 1e-300:
            raise FloatingPointError("NDO trace vanished; degenerate parameters")
        rho = R / tr
        return 0.5 * (rho + rho.conj().T)

    def probabilities(self, theta: np.ndarray) -> np.ndarray:
        """``q_b(s)`` for every basis, shape ``(n_bases, 2**n)``."""
        R = self._scaled(theta)[0]
        q = (self._pair_weights @ R.reshape(-1)).real / np.trace(R).real
        return q.reshape(self.ensemble.n_bases, self.dim)

    def log_probs(self, theta: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            q = self.probabilities(theta)
            return np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), -np.inf)

    def _log_derivatives(self, hid, anc) -> np.ndarray:
        """``d log rho~(eta, eta') / d theta``, shape ``(D*D, n_params)``."""
        E = self.spins
        D, n = E.shape
        th = np.tanh(hid)                               # (D, h)
        ta = np.tanh(anc)                               # (D, D, k)
        # holomorphic derivatives of log psi(eta) w.r.t. a, b, W
        dF = np.concatenate([E, th, (th[:, :, None] * E[:, None, :]).reshape(D, -1)], axis=1)
        k = ta.shape[2]
        A = np.empty((D, D, self.shape.n_complex), dtype=complex)
        B = np.empty_like(A)
        nf = n + th.shape[1]
        A[:, :, :nf] = dF[:, None, :nf]
        B[:, :, :nf] = dF.conj()[None, :, :nf]
        A[:, :, nf:nf + k] = 0.5 * ta
        B[:, :, nf:nf + k] = 0.5 * ta
        nw = nf + k
        nW = dF.shape[1] - nf
        A[:, :, nw:nw + nW] = dF[:, None, nf:]
        B[:, :, nw:nw + nW] = dF.conj()[None, :, nf:]
        A[:, :, nw + nW:] = (ta[:, :, :, None] * E[:, None, None, :]).reshape(D, D, -1)
        B[:, :, nw + nW:] = (ta[:, :, :, None] * E[None, :, None, :]).reshape(D, D, -1)
        O = np.empty((D, D, self.n_params), dtype=complex)
        O[:, :, 0::2] = A + B
        O[:, :, 1::2] = 1j * (A - B)
        return O.reshape(D * D, -1)

    def log_probs_and_grads(self, theta: np.ndarray, fast: bool = True):
        """Log-probabilities of every pair and their parameter gradients.

        Returns ``(log_q, grad, clipped)`` with shapes ``(n_pairs,)`` and
        ``(n_pairs, n_params)``; ``clipped`` marks pairs whose probability fell
        below the floor (their log is floored and their gradient zeroed).
        ``fast=False`` runs the plain numpy path instead of the compiled one.
        """
        if fast:
            theta = np.ascontiguousarray(theta, dtype=float)
            if theta.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
            log_q, grad, clipped = _kernels.ndo_tables(
                theta, self.spins, self._w_re, self._w_im,
                self.shape.n_hidden, self.shape.n_ancilla,
            )
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError("non-finite NDO gradient")
            return log_q, grad, clipped
        R, hid, anc = self._scaled(theta)
        r = R.reshape(-1)
        O = self._log_derivatives(hid, anc)
        rO = r[:, None] * O
        q_un = (self._pair_weights @ r).real
        dq_un = (self._pair_weights @ rO).real
        Z = r[self._diag].real.sum()
        dZ = rO[self._diag].real.sum(axis=0)
        q = q_un / Z
        clipped = q < PROB_FLOOR
        safe = np.where(clipped, 1.0, q_un)
        log_q = np.where(clipped, np.log(PROB_FLOOR), np.log(safe / Z))
        grad = dq_un / safe[:, None] - dZ[None, :] / Z
        grad[clipped] = 0.0
        return log_q, grad, clipped

    def log_prob(self, theta: np.ndarray, b: str | int, sigma: int) -> float:
        return float(self.log_probs(theta)[self.ensemble.index(b), sigma])

    def grad_log_prob(self, theta: np.ndarray, b: str | int, sigma: int) -> np.ndarray:
        if not 0 <= sigma < self.dim:
            raise ValueError("outcome out of range")
        log_q, grad, clipped = self.log_probs_and_grads(theta)
        i = self.ensemble.index(b) * self.dim + sigma
        if clipped[i]:
            raise FloatingPointError("probability vanished for this outcome")
        return grad[i]

    def log_prob_connected(self, theta: np.ndarray, b: str | int, sigma: int) -> float:
        """Same value as :meth:`log_prob`, summing only the connected elements.

        ``<sigma|U_b|eta>`` is nonzero only where ``eta`` agrees with ``sigma``
        on Z-measured qubits, so the double sum runs over ``2**(2 m)`` terms
        with ``m`` the number of X/Y letters in the basis.
        """
        label = self.ensemble.bases[self.ensemble.index(b)]
        n = self.n
        a, bb, c, W, U = self.unpack(theta)
        bits = [(sigma >> (n - 1 - q)) & 1 for q in range(n)]
        free = [q for q, ch in enumerate(label) if ch != "Z"]
        from .measure import ROTATIONS

        def amp(eta_bits):
            out = 1.0 + 0j
            for q in range(n):
                out *= ROTATIONS[label[q]][bits[q], eta_bits[q]]
            return out

        def log_entry(e, ep):
            e = 1.0 - 2.0 * np.asarray(e)
            ep = 1.0 - 2.0 * np.asarray(ep)
            val = a @ e + a.conj() @ ep
            val += log2cosh(bb + W @ e).sum() + log2cosh(bb.conj() + W.conj() @ ep).sum()
            val += log2cosh(c.real + U @ e + U.conj() @ ep).sum()
            return val

        connected = []
        for choice in itertools.product((0, 1), repeat=len(free)):
            eb = list(bits)
            for q, v in zip(free, choice):
                eb[q] = v
            connected.append(tuple(eb))
        terms = []
        for e in connected:
            for ep in connected:
                terms.append((amp(e) * np.conj(amp(ep)), log_entry(e, ep)))
        diag = [log_entry(e, e) for e in itertools.product((0, 1), repeat=n)]
        shift = max(max(t[1].real for t in terms), max(d.real for d in diag))
        num = sum(w * np.exp(l - shift) for w, l in terms).real
        den = sum(np.exp(d - shift) for d in diag).real
        return float(np.log(num / den))

    def to_dict(self, theta: np.ndarray) -> dict:
        return {
            "scheme": "ndo",
            "n": self.n,
            "hidden": self.shape.n_hidden,
            "ancilla": self.shape.n_ancilla,
            "bases": list(self.ensemble.bases),
            "theta": [float(x) for x in theta],
        }

    @classmethod
    def from_dict(cls, data: dict, ensemble: ProjectiveEnsemble | None = None):
        if data.get("scheme") != "ndo":
            raise ValueError("not an NDO model record")
        if ensemble is None and data.get("bases"):
            ensemble = ProjectiveEnsemble(data["n"], tuple(data["bases"]))
        model = cls(data["n"], ensemble, data["hidden"], data["ancilla"])
        theta = np.array(data["theta"], dtype=float)
        if theta.shape != (model.n_params,):
            raise ValueError("parameter vector length does not match the architecture")
        return model, theta


def save_json(model, theta, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(theta), fh)
