"""Dense qubit linear algebra: Hamiltonians, target states and distance measures.

States are plain ``numpy`` arrays: a density matrix is a ``(2**n, 2**n)``
complex array, a pure state a ``(2**n,)`` complex vector. Qubit 0 is the most
significant bit of the basis index.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import MAX_QUBITS

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# Signal returned by KL-type quantities when q vanishes where p does not.
INFINITE_DIVERGENCE = math.inf


class HamiltonianParseError(ValueError):
    """Malformed Pauli-string Hamiltonian text."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _check_n(n: int) -> None:
    if n < 1:
        raise ValueError(f"number of qubits must be positive, got {n}")
    if n > MAX_QUBITS:
        raise ValueError(f"dense simulation is capped at {MAX_QUBITS} qubits, got {n}")


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for m in mats:
        out = np.kron(out, m)
    return out


@dataclass(frozen=True)
class PauliString:
    letters: str
    coefficient: float = 1.0

    def __post_init__(self):
        if not self.letters or any(c not in PAULI for c in self.letters):
            raise ValueError(f"invalid Pauli letters {self.letters!r}")
        if not math.isfinite(self.coefficient):
            raise ValueError("coefficient must be finite")

    @property
    def n_qubits(self) -> int:
        return len(self.letters)

    def matrix(self) -> np.ndarray:
        return self.coefficient * kron_all([PAULI[c] for c in self.letters])


@dataclass(frozen=True)
class Hamiltonian:
    """A real-weighted sum of Pauli strings on ``n_qubits`` qubits."""

    n_qubits: int
    terms: tuple[PauliString, ...]
    _dense: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_n(self.n_qubits)
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if t.n_qubits != self.n_qubits:
                raise ValueError(
                    f"term {t.letters} has length {t.n_qubits}, expected {self.n_qubits}"
                )

    def dense(self) -> np.ndarray:
        if not self._dense:
            d = 2**self.n_qubits
            mat = np.zeros((d, d), dtype=complex)
            for t in self.terms:
                mat += t.matrix()
            self._dense.append(mat)
        return self._dense[0]

    def to_text(self) -> str:
        return "".join(f"{t.coefficient!r} {t.letters}\n" for t in self.terms)


def tfim_hamiltonian(n: int, h: float) -> Hamiltonian:
    """Open-boundary transverse-field Ising chain ``-sum Z_i Z_{i+1} - h sum X_i``."""
    _check_n(n)
    terms = []
    for i in range(n - 1):
        letters = ["I"] * n
        letters[i] = letters[i + 1] = "Z"
        terms.append(PauliString("".join(letters), -1.0))
    for i in range(n):
        letters = ["I"] * n
        letters[i] = "X"
        terms.append(PauliString("".join(letters), -float(h)))
    return Hamiltonian(n, tuple(terms))


def load_hamiltonian(text: str) -> Hamiltonian:
    """Parse ``<coefficient> <letters>`` lines; ``#`` starts a comment.

    The unicode minus sign is accepted in coefficients.
    """
    terms: list[PauliString] = []
    n = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise HamiltonianParseError(lineno, f"expected '<coefficient> <letters>', got {raw!r}")
        coef_s, letters = parts
        try:
            coef = float(coef_s.replace("−", "-"))
        except ValueError:
            raise HamiltonianParseError(lineno, f"bad coefficient {coef_s!r}") from None
        if not math.isfinite(coef):
            raise HamiltonianParseError(lineno, "coefficient must be finite")
        letters = letters.upper()
        if any(c not in PAULI for c in letters):
            raise HamiltonianParseError(lineno, f"bad Pauli letters {letters!r}")
        if n is None:
            n = len(letters)
        elif len(letters) != n:
            raise HamiltonianParseError(
                lineno, f"inconsistent length: {len(letters)} letters, expected {n}"
            )
        terms.append(PauliString(letters, coef))
    if n is None:
        raise HamiltonianParseError(0, "no terms found")
    return Hamiltonian(n, tuple(terms))


def n_qubits_of(mat: np.ndarray) -> int:
    d = mat.shape[0]
    n = int(round(math.log2(d)))
    if 2**n != d:
        raise ValueError(f"dimension {d} is not a power of two")
    return n


def _hermitian_part(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.conj().T)


def thermal_state(H: Hamiltonian, beta: float) -> np.ndarray:
    """Gibbs state ``exp(-beta H) / Z`` through the eigendecomposition of ``H``."""
    if not (math.isfinite(beta) and beta >= 0):
        raise ValueError(f"beta must be finite and non-negative, got {beta}")
    evals, evecs = np.linalg.eigh(H.dense())
    # shift by the ground energy so the largest weight is exactly one
    w = np.exp(-beta * (evals - evals.min()))
    w /= w.sum()
    rho = (evecs * w) @ evecs.conj().T
    return _hermitian_part(rho)


def ground_state(H: Hamiltonian, degeneracy_tol: float = 1e-10) -> np.ndarray:
    """Lowest eigenvector, phase fixed so the first non-negligible amplitude is real positive."""
    evals, evecs = np.linalg.eigh(H.dense())
    if len(evals) > 1 and evals[1] - evals[0] < degeneracy_tol:
        warnings.warn(
            f"ground state is degenerate within {degeneracy_tol:g}; "
            "returning the lowest-index eigenvector",
            RuntimeWarning,
            stacklevel=2,
        )
    psi = evecs[:, 0].copy()
    k = int(np.argmax(np.abs(psi) > 1e-12))
    psi *= np.exp(-1j * np.angle(psi[k]))
    return psi / np.linalg.norm(psi)


def depolarize(psi: np.ndarray, p: float) -> np.ndarray:
    """``(1 - p) |psi><psi| + p I / 2**n``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"depolarizing strength must lie in [0, 1], got {p}")
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
        raise ValueError("state vector must have unit norm")
    d = psi.shape[0]
    return (1 - p) * np.outer(psi, psi.conj()) + p * np.eye(d) / d


def pure_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def energy(rho: np.ndarray, H: Hamiltonian) -> float:
    """``Re tr(H rho)``; a non-negligible imaginary part is a numerical error."""
    Hd = H.dense()
    if rho.shape != Hd.shape:
        raise ValueError(f"dimension mismatch: state {rho.shape}, Hamiltonian {Hd.shape}")
    val = np.einsum("ij,ji->", Hd, rho)
    if abs(val.imag) > 1e-9:
        raise FloatingPointError(f"tr(H rho) has imaginary part {val.imag:.3g}")
    return float(val.real)


def _principal_sqrt_hermitian(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(_hermitian_part(mat))
    roots = np.sqrt(evals.astype(complex))
    return (evecs * roots) @ evecs.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``|tr sqrt(sqrt(sigma) rho sqrt(sigma))|**2`` with principal roots.

    ``sigma`` need only be Hermitian; negative eigenvalues get imaginary roots.
    """
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    root = _principal_sqrt_hermitian(sigma)
    inner = root @ rho @ root
    if np.min(np.linalg.eigvalsh(_hermitian_part(sigma))) >= 0:
        lam = np.clip(np.linalg.eigvalsh(_hermitian_part(inner)), 0.0, None)
        tr = np.sum(np.sqrt(lam))
    else:
        tr = np.sum(np.sqrt(np.linalg.eigvals(inner).astype(complex)))
    return float(abs(tr) ** 2)


def infidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``1 - F`` with the square root of ``sigma`` taken on the outside."""
    return 1.0 - fidelity(rho, sigma)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    lam = np.linalg.eigvalsh(_hermitian_part(rho - sigma))
    return float(0.5 * np.sum(np.abs(lam)))


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {p.sum():.12g}, not 1")
    return p


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """``sum p log(p/q)``; returns ``INFINITE_DIVERGENCE`` on a support violation."""
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return INFINITE_DIVERGENCE
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def classical_infidelity(p_list: Sequence[np.ndarray], q_list: Sequence[np.ndarray]) -> float:
    """One minus the basis-averaged Bhattacharyya coefficient."""
    if len(p_list) != len(q_list) or not len(p_list):
        raise ValueError("need two equal-length, non-empty lists of distributions")
    total = 0.0
    for p, q in zip(p_list, q_list):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.shape != q.shape:
            raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
        total += np.sum(np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None)))
    return float(1.0 - total / len(p_list))


@dataclass(frozen=True)
class PerturbationSpec:
    delta: float
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be finite and non-negative, got {self.delta}")


def random_psd_direction(dim: int, rng: np.random.Generator) -> np.ndarray:
    """``A A^dagger / tr(A A^dagger)`` with complex standard Gaussian ``A``."""
    A = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    D = A @ A.conj().T
    return D / np.trace(D).real


def random_perturbation(rho: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    """Normalized ``rho + delta * Delta`` with a random trace-one PSD ``Delta``."""
    if spec.delta == 0:
        return rho
    rng = np.random.default_rng(spec.seed)
    out = rho + spec.delta * random_psd_direction(rho.shape[0], rng)
    return _hermitian_part(out / np.trace(out).real)


def perturb_pure(psi: np.ndarray, delta: float, direction: np.ndarray) -> np.ndarray:
    """Density matrix of the normalized ``psi + delta * direction``."""
    v = psi + delta * direction
    return pure_density(v / np.linalg.norm(v))


def random_orthogonal_direction(psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(psi.shape) + 1j * rng.standard_normal(psi.shape)
    v -= np.vdot(psi, v) * psi
    return v / np.linalg.norm(v)


def haar_state(n: int, rng: np.random.Generator) -> np.ndarray:
    d = 2**n
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def random_mixed_state(n: int, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet(1, ..., 1) mixture of ``2**n`` Haar-random pure states."""
    d = 2**n
    w = rng.dirichlet(np.ones(d))
    rho = np.zeros((d, d), dtype=complex)
    for wk in w:
        psi = haar_state(n, rng)
        rho += wk * np.outer(psi, psi.conj())
    return _hermitian_part(rho)


def check_physical(rho: np.ndarray, tol: float = 1e-10) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, trace one and PSD within ``tol``."""
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real:.12g}")
    if np.min(np.linalg.eigvalsh(_hermitian_part(rho))) < -tol:
        raise ValueError("density matrix has a negative eigenvalue")


@lru_cache(maxsize=None)
def pauli_strings(n: int) -> tuple[tuple[str, ...], np.ndarray]:
    """All ``4**n`` Pauli strings over ``IXYZ`` (lexicographic) and their matrices."""
    _check_n(n)
    letters = tuple("".join(t) for t in itertools.product("IXYZ", repeat=n))
    mats = np.stack([kron_all([PAULI[c] for c in s]) for s in letters])
    mats.setflags(write=False)
    return letters, mats


def _bernoulli_kl(p1: float, q1: float) -> float:
    total = 0.0
    for a, b in ((p1, q1), (1.0 - p1, 1.0 - q1)):
        if a > 0:
            if b <= 0:
                return INFINITE_DIVERGENCE
            total += a * (math.log(a) - math.log(b))
    return total


def _clamp_prob(x: float) -> float:
    if x < -1e-12 or x > 1 + 1e-12:
        raise ValueError(f"probability {x} outside [0, 1]")
    return min(max(x, 0.0), 1.0)


def all_pauli_kl(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Sum of the two-outcome KLs over all ``4**n`` Pauli-string measurements."""
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    _, mats = pauli_strings(n_qubits_of(rho))
    ex_r = np.einsum("kij,ji->k", mats, rho).real
    ex_s = np.einsum("kij,ji->k", mats, sigma).real
    total = 0.0
    # the identity string is deterministic for every trace-one state; skipping it
    # keeps round-off in the trace from producing a spurious support violation
    for er, es in zip(ex_r[1:], ex_s[1:]):
        kl = _bernoulli_kl(_clamp_prob((1 + er) / 2), _clamp_prob((1 + es) / 2))
        if math.isinf(kl):
            return INFINITE_DIVERGENCE
        total += kl
    return total


def pauli_kl_bound(n: int, kl: float) -> float:
    """Right-hand side ``2**n / sqrt(2) * sqrt(KL)`` of the trace-distance bound."""
    return 2**n / math.sqrt(2) * math.sqrt(kl)


@dataclass(frozen=True)
class MetricsRecord:
    kl: float
    energy_error: float
    infidelity: float
    infidelity_swapped: float
    classical_infidelity: float
    trace_distance: float

    def as_dict(self) -> dict[str, float]:
        return {
            "kl": self.kl,
            "energy_error": self.energy_error,
            "infidelity": self.infidelity,
            "infidelity_swapped": self.infidelity_swapped,
            "classical_infidelity": self.classical_infidelity,
            "trace_distance": self.trace_distance,
        }
