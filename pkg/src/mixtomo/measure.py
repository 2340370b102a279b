"""Pauli-basis projective ensembles, the Pauli-4 POVM, sampling and estimators.

Projective outcomes are bitstring values (qubit 0 most significant, bit 0 means
the +1 eigenvalue). POVM outcomes are base-4 values with digits ordered
(x-up, y-up, z-up, remainder), qubit 0 most significant.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .qcore import Hamiltonian, kron_all, n_qubits_of

_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_S_DAG = np.diag([1, -1j])

# Single-qubit rotations taking the eigenbasis of each Pauli to the Z basis.
ROTATIONS = {
    "X": _HADAMARD,
    "Y": _HADAMARD @ _S_DAG,
    "Z": np.eye(2, dtype=complex),
}

CLAMP_TOL = 1e-12


def clean_distribution(p: np.ndarray, tol: float = CLAMP_TOL) -> np.ndarray:
    """Clamp round-off negatives to zero and renormalize along the last axis."""
    p = np.asarray(p, dtype=float)
    if np.any(p < -tol):
        raise ValueError(f"probability {p.min():.3g} is below -{tol:g}")
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ProjectiveEnsemble:
    n_qubits: int
    bases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.bases:
            labels = tuple("".join(t) for t in itertools.product("XYZ", repeat=self.n_qubits))
            object.__setattr__(self, "bases", labels)
        else:
            object.__setattr__(self, "bases", tuple(b.upper() for b in self.bases))
        for b in self.bases:
            if len(b) != self.n_qubits or any(c not in ROTATIONS for c in b):
                raise ValueError(f"invalid basis label {b!r} for {self.n_qubits} qubits")

    @property
    def n_bases(self) -> int:
        return len(self.bases)

    @property
    def n_outcomes(self) -> int:
        return 2**self.n_qubits

    def index(self, b: str | int) -> int:
        if isinstance(b, (int, np.integer)):
            if not 0 <= b < self.n_bases:
                raise KeyError(f"basis index {b} out of range")
            return int(b)
        try:
            return self.bases.index(b.upper())
        except ValueError:
            raise KeyError(f"unknown basis label {b!r}") from None

    @cached_property
    def unitaries(self) -> np.ndarray:
        """``(n_bases, 2**n, 2**n)`` stack of basis rotations ``U_b``."""
        out = np.stack([kron_all([ROTATIONS[c] for c in b]) for b in self.bases])
        out.setflags(write=False)
        return out

    def unitary(self, b: str | int) -> np.ndarray:
        return self.unitaries[self.index(b)]

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        """Outcome distributions for every basis, shape ``(n_bases, 2**n)``."""
        U = self.unitaries
        diag = np.einsum("bsi,ij,bsj->bs", U, rho, U.conj()).real
        return clean_distribution(diag)


def projective_probabilities(rho: np.ndarray, ensemble: ProjectiveEnsemble, b: str | int) -> np.ndarray:
    """Diagonal of ``U_b rho U_b^dagger``."""
    U = ensemble.unitary(b)
    if rho.shape != U.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {U.shape}")
    return clean_distribution(np.einsum("si,ij,sj->s", U, rho, U.conj()).real)


def _ket(theta: float, phi: float) -> np.ndarray:
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


def _single_qubit_pauli4() -> np.ndarray:
    ups = [_ket(np.pi / 2, 0.0), _ket(np.pi / 2, np.pi / 2), _ket(0.0, 0.0)]
    els = [np.outer(v, v.conj()) / 3 for v in ups]
    els.append(np.eye(2) - sum(els))
    return np.stack(els)


class Povm4:
    """Tensor power of the single-qubit Pauli-4 POVM.

    Everything is kept factorized: the overlap matrix of ``n`` qubits is the
    ``n``-fold Kronecker power of the 4x4 single-qubit one, so only that one
    is ever inverted.
    """

    def __init__(self, n_qubits: int):
        if n_qubits < 1:
            raise ValueError("need at least one qubit")
        self.n_qubits = n_qubits
        self.elements = _single_qubit_pauli4()
        self.overlap = np.einsum("aij,bji->ab", self.elements, self.elements).real
        self.overlap_inv = np.linalg.inv(self.overlap)

    @property
    def n_outcomes(self) -> int:
        return 4**self.n_qubits

    def element(self, sigma: int) -> np.ndarray:
        digits = np.unravel_index(sigma, (4,) * self.n_qubits)
        return kron_all([self.elements[d] for d in digits])

    def full_overlap(self) -> np.ndarray:
        out = np.ones((1, 1))
        for _ in range(self.n_qubits):
            out = np.kron(out, self.overlap)
        return out

    def _apply_per_qubit(self, vec: np.ndarray, mat: np.ndarray) -> np.ndarray:
        t = vec.reshape((4,) * self.n_qubits)
        for k in range(self.n_qubits):
            t = np.moveaxis(np.tensordot(mat, t, axes=([1], [k])), 0, k)
        return t.reshape(-1)

    def traces(self, op: np.ndarray) -> np.ndarray:
        """``tr(op P_sigma)`` for every outcome, complex, shape ``(4**n,)``."""
        n = self.n_qubits
        if op.shape != (2**n, 2**n):
            raise ValueError(f"dimension mismatch: operator {op.shape} for {n} qubits")
        t = op.reshape((2,) * (2 * n))
        # tr(op P) = sum op[i, j] P[j, i]; with m qubits left, the current
        # qubit's row axis is 0 and its column axis is m
        for k in range(n):
            m = n - k
            t = np.tensordot(self.elements, t, axes=([2, 1], [0, m]))
            t = np.moveaxis(t, 0, -1)
        return t.reshape(-1)

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return clean_distribution(self.traces(rho).real)

    def reconstruct(self, q: np.ndarray) -> np.ndarray:
        """Invert ``p = tr(rho P)``; the result is Hermitian, trace one, maybe not PSD."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_outcomes,):
            raise ValueError(f"expected {self.n_outcomes} probabilities, got {q.shape}")
        if abs(q.sum() - 1) > 1e-9:
            raise ValueError(f"probabilities sum to {q.sum():.12g}")
        coeffs = self._apply_per_qubit(q, self.overlap_inv)
        n = self.n_qubits
        t = coeffs.reshape((4,) * n).astype(complex)
        # expand each outcome axis into the (row, column) pair of its qubit
        for _ in range(n):
            t = np.tensordot(t, self.elements, axes=([0], [0]))
        # axes are now (i_0, j_0, i_1, j_1, ...)
        perm = [2 * k for k in range(n)] + [2 * k + 1 for k in range(n)]
        rho = t.transpose(perm).reshape(2**n, 2**n)
        return 0.5 * (rho + rho.conj().T)

    def energy_weights(self, H: Hamiltonian) -> np.ndarray:
        """``H_sigma`` with ``sum_sigma p(sigma) H_sigma = tr(rho H)``."""
        if H.n_qubits != self.n_qubits:
            raise ValueError("Hamiltonian and POVM act on different qubit counts")
        return self._apply_per_qubit(self.traces(H.dense()).real, self.overlap_inv.T)


def povm4_probabilities(rho: np.ndarray, povm: Povm4) -> np.ndarray:
    return povm.probabilities(rho)


def reconstruct_from_probabilities(q: np.ndarray, povm: Povm4) -> np.ndarray:
    return povm.reconstruct(q)


def povm_energy_weights(H: Hamiltonian, povm: Povm4) -> np.ndarray:
    return povm.energy_weights(H)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcome indices per basis, shape ``(n_bases, shots)``."""

    n_qubits: int
    scheme: str
    bases: tuple[str, ...]
    outcomes: np.ndarray
    seed: int = 0
    _pairs: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        if self.scheme not in ("projective", "povm4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        out = np.asarray(self.outcomes, dtype=np.int64)
        if out.ndim != 2 or out.shape[0] != len(self.bases) or out.shape[1] < 1:
            raise ValueError("outcomes must have shape (n_bases, shots) with shots >= 1")
        if out.min() < 0 or out.max() >= self.n_outcomes:
            raise ValueError("outcome index out of range")
        out.setflags(write=False)
        object.__setattr__(self, "bases", tuple(self.bases))
        object.__setattr__(self, "outcomes", out)

    @property
    def n_outcomes(self) -> int:
        return (2 if self.scheme == "projective" else 4) ** self.n_qubits

    @property
    def n_bases(self) -> int:
        return len(self.bases)

    @property
    def shots(self) -> int:
        return self.outcomes.shape[1]

    @property
    def size(self) -> int:
        return self.outcomes.size

    @property
    def pair_index(self) -> np.ndarray:
        """Flattened ``basis * n_outcomes + outcome`` per record, basis-major."""
        if not self._pairs:
            b = np.arange(self.n_bases)[:, None] * self.n_outcomes
            idx = (b + self.outcomes).reshape(-1)
            idx.setflags(write=False)
            self._pairs.append(idx)
        return self._pairs[0]

    def frequencies(self) -> np.ndarray:
        """Empirical distributions per basis, shape ``(n_bases, n_outcomes)``."""
        counts = np.bincount(self.pair_index, minlength=self.n_bases * self.n_outcomes)
        return counts.reshape(self.n_bases, self.n_outcomes) / self.shots

    def header(self) -> dict:
        return {
            "n": self.n_qubits,
            "scheme": self.scheme,
            "bases": list(self.bases),
            "shots": self.shots,
            "seed": self.seed,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header())]
        for b in range(self.n_bases):
            lines.extend(json.dumps({"b": b, "o": int(o)}) for o in self.outcomes[b])
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> "Dataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty dataset file")
        head = json.loads(lines[0])
        n_b = len(head["bases"])
        per_basis: list[list[int]] = [[] for _ in range(n_b)]
        for ln in lines[1:]:
            rec = json.loads(ln)
            per_basis[rec["b"]].append(rec["o"])
        if any(len(x) != head["shots"] for x in per_basis):
            raise ValueError("every basis must carry exactly 'shots' records")
        return cls(
            n_qubits=head["n"],
            scheme=head["scheme"],
            bases=tuple(head["bases"]),
            outcomes=np.array(per_basis, dtype=np.int64),
            seed=head.get("seed", 0),
        )

    @classmethod
    def read(cls, path: str | Path) -> "Dataset":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def sample_dataset(
    probabilities: np.ndarray,
    shots: int,
    seed: int,
    *,
    n_qubits: int,
    scheme: str,
    bases: Sequence[str],
) -> Dataset:
    """I.i.d. categorical draws per basis, one child generator per basis index."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    probs = np.atleast_2d(np.asarray(probabilities, dtype=float))
    if probs.shape[0] != len(bases):
        raise ValueError("one distribution per basis is required")
    children = np.random.SeedSequence(seed).spawn(len(bases))
    out = np.empty((len(bases), shots), dtype=np.int64)
    for b, (p, ss) in enumerate(zip(probs, children)):
        rng = np.random.default_rng(ss)
        out[b] = rng.choice(p.shape[0], size=shots, p=p / p.sum())
    return Dataset(n_qubits=n_qubits, scheme=scheme, bases=tuple(bases), outcomes=out, seed=seed)


def sample_projective(rho: np.ndarray, ensemble: ProjectiveEnsemble, shots: int, seed: int) -> Dataset:
    return sample_dataset(
        ensemble.probabilities(rho),
        shots,
        seed,
        n_qubits=ensemble.n_qubits,
        scheme="projective",
        bases=ensemble.bases,
    )


POVM_BASIS_LABEL = "P4"


def sample_povm(rho: np.ndarray, povm: Povm4, shots: int, seed: int) -> Dataset:
    return sample_dataset(
        povm.probabilities(rho)[None, :],
        shots,
        seed,
        n_qubits=povm.n_qubits,
        scheme="povm4",
        bases=(POVM_BASIS_LABEL,),
    )


def _term_measured_by(letters: str, basis: str) -> bool:
    return all(c == "I" or c == b for c, b in zip(letters, basis))


def empirical_energy(dataset: Dataset, H: Hamiltonian | np.ndarray) -> float:
    """Direct statistical-averaging energy estimate from raw shots.

    POVM data: mean of ``H_sigma`` over shots (``H`` may be a Hamiltonian or the
    precomputed weight vector). Projective data: each Pauli term is averaged
    over the shots of every basis that measures it.
    """
    if dataset.scheme == "povm4":
        weights = H if isinstance(H, np.ndarray) else Povm4(dataset.n_qubits).energy_weights(H)
        return float(np.mean(weights[dataset.outcomes]))
    if not isinstance(H, Hamiltonian):
        raise TypeError("projective datasets need a Hamiltonian")
    n = dataset.n_qubits
    bits = (dataset.outcomes[..., None] >> np.arange(n - 1, -1, -1)) & 1
    signs = 1 - 2 * bits  # (n_bases, shots, n)
    total = 0.0
    for term in H.terms:
        support = [k for k, c in enumerate(term.letters) if c != "I"]
        if not support:
            total += term.coefficient
            continue
        rows = [b for b, lab in enumerate(dataset.bases) if _term_measured_by(term.letters, lab)]
        if not rows:
            raise ValueError(f"no basis in the dataset measures term {term.letters}")
        vals = np.prod(signs[rows][..., support], axis=-1)
        total += term.coefficient * float(np.mean(vals))
    return total


def state_n_qubits(rho: np.ndarray) -> int:
    return n_qubits_of(rho)
