import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixtomo.measure import (
    Dataset,
    Povm4,
    ProjectiveEnsemble,
    empirical_energy,
    povm4_probabilities,
    povm_energy_weights,
    projective_probabilities,
    reconstruct_from_probabilities,
    sample_dataset,
    sample_povm,
    sample_projective,
)
from mixtomo.qcore import (
    Hamiltonian,
    PauliString,
    energy,
    kron_all,
    pure_density,
    random_mixed_state,
    tfim_hamiltonian,
    thermal_state,
)

R0 = np.diag([1.0, 0.0]).astype(complex)
Z1 = Hamiltonian(1, (PauliString("Z", 1.0),))


def test_ensemble_defaults_and_unitaries():
    E = ProjectiveEnsemble(2)
    assert E.bases == ("XX", "XY", "XZ", "YX", "YY", "YZ", "ZX", "ZY", "ZZ")
    for U in E.unitaries:
        assert np.max(np.abs(U @ U.conj().T - np.eye(4))) < 1e-12
    with pytest.raises(ValueError):
        ProjectiveEnsemble(2, ("XQ",))
    with pytest.raises(KeyError):
        E.index("XYZ")


def test_projective_examples():
    E = ProjectiveEnsemble(1)
    assert np.allclose(projective_probabilities(R0, E, "Z"), [1, 0])
    assert np.allclose(projective_probabilities(R0, E, "X"), [0.5, 0.5])


def test_projective_completeness_and_rotation_convention():
    E = ProjectiveEnsemble(1)
    plus_y = np.array([1, 1j]) / math.sqrt(2)
    assert np.allclose(projective_probabilities(pure_density(plus_y), E, "Y"), [1, 0])
    for U in E.unitaries:
        projectors = [np.outer(U[s].conj(), U[s]) for s in range(2)]
        assert np.max(np.abs(sum(projectors) - np.eye(2))) < 1e-12


def test_projective_matches_matrix_elements():
    rho = thermal_state(tfim_hamiltonian(2, 1.0), 1.0)
    p = projective_probabilities(rho, ProjectiveEnsemble(2), "ZZ")
    assert np.max(np.abs(p - np.diag(rho).real)) < 1e-12


def test_povm_elements():
    P = Povm4(1).elements
    assert np.max(np.abs(P.sum(axis=0) - np.eye(2))) < 1e-12
    for el in P:
        assert np.linalg.eigvalsh(el).min() >= -1e-12
    ev = np.linalg.eigvalsh(P[3])
    assert np.allclose(ev, [0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6], atol=1e-12)
    full = Povm4(2)
    assert np.allclose(full.full_overlap(), np.kron(Povm4(1).full_overlap(), Povm4(1).full_overlap()))
    assert np.isfinite(np.linalg.cond(Povm4(1).full_overlap()))


def test_povm_probability_examples():
    povm = Povm4(1)
    assert np.allclose(povm4_probabilities(np.eye(2) / 2, povm), [1 / 6, 1 / 6, 1 / 6, 1 / 2])
    assert np.allclose(povm4_probabilities(R0, povm), [1 / 6, 1 / 6, 1 / 3, 1 / 3])
    with pytest.raises(ValueError):
        povm4_probabilities(np.eye(4) / 4, povm)


def test_povm_product_state_factorizes():
    rng = np.random.default_rng(2)
    a, b = random_mixed_state(1, rng), random_mixed_state(1, rng)
    p = povm4_probabilities(np.kron(a, b), Povm4(2))
    pa, pb = povm4_probabilities(a, Povm4(1)), povm4_probabilities(b, Povm4(1))
    assert np.max(np.abs(p - np.outer(pa, pb).reshape(-1))) < 1e-12


def test_povm_probabilities_match_dense_trace():
    rng = np.random.default_rng(5)
    rho = random_mixed_state(2, rng)
    povm = Povm4(2)
    dense = [np.trace(rho @ povm.element(s)).real for s in range(16)]
    assert np.max(np.abs(povm.probabilities(rho) - dense)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_reconstruct_roundtrip(seed, n):
    rho = random_mixed_state(n, np.random.default_rng(seed))
    povm = Povm4(n)
    back = reconstruct_from_probabilities(povm4_probabilities(rho, povm), povm)
    assert np.max(np.abs(back - rho)) < 1e-10


def test_reconstruct_examples():
    povm = Povm4(1)
    r = reconstruct_from_probabilities(np.full(4, 0.25), povm)
    assert np.allclose(r, r.conj().T) and abs(np.trace(r) - 1) < 1e-9
    # a distribution no state produces reconstructs to a non-PSD matrix
    spike = reconstruct_from_probabilities(np.array([1.0, 0, 0, 0]), povm)
    assert abs(np.trace(spike) - 1) < 1e-9 and np.linalg.eigvalsh(spike).min() < 0
    for n in (1, 2, 3):
        p = Povm4(n)
        mixed = np.eye(2**n) / 2**n
        assert np.max(np.abs(reconstruct_from_probabilities(p.probabilities(mixed), p) - mixed)) < 1e-10


def test_energy_weights_examples():
    povm = Povm4(1)
    ident = Hamiltonian(1, (PauliString("I", 1.0),))
    rho = random_mixed_state(1, np.random.default_rng(0))
    assert povm.probabilities(rho) @ povm_energy_weights(ident, povm) == pytest.approx(1.0)
    assert povm.probabilities(R0) @ povm_energy_weights(Z1, povm) == pytest.approx(1.0, abs=1e-10)
    H = tfim_hamiltonian(2, 1.0)
    rho = thermal_state(H, 1.0)
    p2 = Povm4(2)
    assert p2.probabilities(rho) @ povm_energy_weights(H, p2) == pytest.approx(energy(rho, H), abs=1e-9)
    with pytest.raises(ValueError):
        povm_energy_weights(H, povm)


def test_sampling_examples():
    ds = sample_dataset(np.array([0.5, 0.5]), 10**6, 11, n_qubits=1, scheme="projective", bases=("Z",))
    assert abs(np.mean(ds.outcomes == 0) - 0.5) < 0.002
    ds = sample_dataset(np.array([1.0, 0.0]), 5, 0, n_qubits=1, scheme="projective", bases=("Z",))
    assert np.all(ds.outcomes == 0)
    with pytest.raises(ValueError):
        sample_dataset(np.array([1.0, 0.0]), 0, 0, n_qubits=1, scheme="projective", bases=("Z",))


def test_sampling_deterministic_and_jsonl_roundtrip(tmp_path):
    rho = thermal_state(tfim_hamiltonian(2, 1.0), 1.0)
    E = ProjectiveEnsemble(2)
    a = sample_projective(rho, E, 50, 3)
    b = sample_projective(rho, E, 50, 3)
    assert a.to_jsonl() == b.to_jsonl()
    assert a.to_jsonl() != sample_projective(rho, E, 50, 4).to_jsonl()
    a.write(tmp_path / "d.jsonl")
    c = Dataset.read(tmp_path / "d.jsonl")
    assert c.to_jsonl() == a.to_jsonl()
    assert a.size == 9 * 50 and a.outcomes.max() < 4


def test_sampling_chi_square():
    rho = random_mixed_state(2, np.random.default_rng(9))
    povm = Povm4(2)
    p = povm.probabilities(rho)
    shots = 10**5
    ds = sample_povm(rho, povm, shots, 1)
    counts = np.bincount(ds.outcomes[0], minlength=16)
    chi2 = np.sum((counts - shots * p) ** 2 / (shots * p))
    # 15 degrees of freedom; the 99.9% quantile is 37.7
    assert chi2 < 37.7


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(1, "projective", ("Z",), np.array([[0, 2]]))
    with pytest.raises(ValueError):
        Dataset(1, "other", ("Z",), np.array([[0]]))
    with pytest.raises(ValueError):
        Dataset.from_jsonl('{"n": 1, "scheme": "projective", "bases": ["Z"], "shots": 2}\n{"b": 0, "o": 1}\n')


def test_empirical_energy_examples():
    povm = Povm4(1)
    ds = sample_povm(R0, povm, 10**6, 0)
    assert abs(empirical_energy(ds, Z1) - 1.0) < 0.01
    w = povm_energy_weights(Z1, povm)
    for s in range(4):
        fixed = Dataset(1, "povm4", ("P4",), np.full((1, 7), s))
        assert empirical_energy(fixed, w) == pytest.approx(w[s])


def test_empirical_energy_projective():
    H = tfim_hamiltonian(2, 1.0)
    rho = thermal_state(H, 1.0)
    ds = sample_projective(rho, ProjectiveEnsemble(2), 20000, 2)
    assert abs(empirical_energy(ds, H) - energy(rho, H)) < 0.03
    zz_only = sample_projective(rho, ProjectiveEnsemble(2, ("ZZ",)), 10, 0)
    with pytest.raises(ValueError):
        empirical_energy(zz_only, H)


def test_kron_helper_consistency():
    a, b = np.eye(2), np.diag([1.0, -1.0])
    assert np.allclose(kron_all([a, b]), np.kron(a, b))
