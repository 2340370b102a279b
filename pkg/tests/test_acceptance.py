"""Acceptance criteria, each at its stated tolerance; every test records one PASS/FAIL line."""

import math
from pathlib import Path

import numpy as np
import pytest

from mixtomo.cli import read_config
from mixtomo.lab import (
    StudyConfig,
    child_seeds,
    fit_loglog,
    plan,
    run_bound_check,
    run_cv_study,
    run_perturbation_orders,
    run_scaling_study,
    run_valley_study,
)
from mixtomo.measure import Povm4, ProjectiveEnsemble, empirical_energy, sample_povm, sample_projective
from mixtomo.ndo import NdoModel
from mixtomo.povmnqs import PovmNqsModel
from mixtomo.qcore import energy, random_mixed_state, tfim_hamiltonian, thermal_state
from oracles import fd_relative_error

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_criterion_1_cv_flatness(acceptance):
    res = run_cv_study(StudyConfig(study="cv", seed=0, instances=20))
    plain = res.fit("ndo", 1e3, "kl")["slope"]
    ratio = res.report["kl_ratio_cv"]
    rows = {(s["batch_size"], s["cv"]): s["kl"] for s in res.summary}
    sizes = sorted({b for b, _ in rows})
    # paired excess of plain over CV training, shown for diagnosis only
    excess = [rows[(b, False)] - rows[(b, True)] for b in sizes]
    excess_slope = fit_loglog(sizes, excess).slope if min(excess) > 0 else math.nan
    ok_plain = abs(plain + 0.5) <= 0.15
    ok_cv = ratio <= 2
    detail = (f"no-CV KL slope {plain:.3f} (need -0.5 +/- 0.15), CV max/min KL {ratio:.4f} (need <= 2); "
              f"KL by B without CV {[f'{rows[(b, False)]:.3e}' for b in sizes]}, "
              f"with CV {[f'{rows[(b, True)]:.3e}' for b in sizes]}, "
              f"excess-KL slope {excess_slope:.3f}, failures {res.report['failures']}")
    assert acceptance(1, "cv-flatness", ok_plain and ok_cv, detail)


@pytest.mark.slow
def test_criterion_2_scaling_exponents(acceptance):
    res = run_scaling_study(StudyConfig(study="scaling", seed=0, instances=20))
    checks, parts = [], []
    for scheme in ("ndo", "povmnqs"):
        for beta in (0.1, 10.0):
            for metric in ("kl", "classical_infidelity"):
                e = res.fit(scheme, beta, metric)["exponent"]
                checks.append(abs(e + 1) <= 0.3)
                parts.append(f"{scheme} b={beta:g} {metric} {e:.3f}")
    for beta in (0.1, 10.0):
        e = res.fit("povmnqs", beta, "energy_error")["exponent"]
        checks.append(abs(e + 2) <= 0.5)
        parts.append(f"povmnqs b={beta:g} energy {e:.3f}")
    hot = res.fit("ndo", 0.1, "energy_error")["exponent"]
    cold = res.fit("ndo", 10.0, "energy_error")["exponent"]
    checks += [abs(cold + 1) <= 0.4, -2.6 <= hot <= -1.4, hot < cold]
    parts += [f"ndo b=10 energy {cold:.3f}", f"ndo b=0.1 energy {hot:.3f}"]
    parts.append(f"failures {res.report['failures']}")
    assert acceptance(2, "scaling-exponents", all(checks), ", ".join(parts))


def test_criterion_3_bound(acceptance):
    rep = run_bound_check((1, 2, 3), 1000, seed=0)
    ok = rep["violations"] == 0
    assert acceptance(3, "trace-distance-bound", ok,
                      f"{rep['violations']} violations in 3 x 1000 pairs, {rep['skipped']} skipped, "
                      f"max TD/bound {rep['max_ratio']:.4f}")


def test_criterion_4_roundtrip(acceptance):
    rng = np.random.default_rng(0)
    worst = 0.0
    for n in (1, 2, 3):
        povm = Povm4(n)
        for _ in range(100):
            rho = random_mixed_state(n, rng)
            worst = max(worst, float(np.max(np.abs(povm.reconstruct(povm.probabilities(rho)) - rho))))
    assert acceptance(4, "inverse-roundtrip", worst < 1e-10, f"max entrywise error {worst:.2e} over 300 states")


def test_criterion_5_gradients(acceptance):
    rng = np.random.default_rng(0)
    worst, cases = {}, {}
    for kind, cls, scale in (("ndo", NdoModel, 0.3), ("povmnqs", PovmNqsModel, 0.5)):
        models = {n: cls(n) for n in (1, 2, 3)}
        worst[kind] = 0.0
        cases[kind] = 0
        for i in range(200):
            m = models[1 + i % 3]
            theta = scale * rng.standard_normal(m.n_params)
            pair = int(rng.integers(m.n_pairs))
            worst[kind] = max(worst[kind], fd_relative_error(m, theta, pair))
            cases[kind] += 1
    ok = all(w < 1e-5 for w in worst.values())
    detail = ", ".join(f"{k}: {cases[k]} cases, worst rel err {worst[k]:.2e}" for k in worst)
    assert acceptance(5, "gradient-finite-differences", ok, detail)


def test_criterion_6_orders(acceptance):
    rep = run_perturbation_orders(StudyConfig(study="orders", seed=0)).report
    ok = (abs(rep["pure_energy_error_slope"] - 2) <= 0.1 and abs(rep["thermal_energy_error_slope"] - 1) <= 0.1
          and abs(rep["pure_kl_slope"] - 2) <= 0.15 and abs(rep["thermal_kl_slope"] - 2) <= 0.15)
    detail = ", ".join(f"{k} {v:.4f}" for k, v in sorted(rep.items()))
    assert acceptance(6, "perturbative-orders", ok, detail)


def test_criterion_7_valley(acceptance):
    res = run_valley_study(StudyConfig(study="valley", seed=0))
    ex = [s["exponent"] for s in res.summary]
    r2 = [s["r2"] for s in res.summary]
    ends = (ex[0], ex[-1])
    ok = (len(ex) == 7 and min(r2) > 0.99 and min(ex) < ends[0] and min(ex) < ends[1]
          and all(-1.4 <= e <= -0.7 for e in ends))
    detail = (f"exponents {[round(e, 3) for e in ex]}, min r2 {min(r2):.5f}, "
              f"endpoints {ends[0]:.3f} / {ends[1]:.3f}")
    assert acceptance(7, "valley", ok, detail)


def test_criterion_8_energy_estimator(acceptance):
    H = tfim_hamiltonian(2, 1.0)
    rho = thermal_state(H, 1.0)
    e0 = energy(rho, H)
    shots = (100, 1000, 10000)
    slopes = {}
    for scheme in ("povm4", "projective"):
        rms = []
        for si, total in enumerate(shots):
            errs = []
            for seed in range(50):
                s = child_seeds(0, (si, seed), 1)[0]
                if scheme == "povm4":
                    ds = sample_povm(rho, Povm4(2), total, s)
                else:
                    ds = sample_projective(rho, ProjectiveEnsemble(2), max(1, round(total / 9)), s)
                errs.append(empirical_energy(ds, H) - e0)
            rms.append(float(np.sqrt(np.mean(np.square(errs)))))
        slopes[scheme] = fit_loglog(shots, rms).slope
    ok = all(abs(s + 0.5) <= 0.1 for s in slopes.values())
    assert acceptance(8, "energy-estimator", ok, ", ".join(f"{k} slope {v:.3f}" for k, v in slopes.items()))


def test_criterion_9_full_configuration(acceptance):
    cfg = StudyConfig.from_mapping(read_config(str(CONFIGS / "full_scaling.toml")))
    info = plan(cfg)
    betas = cfg.target.betas
    units = info["units"]
    ndo_bases = {u["dataset_size"] // u["shots_per_basis"] for u in units if u["scheme"] == "ndo"}
    ok = (cfg.target.n == 3 and cfg.instances == 100 and ndo_bases == {27}
          and min(betas) == 0.1 and max(betas) == 10.0
          and info["n_units"] == len(cfg.schemes) * len(betas) * len(cfg.sizes) * 100)
    detail = (f"n={cfg.target.n}, instances={cfg.instances}, bases per NDO dataset {sorted(ndo_bases)}, "
              f"betas {list(betas)}, {info['n_units']} units, {info['total_shots']} shots planned")
    assert acceptance(9, "full-configuration", ok, detail)
