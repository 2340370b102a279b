"""Experiment harness: scaling exponents, batch-size study, valley, bound and perturbation checks.

Every unit of work (target, dataset size, instance) draws its randomness from
``SeedSequence([root_seed, *task_key])``, so results do not depend on the
order or process in which tasks execute. Aggregation folds tasks in key order.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .measure import Povm4, ProjectiveEnsemble, sample_povm, sample_projective
from .ndo import NdoModel
from .povmnqs import PovmNqsModel
from .qcore import (
    Hamiltonian,
    MetricsRecord,
    PerturbationSpec,
    all_pauli_kl,
    classical_infidelity,
    depolarize,
    energy,
    ground_state,
    infidelity,
    kl_divergence,
    load_hamiltonian,
    pauli_kl_bound,
    perturb_pure,
    pure_density,
    random_mixed_state,
    random_orthogonal_direction,
    random_perturbation,
    random_psd_direction,
    tfim_hamiltonian,
    thermal_state,
    trace_distance,
)
from .train import TrainConfig, train

ERROR_FLOOR = 1e-12
SCHEMES = ("ndo", "povmnqs")
METRICS = ("kl", "energy_error", "infidelity", "infidelity_swapped", "classical_infidelity", "trace_distance")
RAW_COLUMNS = ("study", "scheme", "n", "beta_or_p", "dataset_size", "instance", *METRICS,
               "train_iterations", "wall_seconds")
FIT_COLUMNS = ("study", "scheme", "beta_or_p", "metric", "slope", "exponent", "r2", "n_points")
CV_COLUMNS = ("study", "scheme", "n", "beta_or_p", "batch_size", "cv", "instance", *METRICS,
              "train_iterations", "wall_seconds")


# ---------------------------------------------------------------- fitting

@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int

    @property
    def sample_complexity_exponent(self) -> float:
        return 1.0 / self.slope if self.slope != 0 else math.inf

    exponent = sample_complexity_exponent


def fit_loglog(x, y) -> LogLogFit:
    """OLS of ``log10 y`` on ``log10 x``; the exponent is ``1/slope``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)) or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs finite, strictly positive values")
    lx, ly = np.log10(x), np.log10(y)
    sxx = np.sum((lx - lx.mean()) ** 2)
    if sxx <= 1e-300 * max(1.0, lx.size):
        raise ValueError("degenerate x values")
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    syy = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if syy == 0 else float(max(0.0, 1.0 - np.sum(resid**2) / syy))
    return LogLogFit(slope, intercept, r2, int(x.size))


# ---------------------------------------------------------------- configuration

def _tuple(v, cast=float):
    if isinstance(v, (int, float, str)):
        v = [v]
    return tuple(cast(x) for x in v)


@dataclass(frozen=True)
class TargetSpec:
    """TFIM thermal states over a beta grid, or a file Hamiltonian's depolarized ground states."""

    model: str = "tfim"
    n: int = 2
    h: float = 1.0
    betas: tuple[float, ...] = (0.1, 10.0)
    hamiltonian: str | None = None
    depol: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "betas", _tuple(self.betas))
        object.__setattr__(self, "depol", _tuple(self.depol))
        if self.model not in ("tfim", "file"):
            raise ValueError(f"unknown target model {self.model!r}")
        if self.model == "tfim" and (self.n < 1 or not self.betas):
            raise ValueError("tfim targets need n >= 1 and a non-empty beta grid")
        if self.model == "file" and (not self.hamiltonian or not self.depol):
            raise ValueError("file targets need a hamiltonian path and a non-empty depol grid")
        if any(b < 0 for b in self.betas) or any(not 0 <= p <= 1 for p in self.depol):
            raise ValueError("beta must be >= 0 and p in [0, 1]")

    def hamiltonian_op(self) -> Hamiltonian:
        if self.model == "tfim":
            return tfim_hamiltonian(self.n, self.h)
        return load_hamiltonian(Path(self.hamiltonian).read_text(encoding="utf-8"))

    @property
    def grid(self) -> tuple[float, ...]:
        return self.betas if self.model == "tfim" else self.depol

    def states(self) -> list[tuple[float, np.ndarray]]:
        H = self.hamiltonian_op()
        if self.model == "tfim":
            return [(b, thermal_state(H, b)) for b in self.betas]
        psi = ground_state(H)
        return [(p, depolarize(psi, p)) for p in self.depol]

    def n_qubits(self) -> int:
        return self.n if self.model == "tfim" else self.hamiltonian_op().n_qubits


@dataclass(frozen=True)
class CvParams:
    beta: float = 1e3
    shots_per_basis: int = 1000
    batch_sizes: tuple[int, ...] = (10, 100, 1000)

    def __post_init__(self):
        object.__setattr__(self, "batch_sizes", _tuple(self.batch_sizes, int))


@dataclass(frozen=True)
class ValleyParams:
    n: int = 3
    h: float = 1.0
    betas: tuple[float, ...] = tuple(float(b) for b in np.logspace(-1, 1, 7))
    log10_delta_min: float = -3.5
    log10_delta_max: float = -2.5
    n_deltas: int = 11
    instances: int = 100

    def __post_init__(self):
        object.__setattr__(self, "betas", _tuple(self.betas))
        if self.log10_delta_min > self.log10_delta_max:
            raise ValueError("empty delta range")
        if self.n_deltas < 3 or self.instances < 1:
            raise ValueError("need at least 3 deltas and one instance")


@dataclass(frozen=True)
class BoundParams:
    n_values: tuple[int, ...] = (1, 2, 3)
    pairs: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "n_values", _tuple(self.n_values, int))
        if any(not 1 <= n <= 3 for n in self.n_values):
            raise ValueError("the bound check enumerates 4**n Pauli strings; n must lie in [1, 3]")


@dataclass(frozen=True)
class OrdersParams:
    n: int = 2
    h: float = 1.0
    thermal_beta: float = 1.0
    log10_deltas: tuple[float, ...] = tuple(float(x) for x in np.linspace(-5, -3, 9))
    instances: int = 10

    def __post_init__(self):
        object.__setattr__(self, "log10_deltas", _tuple(self.log10_deltas))


@dataclass(frozen=True)
class StudyConfig:
    study: str = "scaling"
    seed: int = 0
    schemes: tuple[str, ...] = SCHEMES
    sizes: tuple[int, ...] = (100, 316, 1000, 3162, 10000)
    instances: int = 20
    target: TargetSpec = field(default_factory=TargetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    cv: CvParams = field(default_factory=CvParams)
    valley: ValleyParams = field(default_factory=ValleyParams)
    bound: BoundParams = field(default_factory=BoundParams)
    orders: OrdersParams = field(default_factory=OrdersParams)
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "schemes", _tuple(self.schemes, str))
        object.__setattr__(self, "sizes", _tuple(self.sizes, lambda s: int(round(float(s)))))
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; choose from {sorted(STUDIES)}")
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("dataset-size grid must be non-empty and positive")
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        bad = set(self.schemes) - set(SCHEMES)
        if bad or not self.schemes:
            raise ValueError(f"unknown schemes {sorted(bad)}")

    @classmethod
    def from_mapping(cls, data: dict) -> "StudyConfig":
        sections = {"target": TargetSpec, "cv": CvParams, "valley": ValleyParams,
                    "bound": BoundParams, "orders": OrdersParams}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown study config keys: {sorted(unknown)}")
        kw = {}
        for k, v in data.items():
            if k in sections:
                sub_known = {f.name for f in fields(sections[k])}
                extra = set(v) - sub_known
                if extra:
                    raise ValueError(f"unknown keys in [{k}]: {sorted(extra)}")
                kw[k] = sections[k](**v)
            elif k == "train":
                kw[k] = TrainConfig.from_mapping(v)
            else:
                kw[k] = v
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- models and metrics

def make_model(scheme: str, n: int):
    if scheme == "ndo":
        return NdoModel(n, ProjectiveEnsemble(n))
    if scheme == "povmnqs":
        return PovmNqsModel(n)
    raise ValueError(f"unknown scheme {scheme!r}")


def shots_for(scheme: str, n: int, total: int) -> tuple[int, int]:
    """Per-basis shot count and the realized total for a requested total budget."""
    n_bases = 3**n if scheme == "ndo" else 1
    per = max(1, int(round(total / n_bases)))
    return per, per * n_bases


def sample_for(scheme: str, rho: np.ndarray, shots_per_basis: int, seed: int):
    n = int(round(math.log2(rho.shape[0])))
    if scheme == "ndo":
        return sample_projective(rho, ProjectiveEnsemble(n), shots_per_basis, seed)
    return sample_povm(rho, Povm4(n), shots_per_basis, seed)


def projective_metrics(rho: np.ndarray, rho_model: np.ndarray, H: Hamiltonian,
                       ensemble: ProjectiveEnsemble | None = None) -> MetricsRecord:
    """Metrics for a physical reconstruction measured in the Pauli projective bases."""
    n = int(round(math.log2(rho.shape[0])))
    ensemble = ensemble or ProjectiveEnsemble(n)
    p = ensemble.probabilities(rho)
    q = ensemble.probabilities(rho_model)
    kl = float(np.mean([kl_divergence(a, b) for a, b in zip(p, q)]))
    return MetricsRecord(
        kl=kl,
        energy_error=abs(energy(rho_model, H) - energy(rho, H)),
        infidelity=abs(infidelity(rho, rho_model)),
        infidelity_swapped=abs(infidelity(rho_model, rho)),
        classical_infidelity=classical_infidelity(p, q),
        trace_distance=trace_distance(rho, rho_model),
    )


def evaluate_model(model, theta: np.ndarray, rho: np.ndarray, H: Hamiltonian) -> MetricsRecord:
    """Exact metrics of a trained model against the target state.

    NDO: the density matrix is materialized. POVM-NQS: the full outcome
    distribution is inverted through the overlap matrix; the result can be
    non-positive, so infidelities are reported as absolute values.
    """
    if model.kind == "ndo":
        return projective_metrics(rho, model.density_matrix(theta), H, model.ensemble)
    povm = Povm4(model.n)
    p = povm.probabilities(rho)
    q = model.full_distribution(theta)
    q = q / q.sum()
    rho_model = povm.reconstruct(q)
    e_model = float(np.real(np.trace(H.dense() @ rho_model)))
    return MetricsRecord(
        kl=kl_divergence(p, q),
        energy_error=abs(e_model - energy(rho, H)),
        infidelity=abs(infidelity(rho, rho_model)),
        infidelity_swapped=abs(infidelity(rho_model, rho)),
        classical_infidelity=classical_infidelity([p], [q]),
        trace_distance=trace_distance(rho, rho_model),
    )


def child_seeds(root: int, key: tuple[int, ...], count: int = 3) -> list[int]:
    ss = np.random.SeedSequence([int(root), *[int(k) for k in key]])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint32)]


# ---------------------------------------------------------------- task execution

@dataclass(frozen=True)
class Task:
    """One training run; ``key`` fixes its seeds and its position in the fold."""

    key: tuple[int, ...]
    study: str
    scheme: str
    label: float
    rho: np.ndarray
    hamiltonian: Hamiltonian
    shots_per_basis: int
    dataset_size: int
    instance: int
    train: TrainConfig
    root_seed: int
    cv_key: tuple[int, ...] | None = None


def run_task(task: Task) -> dict:
    """Sample, train and evaluate one instance; failures come back as records, not exceptions."""
    n = int(round(math.log2(task.rho.shape[0])))
    data_seed, init_seed, train_seed = child_seeds(task.root_seed, task.cv_key or task.key)
    rec = {"key": task.key, "scheme": task.scheme, "label": task.label, "n": n,
           "dataset_size": task.dataset_size, "instance": task.instance,
           "batch_size": task.train.batch_size, "cv": task.train.cv}
    t0 = time.perf_counter()
    try:
        model = make_model(task.scheme, n)
        data = sample_for(task.scheme, task.rho, task.shots_per_basis, data_seed)
        theta0 = model.init_params(np.random.default_rng(init_seed))
        cfg = replace(task.train, seed=train_seed, batch_size=min(task.train.batch_size, data.size))
        res = train(model, theta0, data, cfg)
        metrics = evaluate_model(model, res.theta, task.rho, task.hamiltonian)
        if not all(math.isfinite(v) for v in metrics.as_dict().values()):
            raise FloatingPointError("non-finite metric")
        rec.update(metrics.as_dict(), train_iterations=res.iterations, error=None)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec.update({m: math.nan for m in METRICS}, train_iterations=0, error=f"{type(exc).__name__}: {exc}")
    rec["wall_seconds"] = time.perf_counter() - t0
    return rec


def execute(tasks: list, fn, threads: int = 1) -> list:
    """Run ``fn`` over ``tasks``; the result list is in task order whatever the thread count."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (8 * threads))))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------- scaling study

@dataclass
class StudyResult:
    study: str
    raw: list
    fits: list
    summary: list = field(default_factory=list)
    report: dict = field(default_factory=dict)
    timing: bool = False

    def raw_rows(self) -> list[dict]:
        rows = []
        for r in self.raw:
            row = dict(r)
            if not self.timing and "wall_seconds" in row:
                row["wall_seconds"] = 0.0
            rows.append(row)
        return rows

    def raw_csv(self) -> str:
        columns = CV_COLUMNS if self.study == "cv" else RAW_COLUMNS
        return _csv(columns, self.raw_rows())

    def fit_csv(self) -> str:
        return _csv(FIT_COLUMNS, self.fits)

    def summary_csv(self) -> str:
        if not self.summary:
            return ""
        return _csv(tuple(self.summary[0]), self.summary)

    def fit(self, scheme: str, label: float, metric: str) -> dict:
        for f in self.fits:
            if f["scheme"] == scheme and f["beta_or_p"] == label and f["metric"] == metric:
                return f
        raise KeyError((scheme, label, metric))


def plan_scaling(config: StudyConfig) -> list[dict]:
    """Every (scheme, target, size, instance) unit with its shot budget, without running anything."""
    n = config.target.n_qubits()
    out = []
    for si, scheme in enumerate(config.schemes):
        for ti, label in enumerate(config.target.grid):
            for zi, size in enumerate(config.sizes):
                per, total = shots_for(scheme, n, size)
                for inst in range(config.instances):
                    out.append({"key": (si, ti, zi, inst), "scheme": scheme, "beta_or_p": label,
                                "requested_size": size, "shots_per_basis": per,
                                "dataset_size": total, "instance": inst})
    return out


def _aggregate(records: list, group_keys: tuple[str, ...]) -> tuple[list, dict]:
    """Linear-space means over successful instances, floored at ``ERROR_FLOOR``."""
    groups: dict = {}
    for r in records:
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r)
    summary = []
    floored = 0
    for gk, recs in groups.items():
        ok = [r for r in recs if r["error"] is None]
        row = dict(zip(group_keys, gk))
        row.update(instances=len(recs), failures=len(recs) - len(ok))
        for m in METRICS:
            vals = np.array([r[m] for r in ok], dtype=float)
            mean = float(vals.mean()) if vals.size else math.nan
            if vals.size and mean < ERROR_FLOOR:
                floored += 1
                mean = ERROR_FLOOR
            row[m] = mean
        summary.append(row)
    return summary, {"floored_points": floored}


def run_scaling_study(config: StudyConfig, threads: int = 1, progress=None) -> StudyResult:
    """Train on growing datasets, average exact error metrics, fit each metric against size."""
    H = config.target.hamiltonian_op()
    states = config.target.states()
    tasks = []
    for unit in plan_scaling(config):
        si, ti, zi, inst = unit["key"]
        label, rho = states[ti]
        tasks.append(Task(unit["key"], "scaling", unit["scheme"], label, rho, H,
                          unit["shots_per_basis"], unit["dataset_size"], inst,
                          config.train, config.seed))
    records = execute(tasks, run_task, threads)
    if progress:
        progress(len(records))
    raw = [{"study": "scaling", "beta_or_p": r["label"], **r} for r in records]
    summary, info = _aggregate(raw, ("scheme", "beta_or_p", "dataset_size"))
    fits = []
    for scheme in config.schemes:
        for label in config.target.grid:
            pts = [s for s in summary if s["scheme"] == scheme and s["beta_or_p"] == label]
            for m in METRICS:
                usable = [s for s in pts if math.isfinite(s[m])]
                if len(usable) < 3:
                    continue
                fit = fit_loglog([s["dataset_size"] for s in usable], [s[m] for s in usable])
                fits.append({"study": "scaling", "scheme": scheme, "beta_or_p": label, "metric": m,
                             "slope": fit.slope, "exponent": fit.exponent, "r2": fit.r_squared,
                             "n_points": fit.n_points})
    failures = sum(r["error"] is not None for r in raw)
    report = {"units": len(raw), "failures": failures, **info}
    return StudyResult("scaling", raw, fits, summary, report, config.timing)


# ---------------------------------------------------------------- batch-size (CV) study

def plan_cv(config: StudyConfig) -> list[dict]:
    n = config.target.n
    per = config.cv.shots_per_basis
    out = []
    for bi, B in enumerate(config.cv.batch_sizes):
        for cv in (False, True):
            for inst in range(config.instances):
                out.append({"key": (bi, int(cv), inst), "scheme": "ndo", "batch_size": B, "cv": cv,
                            "shots_per_basis": per, "dataset_size": per * 3**n, "instance": inst})
    return out


def run_cv_study(config: StudyConfig, threads: int = 1) -> StudyResult:
    """Fixed data per instance, NDO trained with and without control variates across batch sizes.

    The dataset, initialization and batch stream of an instance are shared by
    every (B, CV) cell, so the cells differ only in the estimator.
    """
    n = config.target.n
    H = tfim_hamiltonian(n, config.target.h)
    rho = thermal_state(H, config.cv.beta)
    tasks = []
    for unit in plan_cv(config):
        cfg = replace(config.train, batch_size=unit["batch_size"], cv=unit["cv"])
        tasks.append(Task(unit["key"], "cv", "ndo", config.cv.beta, rho, H, unit["shots_per_basis"],
                          unit["dataset_size"], unit["instance"], cfg, config.seed,
                          cv_key=(unit["instance"],)))
    records = execute(tasks, run_task, threads)
    raw = [{"study": "cv", "beta_or_p": r["label"], **r} for r in records]
    summary, info = _aggregate(raw, ("batch_size", "cv"))
    fits = []
    report = {"units": len(raw), "failures": sum(r["error"] is not None for r in raw), **info}
    for cv in (False, True):
        rows = sorted((s for s in summary if s["cv"] == cv), key=lambda s: s["batch_size"])
        for m in ("kl", "energy_error", "infidelity"):
            vals = [s[m] for s in rows]
            if len(rows) >= 3 and all(math.isfinite(v) for v in vals):
                fit = fit_loglog([s["batch_size"] for s in rows], vals)
                fits.append({"study": "cv", "scheme": "ndo-cv" if cv else "ndo", "beta_or_p": config.cv.beta,
                             "metric": m, "slope": fit.slope, "exponent": fit.exponent,
                             "r2": fit.r_squared, "n_points": fit.n_points})
        kls = [s["kl"] for s in rows]
        report[f"kl_ratio_{'cv' if cv else 'plain'}"] = max(kls) / min(kls) if kls else math.nan
    return StudyResult("cv", raw, fits, summary, report, config.timing)


# ---------------------------------------------------------------- valley study

def valley_deltas(params: ValleyParams) -> np.ndarray:
    return np.logspace(params.log10_delta_min, params.log10_delta_max, params.n_deltas)


def _valley_point(args) -> dict:
    bi, beta, params, root = args
    H = tfim_hamiltonian(params.n, params.h)
    rho = thermal_state(H, beta)
    ens = ProjectiveEnsemble(params.n)
    p = ens.probabilities(rho)
    deltas = valley_deltas(params)
    alphas, r2s, curves = [], [], []
    for i in range(params.instances):
        seed = child_seeds(root, (bi, i), 1)[0]
        kls, infs = [], []
        for delta in deltas:
            # same seed for every delta: one random direction per instance
            sigma = random_perturbation(rho, PerturbationSpec(float(delta), seed))
            q = ens.probabilities(sigma)
            kls.append(float(np.mean([kl_divergence(a, b) for a, b in zip(p, q)])))
            infs.append(infidelity(rho, sigma))
        fit = fit_loglog(kls, infs)
        alphas.append(fit.slope)
        r2s.append(fit.r_squared)
        curves.append((kls, infs))
    alphas = np.array(alphas)
    exps = -1.0 / alphas
    return {"beta": beta, "alpha": float(alphas.mean()), "alpha_std": float(alphas.std()),
            "r2": float(min(r2s)), "exponent": float(-1.0 / alphas.mean()),
            "exponent_std": float(exps.std()), "n_points": len(deltas), "curves": curves}


def run_valley_study(config: StudyConfig, threads: int = 1) -> StudyResult:
    """Fit ``I ~ KL**alpha`` for random perturbations of each thermal target; report ``-1/alpha``.

    Each instance fixes one random direction and sweeps the delta grid; ``alpha``
    is the instance mean, ``r2`` the worst instance fit.
    """
    params = config.valley
    args = [(bi, b, params, config.seed) for bi, b in enumerate(params.betas)]
    points = execute(args, _valley_point, threads)
    summary = [{k: p[k] for k in ("beta", "alpha", "alpha_std", "r2", "exponent", "exponent_std", "n_points")}
               for p in points]
    raw = []
    for p in points:
        for i, (kls, infs) in enumerate(p["curves"]):
            for k, inf in zip(kls, infs):
                raw.append({"study": "valley", "scheme": "perturbation", "n": params.n,
                            "beta_or_p": p["beta"], "dataset_size": 0, "instance": i, "kl": k,
                            "energy_error": math.nan, "infidelity": inf, "infidelity_swapped": math.nan,
                            "classical_infidelity": math.nan, "trace_distance": math.nan,
                            "train_iterations": 0, "wall_seconds": 0.0})
    fits = [{"study": "valley", "scheme": "perturbation", "beta_or_p": s["beta"], "metric": "infidelity_vs_kl",
             "slope": s["alpha"], "exponent": s["exponent"], "r2": s["r2"], "n_points": s["n_points"]}
            for s in summary]
    ex = [s["exponent"] for s in summary]
    report = {"min_exponent": min(ex), "endpoint_exponents": [ex[0], ex[-1]],
              "valley": bool(min(ex) < ex[0] and min(ex) < ex[-1]),
              "min_r2": min(s["r2"] for s in summary)}
    return StudyResult("valley", raw, fits, summary, report, config.timing)


# ---------------------------------------------------------------- bound check

def _bound_chunk(args) -> dict:
    n, pairs, root = args
    rng = np.random.default_rng(np.random.SeedSequence([int(root), 0xB0, n]))
    violations = skipped = 0
    max_ratio = 0.0
    for _ in range(pairs):
        rho = random_mixed_state(n, rng)
        sigma = random_mixed_state(n, rng)
        kl = all_pauli_kl(rho, sigma)
        if math.isinf(kl):
            skipped += 1
            continue
        td = trace_distance(rho, sigma)
        bound = pauli_kl_bound(n, kl)
        if td > bound * (1 + 1e-12) + 1e-15:
            violations += 1
        if bound > 0:
            max_ratio = max(max_ratio, td / bound)
    return {"n": n, "pairs": pairs, "violations": violations, "skipped": skipped, "max_ratio": max_ratio}


def run_bound_check(n_values=(1, 2, 3), pairs: int = 1000, seed: int = 0, threads: int = 1) -> dict:
    """Count pairs violating ``TD <= 2**n / sqrt(2) * sqrt(KL_all_pauli)``."""
    rows = execute([(int(n), int(pairs), seed) for n in n_values], _bound_chunk, threads)
    return {"rows": rows, "violations": sum(r["violations"] for r in rows),
            "skipped": sum(r["skipped"] for r in rows),
            "max_ratio": max(r["max_ratio"] for r in rows)}


def run_bound_study(config: StudyConfig, threads: int = 1) -> StudyResult:
    rep = run_bound_check(config.bound.n_values, config.bound.pairs, config.seed, threads)
    return StudyResult("bound", [], [], rep["rows"], rep, config.timing)


# ---------------------------------------------------------------- perturbation orders

def run_perturbation_orders(config: StudyConfig, threads: int = 1) -> StudyResult:
    """Energy error and KL against the perturbation size for a pure and a thermal target.

    The pure ground state is perturbed as a state vector, ``psi + delta v`` with
    ``v`` orthogonal to ``psi``, which keeps it pure. The thermal state gets the
    additive ``rho + delta Delta`` construction. Each instance keeps its
    direction fixed across the delta grid; curves are averaged linearly.
    """
    params = config.orders
    H = tfim_hamiltonian(params.n, params.h)
    ens = ProjectiveEnsemble(params.n)
    psi = ground_state(H)
    targets = {"pure": pure_density(psi), "thermal": thermal_state(H, params.thermal_beta)}
    deltas = 10.0 ** np.asarray(params.log10_deltas)
    raw, summary, fits = [], [], []
    for ti, (name, rho) in enumerate(targets.items()):
        p = ens.probabilities(rho)
        e0 = energy(rho, H)
        curves = {"energy_error": np.zeros(deltas.size), "kl": np.zeros(deltas.size)}
        for inst in range(params.instances):
            rng = np.random.default_rng(child_seeds(config.seed, (ti, inst), 1)[0])
            if name == "pure":
                v = random_orthogonal_direction(psi, rng)
                perturbed = [perturb_pure(psi, d, v) for d in deltas]
            else:
                D = random_psd_direction(rho.shape[0], rng)
                perturbed = [(rho + d * D) / (1 + d) for d in deltas]
            for k, (d, sigma) in enumerate(zip(deltas, perturbed)):
                q = ens.probabilities(sigma)
                kl = float(np.mean([kl_divergence(a, b) for a, b in zip(p, q)]))
                err = abs(energy(sigma, H) - e0)
                curves["kl"][k] += kl / params.instances
                curves["energy_error"][k] += err / params.instances
                raw.append({"study": "orders", "scheme": name, "n": params.n, "beta_or_p": float(d),
                            "dataset_size": 0, "instance": inst, "kl": kl, "energy_error": err,
                            "infidelity": math.nan, "infidelity_swapped": math.nan,
                            "classical_infidelity": math.nan, "trace_distance": math.nan,
                            "train_iterations": 0, "wall_seconds": 0.0})
        for m, ys in curves.items():
            fit = fit_loglog(deltas, ys)
            fits.append({"study": "orders", "scheme": name, "beta_or_p": math.inf if name == "pure"
                         else params.thermal_beta, "metric": m, "slope": fit.slope,
                         "exponent": fit.exponent, "r2": fit.r_squared, "n_points": fit.n_points})
        for d, e, k in zip(deltas, curves["energy_error"], curves["kl"]):
            summary.append({"target": name, "delta": float(d), "energy_error": float(e), "kl": float(k)})
    report = {f"{f['scheme']}_{f['metric']}_slope": f["slope"] for f in fits}
    return StudyResult("orders", raw, fits, summary, report, config.timing)


# ---------------------------------------------------------------- dispatch

STUDIES = {
    "scaling": run_scaling_study,
    "cv": run_cv_study,
    "valley": run_valley_study,
    "bound": run_bound_study,
    "orders": run_perturbation_orders,
}


def plan(config: StudyConfig) -> dict:
    """Dry-run description of a study: its work units and total shot budget."""
    if config.study == "scaling":
        units = plan_scaling(config)
    elif config.study == "cv":
        units = plan_cv(config)
    elif config.study == "valley":
        units = [{"beta": b, "instances": config.valley.instances} for b in config.valley.betas]
    elif config.study == "bound":
        units = [{"n": n, "pairs": config.bound.pairs} for n in config.bound.n_values]
    else:
        units = [{"target": t, "deltas": len(config.orders.log10_deltas)} for t in ("pure", "thermal")]
    for u in units:
        if "key" in u:
            u["key"] = list(u["key"])
    shots = sum(u.get("dataset_size", 0) for u in units)
    return {"study": config.study, "units": units, "n_units": len(units), "total_shots": shots}


def run_study(config: StudyConfig, threads: int = 1) -> StudyResult:
    return STUDIES[config.study](config, threads=threads)
