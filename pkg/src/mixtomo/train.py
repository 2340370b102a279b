"""Mini-batch KL training with Adam and the control-variate (SVRG) estimator.

Every model exposes ``log_probs_and_grads(theta)`` over its full table of
(basis, outcome) pairs. A dataset record is one entry of that table, so a
batch gradient is the batch histogram over pairs contracted with the
per-pair gradient table; this is the same sum as the per-sample one.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels
from .measure import Dataset

LOSS_TOL = 1e-12


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 100
    max_iter: int = 100_000
    cv_period: int = 50
    cv: bool = True
    patience: int = 2000
    eval_every: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.cv_period < 1 or self.eval_every < 1:
            raise ValueError("learning rate, batch size, CV period and eval interval must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")

    @classmethod
    def from_mapping(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        kw = dict(data)
        for k in ("batch_size", "max_iter", "cv_period", "patience", "eval_every", "seed"):
            if k in kw:
                kw[k] = int(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    anchor_theta: np.ndarray | None = None
    anchor_pair_grads: np.ndarray | None = None
    anchor_full_grad: np.ndarray | None = None
    best_loss: float = math.inf
    best_iter: int = 0
    best_theta: np.ndarray | None = None
    anchor_refreshes: int = 0
    full_grad_evals: int = 0
    clip_events: int = 0
    nonfinite_events: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, theta: np.ndarray) -> "TrainState":
        theta = np.array(theta, dtype=float)
        return cls(theta=theta, m=np.zeros_like(theta), v=np.zeros_like(theta))


def _check_compatible(model, dataset: Dataset) -> None:
    if model.scheme != dataset.scheme:
        raise ValueError(f"model expects {model.scheme} data, dataset is {dataset.scheme}")
    if model.n != dataset.n_qubits:
        raise ValueError("model and dataset act on different qubit counts")
    if dataset.n_bases * dataset.n_outcomes != model.n_pairs:
        raise ValueError("dataset bases do not match the model's measurement table")
    if model.scheme == "projective" and tuple(model.ensemble.bases) != tuple(dataset.bases):
        raise ValueError("dataset basis labels differ from the model ensemble")


def empirical_weights(dataset: Dataset, n_pairs: int) -> np.ndarray:
    return np.bincount(dataset.pair_index, minlength=n_pairs) / dataset.size


def batch_weights(dataset: Dataset, batch: np.ndarray, n_pairs: int) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    if batch.min() < 0 or batch.max() >= dataset.size:
        raise IndexError("batch index outside the dataset")
    return np.bincount(dataset.pair_index[batch], minlength=n_pairs) / batch.size


def dataset_loss(theta: np.ndarray, model, dataset: Dataset) -> float:
    """Average negative log-likelihood over the whole dataset."""
    _check_compatible(model, dataset)
    with np.errstate(divide="ignore"):
        log_q = np.maximum(model.log_probs(theta).reshape(-1), math.log(1e-300))
    w = empirical_weights(dataset, model.n_pairs)
    loss = float(-(w @ log_q))
    assert loss >= -1e-12
    return loss


def full_gradient(theta: np.ndarray, model, dataset: Dataset) -> np.ndarray:
    _check_compatible(model, dataset)
    _, grads, _ = model.log_probs_and_grads(theta)
    return -(empirical_weights(dataset, model.n_pairs) @ grads)


def minibatch_gradient(theta: np.ndarray, model, dataset: Dataset, batch: np.ndarray) -> np.ndarray:
    """Mean of ``-grad log q`` over the records indexed by ``batch``."""
    _check_compatible(model, dataset)
    _, grads, _ = model.log_probs_and_grads(theta)
    return -(batch_weights(dataset, batch, model.n_pairs) @ grads)


def cv_gradient(state: TrainState, model, dataset: Dataset, batch: np.ndarray) -> np.ndarray:
    """``g_B(theta) - g_B(anchor) + grad L(anchor)`` at the current ``state.theta``."""
    if state.anchor_theta is None:
        raise ValueError("control-variate anchor has not been initialized")
    _check_compatible(model, dataset)
    w = batch_weights(dataset, batch, model.n_pairs)
    _, grads, _ = model.log_probs_and_grads(state.theta)
    anchor = state.anchor_pair_grads
    if anchor is None:
        anchor = model.log_probs_and_grads(state.anchor_theta)[1]
    return -(w @ grads) + (w @ anchor) + state.anchor_full_grad


def set_anchor(state: TrainState, model, dataset: Dataset, pair_grads: np.ndarray | None = None) -> None:
    if pair_grads is None:
        pair_grads = model.log_probs_and_grads(state.theta)[1]
    state.anchor_theta = state.theta.copy()
    state.anchor_pair_grads = pair_grads
    state.anchor_full_grad = -(empirical_weights(dataset, model.n_pairs) @ pair_grads)
    state.anchor_refreshes += 1
    state.full_grad_evals += 1


def adam_step(state: TrainState, grad: np.ndarray, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> bool:
    """In-place bias-corrected Adam update; returns False (no update) on a non-finite gradient."""
    if not np.all(np.isfinite(grad)):
        state.nonfinite_events += 1
        return False
    state.step += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1**state.step)
    v_hat = state.v / (1 - beta2**state.step)
    state.theta = state.theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return True


@dataclass
class TrainResult:
    theta: np.ndarray
    history: list
    state: TrainState
    iterations: int
    wall_seconds: float

    def history_csv(self, timing: bool = True) -> str:
        return history_to_csv(self.history, timing=timing)


HISTORY_COLUMNS = ("iteration", "loss", "wall_seconds", "anchor_refreshes", "clip_events")


def history_to_csv(history: list, timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for rec in history:
        w.writerow([
            rec["iteration"],
            repr(rec["loss"]),
            f"{rec['wall_seconds']:.6f}" if timing else "0",
            rec["anchor_refreshes"],
            rec["clip_events"],
        ])
    return buf.getvalue()


def train(model, theta0: np.ndarray, dataset: Dataset, config: TrainConfig,
          callback=None) -> TrainResult:
    """Run the optimizer and return the best-loss snapshot.

    Loss is evaluated on the full dataset every ``eval_every`` iterations
    (and at the end); training stops after ``max_iter`` steps or when the best
    loss has not improved by more than ``LOSS_TOL`` for ``patience`` iterations
    (``patience <= 0`` disables early stopping). Batches are drawn uniformly
    with replacement, except that ``batch_size == dataset.size`` uses the whole
    dataset every step.
    """
    _check_compatible(model, dataset)
    if config.batch_size > dataset.size:
        raise ValueError(f"batch size {config.batch_size} exceeds dataset size {dataset.size}")
    rng = np.random.default_rng(config.seed)
    state = TrainState.fresh(theta0)
    pairs = np.ascontiguousarray(dataset.pair_index)
    n_pairs = model.n_pairs
    weights = empirical_weights(dataset, n_pairs)
    B = config.batch_size
    # a batch as large as the dataset is the dataset itself: plain full-batch descent
    full_batch = B == dataset.size
    t0 = time.perf_counter()

    def evaluate(it, log_q):
        loss = float(-(weights @ log_q))
        if loss < state.best_loss - LOSS_TOL:
            state.best_loss = loss
            state.best_iter = it
            state.best_theta = state.theta.copy()
        state.history.append({
            "iteration": it,
            "loss": loss,
            "wall_seconds": time.perf_counter() - t0,
            "anchor_refreshes": state.anchor_refreshes,
            "clip_events": state.clip_events,
        })
        if callback is not None:
            callback(it, loss, state)

    it = 0
    stopped = False
    for it in range(config.max_iter):
        log_q, grads, clipped = model.log_probs_and_grads(state.theta)
        if clipped.any():
            state.clip_events += 1
        if it % config.eval_every == 0:
            evaluate(it, log_q)
            if config.patience > 0 and it - state.best_iter >= config.patience:
                stopped = True
                break
        if full_batch:
            w = weights
        else:
            batch = rng.integers(0, dataset.size, size=B)
            w = _kernels.batch_histogram(pairs, batch, n_pairs)
        if config.cv and it % config.cv_period == 0:
            set_anchor(state, model, dataset, grads)
        anchor_g = state.anchor_pair_grads if config.cv else grads
        anchor_f = state.anchor_full_grad if config.cv else weights
        ok = _kernels.cv_adam_step(
            state.theta, state.m, state.v, state.step + 1, grads, w, anchor_g, anchor_f,
            config.cv, config.lr, config.beta1, config.beta2, config.eps,
        )
        if ok:
            state.step += 1
        else:
            state.nonfinite_events += 1
    else:
        it = config.max_iter
    if not stopped:
        log_q, grads, _ = model.log_probs_and_grads(state.theta)
        evaluate(it, log_q)
    best = state.best_theta if state.best_theta is not None else state.theta.copy()
    # full-data gradient at the returned parameters, for the record
    final_grad = -(weights @ model.log_probs_and_grads(best)[1])
    state.full_grad_evals += 1
    state.history[-1]["final_grad_norm"] = float(np.linalg.norm(final_grad))
    return TrainResult(best, state.history, state, it, time.perf_counter() - t0)
