"""Primal-dual robust training over group mixtures, plus ERM-style baselines.

The saddle objective is ``R(theta, q) = sum_e q_e L_e(theta) - lam * D(q, p)`` with
``q`` on the simplex over training groups and ``p`` a fixed prior. Each step
descends ``theta`` along ``sum_e q_e grad L_e`` (using the current ``q``) and then
takes a projected ascent step on ``q``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from .core import as_vector, check_simplex, prior_distance, project_to_simplex
from .errors import DegenerateDataError, InvalidInputError, UnsupportedError
from .model import LINEAR, LOGISTIC, SQUARED, init_predictor, loss_and_grad

CONSTANT = "constant"
ONE_OVER_SQRT_T = "one_over_sqrt_T"
Q_PRIOR = "prior"
Q_UNIFORM = "uniform"

EARLY_STOP_TOL = 1e-7
EARLY_STOP_PATIENCE = 50


@dataclass(frozen=True)
class TroConfig:
    lam: float = 1.0
    eta_theta: float = 0.1
    eta_q: float = 0.01
    T: int = 2000
    batch_size: int = 32
    seed: int = 0
    step_schedule: str = CONSTANT
    q_init: str = Q_PRIOR
    early_stop: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidInputError(f"lam must be >= 0, got {self.lam}")
        if self.eta_theta < 0 or self.eta_q < 0:
            raise InvalidInputError("step sizes must be >= 0")
        if self.T < 0 or self.batch_size < 1:
            raise InvalidInputError("need T >= 0 and batch_size >= 1")
        if self.step_schedule not in (CONSTANT, ONE_OVER_SQRT_T):
            raise InvalidInputError(f"unknown step_schedule {self.step_schedule!r}")
        if self.q_init not in (Q_PRIOR, Q_UNIFORM):
            raise InvalidInputError(f"unknown q_init {self.q_init!r}")

    def step_sizes(self):
        if self.step_schedule == ONE_OVER_SQRT_T:
            s = 1.0 / np.sqrt(max(self.T, 1))
            return self.eta_theta * s, self.eta_q * s
        return self.eta_theta, self.eta_q


class History:
    """Per-iteration minibatch losses, the ``q`` used, and the objective value."""

    def __init__(self, m, capacity):
        self.losses = np.empty((capacity, m))
        self.q = np.empty((capacity, m))
        self.objective = np.empty(capacity)
        self.n = 0

    def record(self, losses, q, objective):
        if self.n == self.losses.shape[0]:
            grow = max(16, self.n)
            self.losses = np.vstack([self.losses, np.empty((grow, self.losses.shape[1]))])
            self.q = np.vstack([self.q, np.empty((grow, self.q.shape[1]))])
            self.objective = np.concatenate([self.objective, np.empty(grow)])
        self.losses[self.n] = losses
        self.q[self.n] = q
        self.objective[self.n] = objective
        self.n += 1

    def __len__(self):
        return self.n

    def view(self):
        return self.losses[: self.n], self.q[: self.n], self.objective[: self.n]

    def to_csv(self, path=None, group_ids=None, comment=None):
        """Long format: one row per (iteration, group)."""
        losses, q, obj = self.view()
        gids = list(range(losses.shape[1])) if group_ids is None else list(group_ids)
        buf = io.StringIO()
        if comment:
            for line in comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "group_id", "loss", "q", "objective"])
        for t in range(self.n):
            ob = "%.17g" % obj[t]
            for k, g in enumerate(gids):
                w.writerow([t, g, "%.17g" % losses[t, k], "%.17g" % q[t, k], ob])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass
class TroState:
    theta: np.ndarray
    q: np.ndarray
    iter: int = 0
    history: History = None
    theta_sum: np.ndarray = None
    q_sum: np.ndarray = None
    quiet_steps: int = 0
    stopped_early: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def theta_avg(self):
        """Mean of the iterates at which gradients were taken (theta^0 .. theta^{T-1})."""
        return self.theta.copy() if not self.iter else self.theta_sum / self.iter

    @property
    def q_avg(self):
        return self.q.copy() if not self.iter else self.q_sum / self.iter


class GroupSampler:
    """Uniform with-replacement minibatches, one independent stream per group."""

    def __init__(self, dataset, group_ids, batch_size, seed):
        self.groups = [dataset.group(g) for g in group_ids]
        for g in self.groups:
            if g.n == 0:
                raise InvalidInputError(f"cannot sample from empty group {g.name!r}")
        self.batch_size = int(batch_size)
        streams = np.random.SeedSequence(seed).spawn(len(self.groups) + 1)
        # stream 0 is reserved for model initialisation
        self.init_rng = np.random.default_rng(streams[0])
        self.rngs = [np.random.default_rng(s) for s in streams[1:]]

    def draw(self):
        out = []
        for g, rng in zip(self.groups, self.rngs):
            idx = rng.integers(0, g.n, size=self.batch_size)
            out.append((g.X[idx], g.y[idx]))
        return out


def tro_objective(losses, q, p, lam):
    """Value of ``q.L - lam * D(q, p)`` and its gradient in ``q``."""
    L = as_vector(losses, "losses")
    q = as_vector(q, "q")
    if L.shape != q.shape:
        raise InvalidInputError(f"length mismatch: {L.size} losses, {q.size} weights")
    d, dgrad = prior_distance(q, p)
    return float(q @ L) - lam * d, L - lam * dgrad


def q_update(q, losses, p, lam, eta_q):
    """One projected ascent step on the mixture weights."""
    _, g = tro_objective(losses, q, p, lam)
    return project_to_simplex(q + eta_q * g)


def best_response_q(losses, p, lam):
    """Exact maximiser over the simplex of ``q.L - lam/2 ||q - p||^2``."""
    L = as_vector(losses, "losses")
    if lam == 0:
        # linear objective: vertex of the largest loss (lowest index on ties)
        q = np.zeros_like(L)
        q[int(np.argmax(L))] = 1.0
        return q
    return project_to_simplex(np.asarray(p, dtype=float) + L / lam)


def _resolve_prior(prior, m):
    p = getattr(prior, "prior", prior)
    if p is None:
        return np.full(m, 1.0 / m)
    p = check_simplex(p, "prior")
    if p.size != m:
        raise InvalidInputError(f"prior has {p.size} entries for {m} training groups")
    return p


def tro_step(state, model, batches, prior, config, loss, update_q=True):
    """Advance ``state`` by one primal-dual step on the given per-group minibatches."""
    p = np.asarray(getattr(prior, "prior", prior), dtype=float)
    eta_theta, eta_q = config.step_sizes()
    cur = model.with_theta(state.theta)
    losses = np.empty(len(batches))
    grad = np.zeros_like(state.theta)
    for e, (X, y) in enumerate(batches):
        losses[e], g = loss_and_grad(cur, X, y, loss)
        grad += state.q[e] * g
    if not np.all(np.isfinite(losses)) or not np.all(np.isfinite(grad)):
        raise DegenerateDataError(f"non-finite loss or gradient at iteration {state.iter}")
    obj, gq = tro_objective(losses, state.q, p, config.lam)
    if state.history is not None:
        state.history.record(losses, state.q, obj)
    if state.theta_sum is not None:
        state.theta_sum += state.theta
        state.q_sum += state.q
    theta_new = state.theta - eta_theta * grad
    q_new = project_to_simplex(state.q + eta_q * gq) if update_q else state.q
    if config.early_stop:
        dt = np.max(np.abs(theta_new - state.theta))
        dq = np.max(np.abs(q_new - state.q))
        quiet = dt < EARLY_STOP_TOL and dq < EARLY_STOP_TOL
        state.quiet_steps = state.quiet_steps + 1 if quiet else 0
        state.stopped_early = state.quiet_steps >= EARLY_STOP_PATIENCE
    state.theta, state.q = theta_new, q_new
    state.iter += 1
    return state


def _run(dataset, prior, spec, loss, config, update_q, callback=None, init_model=None, group_ids=None):
    gids = tuple(dataset.train_ids if group_ids is None else group_ids)
    if not gids:
        raise InvalidInputError("no training groups")
    _check_task(dataset, loss)
    m = len(gids)
    p = _resolve_prior(prior, m)
    sampler = GroupSampler(dataset, gids, config.batch_size, config.seed)
    model = init_model if init_model is not None else init_predictor(spec, dataset.dim, sampler.init_rng)
    q0 = p.copy() if config.q_init == Q_PRIOR else np.full(m, 1.0 / m)
    state = TroState(
        theta=model.theta.copy(),
        q=q0,
        history=History(m, config.T),
        theta_sum=np.zeros_like(model.theta),
        q_sum=np.zeros(m),
    )
    state.extras["group_ids"] = gids
    state.extras["prior"] = p
    for _ in range(config.T):
        tro_step(state, model, sampler.draw(), p, config, loss, update_q=update_q)
        if callback is not None:
            callback(state, model)
        if state.stopped_early:
            break
    return model.with_theta(state.theta), state


def _check_task(dataset, loss):
    if loss not in (LOGISTIC, SQUARED):
        raise InvalidInputError(f"unknown loss {loss!r}")
    if (dataset.task == "classification") != (loss == LOGISTIC):
        raise InvalidInputError(f"loss {loss!r} does not fit a {dataset.task} task")


def train_tro(dataset, prior, spec, loss, config, callback=None, init_model=None):
    """Run ``config.T`` primal-dual steps; returns ``(predictor, state)``.

    ``prior`` is a ``TopologicalPrior`` or a simplex vector over the training
    groups (in ``dataset.train_ids`` order). ``callback(state, model)`` runs
    after every step.
    """
    return _run(dataset, prior, spec, loss, config, True, callback, init_model)


def train_group_dro(dataset, spec, loss, config, callback=None):
    """Worst-mixture training: the ``lam = 0`` path with a uniform anchor."""
    return _run(dataset, None, spec, loss, replace(config, lam=0.0), True, callback)


def train_iw_erm(dataset, prior, spec, loss, config, callback=None):
    """Fixed importance weights ``q = prior`` for the whole run."""
    return _run(dataset, prior, spec, loss, replace(config, q_init=Q_PRIOR), False, callback)


def train_erm(dataset, spec, loss, config, return_state=False):
    """Minibatch SGD on the pooled training data.

    Each step draws ``batch_size * (number of training groups)`` points uniformly
    from the pool, matching the per-step sample count of the group-wise methods.
    """
    gids = tuple(dataset.train_ids)
    if not gids:
        raise InvalidInputError("no training groups")
    _check_task(dataset, loss)
    X, y = dataset.pooled(gids)
    init_ss, draw_ss = np.random.SeedSequence(config.seed).spawn(2)
    model = init_predictor(spec, dataset.dim, np.random.default_rng(init_ss))
    rng = np.random.default_rng(draw_ss)
    eta, _ = config.step_sizes()
    nb = config.batch_size * len(gids)
    theta = model.theta.copy()
    history = History(1, config.T)
    for t in range(config.T):
        idx = rng.integers(0, X.shape[0], size=nb)
        val, g = loss_and_grad(model.with_theta(theta), X[idx], y[idx], loss)
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            raise DegenerateDataError(f"non-finite loss or gradient at iteration {t}")
        history.record([val], [1.0], val)
        theta = theta - eta * g
    out = model.with_theta(theta)
    if return_state:
        return out, TroState(theta=theta, q=np.ones(1), iter=config.T, history=history)
    return out


# -- full-batch quantities and duality gap -------------------------------------------


def group_losses(model, dataset, group_ids, loss, with_grads=False):
    """Full-batch loss per group (and gradients, stacked as rows)."""
    vals, grads = [], []
    for g in group_ids:
        grp = dataset.group(g)
        v, gr = loss_and_grad(model, grp.X, grp.y, loss)
        vals.append(v)
        grads.append(gr)
    if with_grads:
        return np.asarray(vals), np.vstack(grads)
    return np.asarray(vals)


def saddle_grad_norm(model, theta, q, dataset, group_ids, loss):
    """``||grad_theta R(theta, q)||_2`` on full batches."""
    _, G = group_losses(model.with_theta(theta), dataset, group_ids, loss, with_grads=True)
    return float(np.linalg.norm(np.asarray(q) @ G))


class GapTerms(NamedTuple):
    gap: float
    raw: float
    upper: float
    lower: float


def _smoothness(dataset, group_ids, q, loss):
    # Lipschitz constant of the gradient of sum_e q_e L_e for a linear model
    curv = 0.25 if loss == LOGISTIC else 2.0
    H = None
    for w, g in zip(q, group_ids):
        grp = dataset.group(g)
        Xa = np.hstack([grp.X, np.ones((grp.n, 1))])
        term = w * (Xa.T @ Xa) / grp.n
        H = term if H is None else H + term
    return curv * float(np.linalg.eigvalsh(H)[-1])


def duality_gap_terms(model, theta, q, dataset, prior, lam, loss, inner_steps=2000, inner="gd", group_ids=None):
    """Duality gap of ``(theta, q)`` for a linear model with a convex loss.

    The max over ``q`` is exact. The min over ``theta`` runs ``inner_steps``
    full-batch gradient steps (step ``1/L``) from ``theta``; ``inner="lbfgs"``
    uses scipy's L-BFGS-B instead. ``raw`` may dip slightly below zero when the
    inner solve is inexact; ``gap`` is ``raw`` clamped at zero.
    """
    if model.arch != LINEAR:
        raise UnsupportedError("duality gap is only defined here for linear models")
    gids = tuple(dataset.train_ids if group_ids is None else group_ids)
    q = check_simplex(q, "q")
    p = _resolve_prior(prior, len(gids))
    theta = np.asarray(theta, dtype=float)

    L = group_losses(model.with_theta(theta), dataset, gids, loss)
    q_star = best_response_q(L, p, lam)
    upper, _ = tro_objective(L, q_star, p, lam)

    penalty = lam * prior_distance(q, p)[0]

    def f(th):
        vals, G = group_losses(model.with_theta(th), dataset, gids, loss, with_grads=True)
        return float(q @ vals), q @ G

    if inner == "lbfgs":
        res = minimize(f, theta, jac=True, method="L-BFGS-B", options={"maxiter": inner_steps, "gtol": 1e-12, "ftol": 1e-15})
        best = min(float(res.fun), f(theta)[0])
    elif inner == "gd":
        step = 1.0 / max(_smoothness(dataset, gids, q, loss), 1e-12)
        th = theta.copy()
        best, g = f(th)
        for _ in range(inner_steps):
            th = th - step * g
            val, g = f(th)
            best = min(best, val)
    else:
        raise InvalidInputError(f"unknown inner solver {inner!r}")
    lower = best - penalty
    raw = upper - lower
    return GapTerms(max(raw, 0.0), raw, upper, lower)


def duality_gap(model, theta, q, dataset, prior, lam, loss, inner_steps=2000, inner="gd", group_ids=None):
    return duality_gap_terms(model, theta, q, dataset, prior, lam, loss, inner_steps, inner, group_ids).gap
