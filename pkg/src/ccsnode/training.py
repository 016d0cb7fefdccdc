"""Training loops: toy IVP fitting, the desk-scale classifier, and metrics.

Gradients come either from backprop through the unrolled solver (one
tape over the whole integration) or from the continuous adjoint solved
backwards with the same solver kind and step.  Forward and backward
dynamics evaluations are logged separately.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import (
    Mlp,
    Tape,
    Var,
    dot_sum,
    forward_layers,
    mlp_init,
    param_count,
    softmax_cross_entropy,
    sq_error,
    tanh,
    unflatten_params,
)
from .ccs import example_methods
from .datasets import LabeledDataset, toy_exact, toy_ivp
from .errors import GridMismatchError, LengthMismatchError
from .lmm import rk4_step
from .solvers import (
    CountingDynamics,
    IvpProblem,
    SolverConfig,
    SolverTrace,
    grid_size,
    integrate,
    nesterov_step,
)

__all__ = [
    "SgdConfig",
    "AdamConfig",
    "TrainConfig",
    "TrainingLog",
    "EmpiricalOrderReport",
    "AdjointResult",
    "loss_and_mae",
    "train_toy",
    "toy_solver_config",
    "adjoint_grad",
    "train_classifier",
    "empirical_order",
    "lipschitz_sweep",
    "with_step_size",
]

MAX_STEPS = 100_000


# --- optimizers ---

@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.1
    momentum: float = 0.9


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class _Sgd:
    def __init__(self, cfg: SgdConfig, n: int):
        self.cfg = cfg
        self.v = np.zeros(n)

    def step(self, params, g):
        self.v = self.cfg.momentum * self.v + g
        return params - self.cfg.lr * self.v


class _Adam:
    def __init__(self, cfg: AdamConfig, n: int):
        self.cfg = cfg
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, g):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        mhat = self.m / (1 - c.beta1 ** self.t)
        vhat = self.v / (1 - c.beta2 ** self.t)
        return params - c.lr * mhat / (np.sqrt(vhat) + c.eps)


def _make_optimizer(cfg, n):
    if isinstance(cfg, SgdConfig):
        return _Sgd(cfg, n)
    if isinstance(cfg, AdamConfig):
        return _Adam(cfg, n)
    raise TypeError(f"unknown optimizer config {cfg!r}")


# --- configs and logs ---

@dataclass
class TrainConfig:
    solver: SolverConfig | None = None
    grad_mode: str = "unrolled"  # or "adjoint"
    optimizer: object = field(default_factory=AdamConfig)
    iterations: int = 2000
    epochs: int = 10
    batch_size: int = 128
    nesterov_beta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.grad_mode not in ("unrolled", "adjoint"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")


@dataclass
class TrainingLog:
    metric_name: str
    loss: list = field(default_factory=list)
    metric: list = field(default_factory=list)
    nfe_forward: list = field(default_factory=list)   # cumulative
    nfe_backward: list = field(default_factory=list)  # cumulative
    ms: list = field(default_factory=list)

    def append(self, loss, metric, nfe_f, nfe_b, ms):
        self.loss.append(loss)
        self.metric.append(metric)
        prev_f = self.nfe_forward[-1] if self.nfe_forward else 0
        prev_b = self.nfe_backward[-1] if self.nfe_backward else 0
        self.nfe_forward.append(prev_f + nfe_f)
        self.nfe_backward.append(prev_b + nfe_b)
        self.ms.append(ms)

    @property
    def final_metric(self) -> float:
        return self.metric[-1] if self.metric else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"iter,loss,{self.metric_name},nfe_f,nfe_b,ms\n")
            for i in range(len(self.loss)):
                fh.write(
                    f"{i},{self.loss[i]!r},{self.metric[i]!r},"
                    f"{self.nfe_forward[i]},{self.nfe_backward[i]},{self.ms[i]:.3f}\n"
                )


@dataclass
class EmpiricalOrderReport:
    step_sizes: list
    errors: list
    slope: float


# --- metrics ---

def loss_and_mae(trace: SolverTrace, target):
    """(mse, mae) of a trace against a target sequence on the same grid.

    A diverged or non-finite trace reports (nan, nan); these render as
    "-" in tables.
    """
    target = np.asarray(target, dtype=float)
    values = trace.state_values()
    if trace.diverged or not np.all(np.isfinite(values)) or len(values) != len(target):
        if not trace.diverged and len(values) != len(target):
            raise LengthMismatchError(
                f"trace has {len(values)} states, target has {len(target)}"
            )
        return float("nan"), float("nan")
    diff = values - target
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))


# --- toy training ---

def toy_solver_config(example: str, h: float, beta: float = 0.5) -> SolverConfig:
    """Map a toy experiment name to its solver configuration."""
    examples = example_methods()
    if example in examples:
        return SolverConfig(kind="lmm", h=h, method=examples[example])
    if example == "nesterov":
        return SolverConfig(kind="nesterov", h=h, beta=beta)
    if example in ("euler", "rk4", "ab4"):
        return SolverConfig(kind=example, h=h)
    raise ValueError(f"unknown toy example {example!r}")


TOY_DIMS = [2, 50, 2]


def train_toy(example: str, h: float, cfg: TrainConfig) -> TrainingLog:
    """Fit an MLP dynamics model so the chosen solver reproduces the toy IVP.

    The regression target is the exact solution sampled on the solver
    grid; the loss is the mean squared trajectory error.  Divergent
    iterations log non-finite values and leave the parameters unchanged.
    """
    solver = cfg.solver or toy_solver_config(example, h, cfg.nesterov_beta)
    ivp = toy_ivp()
    n = grid_size(ivp.t0, ivp.t1, solver.h)
    times = ivp.t0 + solver.h * np.arange(n + 1)
    targets = toy_exact(times)
    net = mlp_init(TOY_DIMS, cfg.seed)
    params = net.flat_params()
    opt = _make_optimizer(cfg.optimizer, params.size)
    log = TrainingLog(metric_name="mae")
    denom = targets.size

    for _ in range(cfg.iterations):
        tic = time.perf_counter()
        # diverging methods overflow by design; the log records the blow-up
        with np.errstate(over="ignore", invalid="ignore"):
            if cfg.grad_mode == "unrolled":
                loss_val, mae, g, nfe_f, nfe_b = _toy_unrolled_step(
                    params, solver, ivp, targets, denom
                )
            else:
                loss_val, mae, g, nfe_f, nfe_b = _toy_adjoint_step(
                    params, solver, ivp, targets, denom
                )
            if g is not None and np.all(np.isfinite(g)):
                params = opt.step(params, g)
        log.append(loss_val, mae, nfe_f, nfe_b, (time.perf_counter() - tic) * 1e3)
    net.set_flat_params(params)
    log.net = net
    return log


def _toy_loss_parts(trace, targets, denom):
    values = trace.state_values()
    if trace.diverged or len(values) != len(targets) or not np.all(np.isfinite(values)):
        k = min(len(values), len(targets))
        with np.errstate(invalid="ignore", over="ignore"):
            mae = float(np.mean(np.abs(values[:k] - targets[:k]))) if k else float("nan")
        if np.isfinite(mae) and trace.diverged:
            mae = float("inf")
        return None, mae
    diff = values - targets
    return float(np.sum(diff * diff) / denom), float(np.mean(np.abs(diff)))


def _toy_unrolled_step(params, solver, ivp, targets, denom):
    leaf = Var(params)
    with Tape() as tape:
        layers = unflatten_params(TOY_DIMS, leaf)
        f = lambda t, x: forward_layers(layers, x)
        trace = integrate(solver, IvpProblem(f, ivp.x0, ivp.t0, ivp.t1))
        mse, mae = _toy_loss_parts(trace, targets, denom)
        if mse is None or not np.isfinite(mse):
            return float("nan") if mse is None else mse, mae, None, trace.nfe, 0
        loss = sq_error(trace.states[1], targets[1])
        for k in range(2, len(trace.states)):
            loss = loss + sq_error(trace.states[k], targets[k])
        loss = loss * (1.0 / denom)
    tape.backward(loss)
    return mse, mae, leaf.grad, trace.nfe, 0


def _toy_adjoint_step(params, solver, ivp, targets, denom):
    net = Mlp(dims=TOY_DIMS, weights=[], biases=[])
    net.set_flat_params(params)
    fwd = integrate(
        solver, IvpProblem(lambda t, x: forward_layers(list(zip(net.weights, net.biases)), x),
                           ivp.x0, ivp.t0, ivp.t1)
    )
    mse, mae = _toy_loss_parts(fwd, targets, denom)
    if mse is None or not np.isfinite(mse):
        return float("nan") if mse is None else mse, mae, None, fwd.nfe, 0
    loss_grads = 2.0 * (fwd.state_values() - targets) / denom
    res = adjoint_grad(net, solver, ivp, loss_grads, trace=fwd)
    return mse, mae, res.param_grad, fwd.nfe, res.nfe_backward


# --- adjoint ---

@dataclass
class AdjointResult:
    param_grad: np.ndarray
    x0_grad: np.ndarray
    nfe_backward: int


def adjoint_grad(net: Mlp, cfg: SolverConfig, ivp: IvpProblem,
                 loss_grad_at_states, trace: SolverTrace | None = None) -> AdjointResult:
    """Continuous-adjoint gradient of a grid-observed loss wrt net parameters.

    Integrates the augmented system (state, adjoint, parameter
    accumulator) backwards with the same solver kind and step as the
    forward pass.  Loss gradients are injected at each grid crossing.
    Multistep kinds step each one-step segment with their RK4 starter:
    per-step injections into the adjoint invalidate multistep history.
    """
    if trace is None:
        trace = integrate(cfg, ivp)
    xs = trace.state_values()
    loss_grads = np.asarray(loss_grad_at_states, dtype=float)
    if len(loss_grads) != len(xs):
        raise GridMismatchError(
            f"{len(loss_grads)} loss gradients for {len(xs)} grid states"
        )
    n_steps = len(xs) - 1
    h = cfg.h
    times = trace.times
    flat = net.flat_params()
    n_params = flat.size
    state_shape = xs[0].shape
    state_size = xs[0].size
    nfe = [0]

    def aug(t, z):
        """(dx, da, dg)/dt of the augmented system, flattened."""
        nfe[0] += 1
        x = z[:state_size].reshape(state_shape)
        a = z[state_size : 2 * state_size].reshape(state_shape)
        leaf_x = Var(x)
        leaf_p = Var(flat)
        with Tape() as tape:
            out = forward_layers(unflatten_params(net.dims, leaf_p), leaf_x)
            seed = dot_sum(out, a)
        tape.backward(seed)
        dx = out.value.ravel()
        da = -(leaf_x.grad.ravel() if leaf_x.grad is not None else np.zeros(state_size))
        dg = -(leaf_p.grad if leaf_p.grad is not None else np.zeros(n_params))
        return np.concatenate([dx, da, dg])

    z = np.concatenate([xs[-1].ravel(), np.zeros(state_size), np.zeros(n_params)])
    if cfg.kind == "nesterov":
        yz = z.copy()
    for k in range(n_steps, 0, -1):
        inj = np.zeros_like(z)
        inj[state_size : 2 * state_size] = loss_grads[k].ravel()
        z = z + inj
        if cfg.kind == "euler":
            z = z - h * aug(times[k], z)
        elif cfg.kind == "nesterov":
            yz = yz + inj
            z, yz = nesterov_step(z, yz, times[k], lambda t, w: -aug(t, w), cfg.L, cfg.beta)
        else:  # rk4 and multistep kinds
            z = rk4_step(times[k], z, -h, aug)
    a0 = z[state_size : 2 * state_size].reshape(state_shape) + loss_grads[0]
    return AdjointResult(
        param_grad=z[2 * state_size :].copy(),
        x0_grad=a0,
        nfe_backward=nfe[0],
    )


# --- classifier ---

ODE_WIDTH = 64
DYN_DIMS = [ODE_WIDTH, ODE_WIDTH, ODE_WIDTH]
N_CLASSES = 10


@dataclass
class OdeClassifier:
    """Affine encoder -> tanh -> ODE block -> affine decoder."""

    in_dim: int
    params: np.ndarray

    @property
    def enc_dims(self):
        return [self.in_dim, ODE_WIDTH]

    @property
    def dec_dims(self):
        return [ODE_WIDTH, N_CLASSES]

    def split(self, flat):
        n_enc = param_count(self.enc_dims)
        n_dyn = param_count(DYN_DIMS)
        return (
            unflatten_params(self.enc_dims, flat[:n_enc]),
            flat[n_enc : n_enc + n_dyn],
            unflatten_params(self.dec_dims, flat[n_enc + n_dyn :]),
        )


def _init_classifier(in_dim: int, seed: int) -> OdeClassifier:
    enc = mlp_init([in_dim, ODE_WIDTH], seed)
    dyn = mlp_init(DYN_DIMS, seed + 1)
    dec = mlp_init([ODE_WIDTH, N_CLASSES], seed + 2)
    params = np.concatenate([enc.flat_params(), dyn.flat_params(), dec.flat_params()])
    return OdeClassifier(in_dim=in_dim, params=params)


def _classifier_forward(model: OdeClassifier, flat, x_batch, solver: SolverConfig):
    """Logits of one batch; generic over Var/ndarray parameters."""
    enc_layers, dyn_flat, dec_layers = model.split(flat)
    dyn_layers = unflatten_params(DYN_DIMS, dyn_flat)
    h0 = tanh(x_batch @ enc_layers[0][0] + enc_layers[0][1])
    trace = integrate(
        solver,
        IvpProblem(lambda t, s: forward_layers(dyn_layers, s), h0, 0.0, 1.0),
    )
    h1 = trace.states[-1]
    logits = h1 @ dec_layers[0][0] + dec_layers[0][1]
    return logits, trace


def _accuracy(model: OdeClassifier, solver: SolverConfig, x, y, batch: int = 1000) -> float:
    if len(y) == 0:
        return float("nan")
    hits = 0
    for lo in range(0, len(y), batch):
        logits, _ = _classifier_forward(model, model.params, x[lo : lo + batch], solver)
        hits += int(np.sum(np.argmax(logits, axis=1) == y[lo : lo + batch]))
    return hits / len(y)


def train_classifier(cfg: TrainConfig, data: LabeledDataset):
    """Supervised training of the ODE classifier; returns (log, test accuracy).

    Per-epoch log rows: mean train loss, validation accuracy (test split
    when no validation data is present), cumulative forward/backward NFE.
    """
    if cfg.solver is None:
        raise GridMismatchError("train_classifier needs cfg.solver")
    solver = cfg.solver
    x_train = np.asarray(data.x_train, dtype=float)
    y_train = np.asarray(data.y_train, dtype=int)
    model = _init_classifier(x_train.shape[1], cfg.seed)
    opt = _make_optimizer(cfg.optimizer, model.params.size)
    rng = np.random.default_rng(cfg.seed)
    have_val = len(data.y_val) > 0
    x_eval = data.x_val if have_val else data.x_test
    y_eval = data.y_val if have_val else data.y_test
    log = TrainingLog(metric_name="accuracy")

    dyn_net = Mlp(dims=DYN_DIMS, weights=[], biases=[])
    n_enc = param_count(model.enc_dims)
    n_dyn = param_count(DYN_DIMS)

    for _ in range(cfg.epochs):
        tic = time.perf_counter()
        order = rng.permutation(len(y_train))
        losses = []
        nfe_f = 0
        nfe_b = 0
        for lo in range(0, len(order), cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            xb, yb = x_train[sel], y_train[sel]
            if cfg.grad_mode == "unrolled":
                leaf = Var(model.params)
                with Tape() as tape:
                    logits, trace = _classifier_forward(model, leaf, xb, solver)
                    loss = softmax_cross_entropy(logits, yb)
                tape.backward(loss)
                g = leaf.grad
                loss_val = float(loss.value)
                nfe_f += trace.nfe
            else:
                loss_val, g, fwd_nfe, bwd_nfe = _classifier_adjoint_step(
                    model, dyn_net, solver, xb, yb, n_enc, n_dyn
                )
                nfe_f += fwd_nfe
                nfe_b += bwd_nfe
            if g is not None and np.all(np.isfinite(g)):
                model.params = opt.step(model.params, g)
            losses.append(loss_val)
        acc = _accuracy(model, solver, x_eval, y_eval)
        log.append(float(np.mean(losses)), acc, nfe_f, nfe_b,
                   (time.perf_counter() - tic) * 1e3)
    test_acc = _accuracy(model, solver, data.x_test, data.y_test)
    log.model = model
    return log, test_acc


def _classifier_adjoint_step(model, dyn_net, solver, xb, yb, n_enc, n_dyn):
    """Adjoint-mode gradient: manual encoder/decoder VJPs around the ODE block."""
    enc_layers, dyn_flat, dec_layers = model.split(model.params)
    dyn_net.set_flat_params(dyn_flat)
    we, be = enc_layers[0]
    wd, bd = dec_layers[0]
    h0 = np.tanh(xb @ we + be)
    ivp = IvpProblem(
        lambda t, s: forward_layers(list(zip(dyn_net.weights, dyn_net.biases)), s),
        h0, 0.0, 1.0,
    )
    trace = integrate(solver, ivp)
    h1 = trace.state_values()[-1]
    logits = h1 @ wd + bd
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    n = len(yb)
    loss_val = float(np.mean(log_z - shifted[np.arange(n), yb]))
    d_logits = np.exp(shifted - log_z[:, None])
    d_logits[np.arange(n), yb] -= 1.0
    d_logits /= n
    g_wd = h1.T @ d_logits
    g_bd = d_logits.sum(axis=0)
    d_h1 = d_logits @ wd.T

    loss_grads = np.zeros((len(trace.states),) + h0.shape)
    loss_grads[-1] = d_h1
    res = adjoint_grad(dyn_net, solver, ivp, loss_grads, trace=trace)

    d_pre = res.x0_grad * (1.0 - h0 * h0)
    g_we = xb.T @ d_pre
    g_be = d_pre.sum(axis=0)
    g = np.concatenate([
        g_we.ravel(), g_be, res.param_grad, g_wd.ravel(), g_bd,
    ])
    return loss_val, g, trace.nfe, res.nfe_backward


# --- order estimation and sweeps ---

def with_step_size(cfg: SolverConfig, h: float) -> SolverConfig:
    """Copy a solver config onto a new step size (rederiving L for nesterov)."""
    if cfg.kind == "nesterov":
        return SolverConfig(kind="nesterov", h=h, beta=cfg.beta)
    return replace(cfg, h=h)


def empirical_order(cfg: SolverConfig, ivp: IvpProblem, exact_fn, hs) -> EmpiricalOrderReport:
    """Endpoint error against the exact solution per step size, with the
    least-squares slope of log(error) vs log(h)."""
    hs = list(hs)
    if len(hs) < 3:
        raise GridMismatchError("need at least 3 step sizes for a slope fit")
    errors = []
    for h in hs:
        trace = integrate(with_step_size(cfg, h), ivp)
        values = trace.state_values()
        if trace.diverged or len(values) != grid_size(ivp.t0, ivp.t1, h) + 1:
            errors.append(float("inf"))
            continue
        errors.append(float(np.max(np.abs(values[-1] - exact_fn(ivp.t1)))))
    finite = np.isfinite(errors)
    if finite.sum() < 3:
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(np.asarray(hs)[finite]),
                                 np.log(np.asarray(errors)[finite]), 1)[0])
    return EmpiricalOrderReport(step_sizes=hs, errors=errors, slope=slope)


def lipschitz_sweep(L_values, beta: float, cfg: TrainConfig, data: LabeledDataset):
    """Train one classifier per Lipschitz constant with h = 1/(L(1-beta)).

    The step is grid-adjusted to the nearest divisor of the unit span; a
    step-count guard rejects absurdly small steps before training.
    """
    rows = []
    for L in L_values:
        if L <= 0:
            raise GridMismatchError(f"Lipschitz constant must be positive, got {L}")
        h = 1.0 / (L * (1.0 - beta))
        n = max(1, int(round(1.0 / h)))
        if n > MAX_STEPS:
            raise GridMismatchError(
                f"L={L} implies {n} steps per integration (cap {MAX_STEPS})"
            )
        solver = SolverConfig(kind="nesterov", h=1.0 / n, beta=beta)
        run_cfg = replace(cfg, solver=solver)
        _, acc = train_classifier(run_cfg, data)
        rows.append((float(L), float(acc)))
    return rows
