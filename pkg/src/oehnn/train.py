"""Losses, exact gradients through the unrolled solver, Adam, and the fit driver.

The simulation loss rolls the model field out with RK4 and measures the
output residual; its gradient is the adjoint of the discrete unrolled
computation (reverse sweep over every solver stage), so it is exact for the
loss actually computed. Stage recomputation keeps memory at O(steps * batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from oehnn.data import Dataset, Trajectory, fd_derivatives
from oehnn.dynamics import StructureMatrices, structure_matrices
from oehnn.netmodel import (
    BlackBoxNet,
    HamiltonianNet,
    flatten_params,
    init_blackbox_net,
    init_hamiltonian_net,
    with_params,
)

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingError",
    "FitResult",
    "adam_step",
    "init_adam",
    "simulation_loss",
    "simulation_loss_grad",
    "derivative_loss",
    "derivative_loss_grad",
    "fit",
    "write_history_csv",
]

LOSS_KINDS = ("simulation", "derivative-matching")
ANCHORS = ("measured", "true")
DERIVATIVE_SOURCES = ("fd", "true")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and training-loop settings."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 5000
    patience: int = 500
    loss: str = "simulation"
    chunk_length: int | None = None
    n_hidden: int = 200
    seed: int = 0
    derivative_source: str = "fd"
    anchor: str = "measured"
    divergence_penalty: float = 1e6

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.chunk_length is not None and self.chunk_length < 2:
            raise ValueError("chunk_length must be at least 2")
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be at least 1")
        if self.derivative_source not in DERIVATIVE_SOURCES:
            raise ValueError(f"derivative_source must be one of {DERIVATIVE_SOURCES}")
        if self.anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {ANCHORS}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def init_adam(n_params: int) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), step=0)


def adam_step(
    theta: np.ndarray, grad: np.ndarray, state: AdamState, config: TrainConfig
) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update; returns new parameters and state."""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ValueError("parameter, gradient, and accumulator shapes must agree")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient passed to adam_step")
    t = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grad
    v = config.beta2 * state.v + (1.0 - config.beta2) * grad**2
    m_hat = m / (1.0 - config.beta1**t)
    v_hat = v / (1.0 - config.beta2**t)
    theta_new = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return theta_new, AdamState(m=m, v=v, step=t)


# ---------------------------------------------------------------------------
# Batched rollout of the Hamiltonian model field with adjoint backward sweep.
# Lanes (batch rows) are independent trajectory segments; a lane that turns
# non-finite is frozen at zero and contributes a fixed penalty with no
# gradient, so one runaway segment cannot poison an epoch.
# ---------------------------------------------------------------------------


def _j_apply(g: np.ndarray, n: int) -> np.ndarray:
    """J @ g per row for the canonical block structure."""
    return np.concatenate([g[..., n:], -g[..., :n]], axis=-1)


def _jt_apply(v: np.ndarray, n: int) -> np.ndarray:
    """J.T @ v = -J @ v per row."""
    return np.concatenate([-v[..., n:], v[..., :n]], axis=-1)


class _ThetaGrad:
    """Accumulator for gradients in HamiltonianNet layout."""

    def __init__(self, net: HamiltonianNet):
        self.w1 = np.zeros_like(net.w1)
        self.b1 = np.zeros_like(net.b1)
        self.w2 = np.zeros_like(net.w2)
        self.b2 = 0.0

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, np.array([self.b2])])


def _stage_vjp(net, x, th, v, n, acc: _ThetaGrad):
    """Pull a cotangent v on f(x) = J dH/dx + G u back to x and parameters.

    `th` is the forward-pass tanh(w1 @ x + b1) for this stage. Returns the
    state cotangent (Hessian of H applied to J.T v); parameter contributions
    are accumulated in-place.
    """
    w = _jt_apply(v, n)
    s = 1.0 - th**2
    sp = -2.0 * th * s
    a = w @ net.w1.T
    asp = a * sp
    x_cot = ((net.w2 * sp) * a) @ net.w1
    acc.w2 += np.einsum("bh,bh->h", a, s)
    acc.b1 += net.w2 * np.einsum("bh,bh->h", a, sp)
    acc.w1 += (s * net.w2).T @ w + (asp * net.w2).T @ x
    return x_cot


def _model_grad(net, x, th_out=None):
    """dH/dx for a batch of states (rows); optionally record tanh(z)."""
    z = x @ net.w1.T + net.b1
    th = np.tanh(z)
    if th_out is not None:
        th_out[...] = th
    return (net.w2 * (1.0 - th**2)) @ net.w1


def _sim_batch(
    net: HamiltonianNet,
    S: StructureMatrices,
    x0: np.ndarray,
    gu: np.ndarray,
    y: np.ndarray,
    h: float,
    weight: np.ndarray,
    penalty: float,
    want_grad: bool,
):
    """Loss and parameter gradient of batched model rollouts.

    x0: (B, d) anchors; gu: (T, B, d) input injections G @ u per transition;
    y: (T+1, B, d) reference outputs (row 0 unused); weight: (B,) scale on
    each lane's residual-norm sum. Returns (per-lane loss, flat grad or None,
    diverged step per lane with -1 for clean lanes).
    """
    n_steps, B, d = gu.shape
    n = d // 2
    xs = np.empty((n_steps + 1, B, d))
    ks = np.empty((n_steps, 3, B, d)) if want_grad else None
    # forward-pass tanh activations per stage, reused by the reverse sweep
    ths = np.empty((n_steps, 4, B, net.n_hidden)) if want_grad else None
    diverged = np.full(B, -1, dtype=int)
    bad0 = ~np.isfinite(x0).all(axis=1)
    if bad0.any():
        diverged[bad0] = 0
        x0 = np.where(bad0[:, None], 0.0, x0)
    xs[0] = x0
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            g_in = gu[k]
            th = ths[k] if want_grad else (None, None, None, None)
            k1 = _j_apply(_model_grad(net, x, th[0]), n) + g_in
            x2 = x + (h / 2.0) * k1
            k2 = _j_apply(_model_grad(net, x2, th[1]), n) + g_in
            x3 = x + (h / 2.0) * k2
            k3 = _j_apply(_model_grad(net, x3, th[2]), n) + g_in
            x4 = x + h * k3
            k4 = _j_apply(_model_grad(net, x4, th[3]), n) + g_in
            x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = ~np.isfinite(x_next).all(axis=1)
            if bad.any():
                fresh = bad & (diverged < 0)
                diverged[fresh] = k + 1
                x_next = np.where(bad[:, None], 0.0, x_next)
            if want_grad:
                ks[k, 0] = k1
                ks[k, 1] = k2
                ks[k, 2] = k3
                if bad.any():
                    # dead lanes keep finite placeholders so the reverse sweep
                    # stays NaN-free; their cotangents are masked to zero anyway
                    ks[k, :, bad] = 0.0
                    ths[k, :, bad] = 0.0
            xs[k + 1] = x_next
            x = x_next

    live = diverged < 0
    resid = xs[1:] - y[1:]
    norms = np.linalg.norm(resid, axis=2)  # (T, B)
    lane_loss = np.where(live, weight * norms.sum(axis=0), penalty)

    if not want_grad:
        return lane_loss, None, diverged

    acc = _ThetaGrad(net)
    lam = np.zeros((B, d))
    live_w = np.where(live, weight, 0.0)
    for k in range(n_steps, 0, -1):
        nk = norms[k - 1]
        scale = np.where(nk > 0.0, live_w / np.maximum(nk, 1e-300), 0.0)
        lam = lam + scale[:, None] * resid[k - 1]
        x = xs[k - 1]
        k1, k2, k3 = ks[k - 1]
        th1, th2, th3, th4 = ths[k - 1]
        x2 = x + (h / 2.0) * k1
        x3 = x + (h / 2.0) * k2
        x4 = x + h * k3
        x_bar = lam.copy()
        c4 = (h / 6.0) * lam
        x4_bar = _stage_vjp(net, x4, th4, c4, n, acc)
        x_bar += x4_bar
        c3 = (h / 3.0) * lam + h * x4_bar
        x3_bar = _stage_vjp(net, x3, th3, c3, n, acc)
        x_bar += x3_bar
        c2 = (h / 3.0) * lam + (h / 2.0) * x3_bar
        x2_bar = _stage_vjp(net, x2, th2, c2, n, acc)
        x_bar += x2_bar
        c1 = (h / 6.0) * lam + (h / 2.0) * x2_bar
        x_bar += _stage_vjp(net, x, th1, c1, n, acc)
        lam = x_bar
    return lane_loss, acc.flat(), diverged


def _anchor_state(traj: Trajectory, anchor: str) -> np.ndarray:
    if anchor == "measured":
        return traj.y[0]
    if anchor == "true":
        if traj.x_true is None:
            raise TrainingError("anchor='true' requires stored noiseless states")
        return traj.x_true[0]
    raise ValueError(f"anchor must be one of {ANCHORS}")


def _traj_arrays(trajs: list[Trajectory], S: StructureMatrices, anchor: str):
    """Stack equal-length trajectories into lane-batched rollout arrays."""
    n = trajs[0].n_samples
    if any(tr.n_samples != n for tr in trajs):
        raise TrainingError("trajectories in one batch must share a common length")
    h = trajs[0].ts
    x0 = np.stack([_anchor_state(tr, anchor) for tr in trajs])
    u = np.stack([tr.u[:-1] for tr in trajs], axis=1)  # (T, B, m)
    gu = u @ S.G.T
    y = np.stack([tr.y for tr in trajs], axis=1)  # (T+1, B, d)
    weight = np.full(len(trajs), 1.0 / n)
    return x0, gu, y, h, weight


def _chunk_arrays(trajs: list[Trajectory], S: StructureMatrices, anchor: str, chunk: int):
    """Cut trajectories into sub-rollouts re-anchored at measured samples.

    Every residual sample keeps its 1/N weight, so the chunked loss sums the
    same residual terms as the full rollout, just along shorter horizons.
    Returns one (x0, gu, y, h, weight) group per distinct segment length.
    """
    groups: dict[int, list[tuple[np.ndarray, np.ndarray, np.ndarray, float]]] = {}
    h = trajs[0].ts
    for tr in trajs:
        n = tr.n_samples
        anchors = tr.y if anchor == "measured" else tr.x_true
        if anchors is None:
            raise TrainingError("anchor='true' requires stored noiseless states")
        for k0 in range(0, n - 1, chunk):
            length = min(chunk, n - 1 - k0)
            groups.setdefault(length, []).append(
                (anchors[k0], tr.u[k0 : k0 + length], tr.y[k0 : k0 + length + 1], 1.0 / n)
            )
    out = []
    for length, segs in sorted(groups.items()):
        x0 = np.stack([s[0] for s in segs])
        u = np.stack([s[1] for s in segs], axis=1)
        y = np.stack([s[2] for s in segs], axis=1)
        weight = np.array([s[3] for s in segs])
        out.append((x0, u @ S.G.T, y, h, weight))
    return out


def simulation_loss(
    net: HamiltonianNet,
    S: StructureMatrices,
    trajectory: Trajectory,
    anchor: str = "measured",
) -> float:
    """Mean output-residual norm of the model rollout against measurements.

    The model starts from the anchor sample and is driven by the recorded
    inputs; the loss is (1/N) * sum_{k>=1} ||y_k - y_hat_k||_2.
    """
    loss, _ = _sim_loss_value_grad(net, S, trajectory, anchor, want_grad=False)
    return loss


def simulation_loss_grad(
    net: HamiltonianNet,
    S: StructureMatrices,
    trajectory: Trajectory,
    anchor: str = "measured",
) -> tuple[float, np.ndarray]:
    """Simulation loss and its exact gradient with respect to the parameters."""
    return _sim_loss_value_grad(net, S, trajectory, anchor, want_grad=True)


def _sim_loss_value_grad(net, S, trajectory, anchor, want_grad):
    if trajectory.n_samples < 2:
        raise ValueError("trajectory must contain at least 2 samples")
    x0, gu, y, h, weight = _traj_arrays([trajectory], S, anchor)
    lane_loss, grad, diverged = _sim_batch(
        net, S, x0, gu, y, h, weight, penalty=1e6, want_grad=want_grad
    )
    if diverged[0] >= 0:
        raise TrainingError(f"model rollout diverged at step {diverged[0]}")
    loss = float(lane_loss[0])
    return (loss, grad) if want_grad else (loss, None)


# ---------------------------------------------------------------------------
# Derivative-matching losses for the classical baselines.
# ---------------------------------------------------------------------------


def _derivative_batch_hnn(net, S, x, dx_target, u, sample_weight, want_grad):
    n = net.n_states // 2
    g = _model_grad(net, x)
    r1 = g[:, n:] - dx_target[:, :n]  # momentum gradient vs position rate
    gu = u @ S.G.T
    r2 = g[:, :n] + dx_target[:, n:] - gu[:, n:]  # position gradient vs forced momentum rate
    n1 = np.linalg.norm(r1, axis=1)
    n2 = np.linalg.norm(r2, axis=1)
    loss = float(np.sum(sample_weight * (n1 + n2)))
    if not want_grad:
        return loss, None
    g_cot = np.zeros_like(g)
    s1 = np.where(n1 > 0.0, sample_weight / np.maximum(n1, 1e-300), 0.0)
    s2 = np.where(n2 > 0.0, sample_weight / np.maximum(n2, 1e-300), 0.0)
    g_cot[:, n:] = s1[:, None] * r1
    g_cot[:, :n] = s2[:, None] * r2
    acc = _ThetaGrad(net)
    z = x @ net.w1.T + net.b1
    th = np.tanh(z)
    s = 1.0 - th**2
    sp = -2.0 * th * s
    a = g_cot @ net.w1.T
    acc.w2 += np.einsum("bh,bh->h", a, s)
    acc.b1 += net.w2 * np.einsum("bh,bh->h", a, sp)
    acc.w1 += (s * net.w2).T @ g_cot + (a * sp * net.w2).T @ x
    return loss, acc.flat()


def _derivative_batch_mlp(net, x, dx_target, u, sample_weight, want_grad):
    xu = np.concatenate([x, u], axis=1)
    z = xu @ net.w1.T + net.b1
    th = np.tanh(z)
    f = th @ net.w2.T + net.b2
    r = f - dx_target
    nr = np.linalg.norm(r, axis=1)
    loss = float(np.sum(sample_weight * nr))
    if not want_grad:
        return loss, None
    scale = np.where(nr > 0.0, sample_weight / np.maximum(nr, 1e-300), 0.0)
    f_cot = scale[:, None] * r
    hidden = (f_cot @ net.w2) * (1.0 - th**2)
    grad = np.concatenate(
        [
            (hidden.T @ xu).ravel(),
            hidden.sum(axis=0),
            (f_cot.T @ th).ravel(),
            f_cot.sum(axis=0),
        ]
    )
    return loss, grad


def derivative_loss(model, S: StructureMatrices, x, dx_target, u) -> float:
    """Mean per-sample derivative-matching residual.

    For the Hamiltonian net this is the two-term structured residual
    ||dH/dp - q_dot|| + ||dH/dq + p_dot - G u|| averaged over samples; for
    the black-box net it is the plain regression residual ||f(x, u) - dx||.
    """
    loss, _ = _derivative_value_grad(model, S, x, dx_target, u, want_grad=False)
    return loss


def derivative_loss_grad(model, S: StructureMatrices, x, dx_target, u):
    loss, grad = _derivative_value_grad(model, S, x, dx_target, u, want_grad=True)
    return loss, grad


def _derivative_value_grad(model, S, x, dx_target, u, want_grad):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dx_target = np.atleast_2d(np.asarray(dx_target, dtype=float))
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = np.full((x.shape[0], 1), float(u))
    elif u.ndim == 1:
        u = u[:, None] if u.shape[0] == x.shape[0] else np.atleast_2d(u)
    weight = np.full(x.shape[0], 1.0 / x.shape[0])
    if isinstance(model, HamiltonianNet):
        return _derivative_batch_hnn(model, S, x, dx_target, u, weight, want_grad)
    if isinstance(model, BlackBoxNet):
        return _derivative_batch_mlp(model, x, dx_target, u, weight, want_grad)
    raise TypeError(f"unsupported model type {type(model).__name__}")


# ---------------------------------------------------------------------------
# Training driver.
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    model: object
    kind: str
    history: np.ndarray  # (epochs, 3): epoch, train_loss, val_loss
    best_epoch: int
    best_val_loss: float


def write_history_csv(history: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, train_loss, val_loss in history:
            fh.write(f"{int(epoch)},{train_loss:.17g},{val_loss:.17g}\n")


def _derivative_training_set(trajs, source, ts):
    xs, dxs, us, weights = [], [], [], []
    for tr in trajs:
        if source == "true":
            if tr.x_true is None or tr.dx_true is None:
                raise TrainingError("derivative_source='true' requires stored truth")
            x, dx = tr.x_true, tr.dx_true
        else:
            x, dx = tr.y, fd_derivatives(tr.y, ts)
        xs.append(x)
        dxs.append(dx)
        us.append(tr.u)
        weights.append(np.full(tr.n_samples, 1.0 / tr.n_samples))
    return (
        np.concatenate(xs),
        np.concatenate(dxs),
        np.concatenate(us),
        np.concatenate(weights),
    )


def fit(
    kind: str,
    dataset: Dataset,
    config: TrainConfig | None = None,
    initial_model=None,
) -> FitResult:
    """Train a model of the given kind and return the best-validation copy.

    One full-batch Adam step per epoch: the training loss and gradient are
    summed over all training trajectories (simulation loss for 'oe-hnn',
    derivative matching for 'hnn' and 'mlp'). Validation is always the
    simulation loss, so model selection is comparable across estimators.
    Pass `initial_model` to warm-start instead of drawing a fresh seeded
    initialization (used for staged chunked-then-full training).
    """
    config = config or TrainConfig()
    if kind not in ("oe-hnn", "hnn", "mlp"):
        raise ValueError(f"unknown model kind {kind!r}")
    if not dataset.train or not dataset.validation:
        raise TrainingError("dataset needs non-empty train and validation splits")

    S = structure_matrices(dataset.system)
    d = dataset.system.n_states
    m = dataset.system.n_inputs
    rng = np.random.default_rng(config.seed)
    if initial_model is not None:
        wants_hamiltonian = kind in ("oe-hnn", "hnn")
        if wants_hamiltonian != isinstance(initial_model, HamiltonianNet):
            raise TrainingError(f"initial_model type does not fit kind {kind!r}")
        template = initial_model
    elif kind == "mlp":
        template = init_blackbox_net(d, m, config.n_hidden, rng)
    else:
        template = init_hamiltonian_net(d, config.n_hidden, rng)
    theta = flatten_params(template)
    adam = init_adam(theta.size)

    if kind == "oe-hnn":
        if config.chunk_length is None:
            train_groups = [_traj_arrays(dataset.train, S, config.anchor)]
        else:
            train_groups = _chunk_arrays(dataset.train, S, config.anchor, config.chunk_length)
    else:
        x_fit, dx_fit, u_fit, w_fit = _derivative_training_set(
            dataset.train, config.derivative_source, dataset.ts
        )
    val_groups = [_traj_arrays(dataset.validation, S, config.anchor)]

    def train_loss_grad(model):
        if kind == "oe-hnn":
            total = 0.0
            grad = np.zeros_like(theta)
            n_dead = 0
            n_lanes = 0
            for x0, gu, y, h, weight in train_groups:
                lane_loss, g, diverged = _sim_batch(
                    model, S, x0, gu, y, h, weight, config.divergence_penalty, True
                )
                total += float(lane_loss.sum())
                grad += g
                n_dead += int((diverged >= 0).sum())
                n_lanes += len(lane_loss)
            return total, grad, n_dead == n_lanes
        if kind == "hnn":
            loss, g = _derivative_batch_hnn(model, S, x_fit, dx_fit, u_fit, w_fit, True)
        else:
            loss, g = _derivative_batch_mlp(model, x_fit, dx_fit, u_fit, w_fit, True)
        return loss, g, False

    def val_loss(model):
        total = 0.0
        for x0, gu, y, h, weight in val_groups:
            if kind == "mlp":
                lane_loss, diverged = _blackbox_sim_batch(
                    model, S, x0, gu, y, h, weight, config.divergence_penalty
                )
            else:
                lane_loss, _, diverged = _sim_batch(
                    model, S, x0, gu, y, h, weight, config.divergence_penalty, False
                )
            total += float(lane_loss.sum())
        return total

    history = []
    best_theta = theta.copy()
    best_val = np.inf
    best_epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        model = with_params(template, theta)
        tr_loss, grad, all_dead = train_loss_grad(model)
        if all_dead and epoch == 1:
            raise TrainingError(
                "every training rollout diverged at the first epoch; "
                "reduce the learning rate or set a chunk_length"
            )
        v_loss = val_loss(model)
        history.append((epoch, tr_loss, v_loss))
        if v_loss < best_val:
            best_val = v_loss
            best_theta = theta.copy()
            best_epoch = epoch
        elif epoch - best_epoch >= config.patience:
            break
        theta, adam = adam_step(theta, grad, adam, config)

    return FitResult(
        model=with_params(template, best_theta),
        kind=kind,
        history=np.array(history),
        best_epoch=best_epoch,
        best_val_loss=float(best_val),
    )


def _blackbox_sim_batch(net: BlackBoxNet, S, x0, gu, y, h, weight, penalty):
    """Forward-only rollout of the black-box field for validation loss.

    gu holds G @ u rows; the raw input is recovered from the G block so the
    same precomputed arrays serve both model families.
    """
    n_steps, B, d = gu.shape
    u = gu @ S.G  # (T, B, m): G has orthonormal columns
    xs = np.empty((n_steps + 1, B, d))
    xs[0] = x0
    diverged = np.full(B, -1, dtype=int)
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            uk = u[k]

            def f(state):
                z = np.concatenate([state, uk], axis=-1) @ net.w1.T + net.b1
                return np.tanh(z) @ net.w2.T + net.b2

            k1 = f(x)
            k2 = f(x + (h / 2.0) * k1)
            k3 = f(x + (h / 2.0) * k2)
            k4 = f(x + h * k3)
            x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = ~np.isfinite(x_next).all(axis=1)
            if bad.any():
                fresh = bad & (diverged < 0)
                diverged[fresh] = k + 1
                x_next = np.where(bad[:, None], 0.0, x_next)
            xs[k + 1] = x_next
            x = x_next
    live = diverged < 0
    norms = np.linalg.norm(xs[1:] - y[1:], axis=2)
    lane_loss = np.where(live, weight * norms.sum(axis=0), penalty)
    return lane_loss, diverged
