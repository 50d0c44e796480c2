"""Mesh-free neural surrogate of a nodal P1 field: tanh MLP with a bias-free
linear output, boundary enforcement by distance-function multiplication, and
full-batch Adam followed by L-BFGS training."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, PolygonDomain


@dataclass
class TrainConfig:
    adam_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_target: float = 1e-6
    adam_epoch_cap: int = 20000
    # Warm starts hand over to L-BFGS quickly: a short Adam phase to shake
    # off the stale basin, then quasi-Newton polish with a deep history.
    adam_epoch_cap_warm: int = 100
    lbfgs_history: int = 50
    lbfgs_cap: int = 3000
    stagnation_rtol: float = 1e-10
    stagnation_window: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.adam_lr <= 0 or self.loss_target <= 0:
            raise ValueError("rates and targets must be positive")
        if min(self.adam_epoch_cap, self.lbfgs_cap, self.lbfgs_history) <= 0:
            raise ValueError("caps must be positive")


@dataclass
class TrainReport:
    adam_epochs: int
    lbfgs_iters: int
    final_loss: float
    wall_seconds: float
    aborted: bool = False


class SurrogateNet:
    """tanh MLP u(x) scaled by the domain's boundary distance.

    The output layer is linear with its bias pinned to zero, so the scaled
    network vanishes on the boundary for any parameters. An optional lift
    adds non-homogeneous Dirichlet data.
    """

    def __init__(self, layer_dims, domain: PolygonDomain, weights, biases, lift=None):
        if len(layer_dims) < 2 or layer_dims[0] != 2 or layer_dims[-1] != 1:
            raise ValueError("layer dims must run from 2 inputs to 1 output")
        self.layer_dims = list(layer_dims)
        self.domain = domain
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.lift = lift
        for k, (din, dout) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            if self.weights[k].shape != (dout, din):
                raise ValueError("weight shape mismatch")
        if len(self.biases) != len(self.weights) - 1:
            raise ValueError("one bias vector per hidden layer (output has none)")

    @property
    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def raw_forward(self, points: np.ndarray) -> np.ndarray:
        """Unscaled network values u_theta(x), shape (m,)."""
        a = np.atleast_2d(np.asarray(points, dtype=float))
        for w, b in zip(self.weights[:-1], self.biases):
            a = np.tanh(a @ w.T + b)
        return (a @ self.weights[-1].T).ravel()

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = self.domain.distance(p) * self.raw_forward(p)
        if self.lift is not None:
            out = out + np.asarray(self.lift(p), dtype=float)
        return out if np.asarray(points).ndim == 2 else out[0]

    def pack(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights]
                              + [b.ravel() for b in self.biases])

    def unpack(self, theta: np.ndarray) -> None:
        i = 0
        for w in self.weights:
            w[...] = theta[i : i + w.size].reshape(w.shape)
            i += w.size
        for b in self.biases:
            b[...] = theta[i : i + b.size]
            i += b.size

    def copy(self) -> "SurrogateNet":
        return SurrogateNet(
            self.layer_dims,
            self.domain,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.lift,
        )

    def save(self, path) -> None:
        np.savez(path, dims=np.asarray(self.layer_dims), theta=self.pack())

    @classmethod
    def load(cls, path, domain: PolygonDomain, lift=None) -> "SurrogateNet":
        data = np.load(path)
        dims = [int(d) for d in data["dims"]]
        net = init_net(dims, domain, seed=0, lift=lift)
        net.unpack(data["theta"])
        return net


def init_net(layer_dims, domain: PolygonDomain, seed: int = 0, lift=None) -> SurrogateNet:
    """Kaiming-normal weights (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for k, (din, dout) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / din), size=(dout, din)))
        if k < len(layer_dims) - 2:
            biases.append(np.zeros(dout))
    return SurrogateNet(layer_dims, domain, weights, biases, lift)


def loss(net: SurrogateNet, mesh: Mesh, target) -> float:
    """Mean squared nodal mismatch over all mesh vertices."""
    t = np.asarray(getattr(target, "nodal_values", target), dtype=float)
    pred = net(mesh.vertices)
    return float(np.mean((pred - t) ** 2))


def _loss_and_grad(net: SurrogateNet, points, dist, targets, lift_vals):
    """Full-batch loss and parameter gradient via reverse-mode backprop."""
    m = len(points)
    activations = [points]
    a = points
    for w, b in zip(net.weights[:-1], net.biases):
        a = np.tanh(a @ w.T + b)
        activations.append(a)
    y = (a @ net.weights[-1].T).ravel()
    pred = dist * y + lift_vals
    r = pred - targets
    value = float(np.mean(r ** 2))

    dy = (2.0 / m) * (r * dist)  # dL/dy, shape (m,)
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    grads_w[-1] = dy[None, :] @ activations[-1]
    delta = dy[:, None] @ net.weights[-1]  # (m, d_{L-1})
    for k in range(len(net.biases) - 1, -1, -1):
        delta = delta * (1.0 - activations[k + 1] ** 2)
        grads_w[k] = delta.T @ activations[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ net.weights[k]
    flat = np.concatenate([g.ravel() for g in grads_w] + [g.ravel() for g in grads_b])
    return value, flat


def gradient(net: SurrogateNet, mesh: Mesh, target) -> np.ndarray:
    """Exact gradient of the nodal MSE loss w.r.t. all trainable parameters."""
    pts = mesh.vertices
    dist = net.domain.distance(pts)
    lift_vals = (np.asarray(net.lift(pts), dtype=float)
                 if net.lift is not None else np.zeros(len(pts)))
    t = np.asarray(getattr(target, "nodal_values", target), dtype=float)
    _, g = _loss_and_grad(net, pts, dist, t, lift_vals)
    return g


def train(net: SurrogateNet, mesh: Mesh, target, cfg: TrainConfig,
          warm: bool = False) -> tuple[SurrogateNet, TrainReport]:
    """Adam to the loss target (or epoch cap), then L-BFGS to stagnation.

    The input net's parameters are the starting point; the net is trained in
    place and also returned.
    """
    t0 = time.perf_counter()
    pts = mesh.vertices
    dist = net.domain.distance(pts)
    lift_vals = (np.asarray(net.lift(pts), dtype=float)
                 if net.lift is not None else np.zeros(len(pts)))
    targets = np.asarray(getattr(target, "nodal_values", target), dtype=float)

    def objective(theta):
        net.unpack(theta)
        return _loss_and_grad(net, pts, dist, targets, lift_vals)

    theta = net.pack()
    cap = cfg.adam_epoch_cap_warm if warm else cfg.adam_epoch_cap
    value, g = objective(theta)
    if not np.isfinite(value):
        return net, TrainReport(0, 0, value, time.perf_counter() - t0, aborted=True)

    adam_epochs = 0
    if value > cfg.loss_target:
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        for step in range(1, cap + 1):
            m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * g
            v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * g ** 2
            mhat = m / (1 - cfg.adam_beta1 ** step)
            vhat = v / (1 - cfg.adam_beta2 ** step)
            theta = theta - cfg.adam_lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
            value, g = objective(theta)
            adam_epochs = step
            if not np.isfinite(value):
                return net, TrainReport(adam_epochs, 0, value,
                                        time.perf_counter() - t0, aborted=True)
            if value <= cfg.loss_target:
                break

    lbfgs_iters, value = _lbfgs(objective, theta, value, g, cfg)
    return net, TrainReport(adam_epochs, lbfgs_iters, value, time.perf_counter() - t0)


def _lbfgs(objective, theta, value, g, cfg: TrainConfig):
    """Two-loop-recursion L-BFGS with Armijo backtracking."""
    if value <= cfg.loss_target:
        objective(theta)
        return 0, value
    s_hist, y_hist, rho_hist = [], [], []
    stagnant = 0
    iters = 0
    for _ in range(cfg.lbfgs_cap):
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            alpha = rho * (s @ q)
            alphas.append(alpha)
            q -= alpha * y
        if y_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            q *= gamma
        for s, y, rho, alpha in zip(s_hist, y_hist, rho_hist, reversed(alphas)):
            beta = rho * (y @ q)
            q += s * (alpha - beta)
        direction = -q
        slope = g @ direction
        if slope >= 0.0:  # not a descent direction; restart from steepest descent
            direction = -g
            slope = -(g @ g)
            s_hist, y_hist, rho_hist = [], [], []
        step = 1.0
        accepted = False
        for _ in range(40):
            trial = theta + step * direction
            new_value, new_g = objective(trial)
            if np.isfinite(new_value) and new_value <= value + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            objective(theta)
            break
        s = trial - theta
        yv = new_g - g
        sy = s @ yv
        if sy > 1e-14:
            s_hist.append(s)
            y_hist.append(yv)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > cfg.lbfgs_history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        rel_drop = (value - new_value) / max(value, 1e-300)
        theta, value, g = trial, new_value, new_g
        iters += 1
        if value <= cfg.loss_target:
            break
        stagnant = stagnant + 1 if rel_drop < cfg.stagnation_rtol else 0
        if stagnant >= cfg.stagnation_window:
            break
    objective(theta)  # leave the net at the accepted minimizer
    return iters, value
