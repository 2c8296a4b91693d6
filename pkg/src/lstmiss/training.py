"""Simulation-error training with the ISS certificate enforced.

The objective is the free-run mean-square output error. The certificate
sides enter through an exact penalty::

    J(p) = mse(p) + mu * (max(0, lhs1 - 1 + delta_min) + max(0, lhs2 - 1 + delta_min))

minimised with Adam. The penalty aims ``penalty_buffer`` inside the accepted
region so that the iterates settle on the certified side of the boundary
instead of oscillating across it. ``mu`` grows by ``mu_growth`` at the end of every stage
that finishes infeasible. Only certified iterates (both sides below
``1 - delta_min``) are eligible for return, so a trained model is never
uncertified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .lstm import GATES, LstmParams, random_params, simulate
from .signals import substream
from .stability import gate_block, iss_check, norm_1_induced, norm_inf_induced

DIVERGED_LOSS = 1e300

PARAM_NAMES = ("W", "U", "b", "C", "by")


class TrainingFailedError(RuntimeError):
    """The iteration budget ran out before any certified iterate was found."""


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 3000
    lr: float = 1e-2
    lr_final: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mu0: float = 1.0
    mu_growth: float = 10.0
    stage_length: int = 100
    delta_min: float = 0.05
    penalty_buffer: float = 0.01
    washout: int = 50
    truncation: int = 0
    init_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.delta_min < 1.0:
            raise ValueError("delta_min must lie in (0, 1)")
        if not 0.0 <= self.penalty_buffer < 1.0 - self.delta_min:
            raise ValueError("penalty_buffer must lie in [0, 1 - delta_min)")
        if self.max_iterations < 0 or self.stage_length < 1:
            raise ValueError("max_iterations >= 0 and stage_length >= 1 required")
        if self.washout < 0 or self.truncation < 0:
            raise ValueError("washout and truncation must be nonnegative")
        if self.lr < 0 or self.lr_final < 0 or self.mu0 < 0 or self.mu_growth < 1:
            raise ValueError("learning rates and mu0 must be >= 0, mu_growth >= 1")

    def lr_at(self, it: int) -> float:
        """Geometric interpolation from ``lr`` to ``lr_final``."""
        if self.max_iterations <= 1 or self.lr == 0 or self.lr_final == 0:
            return self.lr
        frac = it / (self.max_iterations - 1)
        return self.lr * (self.lr_final / self.lr) ** frac


def _sequences(data) -> list[tuple[np.ndarray, np.ndarray]]:
    """Accept ``(u, y)`` or a list of such pairs."""
    if isinstance(data, tuple) and len(data) == 2 and np.ndim(data[0]) in (1, 2) \
            and not isinstance(data[0], tuple):
        data = [data]
    out = []
    for u, y in data:
        u = np.asarray(u, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        u = u[:, None] if u.ndim == 1 else u
        y = y[:, None] if y.ndim == 1 else y
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"input has {u.shape[0]} samples but output has {y.shape[0]}")
        out.append((np.ascontiguousarray(u), np.ascontiguousarray(y)))
    return out


def _pack(p: LstmParams) -> dict[str, np.ndarray]:
    W, U, b = p.packed()
    return {"W": W, "U": U, "b": b, "C": p.C.copy(), "by": p.by.copy()}


def _unpack(theta: dict[str, np.ndarray]) -> LstmParams:
    return LstmParams.from_packed(theta["W"], theta["U"], theta["b"], theta["C"], theta["by"])


def _loss_grad_packed(theta, seqs, washout, truncation):
    """Count-weighted loss over sequences; gradients summed in list order."""
    nx = theta["U"].shape[1]
    x0 = np.zeros(nx)
    total = sum(max(u.shape[0] - washout, 0) for u, _ in seqs)
    loss = 0.0
    grads = {k: np.zeros_like(v) for k, v in theta.items()}
    if total == 0:
        return 0.0, grads, False
    for u, y in seqs:
        n = u.shape[0] - washout
        if n <= 0:
            continue
        L, dW, dU, db, dC, dby = kernels.lstm_loss_grad(
            theta["W"], theta["U"], theta["b"], theta["C"], theta["by"],
            x0, x0, u, y, washout, truncation)
        w = n / total
        loss += w * L
        for k, g in zip(PARAM_NAMES, (dW, dU, db, dC, dby)):
            grads[k] += w * g
    diverged = not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values())
    return loss, grads, diverged


def mse_loss(p: LstmParams, data, washout: int = 0) -> float:
    """Free-run mean of ``|y_model(t) - y(t)|_2^2`` over ``t >= washout``.

    The model starts from the zero state. A divergent simulation returns
    ``DIVERGED_LOSS``.
    """
    loss, _, diverged = _loss_grad_packed(_pack(p), _sequences(data), washout, 0)
    return DIVERGED_LOSS if diverged else loss


def loss_gradient(p: LstmParams, data, config: TrainConfig | None = None) -> dict[str, np.ndarray]:
    """Exact gradient of the (truncation-windowed) loss, keyed like ``LstmParams``.

    With ``config.truncation = L > 0`` the states at times divisible by
    ``L`` are treated as constants, so gradients do not cross windows.
    """
    config = config or TrainConfig()
    _, grads, diverged = _loss_grad_packed(_pack(p), _sequences(data), config.washout, config.truncation)
    if diverged:
        raise FloatingPointError("divergent simulation while computing the gradient")
    return _packed_to_fields(grads, p.nx)


def _packed_to_fields(g: dict[str, np.ndarray], nx: int) -> dict[str, np.ndarray]:
    out = {}
    for k, gate in enumerate(GATES):
        sl = slice(k * nx, (k + 1) * nx)
        out[f"W{gate}"] = g["W"][sl]
        out[f"U{gate}"] = g["U"][sl]
        out[f"b{gate}"] = g["b"][sl]
    out["C"] = g["C"]
    out["by"] = g["by"]
    return out


def _fields_to_packed(g: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {
        "W": np.vstack([g[f"W{gate}"] for gate in GATES]),
        "U": np.vstack([g[f"U{gate}"] for gate in GATES]),
        "b": np.concatenate([g[f"b{gate}"] for gate in GATES]),
        "C": g["C"],
        "by": g["by"],
    }


def _dsig(t: float) -> float:
    s = 1.0 / (1.0 + math.exp(-t))
    return s * (1.0 - s)


def _sg(t: float) -> float:
    return 1.0 / (1.0 + math.exp(-t))


def _inf_norm_subgrad(p: LstmParams, gate: str) -> dict[str, np.ndarray]:
    """Subgradient of ``|[Wg Ug bg]|_inf``: signs of the first maximal row."""
    M = gate_block(p, gate)
    r = int(np.argmax(np.abs(M).sum(axis=1)))
    G = np.zeros_like(M)
    G[r] = np.sign(M[r])
    nu = p.nu
    return {f"W{gate}": G[:, :nu], f"U{gate}": G[:, nu:nu + p.nx], f"b{gate}": G[:, -1]}


def _one_norm_subgrad(A: np.ndarray) -> np.ndarray:
    """Subgradient of ``|A|_1``: signs of the first maximal column."""
    c = int(np.argmax(np.abs(A).sum(axis=0)))
    G = np.zeros_like(A)
    G[:, c] = np.sign(A[:, c])
    return G


@dataclass(frozen=True)
class ConstraintValues:
    lhs1: float
    lhs2: float
    grad1: dict[str, np.ndarray]
    grad2: dict[str, np.ndarray]


def constraint_values(p: LstmParams) -> ConstraintValues:
    """Certificate sides and subgradients (keys are ``LstmParams`` fields).

    Ties in the active row/column are broken towards the lowest index.
    """
    a_o = norm_inf_induced(gate_block(p, "o"))
    a_f = norm_inf_induced(gate_block(p, "f"))
    a_i = norm_inf_induced(gate_block(p, "i"))
    n_c = norm_1_induced(p.Uc)
    so, sf, si = _sg(a_o), _sg(a_f), _sg(a_i)
    lhs1 = (1.0 + so) * sf
    lhs2 = (1.0 + so) * si * n_c

    zeros = {k: np.zeros_like(v) for k, v in p.as_dict().items()}
    go, gf, gi = (_inf_norm_subgrad(p, g) for g in "ofi")
    gc = _one_norm_subgrad(p.Uc)

    g1 = {k: v.copy() for k, v in zeros.items()}
    for k, v in go.items():
        g1[k] += _dsig(a_o) * sf * v
    for k, v in gf.items():
        g1[k] += (1.0 + so) * _dsig(a_f) * v

    g2 = {k: v.copy() for k, v in zeros.items()}
    for k, v in go.items():
        g2[k] += _dsig(a_o) * si * n_c * v
    for k, v in gi.items():
        g2[k] += (1.0 + so) * _dsig(a_i) * n_c * v
    g2["Uc"] += (1.0 + so) * si * gc
    return ConstraintValues(lhs1, lhs2, g1, g2)


def violation(lhs1: float, lhs2: float, delta_min: float) -> float:
    """Total amount by which the sides exceed ``1 - delta_min``."""
    bound = 1.0 - delta_min
    return max(0.0, lhs1 - bound) + max(0.0, lhs2 - bound)


def is_feasible(lhs1: float, lhs2: float, delta_min: float) -> bool:
    return lhs1 < 1.0 - delta_min and lhs2 < 1.0 - delta_min


def init_params(nx: int, nu: int, ny: int, config: TrainConfig | None = None) -> LstmParams:
    """Uniform ``[-r, r]`` weights, halving ``r`` until ``delta >= delta_min``."""
    config = config or TrainConfig()
    rng = substream(config.seed, 0)
    r = config.init_scale
    for _ in range(60):
        p = random_params(nx, nu, ny, r, rng)
        cert = iss_check(p)
        if cert.delta >= config.delta_min:
            return p
        r *= 0.5
    raise TrainingFailedError("could not draw a certified initialisation")


@dataclass
class TrainingHistory:
    loss: list[float] = field(default_factory=list)
    lhs1: list[float] = field(default_factory=list)
    lhs2: list[float] = field(default_factory=list)
    mu: list[float] = field(default_factory=list)
    stage_violation: list[float] = field(default_factory=list)
    best_iteration: int = -1
    best_loss: float = math.inf

    def rows(self):
        for k, (L, a, b) in enumerate(zip(self.loss, self.lhs1, self.lhs2)):
            yield k, L, a, b


class _Adam:
    def __init__(self, theta, config: TrainConfig):
        self.c = config
        self.m = {k: np.zeros_like(v) for k, v in theta.items()}
        self.v = {k: np.zeros_like(v) for k, v in theta.items()}
        self.t = 0

    def step(self, theta, grads, lr):
        self.t += 1
        b1, b2 = self.c.beta1, self.c.beta2
        for k in theta:
            self.m[k] = b1 * self.m[k] + (1 - b1) * grads[k]
            self.v[k] = b2 * self.v[k] + (1 - b2) * grads[k] ** 2
            mh = self.m[k] / (1 - b1 ** self.t)
            vh = self.v[k] / (1 - b2 ** self.t)
            theta[k] = theta[k] - lr * mh / (np.sqrt(vh) + self.c.eps)


def train(p0: LstmParams, data, config: TrainConfig | None = None,
          callback=None) -> tuple[LstmParams, TrainingHistory]:
    """Minimise the penalised free-run loss from ``p0``.

    Returns the certified iterate with the lowest training loss and the
    per-iteration history. Raises ``TrainingFailedError`` if no iterate
    (including ``p0`` and the final one) is certified with margin
    ``delta_min``.
    """
    config = config or TrainConfig()
    seqs = _sequences(data)
    short = [u.shape[0] for u, _ in seqs if u.shape[0] <= config.washout]
    if short:
        raise ValueError(f"washout {config.washout} is not shorter than a sequence of length {short[0]}")
    theta = _pack(p0)
    opt = _Adam(theta, config)
    mu = config.mu0
    hist = TrainingHistory()
    best = None
    dmin = config.delta_min

    for it in range(config.max_iterations + 1):
        p = _unpack(theta)
        loss, grads, diverged = _loss_grad_packed(theta, seqs, config.washout, config.truncation)
        cv = constraint_values(p)
        hist.loss.append(DIVERGED_LOSS if diverged else loss)
        hist.lhs1.append(cv.lhs1)
        hist.lhs2.append(cv.lhs2)
        hist.mu.append(mu)
        if not diverged and is_feasible(cv.lhs1, cv.lhs2, dmin) and loss < hist.best_loss:
            best = p
            hist.best_loss = loss
            hist.best_iteration = it
        if callback is not None:
            callback(it, loss, cv.lhs1, cv.lhs2)
        if it == config.max_iterations:
            break
        if (it + 1) % config.stage_length == 0:
            v = violation(cv.lhs1, cv.lhs2, dmin)
            hist.stage_violation.append(v)
            if v > 0.0:
                mu *= config.mu_growth
        if diverged:
            grads = {k: np.zeros_like(v) for k, v in theta.items()}
        pen = _fields_to_packed(_penalty_grad(cv, dmin + config.penalty_buffer, p))
        total = {k: grads[k] + mu * pen[k] for k in theta}
        opt.step(theta, total, config.lr_at(it))

    if best is None:
        last = hist.lhs1[-1], hist.lhs2[-1]
        raise TrainingFailedError(
            f"no certified iterate after {config.max_iterations} iterations "
            f"(final lhs1={last[0]:.4f}, lhs2={last[1]:.4f}, required < {1 - dmin:.4f})"
        )
    return best, hist


def _penalty_grad(cv: ConstraintValues, delta_min: float, p: LstmParams) -> dict[str, np.ndarray]:
    bound = 1.0 - delta_min
    out = {k: np.zeros_like(v) for k, v in p.as_dict().items()}
    if cv.lhs1 > bound:
        for k, v in cv.grad1.items():
            out[k] += v
    if cv.lhs2 > bound:
        for k, v in cv.grad2.items():
            out[k] += v
    return out


def fit_index(y_val, y_model) -> float:
    """``100 (1 - |y_val - y_model|_2 / |y_val|_2)`` over the stacked sequences."""
    a = np.asarray(y_val, dtype=np.float64)
    b = np.asarray(y_model, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    ref = float(np.linalg.norm(a.ravel()))
    if ref == 0.0:
        raise ValueError("reference output has zero norm")
    return 100.0 * (1.0 - float(np.linalg.norm((a - b).ravel())) / ref)


def free_run(p: LstmParams, u, chi0=None) -> np.ndarray:
    """Outputs ``y(0..T-1)`` of a free-run simulation (zero state by default)."""
    u = np.asarray(u, dtype=np.float64)
    chi0 = np.zeros(2 * p.nx) if chi0 is None else chi0
    return simulate(p, chi0, u)[1]
