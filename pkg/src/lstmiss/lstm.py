"""LSTM networks as time-invariant nonlinear state-space systems.

State convention: ``x`` is the hidden state and ``xi`` the cell state, with
``chi = [x, xi]``. One step::

    x+  = sg(Wf u + Uf xi + bf) * x + sg(Wi u + Ui xi + bi) * tanh(Wc u + Uc xi + bc)
    xi+ = sg(Wo u + Uo xi + bo) * tanh(x+)
    y   = C xi + by

The output is strictly proper: ``y(k)`` depends on ``chi(k)`` only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._backend import kernels

GATES = ("f", "i", "c", "o")

L_G = 0.25
L_C = 1.0


class ContractError(ValueError):
    """Inconsistent dimensions or non-finite parameters."""


class DivergenceError(ArithmeticError):
    """A simulated state became non-finite."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


def sigma_g(t):
    """Logistic sigmoid, values in (0, 1)."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-t))
    return float(out) if out.ndim == 0 else out


def sigma_c(t):
    """Hyperbolic tangent, values in (-1, 1)."""
    out = np.tanh(np.asarray(t, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def _matrix(name, value, rows, cols):
    a = np.array(value, dtype=np.float64)
    if a.ndim < 2 and a.size == rows * cols:
        a = a.reshape(rows, cols)
    if a.shape != (rows, cols):
        raise ContractError(f"{name}: expected shape {(rows, cols)}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name}: non-finite entries")
    return a


def _vector(name, value, n):
    a = np.array(value, dtype=np.float64).reshape(-1)
    if a.shape != (n,):
        raise ContractError(f"{name}: expected length {n}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name}: non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class LstmParams:
    """Weights of one strictly proper LSTM layer plus its affine output map.

    ``W*`` are ``(nx, nu)``, ``U*`` are ``(nx, nx)``, biases have length
    ``nx``, ``C`` is ``(ny, nx)`` and ``by`` has length ``ny``.
    """

    Wf: np.ndarray
    Uf: np.ndarray
    bf: np.ndarray
    Wi: np.ndarray
    Ui: np.ndarray
    bi: np.ndarray
    Wc: np.ndarray
    Uc: np.ndarray
    bc: np.ndarray
    Wo: np.ndarray
    Uo: np.ndarray
    bo: np.ndarray
    C: np.ndarray
    by: np.ndarray
    nx: int = field(init=False)
    nu: int = field(init=False)
    ny: int = field(init=False)

    def __post_init__(self):
        Uf = np.atleast_2d(np.asarray(self.Uf, dtype=np.float64))
        nx = Uf.shape[0]
        Wf = np.asarray(self.Wf, dtype=np.float64)
        C = np.asarray(self.C, dtype=np.float64)
        if Wf.size % nx or C.size % nx:
            raise ContractError(f"Wf has {Wf.size} and C has {C.size} entries; neither may be split into nx={nx} parts")
        nu = Wf.size // nx
        ny = C.size // nx
        if nx < 1 or nu < 1 or ny < 1:
            raise ContractError(f"dimensions must be positive, got nx={nx}, nu={nu}, ny={ny}")
        for g in GATES:
            object.__setattr__(self, f"W{g}", _matrix(f"W{g}", getattr(self, f"W{g}"), nx, nu))
            object.__setattr__(self, f"U{g}", _matrix(f"U{g}", getattr(self, f"U{g}"), nx, nx))
            object.__setattr__(self, f"b{g}", _vector(f"b{g}", getattr(self, f"b{g}"), nx))
        object.__setattr__(self, "C", _matrix("C", self.C, ny, nx))
        object.__setattr__(self, "by", _vector("by", self.by, ny))
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "ny", ny)

    @classmethod
    def zeros(cls, nx: int, nu: int, ny: int, **overrides) -> "LstmParams":
        """All-zero parameters, with selected entries overridden."""
        arrays = {}
        for g in GATES:
            arrays[f"W{g}"] = np.zeros((nx, nu))
            arrays[f"U{g}"] = np.zeros((nx, nx))
            arrays[f"b{g}"] = np.zeros(nx)
        arrays["C"] = np.zeros((ny, nx))
        arrays["by"] = np.zeros(ny)
        for key, value in overrides.items():
            if key not in arrays:
                raise ContractError(f"unknown parameter {key!r}")
            arrays[key] = np.broadcast_to(np.asarray(value, dtype=np.float64), arrays[key].shape).copy()
        return cls(**arrays)

    def packed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gate weights stacked as ``(W, U, b)`` in the kernel order f, i, c, o."""
        W = np.ascontiguousarray(np.vstack([getattr(self, f"W{g}") for g in GATES]))
        U = np.ascontiguousarray(np.vstack([getattr(self, f"U{g}") for g in GATES]))
        b = np.ascontiguousarray(np.concatenate([getattr(self, f"b{g}") for g in GATES]))
        return W, U, b

    @classmethod
    def from_packed(cls, W, U, b, C, by) -> "LstmParams":
        nx = U.shape[1]
        arrays = {}
        for k, g in enumerate(GATES):
            sl = slice(k * nx, (k + 1) * nx)
            arrays[f"W{g}"] = W[sl]
            arrays[f"U{g}"] = U[sl]
            arrays[f"b{g}"] = b[sl]
        return cls(C=C, by=by, **arrays)

    def as_dict(self) -> dict[str, np.ndarray]:
        names = [f"{p}{g}" for g in GATES for p in ("W", "U", "b")] + ["C", "by"]
        return {n: getattr(self, n) for n in names}

    def replace(self, **changes) -> "LstmParams":
        d = self.as_dict()
        d.update(changes)
        return LstmParams(**d)


@dataclass(frozen=True, eq=False)
class LstmState:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.array(self.x, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "xi", np.array(self.xi, dtype=np.float64).reshape(-1))
        if self.x.shape != self.xi.shape:
            raise ContractError("x and xi must have equal length")

    @property
    def chi(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi])

    @classmethod
    def from_chi(cls, chi) -> "LstmState":
        chi = np.asarray(chi, dtype=np.float64).reshape(-1)
        if chi.shape[0] % 2:
            raise ContractError("chi must have even length 2*nx")
        n = chi.shape[0] // 2
        return cls(chi[:n], chi[n:])

    @classmethod
    def zeros(cls, nx: int) -> "LstmState":
        return cls(np.zeros(nx), np.zeros(nx))


@dataclass(frozen=True, eq=False)
class LstmStack:
    """Layers chained through their cell states; output map of the last layer.

    The ``C``/``by`` of every layer but the last are ignored.
    """

    layers: tuple[LstmParams, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ContractError("a stack needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].nu != layers[k - 1].nx:
                raise ContractError(
                    f"layer {k} expects nu={layers[k].nu} but layer {k - 1} has nx={layers[k - 1].nx}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def nu(self) -> int:
        return self.layers[0].nu

    @property
    def ny(self) -> int:
        return self.layers[-1].ny

    @property
    def state_dim(self) -> int:
        return sum(2 * p.nx for p in self.layers)

    def split_chi(self, chi) -> list[np.ndarray]:
        chi = np.asarray(chi, dtype=np.float64).reshape(-1)
        if chi.shape[0] != self.state_dim:
            raise ContractError(f"stack state has length {self.state_dim}, got {chi.shape[0]}")
        out, pos = [], 0
        for p in self.layers:
            out.append(chi[pos:pos + 2 * p.nx])
            pos += 2 * p.nx
        return out


def _check_input(p: LstmParams, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.shape[0] != p.nu:
        raise ContractError(f"input has length {u.shape[0]}, expected {p.nu}")
    return u


def _check_state(p: LstmParams, s: LstmState) -> None:
    if s.x.shape[0] != p.nx:
        raise ContractError(f"state has nx={s.x.shape[0]}, network has nx={p.nx}")


def step(p: LstmParams, s: LstmState, u) -> LstmState:
    """One step of the recursion (no input box enforced here)."""
    u = _check_input(p, u)
    _check_state(p, s)
    f = sigma_g(p.Wf @ u + p.Uf @ s.xi + p.bf)
    i = sigma_g(p.Wi @ u + p.Ui @ s.xi + p.bi)
    c = np.tanh(p.Wc @ u + p.Uc @ s.xi + p.bc)
    o = sigma_g(p.Wo @ u + p.Uo @ s.xi + p.bo)
    x = np.atleast_1d(f * s.x + i * c)
    xi = np.atleast_1d(o * np.tanh(x))
    return LstmState(x, xi)


def output(p: LstmParams, s: LstmState) -> np.ndarray:
    """Affine read-out ``C xi + by``."""
    _check_state(p, s)
    return p.C @ s.xi + p.by


def _as_inputs(u_seq, nu: int) -> np.ndarray:
    u = np.asarray(u_seq, dtype=np.float64)
    if u.ndim == 1:
        u = u.reshape(-1, 1) if nu == 1 else u.reshape(1, -1)
    if u.ndim != 2 or u.shape[1] != nu:
        raise ContractError(f"input sequence must be (T, {nu}), got {np.shape(u_seq)}")
    if u.shape[0] < 1:
        raise ContractError("input sequence must have at least one sample")
    return np.ascontiguousarray(u)


def _raise_if_diverged(states: np.ndarray) -> None:
    bad = ~np.all(np.isfinite(states), axis=1)
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)))


def _layer_states(p: LstmParams, chi0: np.ndarray, u: np.ndarray) -> np.ndarray:
    if chi0.shape[0] != 2 * p.nx:
        raise ContractError(f"initial state has length {chi0.shape[0]}, expected {2 * p.nx}")
    W, U, b = p.packed()
    xs, xis = kernels.lstm_forward(W, U, b, chi0[:p.nx], chi0[p.nx:], u)
    states = np.hstack([xs, xis])
    _raise_if_diverged(states)
    return states


def simulate_states(system: LstmParams | LstmStack, chi0, u_seq) -> np.ndarray:
    """States ``chi(0..T)`` as a ``(T+1, state_dim)`` array."""
    if isinstance(system, LstmParams):
        system = LstmStack((system,))
    u = _as_inputs(u_seq, system.nu)
    blocks = []
    layer_in = u
    for p, c0 in zip(system.layers, system.split_chi(chi0)):
        states = _layer_states(p, c0, layer_in)
        blocks.append(states)
        # the next layer consumes this layer's freshly updated cell state
        layer_in = np.ascontiguousarray(states[1:, p.nx:])
    return np.hstack(blocks)


def outputs_of(system: LstmParams | LstmStack, states: np.ndarray) -> np.ndarray:
    """Outputs for each row of ``states`` (as returned by ``simulate_states``)."""
    last = system if isinstance(system, LstmParams) else system.layers[-1]
    xi = states[:, states.shape[1] - last.nx:]
    return xi @ last.C.T + last.by


def simulate(system: LstmParams | LstmStack, chi0, u_seq) -> tuple[np.ndarray, np.ndarray]:
    """Run the network from ``chi0``.

    Returns ``(states, outputs)`` where ``states`` holds ``chi(0..T)`` and
    ``outputs`` holds ``y(0..T-1)``; ``y(k)`` is read from ``chi(k)``, so the
    output sequence has the same length as the input sequence.

    Raises ``DivergenceError`` naming the first step with a non-finite state.
    """
    states = simulate_states(system, chi0, u_seq)
    return states, outputs_of(system, states[:-1])


# -- model file ---------------------------------------------------------------

def _layer_to_json(p: LstmParams) -> dict:
    d = {}
    for g in GATES:
        d[f"W_{g}"] = getattr(p, f"W{g}").tolist()
        d[f"U_{g}"] = getattr(p, f"U{g}").tolist()
        d[f"b_{g}"] = getattr(p, f"b{g}").tolist()
    return d


@dataclass
class Model:
    """A network together with the normalization it was trained under."""

    network: LstmParams | LstmStack
    norm: dict | None = None

    @property
    def stack(self) -> LstmStack:
        n = self.network
        return n if isinstance(n, LstmStack) else LstmStack((n,))

    def to_json(self) -> dict:
        layers = self.stack.layers
        last = layers[-1]
        doc = {
            "n_x": last.nx,
            "n_u": layers[0].nu,
            "n_y": last.ny,
            "layers": [_layer_to_json(p) for p in layers],
            "C": last.C.tolist(),
            "b_y": last.by.tolist(),
        }
        if self.norm is not None:
            doc["norm"] = self.norm
        return doc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def from_json(cls, doc: dict) -> "Model":
        try:
            raw_layers = doc["layers"]
            C = np.asarray(doc["C"], dtype=np.float64)
            by = np.asarray(doc["b_y"], dtype=np.float64).reshape(-1)
            n_u, n_y = int(doc["n_u"]), int(doc["n_y"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"malformed model document: {exc}") from exc
        if not raw_layers:
            raise ContractError("model has no layers")
        layers = []
        for k, L in enumerate(raw_layers):
            try:
                nx = len(L["U_f"])
                is_last = k == len(raw_layers) - 1
                Ck = C if is_last else np.zeros((n_y, nx))
                byk = by if is_last else np.zeros(n_y)
                arrays = {}
                for g in GATES:
                    arrays[f"W{g}"] = L[f"W_{g}"]
                    arrays[f"U{g}"] = L[f"U_{g}"]
                    arrays[f"b{g}"] = L[f"b_{g}"]
                layers.append(LstmParams(C=Ck, by=byk, **arrays))
            except KeyError as exc:
                raise ContractError(f"layer {k}: missing field {exc}") from exc
            except ContractError as exc:
                raise ContractError(f"layer {k}: {exc}") from exc
        stack = LstmStack(tuple(layers))
        if stack.nu != n_u or stack.ny != n_y:
            raise ContractError(f"declared n_u={n_u}, n_y={n_y} do not match the layers")
        if "n_x" in doc and int(doc["n_x"]) != layers[-1].nx:
            raise ContractError(f"declared n_x={doc['n_x']} does not match the last layer")
        network = layers[0] if len(layers) == 1 else stack
        return cls(network, doc.get("norm"))

    @classmethod
    def load(cls, path) -> "Model":
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ContractError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_json(doc)


def random_params(nx: int, nu: int, ny: int, scale: float, rng: np.random.Generator) -> LstmParams:
    """I.i.d. uniform entries on ``[-scale, scale]``."""
    arrays = {}
    for g in GATES:
        arrays[f"W{g}"] = rng.uniform(-scale, scale, (nx, nu))
        arrays[f"U{g}"] = rng.uniform(-scale, scale, (nx, nx))
        arrays[f"b{g}"] = rng.uniform(-scale, scale, nx)
    arrays["C"] = rng.uniform(-scale, scale, (ny, nx))
    arrays["by"] = rng.uniform(-scale, scale, ny)
    return LstmParams(**arrays)
