"""Input-to-state stability certificate for LSTM layers.

The certificate is a sufficient condition on the weights alone::

    lhs1 = (1 + sg(|[Wo Uo bo]|_inf)) * sg(|[Wf Uf bf]|_inf)            < 1
    lhs2 = (1 + sg(|[Wo Uo bo]|_inf)) * sg(|[Wi Ui bi]|_inf) * |Uc|_1   < 1

With ``delta = min(1 - lhs1, 1 - lhs2) > 0`` the function ``V(chi) = |chi|_1``
is an ISS-Lyapunov function:

    |chi|_2 <= V(chi) <= sqrt(2 nx) |chi|_2
    V(chi+) - V(chi) <= -delta |chi|_2 + 2 |Wc|_1 sqrt(nu) |u|_2 + 2 sqrt(nx) |bc|_2

for every ``u`` in ``[-1, 1]^nu`` and ``xi`` in ``(-1, 1)^nx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lstm import ContractError, LstmParams, LstmStack, LstmState, sigma_g, step

DECREASE_SLACK = 1e-10


class CertificateRequiredError(ValueError):
    """Raised when an operation needs a certified network (delta > 0)."""


class BoxPreconditionError(ValueError):
    """Raised when u or xi lie outside the boxes the bounds assume."""


def norm_1_induced(A) -> float:
    """Induced 1-norm: largest column absolute sum."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.size == 0:
        raise ContractError("induced norm of an empty matrix")
    return float(np.max(np.sum(np.abs(A), axis=0)))


def norm_inf_induced(A) -> float:
    """Induced infinity-norm: largest row absolute sum."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.size == 0:
        raise ContractError("induced norm of an empty matrix")
    return float(np.max(np.sum(np.abs(A), axis=1)))


def gate_block(p: LstmParams, gate: str) -> np.ndarray:
    """Horizontal concatenation ``[W U b]`` of one gate."""
    return np.hstack([getattr(p, f"W{gate}"), getattr(p, f"U{gate}"), getattr(p, f"b{gate}")[:, None]])


@dataclass(frozen=True)
class IssCertificate:
    lhs1: float
    lhs2: float
    delta: float
    is_iss: bool
    per_layer: tuple["IssCertificate", ...] = field(default=())

    def to_json(self) -> dict:
        return {
            "lhs1": self.lhs1,
            "lhs2": self.lhs2,
            "delta": self.delta,
            "is_iss": self.is_iss,
            "per_layer": [c.to_json() for c in self.per_layer],
        }


def certificate_sides(p: LstmParams) -> tuple[float, float]:
    so = sigma_g(norm_inf_induced(gate_block(p, "o")))
    sf = sigma_g(norm_inf_induced(gate_block(p, "f")))
    si = sigma_g(norm_inf_induced(gate_block(p, "i")))
    lhs1 = (1.0 + so) * sf
    lhs2 = (1.0 + so) * si * norm_1_induced(p.Uc)
    return lhs1, lhs2


def iss_check(p: LstmParams) -> IssCertificate:
    """Evaluate the sufficient ISS condition for one layer."""
    lhs1, lhs2 = certificate_sides(p)
    delta = min(1.0 - lhs1, 1.0 - lhs2)
    return IssCertificate(lhs1, lhs2, delta, delta > 0.0)


def iss_check_stack(s: LstmStack | LstmParams) -> IssCertificate:
    """A stack is certified when every layer is; ``delta`` is the worst layer's.

    The summary ``lhs1``/``lhs2`` are the maxima over layers.
    """
    if isinstance(s, LstmParams):
        s = LstmStack((s,))
    certs = tuple(iss_check(p) for p in s.layers)
    return IssCertificate(
        lhs1=max(c.lhs1 for c in certs),
        lhs2=max(c.lhs2 for c in certs),
        delta=min(c.delta for c in certs),
        is_iss=all(c.is_iss for c in certs),
        per_layer=certs,
    )


def lyapunov_V(chi) -> float:
    """``V(chi) = |chi|_1``."""
    return float(np.sum(np.abs(np.asarray(chi, dtype=np.float64))))


def input_gain(p: LstmParams) -> float:
    """Coefficient of ``|u|_2`` in the decrease bound: ``2 |Wc|_1 sqrt(nu)``."""
    return 2.0 * norm_1_induced(p.Wc) * math.sqrt(p.nu)


def bias_forcing(p: LstmParams) -> float:
    """Bias term of the decrease bound: ``2 sqrt(nx) |bc|_2``."""
    return 2.0 * math.sqrt(p.nx) * float(np.linalg.norm(p.bc))


@dataclass(frozen=True)
class LyapunovReport:
    V: float
    V_next: float
    decrease_lhs: float
    decrease_rhs: float
    satisfied: bool


def _require_certified(p: LstmParams) -> IssCertificate:
    cert = iss_check(p)
    if not cert.is_iss:
        raise CertificateRequiredError(
            f"network is not certified (lhs1={cert.lhs1:.6g}, lhs2={cert.lhs2:.6g})"
        )
    return cert


def lyapunov_decrease(p: LstmParams, s: LstmState, u) -> LyapunovReport:
    """Check the one-step decrease of ``V`` at ``(chi, u)``."""
    cert = _require_certified(p)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if np.any(np.abs(u) > 1.0):
        raise BoxPreconditionError("u must lie in [-1, 1]^nu")
    if np.any(np.abs(s.xi) >= 1.0):
        raise BoxPreconditionError("xi must lie in (-1, 1)^nx")
    nxt = step(p, s, u)
    V = lyapunov_V(s.chi)
    V_next = lyapunov_V(nxt.chi)
    lhs = V_next - V
    rhs = (-cert.delta * float(np.linalg.norm(s.chi))
           + input_gain(p) * float(np.linalg.norm(u)) + bias_forcing(p))
    return LyapunovReport(V, V_next, lhs, rhs, lhs <= rhs + DECREASE_SLACK)


def decrease_margins(p: LstmParams, x, xi, u) -> np.ndarray:
    """Vectorised ``rhs - lhs`` of the decrease inequality for many samples.

    ``x``, ``xi`` are ``(n, nx)`` and ``u`` is ``(n, nu)``. A sample
    satisfies the inequality when its margin is ``>= -DECREASE_SLACK``.
    Box preconditions are the caller's responsibility here.
    """
    cert = _require_certified(p)
    x = np.atleast_2d(x)
    xi = np.atleast_2d(xi)
    u = np.atleast_2d(u)
    sg = lambda t: 1.0 / (1.0 + np.exp(-t))  # noqa: E731
    f = sg(u @ p.Wf.T + xi @ p.Uf.T + p.bf)
    i = sg(u @ p.Wi.T + xi @ p.Ui.T + p.bi)
    c = np.tanh(u @ p.Wc.T + xi @ p.Uc.T + p.bc)
    o = sg(u @ p.Wo.T + xi @ p.Uo.T + p.bo)
    x_next = f * x + i * c
    xi_next = o * np.tanh(x_next)
    V = np.abs(x).sum(axis=1) + np.abs(xi).sum(axis=1)
    V_next = np.abs(x_next).sum(axis=1) + np.abs(xi_next).sum(axis=1)
    chi_norm = np.sqrt(np.sum(x * x, axis=1) + np.sum(xi * xi, axis=1))
    rhs = -cert.delta * chi_norm + input_gain(p) * np.linalg.norm(u, axis=1) + bias_forcing(p)
    return rhs - (V_next - V)


def analytic_state_bound(p: LstmParams, u_sup: float) -> tuple[float, float]:
    """Geometric consequence of the decrease inequality.

    Using ``|chi|_2 >= V / sqrt(2 nx)``::

        V+ <= rate * V + s,   rate = 1 - delta / sqrt(2 nx),
                              s = 2 |Wc|_1 sqrt(nu) u_sup + 2 sqrt(nx) |bc|_2

    so every trajectory with ``V(chi0) <= radius = s sqrt(2 nx) / delta``
    (and ``|u(k)|_2 <= u_sup``) keeps ``|chi(k)|_2 <= V(chi(k)) <= radius``,
    and every other trajectory enters that set geometrically. Conservative.

    Returns ``(rate, radius)``.
    """
    if u_sup < 0:
        raise ValueError("u_sup must be nonnegative")
    cert = iss_check(p)
    if cert.delta <= 0:
        raise CertificateRequiredError(f"delta = {cert.delta:.6g} <= 0; no bound available")
    r2 = math.sqrt(2 * p.nx)
    rate = 1.0 - cert.delta / r2
    s = input_gain(p) * u_sup + bias_forcing(p)
    return rate, s * r2 / cert.delta
