"""Scenario-approach estimate of the output reachable-set radius.

For ``N`` i.i.d. scenarios ``(chi0_i, u_i)`` the one-variable program

    min rho   s.t.   ||y(chi0_i, u_i)||_inf <= rho,   i = 1..N

is solved exactly by the largest scenario cost, where
``||y||_inf = sup_k |y(k)|_2`` over ``k = 0..tau``. With
``N >= (2/eps) (ln(1/beta) + d)`` the radius is exceeded with probability at
most ``eps`` at confidence ``1 - beta``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .lstm import LstmParams, LstmStack, outputs_of, simulate_states, DivergenceError
from .plant import PhPlantConfig, PhPlantState, simulate_plant_q3
from .signals import MprsClass, NormalizationSpec, denormalize, gen_mprs, normalize, substream


class ScenarioError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        super().__init__(f"scenario {index}: {cause}")


class UncertifiedSampleWarning(UserWarning):
    pass


def required_scenarios(epsilon: float, beta_conf: float, d: int = 1) -> int:
    """Smallest ``N`` with ``N >= (2/epsilon) (ln(1/beta_conf) + d)``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0 < beta_conf < 1:
        raise ValueError(f"beta_conf must be in (0, 1), got {beta_conf}")
    if d < 0:
        raise ValueError("d must be nonnegative")
    bound = (2.0 / epsilon) * (math.log(1.0 / beta_conf) + d)
    n = math.ceil(bound)
    # guard against a bound that is an integer up to rounding
    if n - 1 >= bound * (1 - 1e-15):
        n -= 1
    return max(int(n), 1)


@dataclass(frozen=True)
class ScenarioSpec:
    epsilon: float = 1e-2
    beta_conf: float = 1e-6
    d: int = 1
    N: int | None = None
    tau: int = 2000
    x0_box: float = 0.1
    input_class: MprsClass = field(default_factory=MprsClass)
    master_seed: int = 0
    certified: bool = True
    stream: int = 0

    def __post_init__(self):
        n_req = required_scenarios(self.epsilon, self.beta_conf, self.d)
        if self.N is None:
            object.__setattr__(self, "N", n_req)
        if self.N < 1 or self.tau < 1 or self.x0_box < 0:
            raise ValueError("N, tau must be positive and x0_box nonnegative")
        if self.certified and self.N < n_req:
            raise ValueError(f"N={self.N} is below the certified bound {n_req}; "
                             "pass certified=False for an exploratory run")
        if self.input_class.tau != self.tau:
            object.__setattr__(self, "input_class", replace(self.input_class, tau=self.tau))

    @property
    def n_required(self) -> int:
        return required_scenarios(self.epsilon, self.beta_conf, self.d)

    def with_rho(self, rho_u: float, stream: int | None = None) -> "ScenarioSpec":
        return replace(self, input_class=self.input_class.with_rho(rho_u),
                       stream=self.stream if stream is None else stream)


@dataclass
class ReachResult:
    rho_star: float
    per_scenario_max: np.ndarray
    argmax_scenario: int
    epsilon: float
    beta_conf: float
    N: int
    warning: str | None = None

    def to_json(self) -> dict:
        return {
            "rho_star": self.rho_star,
            "argmax_scenario": self.argmax_scenario,
            "epsilon": self.epsilon,
            "beta": self.beta_conf,
            "N": self.N,
            "warning": self.warning,
        }

    def denormalized_interval(self, norm_y: NormalizationSpec) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel output interval in raw units containing the ball."""
        lo = denormalize(-self.rho_star * np.ones_like(norm_y.mean), norm_y)
        hi = denormalize(self.rho_star * np.ones_like(norm_y.mean), norm_y)
        return lo, hi


class LstmSystem:
    """An LSTM (or stack) as a scenario system."""

    def __init__(self, network: LstmParams | LstmStack):
        self.network = network
        self.n_state = 2 * network.nx if isinstance(network, LstmParams) else network.state_dim
        self.n_u = network.nu

    def outputs(self, chi0, u_seq) -> np.ndarray:
        """Outputs ``y(0..tau)`` including the one read from the final state."""
        states = simulate_states(self.network, chi0, u_seq)
        return outputs_of(self.network, states)


class PlantSystem:
    """The pH plant seen through the dataset normalization.

    Scenario inputs are in model-normalized units; they are mapped to base
    flow through ``norm_u`` and clipped to the plant's admissible range. The
    plant starts from its steady state at the mean base flow, so its
    scenario state vector is empty (``n_state = 0``). Outputs are normalized
    with ``norm_y``.
    """

    n_state = 0
    n_u = 1

    def __init__(self, cfg: PhPlantConfig, norm_u: NormalizationSpec, norm_y: NormalizationSpec,
                 state0: PhPlantState | None = None):
        self.cfg = cfg
        self.norm_u = norm_u
        self.norm_y = norm_y
        if state0 is None:
            state0 = cfg.equilibrium(float(cfg.u_of(norm_u.mean[0])))
        self.state0 = state0
        self.q3_lo = float(cfg.q3_of(-1.0))
        self.q3_hi = float(cfg.q3_of(1.0))
        if self.q3_lo > self.q3_hi:
            self.q3_lo, self.q3_hi = self.q3_hi, self.q3_lo

    def outputs(self, chi0, u_seq) -> np.ndarray:
        q3 = denormalize(np.asarray(u_seq, dtype=np.float64).reshape(-1), self.norm_u)
        q3 = np.clip(q3, self.q3_lo, self.q3_hi)
        _, ph = simulate_plant_q3(self.cfg, self.state0, q3)
        return normalize(ph[:, None], self.norm_y)


def sequence_sup_norm(y: np.ndarray) -> float:
    """``sup_k |y(k)|_2`` of a ``(T, ny)`` output array."""
    return float(np.max(np.linalg.norm(y, axis=1)))


def sample_scenario(spec: ScenarioSpec, i: int, n_state: int, n_u: int | None = None):
    """Scenario ``i`` (1-based): ``chi0`` uniform on the box and an MPRS input.

    Fully determined by ``(master_seed, stream, i)``; initial state and input
    come from separate substreams, so systems with different state sizes
    see the same input sequence.
    """
    if not 1 <= i <= spec.N:
        raise IndexError(f"scenario index {i} outside 1..{spec.N}")
    h = spec.x0_box
    rng_x = substream(spec.master_seed, spec.stream, i, 0)
    chi0 = h * rng_x.uniform(-1.0, 1.0, n_state) if n_state else np.zeros(0)
    cls = spec.input_class
    if n_u is not None and n_u != cls.n_u:
        cls = replace(cls, n_u=n_u)
    u = gen_mprs(cls, substream(spec.master_seed, spec.stream, i, 1))
    return chi0, u


def scenario_cost(system, spec: ScenarioSpec, i: int) -> float:
    chi0, u = sample_scenario(spec, i, system.n_state, system.n_u)
    try:
        y = system.outputs(chi0, u)
    except (DivergenceError, ArithmeticError, RuntimeError) as exc:
        raise ScenarioError(i, exc) from exc
    cost = sequence_sup_norm(y)
    if not math.isfinite(cost):
        raise ScenarioError(i, FloatingPointError("non-finite output"))
    return cost


def estimate_rho(system, spec: ScenarioSpec, workers: int = 1) -> ReachResult:
    """Exact solution of the sampled program: the largest scenario cost.

    Scenario ``i`` is evaluated independently of all others, so the result
    (including ``argmax_scenario``, 1-based, first maximiser) does not
    depend on ``workers``.
    """
    idx = range(1, spec.N + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            costs = list(pool.map(lambda i: scenario_cost(system, spec, i), idx))
    else:
        costs = [scenario_cost(system, spec, i) for i in idx]
    costs = np.asarray(costs)
    k = int(np.argmax(costs))
    warn = None
    if spec.N < spec.n_required:
        warn = (f"exploratory run: N={spec.N} < {spec.n_required} required for "
                f"epsilon={spec.epsilon:g}, beta={spec.beta_conf:g}")
        warnings.warn(warn, UncertifiedSampleWarning, stacklevel=2)
    return ReachResult(float(costs[k]), costs, k + 1, spec.epsilon, spec.beta_conf, spec.N, warn)


def sweep_rho(system, base_spec: ScenarioSpec, rho_u_grid, workers: int = 1,
              return_results: bool = False):
    """``estimate_rho`` at each input amplitude; grid point ``g`` uses stream ``g``.

    Returns a list of ``(rho_u, rho_star)``, or of ``(rho_u, ReachResult)``
    with ``return_results=True``.
    """
    grid = [float(r) for r in rho_u_grid]
    if not grid:
        raise ValueError("empty rho_u grid")
    if any(not 0 < r <= 1 for r in grid):
        raise ValueError("rho_u values must lie in (0, 1]")
    out = []
    for g, r in enumerate(grid):
        res = estimate_rho(system, base_spec.with_rho(r, stream=g), workers)
        out.append((r, res if return_results else res.rho_star))
    return out
