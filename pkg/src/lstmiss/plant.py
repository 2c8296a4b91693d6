"""pH neutralization benchmark plant (third-order surrogate).

One stirred tank receives an acid stream ``q1``, a buffer stream ``q2`` and
a base stream ``q3`` (the manipulated input); the outflow is driven by the
liquid level. The states are the reaction invariants ``Wa``, ``Wb`` and the
level ``h``::

    dh/dt  = (q1 + q2 + q3 - cv sqrt(h)) / area
    dWa/dt = sum_j q_j (Wa_j - Wa) / (area h)
    dWb/dt = sum_j q_j (Wb_j - Wb) / (area h)

and the output pH is the root of the charge balance::

    Wa + 10^(pH-14) - 10^(-pH) + Wb (1 + 2 10^(pH-pK2)) / (1 + 10^(pK1-pH) + 10^(pH-pK2)) = 0

Every constant lives in a JSON config; the packaged default is
``data/ph_plant.json``. Flows are in mL/s, concentrations in mol/L, the level
in cm and the area in cm^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import _pure
from ._backend import kernels
from .signals import (MprsClass, NormalizationSpec, add_white_noise, fit_normalization, gen_mprs,
                      normalize, substream)


class PlantError(RuntimeError):
    pass


class TankEmptyError(PlantError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"tank level reached zero at sample {step}")


class InfeasibleChemistryError(PlantError):
    pass


@dataclass(frozen=True)
class Stream:
    Wa: float
    Wb: float


@dataclass(frozen=True)
class PhPlantConfig:
    acid: Stream = field(default_factory=lambda: Stream(3.0e-3, 0.0))
    buffer: Stream = field(default_factory=lambda: Stream(-3.0e-2, 3.0e-2))
    base: Stream = field(default_factory=lambda: Stream(-3.05e-3, 5.0e-5))
    q1: float = 16.6
    q2: float = 0.55
    area: float = 207.0
    cv: float = 8.75
    pK1: float = 6.35
    pK2: float = 10.25
    Ts: float = 10.0
    substeps: int = 10
    q3_nominal: float = 15.6
    q3_gain: float = 3.4

    def __post_init__(self):
        values = [self.q1, self.q2, self.area, self.cv, self.pK1, self.pK2, self.Ts,
                  self.q3_nominal, self.q3_gain]
        for s in (self.acid, self.buffer, self.base):
            values += [s.Wa, s.Wb]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("plant config has non-finite entries")
        if self.area <= 0 or self.cv < 0 or self.Ts <= 0 or self.substeps < 1:
            raise ValueError("area and Ts must be positive, cv nonnegative, substeps >= 1")
        if self.q3_nominal - abs(self.q3_gain) < 0:
            raise ValueError("q3 map must keep q3 >= 0 for u in [-1, 1]")

    @classmethod
    def from_json(cls, doc: dict) -> "PhPlantConfig":
        doc = dict(doc)
        doc.pop("version", None)
        doc.pop("description", None)
        streams = doc.pop("streams", {})
        kwargs = {k: Stream(**v) for k, v in streams.items()}
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown plant config keys: {sorted(unknown)}")
        return cls(**kwargs, **doc)

    @classmethod
    def load(cls, path=None) -> "PhPlantConfig":
        if path is None:
            text = resources.files("lstmiss").joinpath("data/ph_plant.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json(json.loads(text))

    def to_json(self) -> dict:
        d = asdict(self)
        streams = {k: d.pop(k) for k in ("acid", "buffer", "base")}
        return {"version": 1, "streams": streams, **d}

    def param_vector(self) -> np.ndarray:
        p = np.empty(_pure.N_PLANT_PARAMS)
        p[_pure.Q1] = self.q1
        p[_pure.Q2] = self.q2
        p[_pure.WA1], p[_pure.WB1] = self.acid.Wa, self.acid.Wb
        p[_pure.WA2], p[_pure.WB2] = self.buffer.Wa, self.buffer.Wb
        p[_pure.WA3], p[_pure.WB3] = self.base.Wa, self.base.Wb
        p[_pure.AREA] = self.area
        p[_pure.CV] = self.cv
        p[_pure.PK1] = self.pK1
        p[_pure.PK2] = self.pK2
        return p

    def q3_of(self, u):
        """Base flow for plant-normalized input ``u``."""
        return self.q3_nominal + self.q3_gain * np.asarray(u, dtype=np.float64)

    def u_of(self, q3):
        return (np.asarray(q3, dtype=np.float64) - self.q3_nominal) / self.q3_gain

    def equilibrium(self, u: float = 0.0) -> "PhPlantState":
        """Steady state for a constant input (requires ``cv > 0``)."""
        q3 = float(self.q3_of(u))
        qt = self.q1 + self.q2 + q3
        if self.cv <= 0 or qt <= 0:
            raise PlantError("no steady state without outflow or inflow")
        Wa = (self.q1 * self.acid.Wa + self.q2 * self.buffer.Wa + q3 * self.base.Wa) / qt
        Wb = (self.q1 * self.acid.Wb + self.q2 * self.buffer.Wb + q3 * self.base.Wb) / qt
        return PhPlantState(Wa, Wb, (qt / self.cv) ** 2)


@dataclass(frozen=True)
class PhPlantState:
    Wa: float
    Wb: float
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise TankEmptyError(0)

    def as_array(self) -> np.ndarray:
        return np.array([self.Wa, self.Wb, self.h])


def ph_output(Wa: float, Wb: float, pK1: float, pK2: float) -> float:
    """pH solving the charge balance on [0, 14].

    The balance is monotone in pH; a bracketed Newton iteration (bisection
    whenever the Newton step leaves the bracket) converges to the root.
    """
    ph = kernels.ph_solve(float(Wa), float(Wb), float(pK1), float(pK2))
    if math.isnan(ph):
        raise InfeasibleChemistryError(
            f"charge balance has no sign change on [0, 14] (Wa={Wa:g}, Wb={Wb:g})"
        )
    return ph


def charge_balance(pH: float, Wa: float, Wb: float, pK1: float, pK2: float) -> float:
    """Residual of the charge balance at ``pH``."""
    return (Wa + 10.0 ** (pH - 14.0) - 10.0 ** (-pH)
            + Wb * (1.0 + 2.0 * 10.0 ** (pH - pK2)) / (1.0 + 10.0 ** (pK1 - pH) + 10.0 ** (pH - pK2)))


def _raise_status(status: int, where: int, states) -> None:
    if status == _pure.PLANT_TANK_EMPTY:
        raise TankEmptyError(where)
    if status == _pure.PLANT_INFEASIBLE:
        wa, wb, _ = states[where]
        raise InfeasibleChemistryError(f"no pH root at sample {where} (Wa={wa:g}, Wb={wb:g})")


def simulate_plant_q3(cfg: PhPlantConfig, state0: PhPlantState, q3_seq) -> tuple[np.ndarray, np.ndarray]:
    """Integrate under a base-flow sequence; states and pH at samples 0..T."""
    q3 = np.ascontiguousarray(np.asarray(q3_seq, dtype=np.float64).reshape(-1))
    if np.any(q3 < 0):
        raise ValueError("base flow must be nonnegative")
    states, ph, status, where = kernels.plant_simulate(
        cfg.param_vector(), state0.as_array(), q3, cfg.Ts, cfg.substeps)
    _raise_status(status, where, states)
    return states, ph


def simulate_plant(cfg: PhPlantConfig, state0: PhPlantState, u_seq) -> tuple[np.ndarray, np.ndarray]:
    """Integrate under plant-normalized inputs ``u`` in ``[-1, 1]``."""
    u = np.asarray(u_seq, dtype=np.float64).reshape(-1)
    if np.any(np.abs(u) > 1.0):
        raise ValueError("plant input must lie in [-1, 1]")
    return simulate_plant_q3(cfg, state0, cfg.q3_of(u))


def plant_step(cfg: PhPlantConfig, state: PhPlantState, u: float) -> tuple[PhPlantState, float]:
    """Advance one sample (RK4, ``cfg.substeps`` substeps); returns ``(state+, pH+)``."""
    states, ph = simulate_plant(cfg, state, [u])
    wa, wb, h = states[1]
    return PhPlantState(float(wa), float(wb), float(h)), float(ph[1])


@dataclass
class Dataset:
    """Normalized input/output record with a train/validation split.

    Sample ``k`` pairs ``u(k)`` with ``y(k)``, the output measured before
    ``u(k)`` acts (strictly proper convention).
    """

    u_raw: np.ndarray
    y_raw: np.ndarray
    norm_u: NormalizationSpec
    norm_y: NormalizationSpec
    n_train: int

    @property
    def u(self) -> np.ndarray:
        return normalize(self.u_raw, self.norm_u)

    @property
    def y(self) -> np.ndarray:
        return normalize(self.y_raw, self.norm_y)

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u[:self.n_train], self.y[:self.n_train]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u[self.n_train:], self.y[self.n_train:]

    def norm_json(self) -> dict:
        return {
            "u_mean": self.norm_u.mean.tolist(),
            "u_scale": self.norm_u.max_dev.tolist(),
            "y_mean": self.norm_y.mean.tolist(),
            "y_scale": self.norm_y.max_dev.tolist(),
        }


def norms_from_json(doc: dict) -> tuple[NormalizationSpec, NormalizationSpec]:
    return (NormalizationSpec(doc["u_mean"], doc["u_scale"]),
            NormalizationSpec(doc["y_mean"], doc["y_scale"]))


def generate_dataset(cfg: PhPlantConfig, u_seq, noise_frac: float = 0.01, seed: int = 0,
                     n_train: int = 4400, n_val: int = 2250,
                     state0: PhPlantState | None = None) -> Dataset:
    """Simulate the plant, add measurement noise, fit the normalization.

    ``u_seq`` (plant-normalized, length ``n_train + n_val``) drives the
    plant; the recorded input is the base flow plus noise and the recorded
    output is the pH plus noise. Noise std is ``noise_frac`` times each
    clean channel's maximum deviation. Normalization is fitted over the
    whole noisy record.
    """
    u = np.asarray(u_seq, dtype=np.float64).reshape(-1)
    if u.shape[0] == 0:
        raise ValueError("empty input sequence")
    if u.shape[0] != n_train + n_val:
        raise ValueError(f"input has {u.shape[0]} samples, expected {n_train + n_val}")
    if noise_frac < 0:
        raise ValueError("noise_frac must be nonnegative")
    if state0 is None:
        state0 = cfg.equilibrium(0.0)
    _, ph = simulate_plant(cfg, state0, u)
    q3 = cfg.q3_of(u)
    ph = ph[:-1]
    dev_u = float(np.max(np.abs(q3 - q3.mean())))
    dev_y = float(np.max(np.abs(ph - ph.mean())))
    u_raw = add_white_noise(q3, noise_frac * dev_u, substream(seed, 0))[:, None]
    y_raw = add_white_noise(ph, noise_frac * dev_y, substream(seed, 1))[:, None]
    return Dataset(u_raw, y_raw, fit_normalization(u_raw), fit_normalization(y_raw), n_train)



def benchmark_inputs(cfg: PhPlantConfig, seed: int, n_samples: int = 6650) -> np.ndarray:
    """Full-amplitude MPRS excitation (plant-normalized) for identification."""
    return gen_mprs(MprsClass(1.0, n_samples, Ts=cfg.Ts), substream(seed, 2))[:, 0]


def benchmark_dataset(cfg: PhPlantConfig, seed: int, n_train: int = 4400, n_val: int = 2250,
                      noise_frac: float = 0.01) -> Dataset:
    """Identification record: MPRS from ``(seed, 2)``, noise from ``(seed, 0|1)``."""
    u = benchmark_inputs(cfg, seed, n_train + n_val)
    return generate_dataset(cfg, u, noise_frac=noise_frac, seed=seed, n_train=n_train, n_val=n_val)
