"""Excitation signals, measurement noise and data normalization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for ``(master_seed, *key)``.

    Streams for distinct keys are independent, and a stream does not depend
    on which other streams were drawn before it.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class MprsClass:
    """Multilevel pseudo-random signal: random levels held for random dwells.

    Dwell bounds are in seconds and are converted to whole samples by
    rounding to the nearest step; both bounds are inclusive.
    """

    rho_u: float = 1.0
    tau: int = 2000
    Ts: float = 10.0
    dwell_min_s: float = 300.0
    dwell_max_s: float = 2000.0
    n_u: int = 1

    def __post_init__(self):
        if not 0.0 <= self.rho_u <= 1.0:
            raise ValueError(f"rho_u must be in [0, 1], got {self.rho_u}")
        if self.tau < 1 or self.n_u < 1:
            raise ValueError("tau and n_u must be positive")
        if self.Ts <= 0 or self.dwell_min_s < self.Ts or self.dwell_max_s < self.dwell_min_s:
            raise ValueError("need 0 < Ts <= dwell_min_s <= dwell_max_s")

    @property
    def dwell_steps(self) -> tuple[int, int]:
        return _round_half_up(self.dwell_min_s / self.Ts), _round_half_up(self.dwell_max_s / self.Ts)

    def with_rho(self, rho_u: float) -> "MprsClass":
        return MprsClass(rho_u, self.tau, self.Ts, self.dwell_min_s, self.dwell_max_s, self.n_u)


def gen_mprs_segments(cls: MprsClass, seed) -> list[list[tuple[int, float]]]:
    """Per-channel list of ``(dwell, level)`` segments covering ``tau`` samples.

    The final segment's dwell is the drawn (untruncated) value.
    """
    rng = as_generator(seed)
    lo, hi = cls.dwell_steps
    channels = []
    for _ in range(cls.n_u):
        segs, filled = [], 0
        while filled < cls.tau:
            dwell = int(rng.integers(lo, hi, endpoint=True))
            level = cls.rho_u * float(rng.uniform(-1.0, 1.0))
            segs.append((dwell, level))
            filled += dwell
        channels.append(segs)
    return channels


def gen_mprs(cls: MprsClass, seed) -> np.ndarray:
    """A ``(tau, n_u)`` piecewise-constant sequence in ``[-rho_u, rho_u]``."""
    out = np.empty((cls.tau, cls.n_u))
    for ch, segs in enumerate(gen_mprs_segments(cls, seed)):
        dwells = np.array([d for d, _ in segs])
        levels = np.array([v for _, v in segs])
        out[:, ch] = np.repeat(levels, dwells)[:cls.tau]
    return out


def add_white_noise(seq, std, seed) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise; ``std`` may be per channel."""
    seq = np.asarray(seq, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < 0):
        raise ValueError("noise std must be nonnegative")
    if np.all(std == 0):
        return seq.copy()
    rng = as_generator(seed)
    return seq + rng.standard_normal(seq.shape) * std


class DegenerateChannelError(ValueError):
    pass


@dataclass(frozen=True)
class NormalizationSpec:
    mean: np.ndarray
    max_dev: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "max_dev", np.atleast_1d(np.asarray(self.max_dev, dtype=np.float64)))
        if self.mean.shape != self.max_dev.shape:
            raise ValueError("mean and max_dev must have the same length")
        if np.any(self.max_dev <= 0):
            raise DegenerateChannelError("max_dev must be positive")

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "max_dev": self.max_dev.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "NormalizationSpec":
        return cls(d["mean"], d["max_dev"])


def fit_normalization(data) -> NormalizationSpec:
    """Per-channel mean and maximum absolute deviation from it."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] == 0:
        raise DegenerateChannelError("empty dataset")
    mean = a.mean(axis=0)
    dev = np.max(np.abs(a - mean), axis=0)
    if np.any(dev == 0):
        bad = [int(k) for k in np.flatnonzero(dev == 0)]
        raise DegenerateChannelError(f"constant channel(s) {bad}")
    return NormalizationSpec(mean, dev)


def normalize(data, spec: NormalizationSpec) -> np.ndarray:
    return (np.asarray(data, dtype=np.float64) - spec.mean) / spec.max_dev


def denormalize(data, spec: NormalizationSpec) -> np.ndarray:
    return np.asarray(data, dtype=np.float64) * spec.max_dev + spec.mean



class CsvFormatError(ValueError):
    """Malformed trajectory file; the message names the file and line."""


def write_io_csv(path, u, y=None) -> None:
    """Write ``k,u1..,y1..`` rows; ``y`` may be omitted for input-only files."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64).T).T
    cols = [f"u{j + 1}" for j in range(u.shape[1])]
    data = u
    if y is not None:
        y = np.atleast_2d(np.asarray(y, dtype=np.float64).T).T
        if y.shape[0] != u.shape[0]:
            raise ValueError("u and y must have the same number of rows")
        cols += [f"y{j + 1}" for j in range(y.shape[1])]
        data = np.hstack([u, y])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + cols)
        for k, row in enumerate(data):
            w.writerow([k] + [repr(float(v)) for v in row])


def read_io_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``k,u1..,y1..`` file into ``(u, y)`` arrays of shape ``(T, n)``.

    Either block may have zero columns.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: line 1: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "k":
        raise CsvFormatError(f"{path}: line 1: header must start with 'k'")
    ucols = [h for h in header[1:] if h.startswith("u")]
    ycols = [h for h in header[1:] if h.startswith("y")]
    expected = [f"u{j + 1}" for j in range(len(ucols))] + [f"y{j + 1}" for j in range(len(ycols))]
    if header[1:] != expected:
        raise CsvFormatError(f"{path}: line 1: expected columns k,u1..,y1.. but got {','.join(header)}")
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            k = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise CsvFormatError(f"{path}: line {lineno}: {exc}") from None
        if k != len(body):
            raise CsvFormatError(f"{path}: line {lineno}: step index {k}, expected {len(body)}")
        if not all(math.isfinite(v) for v in vals):
            raise CsvFormatError(f"{path}: line {lineno}: non-finite value")
        body.append(vals)
    if not body:
        raise CsvFormatError(f"{path}: line 2: no data rows")
    a = np.asarray(body, dtype=np.float64).reshape(len(body), len(header) - 1)
    nu = len(ucols)
    return a[:, :nu], a[:, nu:]
