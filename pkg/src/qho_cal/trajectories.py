"""Stochastic quantum-jump (Monte Carlo wave function) trajectory engine.

A trajectory alternates conditional no-jump evolution under U_nh(dt) with
instantaneous jumps: at each step one uniform draw decides between applying
C0 (emission into the bath, heat +1), C1 (absorption, heat -1) or the
no-jump propagator, with per-step probabilities dp_i = dt <C_i^+ C_i>. The
state is renormalized every step. Checkpoints store the in-flight
normalized state and the integer cumulative heat at each grid time, i.e.
the trajectory "as if the driving had stopped there" with no extra
relaxation applied.

Trajectories are embarrassingly parallel and bitwise reproducible: the
per-trajectory random streams derive from SeedSequence(master_seed) children
keyed by trajectory index, so results do not depend on worker count or on
how trajectories are grouped into batches (batch size is a fixed constant of
the configuration, not of the executor).
"""

from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import GridMismatchError, SimulationError, TruncationWarning
from .fock import ladder_operators, matrix_exponential, quadratures
from .model import PhysicalParams, Rates

__all__ = [
    "JumpEvent",
    "TrajectoryRecord",
    "EnsembleConfig",
    "default_time_step",
    "sample_initial_level",
    "evolve_trajectory",
    "iter_ensemble",
    "run_ensemble",
    "dump_events_csv",
]

# Per-step probability budget: dt * max(gamma_sigma * dim, lambda0) <= this.
_DT_BUDGET = 0.01
_LEAK_WARN = 1e-3
_LEAK_FAIL = 1e-1
_NORM_FLOOR = 1e-300
# Uniform draws are generated in slabs of at most this many steps to bound memory.
_CHUNK_STEPS = 512


@dataclass(frozen=True)
class JumpEvent:
    """One detector click: index 0 = quantum emitted into the bath (C0),
    index 1 = quantum absorbed from the bath (C1)."""

    time: float
    index: int

    def __post_init__(self) -> None:
        if self.index not in (0, 1):
            raise ValueError(f"jump index must be 0 or 1, got {self.index}")
        if self.time <= 0:
            raise ValueError(f"jump time must be positive, got {self.time}")


@dataclass
class TrajectoryRecord:
    """One stochastic realization.

    ``states[k]`` is the normalized state at ``times[k]`` and ``heats[k]``
    the cumulative heat up to that time as an exact integer in units of
    hbar*omega0 (number of emissions minus absorptions).
    """

    initial_level: int
    jumps: tuple[JumpEvent, ...]
    times: np.ndarray
    states: np.ndarray
    heats: np.ndarray
    traj_id: int = 0
    measure_seed: np.random.SeedSequence | None = None

    @property
    def checkpoints(self) -> list[tuple[float, np.ndarray, int]]:
        return [
            (float(t), self.states[k], int(self.heats[k]))
            for k, t in enumerate(self.times)
        ]

    def checkpoint_index(self, tau: float) -> int:
        hits = np.nonzero(np.isclose(self.times, tau, rtol=0.0, atol=1e-9))[0]
        if hits.size == 0:
            raise GridMismatchError(
                f"time {tau} is not on the checkpoint grid {self.times}"
            )
        return int(hits[0])


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble controls.

    ``checkpoint_grid`` must be strictly increasing inside [0, drive_time].
    ``dt`` of None picks the default step; an explicit value must satisfy
    dt * max(gamma_sigma * dim, lambda0) <= 0.01. ``initial_level`` of None
    samples levels from the truncated thermal distribution.
    """

    checkpoint_grid: tuple[float, ...]
    n_traj: int = 100_000
    master_seed: int = 0
    dt: float | None = None
    initial_level: int | None = None
    batch_size: int = 8192

    def __post_init__(self) -> None:
        grid = tuple(float(t) for t in self.checkpoint_grid)
        object.__setattr__(self, "checkpoint_grid", grid)
        if len(grid) == 0:
            raise ValueError("checkpoint grid must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("checkpoint grid must be strictly increasing")
        if grid[0] < 0:
            raise ValueError("checkpoint grid must start at or after t = 0")
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be positive, got {self.n_traj}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


def default_time_step(
    params: PhysicalParams, rates: Rates, grid: Sequence[float]
) -> float:
    """min(0.01/(gamma_sigma dim), 0.01/lambda0, smallest grid spacing / 10)."""
    candidates = []
    if rates.gamma_sigma > 0:
        candidates.append(_DT_BUDGET / (rates.gamma_sigma * params.dim))
    if params.lambda0 > 0:
        candidates.append(_DT_BUDGET / params.lambda0)
    pts = [0.0] + [float(t) for t in grid]
    spacings = [b - a for a, b in zip(pts, pts[1:]) if b > a]
    if spacings:
        candidates.append(min(spacings) / 10.0)
    if not candidates:
        return 1.0  # free evolution of nothing; value is irrelevant
    return min(candidates)


def _validate_dt(dt: float, params: PhysicalParams, rates: Rates) -> None:
    scale = max(rates.gamma_sigma * params.dim, params.lambda0)
    if scale > 0 and dt * scale > _DT_BUDGET * (1 + 1e-9):
        raise ValueError(
            f"dt = {dt} too coarse: dt * max(gamma_sigma*dim, lambda0) = "
            f"{dt * scale:.3e} exceeds {_DT_BUDGET}"
        )


def thermal_probabilities(beta: float, dim: int) -> np.ndarray:
    """Thermal occupation probabilities renormalized on the truncation."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    logp = -beta * np.arange(dim)
    p = np.exp(logp - logp.max())
    return p / p.sum()


def sample_initial_level(beta: float, dim: int, rng: np.random.Generator) -> int:
    """Draw a level from the thermal distribution over the ``dim`` kept levels."""
    p = thermal_probabilities(beta, dim)
    return int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))


def _trajectory_children(master_seed: int, start: int, count: int):
    root = np.random.SeedSequence(master_seed)
    return root.spawn(start + count)[start:]


class _Batch:
    """Work arrays for a batch of trajectories advanced in lockstep."""

    def __init__(self, params, rates, grid, dt, children, initial_level, id_offset=0):
        self.n = len(children)
        dim = params.dim
        self.dim = dim
        self.grid = grid
        self.dt = dt
        self.id_offset = id_offset
        self.dyn = []
        self.meas_seeds = []
        for child in children:
            dyn_seed, meas_seed = child.spawn(2)
            self.dyn.append(np.random.Generator(np.random.PCG64(dyn_seed)))
            self.meas_seeds.append(meas_seed)

        if initial_level is None:
            cdf = np.cumsum(thermal_probabilities(params.beta, dim))
            u0 = np.array([g.random() for g in self.dyn])
            self.levels = np.searchsorted(cdf, u0, side="right").astype(np.int64)
        else:
            if not 0 <= initial_level < dim:
                raise ValueError(f"initial_level {initial_level} outside [0, {dim})")
            self.levels = np.full(self.n, initial_level, dtype=np.int64)

        self.states = np.zeros((self.n, dim), dtype=complex)
        self.states[np.arange(self.n), self.levels] = 1.0
        self.heats = np.zeros(self.n, dtype=np.int64)
        self.jumps: list[list[JumpEvent]] = [[] for _ in range(self.n)]
        self.ck_states = np.zeros((len(grid), self.n, dim), dtype=complex)
        self.ck_heats = np.zeros((len(grid), self.n), dtype=np.int64)
        self.max_leak = 0.0

        lowering, raising = ladder_operators(dim)
        self._lower_t = np.ascontiguousarray(lowering.T)
        self._raise_t = np.ascontiguousarray(raising.T)
        # diagonals of C_i^+ C_i on the truncation; raising from the top
        # level leaves the space, so its weight there is zero
        self._w0 = rates.gamma0 * np.arange(dim, dtype=float)
        self._w1 = rates.gamma1 * (np.arange(dim, dtype=float) + 1.0)
        self._w1[-1] = 0.0
        # no-jump generator with the decay built from the same truncated
        # operator products, so norm loss and jump probabilities balance
        # exactly and the unraveling reproduces the truncated master
        # equation (nh_generator's closed form differs only in the top entry)
        _, p_quad = quadratures(dim)
        self._k = params.lambda0 / np.sqrt(2) * p_quad - 0.5j * np.diag(
            self._w0 + self._w1
        )
        self._prop_cache: dict[float, np.ndarray] = {}

    def _propagator_t(self, dt_step: float) -> np.ndarray:
        key = round(dt_step, 15)
        if key not in self._prop_cache:
            u = matrix_exponential(-1j * dt_step * self._k)
            self._prop_cache[key] = np.ascontiguousarray(u.T)
        return self._prop_cache[key]

    def _checkpoint(self, k: int) -> None:
        self.ck_states[k] = self.states
        self.ck_heats[k] = self.heats
        # ensemble-mean top-level population is what biases the moments
        leak = float(np.mean(self.states[:, -1].real ** 2 + self.states[:, -1].imag ** 2))
        self.max_leak = max(self.max_leak, leak)
        if leak > _LEAK_FAIL:
            raise SimulationError(
                f"mean top-level population {leak:.3e} exceeds {_LEAK_FAIL} at "
                f"t = {self.grid[k]}; increase dim"
            )

    def run(self) -> None:
        states = self.states
        buf = np.empty_like(states)
        p2 = states.real**2 + states.imag**2
        k0 = 0
        if self.grid[0] == 0.0:
            self._checkpoint(0)
            k0 = 1
        t_prev = 0.0
        for k in range(k0, len(self.grid)):
            t_next = self.grid[k]
            seg = t_next - t_prev
            n_steps = max(1, int(np.ceil(seg / self.dt - 1e-12)))
            dt_step = seg / n_steps
            u_t = self._propagator_t(dt_step)
            done = 0
            while done < n_steps:
                chunk = min(_CHUNK_STEPS, n_steps - done)
                uni = np.empty((self.n, chunk))
                for i, g in enumerate(self.dyn):
                    uni[i] = g.random(chunk)
                for j in range(chunk):
                    dp0 = dt_step * (p2 @ self._w0)
                    dp1 = dt_step * (p2 @ self._w1)
                    r = uni[:, j]
                    jumping = r < dp0 + dp1
                    if jumping.any():
                        idx = np.nonzero(jumping)[0]
                        pre = states[idx].copy()
                        np.matmul(states, u_t, out=buf)
                        states, buf = buf, states
                        is0 = r[idx] < dp0[idx]
                        t_jump = t_prev + (done + j + 1) * dt_step
                        if is0.any():
                            rows = idx[is0]
                            states[rows] = pre[is0] @ self._lower_t
                            self.heats[rows] += 1
                            for row in rows:
                                self.jumps[row].append(JumpEvent(t_jump, 0))
                        if (~is0).any():
                            rows = idx[~is0]
                            states[rows] = pre[~is0] @ self._raise_t
                            self.heats[rows] -= 1
                            for row in rows:
                                self.jumps[row].append(JumpEvent(t_jump, 1))
                    else:
                        np.matmul(states, u_t, out=buf)
                        states, buf = buf, states
                    np.multiply(states.real, states.real, out=p2)
                    p2 += states.imag**2
                    norm2 = p2.sum(axis=1)
                    if norm2.min() < _NORM_FLOOR:
                        bad = self.id_offset + int(np.argmin(norm2))
                        raise SimulationError(
                            f"state norm underflow in trajectory {bad}"
                        )
                    inv = 1.0 / np.sqrt(norm2)
                    states *= inv[:, None]
                    p2 *= (inv * inv)[:, None]
                done += chunk
            self.states = states
            self._checkpoint(k)
            t_prev = t_next
        self.states = states

    def records(self, id_offset: int) -> list[TrajectoryRecord]:
        times = np.array(self.grid)
        out = []
        for i in range(self.n):
            states = self.ck_states[:, i, :].copy()
            states.flags.writeable = False
            out.append(
                TrajectoryRecord(
                    initial_level=int(self.levels[i]),
                    jumps=tuple(self.jumps[i]),
                    times=times,
                    states=states,
                    heats=self.ck_heats[:, i].copy(),
                    traj_id=id_offset + i,
                    measure_seed=self.meas_seeds[i],
                )
            )
        return out


def _resolve_dt(params, rates, config) -> float:
    dt = config.dt
    if dt is None:
        dt = default_time_step(params, rates, config.checkpoint_grid)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _validate_dt(dt, params, rates)
    return dt


def _validate_grid(params: PhysicalParams, config: EnsembleConfig) -> None:
    if config.checkpoint_grid[-1] > params.drive_time * (1 + 1e-12):
        raise ValueError(
            f"checkpoint grid extends to {config.checkpoint_grid[-1]} beyond "
            f"drive_time = {params.drive_time}"
        )


def evolve_trajectory(
    params: PhysicalParams,
    rates: Rates,
    config: EnsembleConfig,
    seed: int | np.random.SeedSequence,
) -> TrajectoryRecord:
    """Generate a single trajectory from an explicit per-trajectory seed."""
    _validate_grid(params, config)
    dt = _resolve_dt(params, rates, config)
    child = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    batch = _Batch(params, rates, config.checkpoint_grid, dt, [child], config.initial_level)
    batch.run()
    if batch.max_leak > _LEAK_WARN:
        warnings.warn(
            f"top-level population reached {batch.max_leak:.2e}; moments may "
            "be truncation-limited",
            TruncationWarning,
            stacklevel=2,
        )
    return batch.records(0)[0]


def iter_ensemble(
    params: PhysicalParams,
    rates: Rates,
    config: EnsembleConfig,
    n_workers: int | None = None,
) -> Iterator[TrajectoryRecord]:
    """Yield exactly ``config.n_traj`` records in trajectory-id order.

    Batches may be evolved concurrently by up to ``n_workers`` threads
    (default: the QHO_CAL_THREADS environment variable, else 1); the yielded
    sequence is identical for every worker count.
    """
    _validate_grid(params, config)
    dt = _resolve_dt(params, rates, config)
    if n_workers is None:
        n_workers = int(os.environ.get("QHO_CAL_THREADS", "1"))
    n_workers = max(1, n_workers)

    starts = list(range(0, config.n_traj, config.batch_size))

    def make_batch(start: int) -> _Batch:
        count = min(config.batch_size, config.n_traj - start)
        children = _trajectory_children(config.master_seed, start, count)
        batch = _Batch(
            params, rates, config.checkpoint_grid, dt, children,
            config.initial_level, id_offset=start,
        )
        batch.run()
        return batch

    max_leak = 0.0
    if n_workers == 1:
        for start in starts:
            batch = make_batch(start)
            max_leak = max(max_leak, batch.max_leak)
            yield from batch.records(start)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for start, batch in zip(starts, pool.map(make_batch, starts)):
                max_leak = max(max_leak, batch.max_leak)
                yield from batch.records(start)
    if max_leak > _LEAK_WARN:
        warnings.warn(
            f"top-level population reached {max_leak:.2e}; moments may be "
            "truncation-limited",
            TruncationWarning,
            stacklevel=2,
        )


def run_ensemble(
    params: PhysicalParams,
    rates: Rates,
    config: EnsembleConfig,
    n_workers: int | None = None,
) -> list[TrajectoryRecord]:
    """Materialized ensemble; see iter_ensemble for the streaming variant."""
    return list(iter_ensemble(params, rates, config, n_workers=n_workers))


def dump_events_csv(records: Iterable[TrajectoryRecord], path) -> None:
    """Raw jump log for debugging: one row per event."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["traj_id", "event_time", "event_index"])
        for record in records:
            for event in record.jumps:
                writer.writerow([record.traj_id, f"{event.time:.12g}", event.index])
