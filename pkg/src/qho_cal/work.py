"""Per-trajectory thermodynamic bookkeeping and ensemble moment statistics.

Two work values are attached to each trajectory at a checkpoint time tau:

* projective: a level m is drawn from the checkpoint state populations and
  W = (m - n) + Q, with n the initial level and Q the integer heat count.
* calorimetric: the internal energy change is inferred as if the system
  were a two-level system, from the guardian photons -- the last photon
  before the drive (ell_i) and the first one after it (ell_f). Then
  W_c = (ell_f - ell_i) + Q + (-1)^ell_f, the last term being the heat the
  final guardian photon itself carries. At zero temperature a trajectory
  ending in the ground state emits no final photon; that branch contributes
  delta_u = -ell_i and no guardian heat.

All work values are exact integers in units of hbar*omega0, so moment
accumulation is a value -> count histogram and merging ensembles is exact,
associative and commutative.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InsufficientDataError
from .model import Rates
from .quadrature import csv_float
from .trajectories import TrajectoryRecord

__all__ = [
    "GuardianOutcome",
    "WorkSample",
    "MomentSummary",
    "PopulationSummary",
    "EnsembleWorkResult",
    "heat_up_to",
    "projective_work",
    "guardian_initial_probs",
    "guardian_final_probs_level",
    "guardian_final_probs_state",
    "draw_guardian_outcome",
    "calorimetric_work",
    "summarize",
    "measure_ensemble",
    "write_moments_csv",
]


@dataclass(frozen=True)
class GuardianOutcome:
    """Guardian photon pair; ell_f is None when no final photon can ever be
    observed (zero temperature with the system left in the ground state)."""

    ell_i: int
    ell_f: int | None


@dataclass(frozen=True)
class WorkSample:
    """One work draw, in integer units of hbar*omega0. value = delta_u + heat
    holds exactly by construction."""

    kind: str
    tau: float
    delta_u: int
    heat: int
    value: int


def heat_up_to(record: TrajectoryRecord, tau: float) -> int:
    """Integer heat count up to tau: emissions minus absorptions."""
    horizon = record.times[-1]
    if tau < 0 or tau > horizon * (1 + 1e-12) + 1e-12:
        raise ValueError(f"tau = {tau} outside the record horizon [0, {horizon}]")
    return sum(1 if j.index == 0 else -1 for j in record.jumps if j.time <= tau)


def projective_work(
    record: TrajectoryRecord, tau: float, rng: np.random.Generator
) -> WorkSample:
    """Two-measurement work: draw the final level from the checkpoint state."""
    k = record.checkpoint_index(tau)
    state = record.states[k]
    p = state.real**2 + state.imag**2
    m = int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), p.size - 1))
    heat = int(record.heats[k])
    delta_u = m - record.initial_level
    return WorkSample("projective", float(tau), delta_u, heat, delta_u + heat)


def guardian_initial_probs(n: int, rates: Rates) -> tuple[float, float]:
    """Probabilities of the last pre-drive photon type given initial level n.

    (p0, p1) with p0 = x(n+1) / (x(n+1) + n), x = gamma1/gamma0: a level-n
    equilibrium state was entered from above (emission, index 0) or from
    below (absorption, index 1). The degenerate point n = 0 at zero
    temperature (no photon was ever needed) is resolved as index 0 with
    certainty, consistent with the system having sat in the ground state.
    """
    if n < 0:
        raise ValueError(f"level must be non-negative, got {n}")
    x = rates.boltzmann_ratio
    den = x * (n + 1) + n
    if den == 0:
        return 1.0, 0.0
    return x * (n + 1) / den, n / den


def guardian_final_probs_level(m: int, rates: Rates) -> tuple[float, float]:
    """Probabilities of the first post-drive photon type given final level m.

    (p0, p1) with p0 = m / (m + x(m+1)): emission needs occupation, absorption
    is always open at finite temperature. At m = 0 and zero temperature both
    probabilities vanish -- no photon is ever observed; callers treat the
    missing mass as the no-photon branch.
    """
    if m < 0:
        raise ValueError(f"level must be non-negative, got {m}")
    x = rates.boltzmann_ratio
    den = m + x * (m + 1)
    if den == 0:
        return 0.0, 0.0
    return m / den, x * (m + 1) / den


def _final_prob_vectors(dim: int, rates: Rates) -> tuple[np.ndarray, np.ndarray]:
    ms = np.arange(dim, dtype=float)
    x = rates.boltzmann_ratio
    den = ms + x * (ms + 1)
    pf0 = np.zeros(dim)
    pf1 = np.zeros(dim)
    ok = den > 0
    pf0[ok] = ms[ok] / den[ok]
    pf1[ok] = x * (ms[ok] + 1) / den[ok]
    return pf0, pf1


def guardian_final_probs_state(
    state: np.ndarray, rates: Rates
) -> tuple[float, float, float]:
    """Mixture of the per-level final-photon probabilities over |c_m|^2.

    Returns (p0, p1, p_no_photon); the last is nonzero only at zero
    temperature, where it equals the ground-state population.
    """
    p = state.real**2 + state.imag**2
    pf0, pf1 = _final_prob_vectors(p.size, rates)
    p0 = float(p @ pf0)
    p1 = float(p @ pf1)
    return p0, p1, max(0.0, float(p.sum()) - p0 - p1)


def draw_guardian_outcome(
    record: TrajectoryRecord,
    tau: float,
    rates: Rates,
    rng: np.random.Generator,
    ell_i: int | None = None,
) -> GuardianOutcome:
    """Sample the guardian pair for one trajectory at checkpoint tau."""
    if ell_i is None:
        p0_i, _ = guardian_initial_probs(record.initial_level, rates)
        ell_i = 0 if rng.random() < p0_i else 1
    k = record.checkpoint_index(tau)
    p0, p1, _ = guardian_final_probs_state(record.states[k], rates)
    r = rng.random()
    if r < p0:
        ell_f: int | None = 0
    elif r < p0 + p1:
        ell_f = 1
    else:
        ell_f = None
    return GuardianOutcome(ell_i=ell_i, ell_f=ell_f)


def calorimetric_work(
    record: TrajectoryRecord,
    tau: float,
    rates: Rates,
    rng: np.random.Generator,
    ell_i: int | None = None,
) -> WorkSample:
    """Calorimetric work at tau. Pass ell_i to reuse one pre-drive photon
    draw across several checkpoints of the same trajectory (it is a single
    physical event)."""
    outcome = draw_guardian_outcome(record, tau, rates, rng, ell_i=ell_i)
    k = record.checkpoint_index(tau)
    jump_heat = int(record.heats[k])
    if outcome.ell_f is None:
        delta_u = -outcome.ell_i
        heat = jump_heat
    else:
        delta_u = outcome.ell_f - outcome.ell_i
        heat = jump_heat + (1 - 2 * outcome.ell_f)
    return WorkSample("calorimetric", float(tau), delta_u, heat, delta_u + heat)


# ---------------------------------------------------------------------------
# moment statistics


def _central_moments(counts: dict[int, int]) -> tuple[int, float, float, float]:
    n = sum(counts.values())
    vals = np.array(sorted(counts), dtype=float)
    cs = np.array([counts[int(v)] for v in vals], dtype=float)
    mean = float((vals * cs).sum() / n)
    d = vals - mean
    m2 = float((cs * d**2).sum() / n)
    m4 = float((cs * d**4).sum() / n)
    return n, mean, m2, m4


def _variance_se_moments(n: int, m2: float, m4: float) -> float:
    if n < 2:
        return float("nan")
    s2 = m2 * n / (n - 1)
    var_of_var = (m4 - s2 * s2 * (n - 3) / (n - 1)) / n
    return float(np.sqrt(max(var_of_var, 0.0)))


def _variance_se_jackknife(counts: dict[int, int]) -> float:
    n = sum(counts.values())
    if n < 3:
        return float("nan")
    vals = np.array(sorted(counts), dtype=float)
    cs = np.array([counts[int(v)] for v in vals], dtype=float)
    s1 = float((vals * cs).sum())
    s2 = float((vals**2 * cs).sum())
    loo = ((s2 - vals**2) - (s1 - vals) ** 2 / (n - 1)) / (n - 2)
    loo_mean = float((cs * loo).sum() / n)
    ss = float((cs * (loo - loo_mean) ** 2).sum())
    return float(np.sqrt((n - 1) / n * ss))


@dataclass
class MomentSummary:
    """Ensemble mean/variance with standard errors and the exact value
    histogram per checkpoint time. Merging is exact (histogram addition)."""

    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    stderr_mean: np.ndarray
    stderr_variance: np.ndarray
    histograms: list[dict[int, int]]
    n_traj: int

    @classmethod
    def from_counts(
        cls,
        times: Sequence[float],
        histograms: list[dict[int, int]],
        variance_se: str = "moments",
    ) -> "MomentSummary":
        if variance_se not in ("moments", "jackknife"):
            raise ValueError(f"unknown variance_se method {variance_se!r}")
        times = np.asarray([float(t) for t in times])
        if len(histograms) != times.size:
            raise ValueError("one histogram per time required")
        n_ref = None
        mean = np.empty(times.size)
        var = np.empty(times.size)
        se_m = np.empty(times.size)
        se_v = np.empty(times.size)
        for k, counts in enumerate(histograms):
            n, mu_k, m2, m4 = _central_moments(counts)
            if n < 2:
                raise InsufficientDataError(
                    f"need at least 2 samples per time, got {n} at t = {times[k]}"
                )
            if n_ref is None:
                n_ref = n
            elif n != n_ref:
                raise ValueError("histograms carry different sample counts")
            mean[k] = mu_k
            var[k] = m2 * n / (n - 1)
            se_m[k] = np.sqrt(var[k] / n)
            if variance_se == "moments":
                se_v[k] = _variance_se_moments(n, m2, m4)
            else:
                se_v[k] = _variance_se_jackknife(counts)
        return cls(times, mean, var, se_m, se_v, [dict(h) for h in histograms], n_ref)

    def merge(self, other: "MomentSummary") -> "MomentSummary":
        if not np.array_equal(self.times, other.times):
            raise ValueError("cannot merge summaries on different grids")
        merged = []
        for a, b in zip(self.histograms, other.histograms):
            c = Counter(a)
            c.update(b)
            merged.append(dict(c))
        return MomentSummary.from_counts(self.times, merged)


def summarize(
    samples: Iterable[WorkSample], variance_se: str = "moments"
) -> MomentSummary:
    """Group samples by checkpoint time and reduce to a MomentSummary."""
    by_time: dict[float, Counter] = {}
    for s in samples:
        by_time.setdefault(s.tau, Counter())[s.value] += 1
    if not by_time:
        raise InsufficientDataError("no samples given")
    times = sorted(by_time)
    return MomentSummary.from_counts(
        times, [dict(by_time[t]) for t in times], variance_se=variance_se
    )


# ---------------------------------------------------------------------------
# ensemble measurement pipeline


@dataclass
class PopulationSummary:
    """Ensemble-averaged level populations and mean occupation per checkpoint."""

    times: np.ndarray
    mean: np.ndarray          # (K, dim)
    stderr: np.ndarray        # (K, dim)
    nbar_mean: np.ndarray     # (K,)
    nbar_stderr: np.ndarray   # (K,)
    n_traj: int


@dataclass
class EnsembleWorkResult:
    projective: MomentSummary
    calorimetric: MomentSummary
    populations: PopulationSummary


def _record_chunks(
    records: Iterable[TrajectoryRecord], size: int
) -> Iterator[list[TrajectoryRecord]]:
    chunk: list[TrajectoryRecord] = []
    for record in records:
        chunk.append(record)
        if len(chunk) == size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def measure_ensemble(
    records: Iterable[TrajectoryRecord],
    rates: Rates,
    variance_se: str = "moments",
) -> EnsembleWorkResult:
    """Draw both work values for every (trajectory, checkpoint) pair and
    accumulate exact histograms plus population statistics.

    Measurement randomness comes from each record's own measurement stream,
    so the result is reproducible and independent of iteration chunking. The
    pre-drive guardian photon is drawn once per trajectory; the final
    guardian and the projective level are drawn per checkpoint.
    """
    times: np.ndarray | None = None
    counts_p: list[Counter] | None = None
    counts_c: list[Counter] | None = None
    pop_sum = pop_sumsq = nbar_sum = nbar_sumsq = None
    narr = None
    pf0 = pf1 = None
    pi_cache: dict[int, float] = {}
    n_total = 0

    for chunk in _record_chunks(records, 2048):
        if times is None:
            times = chunk[0].times.copy()
            k_n = times.size
            dim = chunk[0].states.shape[1]
            counts_p = [Counter() for _ in range(k_n)]
            counts_c = [Counter() for _ in range(k_n)]
            pop_sum = np.zeros((k_n, dim))
            pop_sumsq = np.zeros((k_n, dim))
            nbar_sum = np.zeros(k_n)
            nbar_sumsq = np.zeros(k_n)
            narr = np.arange(dim, dtype=float)
            pf0, pf1 = _final_prob_vectors(dim, rates)
        k_n = times.size
        vp_chunk = np.empty((len(chunk), k_n), dtype=np.int64)
        vc_chunk = np.empty((len(chunk), k_n), dtype=np.int64)
        for row, record in enumerate(chunk):
            if not np.array_equal(record.times, times):
                raise ValueError("records carry inconsistent checkpoint grids")
            if record.measure_seed is None:
                raise ValueError(
                    f"record {record.traj_id} has no measurement seed attached"
                )
            gen = np.random.Generator(np.random.PCG64(record.measure_seed))
            u = gen.random(1 + 2 * k_n)
            p2 = record.states.real**2 + record.states.imag**2  # (K, dim)

            n0 = record.initial_level
            if n0 not in pi_cache:
                pi_cache[n0] = guardian_initial_probs(n0, rates)[0]
            ell_i = 0 if u[0] < pi_cache[n0] else 1

            cum = np.cumsum(p2, axis=1)
            m_draw = (cum < u[1::2, None]).sum(axis=1)
            np.minimum(m_draw, p2.shape[1] - 1, out=m_draw)
            heats = record.heats
            vp_chunk[row] = m_draw - n0 + heats

            p0 = p2 @ pf0
            p1 = p2 @ pf1
            r = u[2::2]
            ell_f = np.where(r < p0, 0, np.where(r < p0 + p1, 1, -1))
            vc_chunk[row] = np.where(
                ell_f >= 0, ell_f - ell_i + heats + 1 - 2 * ell_f, -ell_i + heats
            )

            pop_sum += p2
            pop_sumsq += p2**2
            nbar = p2 @ narr
            nbar_sum += nbar
            nbar_sumsq += nbar**2
        n_total += len(chunk)
        for k in range(k_n):
            counts_p[k].update(vp_chunk[:, k].tolist())
            counts_c[k].update(vc_chunk[:, k].tolist())

    if times is None:
        raise InsufficientDataError("no records given")

    def _se(total: np.ndarray, total_sq: np.ndarray, n: int) -> np.ndarray:
        mean = total / n
        var = np.maximum(total_sq / n - mean**2, 0.0) * n / max(n - 1, 1)
        return np.sqrt(var / n)

    populations = PopulationSummary(
        times=times,
        mean=pop_sum / n_total,
        stderr=_se(pop_sum, pop_sumsq, n_total),
        nbar_mean=nbar_sum / n_total,
        nbar_stderr=_se(nbar_sum, nbar_sumsq, n_total),
        n_traj=n_total,
    )
    return EnsembleWorkResult(
        projective=MomentSummary.from_counts(
            times, [dict(c) for c in counts_p], variance_se=variance_se
        ),
        calorimetric=MomentSummary.from_counts(
            times, [dict(c) for c in counts_c], variance_se=variance_se
        ),
        populations=populations,
    )


_MOMENT_COLUMNS = (
    "t,mean_Wp,se_mean_Wp,var_Wp,se_var_Wp,"
    "mean_Wc,se_mean_Wc,var_Wc,se_var_Wc,n_traj"
)


def write_moments_csv(path, result: EnsembleWorkResult, header_lines: Sequence[str] = ()) -> None:
    """Estimator CSV: one row per checkpoint time."""
    p, c = result.projective, result.calorimetric
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(_MOMENT_COLUMNS + "\n")
        for k, t in enumerate(p.times):
            row = [
                t,
                p.mean[k], p.stderr_mean[k], p.variance[k], p.stderr_variance[k],
                c.mean[k], c.stderr_mean[k], c.variance[k], c.stderr_variance[k],
            ]
            fh.write(",".join(csv_float(x) for x in row) + f",{p.n_traj}\n")
