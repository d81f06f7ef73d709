"""Monte Carlo wavefunction engine.

Two statistically equivalent samplers over the same jump-channel set:

* fixed-step: the textbook discretization.  Each interval dt the total jump
  probability P = dt <psi| sum L^dag L |psi> is compared against a uniform
  draw; a hit selects one channel in proportion to its weight and collapses
  the state, a miss applies the exact no-jump propagator exp(-i H_eff dt)
  followed by renormalization.  Between jumps the evolution is deterministic,
  so the per-step states and probabilities along a no-jump segment are
  precomputed once and replayed against each trajectory's random numbers;
  this is exactly the stepping loop, just evaluated segment-wise.

* fast: waiting-time sampling.  Draw r, propagate the unnormalized state
  with coarse precomputed propagators until its squared norm crosses r,
  refine the crossing by dyadic bisection to 1e-6 time resolution, then
  select the channel from the weights at the crossing state.

Randomness comes from counter-based (Philox) streams keyed by
(master_seed, stream_index, stage, substream), so any trajectory is
bit-reproducible in isolation and independent of scheduling order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import expm as _scipy_expm

from .hilbert import OperatorMatrix, StateVector
from .model import (
    ChannelTag,
    JumpChannel,
    SystemParams,
    build_jump_channels,
    initial_state,
    phase_gate,
    stage_hamiltonian,
    total_jump_operator,
)

P_STEP_MAX = 0.05           # abort threshold for the first-order jump probability
TIME_RESOLUTION = 1e-6      # bisection refinement of fast-sampler click times
_FIXED_BLOCK = 2048         # steps per replay block in unshared fixed-step scans
_CURVE_CACHE_MAX = 4


class StepSizeError(RuntimeError):
    """Per-step jump probability exceeded the first-order validity guard."""


class Outcome(enum.Enum):
    NO_CLICK = "NO_CLICK"
    ONE_CLICK = "ONE_CLICK"
    TWO_CLICKS = "TWO_CLICKS"


@dataclass(frozen=True)
class Event:
    """One collapse: when it happened and through which channel."""

    time: float
    tag: ChannelTag
    recorded: bool


@dataclass(frozen=True)
class ClickInfo:
    """A recorded detector click plus the renormalized post-click state."""

    tag: ChannelTag
    time: float
    state: StateVector


@dataclass(frozen=True)
class TrajectoryRecord:
    """Outcome of one full two-stage protocol run."""

    stream_index: int
    events: tuple[Event, ...]
    first_click: Optional[ClickInfo]
    second_click: Optional[tuple[ChannelTag, float]]
    outcome: Outcome
    final_state: StateVector

    def __post_init__(self):
        n_rec = sum(1 for e in self.events if e.recorded)
        expected = {0: Outcome.NO_CLICK, 1: Outcome.ONE_CLICK}.get(n_rec, Outcome.TWO_CLICKS)
        if self.outcome is not expected:
            raise ValueError(f"outcome {self.outcome} inconsistent with {n_rec} recorded events")
        if self.second_click is not None and self.first_click is not None:
            if not self.second_click[1] > self.first_click.time:
                raise ValueError("second click must come after the first")
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("events must be time-ordered")


class RngStream:
    """Per-trajectory random source.

    Two independent Philox substreams per stage: one consumed by the
    jump/no-jump decisions (one value per fixed step, or one per waiting-time
    segment for the fast sampler), one consumed by channel selection.  Keying
    is (master_seed, stream_index, stage, substream), so identical inputs
    reproduce identical trajectories on any platform and in any scheduling
    order.
    """

    def __init__(self, master_seed: int, stream_index: int, stage: int = 0):
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        self.stage = int(stage)
        self._step_gen: Optional[np.random.Generator] = None
        self._chan_gen: Optional[np.random.Generator] = None

    def _gen(self, substream: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            self.master_seed, spawn_key=(self.stream_index, self.stage, substream)
        )
        return np.random.Generator(np.random.Philox(ss))

    def for_stage(self, stage: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index, stage)

    def step_uniform(self) -> float:
        if self._step_gen is None:
            self._step_gen = self._gen(0)
        return float(self._step_gen.random())

    def step_uniforms(self, n: int) -> np.ndarray:
        if self._step_gen is None:
            self._step_gen = self._gen(0)
        return self._step_gen.random(n)

    def channel_uniform(self) -> float:
        if self._chan_gen is None:
            self._chan_gen = self._gen(1)
        return float(self._chan_gen.random())


@dataclass
class StageResult:
    """What one waiting window produced: a recorded click or a timeout."""

    clicked: bool
    tag: Optional[ChannelTag]
    time: Optional[float]
    state: StateVector
    events: list[Event] = field(default_factory=list)


class _FixedCurve(NamedTuple):
    states: np.ndarray   # (n_steps+1, D) unnormalized, states[k] at t = k*dt
    n2: np.ndarray       # squared norms of states
    pvals: np.ndarray    # per-step jump probability of the normalized state


class _CoarseCurve(NamedTuple):
    states: np.ndarray   # (m+1, D) unnormalized at the coarse grid
    n2: np.ndarray
    times: np.ndarray


class _ScanHit(NamedTuple):
    crossed: bool
    psi_left: Optional[np.ndarray]   # unnormalized state at the interval's left edge
    n2_left: float
    t_left: float
    width: float
    final: Optional[np.ndarray]      # unnormalized state at t_end when not crossed


def precompute_propagator(h_eff: OperatorMatrix, dt: float) -> OperatorMatrix:
    """Exact no-jump propagator exp(-i H_eff dt), built once and reused."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return OperatorMatrix(_scipy_expm(-1j * dt * h_eff.entries), h_eff.basis_dims)


class StageEngine:
    """Precomputed machinery for one (params, Hamiltonian) pair.

    Holds the jump channels, the summed jump operator, the fine fixed-step
    propagator, and lazily built coarse/dyadic propagator sets for the fast
    sampler.  Immutable after construction apart from internal caches; safe
    to share read-only across worker trajectories.
    """

    def __init__(
        self,
        params: SystemParams,
        hamiltonian: Optional[OperatorMatrix] = None,
        *,
        p_step_max: float = P_STEP_MAX,
    ):
        self.params = params
        self.dt = params.dt
        self.p_step_max = p_step_max
        h = hamiltonian if hamiltonian is not None else stage_hamiltonian(params)
        self.h_eff = h.entries
        self.dims = params.dims
        self.channels: list[JumpChannel] = build_jump_channels(params)
        self.ops = [ch.operator.entries for ch in self.channels]
        self.tags = [ch.tag for ch in self.channels]
        self.recorded = [ch.recorded for ch in self.channels]
        self.total_op = total_jump_operator(self.channels)
        self.propagator = _scipy_expm(-1j * self.dt * self.h_eff)
        self.phase_diag = np.diag(phase_gate(params.phi, params.n_max).entries).copy()
        self._fixed_cache: dict = {}
        self._coarse_cache: dict = {}
        self._dyadic_cache: dict = {}

    # -- fixed-step machinery -------------------------------------------------

    def _pvals(self, states: np.ndarray, n2: np.ndarray) -> np.ndarray:
        """Per-step jump probabilities dt*<L^dag L> for a run of states."""
        mpsi = states @ self.total_op.T
        mexp = np.einsum("ij,ij->i", states.conj(), mpsi).real
        p = self.dt * mexp / n2
        if p.size and p.max() >= self.p_step_max:
            raise StepSizeError(
                f"per-step jump probability {p.max():.3g} exceeds {self.p_step_max}; reduce dt"
            )
        return p

    def fixed_curve(self, psi_n: np.ndarray, n_steps: int) -> _FixedCurve:
        """Deterministic no-jump evolution from psi_n, cached by initial state."""
        key = (psi_n.tobytes(), n_steps)
        hit = self._fixed_cache.get(key)
        if hit is not None:
            return hit
        states = np.empty((n_steps + 1, psi_n.size), dtype=complex)
        states[0] = psi_n
        u = self.propagator
        for k in range(n_steps):
            states[k + 1] = u @ states[k]
        n2 = np.einsum("ij,ij->i", states.conj(), states).real
        curve = _FixedCurve(states, n2, self._pvals(states[:n_steps], n2[:n_steps]))
        if len(self._fixed_cache) >= _CURVE_CACHE_MAX:
            self._fixed_cache.pop(next(iter(self._fixed_cache)))
        self._fixed_cache[key] = curve
        return curve

    def _fixed_scan(self, psi_n: np.ndarray, r: np.ndarray):
        """Walk the no-jump evolution from psi_n against uniforms r, blockwise.

        Returns (k, psi_hat_k) for the first step k with r[k] < P_k, or
        (None, psi_final_normalized) if the segment survives all of r.
        """
        u = self.propagator
        cur = psi_n
        off = 0
        n = r.size
        while off < n:
            m = min(_FIXED_BLOCK, n - off)
            states = np.empty((m + 1, cur.size), dtype=complex)
            states[0] = cur
            for k in range(m):
                states[k + 1] = u @ states[k]
            n2 = np.einsum("ij,ij->i", states.conj(), states).real
            pv = self._pvals(states[:m], n2[:m])
            hits = np.flatnonzero(r[off : off + m] < pv)
            if hits.size:
                j = int(hits[0])
                return off + j, states[j] / math.sqrt(n2[j])
            cur = states[m] / math.sqrt(n2[m])
            off += m
        return None, cur

    def _collapse(self, psi_hat: np.ndarray, rng: RngStream):
        """Pick a channel proportionally to its weight and apply it."""
        weights = np.array([np.vdot(op @ psi_hat, op @ psi_hat).real for op in self.ops])
        total = weights.sum()
        if total <= 0.0:
            raise RuntimeError("jump triggered with zero total channel weight")
        u = rng.channel_uniform() * total
        idx = int(np.searchsorted(np.cumsum(weights), u, side="right"))
        idx = min(idx, len(self.ops) - 1)
        post = self.ops[idx] @ psi_hat
        post = post / math.sqrt(np.vdot(post, post).real)
        return self.tags[idx], self.recorded[idx], post

    def _run_fixed(self, psi_n, rng, t_max, share_curve, t_offset) -> StageResult:
        dt = self.dt
        n_steps = int(round(t_max / dt))
        events: list[Event] = []
        if n_steps == 0:
            return StageResult(False, None, None, self._wrap(psi_n), events)
        r = rng.step_uniforms(n_steps)
        k0 = 0
        psi = psi_n
        on_curve = share_curve
        while True:
            if on_curve:
                curve = self.fixed_curve(psi, n_steps)
                hits = np.flatnonzero(r < curve.pvals)
                if hits.size == 0:
                    final = curve.states[n_steps] / math.sqrt(curve.n2[n_steps])
                    return StageResult(False, None, None, self._wrap(final), events)
                k = int(hits[0])
                psi_hat = curve.states[k] / math.sqrt(curve.n2[k])
            else:
                rel, out = self._fixed_scan(psi, r[k0:])
                if rel is None:
                    return StageResult(False, None, None, self._wrap(out), events)
                k = k0 + rel
                psi_hat = out
            tag, rec, psi = self._collapse(psi_hat, rng)
            t_evt = t_offset + (k + 1) * dt
            events.append(Event(t_evt, tag, rec))
            if rec:
                return StageResult(True, tag, t_evt, self._wrap(psi), events)
            k0 = k + 1
            on_curve = False
            if k0 >= n_steps:
                return StageResult(False, None, None, self._wrap(psi), events)

    def _run_fixed_reference(self, psi_n, rng, t_max, t_offset, renorm) -> StageResult:
        """Literal one-step-at-a-time loop; also carries the sqrt(1-P)
        renormalization variant kept for cross-checking."""
        n_steps = int(round(t_max / self.dt))
        events: list[Event] = []
        psi = psi_n
        for k in range(n_steps):
            mexp = np.vdot(psi, self.total_op @ psi).real
            p = self.dt * mexp
            if p >= self.p_step_max:
                raise StepSizeError(
                    f"per-step jump probability {p:.3g} exceeds {self.p_step_max}; reduce dt"
                )
            if rng.step_uniform() < p:
                tag, rec, psi = self._collapse(psi, rng)
                t_evt = t_offset + (k + 1) * self.dt
                events.append(Event(t_evt, tag, rec))
                if rec:
                    return StageResult(True, tag, t_evt, self._wrap(psi), events)
            else:
                prop = self.propagator @ psi
                if renorm == "sqrt1mp":
                    psi = prop / math.sqrt(1.0 - p)
                else:
                    psi = prop / math.sqrt(np.vdot(prop, prop).real)
        nrm = math.sqrt(np.vdot(psi, psi).real)
        return StageResult(False, None, None, self._wrap(psi / nrm), events)

    # -- fast-sampler machinery -----------------------------------------------

    def _coarse_set(self, t_max: float):
        """Coarse step plus dyadic refinement propagators for a window."""
        key = round(float(t_max), 12)
        hit = self._dyadic_cache.get(key)
        if hit is not None:
            return hit
        coarse = max(16.0 * self.dt, t_max / 256.0)
        coarse = min(coarse, t_max)
        levels = max(1, math.ceil(math.log2(max(coarse / TIME_RESOLUTION, 2.0))))
        props = [_scipy_expm(-1j * (coarse / 2**k) * self.h_eff) for k in range(levels + 1)]
        entry = (coarse, props)
        self._dyadic_cache[key] = entry
        return entry

    def _dyadic_advance(self, psi: np.ndarray, span: float, coarse: float, props) -> np.ndarray:
        """Propagate by an arbitrary span < coarse using the dyadic set
        (binary expansion, truncated at the time resolution)."""
        remaining = span
        out = psi
        for k in range(1, len(props)):
            w = coarse / 2**k
            if remaining >= w - 1e-15:
                out = props[k] @ out
                remaining -= w
        return out

    def coarse_curve(self, psi_n: np.ndarray, t_max: float) -> _CoarseCurve:
        key = (psi_n.tobytes(), round(float(t_max), 12))
        hit = self._coarse_cache.get(key)
        if hit is not None:
            return hit
        coarse, props = self._coarse_set(t_max)
        m = int(t_max / coarse)
        pts = [psi_n]
        times = [0.0]
        cur = psi_n
        for _ in range(m):
            cur = props[0] @ cur
            pts.append(cur)
            times.append(times[-1] + coarse)
        rem = t_max - times[-1]
        if rem > TIME_RESOLUTION:
            cur = self._dyadic_advance(cur, rem, coarse, props)
            pts.append(cur)
            times.append(t_max)
        states = np.array(pts)
        n2 = np.einsum("ij,ij->i", states.conj(), states).real
        curve = _CoarseCurve(states, n2, np.array(times))
        if len(self._coarse_cache) >= _CURVE_CACHE_MAX:
            self._coarse_cache.pop(next(iter(self._coarse_cache)))
        self._coarse_cache[key] = curve
        return curve

    def _fast_scan_shared(self, curve: _CoarseCurve, r: float) -> _ScanHit:
        if curve.n2[-1] >= r:
            return _ScanHit(False, None, 0.0, 0.0, 0.0, curve.states[-1])
        i = int(np.argmax(curve.n2 < r))     # first grid point below threshold
        return _ScanHit(
            True,
            curve.states[i - 1],
            float(curve.n2[i - 1]),
            float(curve.times[i - 1]),
            float(curve.times[i] - curve.times[i - 1]),
            None,
        )

    def _fast_scan_lazy(self, psi_n: np.ndarray, t0: float, t_max: float, r: float) -> _ScanHit:
        coarse, props = self._coarse_set(t_max)
        cur = psi_n
        n2_cur = 1.0
        t = t0
        while t + coarse <= t_max + 1e-12:
            nxt = props[0] @ cur
            n2 = np.vdot(nxt, nxt).real
            if n2 < r:
                return _ScanHit(True, cur, n2_cur, t, coarse, None)
            cur, n2_cur, t = nxt, n2, t + coarse
        rem = t_max - t
        if rem > TIME_RESOLUTION:
            nxt = self._dyadic_advance(cur, rem, coarse, props)
            n2 = np.vdot(nxt, nxt).real
            if n2 < r:
                return _ScanHit(True, cur, n2_cur, t, rem, None)
            cur = nxt
        return _ScanHit(False, None, 0.0, 0.0, 0.0, cur)

    def _bisect(self, hit: _ScanHit, r: float, t_max: float):
        """Refine the norm crossing inside one scan interval by greedy dyadic
        descent; the returned state sits just before the crossing."""
        coarse, props = self._coarse_set(t_max)
        cur = hit.psi_left
        advanced = 0.0
        for k in range(1, len(props)):
            w = coarse / 2**k
            if advanced + w <= hit.width + 1e-15:
                cand = props[k] @ cur
                if np.vdot(cand, cand).real >= r:
                    cur = cand
                    advanced += w
        t_jump = hit.t_left + advanced
        psi_hat = cur / math.sqrt(np.vdot(cur, cur).real)
        return t_jump, psi_hat

    def _run_fast(self, psi_n, rng, t_max, share_curve, t_offset) -> StageResult:
        events: list[Event] = []
        psi = psi_n
        t_seg = 0.0
        first_segment = True
        while True:
            r = rng.step_uniform()
            if share_curve and first_segment:
                hit = self._fast_scan_shared(self.coarse_curve(psi, t_max), r)
            else:
                hit = self._fast_scan_lazy(psi, t_seg, t_max, r)
            if not hit.crossed:
                final = hit.final / math.sqrt(np.vdot(hit.final, hit.final).real)
                return StageResult(False, None, None, self._wrap(final), events)
            t_jump, psi_hat = self._bisect(hit, r, t_max)
            tag, rec, psi = self._collapse(psi_hat, rng)
            events.append(Event(t_offset + t_jump, tag, rec))
            if rec:
                return StageResult(True, tag, t_offset + t_jump, self._wrap(psi), events)
            t_seg = t_jump
            first_segment = False

    def _wrap(self, arr: np.ndarray) -> StateVector:
        return StateVector(arr, self.dims)


def _as_unit_array(psi: StateVector | np.ndarray) -> np.ndarray:
    arr = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    return arr / math.sqrt(np.vdot(arr, arr).real)


def step(
    psi: StateVector,
    propagator: OperatorMatrix,
    channels: Sequence[JumpChannel],
    rng: RngStream,
    dt: float,
    *,
    total_op: Optional[np.ndarray] = None,
    p_step_max: float = P_STEP_MAX,
    renorm: str = "exact",
) -> tuple[StateVector, Optional[Event]]:
    """One interval of the jump/no-jump loop on a normalized state.

    Returns the successor state and, when a jump fired, an Event whose time
    is dt (relative to the start of the step).  renorm="sqrt1mp" selects the
    first-order 1/sqrt(1-P) no-jump renormalization instead of dividing by
    the exact norm.
    """
    arr = psi.amplitudes
    m = total_op if total_op is not None else total_jump_operator(list(channels))
    p = dt * np.vdot(arr, m @ arr).real
    if p >= p_step_max:
        raise StepSizeError(f"per-step jump probability {p:.3g} exceeds {p_step_max}; reduce dt")
    if rng.step_uniform() < p:
        weights = np.array(
            [np.vdot(ch.operator.entries @ arr, ch.operator.entries @ arr).real for ch in channels]
        )
        u = rng.channel_uniform() * weights.sum()
        idx = min(int(np.searchsorted(np.cumsum(weights), u, side="right")), len(channels) - 1)
        ch = channels[idx]
        post = ch.operator.entries @ arr
        post = post / math.sqrt(np.vdot(post, post).real)
        return StateVector(post, psi.basis_dims), Event(dt, ch.tag, ch.recorded)
    prop = propagator.entries @ arr
    if renorm == "sqrt1mp":
        prop = prop / math.sqrt(1.0 - p)
    else:
        prop = prop / math.sqrt(np.vdot(prop, prop).real)
    return StateVector(prop, psi.basis_dims), None


def run_until_click(
    psi0: StateVector | np.ndarray,
    engine: StageEngine,
    rng: RngStream,
    t_max: float,
    *,
    sampler: str = "fixed",
    share_curve: bool = False,
    t_offset: float = 0.0,
    renorm: str = "exact",
) -> StageResult:
    """Evolve from psi0 until the first recorded detector click or t_max.

    Unrecorded collapses (lost photons, spontaneous decays) are applied and
    logged but do not stop the window.  share_curve reuses the engine-cached
    deterministic no-jump evolution for this initial state, which changes
    nothing about the sampled statistics.
    """
    psi_n = _as_unit_array(psi0)
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    if t_max == 0.0:
        return StageResult(False, None, None, engine._wrap(psi_n), [])
    if renorm == "sqrt1mp":
        return engine._run_fixed_reference(psi_n, rng, t_max, t_offset, renorm)
    if sampler == "fixed":
        return engine._run_fixed(psi_n, rng, t_max, share_curve, t_offset)
    if sampler == "fast":
        return engine._run_fast(psi_n, rng, t_max, share_curve, t_offset)
    raise ValueError(f"unknown sampler {sampler!r}")


def sample_click_fast(
    psi0: StateVector | np.ndarray,
    engine: StageEngine,
    rng: RngStream,
    t_max: float,
    *,
    share_curve: bool = False,
    t_offset: float = 0.0,
) -> StageResult:
    """Waiting-time sampler; same contract as run_until_click."""
    return run_until_click(
        psi0, engine, rng, t_max, sampler="fast", share_curve=share_curve, t_offset=t_offset
    )


def run_protocol(
    params: SystemParams,
    rng: RngStream,
    *,
    sampler: str = "fast",
    engine: Optional[StageEngine] = None,
) -> TrajectoryRecord:
    """Full two-stage run: wait for the first photon, capture the heralded
    state, apply the phase manipulation, then wait for the second photon.

    The drive is identical in both stages, so one engine serves both.  Event
    times are absolute; the second window opens at the first click.
    """
    eng = engine if engine is not None else StageEngine(params)
    psi0 = initial_state(params)
    s1 = run_until_click(
        psi0, eng, rng.for_stage(0), params.t_wait, sampler=sampler, share_curve=True
    )
    events = list(s1.events)
    if not s1.clicked:
        return TrajectoryRecord(
            rng.stream_index, tuple(events), None, None, Outcome.NO_CLICK, s1.state
        )
    first = ClickInfo(s1.tag, s1.time, s1.state)
    gated = eng.phase_diag * s1.state.amplitudes
    s2 = run_until_click(
        gated,
        eng,
        rng.for_stage(1),
        params.t_wait2,
        sampler=sampler,
        t_offset=first.time,
    )
    events.extend(s2.events)
    if not s2.clicked:
        return TrajectoryRecord(
            rng.stream_index, tuple(events), first, None, Outcome.ONE_CLICK, s2.state
        )
    return TrajectoryRecord(
        rng.stream_index,
        tuple(events),
        first,
        (s2.tag, s2.time),
        Outcome.TWO_CLICKS,
        s2.state,
    )


def run_unconditioned(
    psi0: StateVector | np.ndarray,
    engine: StageEngine,
    rng: RngStream,
    t_grid: Sequence[float],
    observables: Sequence[OperatorMatrix],
) -> np.ndarray:
    """One trajectory of the unconditioned (never-stopping) unraveling,
    returning <O>(t) on the grid for each observable.

    All jumps, recorded or not, are applied and the walk continues to the
    end of the grid; averaging many of these against the density-matrix
    integrator is the correctness oracle for the whole unraveling.
    """
    dt = engine.dt
    t_grid = np.asarray(t_grid, dtype=float)
    grid_idx = np.rint(t_grid / dt).astype(int)
    if np.max(np.abs(grid_idx * dt - t_grid)) > 1e-9:
        raise ValueError("observation times must sit on the dt grid")
    n_steps = int(grid_idx.max())
    obs = [o.entries for o in observables]
    vals = np.empty((len(obs), len(t_grid)))
    psi_n = _as_unit_array(psi0)
    r = rng.step_uniforms(n_steps)

    curve = engine.fixed_curve(psi_n, n_steps)
    hits = np.flatnonzero(r < curve.pvals)
    first_jump = int(hits[0]) if hits.size else None

    def record(j: int, psi_hat: np.ndarray):
        for a, o in enumerate(obs):
            vals[a, j] = np.vdot(psi_hat, o @ psi_hat).real

    horizon = n_steps if first_jump is None else first_jump
    for j, gk in enumerate(grid_idx):
        if gk <= horizon:
            record(j, curve.states[gk] / math.sqrt(curve.n2[gk]))
    if first_jump is None:
        return vals

    # leave the shared curve at the first jump and walk the rest serially
    k = first_jump
    _, _, psi = engine._collapse(curve.states[k] / math.sqrt(curve.n2[k]), rng)
    k += 1
    want = {int(g): j for j, g in enumerate(grid_idx) if g > horizon}
    u = engine.propagator
    m = engine.total_op
    while k <= n_steps:
        if k in want:
            record(want[k], psi)
        if k == n_steps:
            break
        p = dt * np.vdot(psi, m @ psi).real
        if p >= engine.p_step_max:
            raise StepSizeError(f"per-step jump probability {p:.3g} exceeds {engine.p_step_max}")
        if r[k] < p:
            _, _, psi = engine._collapse(psi, rng)
        else:
            nxt = u @ psi
            psi = nxt / math.sqrt(np.vdot(nxt, nxt).real)
        k += 1
    return vals
