import math

import numpy as np
import pytest
from scipy import stats

from homsim.hilbert import BasisIndex, OperatorMatrix, basis_state, matrix_exp
from homsim.model import ChannelTag, SystemParams, initial_state, stage_hamiltonian
from homsim.trajectory import (
    Outcome,
    RngStream,
    StageEngine,
    StepSizeError,
    TrajectoryRecord,
    precompute_propagator,
    run_protocol,
    run_until_click,
    sample_click_fast,
    step,
)
from homsim.experiments import fidelity_to_target

IDEAL = SystemParams(adiabatic=False)
RNG = np.random.default_rng(31337)


def frozen_photon_params(dt=1e-4):
    # drive off: a single photon in cavity 1 just leaks at rate 2*kappa
    return SystemParams(omega=0.0, dt=dt, adiabatic=False)


def photon_state(p):
    return basis_state(BasisIndex("a", "a", 1, 0), p.dims)


# -- propagator -----------------------------------------------------------------


def test_propagator_unitary_without_damping():
    p = SystemParams(kappa=0.0, adiabatic=False)
    u = precompute_propagator(stage_hamiltonian(p), p.dt).entries
    assert np.max(np.abs(u.conj().T @ u - np.eye(36))) < 1e-10


def test_propagator_first_order_limit():
    h = RNG.normal(size=(6, 6)) + 1j * RNG.normal(size=(6, 6))
    h = OperatorMatrix(h / np.linalg.norm(h, 2), (6,))
    dt = 1e-4
    u = precompute_propagator(h, dt).entries
    first = np.eye(6) - 1j * dt * h.entries
    assert np.max(np.abs(u - first)) < 1e-7


def test_propagator_contracts():
    u = precompute_propagator(stage_hamiltonian(IDEAL), IDEAL.dt).entries
    for _ in range(10):
        v = RNG.normal(size=36) + 1j * RNG.normal(size=36)
        v /= np.linalg.norm(v)
        assert np.linalg.norm(u @ v) <= 1.0 + 1e-9


# -- single step ------------------------------------------------------------------


def test_step_no_damping_is_unitary_evolution():
    p = SystemParams(kappa=0.0, adiabatic=False)
    eng = StageEngine(p)
    u_op = OperatorMatrix(eng.propagator, p.dims)
    psi = initial_state(p)
    rng = RngStream(3, 0)
    for k in range(50):
        psi, event = step(psi, u_op, eng.channels, rng, p.dt, total_op=eng.total_op)
        assert event is None
        assert np.vdot(psi.amplitudes, psi.amplitudes).real == pytest.approx(1.0)
    exact = matrix_exp(stage_hamiltonian(p), -1j * 50 * p.dt).entries @ initial_state(p).amplitudes
    assert np.max(np.abs(psi.amplitudes - exact)) < 1e-10


def test_step_entangled_dark_state_never_jumps():
    # no photons and no |c> population: every channel annihilates the state
    p = SystemParams(gamma_ca=0.3, gamma_cb=0.3, adiabatic=False)
    eng = StageEngine(p)
    dims = p.dims
    amp = np.zeros(36, dtype=complex)
    amp[BasisIndex("b", "a", 0, 0).flatten(dims)] = 1 / math.sqrt(2)
    amp[BasisIndex("a", "b", 0, 0).flatten(dims)] = 1 / math.sqrt(2)
    psi = amp
    assert np.vdot(psi, eng.total_op @ psi).real == pytest.approx(0.0, abs=1e-15)


def test_step_determinism():
    eng = StageEngine(IDEAL)
    u_op = OperatorMatrix(eng.propagator, IDEAL.dims)

    def run_sequence():
        rng = RngStream(11, 4)
        psi = photon_state(IDEAL)
        out = []
        for _ in range(200):
            psi, ev = step(psi, u_op, eng.channels, rng, IDEAL.dt, total_op=eng.total_op,
                           p_step_max=0.5)
            out.append((psi.amplitudes.copy(), ev))
        return out

    a, b = run_sequence(), run_sequence()
    for (sa, ea), (sb, eb) in zip(a, b):
        assert np.array_equal(sa, sb)
        assert ea == eb


def test_step_size_guard():
    p = frozen_photon_params(dt=0.01)   # per-step jump probability 2*kappa*dt = 0.2
    eng = StageEngine(p)
    with pytest.raises(StepSizeError):
        run_until_click(photon_state(p), eng, RngStream(0, 0), 1.0, sampler="fixed")
    u_op = OperatorMatrix(eng.propagator, p.dims)
    with pytest.raises(StepSizeError):
        step(photon_state(p), u_op, eng.channels, RngStream(0, 0), p.dt, total_op=eng.total_op)


# -- run_until_click ---------------------------------------------------------------


def test_zero_window_no_click():
    eng = StageEngine(IDEAL)
    for sampler in ("fixed", "fast"):
        res = run_until_click(initial_state(IDEAL), eng, RngStream(0, 0), 0.0, sampler=sampler)
        assert not res.clicked and res.events == []


def test_no_decay_times_out():
    p = SystemParams(kappa=0.0, adiabatic=False)
    eng = StageEngine(p)
    res = sample_click_fast(initial_state(p), eng, RngStream(0, 1), p.t_wait)
    assert not res.clicked
    assert np.vdot(res.state.amplitudes, res.state.amplitudes).real == pytest.approx(1.0)


def test_waiting_time_exponential_both_samplers():
    p = frozen_photon_params()
    eng = StageEngine(p)
    psi0 = photon_state(p)
    scale = 1.0 / (2.0 * p.kappa)
    samples = {}
    for seed, sampler in ((50, "fixed"), (60, "fast")):
        ts = []
        for i in range(1500):
            res = run_until_click(psi0, eng, RngStream(seed, i).for_stage(0), 1.0,
                                  sampler=sampler, share_curve=True)
            assert res.clicked
            ts.append(res.time)
        samples[sampler] = np.asarray(ts)
        ks = stats.kstest(samples[sampler], "expon", args=(0.0, scale))
        assert ks.pvalue > 0.01, f"{sampler}: KS p={ks.pvalue}"
    assert stats.ks_2samp(samples["fixed"], samples["fast"]).pvalue > 0.01


def test_click_fraction_matches_survival_oracle():
    # deterministic oracle: P(click) = 1 - || exp(-i H_eff T) psi0 ||^2
    eng = StageEngine(IDEAL)
    u = matrix_exp(stage_hamiltonian(IDEAL), -1j * IDEAL.t_wait).entries
    survival = float(np.vdot(u @ initial_state(IDEAL).amplitudes,
                             u @ initial_state(IDEAL).amplitudes).real)
    p_true = 1.0 - survival
    n = 4000
    clicks = sum(
        run_until_click(initial_state(IDEAL), eng, RngStream(70, i).for_stage(0),
                        IDEAL.t_wait, sampler="fast", share_curve=True).clicked
        for i in range(n)
    )
    p_hat = clicks / n
    sd = math.sqrt(p_true * (1 - p_true) / n)
    assert abs(p_hat - p_true) <= 3 * sd
    assert 0.08 < p_hat < 0.12


def test_fixed_runner_equals_step_loop():
    # the segment-replay runner must reproduce the literal stepping loop
    p = frozen_photon_params()
    eng = StageEngine(p)
    u_op = OperatorMatrix(eng.propagator, p.dims)
    n_steps = 500
    for idx in range(25):
        res = run_until_click(photon_state(p), eng, RngStream(80, idx).for_stage(0),
                              n_steps * p.dt, sampler="fixed")
        rng = RngStream(80, idx).for_stage(0)
        psi = photon_state(p)
        loop_event = None
        for k in range(n_steps):
            psi, ev = step(psi, u_op, eng.channels, rng, p.dt, total_op=eng.total_op)
            if ev is not None:
                loop_event = (round((k + 1) * p.dt, 12), ev.tag)
                break
        if res.clicked:
            assert loop_event is not None
            assert loop_event[1] is res.tag
            assert res.time == pytest.approx(loop_event[0], abs=1e-12)
            assert np.max(np.abs(res.state.amplitudes - psi.amplitudes)) < 1e-10
        else:
            assert loop_event is None


def test_norm_monotone_along_no_jump_segments():
    eng = StageEngine(SystemParams(gamma_ca=0.2, gamma_cb=0.2, adiabatic=False))
    psi = RNG.normal(size=36) + 1j * RNG.normal(size=36)
    psi /= np.linalg.norm(psi)
    norms = [1.0]
    for _ in range(300):
        psi = eng.propagator @ psi
        norms.append(float(np.vdot(psi, psi).real))
    diffs = np.diff(norms)
    assert np.all(diffs <= 1e-9)


def test_detection_thinning():
    # exactly one leaked photon per run; recording it is a Bernoulli(eta) draw
    eta = 0.7
    p = frozen_photon_params().with_(eta=eta)
    eng = StageEngine(p)
    psi0 = photon_state(p)
    n = 3000
    recorded = 0
    for i in range(n):
        res = run_until_click(psi0, eng, RngStream(90, i).for_stage(0), 1.0,
                              sampler="fast", share_curve=True)
        assert len(res.events) == 1          # photon always collapses exactly once
        recorded += res.clicked
    sd = math.sqrt(eta * (1 - eta) / n)
    assert abs(recorded / n - eta) <= 3 * sd


def test_sqrt1mp_variant_statistical_agreement():
    # boosted emission rate so a short window has plenty of clicks
    p = SystemParams(omega=2.0, kappa=2.0, delta=10.0, t_wait=10.0, adiabatic=False)
    eng = StageEngine(p)
    n = 500
    p_exact = sum(
        run_until_click(initial_state(p), eng, RngStream(100, i).for_stage(0), p.t_wait,
                        sampler="fixed", share_curve=True).clicked
        for i in range(n)
    ) / n
    p_compat = sum(
        run_until_click(initial_state(p), eng, RngStream(101, i).for_stage(0), p.t_wait,
                        renorm="sqrt1mp").clicked
        for i in range(n)
    ) / n
    sd = math.sqrt(2 * p_exact * (1 - p_exact) / n)
    assert abs(p_exact - p_compat) <= 4 * sd


def test_herald_fidelity_by_tag():
    eng = StageEngine(IDEAL)
    sums = {ChannelTag.D1: [], ChannelTag.D2: []}
    for i in range(2500):
        res = run_until_click(initial_state(IDEAL), eng, RngStream(110, i).for_stage(0),
                              IDEAL.t_wait, sampler="fast", share_curve=True)
        if res.clicked:
            sums[res.tag].append(fidelity_to_target(res.state, res.tag))
    for tag, vals in sums.items():
        assert len(vals) > 50
        assert np.mean(vals) >= 0.99, f"{tag}: mean fidelity {np.mean(vals)}"


# -- full protocol -----------------------------------------------------------------


def test_protocol_same_detector_at_zero_phase():
    p = SystemParams(adiabatic=True)
    eng = StageEngine(p)
    two = 0
    for i in range(600):
        rec = run_protocol(p, RngStream(120, i), sampler="fast", engine=eng)
        if rec.outcome is Outcome.TWO_CLICKS:
            two += 1
            assert rec.second_click[0] is rec.first_click.tag
    assert two > 20


def test_protocol_opposite_detector_at_pi():
    p = SystemParams(adiabatic=True, phi=math.pi)
    eng = StageEngine(p)
    two = 0
    for i in range(600):
        rec = run_protocol(p, RngStream(130, i), sampler="fast", engine=eng)
        if rec.outcome is Outcome.TWO_CLICKS:
            two += 1
            assert rec.second_click[0] is not rec.first_click.tag
    assert two > 20


def test_protocol_second_photon_nearly_certain():
    p = SystemParams(adiabatic=True)
    eng = StageEngine(p)
    heralds = two = 0
    for i in range(800):
        rec = run_protocol(p, RngStream(140, i), sampler="fast", engine=eng)
        heralds += rec.first_click is not None
        two += rec.outcome is Outcome.TWO_CLICKS
    assert heralds > 30
    assert two / heralds >= 0.9


def test_protocol_event_bookkeeping():
    p = SystemParams(gamma_ca=0.2, gamma_cb=0.2, adiabatic=False)
    eng = StageEngine(p)
    seen_two = False
    for i in range(300):
        rec = run_protocol(p, RngStream(150, i), sampler="fast", engine=eng)
        times = [e.time for e in rec.events]
        assert all(0 <= t <= p.t_wait + p.t_wait2 for t in times)
        assert times == sorted(times)
        if rec.outcome is Outcome.TWO_CLICKS:
            seen_two = True
            assert rec.second_click[1] > rec.first_click.time
    assert seen_two


def test_protocol_reproducible_bitwise():
    p = SystemParams(gamma_ca=0.1, gamma_cb=0.1, adiabatic=False)
    for sampler in ("fast", "fixed"):
        t_wait2 = 200.0 if sampler == "fixed" else p.t_wait2
        pp = p.with_(t_wait2=t_wait2)
        a = [run_protocol(pp, RngStream(160, i), sampler=sampler, engine=StageEngine(pp))
             for i in range(12)]
        b = [run_protocol(pp, RngStream(160, i), sampler=sampler, engine=StageEngine(pp))
             for i in range(12)]
        for ra, rb in zip(a, b):
            assert ra.outcome is rb.outcome
            assert ra.events == rb.events
            assert np.array_equal(ra.final_state.amplitudes, rb.final_state.amplitudes)


def test_record_invariants_enforced():
    p = SystemParams()
    psi = initial_state(p)
    with pytest.raises(ValueError):
        TrajectoryRecord(0, (), None, None, Outcome.ONE_CLICK, psi)


def test_fast_vs_fixed_click_time_distributions():
    eng = StageEngine(IDEAL)
    psi0 = initial_state(IDEAL)
    samples = {}
    for seed, sampler in ((170, "fixed"), (180, "fast")):
        ts = []
        for i in range(2000):
            res = run_until_click(psi0, eng, RngStream(seed, i).for_stage(0), IDEAL.t_wait,
                                  sampler=sampler, share_curve=True)
            if res.clicked:
                ts.append(res.time)
        samples[sampler] = np.asarray(ts)
    assert stats.ks_2samp(samples["fixed"], samples["fast"]).pvalue > 0.01
