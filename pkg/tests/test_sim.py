import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ditpipe.sim import (
    CalibrationError,
    CostModel,
    MemoryModel,
    Partition,
    ScheduleMode,
    SimTrace,
    SimulationError,
    TextPlacement,
    TraceError,
    Variant,
    WorkloadSpec,
    calibrate_linear,
    fit_cost_model,
    peak_memory,
    serial_time,
    simulate,
    step_cost,
    to_chrome_events,
    validate_chrome_events,
    write_chrome_trace,
)
from ditpipe.sim.engine import ACO, DECODE, DENOISE, colocated_makespan

DEDIVAE = ScheduleMode(Variant.DEDIVAE)
PIPESP = ScheduleMode(Variant.DEDIVAE, pipesp=True)
ACO_MODE = ScheduleMode(Variant.DEDIVAE, pipesp=True, aco=True)
OFFLOAD = ScheduleMode(Variant.COLOCATED_OFFLOAD)
COLOCATED = ScheduleMode(Variant.COLOCATED)


# model validation

def test_mode_flag_rules():
    with pytest.raises(ValueError):
        ScheduleMode(Variant.COLOCATED_OFFLOAD, aco=True)
    with pytest.raises(ValueError):
        ScheduleMode(Variant.COLOCATED, text_encoder_placement=TextPlacement.WITH_DECODE)
    assert ACO_MODE.label == "DeDiVAE+PipeSP+Aco"


@pytest.mark.parametrize("kwargs", [{"t_linear": -1.0}, {"overlap_fraction": 1.5},
                                    {"t_decode": math.inf}, {"n_ref": 0}])
def test_cost_model_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        CostModel(**kwargs)


def test_workload_rejects_nonpositive():
    with pytest.raises(ValueError):
        WorkloadSpec(timesteps=0)
    with pytest.raises(ValueError):
        WorkloadSpec(prompts=-1)


@pytest.mark.parametrize("mode,part", [
    (DEDIVAE, Partition(8, 0)), (OFFLOAD, Partition(7, 1)), (DEDIVAE, Partition(0, 8)),
])
def test_simulate_rejects_bad_partition(mode, part):
    with pytest.raises(SimulationError):
        simulate(WorkloadSpec(), CostModel(t_linear=1.0), None, mode, part)


# timing examples

def test_single_stage_latency():
    w = WorkloadSpec(timesteps=30, prompts=1)
    c = CostModel(t_linear=2.0, t_attention=6.0, n_ref=8)
    report, _ = simulate(w, c, None, DEDIVAE, Partition(6, 2))
    assert report.latencies[0] == pytest.approx(30 * 8.0 * 8 / 6, rel=1e-12)


def test_two_prompts_overlap_denoise_and_decode():
    w = WorkloadSpec(timesteps=10, prompts=2)
    c = CostModel(t_linear=1.0, t_attention=3.0, t_decode=20.0, n_ref=7)
    part = Partition(7, 1)
    report, trace = simulate(w, c, None, DEDIVAE, part)
    assert report.makespan < 2 * serial_time(w, c, DEDIVAE, part)
    den1 = [e for e in trace.events if e.kind == DENOISE and e.prompt == 1]
    dec0 = [e for e in trace.events if e.kind == DECODE and e.prompt == 0]
    assert min(e.start for e in den1) < dec0[0].end
    assert max(e.end for e in den1) > dec0[0].start


def aco_step_speedup(t_l, t_a, n_den, n):
    heads = math.lcm(n_den, n)
    w = WorkloadSpec(timesteps=1, prompts=1, heads=heads)
    c = CostModel(t_linear=t_l, t_attention=t_a, n_ref=n_den)
    part = Partition(n_den, n - n_den)
    _, off = simulate(w, c, None, PIPESP, part)
    on, trace = simulate(w, c, None, ACO_MODE, part)
    assert on.aco_steps == 1

    def step(tr):
        return next(e.duration for e in tr.events if e.kind == DENOISE)

    return step(off) / step(trace)


@pytest.mark.parametrize("t_l,t_a,n_den,n", [(2, 6, 7, 8), (1, 3, 6, 8), (1, 1, 4, 8)])
def test_aco_step_speedup_formula(t_l, t_a, n_den, n):
    want = (t_l + t_a) / (t_l + t_a * n_den / n)
    assert aco_step_speedup(t_l, t_a, n_den, n) == pytest.approx(want, rel=1e-9)


def test_aco_speedup_worked_number():
    assert aco_step_speedup(2, 6, 7, 8) == pytest.approx(8 / 7.25, rel=1e-12)


def test_padded_heads_cost_like_real_heads():
    c = CostModel(t_linear=0.0, t_attention=24.0, t_a2a_head=1.0, n_ref=1)
    w = WorkloadSpec(heads=24)
    cost = step_cost(c, w, DEDIVAE, Partition(7, 1), co_processing=False)
    assert cost.attention == pytest.approx(4.0)  # ceil(24/7) = 4 heads of 1 s
    assert cost.comm == pytest.approx(4.0)
    co = step_cost(c, w, DEDIVAE, Partition(7, 1), co_processing=True)
    assert co.attention == pytest.approx(3.0)


def test_pipesp_hides_overlap_fraction():
    c = CostModel(t_a2a_head=0.5, overlap_fraction=0.4)
    w = WorkloadSpec(heads=8)
    plain = step_cost(c, w, DEDIVAE, Partition(4, 4), False).comm
    piped = step_cost(c, w, PIPESP, Partition(4, 4), False).comm
    assert plain == pytest.approx(1.0)
    assert piped == pytest.approx(0.6)


def test_colocated_is_offload_minus_swap():
    w = WorkloadSpec(timesteps=5, prompts=3)
    c = CostModel(t_linear=1.0, t_attention=2.0, t_decode=4.0, t_offload=3.0, t_text=0.5)
    off, _ = simulate(w, c, None, OFFLOAD, Partition(8, 0))
    nof, _ = simulate(w, c, None, COLOCATED, Partition(8, 0))
    assert off.makespan - nof.makespan == pytest.approx(3 * 3.0)
    assert off.makespan == pytest.approx(colocated_makespan(w, c, True, 8))


def test_aco_only_while_decode_pool_idle():
    w = WorkloadSpec(timesteps=4, prompts=3)
    c = CostModel(t_linear=1.0, t_attention=3.0, t_decode=10.0)
    report, trace = simulate(w, c, None, ACO_MODE, Partition(7, 1))
    aco = [e for e in trace.events if e.kind == ACO]
    steps = sorted((e for e in trace.events if e.kind == DENOISE and e.gpu == 0),
                   key=lambda e: e.start)
    # Nothing to decode yet: every step of prompt 0 is co-processed.
    assert sum(e.prompt == 0 for e in aco) == 4
    # Prompt 1 starts while latent 0 is being decoded (10 s), so its first
    # steps run on the denoise group alone.
    first = steps[4]
    assert first.prompt == 1
    assert not any(e.prompt == 1 and first.start <= e.start < first.end for e in aco)
    assert report.aco_steps == len(aco)


def test_text_on_decode_group():
    w = WorkloadSpec(timesteps=2, prompts=3)
    c = CostModel(t_linear=1.0, t_attention=1.0, t_text=2.0, t_decode=1.0)
    mode = ScheduleMode(Variant.DEDIVAE, text_encoder_placement=TextPlacement.WITH_DECODE)
    report, trace = simulate(w, c, None, mode, Partition(6, 2))
    texts = [e for e in trace.events if e.kind == "text_encode"]
    assert texts and all(e.gpu >= 6 for e in texts)
    assert len(report.latencies) == 3


def test_zero_prompts():
    report, trace = simulate(WorkloadSpec(prompts=0), CostModel(t_linear=1.0), None,
                             DEDIVAE, Partition(7, 1))
    assert report.latencies == [] and report.makespan == 0.0 and trace.events == []


# invariants

cost_values = st.floats(0.0, 5.0, allow_nan=False)


@st.composite
def scenarios(draw):
    n = draw(st.integers(2, 8))
    n_dec = draw(st.integers(1, n - 1))
    w = WorkloadSpec(timesteps=draw(st.integers(1, 6)), prompts=draw(st.integers(1, 6)),
                     heads=draw(st.integers(1, 30)))
    c = CostModel(t_linear=draw(cost_values), t_attention=draw(cost_values),
                  t_a2a_head=draw(st.floats(0, 0.3)), overlap_fraction=draw(st.floats(0, 1)),
                  t_decode=draw(cost_values), t_text=draw(cost_values),
                  t_xfer=draw(st.floats(0, 0.5)), t_offload=draw(cost_values))
    mode = draw(st.sampled_from([
        DEDIVAE, PIPESP, ACO_MODE, OFFLOAD, COLOCATED,
        ScheduleMode(Variant.DEDIVAE, True, True, TextPlacement.WITH_DECODE),
    ]))
    part = Partition(n - n_dec, n_dec) if mode.decoupled else Partition(n, 0)
    return w, c, mode, part


@settings(max_examples=150, deadline=None)
@given(scenarios())
def test_trace_invariants_hold(sc):
    w, c, mode, part = sc
    report, trace = simulate(w, c, None, mode, part)
    trace.check_no_overlap()
    busy = trace.busy_time()
    for g, b in enumerate(report.busy_time):
        assert b == pytest.approx(busy.get(g, 0.0), abs=1e-9)
    assert all(0.0 <= f <= 1.0 for f in report.busy_fraction)
    assert report.makespan >= max(report.latencies) - 1e-9
    assert all(math.isfinite(e.start) and e.start >= 0 for e in trace.events)
    assert validate_chrome_events(to_chrome_events(trace)) == len(trace.events)


@settings(max_examples=100, deadline=None)
@given(scenarios())
def test_simulation_is_deterministic(sc):
    w, c, mode, part = sc
    a = simulate(w, c, None, mode, part)
    b = simulate(w, c, None, mode, part)
    assert a[1].events == b[1].events
    assert a[0].to_dict() == b[0].to_dict()


@settings(max_examples=100, deadline=None)
@given(scenarios())
def test_pipelining_bounds(sc):
    w, c, mode, part = sc
    if not mode.decoupled or mode.aco:
        return
    report, _ = simulate(w, c, None, mode, part)
    p = w.prompts
    upper = p * serial_time(w, c, mode, part)
    steps = w.timesteps * step_cost(c, w, mode, part, False).total
    text_on_den = 0.0 if mode.text_encoder_placement is TextPlacement.WITH_DECODE else c.t_text
    den_work = p * (steps + text_on_den)
    dec_work = p * c.t_decode / part.n_decode
    assert report.makespan <= upper + 1e-9
    assert report.makespan >= max(den_work, dec_work) - 1e-9


def test_trace_checks_catch_faults():
    tr = SimTrace()
    tr.add(0, DENOISE, 0.0, 2.0, 0)
    tr.add(0, DECODE, 1.0, 3.0, 0)
    with pytest.raises(TraceError):
        tr.check_no_overlap()
    with pytest.raises(TraceError):
        tr.check_work_conservation({0: 1.0})
    bad = SimTrace()
    bad.add(0, DENOISE, 2.0, 1.0, 0)
    with pytest.raises(TraceError):
        bad.check_times()


# memory

def test_memory_zero_model():
    roles = peak_memory(MemoryModel(), WorkloadSpec(), DEDIVAE, Partition(7, 1))
    assert all(v == 0 for v in roles.values())


@settings(max_examples=50)
@given(st.floats(0.1, 30), st.floats(0.1, 30), st.floats(0, 30), st.floats(0, 1e-6),
       st.floats(0, 1e-6), st.booleans())
def test_dedivae_peaks_below_colocated(w_dit, w_vae, w_text, a_den, a_dec, text_dec):
    m = MemoryModel(w_dit, w_vae, w_text, a_den, a_dec)
    w = WorkloadSpec()
    col = peak_memory(m, w, COLOCATED, Partition(8, 0))["colocated"]
    place = TextPlacement.WITH_DECODE if text_dec else TextPlacement.WITH_DENOISE
    mode = ScheduleMode(Variant.DEDIVAE, text_encoder_placement=place)
    roles = peak_memory(m, w, mode, Partition(7, 1))
    assert all(v < col for v in roles.values())


def test_report_memory_and_oom():
    m = MemoryModel(w_dit=30, w_vae=10, w_text=10)
    w = WorkloadSpec(prompts=1, timesteps=1)
    c = CostModel(t_linear=1.0)
    col, _ = simulate(w, c, m, COLOCATED, Partition(8, 0))
    ded, _ = simulate(w, c, m, DEDIVAE, Partition(7, 1))
    assert col.oom and col.peak_memory == [50.0] * 8
    assert not ded.oom and ded.peak_memory == [40.0] * 7 + [10.0]


# calibration

def test_calibrate_linear_examples():
    fit = calibrate_linear((10, 227), (50, 622))
    assert (fit.per_step, fit.fixed) == (9.875, 128.25)
    assert fit.predict(30) == 424.5
    assert calibrate_linear((10, 107), (50, 502)).predict(30) == 304.5
    flat = calibrate_linear((1, 5.0), (2, 5.0))
    assert (flat.per_step, flat.fixed) == (0.0, 5.0)


def test_calibrate_linear_errors():
    with pytest.raises(CalibrationError):
        calibrate_linear((10, 1.0), (10, 2.0))
    with pytest.raises(CalibrationError):
        calibrate_linear((10, -1.0), (20, 2.0))


def test_fit_cost_model_hits_anchors():
    template = CostModel(t_linear=1.0, t_attention=2.0, t_decode=3.0, t_offload=1.0, t_text=0.5)
    w = WorkloadSpec(prompts=10)
    fit = fit_cost_model(template, w, OFFLOAD, Partition(8, 0), (10, 227), (50, 622))
    assert fit.residual < 1e-9
    for t, lat in [(10, 227), (50, 622)]:
        w_t = WorkloadSpec(prompts=10, timesteps=t)
        assert simulate(w_t, fit.cost, None, OFFLOAD, Partition(8, 0))[0].makespan == \
            pytest.approx(lat, rel=1e-9)


# chrome export

def test_chrome_trace_round_trip(tmp_path):
    w = WorkloadSpec(timesteps=3, prompts=3)
    c = CostModel(t_linear=1.0, t_attention=1.0, t_decode=2.0, t_text=0.5)
    _, trace = simulate(w, c, None, ACO_MODE, Partition(3, 1))
    path = tmp_path / "t.json"
    write_chrome_trace(trace, path)
    events = json.loads(path.read_text())
    assert validate_chrome_events(events) == len(trace.events)
    names = {e["args"]["name"] for e in events if e["name"] == "process_name"}
    assert names == {"denoise", "decode"}


def test_chrome_validator_rejects_bad_streams():
    begin = {"name": "a", "ph": "B", "pid": 0, "tid": 0, "ts": 5.0}
    with pytest.raises(TraceError):
        validate_chrome_events([begin])
    with pytest.raises(TraceError):
        validate_chrome_events([begin, {**begin, "ph": "E", "ts": 1.0}])
    with pytest.raises(TraceError):
        validate_chrome_events([begin, {**begin, "ph": "E", "name": "b", "ts": 6.0}])
    assert validate_chrome_events(to_chrome_events(SimTrace())) == 0
