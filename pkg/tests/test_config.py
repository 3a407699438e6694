import json
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apc_echo.config import PRESETS, job_hash, merge_preset, parse_config, parse_document, serialize_job
from apc_echo.errors import ConfigError, EchoHaltWarning

FIG2_TIMINGS = {"protocol": "apc", "anchor": "center", "t_d": 5.5, "t_r1": 20, "t_r2": 45, "t_c1": 45.5, "t_c2": 60}


def errors_of(doc):
    text = doc if isinstance(doc, str) else json.dumps(doc)
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value.errors


def test_minimal_document_uses_fig2_defaults():
    job = parse_document({"version": 1, "sequence": FIG2_TIMINGS})
    assert len(job.pulses) == 5 and job.protocol_tag == "apc_double_rephase"
    assert (job.grid.fwhm, job.grid.span, job.grid.n) == (60.0, 100.0, 201)
    assert (job.integrator.dt, job.integrator.stride, job.integrator.t_end) == (0.002, 50, 80.0)
    assert job == parse_document({"version": 1, "preset": "fig2"})


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_parse_and_round_trip(name):
    job = parse_document({"version": 1, "preset": name})
    assert parse_config(serialize_job(job)) == job


def test_fig3_presets_differ_only_in_dephasing():
    blue = parse_document({"version": 1, "preset": "fig3-blue"})
    red = parse_document({"version": 1, "preset": "fig3-red"})
    assert (blue.atom.Gamma31, blue.atom.Gamma32, blue.atom.gamma31) == (1.0, 1.0, 2.0)
    assert red.atom.gamma31 == red.atom.gamma32 == 5.0
    assert blue.pulses == red.pulses and blue.grid == red.grid


def test_preset_sections_merge_key_by_key():
    doc = merge_preset({"version": 1, "preset": "fig3-blue", "atom": {"gamma31": 3.0}})
    assert doc["atom"]["gamma31"] == 3.0 and doc["atom"]["Gamma31"] == 1.0


def test_unknown_key_is_named():
    assert errors_of({"version": 1, "preset": "fig2", "grid": {"durration": 1}}) == [
        ("grid.durration", "unknown key 'durration'")]


def test_negative_duration_names_pulse_and_field():
    doc = {"version": 1, "preset": "fig2", "sequence": {"protocol": "custom", "pulses": [
        {"label": "D", "channel": "A", "t_start": 5, "duration": 1, "area": 0.1},
        {"label": "R1", "channel": "A", "t_start": 20, "duration": -1, "area": 1}]}}
    ((path, msg),) = errors_of(doc)
    assert path == "sequence.pulses[1].duration" and "R1" in msg


def test_syntax_error_reports_position():
    ((path, msg),) = errors_of('{"version": 1,\n  "preset": "fig2",}')
    assert "line 2" in msg and "column" in msg


@pytest.mark.parametrize("doc,path", [
    ({"preset": "fig2"}, "version"),
    ({"version": 2, "preset": "fig2"}, "version"),
    ({"version": 1, "preset": "fig9"}, "preset"),
    ({"version": 1}, "sequence"),
    ({"version": 1, "preset": "fig2", "atom": {"gamma31": -1}}, "atom.gamma31"),
    ({"version": 1, "preset": "fig2", "grid": {"n": 0}}, "grid.n"),
    ({"version": 1, "preset": "fig2", "integrator": {"dt": 0.01}}, "integrator.dt (pulse R1 at t=19.95 us)"),
    ({"version": 1, "preset": "fig2", "integrator": {"t_end": -1}}, "integrator.t_end"),
    ({"version": 1, "sequence": {**FIG2_TIMINGS, "t_c1": 44.0}}, "sequence (c1_before_r2)"),
    ({"version": 1, "sequence": {**FIG2_TIMINGS, "areas": {"D": 0.6}}}, "sequence (data_area)"),
    ({"version": 1, "sequence": {"protocol": "apc", "t_d": 5.5}}, "sequence.t_r1"),
    ({"version": 1, "sequence": {"protocol": "two_pulse", "t_d": [1, 2], "t_r1": 9}}, "sequence.t_d"),
    ({"version": 1, "preset": "fig2", "echo": {"windows": [{"label": "E", "t_lo": 70, "t_hi": 90}]}},
     "echo.windows[0]"),
    ({"version": 1, "preset": "fig2", "outputs": [{"kind": "plot", "path": "x"}]}, "outputs[0].kind"),
])
def test_invalid_documents_are_rejected_with_paths(doc, path):
    assert path in [p for p, _ in errors_of(doc)]


def test_halt_is_a_warning_not_an_error():
    with pytest.warns(EchoHaltWarning):
        parse_document({"version": 1, "sequence": {**FIG2_TIMINGS, "t_c1": 58.0, "t_c2": 70.0}})


def test_hash_is_stable_and_sensitive():
    a = parse_document({"version": 1, "preset": "fig2"})
    b = parse_document({"version": 1, "preset": "fig2", "atom": {"gamma31": 0.5}})
    assert job_hash(a) == job_hash(parse_config(serialize_job(a)))
    assert len(job_hash(a)) == 64 and job_hash(a) != job_hash(b)


# --- round trip over generated jobs -------------------------------------------

finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def documents(draw):
    n = draw(st.integers(1, 4))
    gaps = draw(st.lists(st.floats(0.0, 20.0, **finite), min_size=n, max_size=n))
    durs = draw(st.lists(st.floats(0.05, 2.0, **finite), min_size=n, max_size=n))
    pulses, t = [], draw(st.floats(0.0, 5.0, **finite))
    for gap, dur in zip(gaps, durs):
        t += gap
        pulses.append({"label": "custom", "channel": draw(st.sampled_from("AB")), "t_start": t, "duration": dur,
                       "area": draw(st.floats(0.0, 2.0, **finite)), "phase": draw(st.floats(-1, 1, **finite))})
        t += dur
    rates = draw(st.lists(st.floats(0.0, 10.0, **finite), min_size=6, max_size=6))
    names = ("Gamma31", "Gamma32", "Gamma21", "gamma31", "gamma32", "gamma21")
    return {
        "version": 1,
        "atom": {"delta_opt": draw(st.floats(-50, 50, **finite)), **dict(zip(names, rates))},
        "grid": {"fwhm": draw(st.floats(1, 500, **finite)), "span": draw(st.floats(1, 1000, **finite)),
                 "n": draw(st.integers(1, 501))},
        "sequence": {"protocol": "custom", "pulses": pulses},
        "integrator": {"dt": min(durs) / draw(st.floats(20, 100, **finite)), "stride": draw(st.integers(1, 100)),
                       "t_start": 0.0, "t_end": t + draw(st.floats(0.5, 50, **finite))},
        "echo": {"threshold": draw(st.floats(0, 1, **finite)), "halfwidth": draw(st.floats(0.1, 10, **finite))},
        "outputs": [{"kind": "timeseries", "path": "out/ts.csv", "format": draw(st.sampled_from(["csv", "json"]))}],
    }


@settings(max_examples=60, deadline=None)
@given(doc=documents())
def test_parse_serialize_round_trip(doc):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        job = parse_document(doc)
        again = parse_config(serialize_job(job))
    assert again == job
    assert serialize_job(again) == serialize_job(job)
    assert job_hash(again) == job_hash(job)
