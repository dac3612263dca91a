import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctgarma.ingest import (ClinicalVars, CtgRecord, DeliveryType, Outcomes, ParseError,
                            StructuralError, SynthConfig, arx_simulate, format_signal,
                            load_dataset, parse_record, parse_signal, serialize_record,
                            synth_record, write_dataset)

META_HEADER = ("patient_id,ph,apgar5,maternal_age,parity,gravidity,gestation_weeks,"
               "hypertension,delivery_type,stage1_min,stage2_min")


def test_parse_signal_with_missing_cells():
    text = "t_s,fhr_bpm,uc\n0.0,140,10\n0.25,,12\n0.5,141.5,\n"
    fhr, uc = parse_signal(text)
    np.testing.assert_array_equal(fhr, [140.0, np.nan, 141.5])
    np.testing.assert_array_equal(uc, [10.0, 12.0, np.nan])


@pytest.mark.parametrize("text, exc", [
    ("", StructuralError),
    ("t_s,fhr,uc\n0,1,2\n", StructuralError),
    ("t_s,fhr_bpm\n0,1\n", StructuralError),
    ("t_s,fhr_bpm,uc\n", StructuralError),
    ("t_s,fhr_bpm,uc\n0,abc,1\n", ParseError),
    ("t_s,fhr_bpm,uc\n0,140,1\n0.5,140,1\n", ParseError),
    ("t_s,fhr_bpm,uc\n0,140\n", ParseError),
])
def test_parse_signal_rejects(text, exc):
    with pytest.raises(exc):
        parse_signal(text)


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as info:
        parse_signal("t_s,fhr_bpm,uc\n0,140,1\n0.25,x,1\n")
    assert info.value.line == 3


def test_parse_record_from_text():
    meta = META_HEADER + "\np1,7.2,9,31,1,2,39.5,0,V,200,12\n"
    rec = parse_record("t_s,fhr_bpm,uc\n0,140,10\n0.25,141,11\n", meta)
    assert rec.patient_id == "p1"
    assert rec.outcomes == Outcomes(7.2, 9)
    assert rec.clinical.hypertension is False
    assert rec.clinical.delivery_type is DeliveryType.VAGINAL
    assert rec.clinical.gestation == 39.5


def test_absent_metadata_is_none():
    meta = META_HEADER + "\np1,,,,,,,,,,\n"
    rec = parse_record("t_s,fhr_bpm,uc\n0,140,10\n", meta)
    assert rec.outcomes == Outcomes()
    assert rec.clinical == ClinicalVars()


@pytest.mark.parametrize("row", [
    "p1,7.2,11,,,,,,,,",
    "p1,8.2,9,,,,,,,,",
    "p1,7.2,9,,,,,2,,,",
    "p1,7.2,9,,,,,,X,,",
    "p1,7.2,9,,1.5,,,,,,",
    "p1,7.2,9,-3,,,,,,,",
])
def test_bad_metadata(row):
    with pytest.raises((ParseError, StructuralError)):
        parse_record("t_s,fhr_bpm,uc\n0,140,10\n", META_HEADER + "\n" + row + "\n")


def test_record_length_mismatch():
    with pytest.raises(StructuralError):
        CtgRecord("x", [1.0, 2.0], [1.0])


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
cell = st.one_of(finite, st.just(math.nan))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(cell, cell), min_size=1, max_size=40),
       st.one_of(st.none(), st.floats(6.5, 7.6)), st.one_of(st.none(), st.integers(0, 10)),
       st.one_of(st.none(), st.integers(0, 8)), st.one_of(st.none(), st.booleans()),
       st.one_of(st.none(), st.sampled_from(list(DeliveryType))))
def test_round_trip(samples, ph, apgar, parity, hyp, delivery):
    fhr, uc = zip(*samples)
    rec = CtgRecord("rt", fhr, uc,
                    ClinicalVars(parity=parity, hypertension=hyp, delivery_type=delivery),
                    Outcomes(ph, apgar))
    sig, meta = serialize_record(rec)
    assert parse_record(sig, meta) == rec


def test_load_dataset_sorted_and_diagnostics(tmp_path):
    recs = [CtgRecord(pid, [140.0, 141.0], [1.0, 2.0]) for pid in ("c", "a", "b")]
    write_dataset(recs, tmp_path)
    loaded, diags = load_dataset(tmp_path)
    assert [r.patient_id for r in loaded] == ["a", "b", "c"]
    assert diags == []
    os.remove(tmp_path / "b.csv")
    loaded, diags = load_dataset(tmp_path)
    assert [r.patient_id for r in loaded] == ["a", "c"]
    assert len(diags) == 1 and "b" in diags[0]


def test_load_dataset_empty_and_missing(tmp_path):
    records, diags = load_dataset(tmp_path)
    assert records == [] and diags
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


def test_load_dataset_reports_bad_file(tmp_path):
    write_dataset([CtgRecord("a", [140.0], [1.0]), CtgRecord("b", [140.0], [1.0])], tmp_path)
    (tmp_path / "a.csv").write_text("garbage\n")
    loaded, diags = load_dataset(tmp_path)
    assert [r.patient_id for r in loaded] == ["b"]
    assert diags and diags[0].startswith("a:")


def test_synth_null_response():
    rec = synth_record(SynthConfig(duration_s=120, alpha=(0.0, 0.0), beta=(0.0,)))
    assert np.all(rec.fhr == 140.0)


def test_synth_obeys_recursion():
    cfg = SynthConfig(duration_s=600, alpha=(1.2, -0.35), beta=(-0.1,), seed=3)
    rec = synth_record(cfg)
    x = rec.fhr - cfg.baseline_bpm
    u = rec.uc - cfg.uc_tone
    k = np.arange(2, len(x))
    pred = 1.2 * x[k - 1] - 0.35 * x[k - 2] - 0.1 * u[k - 1]
    np.testing.assert_allclose(x[k], pred, rtol=0, atol=1e-10)


def test_synth_deterministic():
    cfg = SynthConfig(duration_s=300, noise_sd=1.0, missing_frac=0.1, spikes_per_hour=30,
                      seed=9)
    assert synth_record(cfg) == synth_record(cfg)
    other = synth_record(SynthConfig(duration_s=300, noise_sd=1.0, seed=10))
    assert not np.array_equal(synth_record(cfg).fhr, other.fhr, equal_nan=True)


def test_synth_rejects_bad_duration():
    with pytest.raises(ValueError):
        SynthConfig(duration_s=0)


def test_arx_simulate_switch():
    u = np.zeros(10)
    noise = np.zeros(10)
    noise[0] = 1.0
    x = arx_simulate(u, (0.5,), (0.0,), noise, switch=(5, (1.0,), (0.0,)))
    np.testing.assert_allclose(x[:5], 0.5 ** np.arange(5))
    np.testing.assert_allclose(x[5:], 0.5 ** 4)


def test_format_signal_valid_column():
    text = format_signal([140.0, np.nan], [1.0, 2.0], [True, False])
    assert text.splitlines() == ["t_s,fhr_bpm,uc,valid", "0.0,140.0,1.0,1", "0.25,,2.0,0"]
