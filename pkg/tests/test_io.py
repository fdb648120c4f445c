import json

import numpy as np
import pytest

from ecgtalk.errors import ParseError
from ecgtalk.io import load_csv, load_record, load_wfdb, write_csv, write_wfdb
from ecgtalk.records import EcgRecord, LeadConfig
from ecgtalk.synth import synthesize_ecg


def test_csv_round_trip(tmp_path):
    record, _ = synthesize_ecg(72, 4, 500, 0.02, seed=1)
    path = write_csv(record, tmp_path / "rec.csv")
    loaded = load_csv(path)
    assert loaded.lead_config is LeadConfig.LEAD_II
    assert loaded.sampling_rate_hz == 500
    assert np.max(np.abs(loaded.lead("II") - record.lead("II"))) <= 1e-6


def test_csv_single_lead_fixture(tmp_path):
    # 10 s at 500 Hz, single "I" column -> 5000 samples, LeadI
    rows = ["I"] + ["0.001000"] * 5000
    path = tmp_path / "leadi.csv"
    path.write_text("\n".join(rows) + "\n")
    record = load_csv(path, sampling_rate_hz=500)
    assert record.n_samples == 5000
    assert record.lead_config is LeadConfig.LEAD_I


def test_csv_sidecar_metadata(tmp_path):
    path = tmp_path / "rec.csv"
    path.write_text("II\n0.0\n0.1\n0.2\n")
    (tmp_path / "rec.meta.json").write_text(json.dumps({"sampling_rate_hz": 100}))
    record = load_csv(path)
    assert record.sampling_rate_hz == 100


def test_csv_lead_length_mismatch(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("I,II\n0.0,0.0\n0.1\n")
    with pytest.raises(ParseError, match="lead length mismatch") as err:
        load_csv(path, sampling_rate_hz=500)
    assert "line 3" in str(err.value)


def test_csv_non_finite_sample(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("II\n0.0\nnan\n")
    with pytest.raises(ParseError, match="non-finite") as err:
        load_csv(path, sampling_rate_hz=500)
    assert "line 3" in str(err.value)


def test_csv_missing_sampling_rate(tmp_path):
    path = tmp_path / "rec.csv"
    path.write_text("II\n0.0\n")
    with pytest.raises(ParseError, match="sampling rate"):
        load_csv(path)


def test_wfdb_round_trip_bit_exact(tmp_path):
    # samples already on the digitization grid survive bit-exactly
    rng = np.random.default_rng(0)
    adc = rng.integers(-2000, 2000, size=(2500, 12))
    leads = [(name, adc[:, i] / 1000.0)
             for i, name in enumerate(LeadConfig.TWELVE_LEAD.lead_names)]
    record = EcgRecord.build("wf01", 500, leads)
    hea = write_wfdb(record, tmp_path, gain=1000.0)
    loaded = load_wfdb(hea)
    assert loaded.lead_config is LeadConfig.TWELVE_LEAD
    assert loaded.sampling_rate_hz == 500
    for name, samples in record.leads:
        assert loaded.lead(name).tobytes() == samples.tobytes()
    # writing the loaded record again reproduces identical files
    hea2 = write_wfdb(loaded, tmp_path / "again", gain=1000.0)
    assert hea2.read_bytes() == hea.read_bytes()
    assert (tmp_path / "again" / "wf01.dat").read_bytes() == \
        (tmp_path / "wf01.dat").read_bytes()


def test_wfdb_12_signal_header(tmp_path):
    record, _ = synthesize_ecg(60, 5, 500, 0, seed=0,
                               lead_config=LeadConfig.TWELVE_LEAD)
    hea = write_wfdb(record, tmp_path)
    loaded = load_record(hea, "wfdb_subset")
    assert len(loaded.leads) == 12
    assert loaded.n_samples == record.n_samples


def test_wfdb_rejects_unsupported_format(tmp_path):
    (tmp_path / "r.hea").write_text("r 1 500 4\nr.dat 212 1000(0)/mV 16 0 0 0 0 II\n")
    (tmp_path / "r.dat").write_bytes(b"\x00" * 8)
    with pytest.raises(ParseError, match="format"):
        load_wfdb(tmp_path / "r.hea")


def test_wfdb_rejects_multi_segment(tmp_path):
    (tmp_path / "r.hea").write_text("r/3 1 500 4\nr.dat 16 1000(0)/mV 16 0 0 0 0 II\n")
    with pytest.raises(ParseError, match="multi-segment"):
        load_wfdb(tmp_path / "r.hea")


def test_wfdb_rejects_truncated_data(tmp_path):
    record, _ = synthesize_ecg(60, 4, 500, 0, seed=0)
    hea = write_wfdb(record, tmp_path)
    dat = tmp_path / f"{record.record_id}.dat"
    dat.write_bytes(dat.read_bytes()[:-2])
    with pytest.raises(ParseError, match="byte"):
        load_wfdb(hea)


def test_wfdb_rejects_checksum_mismatch(tmp_path):
    record, _ = synthesize_ecg(60, 4, 500, 0, seed=0)
    hea = write_wfdb(record, tmp_path)
    dat = tmp_path / f"{record.record_id}.dat"
    raw = bytearray(dat.read_bytes())
    raw[0] ^= 0xFF
    dat.write_bytes(bytes(raw))
    with pytest.raises(ParseError, match="checksum"):
        load_wfdb(hea)


def test_load_record_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="unknown format"):
        load_record(tmp_path / "x", "edf")
