import json

import jsonschema
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from pmpqkd.core import ClickBatch
from pmpqkd.formats import (
    BinaryClickWriter,
    CsvClickWriter,
    FormatError,
    attach_truth,
    dump_report,
    iter_read_binary,
    read_clicks,
    read_clicks_csv,
    read_truth_csv,
    report_schema,
    write_clicks,
)


@st.composite
def batches(draw, labelled=True):
    slots = sorted(draw(st.lists(st.integers(0, 2**40), max_size=40, unique=True)))
    n = len(slots)
    det = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if not labelled:
        return ClickBatch(np.array(slots, np.int64), np.array(det))
    cols = [draw(st.lists(st.integers(0, hi), min_size=n, max_size=n)) for hi in (2, 15, 2, 15)]
    return ClickBatch(np.array(slots, np.int64), np.array(det), *(np.array(c) for c in cols))


settings_tmp = settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])


@settings_tmp
@given(batches())
def test_csv_round_trip_is_byte_identical(tmp_path, batch):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    write_clicks(first, batch)
    back = read_clicks(first)
    assert back.equals(batch)
    write_clicks(second, back)
    assert first.read_bytes() == second.read_bytes()


@settings_tmp
@given(batches())
def test_binary_round_trip_is_byte_identical(tmp_path, batch):
    first, second = tmp_path / "a.bin", tmp_path / "b.bin"
    write_clicks(first, batch, binary=True)
    back = read_clicks(first)
    assert back.equals(batch)
    write_clicks(second, back, binary=True)
    assert first.read_bytes() == second.read_bytes()
    assert first.stat().st_size == 16 + 16 * len(batch)


@settings_tmp
@given(batches())
def test_truth_sidecar_round_trip(tmp_path, batch):
    clicks, truth = tmp_path / "c.csv", tmp_path / "t.csv"
    write_clicks(clicks, batch, truth_path=truth)
    assert not read_clicks_csv(clicks).has_intensity_labels or len(batch) == 0
    assert read_clicks(clicks, truth).equals(batch)


def test_unlabelled_csv(tmp_path):
    batch = ClickBatch(np.array([4, 9]), np.array([1, 0]))
    path = tmp_path / "u.csv"
    write_clicks(path, batch)
    assert path.read_text() == "#pmpqkd-clicks v1 slot,detector\n4,1\n9,0\n"
    assert read_clicks(path).equals(batch)


def test_empty_stream_has_valid_header(tmp_path):
    path = tmp_path / "e.csv"
    with CsvClickWriter(path, labelled=False, truth_path=tmp_path / "t.csv"):
        pass
    assert path.read_text() == "#pmpqkd-clicks v1 slot,detector\n"
    assert len(read_clicks(path, tmp_path / "t.csv")) == 0
    with BinaryClickWriter(tmp_path / "e.bin"):
        pass
    assert len(read_clicks(tmp_path / "e.bin")) == 0


HEADER = "#pmpqkd-clicks v1 slot,detector,a_int,a_phase,b_int,b_phase\n"


@pytest.mark.parametrize(
    "body, line, fragment",
    [
        ("1,0,mu,3,o,2\n1,1,o,0,o,0\n", 3, "not after"),
        ("5,2,mu,3,o,2\n", 2, "detector"),
        ("5,0,2mu,3,o,2\n", 2, "a_int"),
        ("5,0,mu,16,o,2\n", 2, "a_phase"),
        ("5,0,mu,3,o\n", 2, "expected 6 fields"),
        ("x,0,mu,3,o,1\n", 2, "slot"),
    ],
)
def test_csv_errors_carry_line_numbers(tmp_path, body, line, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(HEADER + body)
    with pytest.raises(FormatError, match=fragment) as info:
        read_clicks(path)
    assert info.value.where == f"{path}:{line}"


def test_csv_header_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("slot,detector\n1,0\n")
    with pytest.raises(FormatError, match=":1"):
        read_clicks(path)
    path.write_text("#pmpqkd-clicks v1 slot,detector,extra\n")
    with pytest.raises(FormatError, match="columns"):
        read_clicks(path)


def test_binary_errors_carry_offsets(tmp_path):
    batch = ClickBatch(np.array([1, 2, 3]), np.array([0, 1, 0]), np.full(3, 2), np.zeros(3), np.full(3, 1), np.zeros(3))
    path = tmp_path / "c.bin"
    write_clicks(path, batch, binary=True)
    data = bytearray(path.read_bytes())
    (tmp_path / "trunc.bin").write_bytes(bytes(data[:-5]))
    with pytest.raises(FormatError, match="truncated") as info:
        read_clicks(tmp_path / "trunc.bin")
    assert info.value.where.endswith("@48")
    bad = bytearray(data)
    bad[16 + 16 + 8] = 7  # detector of the second record
    (tmp_path / "det.bin").write_bytes(bytes(bad))
    with pytest.raises(FormatError, match="detector") as info:
        read_clicks(tmp_path / "det.bin")
    assert info.value.where.endswith("@32")
    (tmp_path / "magic.bin").write_bytes(b"PMPQKDCX" + bytes(data[8:]))
    with pytest.raises(FormatError):
        read_clicks_csv(tmp_path / "magic.bin")


def test_binary_streaming_chunks(tmp_path):
    n = 1000
    batch = ClickBatch(np.arange(n) * 3, np.arange(n) % 2, np.full(n, 2), np.arange(n) % 16, np.zeros(n), np.zeros(n))
    path = tmp_path / "c.bin"
    write_clicks(path, batch, binary=True)
    chunks = list(iter_read_binary(path, chunk_records=128))
    assert len(chunks) == 8
    assert ClickBatch.concat(chunks).equals(batch)


def test_truth_mismatch_detected(tmp_path):
    clicks = ClickBatch(np.array([1, 5]), np.array([0, 1]))
    truth_path = tmp_path / "t.csv"
    truth_path.write_text("#pmpqkd-truth v1 slot,a_int,a_phase,b_int,b_phase\n1,mu,0,o,0\n6,nu,0,o,0\n")
    with pytest.raises(FormatError, match="row 2"):
        attach_truth(clicks, read_truth_csv(truth_path))


def test_report_schema_is_valid_and_enforced():
    schema = report_schema()
    jsonschema.Draft202012Validator.check_schema(schema)
    minimal = {
        "format": "pmpqkd-report",
        "version": 1,
        "config": {},
        "pairing": None,
        "tally": {k: 0 for k in ("n_o_o", "n_nu_nu", "n_mu_mu", "m_mu_mu", "n_2nu_2nu", "m_2nu_2nu", "n_2mu_2mu", "m_2mu_2mu")} | {"E_z": float("nan"), "E_x": None},
        "decoy": None,
        "key_rate": None,
        "sweep": [],
        "metrics": {"wall_seconds": 0.5},
    }
    text = dump_report(minimal)
    assert json.loads(text)["tally"]["E_z"] is None
    broken = dict(minimal, version=2)
    with pytest.raises(jsonschema.ValidationError):
        dump_report(broken)
