import json
import os

import numpy as np
import pytest

from ddvbi.config import build_config
from ddvbi.errors import ConfigurationError
from ddvbi.harness import (COLUMNS, rows_to_csv, run_sweep, run_sweep_rows, summarize,
                           track_diagnostics)

SMALL = {"trials": "2", "frames": "2", "n_p": "4", "seed": "11"}


def test_rows_are_sane():
    rows = run_sweep_rows(build_config(None, SMALL))
    schemes = {r["scheme"] for r in rows}
    assert schemes == {"ddvbi-designed", "ddvbi-random", "genie-oracle", "no-compensation"}
    assert len(rows) == 4 * 2 * 2
    for r in rows:
        assert r["freq_mse"] >= 0 and r["channel_mse"] >= 0 and r["rate"] >= 0
        assert r["seed"] == 11 + r["trial"]


def test_no_compensation_shares_estimate():
    rows = run_sweep_rows(build_config(None, SMALL))
    by = {(r["scheme"], r["trial"], r["frame"]): r for r in rows}
    for t in range(2):
        for f in range(2):
            a, b = by["ddvbi-designed", t, f], by["no-compensation", t, f]
            assert a["channel_mse"] == b["channel_mse"] and a["n_d"] == b["n_d"]


def test_scheme_subset_does_not_change_rows():
    full = run_sweep_rows(build_config(None, SMALL))
    sub = run_sweep_rows(build_config(None, dict(SMALL, schemes="genie-oracle,ddvbi-random")))
    pick = [r for r in full if r["scheme"] in ("genie-oracle", "ddvbi-random")]
    assert rows_to_csv(sub) == rows_to_csv(pick)


def test_csv_format(tmp_path):
    cfg = build_config(None, dict(SMALL, trials="1", frames="1"))
    csv_path, side = run_sweep(cfg, str(tmp_path) + os.sep)
    raw = open(csv_path, "rb").read()
    assert raw.startswith(b"# schema_version=1\r\n")
    header = raw.split(b"\r\n")[1].decode()
    assert header.split(",") == COLUMNS
    meta = json.load(open(side))
    assert meta["schema_version"] == 1 and "snr_definition" in meta
    assert meta["config"]["seed"] == 11


def test_timing_column_only_on_request():
    cfg = build_config(None, dict(SMALL, trials="1", frames="1", timing="true",
                                  schemes="genie-oracle"))
    text = rows_to_csv(run_sweep_rows(cfg), timing=True)
    assert text.split("\r\n")[1].endswith("wall_time")


def test_unwritable_output_aborts_early(tmp_path):
    cfg = build_config(None, dict(SMALL, trials="1000"))
    with pytest.raises(ConfigurationError):
        run_sweep(cfg, str(tmp_path / "missing" / "out.csv"))


def test_env_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv("DDVBI_OUT_DIR", str(tmp_path))
    cfg = build_config(None, dict(SMALL, trials="1", frames="1", schemes="genie-oracle"))
    csv_path, _ = run_sweep(cfg)
    assert os.path.dirname(csv_path) == str(tmp_path)


def test_genie_bounds_ddvbi_channel_mse():
    cfg = build_config(None, {"trials": "8", "frames": "2", "n_p": "4,8",
                              "schemes": "genie-oracle,ddvbi-designed,ddvbi-random"})
    s = summarize(run_sweep_rows(cfg), "channel_mse")
    for n_p in (4, 8):
        g = s["genie-oracle", 32, n_p, 0.0][0]
        assert g <= s["ddvbi-designed", 32, n_p, 0.0][0]
        assert g <= s["ddvbi-random", 32, n_p, 0.0][0]


def test_summarize_averages_frames_first():
    rows = [dict(scheme="a", m=1, n_p=1, snr_db=0.0, trial=t, frame=f, x=float(t))
            for t in range(3) for f in range(2)]
    mean, se = summarize(rows, "x")["a", 1, 1, 0.0]
    assert mean == 1.0 and abs(se - 1 / np.sqrt(3)) < 1e-12


def test_track_diagnostics_fields():
    diag = track_diagnostics(build_config(None, dict(SMALL, frames="2")))
    assert [d["frame"] for d in diag] == [0, 1]
    assert all(len(d["f_d_trace"]) == d["outer_iters"] + 1 for d in diag)
