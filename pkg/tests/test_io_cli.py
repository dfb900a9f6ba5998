import json
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgvisco import evolution as ev
from sgvisco import io
from sgvisco import spectral as sp
from sgvisco.cli import main
from sgvisco.experiments import initial_data

MINIMAL = "[grid]\nn = 16\n[model]\nkind = double_well\n"

SMALL_RUN = """\
[grid]
d = 2
n = 16

[physics]
nu = 0.1
delta = 0.01

[time]
dt = 1e-3
t_end = 0.02

[output]
record_every = 5
snapshot_every = 10
lr_exponents = 1.5, 3
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------------------
# config


def test_minimal_config_gets_defaults():
    cfg = io.parse_config_text(MINIMAL)
    assert cfg.physics == {"nu": 1.0, "delta": 0.01}
    assert cfg.time["dt"] == 1e-3 and cfg.time["t_end"] == 1.0
    assert cfg.time["scheme"] == "imex_cnab2"
    solver = cfg.solver_config()
    assert solver.grid.n == 16 and solver.model.kind == "double_well"


@pytest.mark.parametrize("text, where", [
    (MINIMAL + "[physics]\ndelta = -1\n", "[physics].delta"),
    (MINIMAL + "[physics]\nnu = nan\n", "[physics].nu"),
    (MINIMAL + "[time]\ndt = fast\n", "[time].dt"),
    (MINIMAL + "[time]\nscheme = rk4\n", "[time].scheme"),
    ("[grid]\nn = 15\n", "[grid].n"),
    ("[grid]\nd = 2\n", "[grid].n"),
    (MINIMAL + "[initial]\nkind = file\n", "[initial].file"),
])
def test_config_errors_name_the_key(text, where):
    with pytest.raises(io.ConfigError, match=re.escape(where)):
        io.parse_config_text(text)


def test_config_errors_carry_line_numbers():
    text = "[grid]\nn = 16\n\n[physics]\nnu = 1\ndelta = -0.5\n"
    with pytest.raises(io.ConfigError, match=r"<config>:6:"):
        io.parse_config_text(text)
    with pytest.raises(io.ConfigError, match=r"<config>:3: unknown key \[grid\]\.colour"):
        io.parse_config_text("[grid]\nn = 16\ncolour = red\n")
    with pytest.raises(io.ConfigError, match=r"<config>:3: unknown section \[plots\]"):
        io.parse_config_text("[grid]\nn = 16\n[plots]\nx = 1\n")


def test_config_roundtrip(tmp_path):
    text = SMALL_RUN + "[study]\nvalues = 0.01, 0.005, 0.0025\nr_list = 1.5\nsample_times = 0.01, 0.02\n" \
        "[model]\nkind = double_well\nK = 1.5\n"
    cfg = io.parse_config(write(tmp_path, text))
    again = io.parse_config_text(io.serialize_config(cfg))
    assert again == cfg
    assert io.serialize_config(again) == io.serialize_config(cfg)
    assert cfg.solver_config().model.K == 1.5


def test_missing_config_file(tmp_path):
    with pytest.raises(io.ConfigError):
        io.parse_config(tmp_path / "missing.cfg")


def test_initial_file_resolves_relative_to_config(tmp_path):
    g = sp.SpectralGrid(2, 16)
    u0, y0 = initial_data(g, "two_mode")
    state = ev.init_state(g, u0, y0)
    (tmp_path / "data").mkdir()
    io.write_snapshot(tmp_path / "data" / "init.vsgv", g, state)
    cfg = io.parse_config(write(tmp_path, MINIMAL + "[initial]\nkind = file\nfile = data/init.vsgv\n"))
    s = cfg.initial_state(g)
    np.testing.assert_allclose(s.y_hat, state.y_hat, atol=1e-15)


# ---------------------------------------------------------------------------
# snapshots


@settings(max_examples=25, deadline=None)
@given(data=arrays(np.float64, (2, 2, 8, 8), elements=st.floats(allow_nan=False, width=64)),
       t=st.floats(allow_nan=False))
def test_snapshot_roundtrip_is_bit_exact(data, t):
    g = sp.SpectralGrid(2, 8)
    blob = io.encode_snapshot(g, data, t)
    t2, rank, back = io.decode_snapshot(blob, g)
    assert rank == 2
    assert back.tobytes() == np.ascontiguousarray(data).tobytes()
    assert np.float64(t2).tobytes() == np.float64(t).tobytes()
    assert len(blob) == 26 + 8 * 64 * 4


def test_snapshot_layout_is_grid_then_component():
    g = sp.SpectralGrid(1, 4)
    v = np.array([[1.0, 2.0, 3.0, 4.0]])  # d = 1 vector field
    blob = io.encode_snapshot(g, v, 0.5)
    assert blob[:6] == b"VSGV1L"
    assert np.frombuffer(blob[26:], "<f8").tolist() == [1.0, 2.0, 3.0, 4.0]
    g2 = sp.SpectralGrid(2, 4)
    v2 = np.stack([np.zeros(g2.shape), np.ones(g2.shape)])
    payload = np.frombuffer(io.encode_snapshot(g2, v2)[26:], "<f8")
    assert payload[:4].tolist() == [0.0, 1.0, 0.0, 1.0]


def test_state_snapshot_roundtrip(tmp_path, grid16):
    u0, y0 = initial_data(grid16, "random_band")
    s = ev.init_state(grid16, u0, y0)
    s.t = 0.25
    path = tmp_path / "s.vsgv"
    io.write_snapshot(path, grid16, s)
    t, rank, arr = io.read_snapshot(path, grid16)
    assert (t, rank) == (0.25, io.STATE_RANK)
    assert arr.tobytes() == np.concatenate([sp.inverse(grid16, s.y_hat), sp.inverse(grid16, s.u_hat)]).tobytes()
    back = io.read_state(path, grid16)
    np.testing.assert_allclose(back.y_hat, s.y_hat, atol=1e-15)


def test_snapshot_errors(tmp_path, grid16):
    blob = io.encode_snapshot(grid16, np.zeros(grid16.shape))
    with pytest.raises(io.SnapshotError, match="magic"):
        io.decode_snapshot(b"XXXX" + blob[4:])
    with pytest.raises(io.SnapshotError, match="payload"):
        io.decode_snapshot(blob[:-8])
    with pytest.raises(io.SnapshotError, match="truncated"):
        io.decode_snapshot(blob[:10])
    with pytest.raises(io.SnapshotError, match="does not match"):
        io.decode_snapshot(blob, sp.SpectralGrid(2, 8))
    with pytest.raises(io.SnapshotError):
        io.read_snapshot(tmp_path / "nope.vsgv")
    path = tmp_path / "scalar.vsgv"
    path.write_bytes(blob)
    with pytest.raises(io.SnapshotError, match="state"):
        io.read_state(path, grid16)


# ---------------------------------------------------------------------------
# CSV


@settings(max_examples=100)
@given(x=st.floats(allow_nan=False))
def test_csv_number_format_roundtrips(x):
    assert float(io.fmt(x)) == x


def test_diagnostics_csv(tmp_path, grid16):
    cfg = ev.SolverConfig(grid16, ev.EnergyModel(), nu=0.1, dt=1e-3, t_end=0.01)
    u0, y0 = initial_data(grid16)
    traj = ev.run(cfg, ev.init_state(grid16, u0, y0), record_every=5, lr_exponents=(1.5, np.inf))
    path = tmp_path / "d.csv"
    io.write_diagnostics(path, traj.records, (1.5, np.inf))
    header, data = io.read_diagnostics(path)
    assert ",".join(header) == ("t,E,diss_visc_cum,G,diss_struct_cum,src_struct_cum,curl_res,l2_u,"
                                "l2_gradF,l2_lapF,lr_F_1.5,lr_F_inf")
    assert data.shape == (3, 12)
    assert data[:, 1].tolist() == [r.E for r in traj.records]
    with pytest.raises(ValueError):
        with io.DiagnosticsWriter(tmp_path / "e.csv") as w:
            w.write(traj.records[1])
            w.write(traj.records[0])


# ---------------------------------------------------------------------------
# CLI


def test_cli_check_model(capsys):
    assert main(["check-model", "--model", "double_well"]) == 0
    out = capsys.readouterr().out
    assert "H7" in out and "FAIL" not in out
    assert main(["check-model", "--model", "quadratic", "--samples", "50"]) == 0


def test_cli_validation_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["frobnicate"]) == 1
    bad = write(tmp_path, MINIMAL + "[physics]\ndelta = -1\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "[physics].delta" in capsys.readouterr().err


def test_cli_run_is_deterministic(tmp_path):
    cfg = write(tmp_path, SMALL_RUN)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--assert-inequalities"]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["diagnostics.csv", "snap_00000.vsgv", "snap_00001.vsgv", "snap_00002.vsgv",
                     "summary.json"]
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["inequalities"]["energy inequality"]["passed"]


def test_cli_run_blow_up_exit_code(tmp_path):
    text = ("[grid]\nn = 16\n[physics]\nnu = 0\ndelta = 0\n[time]\ndt = 0.05\nt_end = 20\n"
            "[initial]\namplitude = 5\n")
    assert main(["run", "--config", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 2


def test_cli_print_config_roundtrips(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_RUN)
    assert main(["print-config", "--config", str(cfg)]) == 0
    printed = capsys.readouterr().out
    assert io.parse_config_text(printed) == io.parse_config(cfg)
    assert main(["print-config"]) == 0


def test_cli_studies(tmp_path):
    base = SMALL_RUN.replace("t_end = 0.02", "t_end = 0.1").replace("dt = 1e-3", "dt = 1e-2")
    delta = write(tmp_path, base + "[study]\nvalues = 0.04, 0.02, 0.01\nr_list = 1.5\n"
                  "sample_times = 0.05, 0.1\n", "delta.cfg")
    assert main(["study-delta", "--config", str(delta), "--out", str(tmp_path / "sd")]) == 0
    lines = (tmp_path / "sd" / "study_delta.csv").read_text().splitlines()
    assert lines[0] == "delta,t,r,error_F,error_u" and len(lines) == 1 + 3 * 2
    fits = json.loads((tmp_path / "sd" / "fits_delta.json").read_text())
    assert fits["param"] == "delta" and len(fits["fits"]) == 2

    nu = write(tmp_path, base.replace("delta = 0.01", "delta = 1.0")
               + "[study]\nvalues = 0.1, 0.05, 0.025\nr_list = 3\nsample_times = 0.1\n", "nu.cfg")
    assert main(["study-nu", "--config", str(nu), "--out", str(tmp_path / "sn")]) == 0
    assert (tmp_path / "sn" / "fits_nu.json").exists()

    gal = write(tmp_path, base.replace("n = 16", "n = 32") + "[initial]\nkind = gaussian_bump\n"
                "[study]\ncutoffs = 2, 4, 10\nsample_times = 0.1\n", "gal.cfg")
    assert main(["study-galerkin", "--config", str(gal), "--out", str(tmp_path / "sg"), "--check"]) == 0
    assert (tmp_path / "sg" / "galerkin.csv").read_text().startswith("cutoff,t,error_F,error_u")

    mms = write(tmp_path, base + "[study]\ndts = 0.02, 0.01, 0.005\nresolutions = 8, 16\n", "mms.cfg")
    assert main(["mms", "--config", str(mms), "--out", str(tmp_path / "mm"), "--check"]) == 0
    assert json.loads((tmp_path / "mm" / "mms.json").read_text())["temporal_order"] > 1.7

    no_values = write(tmp_path, base, "empty.cfg")
    assert main(["study-delta", "--config", str(no_values)]) == 1


def test_cli_check_flag_fails_on_bad_rate(tmp_path):
    # delta values far above the reference give a flat error curve: order check fails
    text = SMALL_RUN.replace("t_end = 0.02", "t_end = 0.02").replace("dt = 1e-3", "dt = 1e-2") + \
        "[study]\nvalues = 0.04, 0.02, 0.01\nr_list = 1.5\nsample_times = 0.02\n"
    cfg = write(tmp_path, text)
    assert main(["study-delta", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--min-order", "5", "--check"]) == 3


def test_decoded_state_reencodes_to_same_bytes(grid16):
    u0, y0 = initial_data(grid16, "random_band")
    blob = io.encode_snapshot(grid16, ev.init_state(grid16, u0, y0))
    t, rank, arr = io.decode_snapshot(blob, grid16)
    assert io.encode_snapshot(grid16, arr, t, rank) == blob
    with pytest.raises(io.SnapshotError):
        io.encode_snapshot(grid16, sp.forward(grid16, u0))
