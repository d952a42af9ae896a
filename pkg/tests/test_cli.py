import json

import numpy as np
import pytest

from surropt import io as sio
from surropt.cli import main
from surropt.nn import Layer, Network, random_network

from conftest import LIN


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_zaslavsky_command(capsys):
    code, out, _ = run(capsys, "analyze", "--zaslavsky", "3", "2")
    assert code == 0
    assert "= 7" in out
    code, out, _ = run(capsys, "--json", "analyze", "--zaslavsky", "3", "2")
    assert json.loads(out)["zaslavsky"] == 7


def test_regions_on_random_net(capsys):
    code, out, _ = run(capsys, "--json", "--seed", "7", "analyze",
                       "--random-net", "2,5,1", "--regions")
    assert code == 0
    doc = json.loads(out)
    assert doc["hidden_neurons"] == 5
    assert doc["nonempty_patterns"] >= 6


def test_seed_reproducibility(capsys):
    _, out1, _ = run(capsys, "--json", "--seed", "3", "analyze",
                     "--random-net", "2,4,1", "--regions")
    _, out2, _ = run(capsys, "--json", "--seed", "3", "analyze",
                     "--random-net", "2,4,1", "--regions")
    assert out1 == out2


def test_general_position_command(tmp_path, capsys, rng):
    net = random_network(rng, [2, 3, 1])
    netp = tmp_path / "net.json"
    sio.save_network(net, netp)
    xp = tmp_path / "x.json"
    xp.write_text(json.dumps({"x": [0.3, -0.4]}))
    code, out, _ = run(capsys, "--json", "analyze", "--net", str(netp),
                       "--general-position", str(xp))
    assert code == 0
    assert json.loads(out)["general_position"] is True


def test_stationarity_command(tmp_path, capsys):
    net = Network((Layer([[1.0]], [-1.0], __import__("surropt.nn", fromlist=["Activation"]).Activation("relu")),
                   Layer([[1.0]], [0.0], LIN)))
    netp = tmp_path / "net.json"
    sio.save_network(net, netp)
    pt = tmp_path / "point.json"
    pt.write_text(json.dumps({"x": [1.0], "f_x": [0.0], "f_y": [1.0]}))
    code, out, _ = run(capsys, "--json", "analyze", "--net", str(netp),
                       "--stationarity", str(pt))
    assert code == 0
    doc = json.loads(out)
    assert doc["embedded"]["accepted"] is True
    assert doc["strong"]["accepted"] is True


def engine_files(tmp_path, rng, T=2):
    net = random_network(rng, [3, 2, 3])
    sio.save_network(net, tmp_path / "net.json")
    rows = rng.uniform(0.0, 1.0, size=(8, 3))
    rows[:, 2] = 0.5
    torques = np.array([__import__("surropt.nn", fromlist=["forward"]).forward(net, r)[2]
                        for r in rows])
    lines = ["fuel,rpm,comp"] + [f"{float(r[0])!r},{float(r[1])!r},{float(r[2])!r}"
                                 for r in rows]
    (tmp_path / "train.csv").write_text("\n".join(lines) + "\n")
    doc = {
        "type": "engine", "network": "net.json", "horizon": T,
        "torque_profile": [float(torques.max() - 1e-6)] * T,
        "fuel_bounds": [0, 1], "rpm_bounds": [0, 1],
        "compression_bounds": [0.2, 0.8],
        "training_data": "train.csv", "fixed_compression": 0.5,
    }
    spec = tmp_path / "engine.json"
    spec.write_text(json.dumps(doc))
    return spec


def test_encode_and_solve_flow(tmp_path, capsys, rng):
    spec = engine_files(tmp_path, rng)
    model_path = tmp_path / "engine.lp"
    code, out, _ = run(capsys, "--json", "encode", "--problem", str(spec),
                       "--formulation", "mip", "-o", str(model_path))
    assert code == 0
    doc = json.loads(out)
    assert doc["binaries"] == 4  # 2 neurons x 2 steps
    assert (tmp_path / "engine.lp.bounds.json").exists()

    code, out, _ = run(capsys, "--json", "solve", "--model", str(model_path),
                       "--solver", "milp")
    assert code == 0
    direct = json.loads(out)

    code, out, _ = run(capsys, "--json", "solve", "--problem", str(spec),
                       "--formulation", "mip", "--solver", "milp",
                       "--warmstart", "auto")
    assert code == 0
    warm = json.loads(out)
    assert warm["objective"] == pytest.approx(direct["objective"], abs=1e-6)

    code, out, _ = run(capsys, "--json", "solve", "--problem", str(spec),
                       "--solver", "oracle", "--formulation", "mpcc")
    assert code == 0
    oracle = json.loads(out)
    assert oracle["objective"] == pytest.approx(direct["objective"], abs=1e-6)

    code, out, _ = run(capsys, "--json", "solve", "--problem", str(spec),
                       "--solver", "mpcc-local", "--formulation", "mpcc",
                       "--warmstart", "auto")
    assert code == 0
    local = json.loads(out)
    assert local["objective"] >= oracle["objective"] - 1e-9


def test_embedded_solve_writes_trace(tmp_path, capsys, rng):
    spec = engine_files(tmp_path, rng)
    trace = tmp_path / "trace.csv"
    code, out, _ = run(capsys, "--json", "solve", "--problem", str(spec),
                       "--solver", "embedded", "--trace", str(trace))
    doc = json.loads(out)
    assert trace.exists()
    recs = sio.read_trace(trace)
    assert len(recs) == doc["iterations"]


def test_encode_mpcc_needs_lossy_flag(tmp_path, capsys, rng):
    spec = engine_files(tmp_path, rng)
    model_path = tmp_path / "engine_cc.lp"
    code, _, err = run(capsys, "encode", "--problem", str(spec),
                       "--formulation", "mpcc", "-o", str(model_path))
    assert code == 1
    assert "allow" in err.lower() or "lossy" in err.lower()
    code, out, _ = run(capsys, "--json", "encode", "--problem", str(spec),
                       "--formulation", "mpcc", "--allow-lossy",
                       "-o", str(model_path))
    assert code == 0
    assert json.loads(out)["complementarities"] == 4


def test_error_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "analyze", "--net", str(tmp_path / "missing.json"),
                       "--regions")
    assert code == 1
    assert err.strip()


def test_solve_mpcc_local_without_warmstart(tmp_path, capsys, rng):
    spec = engine_files(tmp_path, rng)
    code, out, err = run(capsys, "--json", "solve", "--problem", str(spec),
                         "--solver", "mpcc-local", "--formulation", "mpcc")
    assert code == 0, err
    assert json.loads(out)["status"] in ("Feasible", "Optimal")


def test_solve_warmstart_from_point_file(tmp_path, capsys, rng):
    spec = engine_files(tmp_path, rng)
    code, out, _ = run(capsys, "--json", "solve", "--problem", str(spec),
                       "--formulation", "mip", "--solver", "milp")
    base = json.loads(out)
    # derive a point file from the auto warmstart machinery
    bundle = sio.load_problem_spec(spec)
    from surropt.problems import build_engine, warmstart_engine
    from surropt.encoders import interval_bounds

    model, handles = build_engine(
        bundle.spec, "mip",
        bounds=interval_bounds(bundle.spec.net, bundle.spec.input_box()))
    ws = warmstart_engine(bundle.spec, model, handles, bundle.training_inputs,
                          bundle.fixed_compression)
    pt = tmp_path / "start.json"
    pt.write_text(json.dumps({str(k): v for k, v in ws.point.items()}))
    code, out, err = run(capsys, "--json", "solve", "--problem", str(spec),
                         "--formulation", "mip", "--solver", "milp",
                         "--warmstart", str(pt))
    assert code == 0, err
    assert json.loads(out)["objective"] == pytest.approx(base["objective"], abs=1e-6)
