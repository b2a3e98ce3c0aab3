import json
import subprocess
import sys

import numpy as np
import pytest

from sdot.cli import main
from sdot.io import load_result, result_to_json
from sdot.measure import sample_gaussian_mixture, two_cluster_spec
from sdot.solver import SolverConfig


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def files(tmp_path):
    sites = tmp_path / "sites.json"
    sites.write_text(json.dumps({"points": [[-0.5, 0.0], [0.5, 0.0]]}))
    dom = tmp_path / "domain.json"
    dom.write_text(json.dumps({"square": [-1, -1, 1, 1]}))
    return tmp_path, sites, dom


@pytest.fixture
def solved(files, capsys):
    tmp, sites, dom = files
    out = tmp / "result.json"
    code, _, err = run(capsys, "solve", "--sites", sites, "--domain", dom, "--out", out)
    assert code == 0, err
    return tmp, out


@pytest.fixture(scope="module")
def cluster_result(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cluster")
    emp = sample_gaussian_mixture(two_cluster_spec(), 128, 7)
    sites = tmp / "sites.json"
    sites.write_text(json.dumps({"points": emp.points.tolist()}))
    out = tmp / "result.json"
    code = main(["solve", "--sites", str(sites), "--domain", '{"square": [1000, 1000, 3000, 3000]}',
                 "--tol", "1e-9", "--out", str(out)])
    assert code == 0
    return tmp, out


# ---------------------------------------------------------------- solve

def test_solve_two_site_fixture(solved):
    _, out = solved
    res = json.loads(out.read_text())
    assert res["heights"] == [0.0, 0.0]
    assert [c["measure"] for c in res["cells"]] == [0.5, 0.5]
    for key in ("weights", "dual_edges", "report", "wasserstein", "transport_cost"):
        assert key in res
    assert res["wasserstein"] == pytest.approx(res["transport_cost"], rel=1e-12)
    assert len(res["cells"][0]["vertices"]) == 4


def test_solve_writes_manifest(solved, files):
    _, out = solved
    man = json.loads((out.parent / (out.name + ".manifest.json")).read_text())
    assert man["command"] == "solve"
    assert man["parameters"]["sites"].endswith("sites.json")
    assert set(man["inputs"]) >= {"sites", "domain"}
    assert len(man["inputs"]["sites"]) == 64
    assert man["version"] and man["wall_time"] >= 0
    assert "seed" in man


def test_cluster_fixture_has_equal_measures(cluster_result):
    _, out = cluster_result
    res = json.loads(out.read_text())
    assert res["report"]["converged"]
    w = np.array([c["measure"] for c in res["cells"]])
    assert np.all(np.abs(w - 1 / 128) <= 1e-6 / 128)


def test_malformed_sites_exit_2_with_location(files, capsys):
    tmp, _, dom = files
    bad = tmp / "bad.json"
    bad.write_text('{"points": [[0, 0],\n  [1, 0]\n  "masses": [1]}')
    code, _, err = run(capsys, "solve", "--sites", bad, "--domain", dom)
    assert code == 2
    e = json.loads(err)["error"]
    assert e["type"] == "input" and e["line"] == 3


def test_bad_field_exit_2_with_field(files, capsys):
    _, sites, _ = files
    code, _, err = run(capsys, "solve", "--sites", sites, "--domain", '{"square": [1, 1, 0, 0]}')
    assert code == 2
    assert json.loads(err)["error"]["field"] == "square"
    code, _, err = run(capsys, "solve", "--sites", '{"points": [[0, 0], [1, 0]], "masses": [0.5, -1]}',
                       "--domain", '{"square": [0, 0, 1, 1]}')
    assert code == 2 and json.loads(err)["error"]["field"] == "masses"


def test_mass_mismatch_is_input_error(files, capsys):
    _, _, dom = files
    code, _, err = run(capsys, "solve", "--sites", '{"points": [[0, 0], [1, 0]], "masses": [0.5, 0.6]}',
                       "--domain", dom)
    assert code == 2 and "mass" in json.loads(err)["error"]["message"]


def test_non_convergence_exit_3_still_writes(files, capsys):
    tmp, _, dom = files
    rs = np.random.default_rng(0)
    sites = {"points": rs.uniform(-1, 1, (12, 2)).tolist()}
    out = tmp / "nc.json"
    code, _, err = run(capsys, "solve", "--sites", json.dumps(sites), "--domain", dom,
                       "--max-iter", 1, "--out", out)
    assert code == 3
    assert json.loads(err)["error"]["type"] == "solver"
    res = json.loads(out.read_text())
    assert res["report"]["converged"] is False and res["wasserstein"] is None


def test_disk_domain_segments_recorded(files, capsys):
    tmp, sites, _ = files
    out = tmp / "disk.json"
    code, _, _ = run(capsys, "solve", "--sites", sites, "--domain",
                     '{"disk": {"center": [0, 0], "radius": 1}}', "--segments", 64, "--out", out)
    assert code == 0
    res = json.loads(out.read_text())
    assert len(res["domain"]["polygon"]) == 64
    assert res["domain_request"]["disk"]["segments"] == 64
    man = json.loads((tmp / "disk.json.manifest.json").read_text())
    assert man["parameters"]["segments"] == 64


def test_clockwise_polygon_accepted(files, capsys):
    tmp, sites, _ = files
    code, out, _ = run(capsys, "solve", "--sites", sites, "--domain",
                       '{"polygon": [[-1, -1], [-1, 1], [1, 1], [1, -1]]}')
    assert code == 0
    assert [c["measure"] for c in json.loads(out)["cells"]] == [0.5, 0.5]


def test_piecewise_density_input(files, capsys):
    tmp, sites, dom = files
    dens = {"piecewise": {"triangles": [[[-1, -1], [1, -1], [1, 1]], [[-1, -1], [1, 1], [-1, 1]]],
                          "values": [0.125, 0.375]}}
    code, out, err = run(capsys, "solve", "--sites", sites, "--domain", dom,
                         "--density", json.dumps(dens))
    assert code == 0, err
    w = [c["measure"] for c in json.loads(out)["cells"]]
    assert w == pytest.approx([0.5, 0.5], abs=1e-7)


# ---------------------------------------------------------------- round trip

def test_result_round_trip_is_bit_exact(cluster_result):
    _, out = cluster_result
    obj = json.loads(out.read_text())
    model, cfg, _ = load_result(obj)
    again = result_to_json(model, cfg, domain_request=obj.get("domain_request"))
    assert json.dumps(again) == json.dumps(obj)
    assert np.array_equal(model.heights, np.array(obj["heights"]))
    assert cfg == SolverConfig(**obj["solver_config"])


def test_rerun_reproduces_output_bytes(files, capsys, tmp_path):
    _, sites, dom = files
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert run(capsys, "solve", "--sites", sites, "--domain", dom, "--out", out)[0] == 0
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------- generate

def test_generate_zero_samples_gives_header(solved, capsys):
    tmp, res = solved
    out = tmp / "g.csv"
    assert run(capsys, "generate", "--model", res, "--n", 0, "--out", out)[0] == 0
    assert out.read_text() == "x0,x1\n"


def test_generate_fixed_seed_is_byte_identical(solved, capsys):
    tmp, res = solved
    paths = [tmp / "g1.csv", tmp / "g2.csv"]
    for p in paths:
        assert run(capsys, "generate", "--model", res, "--n", 300, "--seed", 5, "--out", p)[0] == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rows = paths[0].read_text().splitlines()
    assert len(rows) == 301
    assert set(rows[1:]) <= {"-0.5,0.0", "0.5,0.0"}
    man = json.loads((tmp / "g1.csv.manifest.json").read_text())
    assert man["seed"] == 5 and man["command"] == "generate"


def test_generate_cluster_proportions(cluster_result, capsys):
    tmp, res = cluster_result
    out = tmp / "samples.csv"
    assert run(capsys, "generate", "--model", res, "--n", 10_000, "--seed", 1, "--out", out)[0] == 0
    X = np.loadtxt(out, delimiter=",", skiprows=1)
    near_origin = np.linalg.norm(X, axis=1) < np.linalg.norm(X - [40, 40], axis=1)
    p = near_origin.mean()
    assert 0 < p < 1
    sigma = np.sqrt(0.25 / 128 + 0.25 / 10_000)
    assert abs(p - 0.5) <= 4 * sigma


def test_generate_uses_decoder(files, capsys):
    tmp, _, dom = files
    sites = {"points": [[-0.5, 0.0], [0.5, 0.0]], "decoder": [[1, 2, 3], [4, 5, 6]]}
    res = tmp / "dec.json"
    assert run(capsys, "solve", "--sites", json.dumps(sites), "--domain", dom, "--out", res)[0] == 0
    code, out, _ = run(capsys, "generate", "--model", res, "--n", 20, "--seed", 2)
    lines = out.splitlines()
    assert lines[0] == "x0,x1,x2"
    assert set(lines[1:]) <= {"1.0,2.0,3.0", "4.0,5.0,6.0"}


def test_generate_missing_model_is_input_error(capsys, tmp_path):
    code, _, err = run(capsys, "generate", "--model", tmp_path / "nope.json", "--n", 3)
    assert code == 2 and json.loads(err)["error"]["type"] == "input"


# ---------------------------------------------------------------- wasserstein

def test_wasserstein_from_model_and_from_inputs(solved, files, capsys):
    _, res = solved
    _, sites, dom = files
    code, out, _ = run(capsys, "wasserstein", "--model", res)
    assert code == 0
    a = json.loads(out)
    code, out, _ = run(capsys, "wasserstein", "--sites", sites, "--domain", dom)
    assert code == 0
    assert json.loads(out) == a
    assert a["wasserstein"] == pytest.approx(5 / 24, abs=1e-15)


# ---------------------------------------------------------------- validate

def test_validate_all_checks_pass(solved, capsys):
    tmp, res = solved
    out = tmp / "report.json"
    code, _, _ = run(capsys, "validate", "--model", res, "--checks", "all", "--out", out)
    rep = json.loads(out.read_text())
    assert code == 0 and rep["passed"]
    assert [c["name"] for c in rep["checks"]] == ["gradient", "hessian", "dualgap", "montecarlo", "lp"]


def test_validate_perturbed_heights_fail_gradient(solved, capsys):
    tmp, res = solved
    obj = json.loads(res.read_text())
    obj["heights"] = [-0.01, 0.01]
    bad = tmp / "perturbed.json"
    bad.write_text(json.dumps(obj))
    code, out, _ = run(capsys, "validate", "--model", bad, "--checks", "gradient")
    assert code == 1
    assert json.loads(out)["checks"][0]["passed"] is False


def test_validate_dualgap_on_stored_trajectory(cluster_result, capsys):
    _, res = cluster_result
    code, out, _ = run(capsys, "validate", "--model", res, "--checks", "dualgap")
    assert code == 0
    d = json.loads(out)["checks"][0]["details"]
    assert d["iterates"] >= 10
    assert d["std"] <= 1e-8 * abs(d["mean"])


def test_validate_unknown_check(solved, capsys):
    _, res = solved
    assert run(capsys, "validate", "--model", res, "--checks", "gradient,bogus")[0] == 2


# ---------------------------------------------------------------- render

def test_render_two_site_diagram(solved, capsys):
    tmp, res = solved
    out = tmp / "d.svg"
    assert run(capsys, "render", "--model", res, "--out", out)[0] == 0
    svg = out.read_text()
    assert svg.count('class="cell"') == 2
    assert svg.count('class="site"') == 2
    out2 = tmp / "d2.svg"
    run(capsys, "render", "--model", res, "--out", out2)
    assert out.read_bytes() == out2.read_bytes()


def _metadata(svg):
    return json.loads(svg.split("<metadata>")[1].split("</metadata>")[0])


def test_render_omits_empty_cells(solved, capsys):
    tmp, res = solved
    obj = json.loads(res.read_text())
    obj["sites"]["points"].append([0.0, 0.9])
    obj["sites"]["masses"] = [0.4, 0.4, 0.2]
    obj["heights"] = [0.0, 0.0, -5.0]
    obj["report"] = None
    path = tmp / "empty.json"
    path.write_text(json.dumps(obj))
    code, svg, _ = run(capsys, "render", "--model", path)
    assert code == 0
    assert svg.count('class="cell"') == 2
    assert svg.count('class="site"') == 3
    assert _metadata(svg)["empty_cells"] == [2]


def test_render_cluster_fixture(cluster_result, capsys):
    _, res = cluster_result
    code, svg, _ = run(capsys, "render", "--model", res, "--mode", "diagram")
    assert code == 0
    assert svg.count('class="cell"') == 128
    meta = _metadata(svg)
    assert meta["cells"] == 128 and meta["empty_cells"] == []
    assert np.allclose(meta["measures"], 1 / 128, rtol=1e-6)


def test_render_potential_heat_map(solved, capsys):
    _, res = solved
    code, svg, _ = run(capsys, "render", "--model", res, "--mode", "potential")
    assert code == 0
    meta = _metadata(svg)
    assert meta["mode"] == "potential"
    assert svg.count('class="px"') == 64 * 64
    assert meta["u_min"] <= meta["u_max"]


# ---------------------------------------------------------------- entry point

def test_module_entry_point(solved):
    _, res = solved
    proc = subprocess.run([sys.executable, "-m", "sdot", "wasserstein", "--model", str(res)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["sites"] == 2


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
