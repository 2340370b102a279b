import json

import numpy as np

from mixtomo.cli import main, parse_target_spec
from mixtomo.measure import Dataset, Povm4, ProjectiveEnsemble, sample_projective
from mixtomo.ndo import save_json
from mixtomo.povmnqs import PovmNqsModel
from mixtomo.qcore import depolarize, ground_state, load_hamiltonian


def run(*argv):
    return main([str(a) for a in argv])


def gen(tmp_path, name="d.jsonl", *extra):
    out = tmp_path / name
    code = run("gen-data", "--model", "tfim", "--n", 1, "--h", 1, "--beta", 0, "--scheme", "povm4",
               "--shots", 100, "--seed", 1, "--out", out, "--quiet", *extra)
    return code, out


def test_gen_data_count_and_determinism(tmp_path):
    code, out = gen(tmp_path)
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 101 and json.loads(lines[0])["scheme"] == "povm4"
    code, again = gen(tmp_path, "e.jsonl")
    assert again.read_bytes() == out.read_bytes()
    manifest = json.loads((tmp_path / "d.jsonl.manifest.json").read_text())
    assert manifest["command"] == "gen-data" and manifest["seed"] == 1 and manifest["total_shots"] == 100


def test_gen_data_file_hamiltonian_matches_pipeline(tmp_path):
    ham = tmp_path / "h.txt"
    ham.write_text("-1.0 ZZ\n-0.7 XI\n-0.7 IX\n")
    out = tmp_path / "d.jsonl"
    assert run("gen-data", "--model", "file", "--hamiltonian", ham, "--ground", "--depol", 0.1,
               "--scheme", "projective", "--shots", 30, "--seed", 5, "--out", out, "--quiet") == 0
    rho = depolarize(ground_state(load_hamiltonian(ham.read_text())), 0.1)
    expected = sample_projective(rho, ProjectiveEnsemble(2), 30, 5)
    assert out.read_text() == expected.to_jsonl()


def test_write_once_and_force(tmp_path):
    code, out = gen(tmp_path)
    before = out.read_bytes()
    assert gen(tmp_path)[0] == 2
    assert out.read_bytes() == before
    assert gen(tmp_path, "d.jsonl", "--force")[0] == 0


def test_usage_errors(tmp_path):
    assert run("nonsense") == 2
    assert run("gen-data", "--scheme", "povm4", "--shots", 10, "--out", tmp_path / "x") == 2
    assert not (tmp_path / "x").exists()
    assert run("study", "--study", "nope", "--out-dir", tmp_path) == 2


def test_global_flags_before_subcommand(tmp_path):
    out = tmp_path / "d.jsonl"
    assert run("--seed", 1, "--quiet", "gen-data", "--n", 1, "--beta", 0, "--scheme", "povm4",
               "--shots", 100, "--out", out) == 0
    assert out.read_bytes() == gen(tmp_path, "e.jsonl")[1].read_bytes()


def test_train_eval_povm_end_to_end(tmp_path):
    data = tmp_path / "d.jsonl"
    assert run("gen-data", "--n", 1, "--beta", 0, "--scheme", "povm4", "--shots", 10000,
               "--out", data, "--quiet") == 0
    model, hist = tmp_path / "m.json", tmp_path / "h.csv"
    assert run("train", "--scheme", "povmnqs", "--data", data, "--out", model, "--history", hist,
               "--quiet") == 0
    assert hist.read_text().splitlines()[0] == "iteration,loss,wall_seconds,anchor_refreshes,clip_events"
    metrics = tmp_path / "eval.json"
    assert run("eval", "--model", model, "--target-spec", "model=tfim,n=1,h=1,beta=0",
               "--out", metrics, "--quiet") == 0
    m = json.loads(metrics.read_text())
    assert m["kl"] < 1e-2
    assert "infidelity" in m and "infidelity_swapped" in m
    # the data manifest's target block is accepted as a target spec too
    assert run("eval", "--model", model, "--target-spec", f"{data}.manifest.json", "--quiet") == 0


def test_train_errors_leave_no_outputs(tmp_path):
    model, hist = tmp_path / "m.json", tmp_path / "h.csv"
    assert run("train", "--scheme", "ndo", "--data", tmp_path / "missing.jsonl",
               "--out", model, "--history", hist) == 2
    code, data = gen(tmp_path)
    assert run("train", "--scheme", "ndo", "--data", data, "--out", model, "--history", hist) == 2
    cfg = tmp_path / "c.toml"
    cfg.write_text("batch_size = 1000\n")
    assert run("train", "--scheme", "povmnqs", "--data", data, "--config", cfg,
               "--out", model, "--history", hist) == 2
    cfg.write_text("[train]\nbogus = 1\n")
    assert run("train", "--scheme", "povmnqs", "--data", data, "--config", cfg,
               "--out", model, "--history", hist) == 2
    assert not model.exists() and not hist.exists()


def test_full_batch_config_cv_on_off_identical(tmp_path):
    data = tmp_path / "d.jsonl"
    assert run("gen-data", "--n", 1, "--beta", 1, "--scheme", "projective", "--shots", 20,
               "--out", data, "--quiet") == 0
    thetas = []
    for cv in ("true", "false"):
        cfg = tmp_path / f"c_{cv}.toml"
        cfg.write_text(f"[train]\nbatch_size = 60\ncv = {cv}\nmax_iter = 300\npatience = 0\nseed = 4\n")
        out = tmp_path / f"m_{cv}.json"
        assert run("train", "--scheme", "ndo", "--data", data, "--config", cfg, "--out", out,
                   "--history", tmp_path / f"h_{cv}.csv", "--quiet") == 0
        thetas.append(np.array(json.loads(out.read_text())["theta"]))
    assert np.allclose(thetas[0], thetas[1], rtol=0, atol=1e-10)


def test_train_rerun_from_manifest_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run("gen-data", "--n", 1, "--beta", 1, "--scheme", "povm4", "--shots", 200,
               "--out", "d.jsonl", "--quiet") == 0
    assert run("train", "--scheme", "povmnqs", "--data", "d.jsonl", "--out", "m.json",
               "--history", "h.csv", "--quiet", "--seed", 3) == 0
    first = (tmp_path / "m.json").read_bytes(), (tmp_path / "h.csv").read_bytes()
    manifest = json.loads((tmp_path / "m.json.manifest.json").read_text())
    assert run(*manifest["argv"], "--force") == 0
    assert ((tmp_path / "m.json").read_bytes(), (tmp_path / "h.csv").read_bytes()) == first


def test_eval_exact_and_converged_model(tmp_path):
    assert run("eval", "--model", "exact", "--target-spec", "model=tfim,n=2,h=1,beta=1",
               "--out", tmp_path / "x.json", "--quiet") == 0
    m = json.loads((tmp_path / "x.json").read_text())
    assert all(abs(m[k]) < 1e-9 for k in ("kl", "energy_error", "infidelity", "trace_distance"))
    # a POVM-NQS fitted to the exact uniform-target distribution
    model = PovmNqsModel(1)
    target = Povm4(1).probabilities(np.eye(2) / 2)
    theta = model.init_params(np.random.default_rng(0))
    for _ in range(20000):
        theta += 1.0 * target @ model.log_probs_and_grads(theta)[1]
    save_json(model, theta, tmp_path / "m.json")
    assert run("eval", "--model", tmp_path / "m.json", "--target-spec", "n=1,beta=0",
               "--out", tmp_path / "e.json", "--quiet") == 0
    m = json.loads((tmp_path / "e.json").read_text())
    for k in ("kl", "energy_error", "infidelity", "infidelity_swapped", "classical_infidelity",
              "trace_distance"):
        assert abs(m[k]) < 1e-6, k


def test_eval_qubit_mismatch(tmp_path):
    model = PovmNqsModel(2)
    save_json(model, np.zeros(model.n_params), tmp_path / "m.json")
    assert run("eval", "--model", tmp_path / "m.json", "--target-spec", "n=1,beta=0") == 2


def test_parse_target_spec():
    assert parse_target_spec("model=tfim,n=2,h=1,beta=10") == {"model": "tfim", "n": 2, "h": 1.0, "beta": 10.0}
    assert parse_target_spec("n=2,ground,depol=0.1")["ground"] is True


def test_study_bound_and_manifest(tmp_path):
    assert run("study", "--study", "bound", "--n", 2, "--pairs", 200, "--out-dir", tmp_path, "--quiet") == 0
    report = json.loads((tmp_path / "bound_report.json").read_text())
    assert report["violations"] == 0
    manifest = json.loads((tmp_path / "bound_manifest.json").read_text())
    assert manifest["config"]["bound"]["n_values"] == [2] and manifest["config"]["bound"]["pairs"] == 200
    assert run("study", "--study", "bound", "--n", 2, "--pairs", 200, "--out-dir", tmp_path) == 2


def test_study_dry_run(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text("sizes = [100, 1000, 10000]\ninstances = 4\n[target]\nn = 2\nbetas = [0.1, 10.0]\n")
    assert run("study", "--study", "scaling", "--config", cfg, "--dry-run", "--out-dir", tmp_path,
               "--quiet") == 0
    manifest = json.loads((tmp_path / "scaling_manifest.json").read_text())
    plan = manifest["plan"]
    assert plan["n_units"] == 2 * 2 * 3 * 4
    assert plan["total_shots"] == sum(u["dataset_size"] for u in plan["units"])
    assert not (tmp_path / "scaling_raw.csv").exists()


def test_study_config_mismatch(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text('study = "cv"\n')
    assert run("study", "--study", "bound", "--config", cfg, "--out-dir", tmp_path) == 2


def test_study_orders_with_svg(tmp_path):
    cfg = tmp_path / "o.toml"
    cfg.write_text("[orders]\ninstances = 2\n")
    assert run("study", "--study", "orders", "--config", cfg, "--out-dir", tmp_path, "--svg", "--quiet") == 0
    for name in ("orders_raw.csv", "orders_fits.csv", "orders_summary.csv", "orders_report.json", "orders.svg"):
        assert (tmp_path / name).is_file()
    first = (tmp_path / "orders_raw.csv").read_bytes(), (tmp_path / "orders.svg").read_bytes()
    assert run("study", "--study", "orders", "--config", cfg, "--out-dir", tmp_path, "--svg",
               "--quiet", "--force") == 0
    assert ((tmp_path / "orders_raw.csv").read_bytes(), (tmp_path / "orders.svg").read_bytes()) == first


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("MIXTOMO_THREADS", "2")
    assert run("study", "--study", "bound", "--n", 1, "--pairs", 20, "--out-dir", tmp_path, "--quiet") == 0
    assert json.loads((tmp_path / "bound_manifest.json").read_text())["threads"] == 2


def test_dataset_written_by_cli_reads_back(tmp_path):
    code, out = gen(tmp_path)
    ds = Dataset.read(out)
    assert ds.scheme == "povm4" and ds.size == 100
