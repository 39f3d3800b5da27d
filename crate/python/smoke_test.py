"""Smoke test for the gar_py extension module.

Build and install the wheel first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/gar_py-*.whl

then run `python python/smoke_test.py` from the repository root.
"""

import math
import tempfile
from pathlib import Path

import gar_py as gar

ROOT = Path(__file__).resolve().parent.parent


def check_rewards():
    assert gar.fuser_reward(0.25, 0.5) == 0.375
    assert gar.fuser_reward(0.0, 0.0) == 0.0
    assert gar.fuser_reward(0.25, 0.5, penalty=False) == 0.75
    assert gar.prover_reward(True, True) == 0.5
    assert gar.prover_reward(True, True, penalty=False) == 1.0
    adv = gar.group_advantages([1.0, 0.0, 0.0, 1.0])
    assert adv == [1.0, -1.0, -1.0, 1.0]
    assert gar.group_advantages([0.5, 0.5]) == [0.0, 0.0]
    assert abs(gar.kl_estimate(0.0, math.log(2.0)) - (1.0 - math.log(2.0))) < 1e-15
    assert abs(gar.clipped_surrogate(1.5, 1.0, 0.2) - 1.2) < 1e-15


def check_policy():
    p = gar.TabularPolicy(1, 2, 3)
    assert p.shape == (1, 2, 3)
    assert abs(p.log_prob(0, [0, 1]) - 2 * math.log(1 / 3)) < 1e-12
    draws = p.sample(0, 2, 5, 7)
    assert draws == p.sample(0, 2, 5, 7) and len(draws) == 5
    g = p.grad_log_prob(0, [2, 0])
    assert len(g) == 6 and abs(sum(g)) < 1e-12


def check_arena():
    s = gar.ChainStatement(7, 2, ["add:3", "mul:2"], 3)
    assert s.trajectory() == [5, 3]
    assert s.verify(3, [5, 3])["status"] == "pass"
    v = s.verify(5, [5, 5])
    assert v["modified"] and v["status"] == "pass"
    name, back = gar.ChainStatement.parse(s.render("t1"))
    assert name == "t1" and back == s
    fused = s.fuse(gar.ChainStatement(7, 1, ["mul:3"]), pattern="concat_ab", rounds=2)
    assert fused.difficulty == 6
    prior = gar.prover_prior(modulus=5, max_difficulty=8)
    short = gar.ChainStatement(5, 1, ["add:1", "mul:2"])
    p = gar.exact_pass_probability(prior, short, max_difficulty=8)
    assert 0.0 < p < 1.0


def check_verifier():
    stmt = "theorem t : chain 5 1 [add 1] = 2"
    assert gar.contains_escape_tactic("by\n  sorry")
    assert not gar.detect_modification(stmt, stmt + " := by\n  steps [2]")
    assert gar.detect_modification(stmt, "theorem t : chain 5 1 [] = 1 := by\n  steps []")
    mock = gar.MockVerifier(fallback="arena", rules=[("boom", "crash")])
    jobs = [
        {"job_id": "ok", "statement": stmt, "proof": stmt + " := by\n  steps [2]"},
        {"job_id": "wrong", "statement": stmt, "proof": stmt + " := by\n  steps [3]"},
        {"job_id": "esc", "statement": stmt, "proof": stmt + " := by\n  sorry"},
        {"job_id": "boom", "statement": stmt, "proof": "boom"},
    ]
    results = gar.submit_batch(mock.endpoint, jobs, workers=2, timeout=5.0)
    status = {r["job_id"]: r["status"] for r in results}
    assert [r["job_id"] for r in results] == ["ok", "wrong", "esc", "boom"]
    assert status["ok"] == "pass" and status["wrong"] == "fail" and status["boom"] == "error"
    assert results[2]["escape"]
    mock.close()
    try:
        gar.submit_batch(mock.endpoint, jobs[:1], timeout=1.0)
    except gar.VerifierError:
        pass
    else:
        raise AssertionError("closed verifier should be unreachable")


def check_training():
    cfg = gar.Config.load(str(ROOT / "configs" / "smoke.toml"))
    assert cfg.iterations == 1
    assert gar.Config.from_toml(cfg.to_toml()) == cfg
    try:
        cfg.replace(prover_beta=-1.0)
    except gar.ConfigError as e:
        assert "prover_beta" in str(e)
    else:
        raise AssertionError("negative beta should be rejected")
    cfg = cfg.replace(iterations=2)
    with tempfile.TemporaryDirectory() as out:
        trainer = gar.Trainer(cfg, out=out)
        first = trainer.step()
        assert first["iteration"] == 1 and trainer.iteration == 1
        records = trainer.run()
        assert len(records) == 2 and trainer.finished
        log = gar.read_run_log(str(Path(out) / "run_log.jsonl"))
        assert [r["iteration"] for r in log["records"]] == [1, 2]
        assert gar.metrics_csv(log["records"]).startswith("iteration,pass_at_x")
        resumed = gar.Trainer(cfg.replace(iterations=3), out=out, resume=True)
        assert resumed.iteration == 2
        assert len(resumed.run()) == 3
    for r in records:
        assert r["filtered_for_prover_count"] <= r["compile_pass_count"] <= r["generated_count"]


if __name__ == "__main__":
    for check in (check_rewards, check_policy, check_arena, check_verifier, check_training):
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
