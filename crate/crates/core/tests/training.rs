use std::fs;
use std::path::Path;

use gar_core::policy::{Policy, Prompt};
use gar_core::training::{
    checkpoint_load, checkpoint_save, metrics_csv, read_run_log, run_iteration, sample_base_pairs, RunConfig, RunState,
    Trainer, VerifierKind,
};
use gar_core::verifier::{ArenaChecker, ClientConfig, MockConfig, MockVerifier, RemoteChecker, VerifierClient};
use gar_core::GarError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> RunConfig {
    RunConfig {
        iterations: 2,
        statements_per_iteration: 48,
        proofs_per_statement: 8,
        pass_at_x: 8,
        repository_size: 24,
        fuser_learning_rate: 200.0,
        prover_learning_rate: 8.0,
        ..RunConfig::default()
    }
}

#[test]
fn pairs_from_two_statements_are_always_the_same_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs = sample_base_pairs(&["a", "b"], 500, &mut rng).unwrap();
    assert_eq!(pairs.len(), 500);
    assert!(pairs.iter().all(|&(a, b)| (a.min(b), a.max(b)) == (0, 1)));
    assert!(sample_base_pairs(&["a"], 3, &mut rng).is_err());
}

#[test]
fn pair_sampling_is_deterministic() {
    let repo: Vec<u32> = (0..30).collect();
    let a = sample_base_pairs(&repo, 200, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = sample_base_pairs(&repo, 200, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|(x, y)| x != y));
}

#[test]
fn pair_sampling_includes_statements_uniformly() {
    let repo: Vec<u32> = (0..100).collect();
    let pairs = sample_base_pairs(&repo, 10_000, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let mut counts = vec![0usize; 100];
    for (a, b) in pairs {
        counts[a] += 1;
        counts[b] += 1;
    }
    // each pair includes a given statement with probability 2/100
    let p: f64 = 0.02;
    let mean = 10_000.0 * p;
    let se = (10_000.0 * p * (1.0 - p)).sqrt();
    let worst = counts.iter().map(|&c| (c as f64 - mean).abs() / se).fold(0.0, f64::max);
    assert!(worst <= 3.0, "worst deviation {worst:.2} standard errors");
}

#[test]
fn zero_iterations_leave_the_state_alone() {
    let config = RunConfig {
        iterations: 0,
        ..small()
    };
    let mut t = Trainer::new(config.clone()).unwrap();
    assert!(t.run().unwrap().is_empty());
    assert_eq!(t.state(), &RunState::initial(&config).unwrap());
}

#[test]
fn one_iteration_counts_are_nested() {
    let config = RunConfig {
        iterations: 1,
        ..small()
    };
    let records = gar_core::training::run(config.clone()).unwrap();
    let r = &records[0];
    assert_eq!(r.generated_count, config.statements_per_iteration);
    assert!(r.filtered_for_prover_count <= r.compile_pass_count);
    assert!(r.compile_pass_count <= r.generated_count);
    for v in [
        r.pass_at_x,
        r.avg_correctness,
        r.modification_rate,
        r.base_policy_avg_correctness,
    ] {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn references_stay_frozen_and_training_moves_the_live_policies() {
    let config = small();
    let initial = RunState::initial(&config).unwrap();
    let mut state = initial.clone();
    for _ in 0..config.iterations {
        state = run_iteration(&state, &config, &ArenaChecker).unwrap().0;
        assert_eq!(state.fuser_ref.params(), initial.fuser_ref.params());
        assert_eq!(state.prover_ref.params(), initial.prover_ref.params());
    }
    assert_ne!(state.prover.params(), initial.prover.params());
    assert_ne!(state.fuser.params(), initial.fuser.params());
}

#[test]
fn logged_batches_and_rewards_follow_the_rules() {
    let dir = tempfile::tempdir().unwrap();
    for penalty in [true, false] {
        let out = dir.path().join(format!("p{penalty}"));
        let config = RunConfig {
            modification_penalty: penalty,
            checkpoint_dir: Some(out.clone()),
            ..small()
        };
        Trainer::new(config).unwrap().run().unwrap();
        let log = read_run_log(&out.join("run_log.jsonl")).unwrap();
        assert_eq!(log.iterations.len(), 2);
        for (record, statements) in &log.iterations {
            assert_eq!(statements.len(), record.generated_count);
            assert_eq!(
                statements.iter().filter(|s| s.prover_batch).count(),
                record.filtered_for_prover_count
            );
            for s in statements {
                let p = s.pass_rate.unwrap_or(0.0);
                if s.prover_batch {
                    assert!(p > 0.0 && p <= 0.5);
                }
                if !s.compile_ok || p == 0.0 {
                    assert_eq!(s.fuser_reward, 0.0);
                }
                if !penalty {
                    let want = if p != 0.0 && s.compile_ok { 1.0 - p } else { 0.0 };
                    assert_eq!(s.fuser_reward, want);
                }
            }
        }
    }
}

#[test]
fn checkpoints_round_trip_and_reject_damage() {
    let dir = tempfile::tempdir().unwrap();
    let config = small();
    let state = run_iteration(&RunState::initial(&config).unwrap(), &config, &ArenaChecker)
        .unwrap()
        .0;
    let path = dir.path().join("checkpoint.json");
    checkpoint_save(&state, &config, &path).unwrap();
    let loaded = checkpoint_load(&path).unwrap();
    assert_eq!(loaded.state, state);
    for (ctx, len) in [(0, 2), (0, 5), (0, 9)] {
        let probe = vec![1; len];
        assert_eq!(
            loaded
                .state
                .prover
                .log_prob(Prompt::new(ctx, len), &probe)
                .unwrap()
                .to_bits(),
            state.prover.log_prob(Prompt::new(ctx, len), &probe).unwrap().to_bits()
        );
    }

    let text = fs::read_to_string(&path).unwrap();
    let truncated = dir.path().join("truncated.json");
    fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(matches!(checkpoint_load(&truncated), Err(GarError::Checkpoint(_))));

    let other = dir.path().join("future.json");
    fs::write(&other, text.replacen("\"version\":1", "\"version\":99", 1)).unwrap();
    assert!(matches!(checkpoint_load(&other), Err(GarError::Checkpoint(_))));
    assert!(checkpoint_load(&dir.path().join("missing.json")).is_err());
}

#[test]
fn resume_refuses_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..small()
    };
    Trainer::new(config.clone()).unwrap().run_until(1).unwrap();
    let changed = RunConfig {
        seed: 99,
        ..config.clone()
    };
    assert!(matches!(Trainer::resume(changed), Err(GarError::Checkpoint(_))));
    let longer = RunConfig {
        iterations: 3,
        ..config
    };
    let records = Trainer::resume(longer).unwrap().run().unwrap();
    assert_eq!(records.len(), 3);
}

#[test]
fn transport_failure_leaves_the_state_unchanged() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let config = RunConfig {
        verifier: VerifierKind::Remote,
        verifier_endpoint: format!("127.0.0.1:{port}"),
        ..small()
    };
    let mut t = Trainer::new(config).unwrap();
    let before = t.state().clone();
    assert!(matches!(t.step(), Err(GarError::Transport(_))));
    assert_eq!(t.state(), &before);
}

#[test]
fn remote_mock_run_matches_the_arena_run() {
    let config = RunConfig {
        iterations: 1,
        statements_per_iteration: 24,
        ..small()
    };
    let exact = gar_core::training::run(config.clone()).unwrap();
    let mock = MockVerifier::spawn(MockConfig::arena()).unwrap();
    let remote = RemoteChecker::new(
        VerifierClient::new(ClientConfig {
            endpoint: mock.endpoint(),
            workers: 4,
            timeout_secs: 10.0,
        })
        .unwrap(),
    );
    let via_mock = Trainer::new(config)
        .unwrap()
        .with_checker(Box::new(remote))
        .run()
        .unwrap();
    assert_eq!(metrics_csv(&exact), metrics_csv(&via_mock));
    assert_eq!(exact[0].fuser_objective, via_mock[0].fuser_objective);
    assert_eq!(exact[0].prover_objective, via_mock[0].prover_objective);
}

#[test]
fn config_text_round_trips() {
    let config = RunConfig {
        checkpoint_dir: Some(Path::new("out").to_path_buf()),
        ..small()
    };
    let text = config.to_toml_string().unwrap();
    assert_eq!(RunConfig::from_toml_str(&text).unwrap(), config);
    let err = RunConfig::from_toml_str("iterations = 2\nbogus_key = 1\n").unwrap_err();
    assert!(
        matches!(err, GarError::Config { ref key, .. } if key == "bogus_key"),
        "{err}"
    );
}
