//! End-to-end determinism of the simulation pipeline and record round trips.

use rerand::balance::{evaluate, BalanceScheme, Model};
use rerand::design::{rerandomize, RngStream};
use rerand::sim::{
    generate_population, load_records, run_replications, run_rerandomized, save_records, summarize, PopulationSpec,
    Provenance, ReplicationConfig, CRE, POPULATION_STREAM,
};

fn small_spec() -> PopulationSpec {
    PopulationSpec {
        arm_sizes: vec![60, 40],
        ..PopulationSpec::cubic_two_arm()
    }
}

fn provenance(seed: u64, reps: u64) -> Provenance {
    Provenance {
        master_seed: seed,
        n_reps: reps,
        rep_stream: "replication r uses stream r".into(),
        population_seed: seed,
        population_stream: POPULATION_STREAM,
        tau: 0.0,
    }
}

fn schemes() -> Vec<BalanceScheme> {
    vec![
        BalanceScheme::marginal(Model::T, 0.2),
        BalanceScheme::joint(Model::Lm, 0.5),
        BalanceScheme::consensus(Model::Logit, 0.1, 0.3),
    ]
}

#[test]
fn population_is_reproducible() {
    let stream = RngStream::new(7, POPULATION_STREAM);
    let a = generate_population(&small_spec(), &stream).unwrap();
    let b = generate_population(&small_spec(), &stream).unwrap();
    assert_eq!(a.covariates, b.covariates);
    assert_eq!(a.potentials, b.potentials);
}

#[test]
fn replications_ignore_thread_count() {
    let pop = generate_population(&small_spec(), &RngStream::new(3, POPULATION_STREAM)).unwrap();
    let run = |threads| {
        let cfg = ReplicationConfig {
            parallelism: Some(threads),
            ..Default::default()
        };
        run_replications(&pop, &schemes(), 150, 11, &cfg).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one.len(), 150 * 4);
    assert!(one.iter().filter(|r| r.scheme_id == CRE).all(|r| r.accepted));

    let cfg = ReplicationConfig::default();
    let s = &schemes()[1];
    let re = run_rerandomized(&pop, s, 120, 5, &cfg).unwrap();
    assert_eq!(re, run_rerandomized(&pop, s, 120, 5, &cfg).unwrap());
    assert!(re.iter().all(|r| r.accepted && r.scheme_id == s.label()));
}

#[test]
fn csv_round_trip_resummarizes_identically() {
    let pop = generate_population(&small_spec(), &RngStream::new(4, POPULATION_STREAM)).unwrap();
    let records = run_replications(&pop, &schemes()[..2], 400, 21, &ReplicationConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    save_records(&path, &records).unwrap();
    let back = load_records(&path).unwrap();
    assert_eq!(records, back);
    let s1 = summarize(&records, provenance(21, 400)).unwrap();
    let s2 = summarize(&back, provenance(21, 400)).unwrap();
    assert_eq!(s1, s2);
    assert!(serde_json::to_string(&s1).unwrap() == serde_json::to_string(&s2).unwrap());
}

#[test]
fn accepted_design_passes_its_own_check() {
    let pop = generate_population(&small_spec(), &RngStream::new(5, POPULATION_STREAM)).unwrap();
    let frame = pop.frame().unwrap();
    for s in schemes() {
        let r = rerandomize(&frame, &s, &RngStream::new(9, 0), 100_000).unwrap();
        let again = rerandomize(&frame, &s, &RngStream::new(9, 0), 100_000).unwrap();
        assert_eq!(r.assignment, again.assignment);
        let report = evaluate(&frame, &r.assignment, &s).unwrap();
        assert!(report.accepted);
        assert_eq!(report.joint_pvalue, r.report.joint_pvalue);
    }
}
