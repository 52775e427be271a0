mod common;

use align_dm::backend::MockPolicy;
use align_dm::metrics::MeanSe;
use align_dm::report::{emit_report, parse_table_csv, Format, ReportBundle};
use align_dm::runner::{
    ablate_with, evaluate, replay_dir, run, run_log_path, run_with, AblationGrid, BackendSpec,
    EvalPlan, Mode, RunConfig, RunError,
};
use align_dm::{AlignmentTarget, Attribute, Level};

fn config(mode: Mode, policy: MockPolicy) -> RunConfig {
    RunConfig::new(
        common::sample_dataset_path(),
        BackendSpec::Mock { policy },
        mode,
    )
}

fn exact(v: Option<MeanSe>) -> f64 {
    v.expect("level present").mean
}

#[test]
fn oracle_and_adversarial_bounds() {
    let d = common::sample_dataset();
    for (policy, want) in [(MockPolicy::Oracle, 1.0), (MockPolicy::Adversarial, 0.0)] {
        for mode in [Mode::Aligned, Mode::AlignedSc] {
            let c = config(mode, policy.clone());
            let backend = c.backend.build(&d).unwrap();
            let r = run_with(&c, &d, backend.as_ref())
                .unwrap()
                .evaluation
                .report;
            assert_eq!(exact(r.overall_high), want, "{mode} {}", policy.name());
            assert_eq!(exact(r.overall_low), want, "{mode} {}", policy.name());
            assert!(r.per_target.iter().all(|t| t.accuracy.mean == want));
            assert_eq!(r.per_target.len(), 12);
        }
    }
}

#[test]
fn unaligned_levels_are_complementary() {
    let d = common::two_choice_dataset();
    for policy in [
        MockPolicy::FixedIndex(0),
        MockPolicy::FixedIndex(1),
        MockPolicy::SeededRandom(11),
        MockPolicy::Oracle,
    ] {
        let c = config(Mode::Unaligned, policy);
        let backend = c.backend.build(&d).unwrap();
        let eval = run_with(&c, &d, backend.as_ref()).unwrap().evaluation;
        let r = &eval.report;
        for a in Attribute::ALL {
            let hi = r.target(AlignmentTarget::new(a, Level::High)).unwrap();
            let lo = r.target(AlignmentTarget::new(a, Level::Low)).unwrap();
            assert_eq!(hi.accuracy.mean + lo.accuracy.mean, 1.0);
        }
        for run in &eval.runs {
            for pair in run.per_target.chunks(2) {
                assert_eq!(pair[0].hits + pair[1].hits, pair[0].n);
            }
            let total =
                common::exact_overall(run, Level::High).add(common::exact_overall(run, Level::Low));
            assert_eq!(total, common::Ratio(1, 1));
        }
        assert_eq!(
            format!(
                "{:.1}",
                (exact(r.overall_high) + exact(r.overall_low)) * 100.0
            ),
            "100.0"
        );
    }
}

#[test]
fn one_positive_sample_reduces_to_aligned() {
    let d = common::sample_dataset();
    for seed in [1, 2, 3] {
        let mut c = config(Mode::AlignedSc, MockPolicy::SeededRandom(seed));
        c.n_pos = 1;
        c.n_neg = 0;
        let backend = c.backend.build(&d).unwrap();
        let out = run_with(&c, &d, backend.as_ref()).unwrap();
        let aligned = EvalPlan {
            mode: Mode::Aligned,
            ..EvalPlan::from_config(&c)
        };
        let as_aligned = evaluate(&out.records, &d, &aligned).unwrap();
        assert_eq!(as_aligned.report.to_json(), out.evaluation.report.to_json());
    }
}

#[test]
fn replay_reproduces_live_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Mode::AlignedSc, MockPolicy::SeededRandom(4));
    c.runs = 3;
    c.out = Some(dir.path().to_path_buf());
    let live = run(&c).unwrap().evaluation.report.to_json();
    let (_, first) = replay_dir(dir.path(), None).unwrap();
    let (_, second) = replay_dir(dir.path(), None).unwrap();
    assert_eq!(first.report.to_json(), live);
    assert_eq!(second.report.to_json(), live);
}

#[test]
fn concurrency_does_not_change_results() {
    let d = common::sample_dataset();
    let reports: Vec<String> = [1, 3, 8]
        .into_iter()
        .map(|concurrency| {
            let mut c = config(Mode::AlignedSc, MockPolicy::SeededRandom(9));
            c.concurrency = concurrency;
            c.runs = 2;
            let backend = c.backend.build(&d).unwrap();
            run_with(&c, &d, backend.as_ref())
                .unwrap()
                .evaluation
                .report
                .to_json()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn deleted_log_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Mode::Aligned, MockPolicy::Oracle);
    c.out = Some(dir.path().to_path_buf());
    run(&c).unwrap();
    let log = run_log_path(dir.path(), 0, false);
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let removed: align_dm::runner::LogRecord = serde_json::from_str(lines.remove(5)).unwrap();
    std::fs::write(&log, lines.join("\n")).unwrap();
    match replay_dir(dir.path(), None) {
        Err(RunError::IncompleteLog { key }) => assert_eq!(key, removed.key()),
        other => panic!("expected IncompleteLog, got {other:?}"),
    }
}

#[test]
fn ablation_grid_on_oracle_is_perfect_everywhere() {
    let d = common::sample_dataset();
    let c = config(Mode::AlignedSc, MockPolicy::Oracle);
    let backend = c.backend.build(&d).unwrap();
    let ab = ablate_with(&c, &AblationGrid::standard(), &d, backend.as_ref()).unwrap();
    assert_eq!(ab.cells.len(), 6);
    for (_, r) in &ab.cells {
        assert_eq!(exact(r.overall_high), 1.0);
        assert_eq!(exact(r.overall_low), 1.0);
    }
}

#[test]
fn single_cell_ablation_equals_plain_run() {
    let d = common::sample_dataset();
    let c = config(Mode::AlignedSc, MockPolicy::SeededRandom(21));
    let backend = c.backend.build(&d).unwrap();
    let ab = ablate_with(
        &c,
        &AblationGrid::new(vec![(5, 5)]).unwrap(),
        &d,
        backend.as_ref(),
    )
    .unwrap();
    let plain = run_with(&c, &d, backend.as_ref()).unwrap();
    assert_eq!(ab.cells[0].1, plain.evaluation.report);
    assert!(AblationGrid::new(vec![]).is_err());
}

#[test]
fn oracle_report_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = common::sample_dataset();
    let c = config(Mode::AlignedSc, MockPolicy::Oracle);
    let backend = c.backend.build(&d).unwrap();
    let out = run_with(&c, &d, backend.as_ref()).unwrap();
    let bundle = ReportBundle::from_run(&c, &out);
    emit_report(&[bundle], Format::Csv, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(
        csv.lines().nth(1),
        Some("aligned-sc,100.0±0.0,100.0±0.0,100.0±0.0")
    );
    let rows = parse_table_csv(&csv).unwrap();
    assert_eq!(rows[0].f1, Some((100.0, 0.0)));
    let radar: serde_json::Value = {
        emit_report(
            &[ReportBundle::from_run(&c, &out)],
            Format::Json,
            dir.path(),
        )
        .unwrap();
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("radar.json")).unwrap())
            .unwrap()
    };
    assert_eq!(radar["axes"].as_array().unwrap().len(), 12);
    assert!(radar["series"][0]["values"]
        .as_array()
        .unwrap()
        .iter()
        .all(|v| v.as_f64() == Some(1.0)));
}
