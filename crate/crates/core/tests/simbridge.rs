use approx::assert_abs_diff_eq;
use ngcolloc::collocation::fit;
use ngcolloc::quadrature::build_rule;
use ngcolloc::simbridge::{emit_samples, ingest_results, parse_results, run_command, CommandSpec};
use ngcolloc::{synthetic, BasisSet, Error, QuadratureRule, SolverConfig};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

fn basis() -> &'static BasisSet {
    static B: OnceLock<BasisSet> = OnceLock::new();
    B.get_or_init(|| BasisSet::for_density(&synthetic::density(), 4).unwrap())
}

fn rule() -> &'static QuadratureRule {
    static R: OnceLock<QuadratureRule> = OnceLock::new();
    R.get_or_init(|| build_rule(basis(), &synthetic::density(), 2, &SolverConfig::default()).unwrap())
}

#[test]
fn hand_filled_samples_file_round_trips_into_a_fit() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    let batch = emit_samples(rule(), &samples).unwrap();
    assert_eq!(batch.len(), rule().len());

    // Fill in y = Psi_1(x) by appending a column to the emitted file.
    let text = std::fs::read_to_string(&samples).unwrap();
    let mut filled = String::new();
    for line in text.lines() {
        if line.starts_with('#') {
            writeln!(filled, "{line}").unwrap();
        } else if line.starts_with("id") {
            writeln!(filled, "{line},y").unwrap();
        } else {
            let cells: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
            let y = basis().eval(&cells, 2).unwrap()[1];
            writeln!(filled, "{line},{y:e}").unwrap();
        }
    }
    let results = dir.path().join("results.csv");
    std::fs::write(&results, filled).unwrap();

    let batch = ingest_results(rule(), &results).unwrap();
    assert_eq!(batch.columns, vec!["y"]);
    let model = fit(basis(), rule(), &batch.column(0)).unwrap();
    assert_abs_diff_eq!(model.coeffs()[1], 1.0, epsilon = 1e-6);
    for (i, c) in model.coeffs().iter().enumerate() {
        if i != 1 {
            assert!(c.abs() < 1e-6, "coefficient {i} = {c}");
        }
    }
}

#[test]
fn stale_and_partial_batches_are_rejected() {
    let r = rule();
    let path = Path::new("results.csv");
    let mut text = String::from("# rule=deadbeef\nid,y\n");
    for k in 1..=r.len() {
        writeln!(text, "{k},1.0").unwrap();
    }
    assert!(matches!(parse_results(r, &text, path), Err(Error::StaleRule { .. })));

    let mut partial = format!("# rule={}\nid,y\n", r.fingerprint());
    for k in 2..=r.len() {
        writeln!(partial, "{k},1.0").unwrap();
    }
    match parse_results(r, &partial, path) {
        Err(Error::IncompleteBatch { missing }) => assert_eq!(missing, vec![1]),
        other => panic!("expected IncompleteBatch, got {other:?}"),
    }

    let failed = partial.replace("2,1.0", "2,failed") + "1,1.0\n";
    match parse_results(r, &failed, path) {
        Err(Error::Simulator { failures }) => assert_eq!(failures[0].id, 2),
        other => panic!("expected Simulator, got {other:?}"),
    }
}

#[test]
fn shell_simulator_matches_the_response() {
    let r = rule();
    let spec = CommandSpec::new("awk -v a={x1} -v b={x2} 'BEGIN { printf \"%.17g\\n\", exp(a) + 0.1 * cos(a) * sin(b) }'");
    let batch = run_command(r, &spec).unwrap();
    assert_eq!(batch.len(), r.len());
    for k in 0..r.len() {
        assert_abs_diff_eq!(batch.values[(k, 0)], synthetic::response(&r.node(k)), epsilon = 1e-12);
    }
}

#[test]
fn parallel_runs_match_serial_runs() {
    let r = rule();
    let mut spec = CommandSpec::new("echo {id},{x2},{x1}");
    let serial = run_command(r, &spec).unwrap();
    spec.parallelism = 4;
    let parallel = run_command(r, &spec).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.columns, vec!["y1", "y2", "y3"]);
    for k in 0..r.len() {
        assert_eq!(serial.values[(k, 0)], (k + 1) as f64);
    }
}

#[test]
fn stdin_mode_feeds_coordinates() {
    let r = rule();
    let mut spec = CommandSpec::new("awk -F, '{ printf \"%.17g\\n\", $1 - $2 }'");
    spec.stdin = true;
    let batch = run_command(r, &spec).unwrap();
    for k in 0..r.len() {
        let x = r.node(k);
        assert_abs_diff_eq!(batch.values[(k, 0)], x[0] - x[1], epsilon = 1e-15);
    }
}

#[test]
fn failing_nodes_are_reported() {
    let r = rule();
    let spec = CommandSpec::new("test {id} -ne 3 && echo 1");
    match run_command(r, &spec) {
        Err(Error::Simulator { failures }) => {
            assert_eq!(failures.len(), 1);
            assert_eq!(failures[0].id, 3);
        }
        other => panic!("expected Simulator, got {other:?}"),
    }
    let ragged = CommandSpec::new("if [ {id} -eq 2 ]; then echo 1,2; else echo 1; fi");
    assert!(matches!(run_command(r, &ragged), Err(Error::Simulator { .. })));
    let mut bad = CommandSpec::new("echo 1");
    bad.parallelism = 0;
    assert!(matches!(run_command(r, &bad), Err(Error::Config(_))));
}

#[test]
fn command_results_serialize_to_an_ingestible_file() {
    let r = rule();
    let batch = run_command(r, &CommandSpec::new("echo {x1}")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    std::fs::write(&path, batch.to_csv()).unwrap();
    assert_eq!(ingest_results(r, &path).unwrap(), batch);
}
