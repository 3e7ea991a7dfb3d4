use std::path::PathBuf;
use std::process::{Command, Output};

use lambda_core::genealogy::TimeSeriesData;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lambda-infer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).display().to_string()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lambda-infer-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let args = ["simulate", "--measure", "uniform", "--seed", "42"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["simulate", "--measure", "uniform", "--seed", "43"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn outputs_start_with_a_provenance_comment() {
    for args in [
        vec!["simulate", "--seed", "3"],
        vec!["moments", "--measure", "uniform", "--n", "6"],
        vec!["table1"],
        vec!["prior", "--draws", "3", "--seed", "5"],
    ] {
        let o = run(&args);
        assert!(o.status.success(), "{args:?}");
        let text = stdout(&o);
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# lambda-infer "), "{first}");
        assert!(first.contains("seed="));
        assert!(first.contains(&format!("argv={}", env!("CARGO_BIN_EXE_lambda-infer"))));
    }
}

#[test]
fn short_chains_repeat_exactly_without_timing() {
    let data = fixture("bs.tsv");
    let args = ["mcmc", "--data", &data, "--steps", "20", "--particles", "3", "--seed", "9", "--no-timing"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("step,loc1,"));
    assert!(header.contains("lambda3"));
    assert!(header.ends_with("log_estimate,accepted,stage1_accepted,wall_ms"));
}

#[test]
fn chain_feeds_bounds() {
    let chain = scratch("chain.csv");
    let data = fixture("kingman.tsv");
    let o = run(&[
        "mcmc", "--data", &data, "--steps", "30", "--particles", "3", "--seed", "2", "--out",
        chain.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["bounds", "--chain", chain.to_str().unwrap(), "--grid", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("# kingman_test"));
    assert!(text.lines().any(|l| l.starts_with("min,")));
    assert!(text.lines().any(|l| l.starts_with("max,")));
}

#[test]
fn explicit_constraints_reproduce_the_worked_example() {
    let o = run(&["bounds", "--constraints", "3<=0.5,4>=0.3", "--functional", "exp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let value = |mode: &str| -> f64 {
        text.lines().find(|l| l.starts_with(mode)).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!((value("min,") - 0.620).abs() < 0.005);
    assert!((value("max,") - 0.810).abs() < 0.005);
}

#[test]
fn exit_codes_follow_the_error_class() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--seed", "x"]).status.code(), Some(1));
    assert_eq!(run(&["likelihood", "--data", "/nonexistent/data.tsv"]).status.code(), Some(2));
    let empty = scratch("empty.tsv");
    std::fs::write(&empty, "# nothing here\n").unwrap();
    assert_eq!(run(&["likelihood", "--data", empty.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["bounds", "--constraints", "3<=-0.5"]).status.code(), Some(2));
    assert_eq!(run(&["version"]).status.code(), Some(0));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn exact_likelihood_via_cli() {
    let data = scratch("tiny.tsv");
    std::fs::write(&data, "0\t2\t0\n0\t1\t1\n").unwrap();
    let o = run(&["likelihood", "--data", data.to_str().unwrap(), "--model", "pim", "--theta", "0.5", "--exact"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let row = text.lines().last().unwrap();
    let value: f64 = row.split(',').next().unwrap().parse().unwrap();
    assert!(value > 0.0 && value < 1.0);
}

#[test]
fn fixtures_have_the_documented_shape() {
    let bs = TimeSeriesData::parse(&std::fs::read_to_string(fixture("bs.tsv")).unwrap()).unwrap();
    assert_eq!(bs.batches().len(), 5);
    assert!(bs.batches().iter().all(|b| b.1.values().sum::<usize>() == 20));
    assert_eq!(bs.haplotype_len(), 10);

    let k = TimeSeriesData::parse(&std::fs::read_to_string(fixture("kingman.tsv")).unwrap()).unwrap();
    assert_eq!(k.batches().len(), 5);
    let at_one = &k.batches().iter().find(|b| b.0 == 1.0).unwrap().1;
    let mut counts: Vec<usize> = at_one.values().copied().collect();
    counts.sort_unstable();
    assert_eq!(counts, vec![6, 6, 8]);
    assert!(TimeSeriesData::parse("").is_err());
}
