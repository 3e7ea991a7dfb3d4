//! Subcommand pipelines. Each returns the text written to the output.

use std::fmt::Write as _;
use std::path::Path;

use lambda_core::bounds::{
    constraints_from_samples, extremize_both, kingman_test, Extremum, Functional, MomentConstraint, DEFAULT_KINGMAN_TOL,
};
use lambda_core::genealogy::{simulate_dataset, SamplingSchedule, TimeSeriesData};
use lambda_core::likelihood::{
    counts_from_data, estimate_with, exact_likelihood, tune_particles_with, Estimator, ExactLikelihood, ParticleLikelihood,
    RateSource, TypedSample, DEFAULT_TARGET_VARIANCE,
};
use lambda_core::mcmc::{run_chain, ChainConfig, ChainOutput, Variant, DEFAULT_SCALE};
use lambda_core::measure::{expected_limiting_posterior, TwoAlleleModel};
use lambda_core::prior::{sample_prior_with, PriorParams, PriorSpec};
use lambda_core::genealogy::stream_rng;
use lambda_core::{Error, MomentSequence, MutationModel};

use crate::config::{self, Config};
use crate::{BoundsArgs, Cli, CliError, Command, LikelihoodArgs, McmcArgs, ModelArgs, PriorArgs, VERSION};

const DEFAULT_SCHEDULE: &str = "0:20,0.5:20,1:20,1.5:20,2:20";
const DEFAULT_THETAS: &str = "0.04,0.1,0.5,1,5,10,17";

pub fn run(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    let cfg = Config::load(cli.config.as_deref())?;
    let text = match &cli.command {
        Command::Simulate(a) => {
            let seed = cfg.pick(a.seed, "seed", 1)?;
            let measure = config::measure(&cfg.pick(a.measure.clone(), "measure", "kingman".to_string())?)?;
            let model = model(&cfg, &a.model, None)?;
            let schedule = SamplingSchedule::parse(&cfg.pick(a.schedule.clone(), "schedule", DEFAULT_SCHEDULE.into())?)?;
            let data = simulate_dataset(&measure, &model, &schedule, seed)?;
            format!("{}{}", header(argv, Some(seed)), data.to_text())
        }
        Command::Likelihood(a) => likelihood(&cfg, a, argv)?,
        Command::Mcmc(a) => mcmc(&cfg, a, argv)?,
        Command::Bounds(a) => bounds(&cfg, a, argv)?,
        Command::Moments(a) => {
            let measure = config::measure(&cfg.pick(a.measure.clone(), "measure", "kingman".to_string())?)?;
            let n = cfg.pick(a.n, "n", 10)?;
            if n < 3 {
                return Err(CliError::Usage("--n must be at least 3".into()));
            }
            format!("{}{}", header(argv, None), MomentSequence::from_measure(&measure, n)?.to_csv())
        }
        Command::Table1(a) => {
            let list = cfg.pick(a.theta_list.clone(), "theta_list", DEFAULT_THETAS.into())?;
            let mut out = header(argv, None);
            out.push_str("theta,E_kingman,E_star\n");
            for t in list.split(',') {
                let theta: f64 = t.trim().parse().map_err(|_| CliError::Usage(format!("bad theta `{t}`")))?;
                let k = expected_limiting_posterior(theta, TwoAlleleModel::Kingman)?;
                let s = expected_limiting_posterior(theta, TwoAlleleModel::Star)?;
                writeln!(out, "{theta},{k:.6},{s:.6}").unwrap();
            }
            out
        }
        Command::Prior(a) => prior(&cfg, a, argv)?,
        Command::Version => format!("lambda-infer {VERSION}\n"),
    };
    emit(cli.out.as_deref(), &text)
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Core(Error::Data(format!("cannot write {}: {e}", p.display())))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Comment line recording version, seed and argv.
fn header(argv: &[String], seed: Option<u64>) -> String {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    format!("# lambda-infer {VERSION} seed={seed} argv={}\n", argv.join(" "))
}

fn model(cfg: &Config, a: &ModelArgs, data: Option<&TimeSeriesData>) -> Result<MutationModel, CliError> {
    let kind = cfg.pick(a.model.clone(), "model", "binary-loci".to_string())?;
    let theta = cfg.pick(a.theta, "theta", 0.1)?;
    let loci = cfg.pick(a.loci, "loci", data.map_or(10, |d| d.haplotype_len()))?;
    let types = cfg.pick(a.types, "types", 2)?;
    config::mutation_model(&kind, theta, loci, types)
}

fn data(cfg: &Config, flag: Option<&Path>) -> Result<TimeSeriesData, CliError> {
    let path = cfg
        .pick_opt(flag.map(|p| p.display().to_string()), "data")?
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    config::dataset(Path::new(&path))
}

fn estimator(cfg: &Config, flag: Option<String>) -> Result<Estimator, CliError> {
    Ok(cfg.pick(flag, "estimator", "history".to_string())?.parse::<Estimator>()?)
}

fn likelihood(cfg: &Config, a: &LikelihoodArgs, argv: &[String]) -> Result<String, CliError> {
    let data = data(cfg, a.data.as_deref())?;
    let model = model(cfg, &a.model, Some(&data))?;
    let measure = config::measure(&cfg.pick(a.measure.clone(), "measure", "kingman".to_string())?)?;
    let seed = cfg.pick(a.seed, "seed", 1)?;
    if a.exact {
        let counts = counts_from_data(&data, &model)?;
        let value = exact_likelihood(RateSource::Measure(&measure), &counts, &model)?;
        return Ok(format!("{}value,log_value\n{value},{}\n", header(argv, None), value.ln()));
    }
    let est_kind = estimator(cfg, a.estimator.clone())?;
    let particles = if a.tune {
        let target = cfg.pick(a.target_variance, "target_variance", DEFAULT_TARGET_VARIANCE)?;
        tune_particles_with(est_kind, RateSource::Measure(&measure), &data, &model, target, seed)?
    } else {
        cfg.pick(a.particles, "particles", 75)?
    };
    let sample = TypedSample::from_data(&data, &model)?;
    let rates = measure.merger_rates(sample.size().max(2));
    let est = estimate_with(est_kind, &rates, &sample, &model, particles, seed)?;
    Ok(format!(
        "{}value,log_value,log_variance,particles,seed\n{},{},{},{},{}\n",
        header(argv, Some(seed)),
        est.value,
        est.log_value,
        est.log_variance,
        est.particles,
        est.seed
    ))
}

fn mcmc(cfg: &Config, a: &McmcArgs, argv: &[String]) -> Result<String, CliError> {
    let data = data(cfg, a.data.as_deref())?;
    let model = model(cfg, &a.model, Some(&data))?;
    let variant: Variant = cfg.pick(a.variant.clone(), "variant", "da-exact".to_string())?.parse()?;
    let seed = cfg.pick(a.seed, "seed", 1)?;
    let config = ChainConfig {
        variant,
        steps: cfg.pick(a.steps, "steps", 2000)?,
        scale: cfg.pick(a.scale, "scale", DEFAULT_SCALE)?,
        seed,
        prior: cfg.prior(a.truncation, a.alpha0, a.eta)?,
        thin: cfg.pick(a.thin, "thin", 1)?,
        moments_n: None,
    };
    let exact = a.exact_likelihood || cfg.pick(None, "exact_likelihood", false)?;
    let out = if exact {
        run_chain(&ExactLikelihood::new(&data, model)?, &config)?
    } else {
        let mut lik = ParticleLikelihood::new(&data, model, cfg.pick(a.particles, "particles", 20)?)?;
        lik.surrogate_particles = cfg.pick(a.surrogate_particles, "surrogate_particles", lik.surrogate_particles)?;
        lik.estimator = estimator(cfg, a.estimator.clone())?;
        run_chain(&lik, &config)?
    };
    Ok(chain_csv(&out, &config.prior, header(argv, Some(seed)), a.no_timing))
}

fn chain_csv(out: &ChainOutput, spec: &PriorSpec, mut text: String, no_timing: bool) -> String {
    let n_moments = out.records[0].moments.len();
    let mut cols = vec!["step".to_string()];
    cols.extend(PriorParams::column_names(spec));
    cols.extend((3..3 + n_moments).map(|k| format!("lambda{k}")));
    cols.extend(["log_estimate", "accepted", "stage1_accepted", "wall_ms"].map(String::from));
    text.push_str(&cols.join(","));
    text.push('\n');
    for r in &out.records {
        let mut row = vec![r.step.to_string()];
        row.extend(r.params.iter().map(|v| v.to_string()));
        row.extend(r.moments.iter().map(|v| v.to_string()));
        row.push(r.log_estimate.to_string());
        row.push(u8::from(r.accepted).to_string());
        row.push(u8::from(r.stage1_accepted).to_string());
        row.push(if no_timing { "0".into() } else { format!("{:.3}", r.wall_ms) });
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let c = &out.counters;
    let wall = if no_timing { 0.0 } else { out.wall_ms };
    writeln!(
        text,
        "# proposals={} stage1_accepted={} accepted={} full_evaluations={} stage1_rate={:.4} stage2_rate={:.4} overall_rate={:.4} wall_ms={wall:.3}",
        c.proposals,
        c.stage1_accepted,
        c.accepted,
        c.full_evaluations,
        c.stage1_rate(),
        c.stage2_rate(),
        c.overall_rate()
    )
    .unwrap();
    text
}

/// Columns `lambda<k>` of a chain CSV, keyed by k.
fn read_chain(path: &Path) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let text = config::read(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, head) = lines.next().ok_or_else(|| CliError::Core(Error::Data(format!("{} is empty", path.display()))))?;
    let cols: Vec<(usize, usize)> = head
        .split(',')
        .enumerate()
        .filter_map(|(i, name)| name.trim().strip_prefix("lambda").and_then(|k| k.parse().ok()).map(|k| (i, k)))
        .collect();
    let mut traces: Vec<(usize, Vec<f64>)> = cols.iter().map(|&(_, k)| (k, Vec::new())).collect();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        for (slot, &(i, _)) in cols.iter().enumerate() {
            let v = fields.get(i).and_then(|f| f.trim().parse::<f64>().ok()).ok_or_else(|| {
                CliError::Core(Error::Data(format!("{}:{}: bad or missing moment column", path.display(), ln + 1)))
            })?;
            traces[slot].1.push(v);
        }
    }
    Ok(traces)
}

/// `3<=0.5,4>=0.3`.
fn parse_constraints(text: &str) -> Result<Vec<MomentConstraint>, CliError> {
    text.split(',')
        .map(|item| {
            let bad = || CliError::Usage(format!("constraint `{item}` is not of the form k<=c or k>=c"));
            let (k, c, upper) = if let Some((k, c)) = item.split_once("<=") {
                (k, c, true)
            } else if let Some((k, c)) = item.split_once(">=") {
                (k, c, false)
            } else {
                return Err(bad());
            };
            let k: usize = k.trim().trim_start_matches("lambda").parse().map_err(|_| bad())?;
            let c: f64 = c.trim().parse().map_err(|_| bad())?;
            Ok(if upper { MomentConstraint::upper(k, c)? } else { MomentConstraint::lower(k, c)? })
        })
        .collect()
}

fn bounds(cfg: &Config, a: &BoundsArgs, argv: &[String]) -> Result<String, CliError> {
    let level = cfg.pick(a.level, "level", 0.95)?;
    let grid = cfg.pick(a.grid, "grid", 1000)?;
    let mut constraints = Vec::new();
    let mut out = header(argv, None);
    let chain = cfg.pick_opt(a.chain.as_ref().map(|p| p.display().to_string()), "chain")?;
    if let Some(chain) = chain {
        let burn = cfg.pick(a.burn_in, "burn_in", 0.0)?;
        if !(0.0..1.0).contains(&burn) {
            return Err(CliError::Usage(format!("--burn-in must lie in [0, 1), got {burn}")));
        }
        let traces = read_chain(Path::new(&chain))?;
        let indices = cfg.pick(a.indices.clone(), "indices", "3".to_string())?;
        let mut selected = Vec::new();
        for t in indices.split(',') {
            let k: usize = t.trim().parse().map_err(|_| CliError::Usage(format!("bad index `{t}`")))?;
            let trace = traces
                .iter()
                .find(|(j, _)| *j == k)
                .ok_or_else(|| CliError::Core(Error::Data(format!("chain has no lambda{k} column"))))?;
            let skip = (burn * trace.1.len() as f64) as usize;
            selected.push((k, &trace.1[skip..]));
        }
        let refs: Vec<(usize, &[f64])> = selected.iter().map(|(k, t)| (*k, *t)).collect();
        constraints.extend(constraints_from_samples(&refs, level)?);
        if let Some((_, t)) = selected.iter().find(|(k, _)| *k == 3) {
            let tol = cfg.pick(a.kingman_tol, "kingman_tol", DEFAULT_KINGMAN_TOL)?;
            let eta = cfg.pick(None, "eta", PriorSpec::default().eta)?;
            writeln!(out, "# kingman_test level={level} tol={tol} result={}", kingman_test(t, level, eta, tol)?).unwrap();
        }
    }
    if let Some(text) = cfg.pick_opt(a.constraints.clone(), "constraints")? {
        constraints.extend(parse_constraints(&text)?);
    }
    let functional = match cfg.pick_opt(a.table.as_ref().map(|p| p.display().to_string()), "table")? {
        Some(path) => tabulated(Path::new(&path))?,
        None => cfg.pick(a.functional.clone(), "functional", "exp".to_string())?.parse::<Functional>()?,
    };
    for c in &constraints {
        writeln!(out, "# constraint {c}").unwrap();
    }
    let (lo, hi) = extremize_both(|x| functional.eval(x), &constraints, grid)?;
    out.push_str("mode,value,max_violation,location,weight\n");
    for (mode, e) in [("min", &lo), ("max", &hi)] {
        write_extremum(&mut out, mode, e);
    }
    Ok(out)
}

fn write_extremum(out: &mut String, mode: &str, e: &Extremum) {
    for &(x, w) in e.witness.atoms() {
        writeln!(out, "{mode},{},{},{x},{w}", e.value, e.max_violation).unwrap();
    }
}

fn tabulated(path: &Path) -> Result<Functional, CliError> {
    let text = config::read(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.chars().next().is_some_and(char::is_alphabetic) {
            continue;
        }
        let bad = || CliError::Core(Error::Data(format!("{}:{}: expected `r,q`", path.display(), i + 1)));
        let (r, q) = line.split_once(',').ok_or_else(bad)?;
        points.push((r.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?));
    }
    Ok(Functional::tabulated(points)?)
}

fn prior(cfg: &Config, a: &PriorArgs, argv: &[String]) -> Result<String, CliError> {
    let spec = cfg.prior(a.truncation, a.alpha0, a.eta)?;
    let seed = cfg.pick(a.seed, "seed", 1)?;
    let draws = cfg.pick(a.draws, "draws", 10_000)?;
    let n = cfg.pick(a.n, "n", 10)?;
    if n < 3 {
        return Err(CliError::Usage("--n must be at least 3".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut out = header(argv, Some(seed));
    let mut cols = vec!["draw".to_string()];
    cols.extend(PriorParams::column_names(&spec));
    cols.extend((3..=n).map(|k| format!("lambda{k}")));
    out.push_str(&cols.join(","));
    out.push('\n');
    for d in 0..draws {
        let p = sample_prior_with(&spec, &mut rng)?;
        let m = p.to_measure(&spec)?.moments_up_to(n);
        let mut row = vec![d.to_string()];
        row.extend(p.to_vec().iter().map(|v| v.to_string()));
        row.extend(m.iter().map(|v| v.to_string()));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}
