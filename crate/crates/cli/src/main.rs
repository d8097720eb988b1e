use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pesbl_core::bmu::{self, PosteriorSummary};
use pesbl_core::config::{DatasetEntry, LearnResult, Manifest, ModelSummary, Report, RunConfig};
use pesbl_core::discover::learn;
use pesbl_core::dynamics::{add_noise, simulate, PdeModel, System};
use pesbl_core::hbi::run_population;
use pesbl_core::propagate::{self, extend_time};
use pesbl_core::{verify, Error, Field};

#[derive(Parser)]
#[command(
    name = "pesbl",
    version,
    about = "Sparse Bayesian PDE discovery with uncertainty updates"
)]
struct Cli {
    /// Run configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate clean and noisy datasets (or a population) of the configured system.
    Simulate,
    /// Learn a sparse equation from a dataset.
    Learn { dataset: PathBuf },
    /// Update the coefficients of a learned model against a dataset.
    Bmu {
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Push posterior samples through the solver and summarize a section.
    Propagate {
        dataset: PathBuf,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Compare two posteriors coefficient by coefficient.
    Diagnose {
        reference: PathBuf,
        current: PathBuf,
    },
    /// Hierarchical inference over the datasets of a manifest.
    Hbi {
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the acceptance checks.
    Verify {
        /// Criterion numbers to run; all when empty.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

enum Failure {
    Core(Error),
    NotConverged(String),
    Verify(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
        Err(Failure::NotConverged(what)) => {
            eprintln!("warning: {what} did not converge (Gelman-Rubin >= 1.1)");
            ExitCode::from(4)
        }
        Err(Failure::Verify(n)) => {
            eprintln!("{n} acceptance check(s) failed");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    let cli_seed = cli.seed;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let cfg = cfg.resolved()?;
    if !matches!(cli.command, Command::Verify { .. }) {
        fs::create_dir_all(&cfg.out).map_err(|e| {
            Error::Config(format!(
                "cannot create output directory {}: {e}",
                cfg.out.display()
            ))
        })?;
    }
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Learn { dataset } => cmd_learn(&cfg, &dataset),
        Command::Bmu { dataset, model } => cmd_bmu(&cfg, &dataset, &model),
        Command::Propagate {
            dataset,
            posterior,
            trace,
        } => cmd_propagate(&cfg, &dataset, &posterior, &trace),
        Command::Diagnose { reference, current } => cmd_diagnose(&cfg, &reference, &current),
        Command::Hbi { manifest, model } => cmd_hbi(&cfg, &manifest, &model),
        Command::Verify { only } => cmd_verify(cli_seed, &only),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_simulate(cfg: &RunConfig) -> Outcome {
    let scenario = cfg.scenario()?;
    let mut datasets = Vec::new();
    if cfg.population.size > 0 {
        for i in 0..cfg.population.size {
            let (parameters, noise, seed) = cfg.population.draw(cfg.seed, i)?;
            let clean: Field = simulate(cfg.system, &parameters, &scenario.grid, &scenario.solver)?;
            let file = format!("population_{i:02}.txt");
            add_noise(&clean, noise, seed)?.save(&cfg.out.join(&file))?;
            datasets.push(DatasetEntry {
                file,
                noise,
                seed,
                parameters,
            });
        }
    } else {
        let clean = scenario.clean()?;
        clean.save(&cfg.out.join("clean.txt"))?;
        datasets.push(DatasetEntry {
            file: "clean.txt".into(),
            noise: 0.0,
            seed: 0,
            parameters: scenario.parameters.clone(),
        });
        for (k, &level) in cfg.noise.iter().enumerate() {
            let seed = cfg.seed.wrapping_add(k as u64);
            let file = format!("noisy_{level:.2}.txt");
            add_noise(&clean, level, seed)?.save(&cfg.out.join(&file))?;
            datasets.push(DatasetEntry {
                file,
                noise: level,
                seed,
                parameters: scenario.parameters.clone(),
            });
        }
    }
    let manifest = Manifest {
        system: cfg.system,
        datasets,
    };
    manifest.save(&cfg.out.join("manifest.toml"))?;
    println!(
        "wrote {} dataset(s) to {}",
        manifest.datasets.len(),
        cfg.out.display()
    );
    Ok(())
}

fn cmd_learn(cfg: &RunConfig, dataset: &Path) -> Outcome {
    let field = Field::load(dataset)?;
    let prepare = cfg.prepare.as_ref().expect("resolved");
    let (model, _) = learn(&field, prepare, &cfg.pesbl)?;
    let summary = ModelSummary::of(&model);
    let mut trace = create(&cfg.out.join("ll_trace.csv"))?;
    use std::io::Write;
    writeln!(trace, "move,log_likelihood").map_err(Error::from)?;
    for (k, ll) in summary.trace.iter().enumerate() {
        writeln!(trace, "{k},{ll:e}").map_err(Error::from)?;
    }
    trace.flush().map_err(Error::from)?;
    let result = LearnResult::new(summary, cfg.system);
    for (t, m) in result.model.terms.iter().zip(&result.model.mean) {
        println!("{t}: {m:.6e}");
    }
    if result.matches_reference == Some(false) {
        log::warn!(
            "learned terms {:?} differ from the reference {:?}",
            result.model.terms,
            result.reference_terms.as_deref().unwrap_or_default()
        );
    }
    Report::new("learn", cfg, result)
        .input(dataset)?
        .save(&cfg.out.join("model.toml"))?;
    Ok(())
}

fn cmd_bmu(cfg: &RunConfig, dataset: &Path, model: &Path) -> Outcome {
    let raw = Field::load(dataset)?;
    let learned = Report::<LearnResult>::load(model)?.result.model;
    let simulator = bmu::PdeSimulator::new(learned.form()?, &raw, &cfg.bmu.evidence)?;
    let posterior = bmu::run(&simulator, &learned.prior()?, &cfg.bmu)?;
    posterior.write_trace_csv(create(&cfg.out.join("bmu_trace.csv"))?)?;
    let s = &posterior.summary;
    for i in 0..s.terms.len() {
        println!(
            "{}: {:.6e} ± {:.2e} (R = {:.3})",
            s.terms[i], s.mean[i], s.std[i], s.gelman_rubin[i]
        );
    }
    let converged = s.converged;
    Report::new("bmu", cfg, posterior.summary)
        .input(dataset)?
        .input(model)?
        .save(&cfg.out.join("posterior.toml"))?;
    if !converged {
        return Err(Failure::NotConverged("coefficient update".into()));
    }
    Ok(())
}

fn solvable(terms: &[String], mean: &[f64]) -> Result<PdeModel, Error> {
    let pairs: Vec<(&str, f64)> = terms
        .iter()
        .map(String::as_str)
        .zip(mean.iter().copied())
        .collect();
    PdeModel::from_names(&pairs, System::Generic)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EnvelopeSummary {
    section: propagate::Section,
    draws: usize,
    dropped: usize,
    flagged: bool,
    coverage: Option<f64>,
    max_std: f64,
}

fn cmd_propagate(cfg: &RunConfig, dataset: &Path, posterior: &Path, trace: &Path) -> Outcome {
    let raw = Field::load(dataset)?;
    let summary = Report::<PosteriorSummary>::load(posterior)?.result;
    let file = File::open(trace).map_err(|_| Error::MissingInput(trace.display().to_string()))?;
    let (terms, rows) = bmu::read_trace_csv(BufReader::new(file))?;
    if terms != summary.terms {
        return Err(Error::TermMismatch(terms).into());
    }
    let section = cfg
        .propagate
        .section
        .ok_or_else(|| Error::Config("propagate.section must be set for generic systems".into()))?;
    let simulator = bmu::PdeSimulator::new(
        solvable(&summary.terms, &summary.mean)?,
        &raw,
        &cfg.bmu.evidence,
    )?;
    let grid = extend_time(&simulator.evidence().grid, section.end_time())?;
    let truth = if cfg.system == System::Generic {
        None
    } else {
        Some(cfg.scenario()?.extended_evidence(section.end_time())?)
    };
    let draws = bmu::spread_draws(&rows, cfg.propagate.draws);
    let envelope = propagate::propagate(
        |c| simulator.solve_on(c, &grid),
        &draws,
        section,
        truth.as_ref(),
        &cfg.propagate.config(),
    )?;
    envelope.write_csv(create(&cfg.out.join("envelope.csv"))?)?;
    let result = EnvelopeSummary {
        section,
        draws: draws.len(),
        dropped: envelope.dropped,
        flagged: envelope.flagged,
        coverage: envelope.coverage(),
        max_std: envelope.std.iter().copied().fold(0.0, f64::max),
    };
    if let Some(c) = result.coverage {
        println!("coverage within 3 std: {:.1}%", 100.0 * c);
    }
    Report::new("propagate", cfg, result)
        .input(dataset)?
        .input(posterior)?
        .input(trace)?
        .save(&cfg.out.join("envelope.toml"))?;
    Ok(())
}

fn cmd_diagnose(cfg: &RunConfig, reference: &Path, current: &Path) -> Outcome {
    let a = Report::<PosteriorSummary>::load(reference)?.result;
    let b = Report::<PosteriorSummary>::load(current)?.result;
    let report = propagate::diagnose(&a, &b, cfg.diagnose.threshold)?;
    for s in &report.shifts {
        println!(
            "{}: shift {:.4e} ± {:.2e}, P(|shift| > {}) = {:.3}",
            s.term,
            s.mean,
            s.variance.sqrt(),
            report.threshold,
            s.exceedance
        );
    }
    Report::new("diagnose", cfg, report)
        .input(reference)?
        .input(current)?
        .save(&cfg.out.join("shift.toml"))?;
    Ok(())
}

fn cmd_hbi(cfg: &RunConfig, manifest_path: &Path, model: &Path) -> Outcome {
    let manifest = Manifest::load(manifest_path)?;
    let paths = manifest.paths(manifest_path);
    let datasets = paths
        .iter()
        .map(|p| Field::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let learned = Report::<LearnResult>::load(model)?.result.model;
    let posterior = run_population(&datasets, &learned.form()?, &learned.prior()?, &cfg.hbi)?;
    let s = posterior.summary;
    for (i, t) in s.terms.iter().enumerate() {
        println!(
            "{t}: hypermean {:.6e}, hyper-std {:.3e}",
            s.hyper_mean[i].mean, s.hyper_std[i].mean
        );
    }
    for (k, (test, path)) in s.tests.iter().zip(&paths).enumerate() {
        Report::new("hbi-test", cfg, test.clone())
            .input(path)?
            .save(&cfg.out.join(format!("test_{k:02}.toml")))?;
    }
    let converged = s.converged;
    let mut report = Report::new("hbi", cfg, s)
        .input(manifest_path)?
        .input(model)?;
    for p in &paths {
        report = report.input(p)?;
    }
    report.save(&cfg.out.join("hbi.toml"))?;
    if !converged {
        return Err(Failure::NotConverged("hierarchical inference".into()));
    }
    Ok(())
}

fn cmd_verify(seed: Option<u64>, only: &[usize]) -> Outcome {
    if let Some(id) = only
        .iter()
        .find(|&&id| !verify::CRITERIA.iter().any(|c| c.0 == id))
    {
        return Err(Error::Config(format!("no acceptance criterion {id}")).into());
    }
    let verifier = seed.map_or_else(verify::Verifier::default, verify::Verifier::new);
    let mut failed = 0;
    for &(id, title) in verify::CRITERIA {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let outcome = verifier.check(id)?;
        println!(
            "criterion {id:>2} {} {title} ({:.0} s)",
            if outcome.passed() { "PASS" } else { "FAIL" },
            outcome.seconds
        );
        for c in &outcome.checks {
            println!(
                "    [{}] {}: {}",
                if c.passed { "ok" } else { "x" },
                c.name,
                c.detail
            );
        }
        failed += usize::from(!outcome.passed());
    }
    if failed > 0 {
        return Err(Failure::Verify(failed));
    }
    Ok(())
}
