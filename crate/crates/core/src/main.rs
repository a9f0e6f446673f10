use std::error::Error;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use d2dcache::harness::gap::gap_histogram;
use d2dcache::harness::sweep::{
    aggregate, group_scenario, read_rows, run_sweep, verify_rows, write_csv, RunStatus, SweepConfig, SweepMethod,
    RESULTS_CSV_VERSION,
};
use d2dcache::harness::{solve_scenario, RunManifest};
use d2dcache::milp::branch::BranchOptions;
use d2dcache::milp::{Method, MilpOptions};
use d2dcache::model::{Scenario, SearchParams};
use d2dcache::scenario::{generate, GeneratorConfig};

type CliResult<T> = Result<T, Box<dyn Error>>;

const EXIT_INFEASIBLE: u8 = 2;

#[derive(Parser)]
#[command(name = "d2dcache", version, about = "Delay-optimal segment caching for D2D networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic scenario.
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bisect on the bound, refine with ESA, save the placement.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value = "exact")]
        method: Method,
        /// Overrides the scenario's NLR cap.
        #[arg(long)]
        nlr_limit: Option<f64>,
        /// Search ceiling; defaults to the scenario's delay limit.
        #[arg(long)]
        t_max: Option<f64>,
        /// Seed for relaxation rounding and the sampling check.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo samples for an independent check of the final NLR (0 skips it).
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value = "placement.json")]
        placement: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Histogram of exact minus lower-bound NLR over every feasible placement.
    GapHist {
        /// Scenario file; generated from the flags when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        window: f64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// CSV destination; a manifest is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delay of every method across cache sizes and seeds.
    SweepC {
        #[command(flatten)]
        gen: GenArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
        caches: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "lower-bound,esa-ilp,esa-rra,popularity,random")]
        methods: Vec<SweepMethod>,
        /// Number of consecutive seeds, starting at --seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value = "sweep-c")]
        experiment: String,
        /// Worker threads (0 uses all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute every row of a sweep and compare.
    Verify {
        /// Manifest written by sweep-c.
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct GenArgs {
    /// Generator config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    files: Option<usize>,
    #[arg(long)]
    cache: Option<u32>,
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    gamma_shape: Option<f64>,
    #[arg(long)]
    gamma_scale: Option<f64>,
    #[arg(long = "nlr-limit")]
    nlr_limit: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl GenArgs {
    fn config(&self) -> CliResult<GeneratorConfig> {
        let mut c = match &self.config {
            Some(path) => serde_json::from_str(&read(path)?)?,
            None => GeneratorConfig::default(),
        };
        c.num_users = self.users.unwrap_or(c.num_users);
        c.num_files = self.files.unwrap_or(c.num_files);
        c.cache_capacity = self.cache.unwrap_or(c.cache_capacity);
        c.contact_budget = self.budget.unwrap_or(c.contact_budget);
        c.zipf_shape = self.zipf.unwrap_or(c.zipf_shape);
        c.gamma_shape = self.gamma_shape.unwrap_or(c.gamma_shape);
        c.gamma_scale = self.gamma_scale.unwrap_or(c.gamma_scale);
        c.nlr_limit = self.nlr_limit.unwrap_or(c.nlr_limit);
        c.delay_limit = self.t_max.unwrap_or(c.delay_limit);
        c.seed = self.seed.unwrap_or(c.seed);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 0.0)]
    t_min: f64,
    /// ESA step.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Search tolerance.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Branch-and-bound node budget per optimization.
    #[arg(long, default_value_t = BranchOptions::default().node_limit)]
    node_limit: usize,
}

impl SearchArgs {
    fn params(&self, t_max: f64) -> CliResult<SearchParams> {
        Ok(SearchParams::new(self.t_min, t_max, self.eta, self.epsilon)?)
    }

    fn milp(&self) -> MilpOptions {
        MilpOptions { branch: BranchOptions { node_limit: self.node_limit, ..Default::default() } }
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

fn scenario_path(dir: &Path, cache: u32, seed: u64) -> PathBuf {
    dir.join("scenarios").join(format!("c{cache}-s{seed}.json"))
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Generate { gen, out } => {
            let text = generate(&gen.config()?)?.to_text();
            match out {
                Some(path) => write(&path, text)?,
                None => io::stdout().write_all(text.as_bytes())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve { scenario, search, method, nlr_limit, t_max, seed, samples, placement, report } => {
            let mut s = Scenario::from_text(&read(&scenario)?)?;
            if let Some(limit) = nlr_limit {
                s = s.with_nlr_limit(limit)?;
            }
            let params = search.params(t_max.unwrap_or(s.delay_limit()))?;
            let (summary, refined) = solve_scenario(&s, &params, method, seed, search.milp(), samples)?;
            if let Some(outcome) = &refined {
                write(&placement, outcome.placement.to_text())?;
            }
            let text = json(&summary);
            match report {
                Some(path) => write(&path, text)?,
                None => io::stdout().write_all(text.as_bytes())?,
            }
            Ok(if summary.feasible { ExitCode::SUCCESS } else { ExitCode::from(EXIT_INFEASIBLE) })
        }
        Command::GapHist { scenario, gen, window, bins, out } => {
            let (s, source) = match &scenario {
                Some(path) => (Scenario::from_text(&read(path)?)?, serde_json::json!({ "scenario": path })),
                None => {
                    let config = gen.config()?;
                    (generate(&config)?, serde_json::json!({ "generator": config }))
                }
            };
            let h = gap_histogram(&s, window, bins)?;
            let summary = format!(
                "placements {} zero-gap {} ({:.4}) min {} max {}\n",
                h.placements,
                h.zero_gap,
                h.zero_fraction(),
                h.min_gap,
                h.max_gap
            );
            match &out {
                Some(path) => {
                    let mut buf = Vec::new();
                    h.write_csv(&mut buf)?;
                    write(path, buf)?;
                    let config = serde_json::json!({
                        "source": source,
                        "window": window,
                        "bins": bins,
                        "placements": h.placements,
                        "zero_gap": h.zero_gap,
                        "min_gap": h.min_gap,
                        "max_gap": h.max_gap,
                    });
                    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    let manifest = RunManifest::new(&command_line(), config, vec![gen.seed.unwrap_or(0)], vec![name]);
                    write(&path.with_extension("manifest.json"), json(&manifest))?;
                    print!("{summary}");
                }
                None => {
                    h.write_csv(io::stdout())?;
                    eprint!("{summary}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepC { gen, search, caches, methods, seeds, experiment, jobs, out } => {
            let generator = gen.config()?;
            let first = generator.seed;
            let config = SweepConfig {
                experiment,
                params: search.params(generator.delay_limit)?,
                generator,
                caches,
                seeds: (first..first + seeds).collect(),
                methods,
                node_limit: search.node_limit,
            };
            for (c, s) in config.groups() {
                write(&scenario_path(&out, c, s), group_scenario(&config, c, s)?.to_text())?;
            }
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
            let rows = pool.install(|| run_sweep(&config))?;
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf)?;
            write(&out.join("results.csv"), buf)?;
            let mut buf = Vec::new();
            write_csv(&aggregate(&config, &rows), &mut buf)?;
            write(&out.join("aggregate.csv"), buf)?;
            let mut value = serde_json::to_value(&config)?;
            value["results_csv_version"] = RESULTS_CSV_VERSION.into();
            let manifest = RunManifest::new(
                &command_line(),
                value,
                config.seeds.clone(),
                vec!["results.csv".into(), "aggregate.csv".into()],
            );
            write(&out.join("manifest.json"), json(&manifest))?;
            let failed = rows.iter().filter(|r| r.status == RunStatus::Error).count();
            println!("{} rows written to {} ({failed} errors)", rows.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { manifest } => {
            let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let m: RunManifest = serde_json::from_str(&read(&manifest)?)?;
            let mut value = m.config.clone();
            let version = value
                .as_object_mut()
                .and_then(|o| o.remove("results_csv_version"))
                .and_then(|v| v.as_u64());
            if version != Some(u64::from(RESULTS_CSV_VERSION)) {
                return Err(format!("results format {version:?} is not {RESULTS_CSV_VERSION}").into());
            }
            let config: SweepConfig = serde_json::from_value(value)?;
            let results = m.outputs.first().ok_or("manifest lists no outputs")?;
            let rows = read_rows(read(&dir.join(results))?.as_bytes())?;
            let load = |c: u32, s: u64| -> Result<Scenario, String> {
                let path = scenario_path(&dir, c, s);
                let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                Scenario::from_text(&text).map_err(|e| format!("{}: {e}", path.display()))
            };
            let bad = verify_rows(&config, &rows, load)?;
            for m in &bad {
                println!("mismatch: {:?}\n  rerun:  {:?}", m.stored.golden(), m.recomputed.as_ref().map(|r| r.golden()));
            }
            println!("{} of {} rows reproduced", rows.len() - bad.len(), rows.len());
            Ok(if bad.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
