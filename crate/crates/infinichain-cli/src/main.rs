//! Batch driver: parses kernel files, runs experiments, writes CSV.
//!
//! Exit codes: 0 success, 1 usage/runtime error, 2 soundness-verdict
//! violation (an applicable bound was exceeded beyond the CI slack).

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use infinichain::bounds::{self, DbarConfig};
use infinichain::cftp::{coupled_sample, CftpConfig};
use infinichain::geom_conc::{chernoff_lower, chernoff_upper, exact_lower_tail, exact_upper_tail};
use infinichain::house_of_cards::{
    bound_exponential, bound_summable_generic, vk_combinatorial, vk_dp, vk_mc, HocSpec,
    NonsummableBound, COMB_MAX_K,
};
use infinichain::kernel::{kernel_from_spec, Kernel};
use infinichain::partition::RangePartition;
use infinichain::stream::UniformStream;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "infinichain",
    version,
    about = "Perfect simulation and d-bar bounds for chains of infinite order"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Kernel specification file (TOML-style, see README)
    #[arg(long)]
    kernel: PathBuf,
    /// Base seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Backward window cap for coalescence searches
    #[arg(long, default_value_t = 1 << 20)]
    window_cap: u64,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Perfect stationary sample, CSV (seed, i, x)
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Window length
        #[arg(long, default_value_t = 1000)]
        n: u64,
    },
    /// One coupled trace of (X, X^(k)), CSV (seed, i, x, xk, range, disagree)
    Couple {
        #[command(flatten)]
        common: CommonArgs,
        /// Approximation order (exactly one)
        #[arg(long)]
        k: usize,
        /// Trace length
        #[arg(long, default_value_t = 1000)]
        n: u64,
        /// Samples for the empirical P^(k) fallback
        #[arg(long, default_value_t = 200_000)]
        pk_samples: u64,
    },
    /// Full d-bar report with verdicts (exit 2 on violation)
    Dbar {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated approximation orders, e.g. 2,4,8
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Coupled replicas
        #[arg(long, default_value_t = 100_000)]
        replicas: u64,
        /// Replicas for coalescence-time statistics
        #[arg(long, default_value_t = 10_000)]
        theta_replicas: u64,
        /// Coupled window length per replica
        #[arg(long, default_value_t = 1)]
        horizon: u64,
        /// Worker threads (0 = all cores); env INFINICHAIN_WORKERS as fallback
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 200_000)]
        pk_samples: u64,
    },
    /// Theoretical bounds only, long-format CSV
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        theta_replicas: u64,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// House-of-cards curves, CSV (k, v_dp, v_comb, v_mc, ci, bound_i, bound_ii, bound_iii)
    Hoc {
        /// Climb sequence: const:0.5 | exp:0.5,0.1 | harmonic:0.2 | list:0.3,0.5
        #[arg(long)]
        r: String,
        #[arg(long, default_value_t = 50)]
        kmax: usize,
        /// Monte Carlo replicas per k (0 = skip MC column)
        #[arg(long, default_value_t = 0)]
        replicas: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Geometric concentration grid, CSV (alpha, n, x, exact, chernoff, ratio)
    Conc {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.5, 0.8])]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![10u64, 100])]
        n: Vec<u64>,
        /// Number of x grid points per (alpha, n)
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Which tail to tabulate
        #[arg(long, default_value = "upper")]
        tail: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick soundness sweep (exit 2 on violation)
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_kernel(path: &PathBuf) -> Result<Arc<Kernel>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading kernel file {}", path.display()))?;
    Ok(Arc::new(kernel_from_spec(&text)?))
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn workers_or_env(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("INFINICHAIN_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}

fn parse_hoc_spec(text: &str) -> Result<HocSpec> {
    let (family, args) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("expected FAMILY:ARGS, got `{text}`"))?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("{e}: `{s}`")))
        .collect::<Result<_>>()?;
    Ok(match family {
        "const" => {
            if nums.len() != 1 {
                bail!("const takes one value");
            }
            HocSpec::constant(nums[0])?
        }
        "exp" => {
            if nums.len() != 2 {
                bail!("exp takes c,rho");
            }
            HocSpec::exponential(nums[0], nums[1])?
        }
        "harmonic" => {
            if nums.len() != 1 {
                bail!("harmonic takes one value");
            }
            HocSpec::harmonic(nums[0])?
        }
        "list" => HocSpec::explicit(nums)?,
        other => bail!("unknown family `{other}`"),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sample { common, n } => {
            let kernel = load_kernel(&common.kernel)?;
            let partition = Arc::new(RangePartition::natural(kernel)?);
            let cfg = CftpConfig {
                window_cap: common.window_cap,
                ..CftpConfig::default()
            };
            let stream = UniformStream::new(common.seed);
            let from = -(n as i64) + 1;
            let w = infinichain::cftp::sample_window(&partition, &stream, from, 0, &cfg)?;
            let mut csv = String::from("seed,i,x\n");
            for (idx, s) in w.iter().enumerate() {
                csv.push_str(&format!("{},{},{s}\n", common.seed, from + idx as i64));
            }
            emit(&common.out, &csv)?;
            Ok(false)
        }
        Command::Couple {
            common,
            k,
            n,
            pk_samples,
        } => {
            let kernel = load_kernel(&common.kernel)?;
            let cfg = CftpConfig {
                window_cap: common.window_cap,
                ..CftpConfig::default()
            };
            let stream = UniformStream::new(common.seed);
            let trace = coupled_sample(kernel, k, &stream, n, pk_samples, &cfg)?;
            emit(&common.out, &trace.to_csv(common.seed))?;
            Ok(false)
        }
        Command::Dbar {
            common,
            k,
            replicas,
            theta_replicas,
            horizon,
            workers,
            pk_samples,
        } => {
            if k.is_empty() {
                bail!("--k needs at least one order");
            }
            let kernel = load_kernel(&common.kernel)?;
            let id = common
                .kernel
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "kernel".into());
            let cfg = DbarConfig {
                n_replicas: replicas,
                horizon,
                theta_replicas,
                seed: common.seed,
                workers: workers_or_env(workers),
                pk_samples,
                cftp: CftpConfig {
                    window_cap: common.window_cap,
                    ..CftpConfig::default()
                },
                local_spec: None,
            };
            let rep = bounds::report(&kernel, &id, &k, &cfg)?;
            emit(&common.out, &rep.to_csv())?;
            Ok(rep.any_violation())
        }
        Command::Bounds {
            common,
            k,
            theta_replicas,
            workers,
        } => {
            if k.is_empty() {
                bail!("--k needs at least one order");
            }
            let kernel = load_kernel(&common.kernel)?;
            let id = common
                .kernel
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "kernel".into());
            let cfg = DbarConfig {
                theta_replicas,
                seed: common.seed,
                workers: workers_or_env(workers),
                cftp: CftpConfig {
                    window_cap: common.window_cap,
                    ..CftpConfig::default()
                },
                ..DbarConfig::default()
            };
            let csv = bounds::theory_csv(&kernel, &id, &k, &cfg)?;
            emit(&common.out, &csv)?;
            Ok(false)
        }
        Command::Hoc {
            r,
            kmax,
            replicas,
            seed,
            out,
        } => {
            let spec = parse_hoc_spec(&r)?;
            let v = vk_dp(&spec, kmax);
            let nb = NonsummableBound::new(&spec).ok();
            let mut csv = String::from("k,v_dp,v_comb,v_mc,ci,bound_i,bound_ii,bound_iii\n");
            #[allow(clippy::needless_range_loop)]
            for k in 0..=kmax {
                let comb = if k <= COMB_MAX_K {
                    vk_combinatorial(&spec, k)
                        .map(|x| x.to_string())
                        .unwrap_or_default()
                } else {
                    String::new()
                };
                let (mc, ci) = if replicas > 0 {
                    let est = vk_mc(&spec, k, replicas, seed ^ k as u64)?;
                    (est.estimate.to_string(), (3.0 * est.sigma).to_string())
                } else {
                    (String::new(), String::new())
                };
                let b1 = nb
                    .as_ref()
                    .filter(|_| k >= 2)
                    .map(|b| b.eval(k).to_string())
                    .unwrap_or_default();
                let b2 = if spec.summable() && k >= 1 {
                    bound_summable_generic(&spec, k).value.to_string()
                } else {
                    String::new()
                };
                let b3 = bound_exponential(&spec, k)
                    .map(|x| x.to_string())
                    .unwrap_or_default();
                csv.push_str(&format!("{k},{},{comb},{mc},{ci},{b1},{b2},{b3}\n", v[k]));
            }
            emit(&out, &csv)?;
            Ok(false)
        }
        Command::Conc {
            alpha,
            n,
            points,
            tail,
            out,
        } => {
            let upper = match tail.as_str() {
                "upper" => true,
                "lower" => false,
                other => bail!("--tail must be upper or lower, got `{other}`"),
            };
            let mut csv = String::from("alpha,n,x,exact,chernoff,ratio\n");
            for &a in &alpha {
                for &nn in &n {
                    for j in 1..=points {
                        let x = j as f64 * (2.0 / a) / points as f64;
                        let mean = nn as f64 / a;
                        let (exact, bound) = if upper {
                            (
                                exact_upper_tail(a, nn, mean + nn as f64 * x),
                                chernoff_upper(a, nn, x),
                            )
                        } else {
                            (
                                exact_lower_tail(a, nn, mean - nn as f64 * x),
                                chernoff_lower(a, nn, x),
                            )
                        };
                        let ratio = if bound > 0.0 { exact / bound } else { f64::NAN };
                        csv.push_str(&format!("{a},{nn},{x},{exact},{bound},{ratio}\n"));
                    }
                }
            }
            emit(&out, &csv)?;
            Ok(false)
        }
        Command::Selftest { seed } => selftest(seed),
    }
}

/// Small soundness sweep covering every bound family; prints one line per
/// check.
fn selftest(seed: u64) -> Result<bool> {
    let mut violated = false;
    let mut check = |name: &str, ok: bool| {
        println!("{}  {name}", if ok { "PASS" } else { "FAIL" });
        violated |= !ok;
    };

    // house of cards: DP vs combinatorial on fuzzed specs
    let master = UniformStream::new(seed);
    let mut hoc_ok = true;
    for rep in 0..10u64 {
        let sub = master.substream(rep);
        let mut r: Vec<f64> = (0..4).map(|i| sub.uniform(i)).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let spec = HocSpec::explicit(r)?;
        let v = vk_dp(&spec, 12);
        for (k, x) in v.iter().enumerate() {
            if (x - vk_combinatorial(&spec, k)?).abs() > 1e-12 {
                hoc_ok = false;
            }
        }
    }
    check(
        "house-of-cards dp == combinatorial (10 fuzzed specs)",
        hoc_ok,
    );

    // concentration: chernoff dominates exact on a small grid
    let mut conc_ok = true;
    for a in [0.3, 0.6] {
        for nn in [5u64, 50] {
            for j in 1..=10 {
                let x = j as f64 * (2.0 / a) / 10.0;
                let mean = nn as f64 / a;
                if exact_upper_tail(a, nn, mean + nn as f64 * x) > chernoff_upper(a, nn, x) + 1e-15
                    || exact_lower_tail(a, nn, mean - nn as f64 * x)
                        > chernoff_lower(a, nn, x) + 1e-15
                {
                    conc_ok = false;
                }
            }
        }
    }
    check("chernoff bounds dominate exact tails (mini grid)", conc_ok);

    // coupled renewal: d-bar estimate within its bounds
    let kernel = Arc::new(Kernel::Renewal(
        infinichain::kernel::RenewalKernel::constant(0.4).unwrap(),
    ));
    let cfg = DbarConfig {
        n_replicas: 20_000,
        theta_replicas: 20_000,
        seed,
        ..DbarConfig::default()
    };
    let rep = bounds::report(&kernel, "renewal_p04", &[2, 4], &cfg)?;
    check("renewal d-bar report verdicts", !rep.any_violation());

    // markov sanity: exact-zero disagreement
    let mk = infinichain::kernel::MarkovKernel::new(2, 1, vec![0.7, 0.3, 0.2, 0.8]).unwrap();
    let trace = coupled_sample(
        Arc::new(Kernel::Markov(mk)),
        1,
        &UniformStream::new(seed),
        100_000,
        0,
        &CftpConfig::default(),
    )?;
    check(
        "markov coupled disagreements == 0",
        trace.disagreements.is_empty(),
    );

    Ok(violated)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("soundness violation: at least one bound exceeded beyond CI");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
