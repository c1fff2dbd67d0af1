mod config;
mod output;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{Format, RunConfig};
use gps_core::acceptance::{self, CRITERIA};
use gps_core::asymptotics::{appendix_a_prediction, boundary_shape_check, conjecture_params, crossover_scan, thm21_prediction, thm22_prediction};
use gps_core::free_energy::{classify_regime, free_energy, tilted_law, GeometryRule};
use gps_core::loop_law::{build_free_end, build_loop_law, FreeEndWeights, LoopLaw, TiltedLaw};
use gps_core::partition::{compute_zc, compute_zf, hitting_prob_exact, write_binary};
use gps_core::path_stats::{empirical_event_probs, event_spec_with_rule, summarize, theoretical_qn, theoretical_tilde_qn, SequenceRule};
use gps_core::sampler::{estimate_hit_naive, estimate_hit_onejump, sample_constrained, sample_free, JumpCap, TiltedSampler};
use gps_core::GpsError;
use output::{num, Table};
use serde_json::json;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "gps", version, about = "Exact and Monte Carlo computations for two-strand pinning with unequal lengths")]
struct Cli {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the pinning strength of the config
    #[arg(long, global = true)]
    h: Option<f64>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write to this file instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "GPS_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct Target {
    #[arg(long = "N")]
    n: Option<u64>,
    #[arg(long = "M")]
    m: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Loop-length weights K(s)
    Law {
        #[arg(long, default_value_t = 20)]
        s_max: u64,
    },
    /// Tilt, critical ratio and free energy
    Fe {
        #[arg(long)]
        gamma: Vec<f64>,
    },
    /// Regime classification of the geometry rule over the N grid
    Regime,
    /// Constrained partition function at (N, M)
    Zc {
        #[command(flatten)]
        target: Target,
        /// Also dump the whole table in binary form
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Free partition function at (N, M)
    Zf {
        #[command(flatten)]
        target: Target,
    },
    /// Exact draws of polymer configurations
    Sample {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        free: bool,
    },
    /// Probability that the tilted renewal hits (N, M)
    Hitprob {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_enum, default_value_t = Method::Exact)]
        method: Method,
        /// Cap ordinary increments at m_N / eps in the one-jump estimator
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Big-loop / unbound-strand / mixed event frequencies
    Events {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        constrained: bool,
        #[arg(long, value_enum, default_value_t = Rule::Log)]
        rule: Rule,
    },
    /// Compare exact results with asymptotic predictions
    Verify {
        #[arg(value_enum)]
        which: Verify,
        /// Multiples of a_c scanned by `conjB`
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 1.0, 2.0, 4.0])]
        a_grid: Vec<f64>,
    },
    /// Run the acceptance criteria
    Accept {
        #[arg(long, default_value = "primary")]
        suite: String,
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Exact,
    Naive,
    Onejump,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Rule {
    Log,
    Geometric,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Verify {
    Thm21,
    Thm22,
    #[value(name = "appA", alias = "appa")]
    AppA,
    #[value(name = "conjB", alias = "conjb")]
    ConjB,
    Boundary,
}

struct Ctx {
    cfg: RunConfig,
    law: LoopLaw,
}

impl Ctx {
    fn tilted(&self) -> Result<TiltedLaw> {
        Ok(tilted_law(&self.law, self.cfg.h)?)
    }

    fn free_ends(&self) -> Result<FreeEndWeights> {
        Ok(build_free_end(&self.cfg.free_ends)?)
    }

    /// `(N, M)` from the flags, falling back to the largest grid size and the geometry rule.
    fn target(&self, t: Target) -> Result<(u64, u64)> {
        let n = t.n.unwrap_or(*self.cfg.n_grid.last().unwrap());
        if n == 0 {
            bail!(GpsError::EmptyTarget(n, t.m.unwrap_or(0)));
        }
        let m = match t.m {
            Some(m) => m,
            None => self.m_for(n)?,
        };
        Ok((n, m))
    }

    fn m_for(&self, n: u64) -> Result<u64> {
        Ok(match self.cfg.geometry {
            GeometryRule::Gamma(g) => (g * n as f64).round() as u64,
            rule => {
                let gc = self.tilted()?.gamma_c;
                (gc * n as f64 + rule.t_n(gc, n as f64)).round() as u64
            }
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = e.chain().any(|c| matches!(c.downcast_ref::<GpsError>(), Some(GpsError::SpecInfeasible(_))));
            ExitCode::from(if infeasible { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(h) = cli.h {
        cfg.h = h;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.samples {
        cfg.samples = s;
    }
    let format = cli.format.or(cfg.output.as_ref().map(|o| o.format)).unwrap_or(Format::Csv);
    let out_path = cli.out.clone().or(cfg.output.as_ref().and_then(|o| o.path.clone()));
    let law = build_loop_law(&cfg.kernel.spec())?;
    let ctx = Ctx { cfg, law };
    let (table, ok) = dispatch(&ctx, &cli.cmd)?;
    match out_path {
        Some(p) => {
            let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = std::io::BufWriter::new(f);
            table.write(format, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            table.write(format, &mut lock)?;
        }
    }
    Ok(ok)
}

fn dispatch(ctx: &Ctx, cmd: &Command) -> Result<(Table, bool)> {
    let cfg = &ctx.cfg;
    let h = cfg.h;
    match cmd {
        Command::Law { s_max } => {
            let mut t = Table::new(&["s", "k"]);
            for s in 2..=*s_max {
                t.push(vec![json!(s), num(ctx.law.k(s))]);
            }
            Ok((t, true))
        }
        Command::Fe { gamma } => {
            let tl = ctx.tilted()?;
            let mut t = Table::new(&[
                "h", "nh", "gamma_c", "mu1", "mu2", "sigma1", "sigma2", "rho", "gamma", "f", "lambda1", "lambda2", "regime",
            ]);
            let head = vec![num(h), num(tl.nh), num(tl.gamma_c), num(tl.mu1), num(tl.mu2), num(tl.sigma1), num(tl.sigma2), num(tl.rho)];
            let gammas: Vec<f64> = match (gamma.is_empty(), cfg.geometry) {
                (false, _) => gamma.clone(),
                (true, GeometryRule::Gamma(g)) => vec![g],
                _ => Vec::new(),
            };
            if gammas.is_empty() {
                let mut row = head.clone();
                row.extend([json!(null), json!(null), json!(null), json!(null), json!(null)]);
                t.push(row);
            }
            for g in gammas {
                let f = free_energy(&ctx.law, h, g)?;
                let mut row = head.clone();
                row.extend([num(g), num(f.value), num(f.lambda1), num(f.lambda2), serde_json::to_value(f.regime)?]);
                t.push(row);
            }
            Ok((t, true))
        }
        Command::Regime => {
            let r = classify_regime(&ctx.law, h, cfg.geometry, &cfg.n_grid, cfg.c0)?;
            let mut t = Table::new(&[
                "n", "t_n", "a_n", "ratio", "gauss_margin", "window", "regime", "bigjump1_ok", "bigjump2_ok",
            ]);
            for row in &r.rows {
                t.push(vec![
                    json!(row.n),
                    num(row.t_n),
                    num(row.a_n),
                    num(row.ratio),
                    row.gauss_margin.map_or(json!(null), num),
                    row.window.map_or(json!(null), num),
                    serde_json::to_value(r.regime)?,
                    json!(r.bigjump1_ok),
                    json!(r.bigjump2_ok),
                ]);
            }
            Ok((t, true))
        }
        Command::Zc { target, dump } => {
            let (n, m) = ctx.target(*target)?;
            let table = compute_zc(&ctx.law, h, n, m, None)?;
            if let Some(p) = dump {
                let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
                write_binary(&table, std::io::BufWriter::new(f))?;
            }
            let mut t = Table::new(&["n", "m", "h", "log_zc"]);
            t.push(vec![json!(n), json!(m), num(h), num(table.ln(n, m))]);
            Ok((t, true))
        }
        Command::Zf { target } => {
            let (n, m) = ctx.target(*target)?;
            let table = compute_zc(&ctx.law, h, n, m, None)?;
            let z = compute_zf(&table, &ctx.free_ends()?);
            let mut t = Table::new(&["n", "m", "h", "log_zf", "log_zc"]);
            t.push(vec![json!(n), json!(m), num(h), num(z.ln()), num(table.ln(n, m))]);
            Ok((t, true))
        }
        Command::Sample { target, free } => {
            let (n, m) = ctx.target(*target)?;
            let table = compute_zc(&ctx.law, h, n, m, None)?;
            let count = cfg.samples as usize;
            let paths = if *free {
                sample_free(&table, &ctx.free_ends()?, count, cfg.seed)?
            } else {
                sample_constrained(&table, count, cfg.seed)?
            };
            let mut t = Table::new(&["index", "kappa", "m1", "m2", "v1", "v2", "loops"]);
            for (i, p) in paths.iter().enumerate() {
                let s = summarize(p);
                let loops: Vec<String> = p.loops.iter().map(|(l, t)| format!("{l}:{t}")).collect();
                t.push(vec![json!(i), json!(s.kappa), json!(s.m1), json!(s.m2), json!(s.v1), json!(s.v2), json!(loops.join(" "))]);
            }
            Ok((t, true))
        }
        Command::Hitprob { target, method, eps } => {
            let (n, m) = ctx.target(*target)?;
            let tl = ctx.tilted()?;
            let mut t = Table::new(&["method", "n", "m", "p", "stderr"]);
            let all = matches!(method, Method::All);
            if all || matches!(method, Method::Exact) {
                let table = compute_zc(&ctx.law, h, n, m, None)?;
                t.push(vec![json!("exact"), json!(n), json!(m), num(hitting_prob_exact(&table, &tl)?), num(0.0)]);
            }
            if all || matches!(method, Method::Naive | Method::Onejump) {
                let sampler = TiltedSampler::new(&tl)?;
                if all || matches!(method, Method::Naive) {
                    let e = estimate_hit_naive(&sampler, n, m, cfg.samples, cfg.seed)?;
                    t.push(vec![json!("naive"), json!(n), json!(m), num(e.p_hat), num(e.stderr)]);
                }
                if all || matches!(method, Method::Onejump) {
                    let cap = eps.map_or(JumpCap::Unrestricted, JumpCap::FromScale);
                    // below the critical line the one-jump estimator is undefined; `all` just omits it
                    match estimate_hit_onejump(&sampler, n, m, cfg.samples, cfg.seed, cap) {
                        Ok(e) => t.push(vec![json!("onejump"), json!(n), json!(m), num(e.p_hat), num(e.stderr)]),
                        Err(GpsError::OutOfDomain(_)) if all => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            Ok((t, true))
        }
        Command::Events { target, constrained, rule } => {
            let (n, m) = ctx.target(*target)?;
            let tl = ctx.tilted()?;
            let rule = match rule {
                Rule::Log => SequenceRule::LogMultiplier,
                Rule::Geometric => SequenceRule::GeometricMean,
            };
            let spec = event_spec_with_rule(&tl, n, m, rule)?;
            let table = compute_zc(&ctx.law, h, n, m, None)?;
            let fw = ctx.free_ends()?;
            let paths = if *constrained {
                sample_constrained(&table, cfg.samples as usize, cfg.seed)?
            } else {
                sample_free(&table, &fw, cfg.samples as usize, cfg.seed)?
            };
            let sums: Vec<_> = paths.iter().map(summarize).collect();
            let p = empirical_event_probs(&sums, &spec)?;
            let mut t = Table::new(&["event", "p", "lo", "hi", "predicted"]);
            let pred = if *constrained {
                None
            } else {
                theoretical_qn(&fw, &tl, n, spec.t_n as f64)
                    .or_else(|_| theoretical_tilde_qn(&fw, &tl, n, spec.t_n as f64))
                    .ok()
            };
            for (name, pr, pv) in [
                ("bl", &p.p_bl, pred.map(|q| q.p_first)),
                ("bl0", &p.p_bl0, None),
                ("us", &p.p_us, pred.map(|q| q.p_us)),
                ("mixed", &p.p_mixed, None),
                ("other", &p.p_other, None),
            ] {
                t.push(vec![json!(name), num(pr.p), num(pr.lo), num(pr.hi), pv.map_or(json!(null), num)]);
            }
            Ok((t, true))
        }
        Command::Verify { which, a_grid } => verify(ctx, *which, a_grid).map(|t| (t, true)),
        Command::Accept { suite, only } => {
            if suite != "primary" {
                bail!("unknown suite {suite:?}; only \"primary\" exists");
            }
            let ids: Vec<u32> = if only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { only.clone() };
            let mut t = Table::new(&["id", "name", "passed", "seconds", "detail"]);
            let mut all = true;
            for id in ids {
                let o = acceptance::run(id)?;
                eprintln!("{o}");
                all &= o.passed;
                t.push(vec![json!(o.id), json!(o.name), json!(o.passed), num(o.seconds), json!(o.detail)]);
            }
            Ok((t, all))
        }
    }
}

fn verify(ctx: &Ctx, which: Verify, a_grid: &[f64]) -> Result<Table> {
    let h = ctx.cfg.h;
    let tl = ctx.tilted()?;
    let grid = &ctx.cfg.n_grid;
    match which {
        Verify::Thm21 => {
            let mut t = Table::new(&["n", "m", "t_n", "exact", "predicted", "ratio"]);
            for &n in grid {
                let m = ctx.m_for(n)?;
                let table = compute_zc(&ctx.law, h, n, m, None)?;
                let exact = hitting_prob_exact(&table, &tl)?;
                let pred = thm21_prediction(&tl, n, m)?;
                t.push(vec![json!(n), json!(m), num(m as f64 - tl.gamma_c * n as f64), num(exact), num(pred), num(exact / pred)]);
            }
            Ok(t)
        }
        Verify::Thm22 | Verify::AppA => {
            let fw = ctx.free_ends()?;
            let mut t = Table::new(&["n", "m", "t_n", "exact", "first_term", "us_term", "ratio"]);
            for &n in grid {
                let m = ctx.m_for(n)?;
                let table = compute_zc(&ctx.law, h, n, m, None)?;
                let exact = (compute_zf(&table, &fw).ln() - n as f64 * tl.nh).exp();
                let terms = match which {
                    Verify::Thm22 => thm22_prediction(&fw, &tl, n, m)?,
                    _ => appendix_a_prediction(&fw, &tl, n, m)?,
                };
                let pred = terms.first + terms.us_term;
                t.push(vec![
                    json!(n),
                    json!(m),
                    num(m as f64 - tl.gamma_c * n as f64),
                    num(exact),
                    num(terms.first),
                    num(terms.us_term),
                    num(exact / pred),
                ]);
            }
            Ok(t)
        }
        Verify::ConjB => {
            let a_c = conjecture_params(&tl)?.a_c;
            let n = *grid.last().unwrap();
            let scaled: Vec<f64> = a_grid.iter().map(|k| k * a_c).collect();
            let scan = crossover_scan(&ctx.law, &tl, n, &scaled, 1)?;
            let mut t = Table::new(&["n", "a", "t_n", "m", "exact", "bigjump", "gaussian", "bigjump_dominates", "a_c", "c1"]);
            for r in &scan.rows {
                t.push(vec![
                    json!(n),
                    num(r.a),
                    num(r.t),
                    json!(r.m),
                    num(r.exact),
                    num(r.bigjump),
                    num(r.gaussian),
                    json!(r.bigjump_dominates),
                    num(a_c),
                    scan.params.c1.map_or(json!(null), num),
                ]);
            }
            Ok(t)
        }
        Verify::Boundary => {
            let rows = boundary_shape_check(&ctx.law, &tl, grid)?;
            let mut t = Table::new(&["n", "a_n", "m_floor", "m_ceil", "scaled_floor", "scaled_ceil"]);
            for r in rows {
                t.push(vec![json!(r.n), num(r.a_n), json!(r.m_floor), json!(r.m_ceil), num(r.scaled_floor), num(r.scaled_ceil)]);
            }
            Ok(t)
        }
    }
}
