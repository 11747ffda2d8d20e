//! Batch entry point: one JSON experiment config, several subcommands,
//! deterministic seeding, CSV/JSON outputs.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};

use gmrf_sampler::acceptance;
use gmrf_sampler::config::ExperimentConfig;
use gmrf_sampler::coupler::{FlatCoupler, StratifiedCoupler};
use gmrf_sampler::exec::{replica_seed, replicate};
use gmrf_sampler::gauss;
use gmrf_sampler::marks::MarkStore;
use gmrf_sampler::output;
use gmrf_sampler::particle::{self, Spin};
use gmrf_sampler::sampler::{
    sample_iid_gaussian, CodingReport, FieldSample, GaussianRun, GaussianSampler, TruncatedSampler,
};
use gmrf_sampler::schedule;
use gmrf_sampler::stats;
use gmrf_sampler::NeighborhoodSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Cmd {
    /// Print the coupling probabilities and the high-noise gate comparison.
    Gamma,
    /// Run the schedule hypothesis checkers and print the pass matrix.
    Check,
    /// Draw field samples; writes samples.csv/.json and reports.csv.
    Sample,
    /// Coding-radius experiment; writes reports and the tail curve.
    Radius,
    /// Duality Monte Carlo checks; writes duality.json.
    Duality,
    /// Depth-truncated approximation experiment; writes approx.csv/.json.
    Approx,
    /// Run the acceptance suite; writes validate.json.
    Validate,
}

#[derive(Parser, Debug)]
#[command(
    name = "gmrf",
    about = "Perfect sampling of Gaussian Markov random fields on Z^d"
)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    cmd: Cmd,
    /// Override the config's replica count.
    #[arg(long)]
    replicas: Option<u32>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the per-query mark budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Override the dryness certificate target.
    #[arg(long)]
    delta_fail: Option<f64>,
    /// Override the dependence range for `approx`.
    #[arg(long)]
    l: Option<u32>,
    /// First replica index of this invocation (for resumable ranges).
    #[arg(long, default_value_t = 0)]
    from: u32,
    /// Replicas in this invocation (default: the configured count).
    #[arg(long)]
    count: Option<u32>,
    /// Dump the first replica's memoized mark trace to this CSV.
    #[arg(long)]
    dump_marks: Option<PathBuf>,
    /// Dump the first duality trial's event log (time, site, u) to this CSV.
    #[arg(long)]
    dump_events: Option<PathBuf>,
    /// Restrict `validate` to criteria whose id starts with this string.
    #[arg(long)]
    only: Option<String>,
}

fn main() {
    let args = Args::parse();
    if let Err(e) = run(args) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(args: Args) -> anyhow::Result<()> {
    if let Ok(workers) = std::env::var("GMRF_WORKERS") {
        let n: usize = workers.parse().context("GMRF_WORKERS must be an integer")?;
        init_worker_pool(n);
    }
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(r) = args.replicas {
        cfg.replicas = r;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(d) = args.delta_fail {
        cfg.delta_fail = d;
    }
    if let Some(l) = args.l {
        cfg.l = l;
    }
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;

    match args.cmd {
        Cmd::Gamma => cmd_gamma(&cfg),
        Cmd::Check => cmd_check(&cfg),
        Cmd::Sample => cmd_sample(&cfg, &args, &out_dir),
        Cmd::Radius => cmd_radius(&cfg, &args, &out_dir),
        Cmd::Duality => cmd_duality(&cfg, &args, &out_dir),
        Cmd::Approx => cmd_approx(&cfg, &args, &out_dir),
        Cmd::Validate => cmd_validate(&cfg, &args, &out_dir),
    }
}

fn init_worker_pool(n: usize) {
    if let Err(e) = gmrf_sampler::exec::build_global_pool(n) {
        eprintln!("worker pool setup ignored: {e}");
    }
}

fn cmd_gamma(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let model = cfg.model()?;
    let gate = model.high_noise_gate();
    match model.truncation {
        Some(l) => {
            let gamma = gauss::gamma_truncated(cfg.epsilon, l)?;
            println!(
                "model: truncated, d = {}, epsilon = {}, L = {l}",
                cfg.d, cfg.epsilon
            );
            println!("gamma = {gamma:.6}");
            println!(
                "high-noise gate 1 - 1/(2d) = {gate:.6}: {}",
                if gamma > gate { "PASS" } else { "FAIL" }
            );
        }
        None => {
            let gamma = gauss::gamma_unbounded(cfg.epsilon)?;
            println!("model: unbounded, d = {}, epsilon = {}", cfg.d, cfg.epsilon);
            println!("gamma = {gamma} (zero for every nonzero epsilon; the flat coupling cannot coalesce)");
        }
    }
    if cfg.a.is_some() && cfg.l1.is_some() {
        let sched = cfg.schedule()?;
        let gt = gauss::gamma_tilde(sched.epsilon, sched.l1)?;
        println!(
            "gamma_tilde = {gt:.6} (common mass of the stratified coupler; H1 needs >= q0 = {:.6})",
            sched.level_prob(0)
        );
    }
    Ok(())
}

fn cmd_check(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    if cfg.epsilon == 0.0 {
        bail!("epsilon = 0 is the i.i.d. field: no schedule to check (sample with the iid mode)");
    }
    let model = cfg.model()?;
    let sched = cfg.schedule()?;
    let matrix = schedule::check_all(&sched, &model)?;
    println!(
        "schedule a = {}, L1 = {}, epsilon = {}",
        sched.a, sched.l1, sched.epsilon
    );
    println!(
        "H1 (gamma_tilde >= q0):      {} (gamma_tilde {:.6}, q0 {:.6})",
        pf(matrix.h1.passes),
        matrix.h1.gamma_tilde,
        matrix.h1.q0
    );
    println!(
        "H2 (level confinement):      {} (first violation {:?})",
        pf(matrix.h2.passes),
        matrix.h2.first_violation
    );
    println!(
        "H3 (subcritical wetness):    {} (sum {:.6}, witness t=1/2 {})",
        pf(matrix.h3.passes),
        matrix.h3.sum4,
        matrix.h3.t_exists
    );
    println!(
        "growth (L_n - |e|L_n+1):     {} (min slack {:.4})",
        pf(matrix.growth.passes),
        matrix.growth.min_slack
    );
    println!(
        "H4 (tail union bound -> 0):  {} (bound at n=8: {:.3e})",
        pf(matrix.h4.passes),
        matrix.h4.bound_at(8)
    );
    if !matrix.all_pass {
        bail!("schedule rejected");
    }
    Ok(())
}

fn pf(b: bool) -> &'static str {
    if b {
        "PASS"
    } else {
        "FAIL"
    }
}

fn replica_range(cfg: &ExperimentConfig, args: &Args) -> (u32, u32) {
    let count = args.count.unwrap_or(cfg.replicas);
    (args.from, count)
}

fn cmd_sample(cfg: &ExperimentConfig, args: &Args, out: &Path) -> anyhow::Result<()> {
    let model = cfg.model()?;
    let (from, count) = replica_range(cfg, args);
    let opts = cfg.sampler_options();
    let spec = NeighborhoodSpec::unit_sphere(cfg.d)?;
    let window: Vec<Vec<i32>> = vec![vec![0; cfg.d]];

    let mut samples: Vec<FieldSample> = Vec::with_capacity(count as usize);
    let mut reports: Vec<CodingReport> = Vec::with_capacity(count as usize);
    let mut failures = 0u32;

    if let Some(l) = model.truncation {
        let coupler = FlatCoupler::new(cfg.epsilon, l)?;
        let sampler = TruncatedSampler::new(&coupler, spec, opts)?;
        let rows = replicate(count, |i| {
            let mut store = MarkStore::new(replica_seed(cfg.master_seed, from + i), cfg.d);
            sampler.sample_window(&mut store, &window)
        });
        for row in rows {
            match row {
                Ok((s, mut r)) => {
                    samples.push(s);
                    reports.append(&mut r);
                }
                Err(e) => {
                    eprintln!("replica failed: {e}");
                    failures += 1;
                }
            }
        }
    } else if cfg.epsilon == 0.0 {
        for i in 0..count {
            let mut store = MarkStore::new(replica_seed(cfg.master_seed, from + i), cfg.d);
            let (v, r) = sample_iid_gaussian(&mut store, &window[0])?;
            samples.push(FieldSample {
                window: window.clone(),
                values: vec![v],
                seed: store.master_seed(),
                marks_revealed: 1,
                max_depth: 0,
            });
            reports.push(r);
        }
    } else {
        let sched = cfg.schedule()?;
        let coupler = StratifiedCoupler::new(sched)?;
        let sampler = GaussianSampler::new(&coupler, opts)?;
        let rows = replicate(count, |i| {
            let mut store = MarkStore::new(replica_seed(cfg.master_seed, from + i), cfg.d);
            sampler
                .sample_window(&mut store, &window)
                .map(|(s, r, _)| (s, r))
        });
        for row in rows {
            match row {
                Ok((s, mut r)) => {
                    samples.push(s);
                    reports.append(&mut r);
                }
                Err(e) => {
                    eprintln!("replica failed: {e}");
                    failures += 1;
                }
            }
        }
    }

    fs::write(out.join("samples.csv"), output::field_samples_csv(&samples))?;
    fs::write(
        out.join("reports.csv"),
        output::coding_reports_csv(&reports),
    )?;
    let meta = serde_json::json!({
        "config_hash": cfg.hash(),
        "replicas": count,
        "from": from,
        "failures": failures,
        "samples": samples,
    });
    fs::write(
        out.join("samples.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;

    if let Some(path) = &args.dump_marks {
        let mut store = MarkStore::new(replica_seed(cfg.master_seed, from), cfg.d);
        if let Some(l) = model.truncation {
            let coupler = FlatCoupler::new(cfg.epsilon, l)?;
            let sampler = TruncatedSampler::new(
                &coupler,
                NeighborhoodSpec::unit_sphere(cfg.d)?,
                cfg.sampler_options(),
            )?;
            let _ = sampler.sample(&mut store, &mut HashMap::new(), &window[0]);
        } else {
            let _ = store.last_mark_before(&window[0], 0.0);
        }
        fs::write(path, output::mark_trace_csv(&store.trace()))?;
    }
    println!(
        "wrote {} samples ({} failures) to {}",
        samples.len(),
        failures,
        out.display()
    );
    Ok(())
}

fn cmd_radius(cfg: &ExperimentConfig, args: &Args, out: &Path) -> anyhow::Result<()> {
    let model = cfg.model()?;
    let Some(l) = model.truncation else {
        bail!("the radius experiment runs on the truncated model (set `truncation`)");
    };
    let (from, count) = replica_range(cfg, args);
    let coupler = FlatCoupler::new(cfg.epsilon, l)?;
    let spec = NeighborhoodSpec::unit_sphere(cfg.d)?;
    let sampler = TruncatedSampler::new(&coupler, spec.clone(), cfg.sampler_options())?;
    let site = vec![0; cfg.d];
    let rows = replicate(count, |i| {
        let mut store = MarkStore::new(replica_seed(cfg.master_seed, from + i), cfg.d);
        sampler
            .sample(&mut store, &mut HashMap::new(), &site)
            .map(|(_, r)| r)
    });
    let reports: Vec<CodingReport> = rows.into_iter().collect::<Result<_, _>>()?;
    let depths: Vec<u32> = reports.iter().map(|r| r.depth).collect();
    let curve = stats::tail_curve(&depths, spec.range(), coupler.gamma, spec.size());
    fs::write(
        out.join("radius_reports.csv"),
        output::coding_reports_csv(&reports),
    )?;
    fs::write(out.join("tail_curve.csv"), output::tail_curve_csv(&curve))?;
    let verdict = serde_json::json!({
        "config_hash": cfg.hash(),
        "gamma": coupler.gamma,
        "flagged": curve.flagged,
        "passes": curve.passes,
    });
    fs::write(
        out.join("radius.json"),
        serde_json::to_string_pretty(&verdict)?,
    )?;
    println!(
        "tail curve over {} reports: {}",
        reports.len(),
        pf(curve.passes)
    );
    Ok(())
}

fn cmd_duality(cfg: &ExperimentConfig, args: &Args, out: &Path) -> anyhow::Result<()> {
    let model = cfg.model()?;
    let trials = cfg.replicas;
    let tau = -3.0;
    let side = 8;
    let mut report = serde_json::Map::new();
    report.insert("config_hash".into(), cfg.hash().into());
    let mut all_pass = true;
    if let Some(path) = &args.dump_events {
        use std::fmt::Write as _;
        let torus = gmrf_sampler::TorusWindow::new(cfg.d, side)?;
        let mut store = MarkStore::new(replica_seed(cfg.master_seed, 0), cfg.d);
        let mut csv = String::from("time,site,u\n");
        for m in particle::window_marks(&mut store, &torus, tau) {
            writeln!(csv, "{},{},{}", m.time, m.site, m.u)?;
        }
        fs::write(path, csv)?;
    }
    if let Some(l) = model.truncation {
        let gamma = gauss::gamma_truncated(cfg.epsilon, l)?;
        let binary = particle::duality_check_binary(side, tau, gamma, trials, cfg.master_seed)?;
        println!(
            "binary duality at gamma {:.4}: |{:.5} - {:.5}| vs 3*{:.5} -> {}",
            gamma,
            binary.p_forward,
            binary.p_dual,
            binary.se_combined,
            pf(binary.passes)
        );
        all_pass &= binary.passes;
        report.insert("binary".into(), serde_json::to_value(&binary)?);
    }
    if cfg.a.is_some() && cfg.l1.is_some() {
        let sched = cfg.schedule()?;
        let kappa = vec![Spin::Fin(1); side as usize];
        let level = particle::duality_check_level(
            side,
            tau,
            kappa,
            &sched,
            trials,
            cfg.master_seed ^ 0x99,
        )?;
        println!(
            "level duality: |{:.5} - {:.5}| vs 3*{:.5} -> {}",
            level.p_forward,
            level.p_dual,
            level.se_combined,
            pf(level.passes)
        );
        all_pass &= level.passes;
        report.insert("level".into(), serde_json::to_value(&level)?);
    }
    fs::write(
        out.join("duality.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(report))?,
    )?;
    if !all_pass {
        bail!("duality check failed");
    }
    Ok(())
}

fn cmd_approx(cfg: &ExperimentConfig, args: &Args, out: &Path) -> anyhow::Result<()> {
    if cfg.model()?.truncation.is_some() {
        bail!("the approximation experiment runs on the unbounded model");
    }
    let sched = cfg.schedule()?;
    let coupler = StratifiedCoupler::new(sched)?;
    let sampler = GaussianSampler::new(&coupler, cfg.sampler_options())?;
    let (from, count) = replica_range(cfg, args);
    let ls: Vec<u32> = (1..=cfg.l / 2).map(|k| 2 * k).collect();
    let site = vec![0; cfg.d];
    let rows = replicate(count, |i| -> gmrf_sampler::Result<Vec<bool>> {
        let mut store = MarkStore::new(replica_seed(cfg.master_seed, from + i), cfg.d);
        let mut run = GaussianRun::default();
        let (x, _, _) = sampler.sample(&mut store, &mut run, &site)?;
        let mut out = Vec::with_capacity(ls.len());
        for &l in &ls {
            let y = sampler.sample_l_dependent(&mut store, &site, l)?;
            out.push(x.to_bits() != y.to_bits());
        }
        Ok(out)
    });
    let mut counts = vec![0u64; ls.len()];
    let mut n = 0u64;
    for row in rows {
        let r = row?;
        n += 1;
        for (k, &d) in r.iter().enumerate() {
            counts[k] += u64::from(d);
        }
    }
    let mut csv = String::from("l,disagreements,frequency\n");
    for (&l, &c) in ls.iter().zip(&counts) {
        use std::fmt::Write as _;
        writeln!(csv, "{l},{c},{}", c as f64 / n as f64)?;
    }
    fs::write(out.join("approx.csv"), &csv)?;
    let verdict = serde_json::json!({
        "config_hash": cfg.hash(),
        "replicas": n,
        "l": ls,
        "disagreements": counts,
    });
    fs::write(
        out.join("approx.json"),
        serde_json::to_string_pretty(&verdict)?,
    )?;
    println!("disagreement counts over {n} replicas: {counts:?}");
    Ok(())
}

fn cmd_validate(cfg: &ExperimentConfig, args: &Args, out: &Path) -> anyhow::Result<()> {
    let outcomes = acceptance::run_all(args.only.as_deref())?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    let verdict = serde_json::json!({
        "config_hash": cfg.hash(),
        "outcomes": outcomes,
    });
    fs::write(
        out.join("validate.json"),
        serde_json::to_string_pretty(&verdict)?,
    )?;
    if outcomes.iter().any(|o| !o.passed) {
        bail!(
            "{} of {} checks failed",
            outcomes.iter().filter(|o| !o.passed).count(),
            outcomes.len()
        );
    }
    Ok(())
}
