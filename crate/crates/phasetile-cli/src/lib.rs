//! Command-line front end: configuration ingestion, subcommand dispatch and
//! reproducible experiment artifacts (CSV tables, plot data, run manifests).
//!
//! Every subcommand reads one flat TOML scenario file (all keys optional,
//! defaults are the nominal concept system), runs the corresponding library
//! operation, writes CSV artifacts plus a JSON manifest into the output
//! directory, and prints a one-screen summary. Data files depend only on the
//! resolved configuration and master seed, so reruns are byte-identical;
//! wall-clock information lives only in the manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use phasetile::config::{parse_config, to_canonical_toml, Scenario};
use phasetile::engine::{
    run_crosstalk_experiment, run_full_simulation, run_selfnoise_experiment, sweep,
    sweep_plot_csv, SimResult, SweepAxis,
};
use phasetile::noise::psd_eval;
use phasetile::pll::{q_coefficients, ref_transfer, vco_transfer, QCoefficients, DEFAULT_N_QUAD};
use phasetile::predict::{mask_feasible, max_phase_noise_variance, LinkBudget};
use phasetile::rx::tracking_filter_response;

#[derive(Parser)]
#[command(
    name = "phasetile",
    version,
    about = "Phase-noise design and link-level simulation for tiled massive MIMO uplinks"
)]
pub struct Cli {
    /// Scenario file (flat TOML); omitted means the nominal concept system.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV artifacts and the run manifest.
    #[arg(long, global = true, default_value = "phasetile_out")]
    out: PathBuf,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full multiuser uplink Monte Carlo: BER per user and aggregate.
    Simulate,
    /// Self-noise isolation experiment (one active user, no injected noise).
    Selfnoise,
    /// Cross-talk isolation experiment (designated user silent).
    Crosstalk,
    /// Full simulations along one swept parameter.
    Sweep(SweepArgs),
    /// Closed-form prediction chain for the configured scenario.
    Predict,
    /// Filtered-variance weights (the q table) for the configured loop.
    Qcoeffs,
    /// PSD-mask feasibility against the configured BER target.
    Mask,
}

#[derive(Args)]
struct SweepArgs {
    /// One of: n_tiles, n_users, snr_bf_db, mask_scale, window.
    #[arg(long)]
    axis: String,
    /// Comma-separated values, e.g. `1,2,4,8,16`.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    code_version: String,
    config_hash: String,
    master_seed: u64,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<String>,
    config_toml: String,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

struct RunContext {
    scenario: Scenario,
    canonical: String,
    hash: String,
    out_dir: PathBuf,
    started: u64,
    outputs: Vec<(String, String)>,
}

impl RunContext {
    fn new(cli: &Cli) -> anyhow::Result<Self> {
        let mut scenario = match &cli.config {
            Some(path) => parse_config(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => phasetile::config::parse_config_str("")?,
        };
        if let Some(seed) = cli.seed {
            scenario.sim.seed = seed;
        }
        let canonical = to_canonical_toml(&scenario);
        let hash = config_hash(&canonical);
        Ok(RunContext {
            scenario,
            canonical,
            hash,
            out_dir: cli.out.clone(),
            started: unix_now(),
            outputs: Vec::new(),
        })
    }

    fn stage(&mut self, name: &str, contents: String) {
        self.outputs.push((name.to_string(), contents));
    }

    fn finish(self, command: &str) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let mut names = Vec::new();
        for (name, contents) in &self.outputs {
            std::fs::write(self.out_dir.join(name), contents)?;
            names.push(name.clone());
        }
        let manifest = Manifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.hash.clone(),
            master_seed: self.scenario.sim.seed,
            started_unix: self.started,
            finished_unix: unix_now(),
            outputs: names,
            config_toml: self.canonical.clone(),
        };
        let manifest_name = format!("{command}_manifest.json");
        std::fs::write(
            self.out_dir.join(&manifest_name),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

/// Parse `argv` and execute; artifacts land in the chosen output directory.
pub fn run<I, T>(argv: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let mut ctx = RunContext::new(&cli)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&mut ctx)?,
        Command::Selfnoise => cmd_selfnoise(&mut ctx)?,
        Command::Crosstalk => cmd_crosstalk(&mut ctx)?,
        Command::Sweep(args) => cmd_sweep(&mut ctx, args)?,
        Command::Predict => cmd_predict(&mut ctx)?,
        Command::Qcoeffs => cmd_qcoeffs(&mut ctx)?,
        Command::Mask => cmd_mask(&mut ctx)?,
    }
    let command = match &cli.command {
        Command::Simulate => "simulate",
        Command::Selfnoise => "selfnoise",
        Command::Crosstalk => "crosstalk",
        Command::Sweep(_) => "sweep",
        Command::Predict => "predict",
        Command::Qcoeffs => "qcoeffs",
        Command::Mask => "mask",
    };
    ctx.finish(command)
}

fn sim_csv(result: &SimResult, hash: &str) -> String {
    format!("{}\n{}\n", SimResult::csv_header(), result.to_csv_row(hash))
}

fn cmd_simulate(ctx: &mut RunContext) -> anyhow::Result<()> {
    let result = run_full_simulation(&ctx.scenario.sim)?;
    println!(
        "simulate: seed {} | {} users x {} symbols x {} frames",
        result.seed,
        result.per_user_ber.len(),
        result.n_symbols,
        result.n_realizations
    );
    println!(
        "  BER {:.4e} (+/- {:.1e})  predicted {:.4e}  [{} bit errors / {} bits]",
        result.ber, result.ber_std_err, result.predicted.ber, result.n_bit_errors, result.n_bits
    );
    println!(
        "  sigma_phi^2 {:.4e}  sigma_0^2 {:.4e}  SINR_eq {:.2} dB  ({:.1} s)",
        result.predicted.sigma_phi2,
        result.predicted.sigma_02,
        10.0 * result.predicted.sinr_eq.log10(),
        result.runtime_secs
    );
    let hash = ctx.hash.clone();
    ctx.stage("sim.csv", sim_csv(&result, &hash));
    ctx.stage("per_user.csv", result.per_user_csv(&hash));
    Ok(())
}

fn cmd_selfnoise(ctx: &mut RunContext) -> anyhow::Result<()> {
    let r = run_selfnoise_experiment(&ctx.scenario.sim)?;
    println!(
        "selfnoise: Epsi^2 {:.4e} (pred {:.4e})  Egamma {:.6} (pred {:.6})",
        r.measured_self_phase_var,
        r.predicted_self_phase_var,
        r.measured_attenuation,
        r.predicted_attenuation
    );
    let csv = format!(
        "config_hash,seed,n_tiles,sigma_phi2,measured_self_phase_var,predicted_self_phase_var,\
         measured_attenuation,predicted_attenuation\n{},{},{},{},{},{},{},{}\n",
        ctx.hash,
        r.seed,
        ctx.scenario.sim.spatial.n_tiles(),
        r.sigma_phi2,
        r.measured_self_phase_var,
        r.predicted_self_phase_var,
        r.measured_attenuation,
        r.predicted_attenuation
    );
    ctx.stage("selfnoise.csv", csv);
    Ok(())
}

fn cmd_crosstalk(ctx: &mut RunContext) -> anyhow::Result<()> {
    let r = run_crosstalk_experiment(&ctx.scenario.sim)?;
    println!(
        "crosstalk: E|I|^2 {:.4e} (pred {:.4e})",
        r.measured_crosstalk_power, r.predicted_crosstalk_power
    );
    let csv = format!(
        "config_hash,seed,n_users,sigma_phi2,measured_crosstalk_power,predicted_crosstalk_power\n\
         {},{},{},{},{},{}\n",
        ctx.hash,
        r.seed,
        ctx.scenario.sim.spatial.n_users,
        r.sigma_phi2,
        r.measured_crosstalk_power,
        r.predicted_crosstalk_power
    );
    ctx.stage("crosstalk.csv", csv);
    Ok(())
}

fn cmd_sweep(ctx: &mut RunContext, args: &SweepArgs) -> anyhow::Result<()> {
    let axis = SweepAxis::parse(&args.axis)?;
    let points = sweep(&ctx.scenario.sim, axis, &args.values)?;
    let mut csv = format!("{},{}\n", axis.name(), SimResult::csv_header());
    for p in &points {
        println!(
            "sweep {} = {:>8}: BER {:.4e} (pred {:.4e})",
            axis.name(),
            p.value,
            p.result.ber,
            p.result.predicted.ber
        );
        csv.push_str(&format!("{},{}\n", p.value, p.result.to_csv_row(&ctx.hash)));
    }
    ctx.stage("sweep.csv", csv);
    ctx.stage("sweep_plot.csv", sweep_plot_csv(axis, &points));
    Ok(())
}

fn cmd_predict(ctx: &mut RunContext) -> anyhow::Result<()> {
    let p = ctx.scenario.sim.predictions()?;
    println!("predict:");
    println!("  sigma_phi^2   {:.6e} rad^2", p.sigma_phi2);
    println!("  sigma_0^2     {:.6e} rad^2", p.sigma_02);
    println!("  E psi^2       {:.6e} rad^2", p.self_phase_var);
    println!("  E gamma       {:.6}", p.attenuation);
    println!("  E|I|^2        {:.6e}", p.crosstalk_power);
    println!("  sigma_eq^2    {:.6e}", p.sigma_eq2);
    println!(
        "  SINR_eq       {:.4} ({:.2} dB)",
        p.sinr_eq,
        10.0 * p.sinr_eq.log10()
    );
    println!("  BER           {:.4e}", p.ber);
    let csv = format!(
        "config_hash,sigma_phi2,sigma_02,self_phase_var,attenuation,crosstalk_power,sigma_eq2,\
         sinr_eq,ber\n{},{},{},{},{},{},{},{},{}\n",
        ctx.hash,
        p.sigma_phi2,
        p.sigma_02,
        p.self_phase_var,
        p.attenuation,
        p.crosstalk_power,
        p.sigma_eq2,
        p.sinr_eq,
        p.ber
    );
    ctx.stage("predict.csv", csv);
    Ok(())
}

fn table_rows(ctx: &RunContext) -> anyhow::Result<(QCoefficients, QCoefficients, f64, f64)> {
    let sim = &ctx.scenario.sim;
    let pll = sim.pll;
    let b = sim.bandwidth_hz;
    let f_min = sim.f_min_hz;
    let t_symb = sim.t_symb();
    let w = sim.window;
    let vco_row = q_coefficients(&|f| vco_transfer(&pll, f), b, f_min, DEFAULT_N_QUAD)?;
    let ref_row = q_coefficients(
        &|f| ref_transfer(&pll, f) * tracking_filter_response(w, f, t_symb),
        b,
        f_min,
        DEFAULT_N_QUAD,
    )?;
    let sigma_phi2 = vco_row.dot(&sim.vco_psd);
    let sigma_02 = ref_row.dot(&sim.ref_psd);
    Ok((vco_row, ref_row, sigma_phi2, sigma_02))
}

fn cmd_qcoeffs(ctx: &mut RunContext) -> anyhow::Result<()> {
    let (vco_row, ref_row, sigma_phi2, sigma_02) = table_rows(ctx)?;
    println!("q coefficients over ({:.3e} Hz, B/2]:", ctx.scenario.sim.f_min_hz);
    println!("  response      q0 (Hz)      q1           q2 (1/Hz)    q3 (1/Hz^2)");
    for (name, q) in [("H_vco", &vco_row), ("H_ref*H_W", &ref_row)] {
        println!(
            "  {:<12}  {:<11.4e}  {:<11.4e}  {:<11.4e}  {:<11.4e}",
            name, q.q0, q.q1, q.q2, q.q3
        );
    }
    println!("  sigma_phi^2 = {sigma_phi2:.4e}   sigma_0^2 = {sigma_02:.4e}");
    let mut csv = String::from("response,q0,q1,q2,q3\n");
    csv.push_str(&format!(
        "vco,{},{},{},{}\n",
        vco_row.q0, vco_row.q1, vco_row.q2, vco_row.q3
    ));
    csv.push_str(&format!(
        "ref_tracked,{},{},{},{}\n",
        ref_row.q0, ref_row.q1, ref_row.q2, ref_row.q3
    ));
    csv.push_str(&format!("sigma_phi2,{sigma_phi2},,,\n"));
    csv.push_str(&format!("sigma_02,{sigma_02},,,\n"));
    ctx.stage("qcoeffs.csv", csv);
    Ok(())
}

fn cmd_mask(ctx: &mut RunContext) -> anyhow::Result<()> {
    let sim = ctx.scenario.sim;
    let target = ctx.scenario.target_ber;
    let (vco_row, ref_row, sigma_phi2, sigma_02) = table_rows(ctx)?;
    if sigma_phi2 <= 0.0 {
        bail!("mask: the configured VCO PSD is identically zero; nothing to check");
    }
    let budget = LinkBudget {
        snr_bf: sim.snr_bf_linear(),
        sigma_phi2,
        sigma_02,
        beta: sim.spatial.load_factor(),
        n_tiles: sim.spatial.n_tiles(),
        alpha_corr: sim.alpha_corr,
    };
    let ref_ratio = sigma_02 / sigma_phi2;
    let sigma_max2 = max_phase_noise_variance(target, &budget, ref_ratio)?;
    let (feasible, margin) = mask_feasible(&sim.vco_psd, &vco_row, sigma_max2);

    println!("mask design for target BER {target:.3e}:");
    println!("  largest tolerable sigma_phi^2 = {sigma_max2:.4e} rad^2");
    println!("  configured mask gives sigma_phi^2 = {sigma_phi2:.4e} (sigma_0^2 = {sigma_02:.4e})");
    println!(
        "  margin = {margin:+.4e}  ->  {}",
        if feasible { "FEASIBLE" } else { "INFEASIBLE" }
    );

    // L(f) table on a log grid, 24 points per decade
    let mut lf = String::from("freq_hz,psd_w_per_hz\n");
    let decades = (sim.bandwidth_hz / 2.0 / sim.f_min_hz).log10();
    let n_rows = (decades * 24.0).ceil() as usize + 1;
    for i in 0..n_rows {
        let f = sim.f_min_hz * 10f64.powf(i as f64 / 24.0);
        let f = f.min(sim.bandwidth_hz / 2.0);
        lf.push_str(&format!("{},{}\n", f, psd_eval(&sim.vco_psd, f)?));
        if f >= sim.bandwidth_hz / 2.0 {
            break;
        }
    }
    ctx.stage("mask.csv", lf);

    let summary = format!(
        "config_hash,target_ber,sigma_max2,q0,q1,q2,q3,ref_q0,ref_q1,ref_q2,ref_q3,\
         sigma_phi2,sigma_02,margin,feasible\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        ctx.hash,
        target,
        sigma_max2,
        vco_row.q0,
        vco_row.q1,
        vco_row.q2,
        vco_row.q3,
        ref_row.q0,
        ref_row.q1,
        ref_row.q2,
        ref_row.q3,
        sigma_phi2,
        sigma_02,
        margin,
        feasible
    );
    ctx.stage("mask_summary.csv", summary);
    Ok(())
}

/// Expose the mask L(f) CSV path for tests.
pub fn output_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}
