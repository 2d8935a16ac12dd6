//! Command implementations behind the `cersa-forge` binary.
//!
//! Five subcommands: `analyze` (per-layer rank report), `factorize`
//! (checkpoint-wide three-region factorization), `train` (single run or
//! method comparison), `similarity` (cross-checkpoint subspace tables and
//! grids), and `memory` (closed-form footprint tables and compression
//! curves). Every command is a deterministic function of its inputs; the
//! only randomness source is the run seed.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::adapter::AdapterLayer;
use crate::analysis::{similarity_grid, subspace_similarity, SubspaceSide};
use crate::checkpoint::{Container, TensorData};
use crate::config::{load_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::factor;
use crate::memory::{self, Method};
use crate::report::{self, fmt_real, Series};
use crate::spectrum;
use crate::svd::svd;
use crate::task::gen_task;
use crate::train::{compare_methods, train_run_capturing};

#[derive(Debug, Parser)]
#[command(
    name = "cersa-forge",
    about = "Energy-retaining subspace adaptation: rank analysis, factorization, desk-scale training, and memory reports",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Recorded worker thread count (kernels run sequentially either way).
    #[arg(long, global = true, env = "CERSA_FORGE_THREADS", default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report per-layer rank cutoffs for a set of energy thresholds.
    Analyze(AnalyzeArgs),
    /// Replace every 2-D tensor of a checkpoint with its factored form.
    Factorize(FactorizeArgs),
    /// Run a training experiment described by a JSON config.
    Train(TrainArgs),
    /// Compare principal subspaces between two checkpoints.
    Similarity(SimilarityArgs),
    /// Closed-form memory accounting and compression curves.
    Memory(MemoryArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Checkpoint container with 2-D weight tensors.
    pub checkpoint: PathBuf,
    /// Comma-separated energy thresholds in (0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    pub thresholds: Vec<f64>,
    /// Output directory for rank_report.csv / rank_report.json.
    #[arg(long, default_value = "cersa-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    /// Input checkpoint container.
    pub input: PathBuf,
    /// Retention threshold for the preserved subspace.
    #[arg(long)]
    pub alpha: f64,
    /// Trainable threshold; defaults to alpha.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Output container path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config JSON.
    pub config: PathBuf,
    /// Override the run seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run the configured comparison kinds instead of a single run.
    #[arg(long)]
    pub compare: bool,
    /// Also write coarse per-run wall-time figures (timing.csv).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    /// Checkpoint with the "before" weights.
    pub before: PathBuf,
    /// Checkpoint with the "after" weights.
    pub after: PathBuf,
    /// Energy threshold selecting the compared subspace dimension (from the
    /// before-spectrum).
    #[arg(long, default_value_t = 0.95)]
    pub retention: f64,
    /// Also emit full top-i/top-j similarity grids plus SVG heat maps.
    #[arg(long)]
    pub grid: bool,
    /// Output directory.
    #[arg(long, default_value = "cersa-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MemoryArgs {
    /// Adapted matrix dimensions as MxN, repeatable.
    #[arg(long = "dims", value_parser = parse_dims)]
    pub dims: Vec<(usize, usize)>,
    /// Methods to price: comma list of ft, cersa, svfit, svft, lora.
    #[arg(long, value_delimiter = ',', default_value = "ft,cersa,svfit,svft,lora")]
    pub methods: Vec<String>,
    /// Rank for rank-parameterized methods.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Sparse trainable parameter count for the svft row.
    #[arg(long)]
    pub sparse_params: Option<usize>,
    /// Price full fine-tuning directly from a total parameter count.
    #[arg(long)]
    pub ft_params: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "cersa-out")]
    pub out: PathBuf,
    /// Also emit a compression-rate curve (plus SVG) over the first dims
    /// entry.
    #[arg(long)]
    pub curve: bool,
    /// Curve ranks: "1,2,4" or "start..end" or "start..end..step".
    #[arg(long)]
    pub curve_ranks: Option<String>,
    /// Curve thresholds resolved against a checkpoint tensor spectrum.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Checkpoint supplying the spectrum for --alphas.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (m, n) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected MxN, got {s}"))?;
    let m: usize = m.trim().parse().map_err(|e| format!("bad rows in {s}: {e}"))?;
    let n: usize = n.trim().parse().map_err(|e| format!("bad cols in {s}: {e}"))?;
    if m == 0 || n == 0 {
        return Err(format!("dimensions must be positive, got {s}"));
    }
    Ok((m, n))
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Factorize(args) => cmd_factorize(&args),
        Command::Train(args) => cmd_train(&args, cli.threads),
        Command::Similarity(args) => cmd_similarity(&args),
        Command::Memory(args) => cmd_memory(&args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.code());
            1
        }
    }
}

fn check_threads(threads: usize) -> Result<usize> {
    if threads == 0 {
        return Err(Error::InvalidArgument("thread count must be at least 1".into()));
    }
    Ok(threads)
}

/// Spectra of every 2-D tensor in a container, in manifest order.
fn container_spectra(container: &Container) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for tensor in container.tensors() {
        if !tensor.is_2d() {
            continue;
        }
        let m = tensor.as_matrix()?;
        let f = svd(&m).map_err(|e| e.for_layer(tensor.name.clone()))?;
        out.push((tensor.name.clone(), f.sigma));
    }
    if out.is_empty() {
        return Err(Error::Container("no 2-D tensors in container".into()));
    }
    Ok(out)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    for t in &args.thresholds {
        if !(*t > 0.0 && *t <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must lie in (0, 1], got {t}"
            )));
        }
    }
    let container = Container::load(&args.checkpoint)?;
    let spectra = container_spectra(&container)?;
    let report = spectrum::layer_rank_report(&spectra, &args.thresholds)?;
    report::write_text(&args.out.join("rank_report.csv"), &report.to_csv())?;
    report::write_text(
        &args.out.join("rank_report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    for row in &report.rows {
        println!(
            "{}\tthreshold={}\tk={}\tn={}",
            row.layer_label, row.threshold, row.k, row.n_total
        );
    }
    println!("wrote {}", args.out.join("rank_report.csv").display());
    Ok(())
}

pub fn cmd_factorize(args: &FactorizeArgs) -> Result<()> {
    let beta = args.beta.unwrap_or(args.alpha);
    // Flag validation precedes any I/O.
    if !(args.alpha > 0.0 && args.alpha <= 1.0) || !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must lie in (0, 1], got alpha={} beta={beta}",
            args.alpha
        )));
    }
    if beta > args.alpha {
        return Err(Error::InvalidArgument(format!(
            "trainable threshold exceeds retention threshold (beta = {beta} > alpha = {})",
            args.alpha
        )));
    }
    let container = Container::load(&args.input)?;
    if container.is_empty() {
        return Err(Error::Container("container holds no tensors".into()));
    }
    let mut out = Container::new();
    let mut selections = serde_json::Map::new();
    let mut failures: Vec<String> = Vec::new();
    let mut factored = 0usize;
    for tensor in container.tensors() {
        if !tensor.is_2d() {
            out.add(tensor.name.clone(), tensor.shape.clone(), tensor.data.clone())?;
            continue;
        }
        let w = tensor.as_matrix()?;
        match factor::factorize(&w, args.alpha, beta) {
            Ok(f) => {
                let (m, n) = w.shape();
                let sel = &f.selection;
                let recon_err = f.effective_weight()?.sub(&w)?.frobenius_norm()
                    / w.frobenius_norm().max(1e-300);
                let total = memory::memory_report_layerwise(&[(m, n, sel.clone())])?;
                let c = total.total_bytes as f64
                    / (m as u64 * n as u64 * memory::BYTES_PER_PARAM) as f64;
                println!(
                    "{}\tk_alpha={}\tk_beta={}\trecon_error={:.3e}\tc={:.4}",
                    tensor.name, sel.k_alpha, sel.k_beta, recon_err, c
                );
                out.add_matrix(format!("{}/u_p", tensor.name), &f.u_p)?;
                out.add_matrix(format!("{}/v_pt", tensor.name), &f.v_pt)?;
                out.add_matrix(format!("{}/s_core", tensor.name), &f.s_core)?;
                out.add(
                    format!("{}/sigma_frozen", tensor.name),
                    vec![f.sigma_frozen.len()],
                    TensorData::F64(f.sigma_frozen.clone()),
                )?;
                selections.insert(
                    tensor.name.clone(),
                    serde_json::json!({
                        "selection": sel,
                        "placement": f.placement,
                        "rows": m,
                        "cols": n,
                    }),
                );
                factored += 1;
            }
            Err(err) => {
                eprintln!("error[{}]: {}: {err}", err.code(), tensor.name);
                failures.push(tensor.name.clone());
            }
        }
    }
    out.metadata.insert("selections".into(), serde_json::Value::Object(selections));
    out.metadata.insert("alpha".into(), serde_json::json!(args.alpha));
    out.metadata.insert("beta".into(), serde_json::json!(beta));
    out.save(&args.out)?;
    println!("wrote {} ({factored} tensors factored)", args.out.display());
    if !failures.is_empty() {
        return Err(Error::Container(format!(
            "{} tensor(s) failed to factorize: {}",
            failures.len(),
            failures.join(", ")
        )));
    }
    Ok(())
}

/// Save layers as a container of dense effective weights plus biases.
fn dense_snapshot(layers: &[AdapterLayer]) -> Result<Container> {
    let mut c = Container::new();
    for (idx, layer) in layers.iter().enumerate() {
        c.add_matrix(format!("layer{idx}/weight"), &layer.effective_weight()?)?;
        c.add_vector(format!("layer{idx}/bias"), layer.bias())?;
    }
    Ok(c)
}

/// Save pre-adaptation base weights as the "before" checkpoint.
fn base_snapshot(base: &[crate::matrix::Matrix]) -> Result<Container> {
    let mut c = Container::new();
    for (idx, w) in base.iter().enumerate() {
        c.add_matrix(format!("layer{idx}/weight"), w)?;
        c.add_vector(format!("layer{idx}/bias"), &vec![0.0; w.rows()])?;
    }
    Ok(c)
}

/// Save layers as a container of their full adapter state.
fn adapter_snapshot(layers: &[AdapterLayer], config: &ExperimentConfig) -> Result<Container> {
    let mut c = Container::new();
    let mut selections = serde_json::Map::new();
    for (idx, layer) in layers.iter().enumerate() {
        for (name, shape, data) in layer.state_tensors() {
            c.add(format!("layer{idx}/{name}"), shape, TensorData::F64(data))?;
        }
        if let Some(factors) = layer.cersa_factors() {
            selections.insert(
                format!("layer{idx}"),
                serde_json::json!({
                    "selection": factors.selection,
                    "placement": factors.placement,
                }),
            );
        }
    }
    c.metadata.insert("adapter_kinds".into(), serde_json::to_value(&config.model.kinds)?);
    c.metadata.insert("selections".into(), serde_json::Value::Object(selections));
    Ok(c)
}

pub fn cmd_train(args: &TrainArgs, threads: usize) -> Result<()> {
    let threads = check_threads(threads)?;
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    let out_dir = config.out_dir.clone();
    let data = gen_task(&config.task)?;

    if args.compare {
        let kinds = config.compare_kinds.clone().ok_or_else(|| Error::Config {
            issues: vec!["compare_kinds: required for --compare runs".into()],
        })?;
        let seeds = config.compare_seeds();
        let started = std::time::Instant::now();
        let outcome = compare_methods(&kinds, &config.model, &config.train, &data, &seeds)?;
        report::write_text(&out_dir.join("compare_runs.csv"), &outcome.rows_csv())?;
        report::write_text(&out_dir.join("compare_ranking.csv"), &outcome.ranking_csv())?;
        report::write_text(
            &out_dir.join("compare.json"),
            &serde_json::to_string_pretty(&serde_json::json!({
                "config": config,
                "outcome": outcome,
            }))?,
        )?;
        if args.timing {
            let wall = started.elapsed().as_secs_f64();
            let runs = (kinds.len() * seeds.len()) as f64;
            let timing = format!(
                "scope,runs,steps_per_run,wall_seconds,seconds_per_step\ncompare,{},{},{},{}\n",
                kinds.len() * seeds.len(),
                config.train.steps,
                fmt_real(wall),
                fmt_real(wall / (runs * config.train.steps as f64)),
            );
            report::write_text(&out_dir.join("timing.csv"), &timing)?;
        }
        for ranked in &outcome.ranking {
            println!(
                "#{} {} median_test_loss={} trainable={}",
                ranked.position,
                ranked.kind_label,
                fmt_real(ranked.median_test_loss),
                ranked.trainable_count.map(|c| c.to_string()).unwrap_or_else(|| "-".into()),
            );
        }
        println!("wrote {}", out_dir.join("compare_ranking.csv").display());
        return Ok(());
    }

    let (record, base, final_layers) =
        train_run_capturing(&config.model, &config.train, &data, threads)?;
    report::write_text(&out_dir.join("loss.csv"), &record.loss_csv())?;
    report::write_text(
        &out_dir.join("run.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "config": config,
            "record": record,
        }))?,
    )?;
    base_snapshot(&base)?.save(&out_dir.join("checkpoint_init.cersa"))?;
    dense_snapshot(&final_layers)?.save(&out_dir.join("checkpoint_final.cersa"))?;
    adapter_snapshot(&final_layers, &config)?.save(&out_dir.join("adapter_final.cersa"))?;
    if args.timing {
        let timing = format!(
            "scope,runs,steps_per_run,wall_seconds,seconds_per_step\nrun,1,{},{},{}\n",
            config.train.steps,
            fmt_real(record.wall_seconds),
            fmt_real(record.wall_seconds / config.train.steps as f64),
        );
        report::write_text(&out_dir.join("timing.csv"), &timing)?;
    }
    println!(
        "final_train_loss={} final_test_loss={} trainable={}",
        fmt_real(record.final_train_loss),
        fmt_real(record.final_test_loss),
        record.trainable_count
    );
    println!("wrote {}", out_dir.join("run.json").display());
    Ok(())
}

pub fn cmd_similarity(args: &SimilarityArgs) -> Result<()> {
    if !(args.retention > 0.0 && args.retention <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "retention must lie in (0, 1], got {}",
            args.retention
        )));
    }
    let before = Container::load(&args.before)?;
    let after = Container::load(&args.after)?;

    // Pair up 2-D tensors by name; any mismatch in name sets or shapes is an
    // error listing the offenders.
    let mut offenders = Vec::new();
    let mut pairs = Vec::new();
    for t in before.tensors().iter().filter(|t| t.is_2d()) {
        match after.get(&t.name) {
            Some(other) if other.shape == t.shape => pairs.push((t, other)),
            Some(other) => offenders.push(format!(
                "{}: shape {:?} vs {:?}",
                t.name, t.shape, other.shape
            )),
            None => offenders.push(format!("{}: missing from second container", t.name)),
        }
    }
    for t in after.tensors().iter().filter(|t| t.is_2d()) {
        if before.get(&t.name).is_none() {
            offenders.push(format!("{}: missing from first container", t.name));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Container(format!(
            "containers do not match: {}",
            offenders.join("; ")
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Container("no 2-D tensors to compare".into()));
    }

    let mut csv = String::from("tensor,psi_u,psi_v\n");
    for (t_before, t_after) in &pairs {
        let wb = t_before.as_matrix()?;
        let wa = t_after.as_matrix()?;
        let (psi_u, psi_v) = subspace_similarity(&wb, &wa, args.retention)
            .map_err(|e| e.for_layer(t_before.name.clone()))?;
        csv.push_str(&format!(
            "{},{},{}\n",
            report::csv_field(&t_before.name),
            fmt_real(psi_u),
            fmt_real(psi_v)
        ));
        println!("{}\tpsi_u={psi_u:.12}\tpsi_v={psi_v:.12}", t_before.name);

        if args.grid {
            let p = wb.rows().min(wb.cols());
            let safe = sanitize(&t_before.name);
            for (side, tag) in [(SubspaceSide::Left, "left"), (SubspaceSide::Right, "right")] {
                let grid = similarity_grid(&wb, &wa, p, p, side)
                    .map_err(|e| e.for_layer(t_before.name.clone()))?;
                report::write_text(
                    &args.out.join(format!("grid_{safe}_{tag}.csv")),
                    &grid.to_csv(),
                )?;
                let svg = report::svg_heat_map(
                    &format!("subspace similarity ({tag}): {}", t_before.name),
                    &grid.values,
                );
                report::write_text(&args.out.join(format!("grid_{safe}_{tag}.svg")), &svg)?;
            }
        }
    }
    report::write_text(&args.out.join("similarity.csv"), &csv)?;
    println!("wrote {}", args.out.join("similarity.csv").display());
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn parse_rank_spec(spec: &str) -> Result<Vec<usize>> {
    let parse_one = |s: &str| -> Result<usize> {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::InvalidArgument(format!("bad rank {s}: {e}")))
    };
    if spec.contains("..") {
        let parts: Vec<&str> = spec.split("..").collect();
        let (start, end, step) = match parts.as_slice() {
            [a, b] => (parse_one(a)?, parse_one(b)?, 1),
            [a, b, c] => (parse_one(a)?, parse_one(b)?, parse_one(c)?),
            _ => return Err(Error::InvalidArgument(format!("bad rank range {spec}"))),
        };
        if step == 0 || start == 0 || end < start {
            return Err(Error::InvalidArgument(format!("bad rank range {spec}")));
        }
        Ok((start..=end).step_by(step).collect())
    } else {
        spec.split(',').map(parse_one).collect()
    }
}

pub fn cmd_memory(args: &MemoryArgs) -> Result<()> {
    let mut reports = Vec::new();
    for name in &args.methods {
        let method = match name.trim() {
            "ft" | "full_ft" => {
                if let Some(p) = args.ft_params {
                    reports.push(memory::full_ft_report_from_params(p));
                    continue;
                }
                Method::FullFt
            }
            "cersa" => Method::Cersa {
                rank: args.rank.ok_or_else(|| missing_rank("cersa"))?,
            },
            "svfit" => Method::Svfit {
                rank: args.rank.ok_or_else(|| missing_rank("svfit"))?,
            },
            "svft" => Method::Svft {
                sparse_params: args
                    .sparse_params
                    .ok_or_else(|| Error::InvalidArgument(
                        "svft needs --sparse-params".into(),
                    ))?,
            },
            "lora" => Method::Lora {
                rank: args.rank.ok_or_else(|| missing_rank("lora"))?,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown method {other}; expected ft, cersa, svfit, svft, or lora"
                )))
            }
        };
        if args.dims.is_empty() {
            return Err(Error::InvalidArgument(
                "methods priced per matrix need at least one --dims entry".into(),
            ));
        }
        reports.push(memory::memory_report(method, &args.dims)?);
    }
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }

    let mut csv = String::from(memory::memory_csv_header());
    for r in &reports {
        csv.push_str(&r.csv_row());
        println!(
            "{}\ttrainable={}\ttotal={:.1} MB",
            r.method_label,
            r.trainable_params,
            r.total_mb()
        );
    }
    report::write_text(&args.out.join("memory.csv"), &csv)?;
    report::write_text(
        &args.out.join("memory.json"),
        &serde_json::to_string_pretty(&reports)?,
    )?;

    if let Some((m, n)) = args.dims.first().copied() {
        let b = memory::break_even_rank(m, n)?;
        println!("break_even_rank({m}x{n}) = {b}");
    }

    if args.curve {
        let (m, n) = *args.dims.first().ok_or_else(|| {
            Error::InvalidArgument("--curve needs a --dims entry".into())
        })?;
        let points = match (&args.curve_ranks, &args.alphas, &args.checkpoint) {
            (Some(spec), _, _) => memory::compression_curve_from_ranks(m, n, &parse_rank_spec(spec)?)?,
            (None, Some(alphas), Some(ckpt)) => {
                let container = Container::load(ckpt)?;
                let spectra = container_spectra(&container)?;
                let (name, sigma) = &spectra[0];
                println!("curve spectrum from tensor {name}");
                memory::compression_curve_from_spectrum(m, n, sigma, alphas)?
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "--curve needs --curve-ranks, or --alphas with --checkpoint".into(),
                ))
            }
        };
        report::write_text(
            &args.out.join("compression_curve.csv"),
            &memory::compression_curve_csv(&points),
        )?;
        let reference = memory::lora_reference_rate(m, n)?;
        println!("lora_r32_reference_c = {}", fmt_real(reference));
        let curve_pts: Vec<(f64, f64)> = points.iter().map(|p| (p.rank as f64, p.c)).collect();
        let ref_pts = [
            (curve_pts.first().map(|p| p.0).unwrap_or(0.0), reference),
            (curve_pts.last().map(|p| p.0).unwrap_or(1.0), reference),
        ];
        let svg = report::svg_line_chart(
            &format!("compression rate, {m}x{n}"),
            "rank",
            "c",
            &[
                Series { label: "factored core", points: &curve_pts, color: "#2266aa", dashed: false },
                Series { label: "lora r=32 reference", points: &ref_pts, color: "#aa4422", dashed: true },
            ],
        );
        report::write_text(&args.out.join("compression_curve.svg"), &svg)?;
        report::write_text(
            &args.out.join("compression_curve.json"),
            &serde_json::to_string_pretty(&serde_json::json!({
                "points": points,
                "lora_r32_reference_c": reference,
            }))?,
        )?;
    }
    println!("wrote {}", args.out.join("memory.csv").display());
    Ok(())
}

fn missing_rank(method: &str) -> Error {
    Error::InvalidArgument(format!("{method} needs --rank"))
}
