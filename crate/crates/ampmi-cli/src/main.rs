//! `ampmi`: amplitude mutual information experiments as reproducible
//! CSV/JSON outputs.
//!
//! Every run writes a manifest JSON sidecar (next to `--out`, or to stderr
//! when printing to stdout) recording the subcommand, full parameter set,
//! seed, binary version, and timestamp.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 sweep
//! found no succeeding width.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ampmi::arnn::{
    self, ArnnModel, BellPairChain, DeltaTarget, StabilizerTarget, TargetDistribution, TfdTarget,
    TrainConfig,
};
use ampmi::families::{self, CutAxis};
use ampmi::fermion::{self, BcsChain, Ordering as TfdOrdering};
use ampmi::stabilizer::{self, Bipartition, SystemDescription, ZCheckSystem};
use ampmi::tfim::{self, TfimModel};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

const EXIT_INVALID_INPUT: i32 = 2;
const EXIT_NUMERICAL: i32 = 3;
const EXIT_SWEEP_NO_WIDTH: i32 = 4;

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVALID_INPUT,
            message: message.into(),
        }
    }
    fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "ampmi", version, about = "Amplitude mutual information of quantum-state families")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// CMI of a Z-check stabilizer system across a bipartition, by the rank
    /// formula and (when enumerable) brute-force enumeration.
    CmiStabilizer {
        /// JSON file: {"n":…, "z_checks":["0110…",…], "syndrome":"0…"}
        #[arg(long, conflicts_with = "toric")]
        system: Option<PathBuf>,
        /// Generate the L x L toric plaquette system instead.
        #[arg(long)]
        toric: Option<usize>,
        /// Cut: "mid" or an explicit comma-separated A-side index list.
        #[arg(long, default_value = "mid")]
        cut: String,
        /// Output CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CMI scaling curve over sizes with a fitted log-log slope.
    ScalingCurve {
        #[arg(long, value_enum)]
        family: CurveFamily,
        /// Checkerboard density exponent.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Comma-separated sizes (at least 3).
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Amplitude CMI of the dephased fermionic thermal double.
    TfdCmi {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        j: f64,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        #[arg(long, value_enum, default_value_t = OrderingArg::Separate)]
        ordering: OrderingArg,
        /// Cut position in the ordering: "mid" or an integer prefix length.
        #[arg(long, default_value = "mid")]
        cut: String,
        /// Sampling estimator with this many samples; exact enumeration when
        /// absent (small systems only).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Amplitude CMI between the two copies of the transverse-field Ising
    /// thermal double.
    TfimCmi {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        j: f64,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        #[arg(long, value_enum)]
        method: TfimMethod,
        /// MCMC chain length (mcmc method only).
        #[arg(long, default_value_t = 200_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimal-width sweep: train the autoregressive model at increasing
    /// hidden widths until the fidelity target is reached, per size.
    Sweep {
        #[arg(long, value_enum)]
        family: SweepFamily,
        /// Family parameters as key=value pairs (gamma, beta, j, h, ordering).
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Ascending hidden-width grid.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 6, 8, 12, 16, 24, 32, 48, 64])]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 0.95)]
        target_fid: f64,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 5000)]
        max_epochs: usize,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Write winning model checkpoints (flat f64 binary + JSON shape
        /// header) into this directory.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, required = true)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CurveFamily {
    Checkerboard,
    Toric,
    SingleCheck,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OrderingArg {
    Separate,
    Alternate,
}

impl OrderingArg {
    fn to_ordering(self) -> TfdOrdering {
        match self {
            OrderingArg::Separate => TfdOrdering::Separate,
            OrderingArg::Alternate => TfdOrdering::Alternate,
        }
    }
    fn name(self) -> &'static str {
        match self {
            OrderingArg::Separate => "separate",
            OrderingArg::Alternate => "alternate",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TfimMethod {
    Exact,
    Mcmc,
    Smallbeta,
}

impl TfimMethod {
    fn name(self) -> &'static str {
        match self {
            TfimMethod::Exact => "exact",
            TfimMethod::Mcmc => "mcmc",
            TfimMethod::Smallbeta => "smallbeta",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SweepFamily {
    Checkerboard,
    Toric,
    Tfd,
    Delta,
    Bell,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    params: serde_json::Value,
    seed: Option<u64>,
    version: String,
    timestamp_unix: u64,
}

impl RunManifest {
    fn new(subcommand: &str, params: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            params,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Writes CSV to `out` (or stdout) and the manifest sidecar next to it (or
/// to stderr).
fn emit(out: Option<&Path>, csv: &str, manifest: &RunManifest) -> CliResult<()> {
    let manifest_json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::numerical(format!("manifest serialization: {e}")))?;
    match out {
        Some(path) => {
            std::fs::write(path, csv)
                .map_err(|e| CliError::invalid(format!("writing {}: {e}", path.display())))?;
            let sidecar = manifest_path(path);
            std::fs::write(&sidecar, manifest_json)
                .map_err(|e| CliError::invalid(format!("writing {}: {e}", sidecar.display())))?;
        }
        None => {
            print!("{csv}");
            eprintln!("{manifest_json}");
        }
    }
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn parse_cut(cut: &str, n: usize) -> CliResult<Bipartition> {
    if cut == "mid" {
        return Ok(Bipartition::middle(n));
    }
    let a: Vec<usize> = cut
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::invalid(format!("bad cut {cut:?}: {e}")))?;
    let b: Vec<usize> = (0..n).filter(|i| !a.contains(i)).collect();
    Bipartition::new(n, a, b).map_err(|e| CliError::invalid(format!("bad cut: {e}")))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_cmi_stabilizer(
    system: Option<PathBuf>,
    toric: Option<usize>,
    cut: String,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let (sys, default_cut, source) = match (system, toric) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::invalid(format!("reading {}: {e}", path.display())))?;
            let desc: SystemDescription = serde_json::from_str(&text)
                .map_err(|e| CliError::invalid(format!("parsing {}: {e}", path.display())))?;
            let sys = desc
                .to_system()
                .map_err(|e| CliError::invalid(format!("bad system: {e}")))?;
            (sys, None, path.display().to_string())
        }
        (None, Some(l)) => {
            let t = families::build_toric(l)
                .map_err(|e| CliError::invalid(format!("bad toric size: {e}")))?;
            let cut = t.label_cut();
            (
                ZCheckSystem::homogeneous(t.plaquettes),
                Some(cut),
                format!("toric L={l}"),
            )
        }
        _ => return Err(CliError::invalid("provide exactly one of --system or --toric")),
    };
    let bipartition = if cut == "mid" {
        default_cut.unwrap_or_else(|| Bipartition::middle(sys.n()))
    } else {
        parse_cut(&cut, sys.n())?
    };
    let rank = stabilizer::cmi_rank_formula(&sys.m, &bipartition)
        .map_err(|e| CliError::numerical(format!("rank formula: {e}")))?;
    let mut csv = String::from("n,n_checks,method,cmi_bits\n");
    writeln!(
        csv,
        "{},{},rank_formula,{}",
        sys.n(),
        sys.m.rows(),
        rank.value_bits
    )
    .unwrap();
    match stabilizer::cmi_brute_force(&sys, &bipartition) {
        Ok(brute) => {
            writeln!(
                csv,
                "{},{},brute_force,{}",
                sys.n(),
                sys.m.rows(),
                brute.value_bits
            )
            .unwrap();
        }
        Err(stabilizer::StabError::SupportTooLarge(_)) => {}
        Err(stabilizer::StabError::Infeasible) => {
            return Err(CliError::invalid("infeasible syndrome"))
        }
        Err(e) => return Err(CliError::numerical(format!("brute force: {e}"))),
    }
    let manifest = RunManifest::new(
        "cmi-stabilizer",
        serde_json::json!({"source": source, "cut": cut}),
        None,
    );
    emit(out.as_deref(), &csv, &manifest)
}

fn cmd_scaling_curve(
    family: CurveFamily,
    gamma: f64,
    sizes: Vec<usize>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    if sizes.len() < 3 {
        return Err(CliError::invalid("need at least 3 sizes for a slope fit"));
    }
    let mut csv = String::from("family,L,gamma,cmi_bits,n_checks,n_crossing\n");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    match family {
        CurveFamily::Checkerboard => {
            let points = families::checkerboard_cmi_curve(gamma, &sizes, CutAxis::Vertical)
                .map_err(|e| CliError::invalid(format!("checkerboard: {e}")))?;
            for p in &points {
                writeln!(
                    csv,
                    "checkerboard,{},{},{},{},{}",
                    p.l, p.gamma, p.cmi_bits, p.n_checks, p.n_crossing
                )
                .unwrap();
                xs.push(p.l as f64);
                ys.push(p.cmi_bits);
            }
        }
        CurveFamily::Toric => {
            for &l in &sizes {
                let cmi = families::toric_cmi(l)
                    .map_err(|e| CliError::invalid(format!("toric L={l}: {e}")))?;
                writeln!(csv, "toric,{l},,{},{},", cmi.value_bits, l * l).unwrap();
                xs.push(l as f64);
                ys.push(cmi.value_bits);
            }
        }
        CurveFamily::SingleCheck => {
            for &n in &sizes {
                if n < 2 {
                    return Err(CliError::invalid("single-check sizes must be >= 2"));
                }
                let row = vec![1u8; n];
                let m = ampmi::gf2::Gf2Matrix::from_rows(n, &[row])
                    .map_err(|e| CliError::invalid(format!("{e}")))?;
                let sys = ZCheckSystem::homogeneous(m);
                let cmi = stabilizer::cmi_rank_formula(&sys.m, &Bipartition::middle(n))
                    .map_err(|e| CliError::numerical(format!("{e}")))?;
                writeln!(csv, "single-check,{n},,{},1,", cmi.value_bits).unwrap();
                xs.push(n as f64);
                ys.push(cmi.value_bits);
            }
        }
    }
    // Constant curves have zero slope by inspection; the log-log fit is
    // still well-defined as long as values are positive.
    let fit = families::log_log_slope(&xs, &ys);
    csv.push('\n');
    csv.push_str("fit,slope,slope_stderr,n_points\n");
    match fit {
        Some((slope, stderr)) => {
            writeln!(csv, "fit,{slope},{stderr},{}", xs.len()).unwrap();
        }
        None => {
            writeln!(csv, "fit,,,{}", xs.len()).unwrap();
        }
    }
    let manifest = RunManifest::new(
        "scaling-curve",
        serde_json::json!({"family": family, "gamma": gamma, "sizes": sizes}),
        None,
    );
    emit(out.as_deref(), &csv, &manifest)
}

#[allow(clippy::too_many_arguments)]
fn cmd_tfd_cmi(
    n: usize,
    beta: f64,
    j: f64,
    h: f64,
    ordering: OrderingArg,
    cut: String,
    samples: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let chain = BcsChain::new(n, j, h).map_err(|e| CliError::invalid(format!("{e}")))?;
    let tfd = fermion::build_tfd(&chain, beta)
        .map_err(|e| CliError::numerical(format!("building thermal double: {e}")))?;
    let cut_pos = if cut == "mid" {
        n
    } else {
        cut.parse::<usize>()
            .map_err(|e| CliError::invalid(format!("bad cut {cut:?}: {e}")))?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = fermion::tfd_cmi(&tfd, &ordering.to_ordering(), cut_pos, samples, &mut rng)
        .map_err(|e| match e {
            fermion::FermionError::BadCut { .. } => CliError::invalid(format!("{e}")),
            other => CliError::numerical(format!("{other}")),
        })?;
    let mut csv = String::from("n,beta,ordering,cmi_bits,stderr\n");
    writeln!(
        csv,
        "{n},{beta},{},{},{}",
        ordering.name(),
        result.cmi_bits,
        fmt_opt(result.stderr_bits)
    )
    .unwrap();
    let manifest = RunManifest::new(
        "tfd-cmi",
        serde_json::json!({
            "n": n, "beta": beta, "j": j, "h": h,
            "ordering": ordering.name(), "cut": cut, "samples": samples,
        }),
        Some(seed),
    );
    emit(out.as_deref(), &csv, &manifest)
}

#[allow(clippy::too_many_arguments)]
fn cmd_tfim_cmi(
    n: usize,
    beta: f64,
    j: f64,
    h: f64,
    method: TfimMethod,
    steps: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let model = TfimModel::new(n, j, h).map_err(|e| CliError::invalid(format!("{e}")))?;
    let (cmi_bits, stderr) = match method {
        TfimMethod::Exact => {
            let r = tfim::cmi_exact(&model, beta).map_err(|e| match e {
                tfim::TfimError::TooLarge { .. } | tfim::TfimError::BadBeta => {
                    CliError::invalid(format!("{e}"))
                }
                other => CliError::numerical(format!("{other}")),
            })?;
            (r.cmi_bits, r.stderr_bits)
        }
        TfimMethod::Mcmc => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let burn_in = steps / 10;
            let r = tfim::cmi_mcmc(&model, beta, steps, burn_in, &mut rng).map_err(|e| match e {
                tfim::TfimError::TooFewSteps { .. } | tfim::TfimError::BadBeta => {
                    CliError::invalid(format!("{e}"))
                }
                other => CliError::numerical(format!("{other}")),
            })?;
            (r.cmi_bits, r.stderr_bits)
        }
        TfimMethod::Smallbeta => {
            if beta <= 0.0 {
                return Err(CliError::invalid("smallbeta needs beta > 0"));
            }
            (tfim::small_beta_formula(n, beta, j, h), None)
        }
    };
    if !cmi_bits.is_finite() {
        return Err(CliError::numerical("non-finite CMI estimate"));
    }
    let mut csv = String::from("n,beta,j,h,method,cmi_bits,stderr\n");
    writeln!(
        csv,
        "{n},{beta},{j},{h},{},{cmi_bits},{}",
        method.name(),
        fmt_opt(stderr)
    )
    .unwrap();
    let manifest = RunManifest::new(
        "tfim-cmi",
        serde_json::json!({
            "n": n, "beta": beta, "j": j, "h": h,
            "method": method.name(), "steps": steps,
        }),
        Some(seed),
    );
    emit(out.as_deref(), &csv, &manifest)
}

fn get_param(params: &[String], key: &str) -> CliResult<Option<String>> {
    let mut found = None;
    for p in params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| CliError::invalid(format!("bad param {p:?}, expected key=value")))?;
        if k == key {
            found = Some(v.to_string());
        }
    }
    Ok(found)
}

fn get_f64_param(params: &[String], key: &str, default: f64) -> CliResult<f64> {
    match get_param(params, key)? {
        Some(v) => v
            .parse::<f64>()
            .map_err(|e| CliError::invalid(format!("bad {key}={v}: {e}"))),
        None => Ok(default),
    }
}

fn build_sweep_target(
    family: SweepFamily,
    size: usize,
    params: &[String],
) -> CliResult<Box<dyn TargetDistribution>> {
    match family {
        SweepFamily::Delta => Ok(Box::new(DeltaTarget { n: size })),
        SweepFamily::Bell => {
            if size < 2 || size % 2 != 0 {
                return Err(CliError::invalid("bell sizes must be even and >= 2"));
            }
            Ok(Box::new(BellPairChain::new(size)))
        }
        SweepFamily::Checkerboard => {
            let gamma = get_f64_param(params, "gamma", 1.0)?;
            let fam = families::build_checkerboard(size, gamma)
                .map_err(|e| CliError::invalid(format!("checkerboard L={size}: {e}")))?;
            let sys = families::checkerboard_zsystem(&fam);
            let target = StabilizerTarget::new(sys)
                .map_err(|e| CliError::numerical(format!("{e}")))?;
            Ok(Box::new(target))
        }
        SweepFamily::Toric => {
            let t = families::build_toric(size)
                .map_err(|e| CliError::invalid(format!("toric L={size}: {e}")))?;
            let target = StabilizerTarget::new(ZCheckSystem::homogeneous(t.plaquettes))
                .map_err(|e| CliError::numerical(format!("{e}")))?;
            Ok(Box::new(target))
        }
        SweepFamily::Tfd => {
            let beta = get_f64_param(params, "beta", 1.0)?;
            let j = get_f64_param(params, "j", 1.0)?;
            let h = get_f64_param(params, "h", 1.0)?;
            let ordering = match get_param(params, "ordering")?.as_deref() {
                None | Some("separate") => TfdOrdering::Separate,
                Some("alternate") => TfdOrdering::Alternate,
                Some(other) => {
                    return Err(CliError::invalid(format!("bad ordering {other:?}")))
                }
            };
            let chain = BcsChain::new(size, j, h).map_err(|e| CliError::invalid(format!("{e}")))?;
            let tfd = fermion::build_tfd(&chain, beta)
                .map_err(|e| CliError::numerical(format!("{e}")))?;
            Ok(Box::new(TfdTarget::new(tfd, ordering)))
        }
    }
}

fn write_checkpoint(dir: &Path, tag: &str, model: &ArnnModel) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::invalid(format!("creating {}: {e}", dir.display())))?;
    let (flat, shapes) = model.flat_params();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin_path = dir.join(format!("{tag}.f64le.bin"));
    std::fs::write(&bin_path, &bytes)
        .map_err(|e| CliError::invalid(format!("writing {}: {e}", bin_path.display())))?;
    let header = serde_json::json!({
        "n_sites": model.n_sites,
        "n_d": model.n_d,
        "dtype": "f64",
        "byte_order": "little",
        "layout": "column-major",
        "n_values": flat.len(),
        "tensors": shapes,
    });
    let header_path = dir.join(format!("{tag}.header.json"));
    std::fs::write(&header_path, serde_json::to_string_pretty(&header).unwrap())
        .map_err(|e| CliError::invalid(format!("writing {}: {e}", header_path.display())))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    family: SweepFamily,
    params: Vec<String>,
    sizes: Vec<usize>,
    widths: Vec<usize>,
    target_fid: f64,
    seeds: usize,
    learning_rate: f64,
    batch_size: usize,
    max_epochs: usize,
    seed: u64,
    checkpoint_dir: Option<PathBuf>,
    out: PathBuf,
) -> CliResult<()> {
    if widths.is_empty() || widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::invalid("widths must be ascending and nonempty"));
    }
    if sizes.is_empty() || seeds == 0 {
        return Err(CliError::invalid("need at least one size and one seed"));
    }
    if !(target_fid > 0.0 && target_fid <= 1.0) {
        return Err(CliError::invalid("target fidelity must lie in (0, 1]"));
    }
    let cfg = TrainConfig {
        learning_rate,
        batch_size,
        max_epochs,
        seeds_per_width: seeds,
        fidelity_target: target_fid,
        ..TrainConfig::default()
    };
    let mut csv = String::from("size,width,seed,final_fidelity,epochs,success\n");
    let mut summary: Vec<(usize, Option<usize>)> = Vec::new();
    for &size in &sizes {
        let target = build_sweep_target(family, size, &params)?;
        let mut n_d_min = None;
        for &width in &widths {
            let cell_seed = seed ^ ((size as u64) << 24) ^ ((width as u64) << 12);
            let runs: Vec<CliResult<(u64, f64, usize, bool, Option<ArnnModel>)>> = (0..seeds
                as u64)
                .into_par_iter()
                .map(|k| {
                    let (model, hist) = arnn::train(
                        target.as_ref(),
                        width,
                        &cfg,
                        cell_seed.wrapping_add(k),
                    )
                    .map_err(|e| CliError::numerical(format!("training: {e}")))?;
                    let best = hist
                        .fidelity_evals
                        .iter()
                        .map(|&(_, f)| f)
                        .fold(0.0f64, f64::max);
                    let keep = if hist.reached_target { Some(model) } else { None };
                    Ok((k, best, hist.epochs_run, hist.reached_target, keep))
                })
                .collect();
            let mut any_success = false;
            for run in runs {
                let (k, best, epochs, success, model) = run?;
                writeln!(csv, "{size},{width},{k},{best},{epochs},{success}").unwrap();
                if success {
                    any_success = true;
                    if let (Some(dir), Some(model)) = (&checkpoint_dir, model) {
                        write_checkpoint(dir, &format!("size{size}_w{width}_s{k}"), &model)?;
                    }
                }
            }
            if any_success {
                n_d_min = Some(width);
                break;
            }
        }
        eprintln!(
            "size {size}: n_d_min = {}",
            n_d_min.map(|w| w.to_string()).unwrap_or_else(|| "none".into())
        );
        summary.push((size, n_d_min));
    }
    let manifest = RunManifest::new(
        "sweep",
        serde_json::json!({
            "family": family, "params": params, "sizes": sizes, "widths": widths,
            "target_fid": target_fid, "seeds": seeds, "learning_rate": learning_rate,
            "batch_size": batch_size, "max_epochs": max_epochs,
            "n_d_min": summary.iter().map(|&(s, w)| (s.to_string(), w)).collect::<std::collections::BTreeMap<_, _>>(),
        }),
        Some(seed),
    );
    emit(Some(&out), &csv, &manifest)?;
    if summary.iter().any(|&(_, w)| w.is_none()) {
        return Err(CliError {
            code: EXIT_SWEEP_NO_WIDTH,
            message: "no tested width reached the fidelity target for at least one size".into(),
        });
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::CmiStabilizer {
            system,
            toric,
            cut,
            out,
        } => cmd_cmi_stabilizer(system, toric, cut, out),
        Cmd::ScalingCurve {
            family,
            gamma,
            sizes,
            out,
        } => cmd_scaling_curve(family, gamma, sizes, out),
        Cmd::TfdCmi {
            n,
            beta,
            j,
            h,
            ordering,
            cut,
            samples,
            seed,
            out,
        } => cmd_tfd_cmi(n, beta, j, h, ordering, cut, samples, seed, out),
        Cmd::TfimCmi {
            n,
            beta,
            j,
            h,
            method,
            steps,
            seed,
            out,
        } => cmd_tfim_cmi(n, beta, j, h, method, steps, seed, out),
        Cmd::Sweep {
            family,
            params,
            sizes,
            widths,
            target_fid,
            seeds,
            learning_rate,
            batch_size,
            max_epochs,
            seed,
            checkpoint_dir,
            out,
        } => cmd_sweep(
            family,
            params,
            sizes,
            widths,
            target_fid,
            seeds,
            learning_rate,
            batch_size,
            max_epochs,
            seed,
            checkpoint_dir,
            out,
        ),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
