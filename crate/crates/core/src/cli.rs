//! Command-line front end. Data artifacts go to files; progress, fit
//! reports and evaluation tables go to standard error or standard output.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::block::RowBlock;
use crate::elliptical::MixingFamily;
use crate::em::{fit_online, kneedle_xy, spectral_init, FitConfig, FitReport, InitSpec, LearningRateSchedule};
use crate::error::{Error, ErrorClass, Result};
use crate::io::{
    compress, generate_synthetic, load_model, sample_row_indices, save_model, CompressOptions, CompressedDictionary,
    DictionaryReader, SyntheticSpec,
};
use crate::matching::{
    full_match, mae, match_compressed, read_results, write_results, CompressedMatchOptions, FullMatchOptions,
};
use crate::mixture::HdMedModel;
use crate::projection::reconstruction_rmse;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

const SHUFFLE_CHUNK_ROWS: usize = 256;
const SHUFFLE_POOL_CHUNKS: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "hdmed", version, about = "Mixture-based compression and matching of large signal dictionaries")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dictionary from a TOML spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a mixture to a dictionary.
    Fit {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        k: usize,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Write the per-step fit report here as well as to stderr.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit a range of K and tabulate BIC.
    Select {
        #[command(flatten)]
        fit: FitArgs,
        /// Comma-separated component counts.
        #[arg(long, value_delimiter = ',', required = true)]
        k_list: Vec<usize>,
        /// Output table (tab-separated).
        #[arg(long)]
        out: PathBuf,
    },
    /// Project every dictionary row onto its cluster's latent coordinates.
    Compress {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scale signals to unit norm before assignment and projection.
        #[arg(long)]
        normalize: bool,
    },
    /// Match queries against a compressed dictionary.
    Match {
        #[arg(long)]
        compressed: PathBuf,
        /// Query signals, stored as a dictionary file.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of most probable clusters to search.
        #[arg(long, default_value_t = 1)]
        top_clusters: usize,
    },
    /// Exhaustive matching against the full dictionary.
    FullMatch {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        normalize: bool,
    },
    /// Parameter errors between match results, or dictionary reconstruction error.
    Eval {
        /// Match result files; give two to compare them, or one with --ref.
        #[arg(long, num_args = 1)]
        matched: Vec<PathBuf>,
        /// Dictionary file holding the reference parameters of the queries.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Dictionary for reconstruction error (with --model).
        #[arg(long, requires = "model")]
        dict: Option<PathBuf>,
        #[arg(long, requires = "dict")]
        model: Option<PathBuf>,
    },
    /// Describe a dictionary, model or compressed dictionary file.
    Info { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Student,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
    pub family: FamilyArg,
    /// Initial degrees of freedom for the Student family.
    #[arg(long, default_value_t = 10.0)]
    pub nu: f64,
    /// Mini-batch size.
    #[arg(long, default_value_t = 2048)]
    pub batch: usize,
    /// Learning-rate decay exponent, in (0.5, 1].
    #[arg(long, default_value_t = 0.6)]
    pub kappa: f64,
    /// Learning-rate step offset.
    #[arg(long, default_value_t = 2.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 1)]
    pub passes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rows sampled for initialization.
    #[arg(long, default_value_t = 5000)]
    pub init_rows: usize,
    /// Upper bound on cluster intrinsic dimension.
    #[arg(long, default_value_t = 64)]
    pub d_max: usize,
    /// Knee detection sensitivity.
    #[arg(long, default_value_t = 1.0)]
    pub sensitivity: f64,
}

impl FitArgs {
    pub fn config(&self, k: usize) -> Result<FitConfig> {
        let family = match self.family {
            FamilyArg::Gaussian => MixingFamily::Gaussian,
            FamilyArg::Student => MixingFamily::student(self.nu)?,
        };
        let cfg = FitConfig {
            k,
            family,
            batch_size: self.batch,
            passes: self.passes,
            schedule: LearningRateSchedule::new(self.kappa, self.offset)?,
            init: InitSpec {
                subsample: self.init_rows,
                sensitivity: self.sensitivity,
                d_max: self.d_max,
                ..InitSpec::default()
            },
            seed: self.seed,
            ..FitConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Spectral initialization on a seeded subsample, then online EM over the
/// whole store read in shuffled order.
pub fn fit_dictionary(store: &DictionaryReader, cfg: &FitConfig) -> Result<(HdMedModel, FitReport)> {
    cfg.validate()?;
    let rows = sample_row_indices(store.rows(), cfg.init.subsample, cfg.seed);
    if rows.len() <= cfg.k {
        return Err(Error::InvalidArgument(format!("{} rows are too few for K = {}", rows.len(), cfg.k)));
    }
    let sub = store.read_signal_rows(&rows)?;
    let init = spectral_init(&sub, cfg.k, cfg.family, &cfg.init, cfg.seed)?;
    let mut signals = store.shuffled_signals(SHUFFLE_CHUNK_ROWS, SHUFFLE_POOL_CHUNKS, cfg.seed)?;
    fit_online(&mut signals, cfg, init.model)
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file", path.display()),
        )));
    }
    Ok(())
}

fn require_out(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: output directory does not exist", parent.display()),
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn dims_histogram(dims: &[usize]) -> Vec<(usize, usize)> {
    let mut hist: Vec<(usize, usize)> = Vec::new();
    let mut sorted = dims.to_vec();
    sorted.sort_unstable();
    for d in sorted {
        match hist.last_mut() {
            Some((v, c)) if *v == d => *c += 1,
            _ => hist.push((d, 1)),
        }
    }
    hist
}

fn print_model(model: &HdMedModel, out: &mut impl Write) -> Result<()> {
    writeln!(out, "K\t{}", model.n_components())?;
    writeln!(out, "M\t{}", model.dim())?;
    let family = match model.components()[0].mixing() {
        MixingFamily::Gaussian => "gaussian".to_string(),
        MixingFamily::Student { nu } => format!("student (nu of component 0 = {nu:.4})"),
    };
    writeln!(out, "family\t{family}")?;
    writeln!(out, "free_parameters\t{}", model.free_parameter_count())?;
    writeln!(out, "component\tweight\td\tb")?;
    for (k, (c, w)) in model.components().iter().zip(model.weights()).enumerate() {
        writeln!(out, "{k}\t{w:.6}\t{}\t{:.6e}", c.intrinsic_dim(), c.b())?;
    }
    writeln!(out, "d\tclusters")?;
    for (d, c) in dims_histogram(&model.intrinsic_dims()) {
        writeln!(out, "{d}\t{c}")?;
    }
    Ok(())
}

fn info(path: &Path, out: &mut impl Write) -> Result<()> {
    require_file(path)?;
    let mut magic = [0u8; 4];
    std::io::Read::read_exact(&mut File::open(path)?, &mut magic)
        .map_err(|_| Error::Format("file too short to identify".into()))?;
    match &magic {
        b"HDMD" => {
            let r = DictionaryReader::open(path)?;
            let h = r.header();
            writeln!(out, "kind\tdictionary")?;
            writeln!(out, "N\t{}\nM\t{}\nL\t{}\ndtype\t{:?}", h.n, h.m, h.l, h.dtype)?;
        }
        b"HDMM" => {
            writeln!(out, "kind\tmodel")?;
            print_model(&load_model(path)?, out)?;
        }
        b"HDMC" => {
            let cd = CompressedDictionary::load(path)?;
            writeln!(out, "kind\tcompressed")?;
            writeln!(out, "N\t{}\nL\t{}\ndtype\t{:?}\nnormalized\t{}", cd.n_total(), cd.n_params(), cd.dtype(), cd.normalized())?;
            writeln!(out, "compression_ratio\t{:.4}", cd.compression_ratio())?;
            writeln!(out, "cluster_rows\t{}", cd.counts().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","))?;
            print_model(cd.model(), out)?;
        }
        _ => return Err(Error::Format(format!("{}: unrecognized file type", path.display()))),
    }
    Ok(())
}

fn fit_summary(report: &FitReport) {
    eprintln!(
        "fit: {} training rows, {} held out, {} steps, {} repairs, {} reseeds",
        report.observations,
        report.heldout_rows,
        report.rows.len(),
        report.repairs.len(),
        report.reseeded.len()
    );
    if let Some(last) = report.rows.last() {
        eprintln!("fit: final held-out log-likelihood per row {:.6e}", last.heldout_loglik);
    }
}

fn select(fit: &FitArgs, k_list: &[usize], out: &Path) -> Result<()> {
    let store = DictionaryReader::open(&fit.dict)?;
    let mut ks = k_list.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::InvalidArgument("K values must be positive".into()));
    }
    let mut table = Vec::new();
    for &k in &ks {
        let cfg = fit.config(k)?;
        let (model, _) = fit_dictionary(&store, &cfg)?;
        let mut signals = store.signals()?;
        let (ll, n) = model.log_likelihood_counted(&mut signals)?;
        let bic = -2.0 * ll + model.free_parameter_count() as f64 * (n as f64).ln();
        eprintln!("select: K = {k}, BIC = {bic:.6e}");
        table.push((k, ll, model.free_parameter_count(), bic));
    }
    let mut w = create(out)?;
    writeln!(w, "k\tloglik\tfree_parameters\tbic")?;
    for (k, ll, p, bic) in &table {
        writeln!(w, "{k}\t{ll:.10e}\t{p}\t{bic:.10e}")?;
    }
    w.flush()?;
    let min = table.iter().min_by(|a, b| a.3.total_cmp(&b.3)).map(|t| t.0).unwrap_or(ks[0]);
    println!("bic_minimum\t{min}");
    if table.len() >= 3 {
        let x: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
        let mut running = f64::INFINITY;
        let y: Vec<f64> = table
            .iter()
            .map(|t| {
                running = running.min(t.3);
                running
            })
            .collect();
        match kneedle_xy(&x, &y, fit.sensitivity)? {
            Some(i) => println!("bic_elbow\t{}", ks[i]),
            None => println!("bic_elbow\tnone"),
        }
    }
    Ok(())
}

fn read_params(path: &Path) -> Result<RowBlock> {
    let results = read_results(BufReader::new(File::open(path)?))?;
    let l = results.first().map_or(0, |r| r.params.len());
    let mut out = RowBlock::with_capacity(l, results.len());
    for r in &results {
        out.push_row(&r.params)?;
    }
    Ok(out)
}

fn eval(matched: &[PathBuf], reference: Option<&Path>, dict: Option<&Path>, model: Option<&Path>) -> Result<()> {
    for p in matched.iter().map(PathBuf::as_path).chain(reference).chain(dict).chain(model) {
        require_file(p)?;
    }
    let mut did = false;
    if !matched.is_empty() {
        let (est, reference) = match (matched, reference) {
            ([a], Some(r)) => (read_params(a)?, DictionaryReader::open(r)?.read_all()?.1),
            ([a, b], None) => (read_params(a)?, read_params(b)?),
            _ => return Err(Error::InvalidArgument("give two --matched files, or one with --ref".into())),
        };
        let errs = mae(&est, &reference)?;
        println!("parameter\tmae");
        for (i, e) in errs.iter().enumerate() {
            println!("t_{i}\t{e:.10e}");
        }
        did = true;
    }
    if let (Some(d), Some(m)) = (dict, model) {
        let store = DictionaryReader::open(d)?;
        let model = load_model(m)?;
        let mut signals = store.signals()?;
        let rmse = reconstruction_rmse(&model, &mut signals)?;
        let mut norm_sum = 0.0;
        for chunk in store.chunks(8192)? {
            norm_sum += chunk?.signals.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>();
        }
        let mean_norm = norm_sum / store.rows() as f64;
        println!("reconstruction_rmse\t{rmse:.10e}");
        println!("mean_signal_norm\t{mean_norm:.10e}");
        println!("relative_rmse\t{:.10e}", rmse / mean_norm);
        did = true;
    } else if reference.is_some() && matched.is_empty() {
        return Err(Error::InvalidArgument("--ref needs --matched".into()));
    }
    if !did {
        return Err(Error::InvalidArgument("nothing to evaluate: give --matched or --dict with --model".into()));
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen { spec, out } => {
            require_file(&spec)?;
            require_out(&out)?;
            let spec = SyntheticSpec::from_toml(&std::fs::read_to_string(&spec)?)?;
            let r = generate_synthetic(&spec, &out)?;
            let h = r.header();
            eprintln!("gen: wrote {} rows (M = {}, L = {}) to {}", h.n, h.m, h.l, out.display());
        }
        Command::Fit { fit, k, out, report } => {
            require_file(&fit.dict)?;
            require_out(&out)?;
            if let Some(r) = &report {
                require_out(r)?;
            }
            let cfg = fit.config(k)?;
            let store = DictionaryReader::open(&fit.dict)?;
            let (model, rep) = fit_dictionary(&store, &cfg)?;
            save_model(&out, &model)?;
            rep.write_table(std::io::stderr().lock())?;
            if let Some(r) = report {
                let mut w = create(&r)?;
                rep.write_table(&mut w)?;
                w.flush()?;
            }
            fit_summary(&rep);
            eprintln!("fit: intrinsic dimensions {:?}", model.intrinsic_dims());
        }
        Command::Select { fit, k_list, out } => {
            require_file(&fit.dict)?;
            require_out(&out)?;
            select(&fit, &k_list, &out)?;
        }
        Command::Compress { dict, model, out, normalize } => {
            require_file(&dict)?;
            require_file(&model)?;
            require_out(&out)?;
            let store = DictionaryReader::open(&dict)?;
            let model = load_model(&model)?;
            let cd = compress(&store, &model, &CompressOptions { normalize, ..CompressOptions::default() })?;
            cd.save(&out)?;
            eprintln!("compress: {} rows, compression ratio {:.3}", cd.n_total(), cd.compression_ratio());
        }
        Command::Match { compressed, queries, out, top_clusters } => {
            require_file(&compressed)?;
            require_file(&queries)?;
            require_out(&out)?;
            let cd = CompressedDictionary::load(&compressed)?;
            let (q, _) = DictionaryReader::open(&queries)?.read_all()?;
            let res = match_compressed(&cd, &q, &CompressedMatchOptions { top_clusters })?;
            let mut w = create(&out)?;
            write_results(&mut w, &res.results)?;
            let fallbacks = res.results.iter().filter(|r| r.fallback).count();
            eprintln!("match: {} queries, {} multiply-adds, {fallbacks} fallbacks", q.rows(), res.multiply_adds);
        }
        Command::FullMatch { dict, queries, out, normalize } => {
            require_file(&dict)?;
            require_file(&queries)?;
            require_out(&out)?;
            let store = DictionaryReader::open(&dict)?;
            let (q, _) = DictionaryReader::open(&queries)?.read_all()?;
            let res = full_match(&store, &q, &FullMatchOptions { normalize, ..FullMatchOptions::default() })?;
            let mut w = create(&out)?;
            write_results(&mut w, &res.results)?;
            eprintln!("full-match: {} queries, {} multiply-adds", q.rows(), res.multiply_adds);
        }
        Command::Eval { matched, reference, dict, model } => {
            eval(&matched, reference.as_deref(), dict.as_deref(), model.as_deref())?;
        }
        Command::Info { path } => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            info(&path, &mut lock)?;
        }
    }
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
