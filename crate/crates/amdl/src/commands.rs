//! The pipeline steps behind each subcommand. Results go to files and
//! stdout; progress goes to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use amdl_core::data::{generate_synthetic, preprocess, DatasetContainer, Normalization, Prepared, Split, SynthKind};
use amdl_core::model::{count_params, BaseNetwork, DomainAdapterSet};
use amdl_core::policy::{AccuracyTable, BestRow, ReportRow};
use amdl_core::rng::derive_seed;
use amdl_core::train::{evaluate, train_base, train_domain, Adapted, EpochRecord, Strategy, TrainHooks};

use crate::checkpoint::{self, SavedBase};
use crate::error::{AppError, AppResult};
use crate::report::{self, EvalRow, ReportDocument, Results};
use crate::run_config::RunConfig;
use crate::{dataset, history};

/// Batch size used for evaluation passes.
pub const EVAL_BATCH: usize = 64;

pub const BASE_FILE: &str = "base.amdl";
pub const BASE_HISTORY: &str = "base.history.csv";

struct Progress {
    start: Instant,
    label: String,
}

impl TrainHooks for Progress {
    fn elapsed_secs(&self) -> Option<f64> {
        Some(self.start.elapsed().as_secs_f64())
    }

    fn on_epoch(&mut self, r: &EpochRecord) {
        let acc: Vec<String> = r.val_acc.iter().map(|a| format!("{:.3}", a)).collect();
        eprintln!("[{}] epoch {:>3} lr {} val acc {} ({:.0}s)", self.label, r.epoch, r.lr, acc.join("/"), self.start.elapsed().as_secs_f64());
    }
}

fn create_dir(dir: &Path) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn pct(correct: usize, total: usize) -> f64 {
    correct as f64 * 100.0 / total as f64
}

pub struct GenData {
    pub kind: SynthKind,
    /// Output prefix; defaults to the kind name.
    pub name: Option<String>,
    pub sizes: [usize; 3],
    pub seed: u64,
    pub image_size: usize,
    pub out: PathBuf,
}

/// Writes `{name}.{train,val,test}.amds`.
pub fn gen_data(args: &GenData) -> AppResult<Vec<PathBuf>> {
    let splits = generate_synthetic(args.kind, args.sizes, args.seed, args.image_size)?;
    create_dir(&args.out)?;
    let name = args.name.clone().unwrap_or_else(|| args.kind.name().into());
    let mut paths = Vec::new();
    for d in &splits {
        let p = dataset::split_path(&args.out, &name, d.split);
        dataset::write(&p, d)?;
        println!("{}: {} images {}x{}x{}, {} classes, {}", p.display(), d.len(), d.height, d.width, d.channels, d.num_classes, d.provenance);
        paths.push(p);
    }
    Ok(paths)
}

fn load_split(dir: &Path, name: &str, split: Split) -> AppResult<DatasetContainer> {
    let d = dataset::read(&dataset::split_path(dir, name, split))?;
    if d.split != split {
        return Err(AppError::usage(format!("{name}: file for the {} split is tagged {}", split.name(), d.split.name())));
    }
    Ok(d)
}

fn prepare(d: &DatasetContainer, base_channels: usize, target: (usize, usize), norm: &Normalization) -> AppResult<Prepared<f32>> {
    if d.channels != base_channels {
        return Err(AppError::usage(format!("dataset has {} channels, network expects {base_channels}", d.channels)));
    }
    Ok(preprocess(d, target, norm)?)
}

/// Trains a base network on dataset `name` under `cfg.data`, freezes it
/// and writes `base.amdl` plus `base.history.csv` into `cfg.out`.
pub fn cmd_train_base(cfg: &RunConfig, name: &str) -> AppResult<SavedBase> {
    let data = cfg.existing_path("data")?;
    let out = cfg.path("out")?;
    let net = cfg.network()?;
    let train_cfg = cfg.train()?;
    let target = (net.input_height, net.input_width);
    let train = load_split(&data, name, Split::Train)?;
    let val = load_split(&data, name, Split::Val)?;
    let norm = Normalization::fit(&train, target)?;
    let tr = prepare(&train, net.in_channels, target, &norm)?;
    let va = prepare(&val, net.in_channels, target, &norm)?;
    let mut base = BaseNetwork::<f32>::build(&net, train.num_classes as usize, derive_seed(train_cfg.seed, "base/init"))?;
    let mut hooks = Progress { start: Instant::now(), label: format!("base:{name}") };
    let hist = train_base(&mut base, &tr, &va, &train_cfg, &mut hooks)?;
    base.freeze();
    create_dir(&out)?;
    checkpoint::write(&out.join(BASE_FILE), &checkpoint::base_checkpoint(&base, &norm))?;
    history::write(&out.join(BASE_HISTORY), &hist)?;
    if let Some(last) = hist.last() {
        println!("base {name}: final val accuracy {:.2}%", last.val_acc[0] * 100.0);
    }
    Ok(SavedBase { base, norm })
}

/// Name a trained configuration goes by in results and reports.
pub fn config_name(domain: &DomainAdapterSet<f32>, strategy: Strategy) -> String {
    let mut s = domain.topology.tag();
    match strategy {
        Strategy::Joint => {}
        Strategy::Blockwise => s.push_str("-B"),
        Strategy::ExitsOnly => s.push_str("-exits"),
    }
    if !domain.adapt && strategy != Strategy::ExitsOnly {
        s.push_str("-noadapt");
    }
    s
}

/// Per-exit accuracy rows for an adapted network on `data`.
pub fn eval_rows(base: &BaseNetwork<f32>, domain: &mut DomainAdapterSet<f32>, data: &Prepared<f32>, config: &str) -> AppResult<Vec<EvalRow>> {
    let ledger = count_params(base, Some(domain));
    let name = domain.domain.clone();
    let ev = evaluate(&mut Adapted { base, domain }, data, EVAL_BATCH)?;
    Ok(ev
        .correct
        .iter()
        .enumerate()
        .map(|(i, &c)| EvalRow {
            domain: name.clone(),
            config: config.into(),
            exit: i + 1,
            accuracy: pct(c, ev.total),
            params: ledger.cumulative[i],
            param_fraction: ledger.fraction_at(i + 1),
        })
        .collect())
}

pub fn print_eval(rows: &[EvalRow]) {
    for r in rows {
        println!("{} {} exit {}: accuracy {:.2}% params {} ({:.2}%)", r.domain, r.config, r.exit, r.accuracy, r.params, r.param_fraction * 100.0);
    }
}

/// Attaches domain `name` to the frozen base at `cfg.base` and trains it.
///
/// Writes into `cfg.out`: `{name}.amdl` (best-validation bundle),
/// `{name}.final.amdl`, `{name}.history.csv` and `{name}.eval.csv`
/// (test accuracy of the best bundle per exit).
pub fn cmd_train_domain(cfg: &RunConfig, name: &str) -> AppResult<Vec<EvalRow>> {
    let base_path = cfg.existing_path("base")?;
    let data = cfg.existing_path("data")?;
    let out = cfg.path("out")?;
    let mut train_cfg = cfg.train()?;
    let SavedBase { base, .. } = checkpoint::load_base(&base_path)?;
    if !base.is_frozen() {
        return Err(AppError::usage(format!("{}: base network is not frozen", base_path.display())));
    }
    let target = (base.config.input_height, base.config.input_width);
    let [train, val, test] = Split::ALL.map(|s| load_split(&data, name, s));
    let (train, val, test) = (train?, val?, test?);
    let norm = Normalization::fit(&train, target)?;
    let [tr, va, te] = [&train, &val, &test].map(|d| prepare(d, base.config.in_channels, target, &norm));
    let (tr, va, te) = (tr?, va?, te?);

    let adapt = cfg.adapt()? && train_cfg.strategy != Strategy::ExitsOnly;
    train_cfg.seed = derive_seed(train_cfg.seed, &format!("domain/{name}"));
    let mut domain = DomainAdapterSet::attach(&base, name, train.num_classes as usize, cfg.topology(name)?, adapt, derive_seed(train_cfg.seed, "init"))?;
    let mut hooks = Progress { start: Instant::now(), label: name.into() };
    let outcome = train_domain(&base, &mut domain, &tr, &va, &train_cfg, &mut hooks)?;
    if !base.verify_frozen() {
        return Err(AppError::usage("base network changed during domain training"));
    }

    create_dir(&out)?;
    checkpoint::write(&out.join(format!("{name}.final.amdl")), &checkpoint::bundle_checkpoint(&domain, &norm))?;
    domain.store.load_from(&outcome.best)?;
    checkpoint::write(&out.join(format!("{name}.amdl")), &checkpoint::bundle_checkpoint(&domain, &norm))?;
    history::write(&out.join(format!("{name}.history.csv")), &outcome.history)?;
    let config = config_name(&domain, train_cfg.strategy);
    let rows = eval_rows(&base, &mut domain, &te, &config)?;
    report::write_eval(&out.join(format!("{name}{}", report::EVAL_SUFFIX)), &rows)?;
    print_eval(&rows);
    Ok(rows)
}

pub struct Evaluate {
    pub bundle: Option<PathBuf>,
    pub domain: String,
    pub split: Split,
    pub config_name: Option<String>,
    pub out: Option<PathBuf>,
}

/// Per-exit accuracy of a bundle (or of the base alone, one exit) on one
/// split of dataset `args.domain` under `cfg.data`.
pub fn cmd_evaluate(cfg: &RunConfig, args: &Evaluate) -> AppResult<Vec<EvalRow>> {
    let data = cfg.existing_path("data")?;
    let SavedBase { mut base, norm: base_norm } = checkpoint::load_base(&cfg.existing_path("base")?)?;
    let target = (base.config.input_height, base.config.input_width);
    let split = load_split(&data, &args.domain, args.split)?;
    let rows = match &args.bundle {
        Some(path) => {
            if !path.exists() {
                return Err(AppError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
            let saved = checkpoint::load_bundle(path, &base)?;
            let mut domain = saved.domain;
            let prepared = prepare(&split, base.config.in_channels, target, &saved.norm)?;
            let config = args.config_name.clone().unwrap_or_else(|| domain.topology.tag());
            eval_rows(&base, &mut domain, &prepared, &config)?
        }
        None => {
            let prepared = prepare(&split, base.config.in_channels, target, &base_norm)?;
            let ledger = count_params(&base, None);
            let ev = evaluate(&mut base, &prepared, EVAL_BATCH)?;
            vec![EvalRow {
                domain: args.domain.clone(),
                config: args.config_name.clone().unwrap_or_else(|| "base".into()),
                exit: base.config.num_blocks,
                accuracy: pct(ev.correct[0], ev.total),
                params: ledger.base_total,
                param_fraction: 1.0,
            }]
        }
    };
    if let Some(out) = &args.out {
        report::write_eval(out, &rows)?;
    }
    print_eval(&rows);
    Ok(rows)
}

/// Where selection reads its candidates from.
pub enum Source {
    Fixture,
    Results(PathBuf),
}

pub fn parse_fixture_name(name: &str) -> AppResult<Source> {
    match name {
        "table2" => Ok(Source::Fixture),
        _ => Err(AppError::usage(format!("unknown fixture '{name}' (table2)"))),
    }
}

fn selection(source: &Source, t: f64) -> AppResult<(BestRow, Vec<ReportRow>)> {
    match source {
        Source::Fixture => {
            let best = report::select(&AccuracyTable::table2(), t)?;
            let rows = report::fixture_report(&best)?;
            Ok((best, rows))
        }
        Source::Results(dir) => {
            if !dir.exists() {
                return Err(AppError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")));
            }
            let results: Results = report::load_results(dir)?;
            let best = report::select(&results.table, t)?;
            let rows = report::live_report(&results, &best);
            Ok((best, rows))
        }
    }
}

/// Prints the selected exit per domain and the mean accuracy.
pub fn cmd_select(source: &Source, t: f64) -> AppResult<BestRow> {
    let (best, _) = selection(source, t)?;
    println!("threshold T = {t}");
    for r in &best.results {
        println!(
            "{}: exit {} ({}) accuracy {:.2} baseline {:.2} loss {:.2} [{}]",
            r.domain,
            r.exit,
            r.config,
            r.accuracy,
            r.baseline,
            r.loss,
            r.difficulty.name()
        );
    }
    println!("mean accuracy {:.3}", best.mean);
    Ok(best)
}

/// Writes `report.csv` and `report.json` into `out`.
pub fn cmd_report(source: &Source, t: f64, out: &Path) -> AppResult<ReportDocument> {
    let (_, rows) = selection(source, t)?;
    let doc = ReportDocument::new(t, &rows);
    create_dir(out)?;
    let csv_path = out.join("report.csv");
    fs::write(&csv_path, doc.to_csv()).map_err(|e| AppError::io(&csv_path, e))?;
    let json_path = out.join("report.json");
    fs::write(&json_path, doc.to_json()).map_err(|e| AppError::io(&json_path, e))?;
    for r in &doc.rows {
        println!("{}: exit {} ({}) accuracy {:.2} params {} ({:.2}%) [{}]", r.domain, r.exit, r.config, r.accuracy, r.params, r.param_fraction * 100.0, r.difficulty);
    }
    println!("mean accuracy {:.3}; wrote {} and {}", doc.totals.mean_accuracy, csv_path.display(), json_path.display());
    Ok(doc)
}
