//! The `plotnet` command line.
//!
//! Every subcommand prints a human summary, or with `--json` the same
//! document the service returns for the equivalent request. Failures exit
//! with status 1 and, under `--json`, print the service's error document.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use plotnet_core::inference::{filter_log, init_belief, smooth, BeliefState, MixtureBelief};
use plotnet_core::interventions::Replacement;
use plotnet_core::learning::{update_from_designed_samples, update_from_incidents, DesignedSample, DirichletSet};
use plotnet_core::library::{diff, Library, NoveltyDeclaration, Side};
use plotnet_core::model::{Partition, PlotModel};
use plotnet_core::simulate::{simulate_batch, SimulationConfig};

use crate::api::{single, BeliefView, EntryReceipt, PriorSpec, SessionState, WhatIfQuery, STATE_FORMAT};
use crate::format::{
    check_format, export_document, load_archive, load_library_dir, load_model, read_json, read_log, save_archive,
    save_library_dir, save_model, to_canonical, write_atomic, ArchiveManifest, PriorsDocument,
};
use crate::service::{serve, ApiError, Service};
use crate::session::what_if;

#[derive(Parser, Debug)]
#[command(name = "plotnet", version, about = "Plot-model inference, learning and decision scoring")]
pub struct Cli {
    /// Print machine-readable JSON instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PriorArg {
    /// First active phase, tasks idle.
    Entered,
    Inactive,
    Uniform,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SideArg {
    A,
    B,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Side {
        match s {
            SideArg::A => Side::A,
            SideArg::B => Side::B,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a model file and report every violation.
    Validate { model: PathBuf },
    /// Simulate incidents into an archive directory.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        horizon: Option<u32>,
        /// Reveal phases and tasks and emit a `t = 0` record.
        #[arg(long)]
        court_report: bool,
        #[arg(long, default_value_t = 0.0)]
        missing_rate: f64,
        /// Run under a catalogue decision from slice `--force-at`.
        #[arg(long)]
        force: Option<String>,
        #[arg(long, default_value_t = 1, requires = "force")]
        force_at: u32,
        #[arg(long)]
        initial_phase: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered beliefs for every slice of a log.
    Filter {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "entered")]
        prior: PriorArg,
    },
    /// Smoothed phase marginals for every slice of a log.
    Smooth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "entered")]
        prior: PriorArg,
    },
    /// Rank decisions by subjective expected utility, after filtering a
    /// log or from an exported session state.
    Score {
        #[arg(long, required_unless_present = "state", requires = "log")]
        model: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["model", "log"])]
        state: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "entered")]
        prior: PriorArg,
        #[arg(long)]
        utility: String,
        #[arg(long)]
        horizon: u32,
        /// Restrict to these decisions; do-nothing is always scored.
        #[arg(long = "decision")]
        decisions: Vec<String>,
    },
    /// Update Dirichlet hyperparameters from completed incidents or designed
    /// samples.
    Learn {
        #[arg(long)]
        model: PathBuf,
        /// Archive directory or single JSONL log.
        #[arg(long, required_unless_present = "designed", conflicts_with = "designed")]
        archive: Option<PathBuf>,
        /// JSON list of designed samples.
        #[arg(long)]
        designed: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "b")]
        side: SideArg,
        /// Starting hyperparameters; symmetric `--alpha` when absent.
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Where to write the posterior hyperparameters.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the posterior-mean model here.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Add a model to a library directory, creating it if needed.
    LibAdd {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// `vertex=partition` tags to set before adding.
        #[arg(long = "declare", value_parser = parse_declaration)]
        declare: Vec<(String, Partition)>,
        /// Side of a newly created library.
        #[arg(long, value_enum, default_value = "b")]
        side: SideArg,
    },
    /// Differences between two libraries.
    LibDiff { a: PathBuf, b: PathBuf },
    /// Draft a new entry from a graph, copying shared tables.
    LibSeed {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a sanitized export with every secure table replaced.
    LibSanitize {
        #[arg(long)]
        library: PathBuf,
        /// JSON map from `entry/vertex` to replacement table.
        #[arg(long)]
        dummies: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, env = "PLOTNET_TOKEN", hide_env_values = true)]
        token: String,
        #[arg(long, value_enum, default_value = "b")]
        side: SideArg,
        /// Library to start from when the data directory has none.
        #[arg(long)]
        library: Option<PathBuf>,
    },
}

fn parse_declaration(s: &str) -> Result<(String, Partition), String> {
    let (vertex, tag) = s.split_once('=').ok_or("expected vertex=partition")?;
    let tag = serde_json::from_value(Value::String(tag.into())).map_err(|_| format!("unknown partition `{tag}`"))?;
    Ok((vertex.into(), tag))
}

/// What a subcommand produced: a JSON document and its text rendering.
pub struct Output {
    pub json: Value,
    pub text: String,
}

fn output(doc: &impl Serialize, text: String) -> Output {
    Output { json: serde_json::to_value(doc).expect("documents serialize"), text }
}

fn prior_spec(p: PriorArg) -> PriorSpec {
    match p {
        PriorArg::Entered => PriorSpec::Entered,
        PriorArg::Inactive => PriorSpec::Inactive,
        PriorArg::Uniform => PriorSpec::Uniform,
    }
}

fn model_at(path: &Path) -> Result<PlotModel, ApiError> {
    Ok(load_model(path)?.model)
}

fn belief_rows(views: &[BeliefView]) -> String {
    let Some(first) = views.first() else { return String::new() };
    let mut out = format!("{:>4}  {}\n", "t", first.phases.iter().map(|l| format!("{l:>12}")).collect::<String>());
    for v in views {
        out.push_str(&format!(
            "{:>4}  {}\n",
            v.t,
            v.phase_marginal.iter().map(|p| format!("{p:>12.6}")).collect::<String>()
        ));
    }
    out
}

fn filtered(model: &PlotModel, log: &Path, prior: PriorArg) -> Result<(BeliefState, Vec<BeliefView>), ApiError> {
    let records = read_log(log)?;
    let start = init_belief(model, &prior_spec(prior).to_prior(model).map_err(ApiError::bad_request)?)
        .map_err(crate::session::SessionError::from)?;
    let key = model.category.key.clone();
    let models = std::slice::from_ref(model);
    let mut views = vec![BeliefView::of(models, &single(&key, start.clone()), 0.0, None)];
    let steps = filter_log(model, &start, &records).map_err(crate::session::SessionError::from)?;
    for s in &steps {
        views.push(BeliefView::of(
            models,
            &single(&key, s.belief.clone()),
            s.belief.log_likelihood,
            Some(s.log_evidence),
        ));
    }
    let last = steps.last().map_or(start, |s| s.belief.clone());
    Ok((last, views))
}

#[derive(Serialize)]
struct ValidationDocument {
    model: String,
    valid: bool,
    phases: usize,
    tasks: usize,
    intensities: usize,
    renormalized: Vec<plotnet_core::model::Renormalization>,
}

#[derive(Serialize)]
struct SmoothedDocument {
    phases: Vec<String>,
    slices: Vec<SmoothedSlice>,
}

#[derive(Serialize)]
struct SmoothedSlice {
    t: u32,
    phase_marginal: Vec<f64>,
}

#[derive(Serialize)]
struct LearnDocument {
    model: String,
    incidents: usize,
    updated_rows: Vec<crate::format::PriorRow>,
}

#[derive(Serialize)]
struct SeedDocument {
    model: String,
    prefilled: Vec<String>,
    pending: BTreeMap<Partition, Vec<String>>,
}

pub fn run(cli: Cli) -> Result<Output, ApiError> {
    match cli.command {
        Command::Validate { model } => {
            let loaded = load_model(&model)?;
            let m = &loaded.model;
            let doc = ValidationDocument {
                model: m.id.clone(),
                valid: true,
                phases: m.phase_count(),
                tasks: m.tasks.len(),
                intensities: m.channels.len(),
                renormalized: loaded.renormalized,
            };
            let mut text = format!(
                "{}: valid ({} phases, {} tasks, {} intensities)\n",
                doc.model, doc.phases, doc.tasks, doc.intensities
            );
            for r in &doc.renormalized {
                text.push_str(&format!("  renormalized {} (sum was {})\n", r.location, r.sum));
            }
            Ok(output(&doc, text))
        }
        Command::Simulate {
            model,
            seed,
            count,
            horizon,
            court_report,
            missing_rate,
            force,
            force_at,
            initial_phase,
            out,
        } => {
            let m = model_at(&model)?;
            let mut config = SimulationConfig::new(seed);
            config.horizon = horizon;
            config.court_report = court_report;
            config.missing_rate = missing_rate;
            config.initial_phase = initial_phase;
            if let Some(d) = force {
                config = config.force(d, force_at);
            }
            let archive =
                simulate_batch(&m, count, &config).map_err(|e| ApiError::new(422, "simulation", e.to_string()))?;
            save_archive(&out, &m.id, &archive)?;
            let manifest: ArchiveManifest = read_json(&out.join("manifest.json"))?;
            let text = format!("wrote {count} incident(s) of `{}` to {}\n", m.id, out.display());
            Ok(output(&manifest, text))
        }
        Command::Filter { model, log, prior } => {
            let m = model_at(&model)?;
            let (_, views) = filtered(&m, &log, prior)?;
            let text = belief_rows(&views);
            Ok(output(&views, text))
        }
        Command::Smooth { model, log, prior } => {
            let m = model_at(&model)?;
            let records = read_log(&log)?;
            let start = init_belief(&m, &prior_spec(prior).to_prior(&m).map_err(ApiError::bad_request)?)
                .map_err(crate::session::SessionError::from)?;
            let s = smooth(&m, &start, &records).map_err(crate::session::SessionError::from)?;
            let doc = SmoothedDocument {
                phases: m.phases.labels().to_vec(),
                slices: s
                    .filtered
                    .iter()
                    .zip(&s.phase)
                    .map(|(f, p)| SmoothedSlice { t: f.belief.t, phase_marginal: p.clone() })
                    .collect(),
            };
            let views: Vec<BeliefView> = doc
                .slices
                .iter()
                .map(|s| BeliefView {
                    session: None,
                    t: s.t,
                    phases: doc.phases.clone(),
                    phase_marginal: s.phase_marginal.clone(),
                    tasks: Vec::new(),
                    categories: Vec::new(),
                    log_likelihood: 0.0,
                    log_evidence: None,
                    state_hash: String::new(),
                })
                .collect();
            Ok(output(&doc, belief_rows(&views)))
        }
        Command::Score { model, log, state, prior, utility, horizon, decisions } => {
            let query = WhatIfQuery { decisions: (!decisions.is_empty()).then_some(decisions), utility, horizon };
            let (models, belief): (Vec<PlotModel>, MixtureBelief) = match (state, model, log) {
                (Some(path), _, _) => {
                    let s: SessionState = read_json(&path)?;
                    check_format(STATE_FORMAT, &s.format)?;
                    let models = s.models.iter().map(|d| Ok(d.to_model()?.model)).collect::<Result<_, ApiError>>()?;
                    (models, s.belief)
                }
                (None, Some(model), Some(log)) => {
                    let m = model_at(&model)?;
                    let (last, _) = filtered(&m, &log, prior)?;
                    let key = m.category.key.clone();
                    (vec![m], single(&key, last))
                }
                _ => return Err(ApiError::bad_request("give --state, or --model with --log")),
            };
            let result = what_if(&models, &belief, &query)?;
            let mut text = format!("t={} utility={} horizon={}\n", result.t, result.utility, result.horizon);
            for s in &result.ranking {
                text.push_str(&format!("  {:<24} {:>14.9}\n", s.id, s.score));
            }
            Ok(output(&result, text))
        }
        Command::Learn { model, archive, designed, side, priors, alpha, out, model_out } => {
            let m = model_at(&model)?;
            let start = match &priors {
                Some(p) => read_json::<PriorsDocument>(p)?.to_set(&m)?,
                None if alpha > 0.0 && alpha.is_finite() => DirichletSet::symmetric(&m, alpha),
                None => return Err(ApiError::bad_request("--alpha must be positive")),
            };
            let (update, n) = match (archive, designed) {
                (Some(a), _) => {
                    let incidents = load_archive(&a)?;
                    (update_from_incidents(&start, &incidents, &m), incidents.len())
                }
                (None, Some(d)) => {
                    let samples: Vec<DesignedSample> = read_json(&d)?;
                    (update_from_designed_samples(&start, &samples, &m, side.into()), samples.len())
                }
                (None, None) => return Err(ApiError::bad_request("give --archive or --designed")),
            };
            let update = update.map_err(crate::session::SessionError::from)?;
            let touched: BTreeMap<_, _> =
                update.updated_rows().into_iter().map(|k| (k, update.posterior.alpha[&k].clone())).collect();
            let counts =
                update.counts.iter().filter(|(k, _)| touched.contains_key(k)).map(|(k, v)| (*k, v.clone())).collect();
            let rows = PriorsDocument::from_set(&m, &DirichletSet { alpha: touched, counts }).rows;
            if let Some(path) = &out {
                write_atomic(path, &to_canonical(&PriorsDocument::from_set(&m, &update.posterior)))?;
            }
            if let Some(path) = &model_out {
                save_model(path, &update.posterior.posterior_model(&m))?;
            }
            let doc = LearnDocument { model: m.id.clone(), incidents: n, updated_rows: rows };
            let text = format!("{}: {} input(s), {} row(s) updated\n", doc.model, n, doc.updated_rows.len());
            Ok(output(&doc, text))
        }
        Command::LibAdd { library, model, declare, side } => {
            let mut lib = if library.join("index.json").exists() || library.is_file() {
                load_library_dir(&library)?
            } else {
                Library::new(side.into())
            };
            let m = model_at(&model)?;
            let id = m.id.clone();
            let declaration: NoveltyDeclaration = declare.into_iter().collect();
            let novelty = lib.add_entry(m, &declaration)?;
            save_library_dir(&library, &lib)?;
            let receipt = EntryReceipt { id, novelty };
            let mut text = format!("added `{}`\n", receipt.id);
            for (tag, names) in &receipt.novelty {
                let names: Vec<&str> = names.iter().map(String::as_str).collect();
                text.push_str(&format!("  new {}: {}\n", tag.as_str(), names.join(", ")));
            }
            Ok(output(&receipt, text))
        }
        Command::LibDiff { a, b } => {
            let d = diff(&load_library_dir(&a)?, &load_library_dir(&b)?);
            let text = if d.is_empty() {
                "libraries are equal\n".to_string()
            } else {
                format!("{}\n", to_canonical(&d).trim_end())
            };
            Ok(output(&d, text))
        }
        Command::LibSeed { library, graph, out } => {
            let lib = load_library_dir(&library)?;
            let draft = lib.seed_entry(&model_at(&graph)?);
            save_model(&out, &draft.model)?;
            let doc = SeedDocument {
                model: draft.model.id.clone(),
                prefilled: draft.prefilled.into_iter().collect(),
                pending: draft.pending.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect(),
            };
            let mut text = format!(
                "draft `{}` written to {}\n  prefilled: {}\n",
                doc.model,
                out.display(),
                doc.prefilled.join(", ")
            );
            for (tag, names) in &doc.pending {
                text.push_str(&format!("  to elicit ({}): {}\n", tag.as_str(), names.join(", ")));
            }
            Ok(output(&doc, text))
        }
        Command::LibSanitize { library, dummies, out } => {
            let mut lib = load_library_dir(&library)?;
            if let Some(path) = dummies {
                let map: BTreeMap<String, Replacement> = read_json(&path)?;
                for (key, table) in map {
                    lib.register_dummy(key, table)?;
                }
            }
            let export = lib.sanitize_export()?;
            write_atomic(&out, &export_document(&export))?;
            let text = format!(
                "sanitized export written to {} ({} table(s) replaced)\n",
                out.display(),
                export.manifest.len()
            );
            Ok(output(&export.manifest, text))
        }
        Command::Serve { data, addr, token, side, library } => {
            if token.is_empty() {
                return Err(ApiError::bad_request("the service token must not be empty"));
            }
            let seed = library.map(|p| load_library_dir(&p)).transpose()?;
            let service = Service::open(&data, &token, side.into(), seed)?;
            let runtime = tokio::runtime::Runtime::new().map_err(ApiError::internal)?;
            runtime.block_on(serve(service, addr)).map_err(ApiError::internal)?;
            Ok(Output { json: Value::Null, text: String::new() })
        }
    }
}

/// Parses arguments, runs and prints; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                print!("{}", to_canonical(&out.json));
            } else {
                print!("{}", out.text);
            }
            0
        }
        Err(e) => {
            if json {
                print!("{}", to_canonical(&e.body));
            } else {
                eprintln!("error: {}", e.body.error.message);
                if let Some(d) = &e.body.error.details {
                    eprintln!("{}", to_canonical(d).trim_end());
                }
            }
            1
        }
    }
}
