//! Command-line front end for the arborescence laboratory.
//!
//! Every randomized subcommand takes an explicit `--seed` and is fully
//! deterministic given it. Results are written as JSON (or CSV where noted)
//! to `--out`, or stdout when omitted. Failures exit nonzero with a
//! machine-readable JSON error on stderr:
//!   0 success, 2 validation failure, 3 budget exceeded, 4 stage failure.

use std::fs;
use std::path::PathBuf;

use arborlab::generators::{
    gen_hard_instance, gen_maxkcover_instance, gen_planted, gen_random_layered, provenance_json,
};
use arborlab::lll::{round_single_source, trace_jsonl, LllError, PATH_BUDGET};
use arborlab::local_search::{solve_multi_source, LsConfig, LsError, POTENTIAL_CSV_HEADER};
use arborlab::model::{
    is_valid_solution, global_congestion, InstanceJson, LayeredInstance, ParamProfile,
    SolutionForest, SolutionJson, VertexId,
};
use arborlab::oracle::{
    brute_force_opt, brute_force_single_source, halved_randomized_rounding,
    naive_randomized_rounding, sink_congestion_stats, OracleError,
};
use arborlab::path_lp::{enumerate_paths, max_feasible_k, uniform_path_solution, PathLpError};
use arborlab::pruning::{bottom_to_top_prune, local_to_global, PruneError};
use arborlab::reductions::{from_layered, remove_congestion, to_layered};
use arborlab::sparsifier::sparsify;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const EXIT_VALIDATION: i32 = 2;
const EXIT_BUDGET: i32 = 3;
const EXIT_STAGE: i32 = 4;

struct CliError {
    message: String,
    code: i32,
    stage: &'static str,
}

impl CliError {
    fn validation(stage: &'static str, message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: EXIT_VALIDATION, stage }
    }
    fn budget(stage: &'static str, message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: EXIT_BUDGET, stage }
    }
    fn stage(stage: &'static str, message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: EXIT_STAGE, stage }
    }

    fn from_lll(stage: &'static str, e: LllError) -> Self {
        let code = match &e {
            LllError::Lp(PathLpError::PathBudgetExceeded(_)) => EXIT_BUDGET,
            LllError::ResampleCapExceeded { .. } => EXIT_BUDGET,
            LllError::InfeasibleK { .. } => EXIT_VALIDATION,
            _ => EXIT_STAGE,
        };
        CliError { message: e.to_string(), code, stage }
    }

    fn from_lp(stage: &'static str, e: PathLpError) -> Self {
        match e {
            PathLpError::PathBudgetExceeded(_) => Self::budget(stage, e.to_string()),
            PathLpError::MultiSource(_) | PathLpError::DegenerateK => {
                Self::validation(stage, e.to_string())
            }
            PathLpError::Simplex(_) => Self::stage(stage, e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "arborlab", version, about = "max-min degree arborescence laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance.
    Gen {
        #[command(subcommand)]
        what: GenCmd,
    },
    /// Exhaustive max-min degree search on a small instance.
    Oracle {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        depth_cap: usize,
        #[arg(long, default_value_t = 5_000_000)]
        node_cap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the path LP: largest feasible fractional degree plus a witness.
    Lp {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sparsify the LP witness into a low-granularity weighted multiset.
    Sparsify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Round a single-source instance: LP, sparsifier, resampled rounding,
    /// deletion, and the bottom-to-top prune.
    Round {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        resample_cap: usize,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional JSONL per-layer trace destination.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Bottom-to-top pruning of a flagged solution forest.
    Prune {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON array of booleans, one per node; defaults to all-false.
        #[arg(long)]
        flags: Option<PathBuf>,
        #[arg(long)]
        ell: u32,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-source local search over an exact single-source oracle.
    Localsearch {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        alpha: usize,
        #[arg(long, default_value_t = 10_000)]
        step_cap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full chain: layer reduction, LP, sparsify, round, local-to-global,
    /// congestion removal, verification.
    Pipeline {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        resample_cap: usize,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a solution against an instance; exit 0 iff valid.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        congestion: usize,
        #[arg(long, default_value_t = false)]
        exact_degree: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized-rounding baselines over the uniform fractional solution.
    Baseline {
        #[command(subcommand)]
        which: BaselineCmd,
    },
    /// Batched experiments producing plot-ready tables.
    Experiment {
        #[command(subcommand)]
        which: ExperimentCmd,
    },
}

#[derive(Subcommand)]
enum GenCmd {
    /// Random layered DAG with i.i.d. edges between consecutive layers.
    Random {
        #[arg(long)]
        h: usize,
        /// Comma-separated layer widths, h+1 entries.
        #[arg(long, value_delimiter = ',')]
        widths: Vec<usize>,
        #[arg(long)]
        edge_prob: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Disjoint planted degree-k arborescences plus cross noise.
    Planted {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        h: usize,
        #[arg(long, default_value_t = 1)]
        sources: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hard instance: complete inner tree, sinks sub-select leaves top-down.
    Hard {
        #[arg(long)]
        h: usize,
        #[arg(long)]
        branch: usize,
        #[arg(long)]
        select_inv: usize,
        #[arg(long)]
        sinks: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Max-k-cover reduction instance with k disjoint covering sets (a YES
    /// instance by construction). Deterministic.
    Maxkcover {
        #[arg(long)]
        universe: usize,
        #[arg(long)]
        k: usize,
        /// Total number of sets; the first k form a disjoint cover and the
        /// rest are cyclic shifts. Defaults to k.
        #[arg(long)]
        sets: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BaselineCmd {
    /// Draw k children per open path, proportional to the witness.
    Naive {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Same sampler at k/2 draws per open path.
    Halved {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Naive-vs-halved sink congestion sweep over instance heights.
    Gapsweep {
        #[arg(long)]
        h_min: usize,
        #[arg(long)]
        h_max: usize,
        #[arg(long, default_value_t = 64)]
        branch: usize,
        #[arg(long, default_value_t = 8)]
        select_inv: usize,
        #[arg(long, default_value_t = 64)]
        sinks: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        format: OutFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

/// Profile selection shared by the randomized stages. Precedence, highest
/// first: individual flags, `--config` JSON file, the named preset.
#[derive(Args)]
struct ProfileArgs {
    /// Preset name: desk-small or paper-default.
    #[arg(long, default_value = "desk-small")]
    profile: String,
    /// JSON file overriding any subset of the profile fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ell: Option<u32>,
    #[arg(long)]
    l_local: Option<usize>,
    #[arg(long)]
    k_global: Option<usize>,
    #[arg(long)]
    granularity_base: Option<u64>,
    #[arg(long)]
    sample_children: Option<usize>,
    #[arg(long)]
    retain_children: Option<usize>,
    #[arg(long)]
    b1_slack: Option<f64>,
    #[arg(long)]
    mark_frac_denom: Option<u32>,
    #[arg(long)]
    mark_threshold_denom: Option<f64>,
}

impl ProfileArgs {
    fn resolve(&self, n: usize, k: usize) -> CliResult<ParamProfile> {
        let base = ParamProfile::by_name(&self.profile, n, k).ok_or_else(|| {
            CliError::validation("config", format!("unknown profile '{}'", self.profile))
        })?;
        let mut value = serde_json::to_value(&base)
            .map_err(|e| CliError::stage("config", e.to_string()))?;
        if let Some(path) = &self.config {
            let text = read_text("config", path)?;
            let overrides: Value = serde_json::from_str(&text).map_err(|e| {
                CliError::validation("config", format!("bad config file: {e}"))
            })?;
            let obj = overrides.as_object().ok_or_else(|| {
                CliError::validation("config", "config file must be a JSON object")
            })?;
            let target = value.as_object_mut().expect("profile serializes to an object");
            for (key, v) in obj {
                if !target.contains_key(key) {
                    return Err(CliError::validation(
                        "config",
                        format!("unknown profile field '{key}' in config file"),
                    ));
                }
                target.insert(key.clone(), v.clone());
            }
        }
        let mut profile: ParamProfile = serde_json::from_value(value)
            .map_err(|e| CliError::validation("config", format!("bad config value: {e}")))?;
        if let Some(v) = self.ell {
            profile.ell = v;
        }
        if let Some(v) = self.l_local {
            profile.l_local = v;
        }
        if let Some(v) = self.k_global {
            profile.k_global = v;
        }
        if let Some(v) = self.granularity_base {
            profile.granularity_base = v;
        }
        if let Some(v) = self.sample_children {
            profile.sample_children = v;
        }
        if let Some(v) = self.retain_children {
            profile.retain_children = v;
        }
        if let Some(v) = self.b1_slack {
            profile.b1_slack = v;
        }
        if let Some(v) = self.mark_frac_denom {
            profile.mark_frac_denom = v;
        }
        if let Some(v) = self.mark_threshold_denom {
            profile.mark_threshold_denom = v;
        }
        profile
            .validate()
            .map_err(|e| CliError::validation("config", e))?;
        Ok(profile)
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!(
            "{}",
            json!({ "error": e.message, "code": e.code, "stage": e.stage })
        );
        std::process::exit(e.code);
    }
}

fn read_text(stage: &'static str, path: &PathBuf) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::validation(stage, format!("cannot read {}: {e}", path.display())))
}

fn read_instance(path: &PathBuf) -> CliResult<InstanceJson> {
    let text = read_text("input", path)?;
    let json: InstanceJson = serde_json::from_str(&text)
        .map_err(|e| CliError::validation("input", format!("bad instance JSON: {e}")))?;
    Ok(json)
}

/// Parses the instance and produces a layered view, inserting the
/// layer-reduction step when the input carries no layer structure.
fn read_layered(path: &PathBuf) -> CliResult<(InstanceJson, LayeredInstance)> {
    let json = read_instance(path)?;
    let li = match json
        .to_layered()
        .map_err(|e| CliError::validation("input", e))?
    {
        Some(li) => li,
        None => to_layered(&json.to_instance()).0,
    };
    Ok((json, li))
}

fn read_solution(path: &PathBuf) -> CliResult<SolutionForest> {
    let text = read_text("input", path)?;
    let json: SolutionJson = serde_json::from_str(&text)
        .map_err(|e| CliError::validation("input", format!("bad solution JSON: {e}")))?;
    SolutionForest::from_json(&json).map_err(|e| CliError::validation("input", e))
}

fn write_out(out: &Option<PathBuf>, text: &str) -> CliResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| {
            CliError::stage("output", format!("cannot write {}: {e}", path.display()))
        }),
        None => {
            use std::io::Write;
            // Tolerate a closed pipe (e.g. `arborlab ... | head`).
            let _ = writeln!(std::io::stdout(), "{text}");
            Ok(())
        }
    }
}

fn write_json(out: &Option<PathBuf>, value: &Value) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::stage("output", e.to_string()))?;
    text.push('\n');
    write_out(out, text.trim_end())
}

fn min_open_degree(sol: &SolutionForest) -> usize {
    sol.nodes()
        .filter(|(_, n)| !n.children.is_empty())
        .map(|(_, n)| n.children.len())
        .min()
        .unwrap_or(0)
}

fn run(cli: Cli) -> CliResult {
    match cli.cmd {
        Cmd::Gen { what } => run_gen(what),
        Cmd::Oracle { input, depth_cap, node_cap, out } => {
            let inst = read_instance(&input)?.to_instance();
            let (k_opt, witness) = brute_force_opt(&inst, depth_cap, node_cap).map_err(|e| {
                match e {
                    OracleError::BudgetExceeded(_) => CliError::budget("oracle", e.to_string()),
                    OracleError::TooManyVertices(_) => {
                        CliError::validation("oracle", e.to_string())
                    }
                }
            })?;
            write_json(
                &out,
                &json!({ "k_opt": k_opt, "witness": witness.to_json() }),
            )
        }
        Cmd::Lp { input, out } => {
            let (_, li) = read_layered(&input)?;
            let (k_max, pi, x) = max_feasible_k::<f64>(&li, PATH_BUDGET, 1e-9)
                .map_err(|e| CliError::from_lp("lp", e))?;
            write_json(
                &out,
                &json!({
                    "k_max": k_max,
                    "path_count": pi.len(),
                    "x": x.values,
                }),
            )
        }
        Cmd::Sparsify { input, k, seed, profile, out } => {
            let (_, li) = read_layered(&input)?;
            let (k_max, pi, x) = max_feasible_k::<f64>(&li, PATH_BUDGET, 1e-9)
                .map_err(|e| CliError::from_lp("lp", e))?;
            let k = k.unwrap_or(k_max);
            if k > k_max || k == 0 {
                return Err(CliError::validation(
                    "sparsify",
                    format!("requested k={k} outside feasible range 1..={k_max}"),
                ));
            }
            let prof = profile.resolve(li.base.vertex_count as usize, k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ms = sparsify(&pi, &x, &li, k, &prof, &mut rng, 20)
                .map_err(|e| CliError::stage("sparsify", e.to_string()))?;
            write_json(
                &out,
                &json!({
                    "profile": prof,
                    "k": k,
                    "seed": seed,
                    "multiset": ms.to_json(),
                }),
            )
        }
        Cmd::Round { input, k, seed, resample_cap, profile, out, trace } => {
            let (_, li) = read_layered(&input)?;
            let (k_max, _, _) = max_feasible_k::<f64>(&li, PATH_BUDGET, 1e-9)
                .map_err(|e| CliError::from_lp("lp", e))?;
            let k = k.unwrap_or(k_max);
            let prof = profile.resolve(li.base.vertex_count as usize, k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (sol, report) = round_single_source(&li, k, &prof, &mut rng, resample_cap)
                .map_err(|e| CliError::from_lll("round", e))?;
            if let Some(path) = trace {
                write_out(&Some(path), &trace_jsonl(&report.trace))?;
            }
            write_json(
                &out,
                &json!({
                    "profile": prof,
                    "k": report.k,
                    "seed": seed,
                    "solution": sol.to_json(),
                    "marked_nodes": report.marked_nodes,
                    "r_size": report.r_size,
                    "degree": min_open_degree(&sol),
                    "max_global_congestion": global_congestion(&sol).max_global,
                }),
            )
        }
        Cmd::Prune { input, flags, ell, k, out } => {
            let sol = read_solution(&input)?;
            let flagged: Vec<bool> = match flags {
                Some(path) => {
                    let text = read_text("input", &path)?;
                    serde_json::from_str(&text).map_err(|e| {
                        CliError::validation("input", format!("bad flags JSON: {e}"))
                    })?
                }
                None => vec![false; sol.len()],
            };
            if flagged.len() != sol.len() {
                return Err(CliError::validation(
                    "prune",
                    format!("{} flags for {} nodes", flagged.len(), sol.len()),
                ));
            }
            let (pruned, trace) =
                bottom_to_top_prune(&sol, &flagged, ell, k).map_err(|e| match e {
                    PruneError::PremiseViolated { .. } => {
                        CliError::validation("prune", e.to_string())
                    }
                    PruneError::IterationCap { .. } => CliError::budget("prune", e.to_string()),
                })?;
            write_json(
                &out,
                &json!({
                    "solution": pruned.to_json(),
                    "degree": min_open_degree(&pruned),
                    "trace": trace
                        .iter()
                        .map(|r| serde_json::to_value(r).unwrap())
                        .collect::<Vec<_>>(),
                }),
            )
        }
        Cmd::Localsearch { input, k, alpha, step_cap, out } => {
            let (_, li) = read_layered(&input)?;
            let height = li.height() as usize;
            let mut oracle = |sub: &LayeredInstance, s: VertexId| {
                brute_force_single_source(&sub.base, s, height, 5_000_000)
                    .ok()
                    .map(|(_, witness)| witness)
            };
            let (sol, report) = solve_multi_source(&li, k, &mut oracle, alpha, LsConfig::desk(), step_cap)
                .map_err(|e| match e {
                    LsError::StepCapExceeded(..) => CliError::budget("localsearch", e.to_string()),
                    _ => CliError::stage("localsearch", e.to_string()),
                })?;
            let mut csv = String::from(POTENTIAL_CSV_HEADER);
            for row in &report.trace {
                csv.push('\n');
                csv.push_str(&format!(
                    "{},{},{:?},{}",
                    row.step, row.target, row.ring_sizes, row.action
                ));
            }
            write_json(
                &out,
                &json!({
                    "k": k,
                    "alpha": alpha,
                    "solution": sol.to_json(),
                    "steps": report.steps,
                    "degree": min_open_degree(&sol),
                    "trace_csv": csv,
                }),
            )
        }
        Cmd::Pipeline { input, k, seed, resample_cap, profile, out } => {
            run_pipeline(input, k, seed, resample_cap, profile, out)
        }
        Cmd::Verify { input, solution, k, congestion, exact_degree, out } => {
            let inst = read_instance(&input)?.to_instance();
            let sol = read_solution(&solution)?;
            let outcome = is_valid_solution(&inst, &sol, k, congestion, exact_degree);
            write_json(
                &out,
                &json!({
                    "ok": outcome.ok,
                    "reasons": outcome.reasons,
                    "flags": outcome.flags,
                }),
            )?;
            if outcome.ok {
                Ok(())
            } else {
                Err(CliError::validation("verify", outcome.reasons.join("; ")))
            }
        }
        Cmd::Baseline { which } => run_baseline(which),
        Cmd::Experiment { which } => run_experiment(which),
    }
}

fn run_gen(what: GenCmd) -> CliResult {
    match what {
        GenCmd::Random { h, widths, edge_prob, seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let li = gen_random_layered(h, &widths, edge_prob, &mut rng)
                .map_err(|e| CliError::validation("gen", e.to_string()))?;
            let json = provenance_json(
                &li,
                "random",
                json!({ "h": h, "widths": widths, "edge_prob": edge_prob }),
                Some(seed),
            );
            write_json(&out, &serde_json::to_value(&json).unwrap())
        }
        GenCmd::Planted { k, h, sources, noise, seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (li, planted_k) = gen_planted(k, h, sources, noise, &mut rng);
            let mut json = provenance_json(
                &li,
                "planted",
                json!({ "k": k, "h": h, "sources": sources, "noise": noise }),
                Some(seed),
            );
            if let Some(Value::Object(obj)) = json.provenance.as_mut() {
                obj.insert("planted_k".into(), json!(planted_k));
            }
            write_json(&out, &serde_json::to_value(&json).unwrap())
        }
        GenCmd::Hard { h, branch, select_inv, sinks, seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let li = gen_hard_instance(h, branch, select_inv, sinks, &mut rng);
            let json = provenance_json(
                &li,
                "hard",
                json!({ "h": h, "branch": branch, "select_inv": select_inv, "sinks": sinks }),
                Some(seed),
            );
            write_json(&out, &serde_json::to_value(&json).unwrap())
        }
        GenCmd::Maxkcover { universe, k, sets, out } => {
            if k == 0 || universe % k != 0 {
                return Err(CliError::validation(
                    "gen",
                    format!("k={k} must be positive and divide the universe {universe}"),
                ));
            }
            let set_size = universe / k;
            let count = sets.unwrap_or(k).max(k);
            let sets: Vec<Vec<usize>> = (0..count)
                .map(|i| (0..set_size).map(|j| (i * set_size + j) % universe).collect())
                .collect();
            let inst = gen_maxkcover_instance(universe, &sets, k)
                .map_err(|e| CliError::validation("gen", e.to_string()))?;
            let mut json = InstanceJson::from_instance(&inst);
            json.provenance = Some(json!({
                "generator": "maxkcover",
                "params": { "universe": universe, "k": k, "sets": sets },
                "seed": Value::Null,
            }));
            write_json(&out, &serde_json::to_value(&json).unwrap())
        }
    }
}

fn run_pipeline(
    input: PathBuf,
    k: Option<usize>,
    seed: u64,
    resample_cap: usize,
    profile: ProfileArgs,
    out: Option<PathBuf>,
) -> CliResult {
    // Stage 1: layer reduction (identity when already layered), then the LP.
    let json = read_instance(&input)?;
    let flat = json.to_instance();
    let (li, copy_map) = match json
        .to_layered()
        .map_err(|e| CliError::validation("input", e))?
    {
        Some(li) => {
            let identity: Vec<(VertexId, u32)> = (0..li.base.vertex_count)
                .map(|v| (v, li.layer_of(v)))
                .collect();
            (li, identity)
        }
        None => to_layered(&flat),
    };
    let (k_max, _, _) = max_feasible_k::<f64>(&li, PATH_BUDGET, 1e-9)
        .map_err(|e| CliError::from_lp("lp", e))?;
    let k = k.unwrap_or(k_max);
    if k == 0 || k > k_max {
        return Err(CliError::validation(
            "lp",
            format!("requested k={k} outside feasible range 1..={k_max}"),
        ));
    }
    let prof = profile.resolve(li.base.vertex_count as usize, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Stages 2-5: sparsify + rounding + prune live inside round_single_source.
    let (rounded, report) = round_single_source(&li, k, &prof, &mut rng, resample_cap)
        .map_err(|e| CliError::from_lll("round", e))?;

    // Stage 6: local congestion to global congestion.
    let round_degree = min_open_degree(&rounded);
    let (low_global, ltg_report) =
        local_to_global(&rounded, round_degree, &prof, &mut rng, resample_cap).map_err(|e| {
            match e {
                PruneError::IterationCap { .. } => CliError::budget("local-to-global", e.to_string()),
                PruneError::PremiseViolated { .. } => {
                    CliError::stage("local-to-global", e.to_string())
                }
            }
        })?;

    // Stage 7: trade the remaining congestion for degree.
    let degree = min_open_degree(&low_global);
    let cong = global_congestion(&low_global).max_global.max(1);
    let clean = remove_congestion(&low_global, degree, cong)
        .map_err(|e| CliError::stage("remove-congestion", e.to_string()))?;
    let final_degree = degree / cong;

    // Stage 8: map back to the original vertices and verify.
    let mapped = from_layered(&clean, &copy_map)
        .map_err(|e| CliError::stage("unlayer", e.to_string()))?;
    let outcome = is_valid_solution(&flat, &mapped, final_degree, 1, false);
    let final_cong = global_congestion(&mapped).max_global;
    let result = json!({
        "profile": prof,
        "seed": seed,
        "k_lp": report.k,
        "degree": final_degree,
        "congestion": final_cong,
        "valid": outcome.ok,
        "reasons": outcome.reasons,
        "ltg_bound": ltg_report.a,
        "solution": mapped.to_json(),
    });
    write_json(&out, &result)?;
    println!("degree={final_degree} congestion={final_cong}");
    if outcome.ok {
        Ok(())
    } else {
        Err(CliError::validation("verify", outcome.reasons.join("; ")))
    }
}

fn run_baseline(which: BaselineCmd) -> CliResult {
    let (input, k, seed, out, halved) = match which {
        BaselineCmd::Naive { input, k, seed, out } => (input, k, seed, out, false),
        BaselineCmd::Halved { input, k, seed, out } => (input, k, seed, out, true),
    };
    let (_, li) = read_layered(&input)?;
    // The baselines only use sibling-relative weights, so the closed-form
    // uniform solution stands in for the simplex on large structured inputs.
    let pi = enumerate_paths(&li, 4 * PATH_BUDGET).map_err(|e| CliError::from_lp("lp", e))?;
    let x = uniform_path_solution::<f64>(&pi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sol = if halved {
        halved_randomized_rounding(&pi, &li, &x, k, &mut rng)
    } else {
        naive_randomized_rounding(&pi, &li, &x, k, &mut rng)
    };
    let stats = sink_congestion_stats(&sol, &li.base);
    write_json(
        &out,
        &json!({
            "variant": if halved { "halved" } else { "naive" },
            "k": k,
            "seed": seed,
            "sink_stats": stats,
            "solution": sol.to_json(),
        }),
    )
}

struct GapRow {
    h: usize,
    trial: usize,
    seed: u64,
    naive_mean: f64,
    halved_mean: f64,
    naive_max: usize,
    halved_max: usize,
    selected_sinks: usize,
}

fn gapsweep_trial(
    h: usize,
    branch: usize,
    select_inv: usize,
    sinks: usize,
    trial: usize,
    seed: u64,
) -> GapRow {
    let mut inst_rng = ChaCha8Rng::seed_from_u64(seed);
    let li = gen_hard_instance(h, branch, select_inv, sinks, &mut inst_rng);
    let pi = enumerate_paths(&li, usize::MAX).expect("uncapped enumeration cannot fail");
    let x = uniform_path_solution::<f64>(&pi);
    let k = branch / select_inv;
    let mut naive_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut halved_rng = naive_rng.clone();
    let naive = sink_congestion_stats(
        &naive_randomized_rounding(&pi, &li, &x, k, &mut naive_rng),
        &li.base,
    );
    let halved = sink_congestion_stats(
        &halved_randomized_rounding(&pi, &li, &x, k, &mut halved_rng),
        &li.base,
    );
    GapRow {
        h,
        trial,
        seed,
        naive_mean: naive.mean,
        halved_mean: halved.mean,
        naive_max: naive.max,
        halved_max: halved.max,
        selected_sinks: naive.selected_sinks,
    }
}

fn run_experiment(which: ExperimentCmd) -> CliResult {
    let ExperimentCmd::Gapsweep {
        h_min,
        h_max,
        branch,
        select_inv,
        sinks,
        trials,
        seed,
        jobs,
        format,
        out,
    } = which;
    if h_min == 0 || h_min > h_max {
        return Err(CliError::validation(
            "experiment",
            format!("bad height range {h_min}..={h_max}"),
        ));
    }
    if branch % select_inv != 0 || branch / select_inv < 2 {
        return Err(CliError::validation(
            "experiment",
            "branch must be a multiple of select_inv with quotient >= 2",
        ));
    }
    let mut tasks: Vec<(usize, usize, u64)> = Vec::new();
    for h in h_min..=h_max {
        for t in 0..trials {
            // Trial seeds depend only on (seed, h, t), never on --jobs.
            tasks.push((h, t, seed.wrapping_add((h as u64) << 32).wrapping_add(t as u64)));
        }
    }
    let jobs = jobs.max(1).min(tasks.len().max(1));
    let rows: Vec<GapRow> = if jobs <= 1 {
        tasks
            .iter()
            .map(|&(h, t, s)| gapsweep_trial(h, branch, select_inv, sinks, t, s))
            .collect()
    } else {
        let chunks: Vec<Vec<(usize, usize, u64)>> = tasks
            .chunks(tasks.len().div_ceil(jobs))
            .map(|c| c.to_vec())
            .collect();
        let mut handles = Vec::new();
        for chunk in chunks {
            handles.push(std::thread::spawn(move || {
                chunk
                    .into_iter()
                    .map(|(h, t, s)| gapsweep_trial(h, branch, select_inv, sinks, t, s))
                    .collect::<Vec<_>>()
            }));
        }
        let mut rows: Vec<GapRow> = handles
            .into_iter()
            .flat_map(|jh| jh.join().expect("worker thread panicked"))
            .collect();
        rows.sort_by_key(|r| (r.h, r.trial));
        rows
    };
    match format {
        OutFormat::Csv => {
            let mut csv = String::from(
                "h,trial,seed,naive_mean,halved_mean,naive_max,halved_max,selected_sinks",
            );
            for r in &rows {
                csv.push('\n');
                csv.push_str(&format!(
                    "{},{},{},{:.6},{:.6},{},{},{}",
                    r.h, r.trial, r.seed, r.naive_mean, r.halved_mean, r.naive_max, r.halved_max,
                    r.selected_sinks
                ));
            }
            write_out(&out, &csv)
        }
        OutFormat::Json => {
            let arr: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "h": r.h,
                        "trial": r.trial,
                        "seed": r.seed,
                        "naive_mean": r.naive_mean,
                        "halved_mean": r.halved_mean,
                        "naive_max": r.naive_max,
                        "halved_max": r.halved_max,
                        "selected_sinks": r.selected_sinks,
                    })
                })
                .collect();
            write_json(&out, &json!({ "params": { "branch": branch, "select_inv": select_inv,
                "sinks": sinks, "trials": trials, "seed": seed }, "rows": arr }))
        }
    }
}
