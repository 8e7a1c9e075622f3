//! Command-line interface: parses flags, runs the pipeline, writes the
//! analysis artifacts, and maps failures onto stable exit codes.
//!
//! Exit codes: 0 success, 1 usage, 2 input error, 3 degenerate data,
//! 4 network failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::distnet::{serve_worker, Coordinator, CoordinatorConfig};
use crate::facts::{self, ParsedFacts};
use crate::features::{
    extract_structural_features, standardize, FeatureError, FeatureMatrix, RelationWeights,
};
use crate::hac::{cluster, cut, to_dot, to_newick, ClusterAssignment, CutRule, Dendrogram,
    HacError, Linkage};
use crate::metrics::{similarity_matrix, SimilarityMatrix};
use crate::model::{validate_graph, SoftwareGraph};
use crate::restructure::{
    agreement, declared_partition, partition_to_nodes, progress_report, suggest_moves,
    MoveSuggestion, ProgressReport,
};

#[derive(Debug, Parser)]
#[command(
    name = "p2n",
    version,
    about = "Recover subsystem structure from a software entity graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every pipeline-running command.
#[derive(Debug, Args)]
struct RunConfig {
    /// Facts file describing the system.
    #[arg(long)]
    input: PathBuf,

    /// Merge rule: single, complete, wavg, or uavg.
    #[arg(long, default_value = "uavg")]
    linkage: Linkage,

    /// Cut the dendrogram into exactly this many clusters. Without a cut
    /// flag, the number of distinct declared modules is used.
    #[arg(long, conflicts_with = "threshold")]
    k: Option<usize>,

    /// Cut by keeping every merge of at least this similarity.
    #[arg(long)]
    threshold: Option<f64>,

    /// Multiplier for part relationship weights.
    #[arg(long, default_value_t = 1.0)]
    weight_part: f64,

    /// Multiplier for subclass relationship weights.
    #[arg(long, default_value_t = 1.0)]
    weight_subclass: f64,

    /// Multiplier for ref relationship weights.
    #[arg(long, default_value_t = 1.0)]
    weight_ref: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster a facts file and write the analysis artifacts.
    Cluster {
        #[command(flatten)]
        config: RunConfig,
        /// Directory for the output files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all four linkages at the same cut and print their pairwise
    /// agreement table.
    CompareLinkages {
        #[command(flatten)]
        config: RunConfig,
    },
    /// Distribute the similarity computation to workers, then finish the
    /// pipeline exactly like `cluster`.
    Coordinate {
        #[command(flatten)]
        config: RunConfig,
        /// Directory for the output files.
        #[arg(long)]
        out: PathBuf,
        /// Address to accept workers on; port 0 picks a free port.
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Seconds a worker may hold one task.
        #[arg(long, default_value_t = 30)]
        task_timeout: u64,
        /// Seconds to wait for the first worker.
        #[arg(long, default_value_t = 60)]
        startup_timeout: u64,
    },
    /// Compute similarity rows for a coordinator until it says done.
    Worker {
        /// Coordinator address.
        #[arg(long)]
        connect: String,
    },
    /// Check a facts file and report structural violations.
    Validate {
        /// Facts file to check.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Input(String),
    Degenerate(String),
    Network(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Degenerate(_) => 3,
            CliError::Network(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Input(m)
            | CliError::Degenerate(m)
            | CliError::Network(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> CliError {
        CliError::Input(e.to_string())
    }
}

impl From<HacError> for CliError {
    fn from(e: HacError) -> CliError {
        match e {
            HacError::TooFewEntities(_) => CliError::Degenerate(e.to_string()),
            HacError::InvalidK { .. } | HacError::InvalidThreshold => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

impl From<crate::restructure::RestructureError> for CliError {
    fn from(e: crate::restructure::RestructureError) -> CliError {
        CliError::Input(e.to_string())
    }
}

impl From<crate::metrics::MetricsError> for CliError {
    fn from(e: crate::metrics::MetricsError) -> CliError {
        CliError::Input(e.to_string())
    }
}

/// Parses `args` and runs the selected command, returning the process exit
/// code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive as errors but are not
            // failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Cluster { config, out } => {
            check_flags(&config)?;
            let (graph, matrix) = prepare(&config)?;
            let sim = similarity_matrix(&matrix)?;
            finish_pipeline(&graph, &sim, &config, &out)
        }
        Command::CompareLinkages { config } => {
            check_flags(&config)?;
            let (graph, matrix) = prepare(&config)?;
            let sim = similarity_matrix(&matrix)?;
            compare_linkages(&graph, &sim, &config)
        }
        Command::Coordinate {
            config,
            out,
            listen,
            task_timeout,
            startup_timeout,
        } => {
            check_flags(&config)?;
            let (graph, matrix) = prepare(&config)?;
            let net_config = CoordinatorConfig {
                startup_timeout: Duration::from_secs(startup_timeout),
                task_timeout: Duration::from_secs(task_timeout),
                verbose: true,
            };
            let coordinator =
                Coordinator::bind(listen.as_str(), net_config).map_err(network)?;
            eprintln!("listening on {}", coordinator.local_addr().map_err(network)?);
            let sim = coordinator.run(&matrix).map_err(network)?;
            finish_pipeline(&graph, &sim, &config, &out)
        }
        Command::Worker { connect } => serve_worker(connect.as_str()).map_err(network),
        Command::Validate { input } => validate(&input),
    }
}

fn network(e: crate::distnet::NetError) -> CliError {
    CliError::Network(e.to_string())
}

fn check_flags(config: &RunConfig) -> Result<(), CliError> {
    if config.k == Some(0) {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    for (flag, value) in [
        ("--weight-part", config.weight_part),
        ("--weight-subclass", config.weight_subclass),
        ("--weight-ref", config.weight_ref),
    ] {
        if !value.is_finite() || value < 0.0 {
            return Err(CliError::Usage(format!(
                "{flag} must be a nonnegative finite number, got {value}"
            )));
        }
    }
    Ok(())
}

/// Reads and parses the input, then builds the standardized feature
/// matrix. Dropped constant columns are reported on stderr.
fn prepare(config: &RunConfig) -> Result<(SoftwareGraph, FeatureMatrix<f64>), CliError> {
    let text = fs::read_to_string(&config.input).map_err(|e| {
        CliError::Input(format!("cannot read {}: {e}", config.input.display()))
    })?;
    let parsed = facts::parse(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", config.input.display())))?;
    let ParsedFacts { graph, attributes } = parsed;
    let n = graph.entity_count();
    if n < 2 {
        return Err(CliError::Degenerate(format!(
            "{n} entities; clustering needs at least 2"
        )));
    }
    let weights = RelationWeights {
        part: config.weight_part,
        subclass: config.weight_subclass,
        reference: config.weight_ref,
    };
    let raw = extract_structural_features(&graph, &weights, &attributes);
    let standardized = standardize(raw).map_err(|e| match e {
        FeatureError::NoInformativeAttributes => CliError::Degenerate(e.to_string()),
        other => CliError::Input(other.to_string()),
    })?;
    for name in &standardized.dropped {
        eprintln!("warning: dropped constant column {name}");
    }
    Ok((graph, standardized.matrix))
}

fn cut_rule(config: &RunConfig, graph: &SoftwareGraph) -> CutRule<f64> {
    if let Some(t) = config.threshold {
        CutRule::MinSimilarity(t)
    } else {
        CutRule::Clusters(config.k.unwrap_or_else(|| graph.declared_modules().len()))
    }
}

/// Clusters, cuts, reports, and writes the artifact files.
fn finish_pipeline(
    graph: &SoftwareGraph,
    sim: &SimilarityMatrix<f64>,
    config: &RunConfig,
    out: &Path,
) -> Result<(), CliError> {
    let dendrogram = cluster(sim, config.linkage)?;
    let assignment = cut(&dendrogram, cut_rule(config, graph))?;
    let partition = partition_to_nodes(&assignment, graph)?;
    let report = progress_report(graph, &partition)?;
    let suggestions = suggest_moves(graph, &assignment)?;
    let agree = agreement(&assignment, &declared_partition(graph))?;
    write_artifacts(
        out,
        graph,
        &dendrogram,
        &assignment,
        &report,
        &suggestions,
        agree,
    )?;
    println!("agreement {agree:?}");
    Ok(())
}

fn compare_linkages(
    graph: &SoftwareGraph,
    sim: &SimilarityMatrix<f64>,
    config: &RunConfig,
) -> Result<(), CliError> {
    let mut assignments: Vec<ClusterAssignment> = Vec::with_capacity(Linkage::ALL.len());
    for linkage in Linkage::ALL {
        let dendrogram = cluster(sim, linkage)?;
        assignments.push(cut(&dendrogram, cut_rule(config, graph))?);
    }
    let mut header = String::from("linkage");
    for linkage in Linkage::ALL {
        header.push(' ');
        header.push_str(&linkage.to_string());
    }
    println!("{header}");
    for (i, linkage) in Linkage::ALL.iter().enumerate() {
        let mut line = linkage.to_string();
        for j in 0..Linkage::ALL.len() {
            let r = agreement(&assignments[i], &assignments[j])?;
            line.push_str(&format!(" {r:?}"));
        }
        println!("{line}");
    }
    Ok(())
}

fn validate(input: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(input)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", input.display())))?;
    let parsed = facts::parse_lenient(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    let mut problems: Vec<String> = validate_graph(&parsed.graph)
        .iter()
        .map(ToString::to_string)
        .collect();
    let mut seen = std::collections::HashSet::new();
    for attr in &parsed.attributes {
        if parsed.graph.entity_index(&attr.entity_id).is_none() {
            problems.push(format!(
                "attribute `{}` references unknown entity `{}`",
                attr.name, attr.entity_id
            ));
        }
        if !seen.insert((attr.entity_id.as_str(), attr.name.as_str())) {
            problems.push(format!(
                "duplicate attribute `{}` for entity `{}`",
                attr.name, attr.entity_id
            ));
        }
    }
    if problems.is_empty() {
        println!(
            "ok: {} entities, {} relationships, {} attributes",
            parsed.graph.entity_count(),
            parsed.graph.relationships().len(),
            parsed.attributes.len()
        );
        Ok(())
    } else {
        for p in &problems {
            println!("{p}");
        }
        Err(CliError::Input(format!(
            "{} violation(s) in {}",
            problems.len(),
            input.display()
        )))
    }
}

fn write_artifacts(
    dir: &Path,
    graph: &SoftwareGraph,
    dendrogram: &Dendrogram<f64>,
    assignment: &ClusterAssignment,
    report: &ProgressReport,
    suggestions: &[MoveSuggestion],
    agree: f64,
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let labels: Vec<String> = graph.entities().iter().map(|e| e.id.clone()).collect();

    let mut json = serde_json::to_string_pretty(dendrogram)
        .map_err(|e| CliError::Input(e.to_string()))?;
    json.push('\n');
    fs::write(dir.join("dendrogram.json"), json)?;

    let mut newick = to_newick(dendrogram, &labels);
    newick.push('\n');
    fs::write(dir.join("tree.nwk"), newick)?;

    fs::write(dir.join("tree.dot"), to_dot(dendrogram, &labels))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["entity", "cluster"])?;
    for (i, entity) in graph.entities().iter().enumerate() {
        w.write_record([entity.id.as_str(), &assignment.labels[i].to_string()])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(dir.join("assignment.csv"), bytes)?;

    fs::write(dir.join("report.txt"), report.to_string())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["entity", "from_module", "to_module"])?;
    for s in suggestions {
        w.write_record([
            s.entity_id.as_str(),
            s.from_module.as_str(),
            s.to_module.as_str(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(dir.join("suggestions.csv"), bytes)?;

    fs::write(dir.join("agreement.txt"), format!("{agree:?}\n"))?;
    Ok(())
}
