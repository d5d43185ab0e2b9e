use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use semcom_core::bundle::SemComBundle;
use semcom_core::packing::{encode_token, truncate, TOKEN_BYTES};
use semcom_core::pipeline::{run_pipeline, Extraction, XiScheme};
use semcom_core::segmentation::{dbscan_labels, DbscanParams};
use semcom_lab::bundle_io::load_bundle;
use semcom_lab::checkpoint::{load_agent, save_agent};
use semcom_lab::fixtures;
use semcom_lab::harness::{self, Policy};
use semcom_lab::report::{self, Series};
use semcom_lab::scenario::Scenario;
use semcom_lab::table_io::csv_field;
use semcom_lab::{LabError, Result};

#[derive(Parser)]
#[command(name = "semcom", version, about = "Generative semantic communication lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ExtractOpts {
    /// Scenario whose thresholds and clustering parameters apply.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// DBSCAN radius in pixels.
    #[arg(long)]
    eps: Option<f64>,
    /// DBSCAN density threshold.
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Uniform binarization threshold for every word.
    #[arg(long)]
    xi: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run extraction on a bundle and print per-word results as CSV.
    Extract {
        bundle: PathBuf,
        #[command(flatten)]
        opts: ExtractOpts,
        /// Write the full token stream (11 bytes per token) here.
        #[arg(long, value_name = "FILE")]
        dump_stream: Option<PathBuf>,
        /// Write C, D*, importance and cluster CSVs into this directory.
        #[arg(long, value_name = "DIR")]
        dump_matrices: Option<PathBuf>,
    },
    /// Write the token stream of a bundle, truncated to a budget.
    Pack {
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[command(flatten)]
        opts: ExtractOpts,
    },
    /// Every user sends as much as its link allows; per-user rows and a summary.
    Simulate {
        scenario: PathBuf,
        /// Directory for rows.csv and summary.csv; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the diffusion allocator on the scenario's environment.
    TrainAdd {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-episode reward CSV.
        #[arg(long)]
        rewards: Option<PathBuf>,
    },
    /// Compare allocation policies on identical seeded states.
    Eval {
        scenario: PathBuf,
        /// A checkpoint path, or fixed, random or greedy. Repeatable.
        #[arg(long, required = true)]
        policy: Vec<String>,
        /// Number of states; the scenario's add.eval_states by default.
        #[arg(long)]
        states: Option<usize>,
        /// Directory for allocations.csv and means.csv; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Robustness curves (Q against tokens sent) for the scenario's bundles,
    /// or a chart of columns from an existing CSV.
    Report {
        /// Scenario to sweep; omit when charting with --from.
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Number of budget steps between 0 and the largest stream.
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Chart an existing CSV instead of sweeping.
        #[arg(long, conflicts_with = "scenario")]
        from: Option<PathBuf>,
        #[arg(long, default_value = "episode", requires = "from")]
        x: String,
        #[arg(long, default_value = "reward", requires = "from")]
        y: String,
        /// Column splitting rows into series.
        #[arg(long, requires = "from")]
        group: Option<String>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a small synthetic corpus and a scenario that uses it.
    Demo { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semcom: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn config(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

fn params(opts: &ExtractOpts) -> Result<(XiScheme, DbscanParams)> {
    let (mut xi, mut db) = match &opts.scenario {
        Some(p) => {
            let s = Scenario::load(p)?;
            (s.xi()?, s.dbscan_params())
        }
        None => (XiScheme::default(), DbscanParams::default()),
    };
    if let Some(v) = opts.xi {
        xi = XiScheme::uniform(v);
    }
    db.eps = opts.eps.unwrap_or(db.eps);
    db.min_points = opts.min_points.unwrap_or(db.min_points);
    db.min_cluster_size = opts.min_cluster_size.unwrap_or(db.min_cluster_size);
    xi.validate().map_err(|e| config(e.to_string()))?;
    db.validate().map_err(|e| config(e.to_string()))?;
    Ok((xi, db))
}

fn extract(path: &Path, opts: &ExtractOpts) -> Result<(SemComBundle, Extraction, DbscanParams)> {
    let (xi, db) = params(opts)?;
    let bundle = load_bundle(path)?;
    let ex = run_pipeline(&bundle, &xi, &db)?;
    Ok((bundle, ex, db))
}

/// Bundles carry attention, not pixel values, so RGB is written as zero.
fn stream_bytes(pixels: impl Iterator<Item = semcom_core::grid::Pixel>) -> Vec<u8> {
    pixels.flat_map(|p| encode_token(p, [0, 0, 0])).collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => report::write_text(dir.join(name), text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| LabError::io("<stdout>", e)),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Extract {
            bundle,
            opts,
            dump_stream,
            dump_matrices,
        } => {
            let (b, ex, db) = extract(&bundle, &opts)?;
            let mut out = String::from("word_index,text,importance,segment_pixels,block_pixels\n");
            for (k, &wi) in ex.importance.order.iter().enumerate() {
                let seg = ex.segments.iter().find(|s| s.word_index == wi).map_or(0, |s| s.len());
                let block = ex
                    .info
                    .blocks
                    .iter()
                    .find(|bl| bl.word_index == wi)
                    .map_or(0, |bl| bl.pixels.len());
                writeln!(
                    out,
                    "{wi},{},{},{seg},{block}",
                    csv_field(&b.words[wi].text),
                    ex.importance.s[k]
                )
                .unwrap();
            }
            let ratio = ex.info.reduction_ratio((b.image_width, b.image_height))?;
            eprintln!("total_tokens={} reduction_ratio={ratio}", ex.info.total_tokens);
            emit(None, "", &out)?;
            if let Some(path) = dump_stream {
                write(&path, &stream_bytes(ex.info.stream()))?;
            }
            if let Some(dir) = dump_matrices {
                dump(&dir, &ex, &db)?;
            }
            Ok(())
        }
        Command::Pack {
            bundle,
            out,
            budget,
            opts,
        } => {
            let (_, ex, _) = extract(&bundle, &opts)?;
            let prefix = truncate(&ex.info, budget.unwrap_or(ex.info.total_tokens));
            write(&out, &stream_bytes(prefix.pixels.iter().copied()))?;
            eprintln!(
                "tokens={} bytes={}",
                prefix.tokens_used,
                prefix.tokens_used * TOKEN_BYTES
            );
            Ok(())
        }
        Command::Simulate { scenario, out } => {
            let s = Scenario::load(&scenario)?;
            let r = harness::simulate(&s)?;
            emit(out.as_deref(), "rows.csv", &report::rows_csv(&r))?;
            match &out {
                Some(dir) => report::write_text(dir.join("summary.csv"), &report::summary_csv(&r)),
                None => {
                    eprint!("{}", report::summary_csv(&r));
                    Ok(())
                }
            }
        }
        Command::TrainAdd { scenario, out, rewards } => {
            let s = Scenario::load(&scenario)?;
            let outcome = harness::train_add(&s)?;
            save_agent(&outcome.agent, &out)?;
            if let Some(path) = rewards {
                report::write_text(path, &report::rewards_csv(&outcome.rewards))?;
            }
            Ok(())
        }
        Command::Eval {
            scenario,
            policy,
            states,
            out,
        } => {
            let s = Scenario::load(&scenario)?;
            let env = harness::build_env(&s)?;
            let policies = policy
                .iter()
                .map(|name| match Policy::baseline(name) {
                    Some(p) => Ok((name.clone(), p)),
                    None if Path::new(name).is_file() => Ok((name.clone(), Policy::Add(Box::new(load_agent(name)?)))),
                    None => Err(config(format!(
                        "--policy `{name}` is neither a checkpoint nor fixed, random or greedy"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            let states = states.unwrap_or(s.add.eval_states);
            if states == 0 {
                return Err(config("--states must be positive"));
            }
            let r = harness::allocation_experiment(env.as_ref(), &policies, states, s.seed)?;
            if let Some(dir) = &out {
                report::write_text(dir.join("allocations.csv"), &report::allocation_csv(&r))?;
            }
            emit(out.as_deref(), "means.csv", &report::means_csv(&r))
        }
        Command::Demo { dir } => {
            let path = fixtures::write_demo(&dir)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Report {
            scenario,
            format,
            steps,
            from,
            x,
            y,
            group,
            out,
        } => {
            let text = match (scenario, from) {
                (_, Some(csv)) => {
                    let body = fs::read_to_string(&csv).map_err(|e| LabError::io(&csv, e))?;
                    let series =
                        report::read_series(&body, &x, &y, group.as_deref()).map_err(|r| LabError::format(&csv, r))?;
                    match format {
                        Format::Svg => report::line_chart_svg(&y, &x, &y, &series),
                        Format::Csv => body,
                    }
                }
                (Some(path), None) => {
                    let s = Scenario::load(&path)?;
                    let corpus = harness::prepare_corpus(&s)?;
                    let max = corpus.values().map(|p| p.info().total_tokens).max().unwrap_or(0);
                    let curves = harness::robustness_sweep(&s, &harness::token_grid(max, steps))?;
                    match format {
                        Format::Csv => report::curves_csv(&curves),
                        Format::Svg => {
                            let series: Vec<Series> = curves
                                .iter()
                                .map(|c| Series {
                                    name: c.image_id.clone(),
                                    points: c.points.iter().map(|&(t, q)| (t as f64, q)).collect(),
                                })
                                .collect();
                            report::line_chart_svg("Quality against tokens sent", "tokens", "NIMA mean", &series)
                        }
                    }
                }
                (None, None) => return Err(config("report needs a scenario or --from <csv>")),
            };
            match out {
                Some(path) => report::write_text(path, &text),
                None => emit(None, "", &text),
            }
        }
    }
}

fn dump(dir: &Path, ex: &Extraction, db: &DbscanParams) -> Result<()> {
    let order = &ex.dependencies.order;
    let mut c = String::from("head,dependent,arc\n");
    let mut d = String::from("row,col,level\n");
    for (i, &wi) in order.iter().enumerate() {
        for (j, &wj) in order.iter().enumerate() {
            writeln!(c, "{wi},{wj},{}", u8::from(ex.dependencies.arcs.get(i, j))).unwrap();
            writeln!(d, "{wi},{wj},{}", ex.levels.get(i, j)).unwrap();
        }
    }
    let mut s = String::from("word_index,importance\n");
    for (wi, v) in ex.importance.order.iter().zip(&ex.importance.s) {
        writeln!(s, "{wi},{v}").unwrap();
    }
    let mut clusters = String::from("word_index,x,y,cluster_id\n");
    for map in &ex.binary {
        let points: Vec<_> = map.pixels().collect();
        let labels = dbscan_labels(&points, db.eps, db.min_points)?;
        for (p, l) in labels.points.iter().zip(&labels.labels) {
            let id = l.map_or(-1, |k| k as i64);
            writeln!(clusters, "{},{},{},{id}", map.word_index, p.x, p.y).unwrap();
        }
    }
    for (name, text) in [
        ("dependencies.csv", c),
        ("levels.csv", d),
        ("importance.csv", s),
        ("clusters.csv", clusters),
    ] {
        report::write_text(dir.join(name), &text)?;
    }
    Ok(())
}
