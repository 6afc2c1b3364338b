//! Command-line front end: dataset generation, single-stage training, the
//! experiment grid, evaluation and gradient checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use envrec_core::dataset::{
    generate_auxiliary, generate_generic_pretrain, generate_target, kfold_partition,
};
use envrec_core::dataset::{load_dataset, save_dataset};
use envrec_core::evaluation::evaluate_model;
use envrec_core::model::{
    build_network, drop_classifier, maintain_classifier, random_batch, train,
};
use envrec_core::numerics::gradient_check;
use envrec_core::pipeline::{
    render_report, run_full_grid, run_maintain_ablation, run_mode_grid, run_strategy, ReportFormat,
};
use envrec_core::taxonomy::apply_merge_map;
use envrec_core::{derive_seed, Checkpoint, ExperimentConfig, Mode, Strategy};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "envrec",
    version,
    about = "Drop-then-maintain transfer learning on imbalanced scene sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the generic, auxiliary and target datasets plus a fold file.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage on a dataset file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Which stage config to use: generic, auxiliary or target.
        #[arg(long, default_value = "target")]
        stage: String,
        /// Starting checkpoint; its classifier is kept when the class lists
        /// match and replaced otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Replace the classifier of `--init` even if the class lists match.
        #[arg(long)]
        drop: bool,
        #[arg(long, default_value = "DR")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a strategy (1-4), the mode grid (`grid`), the maintain ablation
    /// (`ablation`) or everything (`full`) and write reports.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the configured backbone.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
}

struct Failure {
    kind: String,
    message: String,
}

impl From<envrec_core::Error> for Failure {
    fn from(e: envrec_core::Error) -> Self {
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

fn failure(kind: &str, message: impl Into<String>) -> Failure {
    Failure {
        kind: kind.into(),
        message: message.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    Ok(config)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| failure("io", format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| failure("io", format!("{}: {e}", path.display())))
}

fn gen_data(common: Common, folds: Option<usize>, out: PathBuf) -> CliResult<()> {
    let config = load_config(&common)?;
    let seed = config.seeds[0];
    let g = &config.generators;
    create_dir(&out)?;
    let target = generate_target(&g.target, derive_seed(seed, "data/target"))?;
    let raw = generate_auxiliary(&g.auxiliary, derive_seed(seed, "data/auxiliary"))?;
    let merge_map = config.merge_map()?;
    let auxiliary = apply_merge_map(&raw, &merge_map)?;
    let generic = generate_generic_pretrain(&g.generic, derive_seed(seed, "data/generic"))?;
    let partition = kfold_partition(
        &target,
        folds.unwrap_or(config.k),
        derive_seed(seed, "folds"),
        config.stratified,
    )?;
    for (name, data) in [
        ("target", &target),
        ("auxiliary", &auxiliary),
        ("auxiliary_raw", &raw),
        ("generic", &generic),
    ] {
        save_dataset(data, out.join(format!("{name}.scn")))?;
        println!(
            "{name}: {} sequences, {} frames, {} classes",
            data.sequences().len(),
            data.num_frames(),
            data.classes().len()
        );
    }
    partition.save(out.join("folds.toml"))?;
    merge_map.save(out.join("merge_map.toml"))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_stage(
    common: Common,
    dataset: PathBuf,
    stage: String,
    init: Option<PathBuf>,
    drop: bool,
    mode: String,
    out: PathBuf,
) -> CliResult<()> {
    let config = load_config(&common)?;
    let seed = config.seeds[0];
    let mode = Mode::from_str(&mode)?;
    let stage_cfg = match stage.as_str() {
        "generic" => &config.stages.generic,
        "auxiliary" => &config.stages.auxiliary,
        "target" => &config.stages.target,
        other => {
            return Err(failure(
                "invalid_argument",
                format!("unknown stage `{other}`"),
            ))
        }
    }
    .as_ref()
    .ok_or_else(|| {
        failure(
            "invalid_argument",
            format!("config has no `stages.{stage}`"),
        )
    })?;
    if stage_cfg.epochs == 0 {
        return Err(failure(
            "invalid_argument",
            format!("stage `{stage}` has 0 epochs"),
        ));
    }
    let data = load_dataset(&dataset)?;
    let net = match init {
        None => build_network(
            &config.arch,
            data.classes(),
            derive_seed(seed, &format!("init/{stage}")),
        )?,
        Some(path) => {
            let ck = Checkpoint::load(&path)?;
            if !drop && ck.class_names == data.classes() {
                maintain_classifier(&ck, data.classes())?
            } else {
                drop_classifier(
                    ck.to_network()?,
                    data.classes(),
                    derive_seed(seed, &format!("drop/{stage}")),
                )?
            }
        }
    };
    let train_cfg = stage_cfg.train_config(mode, derive_seed(seed, &format!("train/{stage}")));
    let (mut net, history) = train(net, &data.frame_view(), &train_cfg)?;
    net.provenance.stage = stage;
    for (epoch, loss) in history.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.6}");
    }
    Checkpoint::from_network(&net).save(&out)?;
    println!("digest {}", net.digest());
    Ok(())
}

fn experiment(
    common: Common,
    strategy: Option<String>,
    mode: Option<String>,
    folds: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let mut config = load_config(&common)?;
    if let Some(m) = mode {
        config.mode = Mode::from_str(&m)?;
    }
    if let Some(k) = folds {
        config.k = k;
    }
    let which = strategy.unwrap_or_else(|| config.strategy.to_string());
    let results = match which.as_str() {
        "grid" => run_mode_grid(&config)?,
        "full" => run_full_grid(&config)?,
        "ablation" => {
            let (with, without) = run_maintain_ablation(&config)?;
            vec![with, without]
        }
        s => {
            config.strategy = Strategy::from_str(s)?;
            vec![run_strategy(&config)?]
        }
    };
    let out = out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    create_dir(&out)?;
    write(
        &out.join("report.toml"),
        &render_report(&results, ReportFormat::StructuredText)?,
    )?;
    write(
        &out.join("results.csv"),
        &render_report(&results, ReportFormat::Csv)?,
    )?;
    let table = render_report(&results, ReportFormat::Markdown)?;
    write(&out.join("report.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn eval(checkpoint: PathBuf, dataset: PathBuf, out: Option<PathBuf>) -> CliResult<()> {
    let net = Checkpoint::load(&checkpoint)?.to_network()?;
    let data = load_dataset(&dataset)?;
    let report = evaluate_model(&net, &data)?;
    let text = toml::to_string(&report).map_err(|e| failure("format", e.to_string()))?;
    match out {
        Some(path) => write(&path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gradcheck(common: Common, eps: f64, batch: usize) -> CliResult<()> {
    let config = load_config(&common)?;
    let seed = config.seeds[0];
    let classes = config.generators.target.class_names();
    let mut net = build_network(&config.arch, &classes, derive_seed(seed, "gradcheck/init"))?;
    let batch = random_batch(
        &config.arch,
        classes.len(),
        batch,
        derive_seed(seed, "gradcheck/batch"),
    )?;
    let worst = gradient_check(&mut net, &batch, eps)?;
    println!("parameters {}", net.parameter_count());
    println!("max relative error {worst:.3e}");
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(failure(
            "gradcheck",
            format!("max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"),
        ))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { common, folds, out } => gen_data(common, folds, out),
        Command::Train {
            common,
            dataset,
            stage,
            init,
            drop,
            mode,
            out,
        } => train_stage(common, dataset, stage, init, drop, mode, out),
        Command::Experiment {
            common,
            strategy,
            mode,
            folds,
            out,
        } => experiment(common, strategy, mode, folds, out),
        Command::Eval {
            checkpoint,
            dataset,
            out,
        } => eval(checkpoint, dataset, out),
        Command::Gradcheck { common, eps, batch } => gradcheck(common, eps, batch),
    }
}

fn report_failure(f: &Failure) {
    eprintln!(
        "{}",
        serde_json::json!({ "error": f.kind, "message": f.message })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_failure(&failure("usage", e.to_string().trim_end()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report_failure(&f);
            ExitCode::FAILURE
        }
    }
}
