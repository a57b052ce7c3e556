use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use miggt::encoding::ModalityId;
use miggt::error::{Error, Result};
use miggt::grid::{grid_search, sweep_samples, GridRow, GridSpec};
use miggt::io::config::RunConfig;
use miggt::io::params_file::{load_params, save_params};
use miggt::io::synthetic::{write_synthetic, SyntheticSpec};
use miggt::io::{write_json, write_json_lines};
use miggt::train::{evaluate_model, init_model, train_with_callback};

#[derive(Parser)]
#[command(name = "miggt", version, about = "Multimodal graph recommendation: train, evaluate, search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Valid,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train with early stopping; writes params.mmpr, train_log.jsonl and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score saved parameters; writes a metric report as JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Report path; defaults to <output_dir>/eval_<split>.json.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train every combination of a grid file; writes one CSV row per combination.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// CSV path; defaults to <output_dir>/grid.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train once per SGT sample count; writes per-count metrics CSV.
    SweepSamples {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25")]
        values: Vec<usize>,
        /// CSV path; defaults to <output_dir>/sweep_samples.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a block-structured synthetic dataset with a manifest and run config.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        user_groups: usize,
        #[arg(long, default_value_t = 2)]
        item_groups: usize,
        #[arg(long, default_value_t = 100)]
        users_per_group: usize,
        #[arg(long, default_value_t = 100)]
        items_per_group: usize,
        #[arg(long, default_value_t = 0.9)]
        affinity: f64,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        global_likes: usize,
        #[arg(long, default_value_t = 24)]
        text_dim: usize,
        #[arg(long, default_value_t = 48)]
        visual_dim: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn default_output(cfg: &RunConfig, explicit: Option<PathBuf>, file: &str) -> Result<PathBuf> {
    match explicit {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            Ok(p)
        }
        None => {
            create_dir(&cfg.output_dir)?;
            Ok(cfg.output_dir.join(file))
        }
    }
}

fn write_csv_file(path: &Path, write: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write(&mut file)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, output } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            create_dir(&cfg.output_dir)?;
            let (_, data) = cfg.load_data()?;
            let outcome = train_with_callback(&cfg.train, &data, |r| {
                info!("epoch {} total {:.6} val ndcg@20 {:.6}", r.epoch, r.total, r.val_ndcg_20);
            })?;
            let dir = &cfg.output_dir;
            save_params(&dir.join("params.mmpr"), &outcome.model.params().named_values())?;
            write_json_lines(&dir.join("train_log.jsonl"), &outcome.log)?;
            let valid = evaluate_model(&outcome.model, &cfg.train, &data.validation_split()?)?;
            let test = evaluate_model(&outcome.model, &cfg.train, &data.test_split()?)?;
            write_json(&dir.join("eval_valid.json"), &valid)?;
            write_json(&dir.join("eval_test.json"), &test)?;
            let run_path = dir.join("run.cfg");
            fs::write(&run_path, cfg.to_text()).map_err(|e| Error::io(&run_path, e))?;
            info!("best epoch {:?}; outputs in {}", outcome.best_epoch, dir.display());
        }
        Command::Eval {
            config,
            params,
            split,
            output,
        } => {
            let cfg = RunConfig::load(&config)?;
            let (_, data) = cfg.load_data()?;
            let mut model = init_model(&cfg.train, &data)?;
            model.params_mut().load_values(&load_params(&params)?)?;
            let (name, eval_split) = match split {
                SplitName::Valid => ("valid", data.validation_split()?),
                SplitName::Test => ("test", data.test_split()?),
            };
            let report = evaluate_model(&model, &cfg.train, &eval_split)?;
            let path = default_output(&cfg, output, &format!("eval_{name}.json"))?;
            write_json(&path, &report)?;
        }
        Command::Grid { config, grid, output } => {
            let cfg = RunConfig::load(&config)?;
            let text = fs::read_to_string(&grid).map_err(|e| Error::io(&grid, e))?;
            let spec = GridSpec::parse(&text)?;
            let (_, data) = cfg.load_data()?;
            let table = grid_search(&cfg.train, &spec, &data)?;
            let path = default_output(&cfg, output, "grid.csv")?;
            write_csv_file(&path, |f| table.write_csv(f))?;
            if table.axes.len() == 2 {
                let heat = table.heatmap(&table.axes[0], &table.axes[1], GridRow::selection_score)?;
                write_csv_file(&path.with_extension("heatmap.csv"), |f| heat.write_csv(f))?;
            }
            if let Some(best) = table.best() {
                info!("best: {} (val ndcg@20 {:.6})", best.label(), best.selection_score());
            }
        }
        Command::SweepSamples { config, values, output } => {
            let cfg = RunConfig::load(&config)?;
            if values.is_empty() {
                return Err(Error::InvalidConfig("--values needs at least one count".into()));
            }
            let (_, data) = cfg.load_data()?;
            let table = sweep_samples(&cfg.train, &values, &data)?;
            let path = default_output(&cfg, output, "sweep_samples.csv")?;
            write_csv_file(&path, |f| table.write_csv(f))?;
        }
        Command::GenSynthetic {
            out,
            user_groups,
            item_groups,
            users_per_group,
            items_per_group,
            affinity,
            density,
            global_likes,
            text_dim,
            visual_dim,
            noise,
            seed,
        } => {
            let spec = SyntheticSpec {
                num_user_groups: user_groups,
                num_item_groups: item_groups,
                users_per_group,
                items_per_group,
                affinity,
                density,
                global_likes,
                feature_dims: vec![(ModalityId::Text, text_dim), (ModalityId::Visual, visual_dim)],
                noise,
                seed,
            };
            let manifest = write_synthetic(&spec, &out)?;
            info!("wrote {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
