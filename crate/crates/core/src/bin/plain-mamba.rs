use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plain_mamba::analysis::{
    count_flops, count_flops_attention, count_params, curve_csv, scaling_curve, AttentionBaselineConfig,
    CurveModel, FlopsReport,
};
use plain_mamba::diagnostics::{run_grad_checks, GradScope, GRAD_CHECK_TOLERANCE};
use plain_mamba::io::{load_image, load_weights, save_weights, toy_train, Dtype, SyntheticDataset, TrainOptions};
use plain_mamba::model::{model_forward, Preset};
use plain_mamba::scan_geometry::{generate_continuous_paths, generate_raster_paths, PathSet};
use plain_mamba::{Error, Result};

const THREADS_ENV: &str = "PLAIN_SCAN_THREADS";

#[derive(Parser)]
#[command(name = "plain-mamba", version, about = "Plain visual state-space model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the four scan paths over an H x W grid.
    ScanViz {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        /// Raster (non-continuous) baseline paths instead of snakes.
        #[arg(long)]
        raster: bool,
        /// Also write `path_id,step,row,col,direction` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-tensor parameter table and total.
    Params {
        #[arg(long, default_value = "L1")]
        config: Preset,
    },
    /// MAC count split into token mixing, channel mixing and other.
    Flops {
        #[arg(long, default_value = "L1")]
        config: Preset,
        #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [224, 224])]
        resolution: Vec<usize>,
        /// Count the DeiT-C224 attention baseline instead.
        #[arg(long)]
        attention_baseline: bool,
    },
    /// MACs and peak activation bytes over square resolutions.
    Curve {
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024,2048,4096")]
        resolutions: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "L1")]
        configs: Vec<Preset>,
        /// Leave out the DeiT-C224 rows.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Classify a PPM/PGM image and print the top-k logits.
    Infer {
        #[arg(long)]
        config: Preset,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
    /// Train the toy preset on the synthetic stripe dataset with SGD.
    ToyTrain {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long, default_value = "f64")]
        dtype: Dtype,
    },
    /// Finite-difference check of tape gradients.
    GradCheck {
        #[arg(long, default_value = "ops")]
        scope: GradScope,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates probed per model tensor; 0 probes all of them.
        #[arg(long, default_value_t = 16)]
        max_coords: usize,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got '{raw}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))?;
    }
    Ok(())
}

fn write_file(path: &PathBuf, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })
}

fn print_paths(paths: &PathSet) {
    for (k, p) in paths.paths().iter().enumerate() {
        println!("path {k}");
        let mut steps = vec![0; p.len()];
        for (step, &cell) in p.order().iter().enumerate() {
            steps[cell] = step;
        }
        let width = p.len().to_string().len();
        for r in 0..p.height() {
            let line: Vec<String> = (0..p.width())
                .map(|c| {
                    let step = steps[r * p.width() + c];
                    format!("{step:>width$}{}", p.directions()[step].arrow())
                })
                .collect();
            println!("  {}", line.join(" "));
        }
        let jumps = p.adjacency_violations();
        if !jumps.is_empty() {
            println!("  non-adjacent steps: {jumps:?}");
        }
    }
}

fn paths_csv(paths: &PathSet) -> String {
    let mut s = String::from("path_id,step,row,col,direction\n");
    for (k, p) in paths.paths().iter().enumerate() {
        for step in 0..p.len() {
            let (r, c) = p.cell(step);
            s.push_str(&format!("{k},{step},{r},{c},{}\n", p.directions()[step]));
        }
    }
    s
}

fn print_report(rep: &FlopsReport) {
    println!("{}", rep.to_table());
    println!();
    println!("{}", FlopsReport::CSV_HEADER);
    println!("{}", rep.csv_row());
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::ScanViz {
            height,
            width,
            raster,
            csv,
        } => {
            let paths = if raster {
                generate_raster_paths(height, width)?
            } else {
                generate_continuous_paths(height, width)?
            };
            print_paths(&paths);
            if let Some(path) = csv {
                write_file(&path, &paths_csv(&paths))?;
            }
        }
        Command::Params { config } => {
            println!("{}", count_params(&config.config()));
        }
        Command::Flops {
            config,
            resolution,
            attention_baseline,
        } => {
            let (h, w) = (resolution[0], resolution[1]);
            let rep = if attention_baseline {
                count_flops_attention(&AttentionBaselineConfig::deit_c224(), h, w)?
            } else {
                let mut rep = count_flops(&config.config(), h, w)?;
                rep.model = format!("PlainMamba-{config}");
                rep
            };
            print_report(&rep);
        }
        Command::Curve {
            resolutions,
            configs,
            no_baseline,
        } => {
            let mut models: Vec<CurveModel> = configs
                .iter()
                .map(|p| CurveModel::PlainMamba(format!("PlainMamba-{p}"), p.config()))
                .collect();
            if !no_baseline {
                models.push(CurveModel::Attention("DeiT-C224".into(), AttentionBaselineConfig::deit_c224()));
            }
            print!("{}", curve_csv(&scaling_curve(&models, &resolutions)?));
        }
        Command::Infer {
            config,
            weights,
            image,
            top_k,
        } => {
            let cfg = config.config();
            let w = load_weights(&weights, &cfg)?;
            let img = load_image(&image)?;
            let logits = model_forward(&img, &w, &cfg)?;
            let mut ranked: Vec<(usize, f64)> = logits.data().iter().copied().enumerate().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            println!("class,logit");
            for (class, logit) in ranked.into_iter().take(top_k) {
                println!("{class},{logit:.6}");
            }
        }
        Command::ToyTrain {
            steps,
            lr,
            seed,
            batch,
            samples,
            out,
            loss_csv,
            dtype,
        } => {
            let config = Preset::Toy.config();
            let data = SyntheticDataset::generate(samples, seed);
            let outcome = toy_train(
                &config,
                &data,
                &TrainOptions {
                    steps,
                    lr,
                    batch,
                    seed,
                },
            )?;
            if let Some(path) = loss_csv {
                write_file(&path, &outcome.loss_csv())?;
            }
            if let Some(path) = out {
                save_weights(&outcome.weights, &path, dtype)?;
            }
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            println!("steps {steps} final_loss {last:.6} train_accuracy {:.4}", outcome.accuracy);
        }
        Command::GradCheck {
            scope,
            seed,
            max_coords,
        } => {
            let per_tensor = if max_coords == 0 { usize::MAX } else { max_coords };
            let targets = run_grad_checks(scope, seed, per_tensor)?;
            let mut failed = 0;
            for t in &targets {
                let verdict = if t.passed() { "ok" } else { "FAIL" };
                failed += usize::from(!t.passed());
                println!(
                    "{:<48} max_rel_error {:.3e} over {} coords  {verdict}",
                    t.name, t.report.max_rel_error, t.report.coordinates
                );
            }
            if failed > 0 {
                return Err(Error::Domain(format!(
                    "{failed} gradient target(s) above tolerance {GRAD_CHECK_TOLERANCE}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
