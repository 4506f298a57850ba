use std::path::{Path, PathBuf};

use ndarray::Array2;
use xmodal_core::analysis::{
    interpolation_sweep, read_generation_csv, read_retrieval_csv, render_sweep, tradeoff_report,
    InterpolationConfig, DEFAULT_ALPHAS,
};
use xmodal_core::fusion::{fuse, parse_weights, FusionStrategy};
use xmodal_core::projection::{load_params, save_params, ProjectionParams};
use xmodal_core::retrieval::{
    evaluate_retrieval, lift_audio, test_pairs, AudioMapping, Direction, RetrievalProtocol,
};
use xmodal_core::store::{
    filter_by_alignment, generate_synthetic, load_dataset, save_dataset, save_manifest,
    EmbeddingDataset, Segment, SynthConfig,
};
use xmodal_core::substitution::{substitute, AUDIO_BUDGET, VISION_BUDGET};
use xmodal_core::training::train_projection;
use xmodal_core::{write_atomic, Error, Result};

use crate::config::ConfigFile;
use crate::{inspect, BudgetArg, Cli, Command, ModeArg, ProtocolArgs};

pub fn dispatch(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    match &cli.command {
        Command::GenSynthetic(a) => {
            let cfg = SynthConfig {
                n_segments: a.n,
                audio_dim: a.d_a,
                patches: a.patches,
                noise: a.noise,
                seed,
                map: a.map.into(),
                patch_noise: a.patch_noise,
                test_fraction: a.test_fraction,
                layers: a.layers,
                seq_len: a.seq_len,
            };
            let ds = generate_synthetic(&cfg)?;
            save(&ds, &a.out)?;
            println!("wrote {} segments to {}", ds.len(), a.out.display());
        }
        Command::Filter(a) => {
            if !(0.0..=10.0).contains(&a.threshold) {
                return Err(Error::Config(format!(
                    "threshold {} outside [0, 10]",
                    a.threshold
                )));
            }
            let ds = load_dataset(&a.data)?;
            let kept = filter_by_alignment(&ds, a.threshold)?;
            save(&kept, &a.out)?;
            println!("kept {} of {} segments", kept.len(), ds.len());
        }
        Command::Fuse(a) => {
            let strategy = match a.strategy.strip_prefix("weighted:") {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    FusionStrategy::WeightedAll(parse_weights(&text)?)
                }
                None => a.strategy.parse()?,
            };
            let ds = load_dataset(&a.data)?;
            if !ds.presence().layers {
                return Err(Error::Validation(format!(
                    "{} carries no layer stacks",
                    a.data.display()
                )));
            }
            strategy.layer_weights(ds.dims().layers)?;
            let segments = ds
                .segments()
                .iter()
                .map(|s| {
                    let audio = fuse(s.layers.as_ref().expect("presence checked"), &strategy)?;
                    Ok(Segment {
                        audio: Some(audio),
                        ..s.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let fused = EmbeddingDataset::new(segments)?;
            save(&fused, &a.out)?;
            println!("fused {} stacks with {strategy}", fused.len());
        }
        Command::Train(a) => {
            let mut cfg = config.train.clone();
            set(&mut cfg.tau, a.tau);
            set(&mut cfg.lambda, a.lambda);
            set(&mut cfg.lr, a.lr);
            set(&mut cfg.epochs, a.epochs);
            set(&mut cfg.batch_size, a.batch_size);
            set(&mut cfg.plateau_factor, a.plateau_factor);
            set(&mut cfg.plateau_patience, a.plateau_patience);
            set(&mut cfg.min_lr, a.min_lr);
            set(&mut cfg.val_fraction, a.val_fraction);
            set(&mut cfg.hidden, a.hidden);
            set(&mut cfg.dropout, a.dropout);
            cfg.seed = seed;
            cfg.validate()?;
            let ds = load_dataset(&a.data)?;
            let (params, log) = train_projection(&ds, &cfg)?;
            save_params(&params, &a.out_params)?;
            let jsonl = log.to_jsonl();
            match &a.out_log {
                Some(p) => write_atomic(p, jsonl.as_bytes())?,
                None => print!("{jsonl}"),
            }
            if let Some(last) = log.epochs.last() {
                log::info!("final val loss {:.6}", last.val_loss);
            }
        }
        Command::Project(a) => {
            let params = a.params.as_deref().map(load_params).transpose()?;
            let ds = load_dataset(&a.data)?;
            let lifted = lift_all(&ds, mapping(params.as_ref()))?;
            let segments = ds
                .segments()
                .iter()
                .zip(lifted.outer_iter())
                .map(|(s, row)| Segment {
                    audio: Some(xmodal_core::store::AudioEmbedding(row.to_vec())),
                    ..s.clone()
                })
                .collect();
            let out = EmbeddingDataset::new(segments)?;
            save(&out, &a.out)?;
            println!("projected {} embeddings", out.len());
        }
        Command::Substitute(a) => {
            let k = match (a.k, a.budget) {
                (Some(k), _) => k,
                (None, Some(BudgetArg::Audio)) => AUDIO_BUDGET,
                (None, Some(BudgetArg::Vision)) => VISION_BUDGET,
                (None, None) => return Err(Error::Config("give --k or --budget".into())),
            };
            let params = a.params.as_deref().map(load_params).transpose()?;
            let ds = load_dataset(&a.data)?;
            if !ds.presence().visual {
                return Err(Error::Validation(format!(
                    "{} carries no visual grids",
                    a.data.display()
                )));
            }
            let lifted = lift_all(&ds, mapping(params.as_ref()))?;
            let mut selection = String::new();
            let segments = ds
                .segments()
                .iter()
                .zip(lifted.outer_iter())
                .map(|(s, f_a)| {
                    let grid = s.visual.as_ref().expect("presence checked");
                    let f_a = f_a.to_vec();
                    let r = substitute(&f_a, grid, k)?;
                    selection.push_str(
                        &serde_json::json!({"id": s.meta.id, "selected": r.selected_indices})
                            .to_string(),
                    );
                    selection.push('\n');
                    Ok(Segment {
                        visual: Some(r.grid),
                        ..s.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let out = EmbeddingDataset::new(segments)?;
            save(&out, &a.out)?;
            if let Some(p) = &a.out_selection {
                write_atomic(p, selection.as_bytes())?;
            }
            println!(
                "substituted {} grids keeping {} patches",
                out.len(),
                k.min(ds.dims().patches)
            );
        }
        Command::Eval(a) => {
            let mode = match (a.mode, &a.params) {
                (Some(m), _) => m,
                (None, Some(_)) => ModeArg::Projected,
                (None, None) => ModeArg::RawPad,
            };
            match (mode, &a.params) {
                (ModeArg::Projected, None) => {
                    return Err(Error::Config("--mode projected needs --params".into()))
                }
                (ModeArg::RawPad, Some(_)) => {
                    return Err(Error::Config("--mode raw-pad takes no --params".into()))
                }
                _ => {}
            }
            let protocol = protocol(&a.protocol, &config, seed)?;
            let params = a.params.as_deref().map(load_params).transpose()?;
            let ds = load_dataset(&a.data)?;
            let pairs = test_pairs(&ds, mapping(params.as_ref()))?;
            let report = evaluate_retrieval(&pairs, &protocol)?;
            print!("{}", report.render_table());
            if let Some(p) = &a.out {
                write_atomic(p, format!("{}\n", report.to_json()).as_bytes())?;
            }
        }
        Command::Interpolate(a) => {
            let cfg = InterpolationConfig {
                alphas: a.alphas.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
                protocol: protocol(&a.protocol, &config, seed)?,
            };
            if let Some(bad) = cfg.alphas.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::Config(format!("alpha {bad} outside [0, 1]")));
            }
            let params = load_params(&a.params)?;
            let ds = load_dataset(&a.data)?;
            let rows = interpolation_sweep(&ds, &params, &cfg)?;
            print!("{}", render_sweep(&rows));
            if let Some(p) = &a.out {
                let mut text = String::new();
                for row in &rows {
                    text.push_str(&serde_json::to_string(row).expect("sweep row serializes"));
                    text.push('\n');
                }
                write_atomic(p, text.as_bytes())?;
            }
        }
        Command::Tradeoff(a) => {
            let retrieval = read_retrieval_csv(&read_text(&a.retrieval)?)?;
            let generation = read_generation_csv(&read_text(&a.generation)?)?;
            let table = tradeoff_report(&retrieval, &generation)?;
            print!("{}", table.render());
            if let Some(p) = &a.out {
                write_atomic(p, table.to_jsonl().as_bytes())?;
            }
        }
        Command::Inspect(a) => print!("{}", inspect::summarize(&a.path)?),
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn protocol(a: &ProtocolArgs, config: &ConfigFile, seed: u64) -> Result<RetrievalProtocol> {
    let defaults = RetrievalProtocol::default();
    let e = &config.eval;
    let direction = match (a.direction, &e.direction) {
        (Some(d), _) => d.into(),
        (None, Some(s)) => s.parse::<Direction>()?,
        (None, None) => defaults.direction,
    };
    let p = RetrievalProtocol {
        pool_size: a.pool.or(e.pool).unwrap_or(defaults.pool_size),
        max_pool: a.max_pool.or(e.max_pool).unwrap_or(defaults.max_pool),
        repeats: a.repeats.or(e.repeats).unwrap_or(defaults.repeats),
        seed,
        direction,
    };
    p.validate()?;
    Ok(p)
}

fn mapping(params: Option<&ProjectionParams>) -> AudioMapping<'_> {
    params.map_or(AudioMapping::RawPad, AudioMapping::Projected)
}

/// Every segment's audio embedding lifted to 1024 dims, in file order.
fn lift_all(ds: &EmbeddingDataset, mapping: AudioMapping<'_>) -> Result<Array2<f32>> {
    if !ds.presence().audio {
        return Err(Error::Validation(
            "dataset carries no audio embeddings; run fuse first".into(),
        ));
    }
    let d_a = ds.dims().audio_dim;
    let mut raw = Array2::<f32>::zeros((ds.len(), d_a));
    for (mut row, s) in raw.outer_iter_mut().zip(ds.segments()) {
        let a = s.audio.as_ref().expect("presence checked");
        row.assign(&ndarray::ArrayView1::from(a.as_slice()));
    }
    lift_audio(raw.view(), mapping)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.jsonl");
    PathBuf::from(name)
}

fn save(ds: &EmbeddingDataset, path: &Path) -> Result<()> {
    save_dataset(ds, path)?;
    save_manifest(ds, &manifest_path(path))
}
