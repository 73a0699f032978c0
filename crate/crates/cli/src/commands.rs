use std::path::{Path, PathBuf};

use ssrfcn::data::synth::{write_dataset, ArtifactKind, SynthConfig, THIRTEEN_TYPES};
use ssrfcn::data::{load_image, load_manifest, load_samples, tensor_to_image};
use ssrfcn::eval::{
    evaluate_records, run_protocol, score_records, CellReport, FcnRunner, Metric, ProtocolKind,
    ProtocolReport, ProtocolSpec,
};
use ssrfcn::fsutil::{write_atomic, write_atomic_bytes};
use ssrfcn::heatmap::overlay;
use ssrfcn::model::{is_spoof, load_model, save_model};
use ssrfcn::region::RegionStrategy;
use ssrfcn::train::{stage1_train, stage2_finetune, EpochReport, TrainConfig};
use ssrfcn::{Error, FcnConfig, FcnModel};

use crate::{Cli, Command, CommonTrain, EvalArgs, FinetuneArgs, InferArgs, RegionArgs, SynthArgs, TrainArgs, VisualizeArgs};

pub enum Failure {
    /// Bad invocation; exit code 2.
    Usage(String),
    /// Any module error; exit code 1.
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    let resolved = serde_json::to_value(cli).map_err(Error::from)?;
    log::info!("resolved config: {resolved}");
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(cli, a, &resolved),
        Command::Finetune(a) => finetune(cli, a, &resolved),
        Command::Eval(a) => eval(cli, a),
        Command::Infer(a) => infer(a),
        Command::Visualize(a) => visualize(a),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn synth(a: &SynthArgs) -> Outcome {
    let cfg = SynthConfig {
        live_videos: a.live_videos,
        spoof_videos: a.spoof_videos,
        frames_per_video: a.frames_per_video,
        videos_per_subject: a.videos_per_subject,
        side: a.side,
        artifact: parse::<ArtifactKind>(&a.artifact)?,
        box_min: a.box_min,
        box_max: a.box_max,
        amplitude: a.amplitude,
        noise: a.noise,
        spoof_types: if a.thirteen_types {
            THIRTEEN_TYPES.iter().map(|s| s.to_string()).collect()
        } else {
            a.types.clone()
        },
        seed: a.seed,
    };
    let records = write_dataset(&cfg, &a.out)?;
    log::info!("wrote {} images to {}", records.len(), a.out.display());
    println!("{}", a.out.join(ssrfcn::data::synth::MANIFEST_FILE).display());
    Ok(())
}

fn model_config(channels: &[usize]) -> Result<FcnConfig, Failure> {
    let c: [usize; 4] = channels
        .try_into()
        .map_err(|_| Failure::Usage(format!("--channels needs 4 widths, got {}", channels.len())))?;
    Ok(FcnConfig {
        channels: [c[0], c[1], c[2], c[3], 1],
        ..FcnConfig::default()
    })
}

fn train_config(cli: &Cli, c: &CommonTrain) -> TrainConfig {
    TrainConfig {
        learning_rate: c.lr as f32,
        batch_size: c.batch_size,
        epochs: c.epochs,
        seed: c.seed,
        flip_probability: c.flip_probability,
        record_wall_time: !cli.strict_determinism,
        ..TrainConfig::default()
    }
}

fn with_region(mut cfg: TrainConfig, r: &RegionArgs) -> Result<TrainConfig, Failure> {
    cfg.strategy = parse::<RegionStrategy>(&r.strategy)?;
    cfg.min_region = r.min_region;
    cfg.max_region = r.max_region;
    cfg.regions_per_spoof_image = r.regions_per_spoof_image;
    cfg.tau = r.tau;
    cfg.mix_in = r.mix_in;
    cfg.freeze_masks = r.freeze_masks;
    Ok(cfg)
}

fn side(image_size: usize) -> Option<usize> {
    (image_size > 0).then_some(image_size)
}

fn log_path(explicit: &Option<PathBuf>, weights: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| weights.with_extension("jsonl"))
}

/// Config line followed by one line per epoch.
fn write_train_log(path: &Path, resolved: &serde_json::Value, reports: &[EpochReport]) -> Result<(), Error> {
    write_atomic(path, |out| {
        let head = serde_json::json!({"event": "config", "config": resolved});
        writeln!(out, "{head}")?;
        for r in reports {
            let mut line = serde_json::to_value(r)?;
            line["event"] = "epoch".into();
            writeln!(out, "{line}")?;
        }
        Ok(())
    })
}

fn train(cli: &Cli, a: &TrainArgs, resolved: &serde_json::Value) -> Outcome {
    let cfg = train_config(cli, &a.common);
    cfg.validate()?;
    let records = load_manifest(&a.common.manifest)?;
    let samples = load_samples(&records, side(a.common.image_size), a.common.frame_stride)?;
    let mut model = FcnModel::new(model_config(&a.channels)?, cfg.seed)?;
    let reports = stage1_train(&mut model, &samples, &cfg)?;
    save_model(&model, &a.out)?;
    write_train_log(&log_path(&a.common.log, &a.out), resolved, &reports)?;
    log::info!("saved {}", a.out.display());
    Ok(())
}

fn finetune(cli: &Cli, a: &FinetuneArgs, resolved: &serde_json::Value) -> Outcome {
    let cfg = with_region(train_config(cli, &a.common), &a.region)?;
    cfg.validate()?;
    let mut model = load_model(&a.weights)?;
    let records = load_manifest(&a.common.manifest)?;
    let samples = load_samples(&records, side(a.common.image_size), a.common.frame_stride)?;
    let reports = stage2_finetune(&mut model, &samples, &cfg)?;
    save_model(&model, &a.out)?;
    write_train_log(&log_path(&a.common.log, &a.out), resolved, &reports)?;
    log::info!("saved {}", a.out.display());
    Ok(())
}

fn metrics(a: &EvalArgs, kind: Option<ProtocolKind>) -> Result<Vec<Metric>, Failure> {
    if a.metric.is_empty() {
        return Ok(match kind {
            Some(ProtocolKind::CrossDataset) => vec![Metric::Hter, Metric::Eer],
            _ => vec![Metric::Apcer, Metric::Bpcer, Metric::Acer, Metric::Eer, Metric::Tdr],
        });
    }
    a.metric.iter().map(|m| parse::<Metric>(m)).collect()
}

fn eval(cli: &Cli, a: &EvalArgs) -> Outcome {
    let records = load_manifest(&a.manifest)?;
    let (report, kind) = match (&a.weights, &a.protocol) {
        (Some(w), None) => {
            let model = load_model(w)?;
            let scores = score_records(&model, &records, side(a.image_size))?;
            let (set, metrics) = evaluate_records(&records, &scores, a.fdr)?;
            let cell = CellReport {
                name: a.manifest.display().to_string(),
                held_out: None,
                degenerate: false,
                train_records: 0,
                test_records: records.len(),
                test_videos: set.records.len(),
                metrics,
            };
            (ProtocolReport::from_cells("fixed_weights", a.fdr, vec![cell]), None)
        }
        (None, Some(p)) => {
            let kind = parse::<ProtocolKind>(p)?;
            let mut spec = ProtocolSpec::new(kind, a.seed);
            spec.fdr_target = a.fdr;
            spec.held_out = a.held_out.clone();
            if let Some(f) = a.train_fraction {
                spec.train_fraction = f;
            }
            let second = match (&a.test_manifest, kind) {
                (Some(m), ProtocolKind::CrossDataset) => Some(load_manifest(m)?),
                (None, ProtocolKind::CrossDataset) => {
                    return Err(Failure::Usage("cross_dataset needs --test-manifest".into()))
                }
                _ => None,
            };
            let stage1 = TrainConfig {
                learning_rate: a.lr as f32,
                batch_size: a.batch_size,
                epochs: a.epochs,
                seed: a.seed,
                flip_probability: a.flip_probability,
                record_wall_time: !cli.strict_determinism,
                ..TrainConfig::default()
            };
            let stage2 = if a.finetune_epochs > 0 {
                Some(with_region(TrainConfig { epochs: a.finetune_epochs, ..stage1.clone() }, &a.region)?)
            } else {
                None
            };
            let mut runner = FcnRunner {
                model: model_config(&a.channels)?,
                stage1,
                stage2,
                expected_side: side(a.image_size),
                frame_stride: a.frame_stride,
            };
            (run_protocol(&spec, &mut runner, &records, second.as_deref())?, Some(kind))
        }
        _ => {
            return Err(Failure::Usage(
                "eval needs exactly one of --weights or --protocol".into(),
            ))
        }
    };
    let table = report.to_table(&metrics(a, kind)?);
    print!("{table}");
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        let mut json = serde_json::to_vec_pretty(&report).map_err(Error::from)?;
        json.push(b'\n');
        write_atomic_bytes(&dir.join("report.json"), &json)?;
        write_atomic_bytes(&dir.join("report.txt"), table.as_bytes())?;
    }
    Ok(())
}

fn decision(score: f64) -> &'static str {
    if is_spoof(score) {
        "spoof"
    } else {
        "live"
    }
}

fn infer(a: &InferArgs) -> Outcome {
    let model = load_model(&a.weights)?;
    let image = load_image(&a.image, None)?;
    let score = model.spoofness(&image)? as f64;
    if a.json {
        let out = serde_json::json!({
            "image": a.image,
            "spoofness": score,
            "decision": decision(score),
        });
        println!("{out}");
    } else {
        println!("{score:.6} {}", decision(score));
    }
    Ok(())
}

fn visualize(a: &VisualizeArgs) -> Outcome {
    let model = load_model(&a.weights)?;
    let image = load_image(&a.image, None)?;
    let map = model.score_map(&image)?;
    let score = model.spoofness(&image)? as f64;
    let heat = overlay(&tensor_to_image(&image, 0), &map);

    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, heat.width(), heat.height());
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let text = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
        enc.add_text_chunk("spoofness".into(), format!("{score:.6}")).map_err(text)?;
        enc.add_text_chunk("decision".into(), decision(score).into()).map_err(text)?;
        let mut w = enc.write_header().map_err(text)?;
        w.write_image_data(heat.as_raw()).map_err(text)?;
        w.finish().map_err(text)?;
    }
    write_atomic_bytes(&a.out, &bytes)?;
    println!("{score:.6} {} {}", decision(score), a.out.display());
    Ok(())
}
