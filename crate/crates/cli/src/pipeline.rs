//! `pipeline all`: renders the catalog, streams it through the lossy channel,
//! and runs augmentation, training, evaluation and embedding on what arrived.

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use serde::Serialize;

use hysense_core::device::{DeviceState, SessionRecord, SourceKind};
use hysense_core::embed::{TsneConfig, STIFFNESS_FORCES};
use hysense_core::imageproc::{write_manifest, write_png, ImageU8, ManifestEntry, Split};
use hysense_core::metrics::MetricsReport;
use hysense_core::phantom::{force_to_mn, phantom_catalog, render_tactile_frame, ParisType};
use hysense_core::sub_seed;
use hysense_core::wire::{simulate_stream, ReceiverStats, SimChannel, TransmitStats};

use crate::commands::{self, frame_stem, render_seed, write_json, CliError, CliResult, Ctx};
use crate::{AugmentArgs, PipelineArgs, TrainArgs};

const REPORT_VERSION: u32 = 1;
const PIPELINE_FPS: u32 = 10;
const TRAIN_FORCE_N: f64 = 0.8;

#[derive(Serialize)]
struct StreamSummary {
    sent: TransmitStats,
    received: ReceiverStats,
    frames_rendered: usize,
}

#[derive(Serialize)]
struct EvalSummary {
    e_acc: f64,
    e_rec: f64,
    e_spec: f64,
    e_prec: f64,
    per_class_recall: [Option<f64>; 4],
}

impl From<&MetricsReport> for EvalSummary {
    fn from(r: &MetricsReport) -> Self {
        Self { e_acc: r.e_acc, e_rec: r.e_rec, e_spec: r.e_spec, e_prec: r.e_prec, per_class_recall: r.per_class_recall }
    }
}

#[derive(Serialize)]
struct BatchKnn {
    paris_type: ParisType,
    variation: u8,
    knn_agreement: f64,
    per_force: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct PipelineConfig {
    sim_loss: f64,
    reorder: usize,
    input_size: usize,
    epochs: usize,
    folds: usize,
    batch_size: usize,
    perplexity: f64,
    iters: usize,
    tsne_lr: f64,
}

#[derive(Serialize)]
struct PipelineReport {
    version: u32,
    seed: u64,
    sub_seeds: BTreeMap<&'static str, u64>,
    config: PipelineConfig,
    /// CRC32 of every rendered frame, hex, in catalog order.
    input_digest: String,
    stream: StreamSummary,
    eval: EvalSummary,
    embedding: Vec<BatchKnn>,
    skipped_batches: Vec<String>,
    /// Wall-clock time per stage; the only run-dependent field.
    timing_ms: BTreeMap<&'static str, u128>,
}

pub fn pipeline_all(ctx: &Ctx, a: &PipelineArgs) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.sim_loss) {
        return Err(CliError::Usage("--sim-loss must lie in [0, 1)".into()));
    }
    let mut timing = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timing: &mut BTreeMap<&'static str, u128>| {
        timing.insert(name, clock.elapsed().as_millis());
        clock = Instant::now();
    };

    // Render every phantom at the stiffness forces as one recorded session.
    let mut frames = Vec::new();
    let mut entries = Vec::new();
    let mut digest = crc32fast::Hasher::new();
    let period = 1_000_000 / PIPELINE_FPS as u64;
    for (pi, p) in phantom_catalog().iter().enumerate() {
        for (fi, &f) in STIFFNESS_FORCES.iter().enumerate() {
            let mut frame = render_tactile_frame(p, f, render_seed(ctx.seed, pi, fi))?;
            frame.timestamp_us = frames.len() as u64 * period;
            frame.force_mn = force_to_mn(f);
            digest.update(&crc32fast::hash(&frame.rgb).to_le_bytes());
            entries.push(ManifestEntry {
                path: format!("frames/{}.png", frame_stem(p, f)),
                paris_type: p.paris_type,
                variation: p.variation,
                material: p.material,
                force_n: f,
                split: Split::Train,
                aug_tag: "orig".into(),
            });
            frames.push(frame);
        }
    }
    let end_us = frames.len() as u64 * period;
    let record = SessionRecord {
        session_id: 1,
        fps: PIPELINE_FPS,
        frames,
        state_trace: vec![(0, DeviceState::Idle), (0, DeviceState::Working), (end_us, DeviceState::Idle)],
        source: SourceKind::Simulated,
    };
    ctx.log(format!("rendered {} frames", record.frames.len()));
    lap("render", &mut timing);

    let stream_seed = sub_seed(ctx.seed, 5);
    let mut channel = SimChannel::new(a.sim_loss, 0.0, a.reorder, stream_seed)?;
    let (sent, received) = simulate_stream(&record, &mut channel)?;
    let recv_dir = a.out.join("received");
    fs::create_dir_all(recv_dir.join("frames"))?;
    let mut delivered = Vec::with_capacity(received.frames.len());
    for d in &received.frames {
        let entry = entries
            .get(d.frame_id as usize)
            .ok_or_else(|| CliError::Core(hysense_core::Error::Data(format!("unknown frame id {}", d.frame_id))))?;
        let src = &record.frames[d.frame_id as usize];
        let img = ImageU8::new(src.width, src.height, 3, d.rgb.clone())?;
        write_png(&recv_dir.join(&entry.path), &img)?;
        delivered.push(entry.clone());
    }
    write_manifest(&recv_dir.join("manifest.csv"), &delivered)?;
    let stream = StreamSummary { sent, received: received.stats, frames_rendered: record.frames.len() };
    println!(
        "stream: {} of {} frames delivered, {} dropped",
        stream.received.delivered_frames, stream.frames_rendered, stream.received.dropped_frames
    );
    lap("stream", &mut timing);

    let dataset_dir = a.out.join("dataset");
    let aug = AugmentArgs {
        manifest: recv_dir.join("manifest.csv"),
        out: dataset_dir.clone(),
        factor: 6,
        force: TRAIN_FORCE_N,
        eval_fraction: 0.25,
    };
    commands::augment(ctx, &aug)?;
    lap("augment", &mut timing);

    let train = TrainArgs {
        manifest: dataset_dir.join("manifest.csv"),
        out: a.out.join("model"),
        folds: a.folds,
        epochs: a.epochs,
        batch_size: a.batch_size,
        input_size: a.input_size,
        lr: 1e-3,
        final_lr: 0.01,
    };
    let (models, _) = commands::train(ctx, &train)?;
    lap("train", &mut timing);

    let metrics = commands::evaluate_models(ctx, &models, &dataset_dir.join("manifest.csv"), &a.out.join("eval"))?;
    lap("eval", &mut timing);

    let tsne_seed = sub_seed(ctx.seed, 8);
    let tsne = TsneConfig { perplexity: a.perplexity, iterations: a.iters, learning_rate: a.tsne_lr, ..TsneConfig::new(tsne_seed) };
    tsne.validate(12).map_err(|e| CliError::Usage(e.to_string()))?;
    let embed = commands::embed_manifest(ctx, &recv_dir.join("manifest.csv"), &a.out.join("embed"), tsne, false)?;
    lap("embed", &mut timing);

    let report = PipelineReport {
        version: REPORT_VERSION,
        seed: ctx.seed,
        sub_seeds: BTreeMap::from([
            ("augment_plan", sub_seed(ctx.seed, 1)),
            ("eval_split", sub_seed(ctx.seed, 2)),
            ("render", sub_seed(ctx.seed, 3)),
            ("channel", stream_seed),
            ("train", sub_seed(ctx.seed, 7)),
            ("tsne", tsne_seed),
        ]),
        config: PipelineConfig {
            sim_loss: a.sim_loss,
            reorder: a.reorder,
            input_size: a.input_size,
            epochs: a.epochs,
            folds: a.folds,
            batch_size: a.batch_size,
            perplexity: a.perplexity,
            iters: a.iters,
            tsne_lr: a.tsne_lr,
        },
        input_digest: format!("{:08x}", digest.finalize()),
        stream,
        eval: EvalSummary::from(&metrics),
        embedding: embed
            .batches
            .iter()
            .map(|b| BatchKnn {
                paris_type: b.paris_type,
                variation: b.variation,
                knn_agreement: b.report.knn_agreement,
                per_force: b.report.per_force.iter().map(|f| (f.force_n, f.knn_agreement)).collect(),
            })
            .collect(),
        skipped_batches: embed.skipped,
        timing_ms: timing,
    };
    write_json(&a.out.join("pipeline_report.json"), &report)?;
    println!("pipeline report written to {}", a.out.join("pipeline_report.json").display());
    Ok(())
}
