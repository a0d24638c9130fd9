//! Subcommand implementations. Each returns the artefacts it produced so the
//! pipeline can chain them without re-reading files.

use std::fmt;
use std::fs;
use std::net::{ToSocketAddrs, UdpSocket};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use hysense_core::device::{
    load_session, parse_event_script, run_session, save_session, ContactInterval, FrameSource, InteractionDetectorConfig,
    ReplaySource, SessionConfig, SimulatedSource,
};
use hysense_core::embed::{stiffness_batch, stiffness_report, tsne_run, ClusterReport, StiffnessBatch, TsneConfig, STIFFNESS_VARIATIONS};
use hysense_core::imageproc::{
    augment_dataset, classifier_input, read_manifest, read_png, read_raw, resize_bilinear, stiffness_input, write_manifest,
    write_png, write_raw, AugmentationPlan, ImageU8, ManifestEntry, Split, MODEL_INPUT,
};
use hysense_core::metrics::{aggregate, format_table, matrix_csv, MetricsReport};
use hysense_core::nn::{
    holdout_split, load_weights, pooled_confusion, save_weights, train_kfold, AdaBoundConfig, DilatedResNet, NetConfig, Sample,
    TrainConfig, TrainReport,
};
use hysense_core::phantom::{
    force_to_mn, hash01, phantom_catalog, render_tactile_frame, ParisType, PolypPhantom, TactileFrame, FRAME_HEIGHT, FRAME_WIDTH,
};
use hysense_core::wire::{receive_udp, stream_session, SimChannel, Transport, TransmitStats, UdpTransport};
use hysense_core::{sub_seed, Error};

use crate::{AugmentArgs, DeviceRunArgs, EmbedArgs, EvalArgs, FrameFormat, GenArgs, RecvArgs, SendArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    /// Help or version text; printed to stdout with exit code 0.
    Info(String),
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 1,
            CliError::Core(Error::Internal(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Info(s) | CliError::Usage(s) => f.write_str(s),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::Data(msg.into()))
}

pub struct Ctx {
    pub seed: u64,
    pub verbose: bool,
}

impl Ctx {
    pub fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(Error::Internal(e.to_string())))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Rendered frame file as an RGB image: PNG, or raw 320x240 RGB bytes.
pub fn load_frame_image(path: &Path) -> CliResult<ImageU8> {
    let img = if path.extension().is_some_and(|e| e == "png") {
        read_png(path)?
    } else {
        let bytes = read_raw(path)?;
        ImageU8::new(FRAME_WIDTH, FRAME_HEIGHT, 3, bytes)
            .map_err(|_| data_err(format!("{}: raw frames must be {FRAME_WIDTH}x{FRAME_HEIGHT} RGB", path.display())))?
    };
    if img.channels != 3 {
        return Err(data_err(format!("{}: expected an RGB image", path.display())));
    }
    Ok(img)
}

pub fn image_to_frame(img: ImageU8, force_n: f64) -> TactileFrame {
    TactileFrame { width: img.width, height: img.height, rgb: img.data, timestamp_us: 0, force_mn: force_to_mn(force_n) }
}

pub fn frame_stem(p: &PolypPhantom, force_n: f64) -> String {
    format!("{p}_{force_n}N")
}

/// Seed of the sensor noise for one rendered frame.
pub fn render_seed(seed: u64, phantom_idx: usize, force_idx: usize) -> u64 {
    sub_seed(sub_seed(seed, 3), (phantom_idx * 64 + force_idx) as u64)
}

fn check_forces(forces: &[f64]) -> CliResult<()> {
    if forces.is_empty() {
        return usage("--forces needs at least one value");
    }
    if let Some(f) = forces.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
        return usage(format!("--forces: {f} is not a non-negative force"));
    }
    Ok(())
}

/// Renders every catalog phantom at each force; writes frames/ and
/// manifest.csv under `out`.
pub fn phantom_gen(ctx: &Ctx, a: &GenArgs) -> CliResult<Vec<ManifestEntry>> {
    check_forces(&a.forces)?;
    let frames_dir = a.out.join("frames");
    fs::create_dir_all(&frames_dir)?;
    let mut manifest = Vec::new();
    for (pi, p) in phantom_catalog().iter().enumerate() {
        for (fi, &f) in a.forces.iter().enumerate() {
            let frame = render_tactile_frame(p, f, render_seed(ctx.seed, pi, fi))?;
            let name = match a.format {
                FrameFormat::Png => format!("{}.png", frame_stem(p, f)),
                FrameFormat::Raw => format!("{}.rgb", frame_stem(p, f)),
            };
            let path = frames_dir.join(&name);
            match a.format {
                FrameFormat::Png => write_png(&path, &ImageU8::from_frame(&frame))?,
                FrameFormat::Raw => write_raw(&path, &frame.rgb)?,
            }
            manifest.push(ManifestEntry {
                path: format!("frames/{name}"),
                paris_type: p.paris_type,
                variation: p.variation,
                material: p.material,
                force_n: f,
                split: Split::Train,
                aug_tag: "orig".into(),
            });
        }
        ctx.log(format!("rendered {p}"));
    }
    write_manifest(&a.out.join("manifest.csv"), &manifest)?;
    println!("{} frames written to {}", manifest.len(), a.out.display());
    Ok(manifest)
}

fn parse_contact(s: &str) -> CliResult<ContactInterval> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[t0, t1, f]) if t0 >= 0.0 && t1 > t0 && f >= 0.0 && t1.is_finite() && f.is_finite() => Ok(ContactInterval {
            start_us: (t0 * 1e6).round() as u64,
            end_us: (t1 * 1e6).round() as u64,
            force_n: f,
        }),
        _ => usage(format!("--contact {s:?}: expected start_s:end_s:force_n with start < end")),
    }
}

#[derive(Serialize)]
struct DeviceSummary {
    session_id: u32,
    frames: usize,
    state_trace: Vec<(u64, hysense_core::device::DeviceState)>,
}

pub fn device_run(ctx: &Ctx, a: &DeviceRunArgs) -> CliResult<()> {
    if a.fps == 0 {
        return usage("--fps must be positive");
    }
    let detector = InteractionDetectorConfig {
        diff_threshold: a.threshold,
        consecutive_frames: a.consecutive,
        baseline_window: a.baseline,
    };
    detector.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let script_text = fs::read_to_string(&a.script).map_err(|e| data_err(format!("{}: {e}", a.script.display())))?;
    let script = parse_event_script(&script_text)?;
    let mut source: Box<dyn FrameSource> = match &a.replay {
        Some(dir) => Box::new(ReplaySource::new(load_session(dir)?.frames)),
        None => {
            let phantom: PolypPhantom = a.phantom.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
            let contacts = a.contact.iter().map(|c| parse_contact(c)).collect::<CliResult<Vec<_>>>()?;
            Box::new(SimulatedSource::new(phantom, contacts, sub_seed(ctx.seed, 4)))
        }
    };
    let cfg = SessionConfig { session_id: a.session_id, fps: a.fps, detector, max_frames: a.max_frames };
    let rec = run_session(source.as_mut(), &script, &cfg)?;
    save_session(&a.out, &rec)?;
    ctx.log(format!("session written to {}", a.out.display()));
    println!(
        "{}",
        to_json(&DeviceSummary { session_id: rec.session_id, frames: rec.frames.len(), state_trace: rec.state_trace })
    );
    Ok(())
}

#[derive(Serialize)]
struct SendSummary {
    #[serde(flatten)]
    tx: TransmitStats,
    /// Datagrams that left the lossy channel and went onto the socket.
    datagrams_forwarded: u64,
}

pub fn stream_send(ctx: &Ctx, a: &SendArgs) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.sim_loss) {
        return usage("--sim-loss must lie in [0, 1)");
    }
    let dest = a
        .dest
        .to_socket_addrs()
        .map_err(|e| CliError::Usage(format!("--dest {}: {e}", a.dest)))?
        .next()
        .ok_or_else(|| CliError::Usage(format!("--dest {} resolves to nothing", a.dest)))?;
    let rec = load_session(&a.session)?;
    let mut udp = UdpTransport::connect(dest)?;
    udp.pace = Duration::from_micros(a.pace_us);
    let (tx, forwarded) = if a.sim_loss > 0.0 || a.reorder > 0 {
        let mut ch = SimChannel::new(a.sim_loss, 0.0, a.reorder, sub_seed(ctx.seed, 5))?;
        let tx = stream_session(&rec, &mut ch).map_err(|(_, e)| e)?;
        let out = ch.drain();
        for p in &out {
            udp.send(p)?;
        }
        (tx, out.len() as u64)
    } else {
        let tx = stream_session(&rec, &mut udp).map_err(|(_, e)| e)?;
        (tx, tx.packets_sent)
    };
    ctx.log(format!("sent {} frames to {dest}", tx.frames_sent));
    println!("{}", to_json(&SendSummary { tx, datagrams_forwarded: forwarded }));
    Ok(())
}

pub fn stream_recv(ctx: &Ctx, a: &RecvArgs) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.sim_loss) {
        return usage("--sim-loss must lie in [0, 1)");
    }
    let socket = UdpSocket::bind((a.bind.as_str(), a.listen))?;
    eprintln!("listening on {}", socket.local_addr()?);
    let loss_seed = sub_seed(ctx.seed, 6);
    let mut n = 0u64;
    let received = receive_udp(&socket, Duration::from_millis(a.idle_timeout_ms), |_| {
        n += 1;
        hash01(&[loss_seed, n]) >= a.sim_loss
    })?;
    let stats = received.stats;
    let rec = received.into_record()?;
    save_session(&a.out, &rec)?;
    ctx.log(format!("{} frames written to {}", rec.frames.len(), a.out.display()));
    println!("{}", to_json(&stats));
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub sources: usize,
    pub rows: usize,
    pub train_rows: usize,
    pub eval_rows: usize,
    pub eval_per_class: [usize; 4],
    pub force_n: f64,
    pub eval_fraction: f64,
    pub plan: AugmentationPlan,
    pub split_seed: u64,
}

/// Crops, resizes and augments the frames at `force`, then holds out a
/// stratified evaluation split. Writes images/, manifest.csv and
/// dataset.json under `out`.
pub fn augment(ctx: &Ctx, a: &AugmentArgs) -> CliResult<DatasetInfo> {
    if a.factor == 0 {
        return usage("--factor must be at least 1");
    }
    if !(a.eval_fraction > 0.0 && a.eval_fraction < 1.0) {
        return usage("--eval-fraction must lie in (0, 1)");
    }
    let manifest = read_manifest(&a.manifest)?;
    let base = manifest_dir(&a.manifest);
    let mut sources = Vec::new();
    for e in manifest.iter().filter(|e| (e.force_n - a.force).abs() < 1e-9 && (e.aug_tag.is_empty() || e.aug_tag == "orig")) {
        let img = load_frame_image(&base.join(&e.path))?;
        sources.push((e.clone(), classifier_input(&image_to_frame(img, e.force_n), MODEL_INPUT)?));
    }
    if sources.is_empty() {
        return Err(data_err(format!("{} has no unaugmented frames at {} N", a.manifest.display(), a.force)));
    }
    let mut plan = AugmentationPlan::new(sub_seed(ctx.seed, 1));
    plan.factor = a.factor;
    let mut rows = augment_dataset(&sources, &plan)?;
    let labels: Vec<usize> = rows.iter().map(|(e, _)| e.paris_type.code() as usize).collect();
    let split_seed = sub_seed(ctx.seed, 2);
    let (_, eval_idx) = holdout_split(&labels, a.eval_fraction, split_seed)?;
    for &i in &eval_idx {
        rows[i].0.split = Split::Eval;
    }
    let img_dir = a.out.join("images");
    fs::create_dir_all(&img_dir)?;
    let mut out_manifest = Vec::with_capacity(rows.len());
    for (i, (mut e, img)) in rows.into_iter().enumerate() {
        let stem = Path::new(&e.path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let name = format!("{stem}_a{}.png", i % a.factor);
        write_png(&img_dir.join(&name), &img)?;
        e.path = format!("images/{name}");
        out_manifest.push(e);
    }
    write_manifest(&a.out.join("manifest.csv"), &out_manifest)?;
    let mut eval_per_class = [0; 4];
    for e in out_manifest.iter().filter(|e| e.split == Split::Eval) {
        eval_per_class[e.paris_type.code() as usize] += 1;
    }
    let info = DatasetInfo {
        sources: sources.len(),
        rows: out_manifest.len(),
        train_rows: out_manifest.len() - eval_idx.len(),
        eval_rows: eval_idx.len(),
        eval_per_class,
        force_n: a.force,
        eval_fraction: a.eval_fraction,
        plan,
        split_seed,
    };
    write_json(&a.out.join("dataset.json"), &info)?;
    println!("{} rows ({} train, {} eval) written to {}", info.rows, info.train_rows, info.eval_rows, a.out.display());
    Ok(info)
}

/// Samples for the rows of `split`, resized to `size`.
pub fn load_samples(manifest: &Path, split: Split, size: usize) -> CliResult<Vec<Sample>> {
    let base = manifest_dir(manifest);
    let rows = read_manifest(manifest)?;
    let mut out = Vec::new();
    for e in rows.iter().filter(|e| e.split == split) {
        let img = read_png(&base.join(&e.path))?;
        if img.channels != 3 || img.width != img.height {
            return Err(data_err(format!("{}: classifier images must be square RGB", e.path)));
        }
        let img = if img.width == size { img } else { resize_bilinear(&img, size, size)? };
        out.push(Sample::from_image(&img, e.paris_type.code() as usize)?);
    }
    if out.is_empty() {
        return Err(data_err(format!("{} has no {split:?} rows", manifest.display())));
    }
    Ok(out)
}

pub fn train(ctx: &Ctx, a: &TrainArgs) -> CliResult<(Vec<DilatedResNet>, TrainReport)> {
    if a.folds < 2 || a.epochs == 0 || a.batch_size == 0 {
        return usage("--folds must be at least 2, --epochs and --batch-size at least 1");
    }
    if a.input_size < 8 {
        return usage("--input-size must be at least 8");
    }
    if !(a.lr > 0.0 && a.final_lr > 0.0) {
        return usage("--lr and --final-lr must be positive");
    }
    let pool = load_samples(&a.manifest, Split::Train, a.input_size)?;
    let cfg = TrainConfig {
        net: NetConfig::new(a.input_size),
        optimizer: AdaBoundConfig { lr: a.lr, final_lr: a.final_lr, ..AdaBoundConfig::default() },
        epochs: a.epochs,
        batch_size: a.batch_size,
        folds: a.folds,
        seed: sub_seed(ctx.seed, 7),
        verbose: ctx.verbose,
    };
    ctx.log(format!("training {} folds on {} samples", a.folds, pool.len()));
    let (models, report) = train_kfold(&pool, &cfg)?;
    fs::create_dir_all(&a.out)?;
    for (k, m) in models.iter().enumerate() {
        save_weights(&a.out.join(format!("fold{k}.tpnw")), m)?;
    }
    write_json(&a.out.join("train_report.json"), &report)?;
    for f in &report.folds {
        println!("fold {}: best epoch {} val acc {:.4}", f.fold, f.best_epoch, f.best_val_accuracy);
    }
    Ok((models, report))
}

/// Fold models written by `train`, in fold order.
pub fn load_fold_models(dir: &Path) -> CliResult<Vec<DilatedResNet>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data_err(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "tpnw")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("fold"))
        })
        .collect();
    paths.sort_by_key(|p| {
        p.file_stem().and_then(|s| s.to_string_lossy().trim_start_matches("fold").parse::<usize>().ok()).unwrap_or(usize::MAX)
    });
    if paths.is_empty() {
        return Err(data_err(format!("no fold*.tpnw files in {}", dir.display())));
    }
    paths.iter().map(|p| load_weights(p).map_err(CliError::from)).collect()
}

pub fn evaluate_models(ctx: &Ctx, models: &[DilatedResNet], manifest: &Path, out: &Path) -> CliResult<MetricsReport> {
    let size = models[0].config.input_size;
    if models.iter().any(|m| m.config.input_size != size) {
        return Err(data_err("fold models disagree on input size"));
    }
    let samples = load_samples(manifest, Split::Eval, size)?;
    ctx.log(format!("evaluating {} models on {} samples", models.len(), samples.len()));
    let report = aggregate(&pooled_confusion(models, &samples)?)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    fs::write(out.join("sensitivity.csv"), matrix_csv(&report.sensitivity_matrix))?;
    fs::write(out.join("precision.csv"), matrix_csv(&report.precision_matrix))?;
    println!("{}", format_table("sensitivity (rows: true class)", &report.sensitivity_matrix));
    println!("{}", format_table("precision (columns: predicted class)", &report.precision_matrix));
    println!(
        "accuracy {:.4}  recall {:.4}  specificity {:.4}  precision {:.4}",
        report.e_acc, report.e_rec, report.e_spec, report.e_prec
    );
    Ok(report)
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> CliResult<MetricsReport> {
    let models = load_fold_models(&a.weights)?;
    evaluate_models(ctx, &models, &a.manifest, &a.out)
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchResult {
    pub paris_type: ParisType,
    pub variation: u8,
    pub seed: u64,
    pub kl_after_exaggeration: f64,
    pub final_kl: f64,
    pub report: ClusterReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbedReport {
    pub config: TsneConfig,
    pub batches: Vec<BatchResult>,
    /// Batches left out because the manifest lacks some of their frames.
    pub skipped: Vec<String>,
}

/// Embeds each (type, variation) batch. With `strict`, a missing frame is an
/// error; otherwise the batch is skipped and listed in the report.
pub fn embed_manifest(ctx: &Ctx, manifest: &Path, out: &Path, base_cfg: TsneConfig, strict: bool) -> CliResult<EmbedReport> {
    let rows = read_manifest(manifest)?;
    let base = manifest_dir(manifest);
    let load = |e: &ManifestEntry| -> hysense_core::Result<ImageU8> {
        let img = load_frame_image(&base.join(&e.path)).map_err(|e| match e {
            CliError::Core(c) => c,
            other => Error::Data(other.to_string()),
        })?;
        stiffness_input(&image_to_frame(img, e.force_n), MODEL_INPUT)
    };
    let mut batches: Vec<StiffnessBatch> = Vec::new();
    let mut skipped = Vec::new();
    for t in ParisType::ALL {
        for v in STIFFNESS_VARIATIONS {
            match stiffness_batch(&rows, t, v, load) {
                Ok(b) => batches.push(b),
                Err(Error::Data(msg)) if !strict => {
                    ctx.log(format!("skipping {}-{v}: {msg}", t.name()));
                    skipped.push(format!("{}-{v}", t.name()));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    fs::create_dir_all(out)?;
    let mut csv = String::from("point_id,x,y,material,force_n,type,variation\n");
    let mut results = Vec::new();
    let mut point_id = 0usize;
    for (idx, b) in batches.iter().enumerate() {
        let cfg = TsneConfig { seed: sub_seed(base_cfg.seed, idx as u64), ..base_cfg };
        let emb = tsne_run(&b.rows(), &cfg)?;
        let materials: Vec<_> = b.entries.iter().map(|e| e.material).collect();
        let forces: Vec<f64> = b.entries.iter().map(|e| e.force_n).collect();
        let report = stiffness_report(&emb.points, &materials, Some(&forces))?;
        for (e, p) in b.entries.iter().zip(&emb.points) {
            csv += &format!(
                "{point_id},{},{},{},{},{},{}\n",
                p[0],
                p[1],
                e.material.name(),
                e.force_n,
                e.paris_type.name(),
                e.variation
            );
            point_id += 1;
        }
        let kl_after = emb.kl_trace.get(cfg.exaggeration_iters).or(emb.kl_trace.last()).copied().unwrap_or(f64::NAN);
        ctx.log(format!("{}-{}: knn {:.3}", b.paris_type.name(), b.variation, report.knn_agreement));
        results.push(BatchResult {
            paris_type: b.paris_type,
            variation: b.variation,
            seed: cfg.seed,
            kl_after_exaggeration: kl_after,
            final_kl: emb.kl_trace.last().copied().unwrap_or(f64::NAN),
            report,
        });
    }
    fs::write(out.join("embedding.csv"), csv)?;
    let report = EmbedReport { config: base_cfg, batches: results, skipped };
    write_json(&out.join("cluster_report.json"), &report)?;
    for r in &report.batches {
        let per_force: Vec<String> = r.report.per_force.iter().map(|f| format!("{:.2}", f.knn_agreement)).collect();
        println!(
            "{}-{}: knn {:.3} silhouette {} per force [{}]",
            r.paris_type.name(),
            r.variation,
            r.report.knn_agreement,
            r.report.silhouette.map_or("n/a".into(), |s| format!("{s:.3}")),
            per_force.join(", ")
        );
    }
    Ok(report)
}

pub fn embed(ctx: &Ctx, a: &EmbedArgs) -> CliResult<EmbedReport> {
    let cfg = TsneConfig { perplexity: a.perplexity, iterations: a.iters, learning_rate: a.lr, ..TsneConfig::new(sub_seed(ctx.seed, 8)) };
    cfg.validate(12).map_err(|e| CliError::Usage(e.to_string()))?;
    embed_manifest(ctx, &a.manifest, &a.out, cfg, true)
}
