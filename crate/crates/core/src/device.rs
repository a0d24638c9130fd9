//! Edge-device behaviour: the three-status state machine driven by rocker
//! switch edges, frame-differencing interaction detection, and session
//! recording.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data, domain, Result};
use crate::imageproc::{read_raw, write_raw};
use crate::phantom::{render_tactile_frame, PolypPhantom, TactileFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceState {
    Idle,
    Working,
    PolypInteraction,
}

impl DeviceState {
    pub const ALL: [DeviceState; 3] = [DeviceState::Idle, DeviceState::Working, DeviceState::PolypInteraction];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Edge {
    Rising,
    Falling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub edge: Edge,
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InteractionSignal {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Input {
    Switch(Edge),
    Interaction(InteractionSignal),
}

impl Input {
    pub const ALL: [Input; 4] = [
        Input::Switch(Edge::Rising),
        Input::Switch(Edge::Falling),
        Input::Interaction(InteractionSignal::Start),
        Input::Interaction(InteractionSignal::End),
    ];
}

/// Transition function. Switching off wins over an ongoing interaction;
/// every pair not listed is a no-op.
pub fn step_state(current: DeviceState, input: Input) -> DeviceState {
    use DeviceState::*;
    use InteractionSignal::*;
    match (current, input) {
        (Idle, Input::Switch(Edge::Rising)) => Working,
        (Working, Input::Switch(Edge::Falling)) => Idle,
        (Working, Input::Interaction(Start)) => PolypInteraction,
        (PolypInteraction, Input::Interaction(End)) => Working,
        (PolypInteraction, Input::Switch(Edge::Falling)) => Idle,
        (s, _) => s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionDetectorConfig {
    /// Mean absolute per-byte difference from the baseline, 0..255 scale.
    pub diff_threshold: f64,
    pub consecutive_frames: usize,
    pub baseline_window: usize,
}

impl Default for InteractionDetectorConfig {
    fn default() -> Self {
        Self { diff_threshold: 5.0, consecutive_frames: 3, baseline_window: 3 }
    }
}

impl InteractionDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.diff_threshold > 0.0) || self.consecutive_frames == 0 || self.baseline_window == 0 {
            return domain("detector threshold, consecutive count and baseline window must be positive");
        }
        Ok(())
    }
}

/// Mean absolute difference between a frame and a per-byte baseline.
fn mean_abs_diff(frame: &TactileFrame, baseline: &[f64]) -> f64 {
    let s: f64 = frame.rgb.iter().zip(baseline).map(|(&p, &b)| (p as f64 - b).abs()).sum();
    s / baseline.len() as f64
}

/// `window` holds `baseline_window` baseline frames followed by the recent
/// frames, oldest first. Start is signalled when the last
/// `consecutive_frames` recent frames all differ from the baseline mean by
/// more than the threshold and the frame before them (if any) did not; End
/// is the mirror image.
pub fn detect_interaction(window: &[&TactileFrame], cfg: &InteractionDetectorConfig) -> Result<Option<InteractionSignal>> {
    cfg.validate()?;
    let (b, k) = (cfg.baseline_window, cfg.consecutive_frames);
    if window.len() < b + k {
        return domain(format!("detector window has {} frames, needs {}", window.len(), b + k));
    }
    let (w, h) = (window[0].width, window[0].height);
    if window.iter().any(|f| f.width != w || f.height != h || !f.is_valid()) {
        return domain("detector window frames have mismatched dimensions");
    }
    let mut base = vec![0.0; w * h * 3];
    for f in &window[..b] {
        for (acc, &p) in base.iter_mut().zip(&f.rgb) {
            *acc += p as f64;
        }
    }
    base.iter_mut().for_each(|v| *v /= b as f64);
    let above: Vec<bool> = window[b..].iter().map(|f| mean_abs_diff(f, &base) > cfg.diff_threshold).collect();
    let m = above.len();
    let before = if m > k { Some(above[m - k - 1]) } else { None };
    let tail = &above[m - k..];
    if tail.iter().all(|&a| a) && before != Some(true) {
        Ok(Some(InteractionSignal::Start))
    } else if tail.iter().all(|&a| !a) && before == Some(true) {
        Ok(Some(InteractionSignal::End))
    } else {
        Ok(None)
    }
}

/// Rolling detector used while recording. The first `baseline_window`
/// frames after a reset are the baseline; later frames join it when they
/// leave the recent window, unless they differed from the baseline by more
/// than the threshold, so contact frames never contaminate it.
#[derive(Debug, Clone)]
pub struct InteractionDetector {
    cfg: InteractionDetectorConfig,
    baseline: VecDeque<TactileFrame>,
    recent: VecDeque<(TactileFrame, bool)>,
}

impl InteractionDetector {
    pub fn new(cfg: InteractionDetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, baseline: VecDeque::new(), recent: VecDeque::new() })
    }

    pub fn reset(&mut self) {
        self.baseline.clear();
        self.recent.clear();
    }

    pub fn push(&mut self, frame: &TactileFrame) -> Result<Option<InteractionSignal>> {
        // The first frames after a reset form the baseline.
        if self.baseline.len() < self.cfg.baseline_window {
            self.baseline.push_back(frame.clone());
            return Ok(None);
        }
        let mut base = vec![0.0; frame.rgb.len()];
        for f in &self.baseline {
            if f.rgb.len() != base.len() {
                return domain("frame dimensions changed during a session");
            }
            for (acc, &p) in base.iter_mut().zip(&f.rgb) {
                *acc += p as f64;
            }
        }
        base.iter_mut().for_each(|v| *v /= self.cfg.baseline_window as f64);
        let quiet = mean_abs_diff(frame, &base) <= self.cfg.diff_threshold;
        self.recent.push_back((frame.clone(), quiet));
        if self.recent.len() > self.cfg.consecutive_frames + 1 {
            let (old, old_quiet) = self.recent.pop_front().expect("non-empty");
            if old_quiet {
                self.baseline.push_back(old);
                if self.baseline.len() > self.cfg.baseline_window {
                    self.baseline.pop_front();
                }
            }
        }
        if self.recent.len() < self.cfg.consecutive_frames {
            return Ok(None);
        }
        let window: Vec<&TactileFrame> = self.baseline.iter().chain(self.recent.iter().map(|(f, _)| f)).collect();
        detect_interaction(&window, &self.cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Simulated,
    FileReplay,
}

/// Supplies the frame captured at a given time; `None` means exhausted.
pub trait FrameSource {
    fn next_frame(&mut self, timestamp_us: u64) -> Result<Option<TactileFrame>>;

    fn kind(&self) -> SourceKind {
        SourceKind::Simulated
    }
}

impl<F: FnMut(u64) -> Result<Option<TactileFrame>>> FrameSource for F {
    fn next_frame(&mut self, timestamp_us: u64) -> Result<Option<TactileFrame>> {
        self(timestamp_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactInterval {
    pub start_us: u64,
    pub end_us: u64,
    pub force_n: f64,
}

/// Renders a phantom, pressed with the interval's force while a contact
/// interval is active and untouched otherwise.
#[derive(Debug, Clone)]
pub struct SimulatedSource {
    pub phantom: PolypPhantom,
    pub contacts: Vec<ContactInterval>,
    pub seed: u64,
    pub max_frames: Option<usize>,
    produced: usize,
    cache: Option<(u64, TactileFrame)>,
}

impl SimulatedSource {
    pub fn new(phantom: PolypPhantom, contacts: Vec<ContactInterval>, seed: u64) -> Self {
        Self { phantom, contacts, seed, max_frames: None, produced: 0, cache: None }
    }
}

impl FrameSource for SimulatedSource {
    fn next_frame(&mut self, timestamp_us: u64) -> Result<Option<TactileFrame>> {
        if self.max_frames.is_some_and(|m| self.produced >= m) {
            return Ok(None);
        }
        let force = self
            .contacts
            .iter()
            .find(|c| (c.start_us..c.end_us).contains(&timestamp_us))
            .map_or(0.0, |c| c.force_n);
        let key = force.to_bits();
        let mut frame = match &self.cache {
            Some((k, f)) if *k == key => f.clone(),
            _ => {
                let f = render_tactile_frame(&self.phantom, force, self.seed)?;
                self.cache = Some((key, f.clone()));
                f
            }
        };
        frame.timestamp_us = timestamp_us;
        self.produced += 1;
        Ok(Some(frame))
    }
}

/// Plays back recorded frames in order, restamped with the request time.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    frames: VecDeque<TactileFrame>,
}

impl ReplaySource {
    pub fn new(frames: Vec<TactileFrame>) -> Self {
        Self { frames: frames.into() }
    }
}

impl FrameSource for ReplaySource {
    fn next_frame(&mut self, timestamp_us: u64) -> Result<Option<TactileFrame>> {
        Ok(self.frames.pop_front().map(|mut f| {
            f.timestamp_us = timestamp_us;
            f
        }))
    }

    fn kind(&self) -> SourceKind {
        SourceKind::FileReplay
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: u32,
    pub fps: u32,
    pub detector: InteractionDetectorConfig,
    /// Upper bound on recorded frames when the script leaves the device on.
    pub max_frames: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { session_id: 1, fps: 10, detector: InteractionDetectorConfig::default(), max_frames: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub session_id: u32,
    pub fps: u32,
    pub frames: Vec<TactileFrame>,
    pub state_trace: Vec<(u64, DeviceState)>,
    pub source: SourceKind,
}

impl SessionRecord {
    /// State in force at `timestamp_us` (the last trace entry at or before it).
    pub fn state_at(&self, timestamp_us: u64) -> DeviceState {
        self.state_trace.iter().take_while(|(t, _)| *t <= timestamp_us).last().map_or(DeviceState::Idle, |e| e.1)
    }
}

/// Replays a switch script against the state machine. While the device is
/// on, a frame is captured every `1/fps` seconds starting at the rising
/// edge; an event at the same instant as a capture is applied first. If
/// the source runs dry, or `max_frames` is reached with the device still
/// on, the session ends with a trailing Idle.
pub fn run_session(source: &mut dyn FrameSource, script: &[SwitchEvent], cfg: &SessionConfig) -> Result<SessionRecord> {
    if cfg.fps == 0 {
        return domain("fps must be positive");
    }
    if script.windows(2).any(|w| w[1].timestamp_us < w[0].timestamp_us) {
        return domain("event script timestamps are not sorted");
    }
    let period = (1_000_000.0 / cfg.fps as f64).round().max(1.0) as u64;
    let mut detector = InteractionDetector::new(cfg.detector)?;
    let mut rec = SessionRecord {
        session_id: cfg.session_id,
        fps: cfg.fps,
        frames: Vec::new(),
        state_trace: vec![(0, DeviceState::Idle)],
        source: source.kind(),
    };
    let mut state = DeviceState::Idle;
    let mut next_tick = 0u64;
    let set = |rec: &mut SessionRecord, state: &mut DeviceState, input: Input, t: u64| {
        let s = step_state(*state, input);
        if s != *state {
            *state = s;
            rec.state_trace.push((t, s));
        }
    };
    let mut i = 0;
    loop {
        let next_event = script.get(i).map(|e| e.timestamp_us);
        if state != DeviceState::Idle && next_event.is_none_or(|t| next_tick < t) {
            let t = next_tick;
            next_tick += period;
            let frame = if rec.frames.len() >= cfg.max_frames { None } else { source.next_frame(t)? };
            let Some(mut frame) = frame else {
                rec.state_trace.push((t, DeviceState::Idle));
                return Ok(rec);
            };
            if !frame.is_valid() {
                return data(format!("frame source produced an invalid frame at {t} us"));
            }
            frame.timestamp_us = t;
            let signal = detector.push(&frame)?;
            rec.frames.push(frame);
            if let Some(sig) = signal {
                set(&mut rec, &mut state, Input::Interaction(sig), t);
            }
            continue;
        }
        let Some(ev) = script.get(i) else { break };
        i += 1;
        let was_idle = state == DeviceState::Idle;
        set(&mut rec, &mut state, Input::Switch(ev.edge), ev.timestamp_us);
        if was_idle && state != DeviceState::Idle {
            detector.reset();
            next_tick = ev.timestamp_us;
        }
    }
    Ok(rec)
}

/// Parses `<timestamp_us> <RISING|FALLING>` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_event_script(text: &str) -> Result<Vec<SwitchEvent>> {
    let mut out: Vec<SwitchEvent> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(ts), Some(kind), None) = (parts.next(), parts.next(), parts.next()) else {
            return data(format!("event script line {}: expected `<timestamp_us> <RISING|FALLING>`", n + 1));
        };
        let timestamp_us: u64 =
            ts.parse().map_err(|_| crate::Error::Data(format!("event script line {}: bad timestamp {ts:?}", n + 1)))?;
        let edge = match kind {
            "RISING" => Edge::Rising,
            "FALLING" => Edge::Falling,
            other => return data(format!("event script line {}: unknown edge {other:?}", n + 1)),
        };
        if out.last().is_some_and(|e| e.timestamp_us > timestamp_us) {
            return data(format!("event script line {}: timestamps must not decrease", n + 1));
        }
        out.push(SwitchEvent { edge, timestamp_us });
    }
    Ok(out)
}

pub fn format_event_script(events: &[SwitchEvent]) -> String {
    events
        .iter()
        .map(|e| format!("{} {}\n", e.timestamp_us, if e.edge == Edge::Rising { "RISING" } else { "FALLING" }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceEntry {
    timestamp_us: u64,
    state: DeviceState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameEntry {
    file: String,
    timestamp_us: u64,
    force_mn: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionMetaFile {
    session_id: u32,
    fps: u32,
    width: usize,
    height: usize,
    source: SourceKind,
    state_trace: Vec<TraceEntry>,
    frames: Vec<FrameEntry>,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.rgb")
}

/// Writes `meta.json` plus one raw RGB file per frame.
pub fn save_session(dir: &Path, rec: &SessionRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (width, height) = rec.frames.first().map_or((0, 0), |f| (f.width, f.height));
    let mut frames = Vec::with_capacity(rec.frames.len());
    for (i, f) in rec.frames.iter().enumerate() {
        if f.width != width || f.height != height || !f.is_valid() {
            return domain(format!("frame {i} does not match the session dimensions"));
        }
        let file = frame_file_name(i);
        write_raw(&dir.join(&file), &f.rgb)?;
        frames.push(FrameEntry { file, timestamp_us: f.timestamp_us, force_mn: f.force_mn });
    }
    let meta = SessionMetaFile {
        session_id: rec.session_id,
        fps: rec.fps,
        width,
        height,
        source: rec.source,
        state_trace: rec.state_trace.iter().map(|&(timestamp_us, state)| TraceEntry { timestamp_us, state }).collect(),
        frames,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| crate::Error::Internal(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), json + "\n")?;
    Ok(())
}

pub fn load_session(dir: &Path) -> Result<SessionRecord> {
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: SessionMetaFile =
        serde_json::from_str(&text).map_err(|e| crate::Error::Data(format!("{}: {e}", dir.join("meta.json").display())))?;
    let mut frames = Vec::with_capacity(meta.frames.len());
    for e in &meta.frames {
        if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
            return data(format!("frame file name {:?} is not a plain file name", e.file));
        }
        let rgb = read_raw(&dir.join(&e.file))?;
        if rgb.len() != meta.width * meta.height * 3 {
            return data(format!("{}: {} bytes, expected {}", e.file, rgb.len(), meta.width * meta.height * 3));
        }
        frames.push(TactileFrame { width: meta.width, height: meta.height, rgb, timestamp_us: e.timestamp_us, force_mn: e.force_mn });
    }
    if meta.state_trace.first().map(|e| e.state) != Some(DeviceState::Idle) {
        return data("session state trace must start with Idle");
    }
    Ok(SessionRecord {
        session_id: meta.session_id,
        fps: meta.fps,
        frames,
        state_trace: meta.state_trace.into_iter().map(|e| (e.timestamp_us, e.state)).collect(),
        source: meta.source,
    })
}
