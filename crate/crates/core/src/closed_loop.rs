//! Closed-loop rollout of a policy against a video generator, with sparse
//! memory sampling and on-disk rollout/recording persistence.
//!
//! The driver never looks inside frame payloads, so neural generators,
//! replayed recordings and synthetic stubs are interchangeable.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boxed error returned by policy and generator implementations.
pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

pub const DEFAULT_ACTION_STEPS: usize = 54;
pub const DEFAULT_ACTION_HZ: f64 = 30.0;
pub const DEFAULT_VIDEO_FRAMES: usize = 9;
pub const DEFAULT_VIDEO_HZ: f64 = 5.0;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("memory sample size must be at least 1")]
    ZeroMemory,
    #[error("chunk budget must be at least 1")]
    ZeroBudget,
    #[error("initial chunk is empty")]
    EmptyInit,
    #[error("policy failed at step {step}: {source}")]
    Policy {
        step: usize,
        #[source]
        source: BoxError,
    },
    #[error("generator failed at step {step}: {source}")]
    Generator {
        step: usize,
        #[source]
        source: BoxError,
    },
    #[error("step {step}: generated chunk has {got} frames, rollout uses {expected}")]
    ChunkLength { step: usize, expected: usize, got: usize },
    #[error("recording exhausted")]
    RecordingExhausted,
    #[error("recording is empty")]
    EmptyRecording,
    #[error("invalid action chunk: {0}")]
    BadActions(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed rollout directory: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewId {
    Head,
    LeftWrist,
    RightWrist,
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewId::Head => "head",
            ViewId::LeftWrist => "left_wrist",
            ViewId::RightWrist => "right_wrist",
        })
    }
}

/// One view's image at one time step. The payload is opaque.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub view: ViewId,
    pub index: usize,
    pub payload: Vec<u8>,
}

/// A chunk of consecutive time steps; each step holds one frame per view.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VideoChunk {
    pub steps: Vec<Vec<Frame>>,
}

impl VideoChunk {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Dual-arm commands for one policy call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub steps: Vec<[f64; 14]>,
    pub rate_hz: f64,
}

impl ActionChunk {
    pub fn new(steps: Vec<[f64; 14]>, rate_hz: f64) -> Result<Self, RolloutError> {
        if steps.is_empty() {
            return Err(RolloutError::BadActions("no steps".into()));
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(RolloutError::BadActions(format!("rate {rate_hz} Hz")));
        }
        Ok(ActionChunk { steps, rate_hz })
    }

    /// Wall-clock span of the chunk in seconds.
    pub fn duration(&self) -> f64 {
        self.steps.len() as f64 / self.rate_hz
    }
}

/// Wall-clock span of `count` samples at `rate_hz`.
pub fn window_seconds(count: usize, rate_hz: f64) -> f64 {
    count as f64 / rate_hz
}

/// Whether a video chunk and an action chunk cover the same time window,
/// checked exactly through the rate ratio: `frames * action_hz == steps * video_hz`.
pub fn windows_consistent(video_frames: usize, video_hz: f64, action_steps: usize, action_hz: f64) -> bool {
    video_frames as f64 * action_hz == action_steps as f64 * video_hz
}

/// Memory indices into a history of `history_len` steps.
///
/// With enough history: `floor(j * history_len / k)` for `j = 0..k`. With
/// less history than `k`: every index, left-padded with index 0 up to `k`.
/// An empty history yields `k` zeros.
pub fn sample_sparse_memory(history_len: usize, k: usize) -> Result<Vec<usize>, RolloutError> {
    if k == 0 {
        return Err(RolloutError::ZeroMemory);
    }
    if history_len >= k {
        return Ok((0..k).map(|j| j * history_len / k).collect());
    }
    let mut out = vec![0; k - history_len.max(1) + 1];
    out.extend(1..history_len);
    out.truncate(k);
    Ok(out)
}

/// All frames generated (or observed) since the rollout started, in order.
#[derive(Debug, Clone, Default)]
pub struct MemoryBuffer {
    history: Vec<Vec<Frame>>,
}

impl MemoryBuffer {
    pub fn push_chunk(&mut self, chunk: &VideoChunk) {
        self.history.extend(chunk.steps.iter().cloned());
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn history(&self) -> &[Vec<Frame>] {
        &self.history
    }

    pub fn sample(&self, k: usize) -> Result<Vec<&[Frame]>, RolloutError> {
        if self.history.is_empty() {
            return if k == 0 {
                Err(RolloutError::ZeroMemory)
            } else {
                Ok(Vec::new())
            };
        }
        Ok(sample_sparse_memory(self.history.len(), k)?
            .into_iter()
            .map(|i| self.history[i].as_slice())
            .collect())
    }
}

/// What the policy and generator see at each iteration.
#[derive(Debug)]
pub struct Observation<'a> {
    /// Index of the iteration, starting at 0.
    pub step: usize,
    /// The most recent chunk (the initial observation on the first step).
    pub latest: &'a VideoChunk,
    /// Sparse memory sampled from the whole history.
    pub memory: Vec<&'a [Frame]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyOutput {
    Act(ActionChunk),
    Done,
}

pub trait Policy {
    fn act(&mut self, obs: &Observation<'_>, instruction: &str) -> Result<PolicyOutput, BoxError>;
}

pub trait Generator {
    fn generate(&mut self, obs: &Observation<'_>, actions: &ActionChunk) -> Result<VideoChunk, BoxError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    PolicyDone,
    Budget,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::PolicyDone => "policy_done",
            Termination::Budget => "budget",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub max_chunks: usize,
    /// Frames sampled from history for each observation.
    pub memory_frames: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_chunks: 10,
            memory_frames: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub instruction: String,
    pub init: VideoChunk,
    pub chunks: Vec<VideoChunk>,
    pub actions: Vec<ActionChunk>,
    pub termination: Termination,
}

impl Rollout {
    /// Seconds of action issued so far.
    pub fn action_seconds(&self) -> f64 {
        self.actions.iter().map(ActionChunk::duration).sum()
    }
}

/// Alternates policy and generator until the policy reports done or
/// `max_chunks` chunks have been generated.
pub fn run_closed_loop(
    policy: &mut dyn Policy,
    generator: &mut dyn Generator,
    instruction: &str,
    init: VideoChunk,
    cfg: RolloutConfig,
) -> Result<Rollout, RolloutError> {
    if cfg.max_chunks == 0 {
        return Err(RolloutError::ZeroBudget);
    }
    if cfg.memory_frames == 0 {
        return Err(RolloutError::ZeroMemory);
    }
    if init.is_empty() {
        return Err(RolloutError::EmptyInit);
    }
    let chunk_len = init.len();
    let mut memory = MemoryBuffer::default();
    memory.push_chunk(&init);
    let mut chunks: Vec<VideoChunk> = Vec::new();
    let mut actions = Vec::new();

    let termination = loop {
        if chunks.len() >= cfg.max_chunks {
            break Termination::Budget;
        }
        let step = chunks.len();
        let latest = chunks.last().unwrap_or(&init);
        let obs = Observation {
            step,
            latest,
            memory: memory.sample(cfg.memory_frames)?,
        };
        let act = match policy
            .act(&obs, instruction)
            .map_err(|source| RolloutError::Policy { step, source })?
        {
            PolicyOutput::Done => break Termination::PolicyDone,
            PolicyOutput::Act(a) => a,
        };
        let chunk = generator
            .generate(&obs, &act)
            .map_err(|source| RolloutError::Generator { step, source })?;
        if chunk.len() != chunk_len {
            return Err(RolloutError::ChunkLength {
                step,
                expected: chunk_len,
                got: chunk.len(),
            });
        }
        memory.push_chunk(&chunk);
        actions.push(act);
        chunks.push(chunk);
    };

    Ok(Rollout {
        instruction: instruction.to_string(),
        init,
        chunks,
        actions,
        termination,
    })
}

/// Plays back recorded chunks in order, ignoring the actions.
#[derive(Debug, Clone)]
pub struct ReplayGenerator {
    remaining: VecDeque<VideoChunk>,
    calls: usize,
}

impl ReplayGenerator {
    pub fn new(recording: Vec<VideoChunk>) -> Result<Self, RolloutError> {
        if recording.is_empty() {
            return Err(RolloutError::EmptyRecording);
        }
        Ok(ReplayGenerator {
            remaining: recording.into(),
            calls: 0,
        })
    }

    /// Successful generate calls so far.
    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn remaining(&self) -> usize {
        self.remaining.len()
    }
}

impl Generator for ReplayGenerator {
    fn generate(&mut self, _obs: &Observation<'_>, _actions: &ActionChunk) -> Result<VideoChunk, BoxError> {
        let chunk = self.remaining.pop_front().ok_or(RolloutError::RecordingExhausted)?;
        self.calls += 1;
        Ok(chunk)
    }
}

/// Issues a fixed list of action chunks, then reports done.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    script: VecDeque<ActionChunk>,
}

impl ScriptedPolicy {
    pub fn new(script: Vec<ActionChunk>) -> Self {
        ScriptedPolicy { script: script.into() }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _obs: &Observation<'_>, _instruction: &str) -> Result<PolicyOutput, BoxError> {
        Ok(self.script.pop_front().map_or(PolicyOutput::Done, PolicyOutput::Act))
    }
}

pub fn replay_generator(recording: Vec<VideoChunk>) -> Result<ReplayGenerator, RolloutError> {
    ReplayGenerator::new(recording)
}

// On-disk layout: `rollout.json` plus one blob per frame under
// `chunk_XXXX/` (`init/` for the initial observation).

#[derive(Debug, Serialize, Deserialize)]
struct FrameEntry {
    view: ViewId,
    index: usize,
    blob: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChunkEntry {
    steps: Vec<Vec<FrameEntry>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RolloutFile {
    version: u32,
    instruction: String,
    termination: Option<Termination>,
    init: ChunkEntry,
    chunks: Vec<ChunkEntry>,
    actions: Vec<ActionChunk>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RolloutError + '_ {
    move |source| RolloutError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_chunk(root: &Path, dir: &str, chunk: &VideoChunk) -> Result<ChunkEntry, RolloutError> {
    let chunk_dir = root.join(dir);
    std::fs::create_dir_all(&chunk_dir).map_err(io_err(&chunk_dir))?;
    let mut steps = Vec::with_capacity(chunk.len());
    for (s, frames) in chunk.steps.iter().enumerate() {
        let mut entries = Vec::with_capacity(frames.len());
        for f in frames {
            let rel = format!("{dir}/step_{s:04}_{}.bin", f.view);
            let path = root.join(&rel);
            std::fs::write(&path, &f.payload).map_err(io_err(&path))?;
            entries.push(FrameEntry {
                view: f.view,
                index: f.index,
                blob: rel,
            });
        }
        steps.push(entries);
    }
    Ok(ChunkEntry { steps })
}

fn read_chunk(root: &Path, entry: ChunkEntry) -> Result<VideoChunk, RolloutError> {
    let mut steps = Vec::with_capacity(entry.steps.len());
    for frames in entry.steps {
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            if Path::new(&f.blob).is_absolute() || f.blob.split('/').any(|c| c == "..") {
                return Err(RolloutError::Layout(format!(
                    "blob path `{}` escapes the directory",
                    f.blob
                )));
            }
            let path: PathBuf = root.join(&f.blob);
            let payload = std::fs::read(&path).map_err(io_err(&path))?;
            out.push(Frame {
                view: f.view,
                index: f.index,
                payload,
            });
        }
        steps.push(out);
    }
    Ok(VideoChunk { steps })
}

/// A rollout or recording as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedEpisode {
    pub instruction: String,
    pub init: VideoChunk,
    pub chunks: Vec<VideoChunk>,
    pub actions: Vec<ActionChunk>,
    pub termination: Option<Termination>,
}

impl From<Rollout> for RecordedEpisode {
    fn from(r: Rollout) -> Self {
        RecordedEpisode {
            instruction: r.instruction,
            init: r.init,
            chunks: r.chunks,
            actions: r.actions,
            termination: Some(r.termination),
        }
    }
}

impl RecordedEpisode {
    pub fn save(&self, dir: &Path) -> Result<(), RolloutError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let init = write_chunk(dir, "init", &self.init)?;
        let chunks = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| write_chunk(dir, &format!("chunk_{i:04}"), c))
            .collect::<Result<_, _>>()?;
        let file = RolloutFile {
            version: 1,
            instruction: self.instruction.clone(),
            termination: self.termination,
            init,
            chunks,
            actions: self.actions.clone(),
        };
        let path = dir.join("rollout.json");
        let mut text = serde_json::to_string_pretty(&file).map_err(|source| RolloutError::Json {
            path: path.display().to_string(),
            source,
        })?;
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, RolloutError> {
        let path = dir.join("rollout.json");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let file: RolloutFile = serde_json::from_str(&text).map_err(|source| RolloutError::Json {
            path: path.display().to_string(),
            source,
        })?;
        if file.version != 1 {
            return Err(RolloutError::Layout(format!("unsupported version {}", file.version)));
        }
        let init = read_chunk(dir, file.init)?;
        let chunks = file
            .chunks
            .into_iter()
            .map(|c| read_chunk(dir, c))
            .collect::<Result<_, _>>()?;
        for a in &file.actions {
            ActionChunk::new(a.steps.clone(), a.rate_hz)?;
        }
        Ok(RecordedEpisode {
            instruction: file.instruction,
            init,
            chunks,
            actions: file.actions,
            termination: file.termination,
        })
    }

    /// Re-runs the recording: its actions drive a scripted policy and its
    /// chunks come back from a replay generator.
    pub fn replay(&self, max_chunks: usize, memory_frames: usize) -> Result<Rollout, RolloutError> {
        let mut policy = ScriptedPolicy::new(self.actions.clone());
        let mut generator = ReplayGenerator::new(self.chunks.clone())?;
        run_closed_loop(
            &mut policy,
            &mut generator,
            &self.instruction,
            self.init.clone(),
            RolloutConfig {
                max_chunks,
                memory_frames,
            },
        )
    }
}
