//! Per-step metrics (CSV) and per-step episode logs (JSON lines).

use std::fs::{File, OpenOptions};
use std::hash::Hasher;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One row per environment step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub reward: f64,
    /// Return accumulated so far in the current episode.
    pub episode_return: f64,
    pub done: bool,
    pub success: bool,
    /// Latest update, averaged over agents; zeros before the first update.
    pub dynamics_loss: f64,
    pub reward_loss: f64,
    pub q_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub q_scale: f64,
    /// Mean planner iterations over agents (0 for random actions).
    pub planner_iterations: f64,
    pub wall_time_ms: f64,
}

/// Append-only CSV writer; every row is flushed so a crash loses at most
/// the line being written.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    last_step: Option<u64>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        Ok(Self { inner: csv::Writer::from_path(path)?, last_step: None })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<(), HarnessError> {
        if self.last_step.is_some_and(|s| row.step <= s) {
            return Err(HarnessError::Config(format!("metrics step {} is not after {:?}", row.step, self.last_step)));
        }
        self.inner.serialize(row)?;
        self.inner.flush()?;
        self.last_step = Some(row.step);
        Ok(())
    }
}

/// Reads a metrics file, ignoring a truncated last line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut reader = csv::Reader::from_reader(complete.as_bytes());
    let mut rows = Vec::new();
    for r in reader.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

/// FNV-1a digest of an observation's bit pattern, as hex.
pub fn obs_digest(obs: &[f64]) -> String {
    let mut h = FnvHasher::default();
    for v in obs {
        h.write_u64(v.to_bits());
    }
    format!("{:016x}", h.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: u64,
    pub t: usize,
    pub obs_digest: Vec<String>,
    /// Observations before the step, per agent.
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
}

impl StepRecord {
    pub fn new(episode: u64, t: usize, obs: &[Vec<f64>], actions: &[Vec<f64>], reward: f64, done: bool) -> Self {
        Self {
            episode,
            t,
            obs_digest: obs.iter().map(|o| obs_digest(o)).collect(),
            obs: obs.to_vec(),
            actions: actions.to_vec(),
            reward,
            done,
        }
    }
}

pub struct EpisodeLog {
    out: BufWriter<File>,
}

impl EpisodeLog {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<(), HarnessError> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        if rec.done {
            self.out.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), HarnessError> {
        Ok(self.out.flush()?)
    }
}

/// Reads an episode log, skipping a truncated last line.
pub fn read_episode_log(path: &Path) -> Result<Vec<StepRecord>, HarnessError> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (k, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if k + 1 == lines.len() => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Writes a long-format table `episode,t,agent,reward,done,obs_*,act_*`.
pub fn export_trajectories(records: &[StepRecord], out: &Path) -> Result<usize, HarnessError> {
    let mut w = csv::Writer::from_path(out)?;
    let (od, ad) = records
        .first()
        .map_or((0, 0), |r| (r.obs.first().map_or(0, Vec::len), r.actions.first().map_or(0, Vec::len)));
    let mut header = vec!["episode".to_string(), "t".into(), "agent".into(), "reward".into(), "done".into()];
    header.extend((0..od).map(|k| format!("obs_{k}")));
    header.extend((0..ad).map(|k| format!("act_{k}")));
    w.write_record(&header)?;
    let mut rows = 0;
    for r in records {
        for (agent, (o, a)) in r.obs.iter().zip(&r.actions).enumerate() {
            let mut rec = vec![r.episode.to_string(), r.t.to_string(), agent.to_string(), r.reward.to_string(), r.done.to_string()];
            rec.extend(o.iter().map(f64::to_string));
            rec.extend(a.iter().map(f64::to_string));
            w.write_record(&rec)?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}
