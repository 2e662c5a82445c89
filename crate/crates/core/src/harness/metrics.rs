//! Evaluation metrics rows and their append-only CSV persistence.
//!
//! The metrics file is part of the determinism contract: it contains no
//! wall-clock data, and float columns use Rust's shortest round-trip
//! formatting, so identical runs produce byte-identical files. Timing lives
//! in the run manifest instead.

use std::io::Write;
use std::path::Path;

use crate::error::{CoreError, Result};

/// One evaluation event.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Aggregate env steps collected when the evaluation triggered.
    pub env_step: u64,
    /// Mean team return over the evaluation episodes.
    pub return_mean: f64,
    /// Sample standard deviation of the team return.
    pub return_std: f64,
    /// Mean episode length.
    pub len_mean: f64,
    /// Sample standard deviation of episode length.
    pub len_std: f64,
    /// Mean per-agent returns (local reward streams).
    pub agent_returns: Vec<f64>,
    /// Diagnostics from the most recent train step (NaN before training).
    pub lead_critic_loss: f64,
    pub local_critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub alpha_lc: f64,
}

impl MetricsRow {
    /// Header line for a run with `n_agents` agents.
    pub fn header(n_agents: usize) -> String {
        let mut cols = vec![
            "env_step".to_string(),
            "return_mean".to_string(),
            "return_std".to_string(),
            "ep_len_mean".to_string(),
            "ep_len_std".to_string(),
        ];
        for i in 0..n_agents {
            cols.push(format!("agent{i}_return"));
        }
        cols.extend(
            ["lead_critic_loss", "local_critic_loss", "actor_loss", "alpha", "alpha_lc"]
                .map(String::from),
        );
        cols.join(",")
    }

    pub fn to_line(&self) -> String {
        let mut cols = vec![
            self.env_step.to_string(),
            self.return_mean.to_string(),
            self.return_std.to_string(),
            self.len_mean.to_string(),
            self.len_std.to_string(),
        ];
        cols.extend(self.agent_returns.iter().map(f64::to_string));
        for v in [
            self.lead_critic_loss,
            self.local_critic_loss,
            self.actor_loss,
            self.alpha,
            self.alpha_lc,
        ] {
            cols.push(v.to_string());
        }
        cols.join(",")
    }

    fn parse(line: &str, n_agents: usize) -> Result<MetricsRow> {
        let parts: Vec<&str> = line.split(',').collect();
        let want = 10 + n_agents;
        if parts.len() != want {
            return Err(CoreError::Config(format!(
                "metrics row has {} columns, expected {want}",
                parts.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            parts[i]
                .parse()
                .map_err(|_| CoreError::Config(format!("bad metrics value {:?}", parts[i])))
        };
        Ok(MetricsRow {
            env_step: parts[0]
                .parse()
                .map_err(|_| CoreError::Config(format!("bad env_step {:?}", parts[0])))?,
            return_mean: f(1)?,
            return_std: f(2)?,
            len_mean: f(3)?,
            len_std: f(4)?,
            agent_returns: (0..n_agents).map(|i| f(5 + i)).collect::<Result<_>>()?,
            lead_critic_loss: f(5 + n_agents)?,
            local_critic_loss: f(6 + n_agents)?,
            actor_loss: f(7 + n_agents)?,
            alpha: f(8 + n_agents)?,
            alpha_lc: f(9 + n_agents)?,
        })
    }
}

/// Append-only metrics writer; flushes after every row so the file tracks a
/// long run's progress.
pub struct MetricsWriter {
    file: std::fs::File,
}

impl MetricsWriter {
    /// Creates the file and writes the header. Refuses to clobber an
    /// existing metrics file.
    pub fn create(path: &Path, n_agents: usize) -> Result<MetricsWriter> {
        if path.exists() {
            return Err(CoreError::Config(format!(
                "{} already exists; refusing to overwrite a finished run",
                path.display()
            )));
        }
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{}", MetricsRow::header(n_agents))?;
        file.flush()?;
        Ok(MetricsWriter { file })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_line())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Reads a metrics file written by [`MetricsWriter`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Config(format!("{} is empty", path.display())))?;
    let n_agents = header.split(',').filter(|c| c.ends_with("_return")).count();
    lines.map(|l| MetricsRow::parse(l, n_agents)).collect()
}
