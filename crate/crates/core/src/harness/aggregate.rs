//! Multi-seed aggregation: mean curves with 95% confidence intervals.
//!
//! Runs qualify for aggregation when their config snapshots are identical
//! modulo `seed` and `out_dir` and their evaluation grids (the `env_step`
//! column) match exactly. Intervals use the normal approximation
//! `1.96 · sem` with the sample standard deviation (n − 1 denominator).

use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};

use super::metrics::{read_metrics, MetricsRow};

/// One plottable curve: either a single run or a seed-aggregated group.
#[derive(Debug, Clone)]
pub struct GroupCurve {
    /// Legend label (algorithm preset name by default).
    pub label: String,
    /// Seeds folded into this curve.
    pub n_runs: usize,
    /// Shared evaluation grid.
    pub steps: Vec<u64>,
    /// Mean team return per eval step.
    pub ret_mean: Vec<f64>,
    /// 95% CI half-width of the team return (zero for a single run).
    pub ret_ci: Vec<f64>,
    /// Mean episode length per eval step.
    pub len_mean: Vec<f64>,
    /// 95% CI half-width of the episode length.
    pub len_ci: Vec<f64>,
}

/// Mean and 95% half-width (`1.96 · sem`, sample sd) of a set of seeds.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Reads a run's config snapshot with the per-seed fields blanked, so two
/// snapshots compare equal exactly when the runs differ only by seed.
fn config_fingerprint(dir: &Path) -> Result<(String, String)> {
    let path = dir.join("config.toml");
    let text = std::fs::read_to_string(&path)?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
    let mut label = String::from("run");
    if let Some(table) = value.as_table_mut() {
        if let Some(algo) = table.get("algo").and_then(|v| v.as_str()) {
            label = algo.to_string();
        }
        table.remove("seed");
        table.remove("out_dir");
    }
    Ok((value.to_string(), label))
}

fn run_rows(dir: &Path) -> Result<Vec<MetricsRow>> {
    let rows = read_metrics(&dir.join("metrics.csv"))?;
    if rows.is_empty() {
        return Err(CoreError::Config(format!(
            "{} has no evaluation rows",
            dir.display()
        )));
    }
    Ok(rows)
}

/// Folds ≥ 2 seed runs of one configuration into a mean ± CI curve.
pub fn aggregate_runs(dirs: &[PathBuf]) -> Result<GroupCurve> {
    if dirs.len() < 2 {
        return Err(CoreError::Config(
            "aggregation needs at least 2 runs of the same config".into(),
        ));
    }
    let (base_fp, label) = config_fingerprint(&dirs[0])?;
    for d in &dirs[1..] {
        let (fp, _) = config_fingerprint(d)?;
        if fp != base_fp {
            return Err(CoreError::Config(format!(
                "{} and {} were produced by different configs (only the seed may differ)",
                dirs[0].display(),
                d.display()
            )));
        }
    }
    let per_run: Vec<Vec<MetricsRow>> = dirs.iter().map(|d| run_rows(d)).collect::<Result<_>>()?;
    let grid: Vec<u64> = per_run[0].iter().map(|r| r.env_step).collect();
    for (d, rows) in dirs.iter().zip(&per_run).skip(1) {
        let g: Vec<u64> = rows.iter().map(|r| r.env_step).collect();
        if g != grid {
            return Err(CoreError::Config(format!(
                "{} has a mismatched eval grid ({} rows vs {})",
                d.display(),
                g.len(),
                grid.len()
            )));
        }
    }
    let mut curve = GroupCurve {
        label,
        n_runs: dirs.len(),
        steps: grid.clone(),
        ret_mean: Vec::with_capacity(grid.len()),
        ret_ci: Vec::with_capacity(grid.len()),
        len_mean: Vec::with_capacity(grid.len()),
        len_ci: Vec::with_capacity(grid.len()),
    };
    for i in 0..grid.len() {
        let rets: Vec<f64> = per_run.iter().map(|rows| rows[i].return_mean).collect();
        let lens: Vec<f64> = per_run.iter().map(|rows| rows[i].len_mean).collect();
        let (rm, rc) = mean_ci95(&rets);
        let (lm, lc) = mean_ci95(&lens);
        curve.ret_mean.push(rm);
        curve.ret_ci.push(rc);
        curve.len_mean.push(lm);
        curve.len_ci.push(lc);
    }
    Ok(curve)
}

/// Loads one run as a curve with zero-width intervals.
pub fn load_single(dir: &Path) -> Result<GroupCurve> {
    let (_, label) = config_fingerprint(dir)?;
    let rows = run_rows(dir)?;
    Ok(GroupCurve {
        label,
        n_runs: 1,
        steps: rows.iter().map(|r| r.env_step).collect(),
        ret_mean: rows.iter().map(|r| r.return_mean).collect(),
        ret_ci: vec![0.0; rows.len()],
        len_mean: rows.iter().map(|r| r.len_mean).collect(),
        len_ci: vec![0.0; rows.len()],
    })
}

/// Buckets run directories by configuration (ignoring seed) and builds one
/// curve per bucket, aggregating whenever a bucket holds ≥ 2 seeds.
pub fn group_and_aggregate(dirs: &[PathBuf]) -> Result<Vec<GroupCurve>> {
    let mut buckets: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for d in dirs {
        let (fp, _) = config_fingerprint(d)?;
        match buckets.iter_mut().find(|(key, _)| *key == fp) {
            Some((_, members)) => members.push(d.clone()),
            None => buckets.push((fp, vec![d.clone()])),
        }
    }
    buckets
        .iter()
        .map(|(_, members)| {
            if members.len() >= 2 {
                aggregate_runs(members)
            } else {
                load_single(&members[0])
            }
        })
        .collect()
}

/// Writes the plot-ready table: one block of columns per curve.
pub fn write_plot_data(path: &Path, curves: &[GroupCurve]) -> Result<()> {
    let mut out = String::new();
    out.push_str("env_step");
    for c in curves {
        out.push_str(&format!(
            ",{0}_return_mean,{0}_return_ci,{0}_ep_len_mean,{0}_ep_len_ci",
            c.label
        ));
    }
    out.push('\n');
    let grid = &curves[0].steps;
    for c in curves {
        if c.steps != *grid {
            return Err(CoreError::Config(
                "curves with different eval grids cannot share one plot-data table".into(),
            ));
        }
    }
    for (i, step) in grid.iter().enumerate() {
        out.push_str(&step.to_string());
        for c in curves {
            out.push_str(&format!(
                ",{},{},{},{}",
                c.ret_mean[i], c.ret_ci[i], c.len_mean[i], c.len_ci[i]
            ));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{MetricsRow, MetricsWriter};

    fn write_run(dir: &Path, seed: u64, returns: &[f64], steps: &[u64]) {
        std::fs::create_dir_all(dir).unwrap();
        let mut cfg = crate::harness::RunConfig::defaults("escort3", "hlc", seed).unwrap();
        cfg.out_dir = Some(dir.to_string_lossy().into_owned());
        std::fs::write(dir.join("config.toml"), cfg.to_toml()).unwrap();
        let mut w = MetricsWriter::create(&dir.join("metrics.csv"), 3).unwrap();
        for (&r, &s) in returns.iter().zip(steps) {
            w.append(&MetricsRow {
                env_step: s,
                return_mean: r,
                return_std: 1.0,
                len_mean: 200.0 + r / 100.0,
                len_std: 0.0,
                agent_returns: vec![r / 3.0; 3],
                lead_critic_loss: 0.5,
                local_critic_loss: 0.5,
                actor_loss: -1.0,
                alpha: 0.9,
                alpha_lc: 0.9,
            })
            .unwrap();
        }
    }

    #[test]
    fn two_seed_interval_matches_hand_arithmetic() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        write_run(&a, 0, &[-100.0], &[2000]);
        write_run(&b, 1, &[-60.0], &[2000]);
        let curve = aggregate_runs(&[a, b]).unwrap();
        assert_eq!(curve.n_runs, 2);
        assert_eq!(curve.ret_mean[0], -80.0);
        assert_eq!(curve.ret_ci[0], 39.2);
    }

    #[test]
    fn identical_runs_have_zero_width_intervals() {
        let tmp = tempfile::tempdir().unwrap();
        let dirs: Vec<_> = (0..5)
            .map(|i| {
                let d = tmp.path().join(format!("s{i}"));
                write_run(&d, i, &[-90.0, -70.0], &[2000, 4000]);
                d
            })
            .collect();
        let curve = aggregate_runs(&dirs).unwrap();
        assert!(curve.ret_ci.iter().all(|&c| c == 0.0));
        assert!(curve.len_ci.iter().all(|&c| c == 0.0));
        assert_eq!(curve.ret_mean, vec![-90.0, -70.0]);
    }

    #[test]
    fn mismatched_grids_and_configs_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b, c) = (
            tmp.path().join("a"),
            tmp.path().join("b"),
            tmp.path().join("c"),
        );
        write_run(&a, 0, &[-100.0, -90.0], &[2000, 4000]);
        write_run(&b, 1, &[-100.0], &[2000]);
        assert!(
            aggregate_runs(&[a.clone(), b]).is_err(),
            "mismatched eval grids must be rejected"
        );

        // Same grid but a different config (another env) must also fail.
        std::fs::create_dir_all(&c).unwrap();
        let mut other = crate::harness::RunConfig::defaults("escort5", "hlc", 2).unwrap();
        other.out_dir = Some(c.to_string_lossy().into_owned());
        std::fs::write(c.join("config.toml"), other.to_toml()).unwrap();
        std::fs::copy(a.join("metrics.csv"), c.join("metrics.csv")).unwrap();
        assert!(aggregate_runs(&[a.clone(), c]).is_err());
        assert!(aggregate_runs(&[a]).is_err(), "a single run is not an aggregate");
    }

    #[test]
    fn grouping_splits_runs_by_configuration() {
        let tmp = tempfile::tempdir().unwrap();
        let mk = |name: &str, seed: u64, algo: &str| {
            let d = tmp.path().join(name);
            std::fs::create_dir_all(&d).unwrap();
            let mut cfg = crate::harness::RunConfig::defaults("escort3", algo, seed).unwrap();
            cfg.out_dir = Some(d.to_string_lossy().into_owned());
            std::fs::write(d.join("config.toml"), cfg.to_toml()).unwrap();
            let mut w = MetricsWriter::create(&d.join("metrics.csv"), 3).unwrap();
            w.append(&MetricsRow {
                env_step: 2000,
                return_mean: -100.0,
                return_std: 0.0,
                len_mean: 200.0,
                len_std: 0.0,
                agent_returns: vec![0.0; 3],
                lead_critic_loss: f64::NAN,
                local_critic_loss: f64::NAN,
                actor_loss: f64::NAN,
                alpha: 1.0,
                alpha_lc: 1.0,
            })
            .unwrap();
            d
        };
        let dirs = vec![
            mk("h0", 0, "hlc"),
            mk("h1", 1, "hlc"),
            mk("b0", 0, "hasac"),
        ];
        let curves = group_and_aggregate(&dirs).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].label, "hlc");
        assert_eq!(curves[0].n_runs, 2);
        assert_eq!(curves[1].label, "hasac");
        assert_eq!(curves[1].n_runs, 1);

        let out = tmp.path().join("plot_data.csv");
        write_plot_data(&out, &curves).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("env_step,hlc_return_mean"));
        assert!(text.lines().count() == 2);
    }
}
