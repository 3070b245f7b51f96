//! Scoring of estimate streams against ground truth.
//!
//! MSE is the mean squared error of the full state (a position-only variant
//! is available) and MNCM the time-averaged spectral norm of the estimate
//! covariance. Multi-target records are scored track by track, each track
//! against its nearest true target, and summed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::record::{FusedStream, GroundTruth, NodeStream, RunRecord, TruthTrack};
use crate::scenario::{FusionMethod, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub step: usize,
    pub mean: Vector,
    pub cov: Matrix,
}

/// Time-indexed estimates of one track from one source.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub source: NodeId,
    pub algorithm: String,
    pub track: String,
    pub points: Vec<TrackPoint>,
}

impl TrackRecord {
    pub fn new(source: NodeId, algorithm: impl Into<String>, track: impl Into<String>, points: Vec<TrackPoint>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::IncompatibleRecords("track steps must be strictly increasing".into()));
        }
        Ok(Self {
            source,
            algorithm: algorithm.into(),
            track: track.into(),
            points,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorComponents {
    #[default]
    FullState,
    Position,
}

fn squared_error(mean: &Vector, truth: &[f64], comps: ErrorComponents) -> f64 {
    let n = match comps {
        ErrorComponents::FullState => truth.len(),
        ErrorComponents::Position => 2,
    };
    (0..n).map(|i| (mean[i] - truth[i]).powi(2)).sum()
}

/// Mean over overlapping steps of the squared state error.
pub fn mse(record: &TrackRecord, truth: &TruthTrack) -> Result<f64> {
    mse_with(record, truth, ErrorComponents::FullState)
}

pub fn mse_with(record: &TrackRecord, truth: &TruthTrack, comps: ErrorComponents) -> Result<f64> {
    let errs: Vec<f64> = record
        .points
        .iter()
        .filter_map(|p| truth.state(p.step).map(|x| squared_error(&p.mean, x, comps)))
        .collect();
    if errs.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Time average of the covariance spectral norm; NaN for an empty record.
pub fn mncm(record: &TrackRecord) -> f64 {
    let n = record.points.len() as f64;
    record.points.iter().map(|p| linalg::spectral_norm(&p.cov)).sum::<f64>() / n
}

/// Spectral norm of the time-averaged covariance.
pub fn mncm_norm_of_mean(record: &TrackRecord) -> f64 {
    let Some(first) = record.points.first() else {
        return f64::NAN;
    };
    let n = first.cov.nrows();
    let sum = record.points.iter().fold(Matrix::zeros(n, n), |acc, p| acc + &p.cov);
    linalg::spectral_norm(&(sum / record.points.len() as f64))
}

/// Index of the true target with the smallest time-averaged position
/// distance over the steps both exist; `None` when no target overlaps.
pub fn assign_truth(record: &TrackRecord, truth: &GroundTruth) -> Option<usize> {
    truth
        .targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            let d: Vec<f64> = record
                .points
                .iter()
                .filter_map(|p| t.state(p.step).map(|x| squared_error(&p.mean, x, ErrorComponents::Position).sqrt()))
                .collect();
            (!d.is_empty()).then(|| (i, d.iter().sum::<f64>() / d.len() as f64))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Sum over tracks of each track's MSE against its assigned target. Tracks
/// that overlap no target are skipped.
pub fn multi_target_mse(tracks: &[TrackRecord], truth: &GroundTruth, comps: ErrorComponents) -> Result<f64> {
    let mut total = 0.0;
    let mut scored = 0;
    for t in tracks {
        if let Some(i) = assign_truth(t, truth) {
            total += mse_with(t, &truth.targets[i], comps)?;
            scored += 1;
        }
    }
    if scored == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(total)
}

/// Sum over tracks of each track's MNCM.
pub fn multi_target_mncm(tracks: &[TrackRecord], norm_of_mean: bool) -> f64 {
    if tracks.is_empty() {
        return f64::NAN;
    }
    tracks
        .iter()
        .map(|t| if norm_of_mean { mncm_norm_of_mean(t) } else { mncm(t) })
        .sum()
}

/// Fractions of steps where the estimated count is exact and within ±1.
/// Both are zero when there are no steps.
pub fn count_accuracy(estimated: &[usize], truth: &[usize]) -> (f64, f64) {
    let n = estimated.len().min(truth.len());
    if n == 0 {
        return (0.0, 0.0);
    }
    let (mut exact, mut near) = (0usize, 0usize);
    for (e, t) in estimated.iter().zip(truth) {
        exact += usize::from(e == t);
        near += usize::from(e.abs_diff(*t) <= 1);
    }
    (exact as f64 / n as f64, near as f64 / n as f64)
}

fn flat_matrix(n: usize, v: &[f64]) -> Matrix {
    Matrix::from_row_slice(n, n, v)
}

/// Splits a node stream into one record per track id.
pub fn node_track_records(stream: &NodeStream) -> Result<Vec<TrackRecord>> {
    let mut by_track: BTreeMap<u64, Vec<TrackPoint>> = BTreeMap::new();
    for s in &stream.steps {
        for e in &s.estimates {
            by_track.entry(e.track).or_default().push(TrackPoint {
                step: s.step,
                mean: Vector::from_row_slice(&e.mean),
                cov: flat_matrix(e.mean.len(), &e.cov),
            });
        }
    }
    by_track
        .into_iter()
        .map(|(id, pts)| TrackRecord::new(stream.node, stream.algorithm.clone(), id.to_string(), pts))
        .collect()
}

/// Splits a fused stream into one record per fused-track key, keeping only
/// steps where fusion actually happened.
pub fn fused_track_records(stream: &FusedStream) -> Result<Vec<TrackRecord>> {
    let mut by_key: BTreeMap<&str, Vec<TrackPoint>> = BTreeMap::new();
    for s in &stream.steps {
        for o in s.outputs.iter().filter(|o| o.fused) {
            by_key.entry(&o.key).or_default().push(TrackPoint {
                step: s.step,
                mean: Vector::from_row_slice(&o.mean),
                cov: flat_matrix(o.mean.len(), &o.cov),
            });
        }
    }
    by_key
        .into_iter()
        .map(|(k, pts)| TrackRecord::new(stream.processor, stream.method.key(), k, pts))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Monitoring,
    Baseline,
    Processing,
}

/// Scores of one stream in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub source_id: NodeId,
    pub role: Role,
    pub algorithm: String,
    pub tracks: usize,
    pub mse: f64,
    pub mse_position: f64,
    pub mncm: f64,
    pub mncm_norm_of_mean: f64,
    /// Fraction of steps with the exact count and within ±1, when the
    /// stream estimates a count.
    pub count_exact: Option<f64>,
    pub count_within_one: Option<f64>,
}

fn score_tracks(
    seed: u64,
    source_id: NodeId,
    role: Role,
    algorithm: &str,
    tracks: &[TrackRecord],
    truth: &GroundTruth,
) -> MetricsRow {
    MetricsRow {
        seed,
        source_id,
        role,
        algorithm: algorithm.to_string(),
        tracks: tracks.len(),
        mse: multi_target_mse(tracks, truth, ErrorComponents::FullState).unwrap_or(f64::NAN),
        mse_position: multi_target_mse(tracks, truth, ErrorComponents::Position).unwrap_or(f64::NAN),
        mncm: multi_target_mncm(tracks, false),
        mncm_norm_of_mean: multi_target_mncm(tracks, true),
        count_exact: None,
        count_within_one: None,
    }
}

/// One row per node stream, baseline stream, and fused stream. Streams
/// with nothing to score get NaN metrics.
pub fn score_record(record: &RunRecord) -> Result<Vec<MetricsRow>> {
    let truth = &record.truth;
    let truth_counts = truth.counts();
    let mut rows = Vec::new();
    for (role, streams) in [(Role::Monitoring, &record.nodes), (Role::Baseline, &record.baselines)] {
        for s in streams {
            let tracks = node_track_records(s)?;
            let mut row = score_tracks(record.seed, s.node, role, &s.algorithm, &tracks, truth);
            if let Some(counts) = s.counts() {
                let (exact, near) = count_accuracy(&counts, &truth_counts);
                row.count_exact = Some(exact);
                row.count_within_one = Some(near);
            }
            rows.push(row);
        }
    }
    for f in &record.fused {
        let tracks = fused_track_records(f)?;
        rows.push(score_tracks(record.seed, f.processor, Role::Processing, f.method.key(), &tracks, truth));
    }
    Ok(rows)
}

/// Fails unless every record comes from the same scenario.
pub fn check_same_scenario(records: &[RunRecord]) -> Result<()> {
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| !first.same_scenario(r)) {
            return Err(Error::IncompatibleRecords(format!(
                "records mix scenarios `{}` and `{}` (or differ in configuration)",
                first.config.scenario.name, other.config.scenario.name
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }

    /// Median and quartiles of the finite values; NaN when there are none.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self {
                median: f64::NAN,
                q1: f64::NAN,
                q3: f64::NAN,
            };
        }
        let mut d = Data::new(v);
        Self {
            median: d.median(),
            q1: d.lower_quartile(),
            q3: d.upper_quartile(),
        }
    }
}

/// Cross-seed summary of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub source_id: NodeId,
    pub role: Role,
    pub algorithm: String,
    pub seeds: usize,
    pub mse: Spread,
    pub mncm: Spread,
    pub count_within_one: Option<Spread>,
}

pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Role, NodeId, &str), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.role, r.source_id, &r.algorithm)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((role, source_id, algorithm), rs)| {
            let counts: Vec<f64> = rs.iter().filter_map(|r| r.count_within_one).collect();
            AggregateRow {
                source_id,
                role,
                algorithm: algorithm.to_string(),
                seeds: rs.len(),
                mse: Spread::of(rs.iter().map(|r| r.mse)),
                mncm: Spread::of(rs.iter().map(|r| r.mncm)),
                count_within_one: (!counts.is_empty()).then(|| Spread::of(counts)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
    Tie,
}

/// Two-sided sign test p-value for `wins` against `losses` (ties dropped).
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses) as u64;
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    (2.0 * b.cdf(k)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub baseline: f64,
    pub challenger: f64,
    pub outcome: Outcome,
}

/// Per-seed comparison of two fusion methods at one processing node on one
/// metric. A win means the challenger is strictly lower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub processor: NodeId,
    pub metric: String,
    pub baseline: String,
    pub challenger: String,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
    pub seeds: Vec<SeedOutcome>,
}

pub fn compare(records: &[RunRecord], baseline: FusionMethod, challenger: FusionMethod) -> Result<Vec<Comparison>> {
    check_same_scenario(records)?;
    let mut table: BTreeMap<(NodeId, &'static str), Vec<SeedOutcome>> = BTreeMap::new();
    for r in records {
        let methods = r.methods();
        if !methods.contains(&baseline) || !methods.contains(&challenger) {
            return Err(Error::IncompatibleRecords(format!(
                "seed {} lacks `{}` or `{}` fused streams",
                r.seed,
                baseline.key(),
                challenger.key()
            )));
        }
        let rows = score_record(r)?;
        let find = |proc: NodeId, m: FusionMethod| {
            rows.iter()
                .find(|x| x.role == Role::Processing && x.source_id == proc && x.algorithm == m.key())
        };
        for p in &r.config.processors {
            let (Some(b), Some(c)) = (find(p.id, baseline), find(p.id, challenger)) else {
                continue;
            };
            for (metric, bv, cv) in [("mse", b.mse, c.mse), ("mncm", b.mncm, c.mncm)] {
                let outcome = if cv < bv {
                    Outcome::Win
                } else if cv > bv {
                    Outcome::Loss
                } else {
                    Outcome::Tie
                };
                table.entry((p.id, metric)).or_default().push(SeedOutcome {
                    seed: r.seed,
                    baseline: bv,
                    challenger: cv,
                    outcome,
                });
            }
        }
    }
    Ok(table
        .into_iter()
        .map(|((processor, metric), seeds)| {
            let count = |o| seeds.iter().filter(|s| s.outcome == o).count();
            let (wins, losses, ties) = (count(Outcome::Win), count(Outcome::Loss), count(Outcome::Tie));
            Comparison {
                processor,
                metric: metric.to_string(),
                baseline: baseline.key().to_string(),
                challenger: challenger.key().to_string(),
                wins,
                losses,
                ties,
                p_value: sign_test_p(wins, losses),
                seeds,
            }
        })
        .collect())
}
