//! Word-level AUC, the strong-generalization sweep over D_<2n, head
//! trace recording, and the stack-emulation alignment metric.

use crate::dyck::{self, Word};
use crate::model::{ModelKind, SequenceModel};
use crate::ntm::{self, NtmParams};
use crate::rng::{self, streams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("auc needs both classes present")]
    SingleClass,
    #[error("auc: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("trace length {0} does not match word length {1}")]
    TraceMismatch(usize, usize),
    #[error("samples_per_n must be positive")]
    NoSamples,
    #[error(transparent)]
    Sampling(#[from] dyck::DyckError),
    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },
}

/// Mann–Whitney AUC with ties counted half:
/// (#concordant + 0.5·#tied) / (#pos·#neg), equal to the trapezoidal
/// ROC area. Computed from exact integer midranks, so it matches
/// brute-force pair counting bit for bit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // rank2[i] = twice the 1-based midrank, an exact integer.
    let mut rank_sum2: i64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j) as i64;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum2 += rank2;
            }
        }
        i = j;
    }
    let u2 = rank_sum2 - (pos * (pos + 1)) as i64;
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// One sweep point: AUC over fresh samples from D_<2n.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalPoint {
    pub n: usize,
    /// Exclusive word-length bound 2n.
    pub bound: usize,
    pub positives: usize,
    pub negatives: usize,
    pub auc: f64,
    pub seed: u64,
}

/// AUC values indexed by length bound, with sample counts and seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub memory_locations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lstm_hidden: Option<usize>,
    pub seed: u64,
    #[serde(skip)]
    pub points: Vec<EvalPoint>,
}

impl EvalReport {
    /// Line-delimited form: one meta record, then one record per point.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(self).expect("report serializes");
        out.push('\n');
        for p in &self.points {
            out.push_str(&serde_json::to_string(p).expect("point serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, EvalError> {
        let parse_err = |detail: String| EvalError::Parse {
            what: "eval report",
            detail,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| parse_err("empty input".into()))?;
        let mut report: EvalReport =
            serde_json::from_str(head).map_err(|e| parse_err(e.to_string()))?;
        for line in lines {
            let point: EvalPoint =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            report.points.push(point);
        }
        Ok(report)
    }
}

/// Scores `samples_per_n` positives and negatives from D_<2n for each
/// n with the model's final-timestep probability and reports the AUC.
/// Each point draws from its own seed stream, so the report is a pure
/// function of (model, n_values, samples_per_n, seed).
pub fn generalization_sweep<M: SequenceModel + Sync>(
    model: &M,
    n_values: &[usize],
    samples_per_n: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if samples_per_n == 0 {
        return Err(EvalError::NoSamples);
    }
    let points: Result<Vec<EvalPoint>, EvalError> = n_values
        .par_iter()
        .enumerate()
        .map(|(idx, &n)| {
            let mut point_rng = rng::seeded(seed, streams::SWEEP_BASE + idx as u64);
            let bound = 2 * n;
            let mut scores = Vec::with_capacity(2 * samples_per_n);
            let mut labels = Vec::with_capacity(2 * samples_per_n);
            for _ in 0..samples_per_n {
                let w = dyck::sample_dyck_uniform(bound, &mut point_rng)?;
                scores.push(final_prob(model, &w));
                labels.push(1u8);
            }
            for _ in 0..samples_per_n {
                let w = dyck::sample_negative(bound, &mut point_rng)?;
                scores.push(final_prob(model, &w));
                labels.push(0u8);
            }
            Ok(EvalPoint {
                n,
                bound,
                positives: samples_per_n,
                negatives: samples_per_n,
                auc: auc(&scores, &labels)?,
                seed,
            })
        })
        .collect();
    Ok(EvalReport {
        model: model.kind(),
        memory_locations: model.memory_locations(),
        lstm_hidden: model.lstm_hidden(),
        seed,
        points: points?,
    })
}

/// Word-level score: the final-timestep probability.
pub fn final_prob<M: SequenceModel + ?Sized>(model: &M, word: &Word) -> f64 {
    let probs = model.forward_probs(&dyck::encode(word));
    *probs.last().expect("nonempty word")
}

/// Per-timestep observables of one NTM forward pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceStep {
    pub symbol: char,
    pub p: f64,
    pub read_pos: f64,
    pub write_pos: f64,
    /// Total added mass Σ_i w^w(i)·‖a‖₁ this step.
    pub add_mass: f64,
    /// Total erased mass Σ_i w^w(i)·‖e‖₁ this step.
    pub erase_mass: f64,
    /// FNV-1a hash of the post-write memory bits.
    pub memory_hash: u64,
    pub w_read: Vec<f64>,
    pub w_write: Vec<f64>,
    /// Full post-write memory snapshot (row-major), behind a flag.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub memory: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadTrace {
    pub word: String,
    /// Memory locations N (length of each weighting row).
    pub locations: usize,
    pub steps: Vec<TraceStep>,
}

/// Expected head position Σ_i i·w(i).
pub fn expected_position(w: &[f64]) -> f64 {
    w.iter().enumerate().map(|(i, v)| i as f64 * v).sum()
}

fn fnv1a(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Full forward pass capturing weightings, probabilities, and write
/// magnitudes at every timestep. `keep_memory` stores full snapshots
/// instead of hashes alone.
pub fn record_trace(params: &NtmParams, word: &Word, keep_memory: bool) -> HeadTrace {
    let inputs = dyck::encode(word);
    let mut state = ntm::init_state(params);
    let mut steps = Vec::with_capacity(inputs.len());
    for (x, sym) in inputs.iter().zip(word.symbols()) {
        let (next, detail) = ntm::ntm_step_detailed(params, &state, x);
        let add = detail.write_controls.add.as_ref().expect("write head");
        let erase = detail.write_controls.erase.as_ref().expect("write head");
        let w_sum: f64 = next.w_write.data().iter().sum();
        let add_l1: f64 = add.data().iter().map(|v| v.abs()).sum();
        let erase_l1: f64 = erase.data().iter().map(|v| v.abs()).sum();
        let memory_hash = fnv1a(
            next.memory
                .data()
                .iter()
                .flat_map(|v| v.to_bits().to_le_bytes()),
        );
        steps.push(TraceStep {
            symbol: sym.as_char(),
            p: detail.p,
            read_pos: expected_position(next.w_read.data()),
            write_pos: expected_position(next.w_write.data()),
            add_mass: w_sum * add_l1,
            erase_mass: w_sum * erase_l1,
            memory_hash,
            w_read: next.w_read.data().to_vec(),
            w_write: next.w_write.data().to_vec(),
            memory: keep_memory.then(|| next.memory.data().to_vec()),
        });
        state = next;
    }
    HeadTrace {
        word: word.to_string(),
        locations: params.geometry.locations,
        steps,
    }
}

impl HeadTrace {
    /// Line-delimited form: one meta record, then one record per step.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Meta<'a> {
            word: &'a str,
            locations: usize,
        }
        let mut out = serde_json::to_string(&Meta {
            word: &self.word,
            locations: self.locations,
        })
        .expect("meta serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    /// Tab-separated table: timestep, symbol, p, expected positions,
    /// then N read-weight columns and N write-weight columns.
    pub fn to_table(&self) -> String {
        let mut out = String::from("t\tsymbol\tp\tread_pos\twrite_pos");
        for i in 0..self.locations {
            out.push_str(&format!("\tr{i}"));
        }
        for i in 0..self.locations {
            out.push_str(&format!("\tw{i}"));
        }
        out.push('\n');
        for (t, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}",
                t + 1,
                s.symbol,
                s.p,
                s.read_pos,
                s.write_pos
            ));
            for v in &s.w_read {
                out.push_str(&format!("\t{v}"));
            }
            for v in &s.w_write {
                out.push_str(&format!("\t{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`HeadTrace::to_table`].
    pub fn from_table(text: &str) -> Result<Self, EvalError> {
        let parse_err = |detail: String| EvalError::Parse {
            what: "trace table",
            detail,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err("empty input".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        let locations = cols.iter().filter(|c| c.starts_with('r') && c[1..].parse::<usize>().is_ok()).count();
        if cols.len() != 5 + 2 * locations {
            return Err(parse_err(format!("unexpected header {header:?}")));
        }
        let mut word = String::new();
        let mut steps = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != cols.len() {
                return Err(parse_err(format!("row width {} != {}", f.len(), cols.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(format!("bad number {s:?}: {e}")))
            };
            let symbol = f[1]
                .chars()
                .next()
                .ok_or_else(|| parse_err("empty symbol".into()))?;
            word.push(symbol);
            let w_read: Result<Vec<f64>, _> = f[5..5 + locations].iter().map(|s| num(s)).collect();
            let w_write: Result<Vec<f64>, _> =
                f[5 + locations..].iter().map(|s| num(s)).collect();
            steps.push(TraceStep {
                symbol,
                p: num(f[2])?,
                read_pos: num(f[3])?,
                write_pos: num(f[4])?,
                add_mass: 0.0,
                erase_mass: 0.0,
                memory_hash: 0,
                w_read: w_read?,
                w_write: w_write?,
                memory: None,
            });
        }
        Ok(HeadTrace {
            word,
            locations,
            steps,
        })
    }
}

/// Pearson correlation and (optionally undefined) agreement between
/// the expected read position and the height profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    /// None when either series is constant.
    pub pearson_r: Option<f64>,
    /// Fraction of steps t ≥ 2 where the sign of the head movement
    /// matches the sign of the height step; zero net movement counts
    /// as disagreement. Movement is measured between consecutive trace
    /// steps, so the first symbol contributes no comparison.
    pub directional_agreement: f64,
}

/// Correlates the expected read position with the word's height profile.
pub fn stack_alignment(trace: &HeadTrace, word: &Word) -> Result<Alignment, EvalError> {
    if trace.steps.len() != word.len() {
        return Err(EvalError::TraceMismatch(trace.steps.len(), word.len()));
    }
    let heights: Vec<f64> = dyck::height_profile(word)
        .into_iter()
        .map(|h| h as f64)
        .collect();
    let positions: Vec<f64> = trace.steps.iter().map(|s| s.read_pos).collect();

    let pearson_r = pearson(&positions, &heights);
    let mut agree = 0usize;
    let mut total = 0usize;
    for t in 1..positions.len() {
        let dpos = positions[t] - positions[t - 1];
        let dh = heights[t] - heights[t - 1];
        total += 1;
        if (dpos > 0.0 && dh > 0.0) || (dpos < 0.0 && dh < 0.0) {
            agree += 1;
        }
    }
    let directional_agreement = if total == 0 {
        0.0
    } else {
        agree as f64 / total as f64
    };
    Ok(Alignment {
        pearson_r,
        directional_agreement,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Mean over timesteps of the total added mass Σ_i ‖w^w(i)·a‖₁.
pub fn write_activity(trace: &HeadTrace) -> f64 {
    if trace.steps.is_empty() {
        return 0.0;
    }
    trace.steps.iter().map(|s| s.add_mass).sum::<f64>() / trace.steps.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::LstmParams;
    use crate::ntm::NtmGeometry;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn auc_perfect_ranking() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        assert_eq!(auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn auc_hand_example() {
        // pairs: (0.8 vs 0.6) concordant, (0.4 vs 0.6) discordant → 1/2
        assert_eq!(auc(&[0.8, 0.6, 0.4], &[1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(EvalError::SingleClass)));
        assert!(matches!(auc(&[0.1, 0.2], &[0, 0]), Err(EvalError::SingleClass)));
    }

    /// O(n²) oracle: (2·concordant + ties) / (2·pos·neg), exact integers.
    fn auc_bruteforce(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num2: i64 = 0;
        let mut pairs: i64 = 0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1;
                if si > sj {
                    num2 += 2;
                } else if si == sj {
                    num2 += 1;
                }
            }
        }
        num2 as f64 / (2 * pairs) as f64
    }

    #[test]
    fn auc_matches_bruteforce_with_ties() {
        let mut rng = seeded(41, 1);
        for round in 0..200 {
            let n = 2 + (rng.gen::<u64>() % 60) as usize;
            // coarse grid injects plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<u64>() % 7) as f64 / 6.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| (rng.gen::<u64>() % 2) as u8).collect();
            if labels.iter().all(|&y| y == 1) || labels.iter().all(|&y| y == 0) {
                continue;
            }
            let fast = auc(&scores, &labels).unwrap();
            let slow = auc_bruteforce(&scores, &labels);
            assert_eq!(fast.to_bits(), slow.to_bits(), "round {round}");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transforms() {
        let mut rng = seeded(42, 1);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<u8> = (0..40).map(|_| (rng.gen::<u64>() % 2) as u8).collect();
        let base = auc(&scores, &labels).unwrap();
        let doubled: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 1.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|&s| s * s * s).collect();
        assert_eq!(auc(&doubled, &labels).unwrap(), base);
        assert_eq!(auc(&cubed, &labels).unwrap(), base);
    }

    #[test]
    fn auc_complement_sums_to_one_without_ties() {
        let mut rng = seeded(43, 1);
        let scores: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let flipped: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let sum = auc(&scores, &labels).unwrap() + auc(&scores, &flipped).unwrap();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_deterministic_and_shaped() {
        let params = LstmParams::init(3, &mut seeded(44, 1));
        let run = || {
            let report = generalization_sweep(&params, &[2, 3, 5], 30, 99).unwrap();
            report
                .points
                .iter()
                .map(|p| (p.n, p.bound, p.auc.to_bits()))
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.len(), 3);
        let report = generalization_sweep(&params, &[4], 25, 7).unwrap();
        assert_eq!(report.points[0].bound, 8);
        assert_eq!(report.points[0].positives, 25);
        assert_eq!(report.model, ModelKind::Lstm);
        assert_eq!(report.lstm_hidden, Some(3));
    }

    #[test]
    fn report_jsonl_round_trip() {
        let params = LstmParams::init(3, &mut seeded(45, 1));
        let report = generalization_sweep(&params, &[2, 4], 20, 5).unwrap();
        let text = report.to_jsonl();
        let parsed = EvalReport::from_jsonl(&text).unwrap();
        assert_eq!(parsed.points.len(), 2);
        assert_eq!(parsed.points[0].auc.to_bits(), report.points[0].auc.to_bits());
        assert_eq!(parsed.model, ModelKind::Lstm);
        assert!(EvalReport::from_jsonl("").is_err());
    }

    fn small_ntm() -> crate::ntm::NtmParams {
        crate::ntm::NtmParams::init(
            NtmGeometry {
                locations: 8,
                width: 4,
                hidden: 6,
                shift_window: 3,
            },
            &mut seeded(46, 1),
        )
    }

    #[test]
    fn trace_has_one_row_per_symbol() {
        let params = small_ntm();
        let word: Word = "uuduudddud".parse().unwrap();
        let trace = record_trace(&params, &word, false);
        assert_eq!(trace.steps.len(), word.len());
        for s in &trace.steps {
            assert!((s.w_read.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((s.w_write.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(s.memory.is_none());
        }
        let with_mem = record_trace(&params, &word, true);
        assert_eq!(with_mem.steps[0].memory.as_ref().unwrap().len(), 8 * 4);
    }

    #[test]
    fn trace_table_round_trip() {
        let params = small_ntm();
        let word: Word = "uudd".parse().unwrap();
        let trace = record_trace(&params, &word, false);
        let table = trace.to_table();
        let parsed = HeadTrace::from_table(&table).unwrap();
        assert_eq!(parsed.word, "uudd");
        assert_eq!(parsed.locations, trace.locations);
        for (a, b) in parsed.steps.iter().zip(&trace.steps) {
            assert_eq!(a.p.to_bits(), b.p.to_bits());
            assert_eq!(a.w_read, b.w_read);
        }
    }

    #[test]
    fn trace_jsonl_includes_meta_line() {
        let params = small_ntm();
        let trace = record_trace(&params, &"ud".parse().unwrap(), false);
        let text = trace.to_jsonl();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().contains("\"locations\":8"));
        assert_eq!(lines.count(), 2);
    }

    fn synthetic_trace(positions: &[f64], word: &Word) -> HeadTrace {
        let steps = positions
            .iter()
            .zip(word.symbols())
            .map(|(&pos, sym)| TraceStep {
                symbol: sym.as_char(),
                p: 0.5,
                read_pos: pos,
                write_pos: 0.0,
                add_mass: 0.0,
                erase_mass: 0.0,
                memory_hash: 0,
                w_read: vec![],
                w_write: vec![],
                memory: None,
            })
            .collect();
        HeadTrace {
            word: word.to_string(),
            locations: 0,
            steps,
        }
    }

    #[test]
    fn alignment_perfect_height_tracking() {
        let word: Word = "uuduudddud".parse().unwrap();
        let heights: Vec<f64> = dyck::height_profile(&word).iter().map(|&h| h as f64).collect();
        let trace = synthetic_trace(&heights, &word);
        let a = stack_alignment(&trace, &word).unwrap();
        assert!((a.pearson_r.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(a.directional_agreement, 1.0);
    }

    #[test]
    fn alignment_anti_correlated_head() {
        let word: Word = "uuduudddud".parse().unwrap();
        let inverted: Vec<f64> = dyck::height_profile(&word).iter().map(|&h| -h as f64).collect();
        let trace = synthetic_trace(&inverted, &word);
        let a = stack_alignment(&trace, &word).unwrap();
        assert!((a.pearson_r.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(a.directional_agreement, 0.0);
    }

    #[test]
    fn alignment_constant_series_has_no_pearson() {
        let word: Word = "uudd".parse().unwrap();
        let trace = synthetic_trace(&[3.0; 4], &word);
        let a = stack_alignment(&trace, &word).unwrap();
        assert_eq!(a.pearson_r, None);
        assert_eq!(a.directional_agreement, 0.0, "zero moves count as disagreement");
    }

    #[test]
    fn alignment_random_walk_decorrelates() {
        // Monte-Carlo sanity bound: independent random-walk head
        // positions rarely correlate strongly with the height profile.
        let word: Word = "uuduudddudududuuddud".parse().unwrap();
        let mut high = 0;
        for s in 0..40 {
            let mut rng = seeded(100 + s, 1);
            let mut pos = 0.0;
            let walk: Vec<f64> = (0..word.len())
                .map(|_| {
                    pos += if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    pos
                })
                .collect();
            let trace = synthetic_trace(&walk, &word);
            let a = stack_alignment(&trace, &word).unwrap();
            if a.pearson_r.map(|r| r.abs() >= 0.5).unwrap_or(false) {
                high += 1;
            }
        }
        assert!(high < 20, "|r| ≥ 0.5 in {high}/40 random walks");
    }

    #[test]
    fn alignment_rejects_length_mismatch() {
        let word: Word = "uudd".parse().unwrap();
        let trace = synthetic_trace(&[0.0; 3], &"uud".parse().unwrap());
        assert!(matches!(
            stack_alignment(&trace, &word),
            Err(EvalError::TraceMismatch(3, 4))
        ));
    }

    #[test]
    fn write_activity_examples() {
        let word: Word = "ud".parse().unwrap();
        let mut trace = synthetic_trace(&[0.0, 1.0], &word);
        assert_eq!(write_activity(&trace), 0.0);
        // one-hot write with a = 1^W adds W per step
        trace.steps[0].add_mass = 4.0;
        trace.steps[1].add_mass = 4.0;
        assert_eq!(write_activity(&trace), 4.0);
    }

    #[test]
    fn expected_position_weights_by_index() {
        assert_eq!(expected_position(&[0.0, 0.0, 1.0]), 2.0);
        assert_eq!(expected_position(&[0.5, 0.0, 0.5]), 1.0);
    }
}
