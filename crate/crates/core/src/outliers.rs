//! Stylistic outliers: users whose mean embedding is globally dissimilar to
//! everyone (low z-scored average similarity) and also has no close
//! neighbor (nearest-neighbor distance above a floor).
//!
//! A user with a near-twin is not reported, however unusual the pair is.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::Corpus;
use crate::embedding::{embed_user, Vector};
use crate::error::{Error, Result};
use crate::vecmath;

pub const DEFAULT_THETA_G: f64 = -2.0;
pub const DEFAULT_THETA_L: f64 = 1e-4;
/// Percentiles reported for candidate nearest-neighbor distances.
pub const D_NN_PERCENTILES: [u32; 7] = [1, 5, 10, 25, 50, 75, 90];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub vector: Vector,
    /// Mean cosine similarity to every other user.
    pub s: f64,
    pub z: f64,
    /// Only computed for global candidates.
    pub d_nn: Option<f64>,
}

/// `(user_id, vector)` pairs.
pub type UserVectors = Vec<(String, Vector)>;

/// Per-user mean review embedding, users in lexicographic id order.
/// Users with no embeddable review or a zero mean vector are returned
/// separately.
pub fn user_vectors(corpus: &Corpus, review_vectors: &[Option<Vector>]) -> Result<(UserVectors, Vec<String>)> {
    if review_vectors.len() != corpus.len() {
        return Err(Error::Precondition(format!(
            "{} review vectors for {} reviews",
            review_vectors.len(),
            corpus.len()
        )));
    }
    let mut by_user: BTreeMap<&str, Vec<Vector>> = BTreeMap::new();
    for (review, v) in corpus.reviews.iter().zip(review_vectors) {
        let entry = by_user.entry(review.user_id.as_str()).or_default();
        if let Some(v) = v {
            entry.push(v.clone());
        }
    }
    let mut users = Vec::with_capacity(by_user.len());
    let mut excluded = Vec::new();
    for (user, vectors) in by_user {
        if vectors.is_empty() {
            excluded.push(user.to_string());
            continue;
        }
        let u = embed_user(&vectors)?;
        if u.is_zero() {
            excluded.push(user.to_string());
        } else {
            users.push((user.to_string(), u));
        }
    }
    Ok((users, excluded))
}

fn check_vectors(vectors: &[Vector]) -> Result<Vec<f64>> {
    if vectors.len() < 2 {
        return Err(Error::Precondition(format!(
            "{} users; at least 2 required",
            vectors.len()
        )));
    }
    let dim = vectors[0].dim();
    vectors
        .iter()
        .map(|v| {
            if v.dim() != dim {
                Err(Error::Precondition("user vectors differ in dimension".into()))
            } else if v.is_zero() {
                Err(Error::DegenerateVector)
            } else {
                Ok(v.norm_sq())
            }
        })
        .collect()
}

/// `S_i`: mean cosine similarity of user `i` to the other `N - 1` users.
///
/// Each pair is computed once. Every `S_i` still sums its terms in ascending
/// `j`, so the result is bitwise equal to the row-by-row definition.
pub fn avg_pairwise_similarity(vectors: &[Vector]) -> Result<Vec<f64>> {
    let norms = check_vectors(vectors)?;
    let sums = if rayon::current_num_threads() > 1 {
        similarity_rows_parallel(vectors, &norms, TILE)
    } else {
        symmetric_sums(vectors, &norms, TILE)
    };
    let denom = (vectors.len() - 1) as f64;
    Ok(sums.into_iter().map(|s| s / denom).collect())
}

/// Rows per cache tile in the pairwise passes.
const TILE: usize = 128;

/// Upper-triangle pass over `tile x tile` blocks. Block pairs run in
/// row-major order, which keeps every row's additions in ascending `j`.
fn symmetric_sums(vectors: &[Vector], norms: &[f64], tile: usize) -> Vec<f64> {
    let n = vectors.len();
    let mut sums = vec![0f64; n];
    for ib in (0..n).step_by(tile) {
        let iend = (ib + tile).min(n);
        for jb in (ib..n).step_by(tile) {
            let jend = (jb + tile).min(n);
            for i in ib..iend {
                let a = vectors[i].as_slice();
                for j in jb.max(i + 1)..jend {
                    let s = vecmath::cosine_similarity_with_norms(a, vectors[j].as_slice(), norms[i], norms[j]);
                    sums[i] += s;
                    sums[j] += s;
                }
            }
        }
    }
    sums
}

/// Full rows, one tile of rows per task, columns in ascending tiles.
fn similarity_rows_parallel(vectors: &[Vector], norms: &[f64], tile: usize) -> Vec<f64> {
    let n = vectors.len();
    let starts: Vec<usize> = (0..n).step_by(tile).collect();
    starts
        .into_par_iter()
        .flat_map_iter(|ib| {
            let iend = (ib + tile).min(n);
            let mut sums = vec![0f64; iend - ib];
            for jb in (0..n).step_by(tile) {
                for i in ib..iend {
                    let a = vectors[i].as_slice();
                    for j in (jb..(jb + tile).min(n)).filter(|&j| j != i) {
                        sums[i - ib] +=
                            vecmath::cosine_similarity_with_norms(a, vectors[j].as_slice(), norms[i], norms[j]);
                    }
                }
            }
            sums
        })
        .collect()
}

/// Population z-scores. A (numerically) constant input gives all zeros.
pub fn zscores(s: &[f64]) -> Result<Vec<f64>> {
    if s.len() < 2 {
        return Err(Error::Precondition("z-scores need at least 2 values".into()));
    }
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return Ok(vec![0.0; s.len()]);
    }
    Ok(s.iter().map(|x| (x - mean) / sd).collect())
}

/// Indices with `Z_i <= theta_g`.
pub fn global_candidates(z: &[f64], theta_g: f64) -> Vec<usize> {
    (0..z.len()).filter(|&i| z[i] <= theta_g).collect()
}

/// Cosine distance from each candidate to its nearest other user, searched
/// over the whole population.
pub fn nearest_neighbor_distances(candidates: &[usize], vectors: &[Vector]) -> Result<Vec<f64>> {
    let norms = check_vectors(vectors)?;
    if let Some(&bad) = candidates.iter().find(|&&i| i >= vectors.len()) {
        return Err(Error::Parameter(format!("candidate index {bad} out of range")));
    }
    // Min is order-independent, so columns are visited tile by tile.
    Ok(candidates
        .par_chunks(TILE)
        .flat_map_iter(|chunk| {
            let mut best = vec![f64::INFINITY; chunk.len()];
            for jb in (0..vectors.len()).step_by(TILE) {
                let jend = (jb + TILE).min(vectors.len());
                for (k, &i) in chunk.iter().enumerate() {
                    let a = vectors[i].as_slice();
                    for j in (jb..jend).filter(|&j| j != i) {
                        let d = vecmath::cosine_distance_with_norms(a, vectors[j].as_slice(), norms[i], norms[j]);
                        best[k] = best[k].min(d);
                    }
                }
            }
            best.into_iter().map(|d| d.max(0.0))
        })
        .collect())
}

/// Candidates whose nearest-neighbor distance is at least `theta_l`.
pub fn finalize_outliers(candidates: &[usize], d_nn: &[f64], theta_l: f64) -> Vec<usize> {
    candidates
        .iter()
        .zip(d_nn)
        .filter(|(_, &d)| d >= theta_l)
        .map(|(&i, _)| i)
        .collect()
}

/// Linear interpolation between closest ranks; `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierOptions {
    pub theta_g: f64,
    pub theta_l: f64,
}

impl Default for OutlierOptions {
    fn default() -> Self {
        OutlierOptions {
            theta_g: DEFAULT_THETA_G,
            theta_l: DEFAULT_THETA_L,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub theta_g: f64,
    pub theta_l: f64,
    pub users: usize,
    /// Users without a usable embedding.
    pub excluded_users: usize,
    pub candidates: usize,
    pub count: usize,
    pub global_candidates: Vec<String>,
    pub outliers: Vec<String>,
    /// Keys `p01`, `p05`, ...; empty when there are no candidates.
    pub d_nn_percentiles: BTreeMap<String, f64>,
    pub d_nn_p01: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierAnalysis {
    pub profiles: Vec<UserProfile>,
    pub report: OutlierReport,
}

impl OutlierAnalysis {
    /// `(user_id, d_nn)` for all candidates, largest distance first.
    pub fn d_nn_curve(&self) -> Vec<(&str, f64)> {
        let mut curve: Vec<(&str, f64)> = self
            .profiles
            .iter()
            .filter_map(|p| p.d_nn.map(|d| (p.user_id.as_str(), d)))
            .collect();
        curve.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        curve
    }
}

/// Runs both stages over precomputed user vectors.
pub fn detect_from_users(
    users: Vec<(String, Vector)>,
    excluded_users: usize,
    options: &OutlierOptions,
) -> Result<OutlierAnalysis> {
    if options.theta_g.is_nan() || options.theta_l.is_nan() {
        return Err(Error::Parameter("outlier thresholds must not be NaN".into()));
    }
    let vectors: Vec<Vector> = users.iter().map(|(_, v)| v.clone()).collect();
    if vectors.len() < 2 {
        return Err(Error::undefined(
            "outliers",
            format!("{} users with embeddings; at least 2 required", vectors.len()),
        ));
    }
    let s = avg_pairwise_similarity(&vectors)?;
    let z = zscores(&s)?;
    let candidates = global_candidates(&z, options.theta_g);
    let d_nn = nearest_neighbor_distances(&candidates, &vectors)?;
    let outliers = finalize_outliers(&candidates, &d_nn, options.theta_l);

    let mut profiles: Vec<UserProfile> = users
        .into_iter()
        .enumerate()
        .map(|(i, (user_id, vector))| UserProfile {
            user_id,
            vector,
            s: s[i],
            z: z[i],
            d_nn: None,
        })
        .collect();
    for (&i, &d) in candidates.iter().zip(&d_nn) {
        profiles[i].d_nn = Some(d);
    }

    let mut sorted = d_nn.clone();
    sorted.sort_by(f64::total_cmp);
    let d_nn_percentiles: BTreeMap<String, f64> = D_NN_PERCENTILES
        .iter()
        .filter_map(|&p| percentile(&sorted, p as f64).map(|v| (format!("p{p:02}"), v)))
        .collect();
    let report = OutlierReport {
        theta_g: options.theta_g,
        theta_l: options.theta_l,
        users: profiles.len(),
        excluded_users,
        candidates: candidates.len(),
        count: outliers.len(),
        global_candidates: candidates.iter().map(|&i| profiles[i].user_id.clone()).collect(),
        outliers: outliers.iter().map(|&i| profiles[i].user_id.clone()).collect(),
        d_nn_p01: d_nn_percentiles.get("p01").copied(),
        d_nn_percentiles,
    };
    Ok(OutlierAnalysis { profiles, report })
}

pub fn detect_outliers(
    corpus: &Corpus,
    review_vectors: &[Option<Vector>],
    options: &OutlierOptions,
) -> Result<OutlierAnalysis> {
    let (users, excluded) = user_vectors(corpus, review_vectors)?;
    detect_from_users(users, excluded.len(), options)
}

/// CSV with columns `rank,user_id,d_nn,outlier`, largest distance first.
pub fn write_d_nn_curve(analysis: &OutlierAnalysis, path: &Path) -> Result<()> {
    let mut out = String::from("rank,user_id,d_nn,outlier\n");
    let theta_l = analysis.report.theta_l;
    for (rank, (user, d)) in analysis.d_nn_curve().into_iter().enumerate() {
        let user = if user.contains([',', '"', '\n']) {
            format!("\"{}\"", user.replace('"', "\"\""))
        } else {
            user.to_string()
        };
        out.push_str(&format!("{},{},{},{}\n", rank + 1, user, d, d >= theta_l));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::Review;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector(xs.to_vec())
    }

    fn users(vs: &[Vector]) -> Vec<(String, Vector)> {
        vs.iter()
            .enumerate()
            .map(|(i, v)| (format!("u{}", i + 1), v.clone()))
            .collect()
    }

    #[test]
    fn similarity_example() {
        let s = avg_pairwise_similarity(&[v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert_eq!(s, vec![0.5, 0.5, 0.0]);
        let s = avg_pairwise_similarity(&[v(&[1.0, 0.0]), v(&[0.0, 2.0])]).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
        let same = vec![v(&[0.3, 0.4]); 4];
        for s in avg_pairwise_similarity(&same).unwrap() {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn similarity_preconditions() {
        assert!(matches!(
            avg_pairwise_similarity(&[v(&[1.0])]),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            avg_pairwise_similarity(&[v(&[1.0]), v(&[0.0])]),
            Err(Error::DegenerateVector)
        ));
    }

    #[test]
    fn zscore_example() {
        let z = zscores(&[0.5, 0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(z[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2], -std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_eq!(zscores(&[0.3; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn candidate_thresholds() {
        let z = [0.71, 0.71, -1.41];
        assert_eq!(global_candidates(&z, -1.0), vec![2]);
        assert!(global_candidates(&z, f64::NEG_INFINITY).is_empty());
        assert_eq!(global_candidates(&z, f64::INFINITY), vec![0, 1, 2]);
    }

    #[test]
    fn orthogonal_user_is_flagged() {
        let a = detect_from_users(
            users(&[v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])]),
            0,
            &OutlierOptions {
                theta_g: -1.0,
                theta_l: 1e-4,
            },
        )
        .unwrap();
        assert_eq!(a.report.global_candidates, vec!["u3"]);
        assert_eq!(a.profiles[2].d_nn, Some(1.0));
        assert_eq!(a.report.outliers, vec!["u3"]);
        assert_eq!(a.report.count, 1);
        assert_eq!(a.report.d_nn_p01, Some(1.0));
    }

    #[test]
    fn twin_users_are_not_outliers() {
        // A dense cluster plus an isolated identical pair.
        let mut vs: Vec<Vector> = (0..20).map(|i| v(&[1.0, 0.01 * i as f64, 0.0])).collect();
        vs.push(v(&[0.0, 0.0, 1.0]));
        vs.push(v(&[0.0, 0.0, 2.0]));
        let a = detect_from_users(users(&vs), 0, &OutlierOptions::default()).unwrap();
        assert_eq!(a.report.global_candidates, vec!["u21", "u22"]);
        assert!(a.report.outliers.is_empty());
        assert_eq!(a.profiles[20].d_nn, Some(0.0));
    }

    #[test]
    fn zero_theta_l_keeps_all_candidates() {
        let mut vs: Vec<Vector> = (0..20).map(|i| v(&[1.0, 0.01 * i as f64, 0.0])).collect();
        vs.push(v(&[0.0, 0.0, 1.0]));
        vs.push(v(&[0.0, 0.0, 1.0]));
        let a = detect_from_users(
            users(&vs),
            0,
            &OutlierOptions {
                theta_g: DEFAULT_THETA_G,
                theta_l: 0.0,
            },
        )
        .unwrap();
        assert_eq!(a.report.outliers, a.report.global_candidates);
    }

    #[test]
    fn curve_is_sorted_descending() {
        let vs: Vec<Vector> = (0..30)
            .map(|i| v(&[(i as f64).cos(), (i as f64 * 1.3).sin(), 0.1]))
            .collect();
        let a = detect_from_users(
            users(&vs),
            0,
            &OutlierOptions {
                theta_g: f64::INFINITY,
                theta_l: 1e-4,
            },
        )
        .unwrap();
        let curve = a.d_nn_curve();
        assert_eq!(curve.len(), 30);
        assert!(curve.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&xs, 50.0), Some(2.0));
        assert_eq!(percentile(&xs, 1.0), Some(0.04));
        assert_eq!(percentile(&[7.0], 1.0), Some(7.0));
        assert_eq!(percentile(&[], 1.0), None);
    }

    #[test]
    fn user_vectors_group_and_exclude() {
        let corpus = Corpus::new(
            "t",
            vec![
                Review::new("b", 5, "x").unwrap(),
                Review::new("a", 4, "y").unwrap(),
                Review::new("b", 1, "z").unwrap(),
                Review::new("c", 1, "").unwrap(),
            ],
        );
        let rv = vec![Some(v(&[1.0, 0.0])), Some(v(&[0.0, 1.0])), Some(v(&[0.0, 1.0])), None];
        let (users, excluded) = user_vectors(&corpus, &rv).unwrap();
        assert_eq!(users[0], ("a".to_string(), v(&[0.0, 1.0])));
        assert_eq!(users[1], ("b".to_string(), v(&[0.5, 0.5])));
        assert_eq!(excluded, vec!["c"]);
    }

    fn naive_similarity(vs: &[Vector]) -> Vec<f64> {
        (0..vs.len())
            .map(|i| {
                let mut sum = 0.0;
                for j in 0..vs.len() {
                    if j != i {
                        sum += crate::semantic::cosine_similarity(&vs[i], &vs[j]).unwrap();
                    }
                }
                sum / (vs.len() - 1) as f64
            })
            .collect()
    }

    fn arb_vectors() -> impl Strategy<Value = Vec<Vector>> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 2..40).prop_map(|rows| {
            rows.into_iter()
                .map(|mut r| {
                    if r.iter().all(|x| *x == 0.0) {
                        r[0] = 1.0;
                    }
                    Vector(r)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn symmetric_pass_matches_rows(vs in arb_vectors()) {
            let fast = avg_pairwise_similarity(&vs).unwrap();
            prop_assert_eq!(&fast, &naive_similarity(&vs));
            let norms: Vec<f64> = vs.iter().map(Vector::norm_sq).collect();
            let denom = (vs.len() - 1) as f64;
            for tile in [1, 2, 3, 7, TILE] {
                let seq: Vec<f64> = symmetric_sums(&vs, &norms, tile).into_iter().map(|s| s / denom).collect();
                let par: Vec<f64> = similarity_rows_parallel(&vs, &norms, tile).into_iter().map(|s| s / denom).collect();
                prop_assert_eq!(&fast, &seq);
                prop_assert_eq!(&fast, &par);
            }
            prop_assert!(fast.iter().all(|s| (-1.0..=1.0).contains(s)));
        }

        #[test]
        fn zscores_have_zero_mean(s in prop::collection::vec(-1.0f64..1.0, 2..100)) {
            let z = zscores(&s).unwrap();
            prop_assert!(z.iter().sum::<f64>().abs() / (z.len() as f64) < 1e-9);
        }

        #[test]
        fn detection_is_scale_invariant(vs in arb_vectors(), m in -8i32..8) {
            // Powers of two scale exactly, so every statistic must match bitwise.
            let k = 2f64.powi(m);
            let opts = OutlierOptions { theta_g: -1.0, theta_l: 1e-4 };
            let a = detect_from_users(users(&vs), 0, &opts).unwrap();
            let scaled: Vec<Vector> = vs.iter().map(|v| v.scaled(k)).collect();
            let b = detect_from_users(users(&scaled), 0, &opts).unwrap();
            for (pa, pb) in a.profiles.iter().zip(&b.profiles) {
                prop_assert_eq!(pa.s, pb.s);
            }
            prop_assert_eq!(&a.report, &b.report);
        }

        #[test]
        fn sets_are_nested_and_monotone(vs in arb_vectors(), tg in -3.0f64..1.0, tl in 0.0f64..0.5) {
            let a = detect_from_users(users(&vs), 0, &OutlierOptions { theta_g: tg, theta_l: tl }).unwrap();
            for u in &a.report.outliers {
                prop_assert!(a.report.global_candidates.contains(u));
            }
            let wider = detect_from_users(users(&vs), 0, &OutlierOptions { theta_g: tg + 0.5, theta_l: tl / 2.0 }).unwrap();
            for u in &a.report.outliers {
                prop_assert!(wider.report.outliers.contains(u));
            }
        }
    }

    #[test]
    fn duplicate_removes_user_from_outliers() {
        let mut vs: Vec<Vector> = (0..20).map(|i| v(&[1.0, 0.01 * i as f64, 0.0])).collect();
        vs.push(v(&[0.0, 0.1, 1.0]));
        let opts = OutlierOptions::default();
        let before = detect_from_users(users(&vs), 0, &opts).unwrap();
        assert_eq!(before.report.outliers, vec!["u21"]);
        vs.push(v(&[0.0, 0.1, 1.0]));
        let after = detect_from_users(users(&vs), 0, &opts).unwrap();
        assert!(!after.report.outliers.contains(&"u21".to_string()));
    }

    #[test]
    fn tiled_passes_match_direct_loops_across_tiles() {
        let vs: Vec<Vector> = (0..300)
            .map(|i| Vector((0..5).map(|k| ((i * 7 + k * 13) as f64 * 0.37).sin() + 0.1).collect()))
            .collect();
        assert_eq!(avg_pairwise_similarity(&vs).unwrap(), naive_similarity(&vs));
        let cands: Vec<usize> = (0..300).step_by(7).collect();
        let got = nearest_neighbor_distances(&cands, &vs).unwrap();
        for (k, &i) in cands.iter().enumerate() {
            let want = (0..300)
                .filter(|&j| j != i)
                .map(|j| crate::semantic::cosine_distance(&vs[i], &vs[j]).unwrap())
                .fold(f64::INFINITY, f64::min)
                .max(0.0);
            assert_eq!(got[k].to_bits(), want.to_bits());
        }
    }
}
