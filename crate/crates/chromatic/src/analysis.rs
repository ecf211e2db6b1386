//! Partition and matrix diagnostics: color-frequency entropy, displacement
//! rank against configurable band-matrix pairs, RandIndex, Variation of
//! Information, Hamming distance, and a run analyzer that emits one CSV row
//! per controller phase.
//!
//! Entropies are reported in bits. RandIndex and VI are invariant under
//! permutations of the color labels; the Hamming distance deliberately is
//! not, because colors index positions in the shared weight vector.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::topology::{build_weight_matrices, NetworkTopology, Partitioning, SharedWeightPool};

/// Shannon entropy (base 2) of the color frequencies of a partitioning.
/// Unused colors contribute zero.
pub fn partition_entropy(partitioning: &Partitioning) -> f64 {
    let counts = partitioning.color_counts();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

fn check_equal_lengths(p1: &Partitioning, p2: &Partitioning) -> Result<()> {
    if p1.len() != p2.len() {
        return Err(Error::DimensionMismatch {
            what: "partition comparison",
            expected: p1.len(),
            got: p2.len(),
        });
    }
    Ok(())
}

/// Joint color-contingency table: count per (c1, c2) pair, counts per c1,
/// counts per c2, total.
type Contingency = (BTreeMap<(usize, usize), u64>, Vec<u64>, Vec<u64>, u64);

fn contingency(p1: &Partitioning, p2: &Partitioning) -> Contingency {
    let mut joint = BTreeMap::new();
    for (&a, &b) in p1.assignment().iter().zip(p2.assignment()) {
        *joint.entry((a, b)).or_insert(0u64) += 1;
    }
    (
        joint,
        p1.color_counts(),
        p2.color_counts(),
        p1.len() as u64,
    )
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Fraction of element pairs on which the two partitions agree: co-clustered
/// in both or separated in both.
pub fn rand_index(p1: &Partitioning, p2: &Partitioning) -> Result<f64> {
    check_equal_lengths(p1, p2)?;
    let n = p1.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let (joint, a, b, _) = contingency(p1, p2);
    let together_both: u64 = joint.values().map(|&c| pairs(c)).sum();
    let together_1: u64 = a.iter().map(|&c| pairs(c)).sum();
    let together_2: u64 = b.iter().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    // Pairs split in both = total − together_1 − together_2 + together_both.
    let agreements = total + 2 * together_both - together_1 - together_2;
    Ok(agreements as f64 / total as f64)
}

/// Variation of Information in bits: H(P1) + H(P2) − 2·I(P1; P2).
pub fn variation_of_information(p1: &Partitioning, p2: &Partitioning) -> Result<f64> {
    check_equal_lengths(p1, p2)?;
    let (joint, a, b, n) = contingency(p1, p2);
    if n == 0 {
        return Ok(0.0);
    }
    let n = n as f64;
    let h = |counts: &[u64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    };
    let h1 = h(&a);
    let h2 = h(&b);
    let mut mutual = 0.0;
    for (&(i, j), &c) in &joint {
        let pij = c as f64 / n;
        let pi = a[i] as f64 / n;
        let pj = b[j] as f64 / n;
        mutual += pij * (pij / (pi * pj)).log2();
    }
    Ok((h1 + h2 - 2.0 * mutual).max(0.0))
}

/// Hamming distance between assignment arrays. Label-sensitive: colors are
/// indices into the distinct-weight vector, so relabeling is a real change.
pub fn partition_distance(p1: &Partitioning, p2: &Partitioning) -> Result<u64> {
    check_equal_lengths(p1, p2)?;
    if p1.num_partitions() != p2.num_partitions() {
        return Err(Error::DimensionMismatch {
            what: "partition colors",
            expected: p1.num_partitions(),
            got: p2.num_partitions(),
        });
    }
    Ok(p1
        .assignment()
        .iter()
        .zip(p2.assignment())
        .filter(|(a, b)| a != b)
        .count() as u64)
}

// ---------------------------------------------------------------------------
// Displacement rank
// ---------------------------------------------------------------------------

/// Which Sylvester band pair to use for the displacement operator FR − RA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandPair {
    /// (Z₁, Z₀): circulant down-shift and nilpotent down-shift. Toeplitz
    /// matrices have displacement rank ≤ 2 under this pair.
    Toeplitz,
    /// (Z₁, Z₀ᵀ): certifies Toeplitz–Hankel structure (flipped Toeplitz).
    Hankel,
}

impl std::str::FromStr for BandPair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toeplitz" => Ok(BandPair::Toeplitz),
            "hankel" => Ok(BandPair::Hankel),
            other => Err(Error::InvalidArgument(format!("unknown band pair `{other}`"))),
        }
    }
}

/// Down-shift matrix: ones on the subdiagonal, `corner` at (0, n−1).
pub fn shift_down(n: usize, corner: f64) -> Matrix {
    Matrix::from_fn(n, n, |i, j| {
        if i > 0 && j == i - 1 {
            1.0
        } else if i == 0 && j == n - 1 {
            corner
        } else {
            0.0
        }
    })
}

/// The (F, A) operator matrices of a band pair at size n.
pub fn band_matrices(pair: BandPair, n: usize) -> (Matrix, Matrix) {
    let z1 = shift_down(n, 1.0);
    let z0 = shift_down(n, 0.0);
    match pair {
        BandPair::Toeplitz => (z1, z0),
        BandPair::Hankel => (z1, z0.transpose()),
    }
}

/// Zero-pads a rectangular matrix into the n×n square, n = max(rows, cols).
pub fn embed_square(m: &Matrix) -> Matrix {
    let n = m.rows().max(m.cols());
    Matrix::from_fn(n, n, |i, j| {
        if i < m.rows() && j < m.cols() {
            m.get(i, j)
        } else {
            0.0
        }
    })
}

/// Singular values by one-sided Jacobi (columns orthogonalized in place),
/// sorted descending. Accurate to machine precision relative to the largest
/// singular value, which the rank threshold below relies on.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut a = if m.rows() >= m.cols() {
        m.clone()
    } else {
        m.transpose()
    };
    let rows = a.rows();
    let cols = a.cols();
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..rows {
                    let vp = a.get(i, p);
                    let vq = a.get(i, q);
                    app += vp * vp;
                    aqq += vq * vq;
                    apq += vp * vq;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let vp = a.get(i, p);
                    let vq = a.get(i, q);
                    a.set(i, p, c * vp - s * vq);
                    a.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sigma
}

/// Numerical rank: singular values above 1e-10 times the largest.
pub fn numerical_rank(m: &Matrix) -> usize {
    let sigma = singular_values(m);
    let largest = sigma.first().copied().unwrap_or(0.0);
    if largest == 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s > 1e-10 * largest).count()
}

/// Displacement rank of R with respect to (F, A): entries of FR − RA with
/// absolute value below `threshold` are zeroed, then the numerical rank of
/// the result is returned.
pub fn displacement_rank(r: &Matrix, f: &Matrix, a: &Matrix, threshold: f64) -> Result<usize> {
    if f.cols() != r.rows() || r.cols() != a.rows() || f.rows() != f.cols() || a.rows() != a.cols()
    {
        return Err(Error::InvalidArgument(format!(
            "displacement shapes incompatible: F {}x{}, R {}x{}, A {}x{}",
            f.rows(),
            f.cols(),
            r.rows(),
            r.cols(),
            a.rows(),
            a.cols()
        )));
    }
    if threshold < 0.0 {
        return Err(Error::InvalidArgument("threshold must be >= 0".into()));
    }
    let mut d = f.matmul(r).sub(&r.matmul(a));
    for i in 0..d.rows() {
        for j in 0..d.cols() {
            if d.get(i, j).abs() < threshold {
                d.set(i, j, 0.0);
            }
        }
    }
    Ok(numerical_rank(&d))
}

/// Displacement rank of a (possibly rectangular) weight matrix: the matrix is
/// zero-padded into its enclosing square and measured against `pair`.
pub fn weight_matrix_displacement_rank(m: &Matrix, pair: BandPair, threshold: f64) -> Result<usize> {
    let sq = embed_square(m);
    let (f, a) = band_matrices(pair, sq.rows());
    displacement_rank(&sq, &f, &a, threshold)
}

// ---------------------------------------------------------------------------
// Run analysis
// ---------------------------------------------------------------------------

/// Default zeroing threshold for displacement computations, matching the
/// reporting convention used in the run analyzer.
pub const DISPLACEMENT_THRESHOLD: f64 = 0.1;

/// One snapshot per controller phase, as written by the trainer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSnapshot {
    pub phase: u64,
    pub iteration: usize,
    pub assignment: Vec<usize>,
    pub num_partitions: usize,
    pub max_reward: Option<f64>,
    pub pool_weights: Vec<f64>,
}

/// Metrics for one controller phase. Pairwise metrics compare the phase's
/// best-scoring partition with the previous phase's.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionMetricsRecord {
    pub phase: u64,
    pub iteration: usize,
    pub entropy_bits: f64,
    pub uniform_entropy_bits: f64,
    pub rand_index_vs_prev: Option<f64>,
    pub vi_bits_vs_prev: Option<f64>,
    pub distance_vs_prev: Option<u64>,
    pub displacement_ranks_toeplitz: Vec<usize>,
    pub displacement_ranks_hankel: Vec<usize>,
}

pub const METRICS_CSV_HEADER: &str = "phase,iteration,entropy_bits,uniform_entropy_bits,rand_index_vs_prev,vi_bits_vs_prev,distance_vs_prev,displacement_ranks_toeplitz,displacement_ranks_hankel";

fn csv_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn csv_ranks(ranks: &[usize]) -> String {
    ranks
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

impl PartitionMetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.phase,
            self.iteration,
            self.entropy_bits,
            self.uniform_entropy_bits,
            csv_opt(&self.rand_index_vs_prev),
            csv_opt(&self.vi_bits_vs_prev),
            csv_opt(&self.distance_vs_prev),
            csv_ranks(&self.displacement_ranks_toeplitz),
            csv_ranks(&self.displacement_ranks_hankel),
        )
    }
}

/// Computes metric records from the phase snapshots of a run.
pub fn analyze_phases(
    topology: &NetworkTopology,
    snapshots: &[PhaseSnapshot],
) -> Result<Vec<PartitionMetricsRecord>> {
    let mut records = Vec::with_capacity(snapshots.len());
    let mut prev: Option<Partitioning> = None;
    for snap in snapshots {
        let partitioning = Partitioning::new(snap.num_partitions, snap.assignment.clone())?;
        partitioning.validate_for(topology)?;
        let pool = SharedWeightPool {
            weights: snap.pool_weights.clone(),
            biases: topology.layer_dims()[1..]
                .iter()
                .map(|&d| vec![0.0; d])
                .collect(),
        };
        let matrices = build_weight_matrices(topology, &partitioning, &pool)?;
        let mut ranks_toeplitz = Vec::new();
        let mut ranks_hankel = Vec::new();
        for m in &matrices {
            ranks_toeplitz.push(weight_matrix_displacement_rank(
                m,
                BandPair::Toeplitz,
                DISPLACEMENT_THRESHOLD,
            )?);
            ranks_hankel.push(weight_matrix_displacement_rank(
                m,
                BandPair::Hankel,
                DISPLACEMENT_THRESHOLD,
            )?);
        }
        let (ri, vi, dist) = match &prev {
            Some(p) => (
                Some(rand_index(p, &partitioning)?),
                Some(variation_of_information(p, &partitioning)?),
                Some(partition_distance(p, &partitioning)?),
            ),
            None => (None, None, None),
        };
        records.push(PartitionMetricsRecord {
            phase: snap.phase,
            iteration: snap.iteration,
            entropy_bits: partition_entropy(&partitioning),
            uniform_entropy_bits: (snap.num_partitions as f64).log2(),
            rand_index_vs_prev: ri,
            vi_bits_vs_prev: vi,
            distance_vs_prev: dist,
            displacement_ranks_toeplitz: ranks_toeplitz,
            displacement_ranks_hankel: ranks_hankel,
        });
        prev = Some(partitioning);
    }
    Ok(records)
}

/// Reads a run directory (its `config.json` and `partitions.jsonl`) and
/// writes the metrics CSV. Returns the records.
pub fn analyze_run(run_dir: &Path, out_csv: &Path) -> Result<Vec<PartitionMetricsRecord>> {
    let config_path = run_dir.join("config.json");
    let phases_path = run_dir.join("partitions.jsonl");
    let mut missing = Vec::new();
    if !config_path.exists() {
        missing.push(config_path.display().to_string());
    }
    if !phases_path.exists() {
        missing.push(phases_path.display().to_string());
    }
    if !missing.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "run artifacts missing: {}",
            missing.join(", ")
        )));
    }
    let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&config_path)?)?;
    let dims: Vec<usize> = config
        .get("layer_dims")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| Error::Config("config.json lacks layer_dims".into()))?;
    let topology = NetworkTopology::new(dims)?;

    let mut snapshots = Vec::new();
    for line in std::fs::read_to_string(&phases_path)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        snapshots.push(serde_json::from_str::<PhaseSnapshot>(line)?);
    }
    let records = analyze_phases(&topology, &snapshots)?;

    let mut out = std::fs::File::create(out_csv)?;
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for record in &records {
        writeln!(out, "{}", record.to_csv_row())?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::topology::toeplitz_build;

    fn part(m: usize, assignment: &[usize]) -> Partitioning {
        Partitioning::new(m, assignment.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(partition_entropy(&part(3, &[1, 1, 1, 1])), 0.0);
        let uniform4 = part(4, &[0, 0, 1, 1, 2, 2, 3, 3]);
        assert!((partition_entropy(&uniform4) - 2.0).abs() < 1e-15);
        let skewed = part(2, &[0, 0, 0, 1]);
        let expected = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((partition_entropy(&skewed) - expected).abs() < 1e-12);
        assert!((expected - 0.8113).abs() < 1e-4);
    }

    #[test]
    fn rand_index_examples() {
        let p = part(3, &[0, 1, 2, 1]);
        assert_eq!(rand_index(&p, &p).unwrap(), 1.0);
        let same = part(4, &[0, 0, 0, 0]);
        let distinct = part(4, &[0, 1, 2, 3]);
        assert_eq!(rand_index(&same, &distinct).unwrap(), 0.0);
        let a = part(2, &[0, 0, 1, 1]);
        let b = part(2, &[0, 1, 0, 1]);
        assert!((rand_index(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(rand_index(&a, &part(2, &[0, 1])).is_err());
    }

    #[test]
    fn rand_index_matches_pair_enumeration_oracle() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..50 {
            let n = 2 + rng.next_usize(30);
            let m = 1 + rng.next_usize(5);
            let a: Vec<usize> = (0..n).map(|_| rng.next_usize(m)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.next_usize(m)).collect();
            let p1 = part(m, &a);
            let p2 = part(m, &b);
            let mut agree = 0u64;
            let mut total = 0u64;
            for i in 0..n {
                for j in (i + 1)..n {
                    total += 1;
                    let both_same = a[i] == a[j] && b[i] == b[j];
                    let both_diff = a[i] != a[j] && b[i] != b[j];
                    if both_same || both_diff {
                        agree += 1;
                    }
                }
            }
            let oracle = agree as f64 / total as f64;
            assert!((rand_index(&p1, &p2).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn vi_examples_and_triangle_inequality() {
        let p = part(3, &[0, 1, 2, 1]);
        assert_eq!(variation_of_information(&p, &p).unwrap(), 0.0);
        let a = part(2, &[0, 0, 1, 1]);
        let b = part(2, &[0, 1, 0, 1]);
        assert!((variation_of_information(&a, &b).unwrap() - 2.0).abs() < 1e-12);

        let mut rng = SplitMix64::new(8);
        for _ in 0..1000 {
            let n = 2 + rng.next_usize(20);
            let m = 1 + rng.next_usize(4);
            let mk = |rng: &mut SplitMix64| -> Partitioning {
                part(m, &(0..n).map(|_| rng.next_usize(m)).collect::<Vec<_>>())
            };
            let (x, y, z) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let xy = variation_of_information(&x, &y).unwrap();
            let yz = variation_of_information(&y, &z).unwrap();
            let xz = variation_of_information(&x, &z).unwrap();
            assert!(xz <= xy + yz + 1e-10, "triangle violated: {xz} > {xy} + {yz}");
            // Symmetry.
            assert!((xy - variation_of_information(&y, &x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(partition_distance(&part(2, &[0, 0, 1]), &part(2, &[0, 0, 1])).unwrap(), 0);
        assert_eq!(partition_distance(&part(2, &[0, 0, 1]), &part(2, &[0, 1, 1])).unwrap(), 1);
        let a = part(2, &[0, 1, 0, 1, 1]);
        let complement = part(2, &[1, 0, 1, 0, 0]);
        assert_eq!(partition_distance(&a, &complement).unwrap(), 5);
    }

    #[test]
    fn label_permutations_change_distance_but_not_vi_or_ri() {
        let a = part(3, &[0, 0, 1, 2, 1, 0]);
        let relabeled = part(3, &[1, 1, 2, 0, 2, 1]); // 0→1, 1→2, 2→0
        assert_eq!(variation_of_information(&a, &relabeled).unwrap(), 0.0);
        assert_eq!(rand_index(&a, &relabeled).unwrap(), 1.0);
        assert_eq!(partition_distance(&a, &relabeled).unwrap(), 6);
    }

    #[test]
    fn vi_is_zero_only_for_equal_set_partitions() {
        // Exhaustive over all pairs of partitions of 5 elements into <= 3
        // colors: VI = 0 exactly when the partitions agree as set partitions
        // (i.e. they co-cluster the same pairs).
        let all: Vec<Vec<usize>> = (0..3usize.pow(5))
            .map(|mut idx| {
                (0..5)
                    .map(|_| {
                        let c = idx % 3;
                        idx /= 3;
                        c
                    })
                    .collect()
            })
            .collect();
        let same_set_partition = |x: &[usize], y: &[usize]| {
            for i in 0..x.len() {
                for j in (i + 1)..x.len() {
                    if (x[i] == x[j]) != (y[i] == y[j]) {
                        return false;
                    }
                }
            }
            true
        };
        for x in all.iter().step_by(7) {
            for y in all.iter().step_by(11) {
                let vi = variation_of_information(&part(3, x), &part(3, y)).unwrap();
                assert_eq!(
                    vi.abs() < 1e-12,
                    same_set_partition(x, y),
                    "VI {vi} disagrees for {x:?} vs {y:?}"
                );
            }
        }
    }

    #[test]
    fn singular_values_of_known_matrices() {
        let diag = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -4.0]]);
        let s = singular_values(&diag);
        assert!((s[0] - 4.0).abs() < 1e-12);
        assert!((s[1] - 3.0).abs() < 1e-12);

        // Rank-1 outer product.
        let rank1 = Matrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) * (j as f64 + 1.0));
        assert_eq!(numerical_rank(&rank1), 1);
        assert_eq!(numerical_rank(&Matrix::zeros(5, 5)), 0);
    }

    #[test]
    fn toeplitz_matrices_have_displacement_rank_at_most_two() {
        let mut rng = SplitMix64::new(12);
        for n in 4..=8 {
            let params: Vec<f64> = (0..2 * n - 1).map(|_| rng.next_normal()).collect();
            let t = toeplitz_build(n, n, &params).unwrap();
            let (f, a) = band_matrices(BandPair::Toeplitz, n);
            let rank = displacement_rank(&t, &f, &a, 0.0).unwrap();
            assert!(rank <= 2, "n={n}: rank {rank}");
        }
    }

    #[test]
    fn hankel_matrices_have_rank_two_under_transposed_pair() {
        let mut rng = SplitMix64::new(13);
        for n in 4..=8 {
            let params: Vec<f64> = (0..2 * n - 1).map(|_| rng.next_normal()).collect();
            let hankel = toeplitz_build(n, n, &params).unwrap().flip_lr();
            let (f, a) = band_matrices(BandPair::Hankel, n);
            let rank = displacement_rank(&hankel, &f, &a, 0.0).unwrap();
            assert!(rank <= 2, "n={n}: rank {rank}");
        }
    }

    #[test]
    fn random_matrices_have_generically_full_displacement_rank() {
        for seed in [1u64, 2, 3] {
            let mut rng = SplitMix64::new(seed);
            let n = 8;
            let r = Matrix::from_fn(n, n, |_, _| rng.next_normal());
            let (f, a) = band_matrices(BandPair::Toeplitz, n);
            let rank = displacement_rank(&r, &f, &a, 0.0).unwrap();
            assert!(rank >= n - 2, "seed {seed}: rank {rank}");
        }
    }

    #[test]
    fn zero_matrix_has_zero_displacement_rank() {
        let (f, a) = band_matrices(BandPair::Toeplitz, 5);
        assert_eq!(displacement_rank(&Matrix::zeros(5, 5), &f, &a, 0.0).unwrap(), 0);
    }

    #[test]
    fn displacement_rejects_bad_shapes_and_thresholds() {
        let (f, a) = band_matrices(BandPair::Toeplitz, 4);
        assert!(displacement_rank(&Matrix::zeros(5, 5), &f, &a, 0.0).is_err());
        assert!(displacement_rank(&Matrix::zeros(4, 4), &f, &a, -1.0).is_err());
    }

    #[test]
    fn uniform_random_partitions_approach_log2_m_entropy() {
        let topo = NetworkTopology::new(vec![17, 41, 6]).unwrap();
        let mut rng = SplitMix64::new(4);
        for _ in 0..20 {
            let p = Partitioning::random_uniform(17, &topo, &mut rng);
            let entropy = partition_entropy(&p);
            assert!(
                (entropy - 17f64.log2()).abs() < 0.05,
                "entropy {entropy} vs {}",
                17f64.log2()
            );
        }
    }

    #[test]
    fn analyze_phases_on_a_constant_sequence() {
        let topo = NetworkTopology::new(vec![3, 2]).unwrap();
        let assignment = vec![0, 1, 1, 0, 1, 0];
        let snaps: Vec<PhaseSnapshot> = (0..4)
            .map(|k| PhaseSnapshot {
                phase: k,
                iteration: (k as usize + 1) * 10,
                assignment: assignment.clone(),
                num_partitions: 2,
                max_reward: Some(1.0),
                pool_weights: vec![0.5, -0.25],
            })
            .collect();
        let records = analyze_phases(&topo, &snaps).unwrap();
        assert_eq!(records.len(), 4);
        assert!(records[0].rand_index_vs_prev.is_none());
        for r in &records[1..] {
            assert_eq!(r.rand_index_vs_prev, Some(1.0));
            assert_eq!(r.vi_bits_vs_prev, Some(0.0));
            assert_eq!(r.distance_vs_prev, Some(0));
        }
        for r in &records {
            assert!(r.entropy_bits <= (2f64).log2() + 1e-12);
        }
    }
}
