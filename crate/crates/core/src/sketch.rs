//! Seeded linear sketch operators `R: R^d -> R^b` and their transposes.
//!
//! Each operator is regenerated from `(master_seed, round)` alone, so every
//! party holding the master seed obtains the same `R_t` without
//! communication. `sk` applies `R` and `desk` applies `Rᵀ`.
//!
//! Dense products accumulate column by column in ascending index order.
//! Hash-based kinds visit coordinates in the same order, so `desk(sk(v))`
//! is a fixed, reproducible evaluation of `RᵀR v`.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{derive_round_seed, rng_from_seed, Rng};

/// Family a sketch operator is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchKind {
    /// Dense i.i.d. `N(0, 1/b)` entries.
    Gaussian,
    /// Subsampled randomized Hadamard transform.
    Srht,
    /// Rows of 4-wise independent `±1/√b` signs.
    Ams,
    /// One `±1` per column, bucket 2-wise and sign 4-wise independent.
    CountSketch,
    /// `s` nonzeros `±1/√s` per column, one in each of `s` row blocks.
    SparseEmbedding(usize),
    /// Rescaled signed coordinate sampling without replacement.
    UniformSampling,
    /// `R = I`, only valid when `b = d`.
    Identity,
}

impl SketchKind {
    /// Short lowercase name used in reports.
    pub fn name(&self) -> String {
        match self {
            SketchKind::Gaussian => "gaussian".into(),
            SketchKind::Srht => "srht".into(),
            SketchKind::Ams => "ams".into(),
            SketchKind::CountSketch => "count_sketch".into(),
            SketchKind::SparseEmbedding(s) => format!("sparse_embedding_s{s}"),
            SketchKind::UniformSampling => "uniform_sampling".into(),
            SketchKind::Identity => "identity".into(),
        }
    }
}

/// Everything needed to regenerate the operator of any round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchSpec {
    pub kind: SketchKind,
    pub d: usize,
    pub b_sketch: usize,
    pub master_seed: u64,
}

impl SketchSpec {
    pub fn new(kind: SketchKind, d: usize, b_sketch: usize, master_seed: u64) -> Self {
        Self {
            kind,
            d,
            b_sketch,
            master_seed,
        }
    }

    /// Checks the structural invariants of the specification.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.b_sketch == 0 {
            return Err(Error::InvalidSpec("d and b_sketch must be positive".into()));
        }
        if self.b_sketch > self.d {
            return Err(Error::InvalidSpec(format!(
                "b_sketch = {} exceeds d = {}",
                self.b_sketch, self.d
            )));
        }
        match self.kind {
            SketchKind::SparseEmbedding(s) => {
                if s == 0 || s > self.b_sketch || self.b_sketch % s != 0 {
                    return Err(Error::InvalidSpec(format!(
                        "sparsity s = {s} must divide b_sketch = {}",
                        self.b_sketch
                    )));
                }
            }
            SketchKind::Identity => {
                if self.b_sketch != self.d {
                    return Err(Error::InvalidSpec(
                        "identity sketch requires b_sketch = d".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Variance-inflation parameter `α = a·d/b` of a sketch family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha {
    pub value: f64,
    /// `false` for uniform sampling, whose second-moment constant grows with
    /// the dimension and therefore yields no communication saving.
    pub certified: bool,
}

/// Second-moment constant `a` of a family: `E[(gᵀRᵀRh)²] ≤ (gᵀh)² + (a/b)‖g‖²‖h‖²`.
pub fn cwe_constant(kind: SketchKind, d: usize) -> Option<f64> {
    match kind {
        SketchKind::Gaussian | SketchKind::CountSketch => Some(3.0),
        SketchKind::Srht | SketchKind::Ams | SketchKind::SparseEmbedding(_) => Some(2.0),
        SketchKind::UniformSampling => Some(d as f64),
        SketchKind::Identity => None,
    }
}

/// Variance-inflation parameter of `kind` at dimensions `(d, b)`.
pub fn alpha_param(kind: SketchKind, d: usize, b: usize) -> Result<Alpha> {
    if b == 0 {
        return Err(Error::InvalidParam("b must be at least 1".into()));
    }
    let a = cwe_constant(kind, d)
        .ok_or_else(|| Error::Unsupported("identity sketch has α = 0 by definition".into()))?;
    Ok(Alpha {
        value: a * d as f64 / b as f64,
        certified: kind != SketchKind::UniformSampling,
    })
}

/// `α`, with the identity sketch mapped to zero.
pub fn alpha_or_zero(kind: SketchKind, d: usize, b: usize) -> f64 {
    alpha_param(kind, d, b).map(|a| a.value).unwrap_or(0.0)
}

const MERSENNE61: u64 = (1u64 << 61) - 1;

fn reduce61(x: u128) -> u64 {
    let lo = (x as u64) & MERSENNE61;
    let hi = (x >> 61) as u64;
    let mut r = lo + hi;
    r = (r & MERSENNE61) + (r >> 61);
    if r >= MERSENNE61 {
        r -= MERSENNE61;
    }
    r
}

/// Random polynomial of degree `k - 1` over `GF(2^61 - 1)`; the induced
/// family is `k`-wise independent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolyHash {
    coeffs: Vec<u64>,
}

impl PolyHash {
    pub fn sample(k: usize, rng: &mut Rng) -> Self {
        let coeffs = (0..k).map(|_| rng.random_range(0..MERSENNE61)).collect();
        Self { coeffs }
    }

    /// Independence order of the family.
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Polynomial value at `x` (Horner's rule).
    pub fn eval(&self, x: u64) -> u64 {
        let x = x % MERSENNE61;
        let mut acc = 0u64;
        for &c in self.coeffs.iter().rev() {
            acc = reduce61(acc as u128 * x as u128 + c as u128);
        }
        acc
    }

    /// Bucket in `0..m`.
    pub fn bucket(&self, x: u64, m: usize) -> usize {
        (self.eval(x) % m as u64) as usize
    }

    /// Sign `±1` from the low bit.
    pub fn sign(&self, x: u64) -> f64 {
        if self.eval(x) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Internal representation of `R`.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    /// Row-major `b × d` matrix.
    Dense(Vec<f64>),
    /// `√(n/b)·S·H·D` on the padded dimension `n`.
    Srht {
        signs: Vec<f64>,
        rows: Vec<usize>,
        padded: usize,
    },
    /// One 4-wise hash per row; the sign pattern is expanded at build time.
    Ams {
        hashes: Vec<PolyHash>,
        signs: Vec<f64>,
    },
    /// Bucket and sign per column.
    CountSketch {
        bucket_hash: PolyHash,
        sign_hash: PolyHash,
        rows: Vec<usize>,
        signs: Vec<f64>,
    },
    /// `s` (row, sign) pairs per column, stored column-major.
    Sparse {
        s: usize,
        bucket_hashes: Vec<PolyHash>,
        sign_hashes: Vec<PolyHash>,
        rows: Vec<usize>,
        signs: Vec<f64>,
    },
    /// Sampled coordinate per row, with its Rademacher sign.
    Sampling { coords: Vec<usize>, signs: Vec<f64> },
    Identity,
}

/// The operator `R_t` of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchOperator {
    pub spec: SketchSpec,
    pub round: u64,
    pub repr: Representation,
}

/// Builds the operator of `round` for `spec`.
pub fn build_sketch(spec: SketchSpec, round: u64) -> Result<SketchOperator> {
    SketchOperator::build(spec, round)
}

/// `R v`.
pub fn sk(op: &SketchOperator, v: &[f64]) -> Result<Vec<f64>> {
    op.sk(v)
}

/// `Rᵀ u`.
pub fn desk(op: &SketchOperator, u: &[f64]) -> Result<Vec<f64>> {
    op.desk(u)
}

fn rademacher(rng: &mut Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// In-place unnormalized fast Walsh–Hadamard transform (Sylvester order).
pub fn fwht(x: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let a = x[j];
                let b = x[j + h];
                x[j] = a + b;
                x[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

impl SketchOperator {
    /// Draws the operator of `round` from `spec`.
    pub fn build(spec: SketchSpec, round: u64) -> Result<Self> {
        spec.validate()?;
        let (d, b) = (spec.d, spec.b_sketch);
        let mut rng = rng_from_seed(derive_round_seed(spec.master_seed, round));
        let repr = match spec.kind {
            SketchKind::Gaussian => {
                let sd = 1.0 / (b as f64).sqrt();
                let m = (0..b * d)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Representation::Dense(m)
            }
            SketchKind::Srht => {
                let padded = d.next_power_of_two();
                let signs = (0..d).map(|_| rademacher(&mut rng)).collect();
                let rows = sample(&mut rng, padded, b).into_vec();
                Representation::Srht {
                    signs,
                    rows,
                    padded,
                }
            }
            SketchKind::Ams => {
                let hashes: Vec<PolyHash> = (0..b).map(|_| PolyHash::sample(4, &mut rng)).collect();
                let scale = 1.0 / (b as f64).sqrt();
                let mut signs = Vec::with_capacity(b * d);
                for h in &hashes {
                    for j in 0..d {
                        signs.push(scale * h.sign(j as u64));
                    }
                }
                Representation::Ams { hashes, signs }
            }
            SketchKind::CountSketch => {
                let bucket_hash = PolyHash::sample(2, &mut rng);
                let sign_hash = PolyHash::sample(4, &mut rng);
                let rows = (0..d).map(|j| bucket_hash.bucket(j as u64, b)).collect();
                let signs = (0..d).map(|j| sign_hash.sign(j as u64)).collect();
                Representation::CountSketch {
                    bucket_hash,
                    sign_hash,
                    rows,
                    signs,
                }
            }
            SketchKind::SparseEmbedding(s) => {
                let block = b / s;
                let bucket_hashes: Vec<PolyHash> =
                    (0..s).map(|_| PolyHash::sample(2, &mut rng)).collect();
                let sign_hashes: Vec<PolyHash> =
                    (0..s).map(|_| PolyHash::sample(4, &mut rng)).collect();
                let scale = 1.0 / (s as f64).sqrt();
                let mut rows = Vec::with_capacity(d * s);
                let mut signs = Vec::with_capacity(d * s);
                for j in 0..d {
                    for l in 0..s {
                        rows.push(l * block + bucket_hashes[l].bucket(j as u64, block));
                        signs.push(scale * sign_hashes[l].sign(j as u64));
                    }
                }
                Representation::Sparse {
                    s,
                    bucket_hashes,
                    sign_hashes,
                    rows,
                    signs,
                }
            }
            SketchKind::UniformSampling => {
                let signs_all: Vec<f64> = (0..d).map(|_| rademacher(&mut rng)).collect();
                let coords = sample(&mut rng, d, b).into_vec();
                let signs = coords.iter().map(|&c| signs_all[c]).collect();
                Representation::Sampling { coords, signs }
            }
            SketchKind::Identity => Representation::Identity,
        };
        Ok(Self { spec, round, repr })
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn b(&self) -> usize {
        self.spec.b_sketch
    }

    /// Dimension the Hadamard transform runs on (equal to `d` for other kinds).
    pub fn padded_dim(&self) -> usize {
        match &self.repr {
            Representation::Srht { padded, .. } => *padded,
            _ => self.spec.d,
        }
    }

    /// `R v`.
    pub fn sk(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (d, b) = (self.d(), self.b());
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
        let out = match &self.repr {
            Representation::Dense(m) => dense_sk(m, b, d, v),
            Representation::Ams { signs, .. } => dense_sk(signs, b, d, v),
            Representation::Srht {
                signs,
                rows,
                padded,
            } => {
                let mut x = vec![0.0; *padded];
                for j in 0..d {
                    x[j] = signs[j] * v[j];
                }
                fwht(&mut x);
                let scale = 1.0 / (b as f64).sqrt();
                rows.iter().map(|&r| scale * x[r]).collect()
            }
            Representation::CountSketch { rows, signs, .. } => {
                let mut out = vec![0.0; b];
                for j in 0..d {
                    out[rows[j]] += signs[j] * v[j];
                }
                out
            }
            Representation::Sparse { s, rows, signs, .. } => {
                let mut out = vec![0.0; b];
                for j in 0..d {
                    for l in 0..*s {
                        out[rows[j * s + l]] += signs[j * s + l] * v[j];
                    }
                }
                out
            }
            Representation::Sampling { coords, signs } => {
                let scale = (d as f64 / b as f64).sqrt();
                coords
                    .iter()
                    .zip(signs)
                    .map(|(&c, &s)| scale * s * v[c])
                    .collect()
            }
            Representation::Identity => v.to_vec(),
        };
        Ok(out)
    }

    /// `Rᵀ u`.
    pub fn desk(&self, u: &[f64]) -> Result<Vec<f64>> {
        let (d, b) = (self.d(), self.b());
        if u.len() != b {
            return Err(Error::DimensionMismatch {
                expected: b,
                got: u.len(),
            });
        }
        let out = match &self.repr {
            Representation::Dense(m) => linalg::matvec_t(m, b, d, u),
            Representation::Ams { signs, .. } => linalg::matvec_t(signs, b, d, u),
            Representation::Srht {
                signs,
                rows,
                padded,
            } => {
                let mut y = vec![0.0; *padded];
                for (k, &r) in rows.iter().enumerate() {
                    y[r] += u[k];
                }
                fwht(&mut y);
                let scale = 1.0 / (b as f64).sqrt();
                (0..d).map(|j| scale * signs[j] * y[j]).collect()
            }
            Representation::CountSketch { rows, signs, .. } => {
                (0..d).map(|j| signs[j] * u[rows[j]]).collect()
            }
            Representation::Sparse { s, rows, signs, .. } => (0..d)
                .map(|j| {
                    let mut acc = 0.0;
                    for l in 0..*s {
                        acc += signs[j * s + l] * u[rows[j * s + l]];
                    }
                    acc
                })
                .collect(),
            Representation::Sampling { coords, signs } => {
                let scale = (d as f64 / b as f64).sqrt();
                let mut out = vec![0.0; d];
                for (k, (&c, &s)) in coords.iter().zip(signs).enumerate() {
                    out[c] += scale * s * u[k];
                }
                out
            }
            Representation::Identity => u.to_vec(),
        };
        Ok(out)
    }

    /// `RᵀR v`, evaluated as `desk(sk(v))`.
    pub fn gram_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.desk(&self.sk(v)?)
    }

    /// Materializes `R` as a `b × d` matrix, entry by entry from the stored
    /// parameters rather than through `sk`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (d, b) = (self.d(), self.b());
        let mut r = DMatrix::zeros(b, d);
        match &self.repr {
            Representation::Dense(m) | Representation::Ams { signs: m, .. } => {
                for i in 0..b {
                    for j in 0..d {
                        r[(i, j)] = m[i * d + j];
                    }
                }
            }
            Representation::Srht {
                signs,
                rows,
                padded,
            } => {
                let scale = (*padded as f64 / b as f64).sqrt() / (*padded as f64).sqrt();
                for (k, &row) in rows.iter().enumerate() {
                    for j in 0..d {
                        let h = if (row & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        r[(k, j)] = scale * h * signs[j];
                    }
                }
            }
            Representation::CountSketch { rows, signs, .. } => {
                for j in 0..d {
                    r[(rows[j], j)] = signs[j];
                }
            }
            Representation::Sparse { s, rows, signs, .. } => {
                for j in 0..d {
                    for l in 0..*s {
                        r[(rows[j * s + l], j)] += signs[j * s + l];
                    }
                }
            }
            Representation::Sampling { coords, signs } => {
                let scale = (d as f64 / b as f64).sqrt();
                for (k, (&c, &s)) in coords.iter().zip(signs).enumerate() {
                    r[(k, c)] = scale * s;
                }
            }
            Representation::Identity => {
                for j in 0..d {
                    r[(j, j)] = 1.0;
                }
            }
        }
        r
    }

    /// Dense `R` as CSV, row-major, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let r = self.to_dense();
        let mut out = String::new();
        for i in 0..r.nrows() {
            let row: Vec<String> = (0..r.ncols()).map(|j| fmt_f64(r[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn dense_sk(m: &[f64], b: usize, d: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; b];
    for j in 0..d {
        let vj = v[j];
        for i in 0..b {
            out[i] += m[i * d + j] * vj;
        }
    }
    out
}

/// Formats a float with 17 significant digits, which round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SketchKind, d: usize, b: usize) -> SketchSpec {
        SketchSpec::new(kind, d, b, 17)
    }

    #[test]
    fn count_sketch_columns_have_one_signed_unit() {
        let op = build_sketch(spec(SketchKind::CountSketch, 8, 4), 0).unwrap();
        let r = op.to_dense();
        for j in 0..8 {
            let nz: Vec<f64> = r.column(j).iter().copied().filter(|x| *x != 0.0).collect();
            assert_eq!(nz.len(), 1);
            assert_eq!(nz[0].abs(), 1.0);
        }
    }

    #[test]
    fn ams_entries_are_half() {
        let op = build_sketch(spec(SketchKind::Ams, 8, 4), 0).unwrap();
        let r = op.to_dense();
        assert_eq!(r.len(), 32);
        assert!(r.iter().all(|x| x.abs() == 0.5));
    }

    #[test]
    fn srht_pads_to_power_of_two() {
        let op = build_sketch(spec(SketchKind::Srht, 6, 3), 0).unwrap();
        assert_eq!(op.padded_dim(), 8);
    }

    #[test]
    fn identity_is_identity() {
        let op = build_sketch(spec(SketchKind::Identity, 5, 5), 3).unwrap();
        let v = [1.0, -2.0, 3.5, 0.0, 1e-3];
        assert_eq!(op.sk(&v).unwrap(), v.to_vec());
        assert_eq!(op.gram_apply(&v).unwrap(), v.to_vec());
    }

    #[test]
    fn zero_maps_to_zero() {
        for kind in [
            SketchKind::Gaussian,
            SketchKind::Srht,
            SketchKind::Ams,
            SketchKind::CountSketch,
            SketchKind::SparseEmbedding(2),
            SketchKind::UniformSampling,
        ] {
            let op = build_sketch(spec(kind, 12, 4), 1).unwrap();
            assert!(op.sk(&[0.0; 12]).unwrap().iter().all(|x| *x == 0.0));
            assert!(op.desk(&[0.0; 4]).unwrap().iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(matches!(
            build_sketch(spec(SketchKind::Gaussian, 4, 8), 0),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            build_sketch(spec(SketchKind::SparseEmbedding(3), 16, 8), 0),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            build_sketch(spec(SketchKind::Identity, 16, 8), 0),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let op = build_sketch(spec(SketchKind::Gaussian, 8, 4), 0).unwrap();
        assert!(matches!(
            op.sk(&[1.0; 7]),
            Err(Error::DimensionMismatch { expected: 8, got: 7 })
        ));
        assert!(matches!(
            op.desk(&[1.0; 5]),
            Err(Error::DimensionMismatch { expected: 4, got: 5 })
        ));
    }

    #[test]
    fn alpha_table_values() {
        assert_eq!(alpha_param(SketchKind::Gaussian, 256, 64).unwrap().value, 12.0);
        assert_eq!(alpha_param(SketchKind::Srht, 256, 64).unwrap().value, 8.0);
        assert_eq!(alpha_param(SketchKind::Ams, 256, 64).unwrap().value, 8.0);
        assert_eq!(alpha_param(SketchKind::CountSketch, 256, 64).unwrap().value, 12.0);
        assert_eq!(
            alpha_param(SketchKind::SparseEmbedding(2), 256, 64).unwrap().value,
            8.0
        );
        let u = alpha_param(SketchKind::UniformSampling, 64, 64).unwrap();
        assert_eq!(u.value, 64.0);
        assert!(!u.certified);
        assert!(matches!(
            alpha_param(SketchKind::Identity, 8, 8),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn fwht_matches_explicit_hadamard() {
        let x = [1.0, 2.0, -1.0, 0.5];
        let mut y = x;
        fwht(&mut y);
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..4 {
                let h = if (i & j as usize).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                s += h * x[j];
            }
            assert_eq!(y[i], s);
        }
    }

    #[test]
    fn poly_hash_reduction_matches_bigint_arithmetic() {
        let mut rng = rng_from_seed(5);
        let h = PolyHash::sample(4, &mut rng);
        for x in [0u64, 1, 2, 1000, MERSENNE61 - 1] {
            let mut acc: u128 = 0;
            for &c in h.coeffs.iter().rev() {
                acc = (acc * x as u128 + c as u128) % MERSENNE61 as u128;
            }
            assert_eq!(h.eval(x) as u128, acc);
        }
    }
}
