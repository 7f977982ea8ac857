//! Spatially coupled base matrices and the Gaussian sensing ensemble built
//! on them.
//!
//! A base matrix `W` of shape `L_r × L_c` assigns a variance profile to the
//! blocks of the sensing matrix: every row of `A` belongs to one of `L_r`
//! row groups of size `M`, every column to one of `L_c` column groups of
//! size `N`, and `A_ij ~ N(0, W_{g(i),g(j)} / M)`.
//!
//! Column groups carry the labels `-2ρ⁻¹, …, L-1`. The first `2ρ⁻¹` of them
//! are the seed columns, each observed by `L0` private row groups with unit
//! weight. The remaining row groups `a = -ρ⁻¹, …, L-1+ρ⁻¹` form the coupled
//! band `W_{a,i} = ρ 𝒲(ρ(a-i))`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};

/// A symmetric, unit-mass, C¹ kernel supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFunction {
    /// `(1 + cos πu) / 2`.
    #[default]
    RaisedCosine,
    /// `(15/16)(1 - u²)²`.
    QuarticBump,
}

impl ShapeFunction {
    pub fn name(self) -> &'static str {
        match self {
            ShapeFunction::RaisedCosine => "raised_cosine",
            ShapeFunction::QuarticBump => "quartic_bump",
        }
    }

    pub fn eval(self, u: f64) -> f64 {
        // Exact zero on the boundary: a rounding residue times ψ = ∞ is ∞.
        if !(u.abs() < 1.0) {
            return 0.0;
        }
        match self {
            ShapeFunction::RaisedCosine => 0.5 * (1.0 + (PI * u).cos()),
            ShapeFunction::QuarticBump => {
                let t = 1.0 - u * u;
                15.0 / 16.0 * t * t
            }
        }
    }

    /// `∫_{-1}^{u} 𝒲`.
    pub fn cdf(self, u: f64) -> f64 {
        if u <= -1.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        match self {
            ShapeFunction::RaisedCosine => 0.5 * (u + 1.0) + (PI * u).sin() / (2.0 * PI),
            ShapeFunction::QuarticBump => {
                // Antiderivative of (15/16)(1 - 2u² + u⁴).
                let prim = |x: f64| 15.0 / 16.0 * (x - 2.0 * x.powi(3) / 3.0 + x.powi(5) / 5.0);
                prim(u) - prim(-1.0)
            }
        }
    }

    /// Checks the kernel axioms numerically: unit mass by quadrature,
    /// symmetry, and a derivative that is continuous across `±1`.
    pub fn validate(self) -> Result<()> {
        let mass = integrate(|u| self.eval(u), -1.0, 1.0, 4, Tolerance::new(1e-13, 0.0))
            .map_err(|nc| Error::quadrature("shape normalisation", nc))?;
        let mut problems = Vec::new();
        if (mass - 1.0).abs() > 1e-10 {
            problems.push(format!("{}: integral {mass} is not 1", self.name()));
        }
        for k in 0..=100 {
            let u = k as f64 / 100.0;
            if (self.eval(u) - self.eval(-u)).abs() > 1e-15 || self.eval(u) < 0.0 {
                problems.push(format!("{}: not symmetric and nonnegative at {u}", self.name()));
            }
        }
        let h = 1e-7;
        for edge in [-1.0, 1.0] {
            let left = (self.eval(edge) - self.eval(edge - h)) / h;
            let right = (self.eval(edge + h) - self.eval(edge)) / h;
            if (left - right).abs() > 1e-6 {
                problems.push(format!("{}: derivative jumps at {edge}", self.name()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::BoundViolation(problems))
        }
    }
}

impl FromStr for ShapeFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raised_cosine" => Ok(ShapeFunction::RaisedCosine),
            "quartic_bump" => Ok(ShapeFunction::QuarticBump),
            other => Err(Error::UnknownShape(other.to_string())),
        }
    }
}

/// Looks a shape up by name and validates it.
pub fn build_shape(name: &str) -> Result<ShapeFunction> {
    let shape: ShapeFunction = name.parse()?;
    shape.validate()?;
    Ok(shape)
}

/// Parameters of a coupled base matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub l: usize,
    pub l0: usize,
    pub rho_inv: usize,
    pub shape: ShapeFunction,
}

impl Geometry {
    /// Number of seed column groups, `2ρ⁻¹`.
    pub fn seed_cols(&self) -> usize {
        2 * self.rho_inv
    }

    pub fn n_cols(&self) -> usize {
        self.l + self.seed_cols()
    }

    /// Rows of the coupled band `R_0`; one per column group.
    pub fn n_band_rows(&self) -> usize {
        self.n_cols()
    }

    pub fn n_seed_rows(&self) -> usize {
        self.seed_cols() * self.l0
    }

    pub fn n_rows(&self) -> usize {
        self.n_seed_rows() + self.n_band_rows()
    }

    /// Storage index of column label `i ∈ {-2ρ⁻¹, …, L-1}`.
    pub fn col_index(&self, label: i64) -> usize {
        (label + self.seed_cols() as i64) as usize
    }

    pub fn col_label(&self, index: usize) -> i64 {
        index as i64 - self.seed_cols() as i64
    }

    /// Storage index of band row `a ∈ {-ρ⁻¹, …, L-1+ρ⁻¹}`.
    pub fn band_row_index(&self, a: i64) -> usize {
        self.n_seed_rows() + (a + self.rho_inv as i64) as usize
    }

    pub fn band_rows(&self) -> Range<usize> {
        self.n_seed_rows()..self.n_rows()
    }

    /// Column groups `C_0 = {0, …, L-1}` as storage indices.
    pub fn interior_cols(&self) -> Range<usize> {
        self.seed_cols()..self.n_cols()
    }

    /// `ℓ = Lρ`.
    pub fn ell(&self) -> f64 {
        self.l as f64 / self.rho_inv as f64
    }
}

/// What a row group of a coupled base matrix is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    /// One of the `L0` rows of seed group `R_i`, `i < 0`.
    Seed { col: i64, copy: usize },
    /// Row `a` of the band `R_0`.
    Band { a: i64 },
    /// Row of a base matrix given directly as numbers.
    Plain(usize),
}

/// The `L_r × L_c` variance profile, stored densely row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMatrix {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    geometry: Option<Geometry>,
}

/// Builds `W(L, L0, 𝒲, ρ)` with `ρ = 1/rho_inv`.
pub fn build_base_matrix(l: usize, l0: usize, rho_inv: usize, shape: ShapeFunction) -> Result<BaseMatrix> {
    if l == 0 || l0 == 0 || rho_inv == 0 {
        return Err(Error::Dimension(format!(
            "L, L0 and rho_inv must be at least 1, got ({l}, {l0}, {rho_inv})"
        )));
    }
    let overflow = || Error::Dimension(format!("base matrix for L={l}, L0={l0}, rho_inv={rho_inv} is too large"));
    let seed_cols = rho_inv.checked_mul(2).ok_or_else(overflow)?;
    let cols = l.checked_add(seed_cols).ok_or_else(overflow)?;
    let rows = seed_cols
        .checked_mul(l0)
        .and_then(|s| s.checked_add(cols))
        .ok_or_else(overflow)?;
    let cells = rows.checked_mul(cols).filter(|&c| c <= 1 << 31).ok_or_else(overflow)?;
    let g = Geometry { l, l0, rho_inv, shape };
    let mut w = vec![0.0; cells];
    for k in 0..seed_cols {
        for copy in 0..l0 {
            w[(k * l0 + copy) * cols + k] = 1.0;
        }
    }
    let rho = 1.0 / rho_inv as f64;
    let r = rho_inv as i64;
    for a in -r..=(l as i64 - 1 + r) {
        let row = g.band_row_index(a);
        for i in (a - r).max(-2 * r)..=(a + r).min(l as i64 - 1) {
            w[row * cols + g.col_index(i)] = rho * shape.eval((a - i) as f64 / rho_inv as f64);
        }
    }
    Ok(BaseMatrix {
        rows,
        cols,
        w,
        geometry: Some(g),
    })
}

impl BaseMatrix {
    /// A base matrix given entry by entry, without coupling geometry.
    pub fn from_dense(rows: usize, cols: usize, w: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || w.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries do not form a nonempty {rows} x {cols} matrix",
                w.len()
            )));
        }
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain {
                what: "base matrix entry",
                expected: "finite and nonnegative",
                value: *bad,
            });
        }
        Ok(BaseMatrix {
            rows,
            cols,
            w,
            geometry: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn geometry(&self) -> Option<&Geometry> {
        self.geometry.as_ref()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.w[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.w[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.get(r, c)).sum()
    }

    pub fn row_label(&self, r: usize) -> RowLabel {
        match &self.geometry {
            Some(g) if r < g.n_seed_rows() => RowLabel::Seed {
                col: g.col_label(r / g.l0),
                copy: r % g.l0,
            },
            Some(g) => RowLabel::Band {
                a: (r - g.n_seed_rows()) as i64 - g.rho_inv as i64,
            },
            None => RowLabel::Plain(r),
        }
    }

    /// Rows that the roughly-row-stochastic requirement `1/2 ≤ Σ_c W ≤ 2`
    /// applies to: the seed rows and band rows `a ≤ L-1`. The last `ρ⁻¹`
    /// band rows overhang the final column and lose mass by construction.
    pub fn row_sum_checked_rows(&self) -> Range<usize> {
        match &self.geometry {
            Some(g) => 0..g.band_row_index(g.l as i64 - 1) + 1,
            None => 0..self.rows,
        }
    }

    /// Row indices in the checked range whose sum lies outside `[1/2, 2]`.
    pub fn row_sum_violations(&self) -> Vec<usize> {
        self.row_sum_checked_rows()
            .filter(|&r| !(0.5..=2.0).contains(&self.row_sum(r)))
            .collect()
    }

    /// `max_i |Σ_{a∈R_0} W_{a,i} - 1|` over the interior columns
    /// `i ∈ {0, …, L-1}`, whose band is not truncated. Without geometry every
    /// row counts as `R_0` and every column as interior.
    pub fn restricted_column_stochasticity(&self) -> f64 {
        let (rows, cols) = match &self.geometry {
            Some(g) => (g.band_rows(), g.interior_cols()),
            None => (0..self.rows, 0..self.cols),
        };
        cols.map(|c| (rows.clone().map(|r| self.get(r, c)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the matrix as CSV: one row per row group, labelled.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string(), "group".to_string()];
        header.extend((0..self.cols).map(|c| match &self.geometry {
            Some(g) => format!("c{}", g.col_label(c)),
            None => format!("c{c}"),
        }));
        wtr.write_record(&header)?;
        for r in 0..self.rows {
            let group = match self.row_label(r) {
                RowLabel::Seed { col, .. } => format!("R{col}"),
                RowLabel::Band { a } => format!("R0:{a}"),
                RowLabel::Plain(i) => format!("{i}"),
            };
            let mut rec = vec![r.to_string(), group];
            rec.extend(self.row(r).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BlockRef {
    col_group: usize,
    offset: usize,
}

/// A sampled matrix `A ~ M(W, M, N)`, optionally with the identity rows of
/// the robust scheme appended.
///
/// Only blocks with `W_{r,c} > 0` are stored. Rows and columns are handled
/// in natural order by the public methods; internally each group's members
/// are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    base: BaseMatrix,
    m: usize,
    n: usize,
    seed: u64,
    contiguous: bool,
    // row_perm[r*M + p] is the natural index of the p-th row of group r.
    row_perm: Vec<usize>,
    row_pos: Vec<usize>,
    col_perm: Vec<usize>,
    col_pos: Vec<usize>,
    blocks: Vec<Vec<BlockRef>>,
    data: Vec<f64>,
    // Natural column index observed by each appended identity row.
    augmented: Option<Vec<usize>>,
}

/// Samples `A` with `M = round(N·δ)` rows per group.
pub fn sample_sensing_matrix(
    base: &BaseMatrix,
    n: usize,
    delta: f64,
    seed: u64,
    contiguous_partition: bool,
) -> Result<SensingMatrix> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain {
            what: "undersampling rate delta",
            expected: "positive and finite",
            value: delta,
        });
    }
    let m = (n as f64 * delta).round() as usize;
    SensingMatrix::sample(base, m, n, seed, contiguous_partition)
}

/// Dot product with independent partial sums, which lets the compiler
/// vectorize the loop.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; perm.len()];
    for (k, &i) in perm.iter().enumerate() {
        pos[i] = k;
    }
    pos
}

const MAGIC: &[u8; 8] = b"SCAMPMAT";
const FORMAT_VERSION: u32 = 1;

impl SensingMatrix {
    /// Samples with explicit group sizes `M` and `N`.
    pub fn sample(base: &BaseMatrix, m: usize, n: usize, seed: u64, contiguous_partition: bool) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Dimension(format!("group sizes must be positive, got M={m}, N={n}")));
        }
        let rows = m
            .checked_mul(base.n_rows())
            .ok_or_else(|| Error::Dimension("row count overflows".into()))?;
        let cols = n
            .checked_mul(base.n_cols())
            .ok_or_else(|| Error::Dimension("column count overflows".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut row_perm: Vec<usize> = (0..rows).collect();
        let mut col_perm: Vec<usize> = (0..cols).collect();
        if !contiguous_partition {
            row_perm.shuffle(&mut rng);
            col_perm.shuffle(&mut rng);
        }
        let mut blocks = Vec::with_capacity(base.n_rows());
        let mut data = Vec::new();
        for r in 0..base.n_rows() {
            let mut refs = Vec::new();
            for c in 0..base.n_cols() {
                let w = base.get(r, c);
                if w == 0.0 {
                    continue;
                }
                let sd = (w / m as f64).sqrt();
                refs.push(BlockRef {
                    col_group: c,
                    offset: data.len(),
                });
                data.extend((0..m * n).map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                }));
            }
            blocks.push(refs);
        }
        Ok(SensingMatrix {
            base: base.clone(),
            m,
            n,
            seed,
            contiguous: contiguous_partition,
            row_pos: invert(&row_perm),
            row_perm,
            col_pos: invert(&col_perm),
            col_perm,
            blocks,
            data,
            augmented: None,
        })
    }

    pub fn base(&self) -> &BaseMatrix {
        &self.base
    }

    /// Rows per row group, `M`.
    pub fn m_per_group(&self) -> usize {
        self.m
    }

    /// Columns per column group, `N`.
    pub fn n_per_group(&self) -> usize {
        self.n
    }

    /// Realized `δ = M/N`.
    pub fn delta(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_contiguous(&self) -> bool {
        self.contiguous
    }

    /// Rows of the coupled part `A`, `M·L_r`.
    pub fn n_main_rows(&self) -> usize {
        self.m * self.base.n_rows()
    }

    /// All rows, including appended identity rows.
    pub fn n_rows(&self) -> usize {
        self.n_main_rows() + self.augmented.as_ref().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.n * self.base.n_cols()
    }

    /// Overall `m/n`.
    pub fn undersampling_ratio(&self) -> f64 {
        self.n_rows() as f64 / self.n_cols() as f64
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented.is_some()
    }

    /// Column observed by each appended identity row, in row order.
    pub fn augmented_columns(&self) -> Option<&[usize]> {
        self.augmented.as_deref()
    }

    /// Row group `g(i)` of a row of the coupled part.
    pub fn row_group(&self, i: usize) -> usize {
        self.row_pos[i] / self.m
    }

    pub fn col_group(&self, j: usize) -> usize {
        self.col_pos[j] / self.n
    }

    /// Natural indices of the rows in group `r`.
    pub fn row_members(&self, r: usize) -> &[usize] {
        &self.row_perm[r * self.m..(r + 1) * self.m]
    }

    pub fn col_members(&self, c: usize) -> &[usize] {
        &self.col_perm[c * self.n..(c + 1) * self.n]
    }

    /// The `M × N` block of group pair `(r, c)`, row-major in member order;
    /// `None` when `W_{r,c} = 0`.
    pub fn block(&self, r: usize, c: usize) -> Option<&[f64]> {
        self.blocks[r]
            .iter()
            .find(|b| b.col_group == c)
            .map(|b| &self.data[b.offset..b.offset + self.m * self.n])
    }

    /// Entry `A_ij`, including appended rows.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i >= self.n_main_rows() {
            let cols = self.augmented.as_ref().expect("row index in range");
            return if cols[i - self.n_main_rows()] == j { 1.0 } else { 0.0 };
        }
        let (gi, gj) = (self.row_pos[i], self.col_pos[j]);
        match self.block(gi / self.m, gj / self.n) {
            Some(b) => b[(gi % self.m) * self.n + gj % self.n],
            None => 0.0,
        }
    }

    fn gather_cols(&self, x: &[f64]) -> Vec<f64> {
        self.col_perm.iter().map(|&j| x[j]).collect()
    }

    /// `A x` over the coupled rows only.
    pub fn mul_main(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len("x", x.len(), self.n_cols())?;
        let xg = self.gather_cols(x);
        let mut y = vec![0.0; self.n_main_rows()];
        for (r, refs) in self.blocks.iter().enumerate() {
            let mut acc = vec![0.0; self.m];
            for b in refs {
                let xs = &xg[b.col_group * self.n..(b.col_group + 1) * self.n];
                let block = &self.data[b.offset..b.offset + self.m * self.n];
                for (p, row) in block.chunks_exact(self.n).enumerate() {
                    acc[p] += dot(row, xs);
                }
            }
            for (p, v) in acc.into_iter().enumerate() {
                y[self.row_perm[r * self.m + p]] = v;
            }
        }
        Ok(y)
    }

    /// `A x` over all rows; appended rows read off their column.
    pub fn mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.mul_main(x)?;
        if let Some(cols) = &self.augmented {
            y.extend(cols.iter().map(|&j| x[j]));
        }
        Ok(y)
    }

    /// `(Q ⊙ A)ᵀ v` over the coupled rows, with `Q` constant on each block
    /// and given by `scale(r, c)`. `scale ≡ 1` is the plain transpose.
    pub fn tmul_scaled(&self, v: &[f64], scale: impl Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
        self.check_len("v", v.len(), self.n_main_rows())?;
        let mut xg = vec![0.0; self.n_cols()];
        for (r, refs) in self.blocks.iter().enumerate() {
            let vs: Vec<f64> = self.row_members(r).iter().map(|&i| v[i]).collect();
            for b in refs {
                let s = scale(r, b.col_group);
                if s == 0.0 {
                    continue;
                }
                let out = &mut xg[b.col_group * self.n..(b.col_group + 1) * self.n];
                let block = &self.data[b.offset..b.offset + self.m * self.n];
                for (row, &vp) in block.chunks_exact(self.n).zip(&vs) {
                    let coef = s * vp;
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += coef * a;
                    }
                }
            }
        }
        let mut x = vec![0.0; self.n_cols()];
        for (k, val) in xg.into_iter().enumerate() {
            x[self.col_perm[k]] = val;
        }
        Ok(x)
    }

    pub fn tmul(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.tmul_scaled(v, |_, _| 1.0)
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Dimension(format!("{what} has length {got}, expected {want}")));
        }
        Ok(())
    }

    /// Appends `[0 | I]` rows observing every coordinate of the last `2ρ⁻¹`
    /// column groups directly.
    pub fn augment_identity(mut self) -> Result<Self> {
        if self.augmented.is_some() {
            return Err(Error::AlreadyAugmented);
        }
        let g = *self
            .base
            .geometry()
            .ok_or_else(|| Error::Precondition("augmentation needs a coupled base matrix".into()))?;
        let last = g.n_cols();
        let first = last.saturating_sub(g.seed_cols());
        let cols = (first..last)
            .flat_map(|c| self.col_members(c).to_vec())
            .collect();
        self.augmented = Some(cols);
        Ok(self)
    }

    /// Serialises to the binary container: a little-endian header carrying
    /// the dimensions, seed, base matrix and group maps, followed by the full
    /// matrix as row-major `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        for v in [
            self.n_rows(),
            self.n_cols(),
            self.m,
            self.n,
            self.base.n_rows(),
            self.base.n_cols(),
        ] {
            out.write_u64::<LittleEndian>(v as u64)?;
        }
        match self.base.geometry() {
            Some(g) => {
                out.write_u8(1)?;
                for v in [g.l, g.l0, g.rho_inv] {
                    out.write_u64::<LittleEndian>(v as u64)?;
                }
                out.write_u8(match g.shape {
                    ShapeFunction::RaisedCosine => 0,
                    ShapeFunction::QuarticBump => 1,
                })?;
            }
            None => out.write_u8(0)?,
        }
        out.write_u64::<LittleEndian>(self.seed)?;
        out.write_u8(self.contiguous as u8)?;
        out.write_u8(self.is_augmented() as u8)?;
        for &i in self.row_perm.iter().chain(&self.col_perm) {
            out.write_u64::<LittleEndian>(i as u64)?;
        }
        if let Some(cols) = &self.augmented {
            for &j in cols {
                out.write_u64::<LittleEndian>(j as u64)?;
            }
        }
        for &w in self.base.as_slice() {
            out.write_f64::<LittleEndian>(w)?;
        }
        let mut row = vec![0.0; self.n_cols()];
        for i in 0..self.n_rows() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.entry(i, j);
            }
            for &v in &row {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let read_usize = |input: &mut R| -> Result<usize> {
            usize::try_from(input.read_u64::<LittleEndian>()?).map_err(|_| Error::Format("size out of range".into()))
        };
        let rows = read_usize(&mut input)?;
        let cols = read_usize(&mut input)?;
        let m = read_usize(&mut input)?;
        let n = read_usize(&mut input)?;
        let lr = read_usize(&mut input)?;
        let lc = read_usize(&mut input)?;
        let geometry = match input.read_u8()? {
            0 => None,
            1 => {
                let l = read_usize(&mut input)?;
                let l0 = read_usize(&mut input)?;
                let rho_inv = read_usize(&mut input)?;
                let shape = match input.read_u8()? {
                    0 => ShapeFunction::RaisedCosine,
                    1 => ShapeFunction::QuarticBump,
                    s => return Err(Error::Format(format!("unknown shape tag {s}"))),
                };
                Some(Geometry { l, l0, rho_inv, shape })
            }
            f => return Err(Error::Format(format!("bad geometry flag {f}"))),
        };
        let seed = input.read_u64::<LittleEndian>()?;
        let contiguous = input.read_u8()? == 1;
        let augmented = input.read_u8()? == 1;
        let main_rows = m
            .checked_mul(lr)
            .ok_or_else(|| Error::Format("row count overflows".into()))?;
        if cols != n * lc || rows < main_rows || (!augmented && rows != main_rows) {
            return Err(Error::Format("inconsistent dimensions".into()));
        }
        let mut read_perm = |len: usize| -> Result<Vec<usize>> {
            let mut p = Vec::with_capacity(len);
            for _ in 0..len {
                let v = read_usize(&mut input)?;
                if v >= len.max(cols) {
                    return Err(Error::Format("group map entry out of range".into()));
                }
                p.push(v);
            }
            Ok(p)
        };
        let row_perm = read_perm(main_rows)?;
        let col_perm = read_perm(cols)?;
        let aug_cols = if augmented { Some(read_perm(rows - main_rows)?) } else { None };
        let mut w = vec![0.0; lr * lc];
        for v in w.iter_mut() {
            *v = input.read_f64::<LittleEndian>()?;
        }
        let mut base = BaseMatrix::from_dense(lr, lc, w)?;
        if let Some(g) = geometry {
            if g.n_rows() != lr || g.n_cols() != lc {
                return Err(Error::Format("geometry does not match base dimensions".into()));
            }
            base.geometry = Some(g);
        }
        let mut dense = vec![0.0; main_rows * cols];
        for v in dense.iter_mut() {
            *v = input.read_f64::<LittleEndian>()?;
        }
        // Identity rows are implied by aug_cols; skip their payload.
        let mut skip = vec![0u8; (rows - main_rows) * cols * 8];
        input.read_exact(&mut skip)?;

        let mut blocks = Vec::with_capacity(lr);
        let mut data = Vec::new();
        for r in 0..lr {
            let mut refs = Vec::new();
            for c in 0..lc {
                let rmem = &row_perm[r * m..(r + 1) * m];
                let cmem = &col_perm[c * n..(c + 1) * n];
                let values = rmem.iter().flat_map(|&i| cmem.iter().map(move |&j| (i, j)));
                if base.get(r, c) == 0.0 {
                    if values.into_iter().any(|(i, j)| dense[i * cols + j] != 0.0) {
                        return Err(Error::Format(format!("block ({r}, {c}) should be zero")));
                    }
                    continue;
                }
                refs.push(BlockRef {
                    col_group: c,
                    offset: data.len(),
                });
                data.extend(values.map(|(i, j)| dense[i * cols + j]));
            }
            blocks.push(refs);
        }
        Ok(SensingMatrix {
            base,
            m,
            n,
            seed,
            contiguous,
            row_pos: invert(&row_perm),
            row_perm,
            col_pos: invert(&col_perm),
            col_perm,
            blocks,
            data,
            augmented: aug_cols,
        })
    }
}
