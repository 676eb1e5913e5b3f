//! Rank-R CP (canonical polyadic) representation of the `2 × N × M` Gaussian
//! tensor.
//!
//! The tensor is never stored during training. Only the three factor
//! matrices are learned:
//!
//! * `medium` (U¹, `2 × R`): one row per slice (object, medium),
//! * `number` (U², `N × R`): one row per Gaussian primitive,
//! * `template` (U³, `M × R`): one row per raw Gaussian attribute.
//!
//! Slices and opacity rows are evaluated factor-side so that memory stays at
//! `(M + N + 2) · R`.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

thread_local! {
    static RECONSTRUCT_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`cp_reconstruct`] calls made on the current thread.
///
/// Densification is required to work without materializing the dense tensor;
/// tests read this counter around structural edits.
pub fn reconstruct_calls() -> usize {
    RECONSTRUCT_CALLS.with(Cell::get)
}

/// Dense third-order tensor in row-major (`i`, `j`, `k`) order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    shape: (usize, usize, usize),
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn new(shape: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (d1, d2, d3) = shape;
        if data.len() != d1 * d2 * d3 {
            return Err(Error::invalid(format!(
                "tensor data has {} values, shape {:?} needs {}",
                data.len(),
                shape,
                d1 * d2 * d3
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        Self { shape, data: vec![0.0; shape.0 * shape.1 * shape.2] }
    }

    /// Stack matrices (each `d2 × d3`) along the first mode.
    pub fn from_slices(slices: &[DMatrix<f64>]) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(Error::invalid("no slices"));
        };
        let (d2, d3) = first.shape();
        let mut data = Vec::with_capacity(slices.len() * d2 * d3);
        for s in slices {
            if s.shape() != (d2, d3) {
                return Err(Error::invalid("slice shapes differ"));
            }
            for j in 0..d2 {
                for k in 0..d3 {
                    data.push(s[(j, k)]);
                }
            }
        }
        Self::new((slices.len(), d2, d3), data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, d2, d3) = self.shape;
        self.data[(i * d2 + j) * d3 + k]
    }

    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        let (_, d2, d3) = self.shape;
        DMatrix::from_fn(d2, d3, |j, k| self.get(i, j, k))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F`; shapes must agree.
    pub fn distance(&self, other: &DenseTensor3) -> f64 {
        assert_eq!(self.shape, other.shape, "tensor shapes differ");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// Relative Frobenius error `‖self − other‖ / ‖self‖` (absolute when `self` is zero).
    pub fn relative_error(&self, approx: &DenseTensor3) -> f64 {
        let norm = self.frobenius_norm();
        let diff = self.distance(approx);
        if norm > 0.0 {
            diff / norm
        } else {
            diff
        }
    }
}

/// The three CP factor matrices sharing `rank` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    medium: DMatrix<f64>,
    number: DMatrix<f64>,
    template: DMatrix<f64>,
}

impl CpFactors {
    pub fn new(medium: DMatrix<f64>, number: DMatrix<f64>, template: DMatrix<f64>) -> Result<Self> {
        let rank = medium.ncols();
        if rank == 0 {
            return Err(Error::invalid("CP rank must be positive"));
        }
        if number.ncols() != rank || template.ncols() != rank {
            return Err(Error::invalid(format!(
                "factor column counts differ: {}, {}, {}",
                rank,
                number.ncols(),
                template.ncols()
            )));
        }
        if medium.nrows() == 0 || number.nrows() == 0 || template.nrows() == 0 {
            return Err(Error::invalid("factor matrices must have at least one row"));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !(finite(&medium) && finite(&number) && finite(&template)) {
            return Err(Error::invalid("factor matrices contain non-finite values"));
        }
        Ok(Self { medium, number, template })
    }

    pub fn rank(&self) -> usize {
        self.medium.ncols()
    }

    /// Number of mode-1 slices (2 for a trained model).
    pub fn slices(&self) -> usize {
        self.medium.nrows()
    }

    /// Number of Gaussians N.
    pub fn num_gaussians(&self) -> usize {
        self.number.nrows()
    }

    /// Attributes per Gaussian M.
    pub fn num_attributes(&self) -> usize {
        self.template.nrows()
    }

    pub fn medium(&self) -> &DMatrix<f64> {
        &self.medium
    }

    pub fn number(&self) -> &DMatrix<f64> {
        &self.number
    }

    pub fn template(&self) -> &DMatrix<f64> {
        &self.template
    }

    pub fn medium_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.medium
    }

    pub fn number_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.number
    }

    pub fn template_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.template
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.medium, self.number, self.template)
    }

    /// Learnable parameter count `(rows(U¹) + N + M) · R`.
    pub fn parameter_count(&self) -> usize {
        (self.medium.nrows() + self.number.nrows() + self.template.nrows()) * self.rank()
    }

    pub fn is_finite(&self) -> bool {
        self.medium.iter().chain(self.number.iter()).chain(self.template.iter()).all(|v| v.is_finite())
    }
}

/// Entry-wise expansion `Σ_r U¹[i,r] U²[j,r] U³[k,r]`.
///
/// Increments the per-thread [`reconstruct_calls`] counter.
pub fn cp_reconstruct(factors: &CpFactors) -> DenseTensor3 {
    RECONSTRUCT_CALLS.with(|c| c.set(c.get() + 1));
    reconstruct_uncounted(factors.medium(), factors.number(), factors.template())
}

fn reconstruct_uncounted(u1: &DMatrix<f64>, u2: &DMatrix<f64>, u3: &DMatrix<f64>) -> DenseTensor3 {
    let (d1, d2, d3) = (u1.nrows(), u2.nrows(), u3.nrows());
    let mut data = Vec::with_capacity(d1 * d2 * d3);
    for i in 0..d1 {
        let slice = slice_product(u1, i, u2, u3);
        for j in 0..d2 {
            for k in 0..d3 {
                data.push(slice[(j, k)]);
            }
        }
    }
    DenseTensor3 { shape: (d1, d2, d3), data }
}

/// `U² · diag(U¹[row, :]) · U³ᵀ`.
fn slice_product(u1: &DMatrix<f64>, row: usize, u2: &DMatrix<f64>, u3: &DMatrix<f64>) -> DMatrix<f64> {
    let weights = u1.row(row).transpose();
    let mut scaled = u2.clone();
    for (r, mut col) in scaled.column_iter_mut().enumerate() {
        col *= weights[r];
    }
    scaled * u3.transpose()
}

/// Mode-1 slice `index` as an `N × M` matrix, computed from the factors.
pub fn mode1_slice(factors: &CpFactors, index: usize) -> Result<DMatrix<f64>> {
    if index >= factors.slices() {
        return Err(Error::invalid(format!(
            "slice index {index} out of range for {} slices",
            factors.slices()
        )));
    }
    Ok(slice_product(factors.medium(), index, factors.number(), factors.template()))
}

/// Raw (pre-sigmoid) value of template row `attribute` for every Gaussian of
/// slice `medium_index`: `U²[i,:] · (U³[attribute,:] ⊙ U¹[medium_index,:])ᵀ`.
pub fn attribute_vector(factors: &CpFactors, medium_index: usize, attribute: usize) -> Result<DVector<f64>> {
    if medium_index >= factors.slices() {
        return Err(Error::invalid(format!("slice index {medium_index} out of range")));
    }
    if attribute >= factors.num_attributes() {
        return Err(Error::invalid(format!("attribute row {attribute} out of range")));
    }
    let rank = factors.rank();
    let weights = DVector::from_fn(rank, |r, _| {
        factors.template()[(attribute, r)] * factors.medium()[(medium_index, r)]
    });
    Ok(factors.number() * weights)
}

/// Raw opacity of every Gaussian in slice `medium_index`.
pub fn opacity_vector(factors: &CpFactors, medium_index: usize) -> Result<DVector<f64>> {
    attribute_vector(factors, medium_index, crate::gaussian::OPACITY)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionStats {
    pub dense_params: u64,
    pub compressed_params: u64,
    pub reduction_fraction: f64,
}

/// Parameter counts of the dense `N × M` representation versus the factored one.
pub fn compression_stats(n: u64, m: u64, rank: u64) -> CompressionStats {
    let dense = m * n;
    let compressed = (m + n + 2) * rank;
    let reduction = if compressed < dense { 1.0 - compressed as f64 / dense as f64 } else { 0.0 };
    CompressionStats { dense_params: dense, compressed_params: compressed, reduction_fraction: reduction }
}

/// Alternating-least-squares settings.
#[derive(Debug, Clone, Copy)]
pub struct AlsOptions {
    pub max_iters: usize,
    /// Stop when the relative error improves by less than this.
    pub tol: f64,
    /// Relative ridge added to a normal-equation matrix that is numerically singular.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-9, ridge: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct AlsReport {
    pub iterations: usize,
    /// Relative Frobenius error after each sweep.
    pub errors: Vec<f64>,
}

impl AlsReport {
    pub fn final_error(&self) -> f64 {
        self.errors.last().copied().unwrap_or(f64::NAN)
    }
}

/// CP decomposition with default ridge and seed.
pub fn cp_decompose(tensor: &DenseTensor3, rank: usize, max_iters: usize, tol: f64) -> Result<CpFactors> {
    let opts = AlsOptions { max_iters, tol, ..AlsOptions::default() };
    cp_decompose_with(tensor, rank, &opts).map(|(f, _)| f)
}

pub fn cp_decompose_with(tensor: &DenseTensor3, rank: usize, opts: &AlsOptions) -> Result<(CpFactors, AlsReport)> {
    if rank == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    if tensor.is_empty() {
        return Err(Error::invalid("cannot decompose an empty tensor"));
    }
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("tensor contains non-finite values"));
    }
    let (d1, d2, d3) = tensor.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut uniform = |rows: usize| DMatrix::from_fn(rows, rank, |_, _| rng.gen_range(-1.0..=1.0));
    let mut u1 = uniform(d1);
    let mut u2 = uniform(d2);
    let mut u3 = uniform(d3);
    if let Some((a, b)) = gevd_init(tensor, rank, &mut rng) {
        (u2, u3) = (a, b);
    }

    let norm = tensor.frobenius_norm();
    let rel_error = |a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>| {
        let diff = tensor.distance(&reconstruct_uncounted(a, b, c));
        if norm > 0.0 {
            diff / norm
        } else {
            diff
        }
    };
    let mut report = AlsReport { iterations: 0, errors: Vec::new() };
    let mut prev = f64::INFINITY;
    let mut last: Option<[DMatrix<f64>; 3]> = None;
    for it in 0..opts.max_iters.max(1) {
        let (m1, _) = mttkrp_12(tensor, &u2, &u3, true);
        u1 = solve_normal(&m1, &hadamard(&gram(&u2), &gram(&u3)), opts.ridge);
        let (_, m2) = mttkrp_12(tensor, &u1, &u3, false);
        u2 = solve_normal(&m2, &hadamard(&gram(&u1), &gram(&u3)), opts.ridge);
        let m3 = mttkrp_3(tensor, &u1, &u2);
        u3 = solve_normal(&m3, &hadamard(&gram(&u1), &gram(&u2)), opts.ridge);
        balance_columns(&mut u1, &mut u2, &mut u3);
        let mut err = rel_error(&u1, &u2, &u3);

        // Extrapolate along the last sweep's direction; kept only when it helps.
        if let Some([p1, p2, p3]) = &last {
            let step = ((it + 1) as f64).cbrt();
            let e1 = p1 + (&u1 - p1) * step;
            let e2 = p2 + (&u2 - p2) * step;
            let e3 = p3 + (&u3 - p3) * step;
            let e_err = rel_error(&e1, &e2, &e3);
            if e_err < err {
                (u1, u2, u3, err) = (e1, e2, e3, e_err);
                balance_columns(&mut u1, &mut u2, &mut u3);
            }
        }
        last = Some([u1.clone(), u2.clone(), u3.clone()]);

        report.iterations += 1;
        report.errors.push(err);
        if err == 0.0 || (prev - err).abs() < opts.tol {
            break;
        }
        prev = err;
    }
    balance_columns(&mut u1, &mut u2, &mut u3);
    Ok((CpFactors::new(u1, u2, u3)?, report))
}

/// Dominant `count` eigenvectors of the Gram matrix of the mode-`mode`
/// unfolding (`mode` 1 or 2), as columns.
fn leading_vectors(tensor: &DenseTensor3, mode: usize, count: usize) -> DMatrix<f64> {
    let (d1, d2, d3) = tensor.shape();
    let dim = if mode == 1 { d2 } else { d3 };
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..d1 {
        let s = tensor.slice(i);
        g += if mode == 1 { &s * s.transpose() } else { s.transpose() * &s };
    }
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(dim, count, |row, r| eig.eigenvectors[(row, order[r])])
}

/// Starting point for `U²` and `U³` from a generalized eigendecomposition of
/// two random combinations of the mode-1 slices, compressed to the dominant
/// subspaces. Exact for tensors of CP rank `rank` with generic factors.
/// `None` when it does not apply (one slice, rank above the slice size) or
/// the pencil has complex or repeated eigenvalues.
fn gevd_init(tensor: &DenseTensor3, rank: usize, rng: &mut ChaCha8Rng) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let (d1, d2, d3) = tensor.shape();
    if d1 < 2 || rank > d2.min(d3) {
        return None;
    }
    let u = leading_vectors(tensor, 1, rank);
    let v = leading_vectors(tensor, 2, rank);
    let mut p = DMatrix::<f64>::zeros(rank, rank);
    let mut q = DMatrix::<f64>::zeros(rank, rank);
    for i in 0..d1 {
        let core = u.transpose() * tensor.slice(i) * &v;
        p += &core * rng.gen_range(-1.0..=1.0);
        q += &core * rng.gen_range(-1.0..=1.0);
    }
    let p_inv = p.clone().try_inverse()?;
    let m = &q * &p_inv;
    let lambdas = m.clone().schur().eigenvalues()?;
    let mut sorted: Vec<f64> = lambdas.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let span = sorted.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    if sorted.windows(2).any(|w| w[1] - w[0] < 1e-10 * span) {
        return None;
    }
    // Eigenvectors by shifted inverse iteration.
    let mut a_core = DMatrix::<f64>::zeros(rank, rank);
    for (r, &lambda) in lambdas.iter().enumerate() {
        let shift = lambda + 1e-10 * span;
        let lu = (&m - DMatrix::identity(rank, rank) * shift).lu();
        let mut x = DVector::from_fn(rank, |i, _| 1.0 + (i as f64) * 0.1);
        for _ in 0..3 {
            x = lu.solve(&x)?;
            let n = x.norm();
            if !(n.is_finite() && n > 0.0) {
                return None;
            }
            x /= n;
        }
        a_core.set_column(r, &x);
    }
    let a_inv = a_core.clone().try_inverse()?;
    let b_core = (a_inv * p).transpose();
    let a = u * a_core;
    let b = v * b_core;
    (a.iter().chain(b.iter()).all(|x| x.is_finite())).then_some((a, b))
}

/// Matricized-tensor times Khatri–Rao product for modes 1 and 2.
///
/// With `mode1 == true` returns `(X₍₁₎ (b ⊙ c), _)` where `b = U²`, `c = U³`;
/// otherwise `(_, X₍₂₎ (a ⊙ c))` with `a = U¹` passed as `b`.
fn mttkrp_12(tensor: &DenseTensor3, b: &DMatrix<f64>, c: &DMatrix<f64>, mode1: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d1, d2, d3) = tensor.shape();
    let rank = b.ncols();
    let mut out1 = DMatrix::zeros(if mode1 { d1 } else { 0 }, rank);
    let mut out2 = DMatrix::zeros(if mode1 { 0 } else { d2 }, rank);
    let mut t = vec![0.0; rank];
    for i in 0..d1 {
        for j in 0..d2 {
            t.iter_mut().for_each(|v| *v = 0.0);
            let row = &tensor.data[(i * d2 + j) * d3..(i * d2 + j + 1) * d3];
            for (k, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    for (r, tr) in t.iter_mut().enumerate() {
                        *tr += x * c[(k, r)];
                    }
                }
            }
            if mode1 {
                for r in 0..rank {
                    out1[(i, r)] += b[(j, r)] * t[r];
                }
            } else {
                for r in 0..rank {
                    out2[(j, r)] += b[(i, r)] * t[r];
                }
            }
        }
    }
    (out1, out2)
}

fn mttkrp_3(tensor: &DenseTensor3, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (d1, d2, d3) = tensor.shape();
    let rank = a.ncols();
    let mut out = DMatrix::zeros(d3, rank);
    let mut w = vec![0.0; rank];
    for i in 0..d1 {
        for j in 0..d2 {
            for (r, wr) in w.iter_mut().enumerate() {
                *wr = a[(i, r)] * b[(j, r)];
            }
            let row = &tensor.data[(i * d2 + j) * d3..(i * d2 + j + 1) * d3];
            for (k, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    for r in 0..rank {
                        out[(k, r)] += x * w[r];
                    }
                }
            }
        }
    }
    out
}

fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.transpose() * m
}

fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.component_mul(b)
}

/// Solve `U · H = M` for `U` with `H` symmetric PSD. The ridge is only applied
/// (and grown) when `H` is numerically singular.
fn solve_normal(m: &DMatrix<f64>, h: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let rank = h.nrows();
    let scale = (0..rank).map(|r| h[(r, r)]).fold(0.0, f64::max);
    let mut lambda = 0.0;
    loop {
        let mut reg = h.clone();
        for r in 0..rank {
            reg[(r, r)] += lambda;
        }
        if let Some(chol) = reg.cholesky() {
            let l = chol.l_dirty();
            let min_pivot = (0..rank).map(|r| l[(r, r)] * l[(r, r)]).fold(f64::INFINITY, f64::min);
            if min_pivot > 1e-13 * scale {
                return chol.solve(&m.transpose()).transpose();
            }
        }
        lambda = if lambda == 0.0 { ridge.max(f64::MIN_POSITIVE) * scale.max(1.0) } else { lambda * 10.0 };
        if !lambda.is_finite() {
            return DMatrix::zeros(m.nrows(), m.ncols());
        }
    }
}

/// Rescale each rank-1 term so its three column norms are equal.
fn balance_columns(u1: &mut DMatrix<f64>, u2: &mut DMatrix<f64>, u3: &mut DMatrix<f64>) {
    for r in 0..u1.ncols() {
        let n1 = u1.column(r).norm();
        let n2 = u2.column(r).norm();
        let n3 = u3.column(r).norm();
        if n1 == 0.0 || n2 == 0.0 || n3 == 0.0 {
            continue;
        }
        let target = (n1 * n2 * n3).cbrt();
        u1.column_mut(r).scale_mut(target / n1);
        u2.column_mut(r).scale_mut(target / n2);
        u3.column_mut(r).scale_mut(target / n3);
    }
}
