//! Clustered Bernoulli data, the joint parameter vector and the log-Cholesky
//! encoding of the random-effects covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// One cluster: binary responses with its fixed- and random-effect design rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T: Real> {
    y: Vec<u8>,
    x: DMatrix<T>,
    z: DMatrix<T>,
}

impl<T: Real> Cluster<T> {
    pub fn new(y: Vec<u8>, x: DMatrix<T>, z: DMatrix<T>) -> Result<Self> {
        if x.nrows() != y.len() || z.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "cluster has {} responses but X has {} rows and Z has {} rows",
                y.len(),
                x.nrows(),
                z.nrows()
            )));
        }
        if let Some(j) = y.iter().position(|&v| v > 1) {
            return Err(Error::Dataset(format!("response {} at row {j} is not 0 or 1", y[j])));
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Dataset("design matrices must be finite".into()));
        }
        Ok(Self { y, x, z })
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<T> {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub(crate) fn with_responses(&self, y: Vec<u8>) -> Self {
        debug_assert_eq!(y.len(), self.y.len());
        Self { y, x: self.x.clone(), z: self.z.clone() }
    }
}

/// Binary responses grouped into clusters sharing the fixed-effect width `p`
/// and random-effect width `q`.
///
/// The stacked fixed-effects design (row blocks `X_1 .. X_k`) is kept alongside
/// the clusters; it must have full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset<T: Real> {
    clusters: Vec<Cluster<T>>,
    labels: Vec<String>,
    fixed_names: Vec<String>,
    random_names: Vec<String>,
    p: usize,
    q: usize,
    stacked_x: DMatrix<T>,
}

/// Relative singular-value tolerance for the full-rank check on X.
pub const RANK_TOLERANCE: f64 = 1e-8;

impl<T: Real> ClusteredDataset<T> {
    pub fn new(clusters: Vec<Cluster<T>>) -> Result<Self> {
        let first = clusters
            .first()
            .ok_or_else(|| Error::Dataset("dataset has no clusters".into()))?;
        let p = first.x.ncols();
        let q = first.z.ncols();
        if p == 0 || q == 0 {
            return Err(Error::Dataset(format!("need p >= 1 and q >= 1, got p = {p}, q = {q}")));
        }
        for (i, c) in clusters.iter().enumerate() {
            if c.x.ncols() != p || c.z.ncols() != q {
                return Err(Error::Dimension(format!(
                    "cluster {i} has p = {}, q = {} but cluster 0 has p = {p}, q = {q}",
                    c.x.ncols(),
                    c.z.ncols()
                )));
            }
        }
        let stacked_x = stack_rows(clusters.iter().map(|c| &c.x), p);
        let n = stacked_x.nrows();
        if n < p {
            return Err(Error::Dataset(format!("n = {n} observations is fewer than p = {p}")));
        }
        let rank = numerical_rank(&stacked_x);
        if rank < p {
            return Err(Error::Dataset(format!(
                "fixed-effects design has rank {rank} < p = {p}"
            )));
        }
        let k = clusters.len();
        Ok(Self {
            clusters,
            labels: (0..k).map(|i| i.to_string()).collect(),
            fixed_names: (0..p).map(|j| format!("beta{j}")).collect(),
            random_names: (0..q).map(|j| format!("u{j}")).collect(),
            p,
            q,
            stacked_x,
        })
    }

    /// Attaches cluster labels and column names used for reporting.
    pub fn with_names(
        mut self,
        labels: Vec<String>,
        fixed_names: Vec<String>,
        random_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != self.clusters.len()
            || fixed_names.len() != self.p
            || random_names.len() != self.q
        {
            return Err(Error::Dimension("name list lengths do not match the dataset".into()));
        }
        self.labels = labels;
        self.fixed_names = fixed_names;
        self.random_names = random_names;
        Ok(self)
    }

    pub fn clusters(&self) -> &[Cluster<T>] {
        &self.clusters
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn fixed_names(&self) -> &[String] {
        &self.fixed_names
    }

    pub fn random_names(&self) -> &[String] {
        &self.random_names
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of clusters.
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    /// Total number of Bernoulli rows.
    pub fn n(&self) -> usize {
        self.stacked_x.nrows()
    }

    pub fn stacked_x(&self) -> &DMatrix<T> {
        &self.stacked_x
    }

    /// All responses in stacked order.
    pub fn stacked_y(&self) -> Vec<u8> {
        self.clusters.iter().flat_map(|c| c.y.iter().copied()).collect()
    }

    /// Same design, new responses (one vector per cluster).
    pub fn with_responses(&self, responses: Vec<Vec<u8>>) -> Result<Self> {
        if responses.len() != self.clusters.len()
            || responses.iter().zip(&self.clusters).any(|(r, c)| r.len() != c.len())
        {
            return Err(Error::Dimension("response shape does not match the design".into()));
        }
        if responses.iter().flatten().any(|&v| v > 1) {
            return Err(Error::Dataset("responses must be 0 or 1".into()));
        }
        let clusters = self
            .clusters
            .iter()
            .zip(responses)
            .map(|(c, y)| c.with_responses(y))
            .collect();
        Ok(Self { clusters, ..self.clone() })
    }

    /// Same responses and random-effects design, fixed-effects design replaced
    /// by `X · m` (applied cluster by cluster).
    pub fn with_fixed_design_map(&self, m: &DMatrix<T>, names: Vec<String>) -> Result<Self> {
        if m.nrows() != self.p || names.len() != m.ncols() {
            return Err(Error::Dimension("design map does not match p".into()));
        }
        let clusters = self
            .clusters
            .iter()
            .map(|c| Cluster::new(c.y.clone(), &c.x * m, c.z.clone()))
            .collect::<Result<Vec<_>>>()?;
        let labels = self.labels.clone();
        let random_names = self.random_names.clone();
        Self::new(clusters)?.with_names(labels, names, random_names)
    }
}

fn stack_rows<'a, T: Real>(blocks: impl Iterator<Item = &'a DMatrix<T>>, p: usize) -> DMatrix<T> {
    let rows: Vec<&DMatrix<T>> = blocks.collect();
    let n: usize = rows.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut r = 0;
    for b in rows {
        out.view_mut((r, 0), (b.nrows(), p)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Rank of `x` counting singular values above `RANK_TOLERANCE · σ_max`.
pub fn numerical_rank<T: Real>(x: &DMatrix<T>) -> usize {
    if x.is_empty() {
        return 0;
    }
    let sv = x.clone().singular_values();
    let smax = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if smax <= T::zero() {
        return 0;
    }
    let tol = smax * lit::<T>(RANK_TOLERANCE);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Length of the log-Cholesky vector for a `q × q` covariance.
pub const fn psi_len(q: usize) -> usize {
    q * (q + 1) / 2
}

/// Inverse of [`psi_len`], if `len` is a triangular number.
pub fn q_from_psi_len(len: usize) -> Option<usize> {
    (1..=len).find(|&q| psi_len(q) == len)
}

/// Joint parameter `θ = (β, ψ)`.
///
/// `ψ` stores all log-diagonal Cholesky entries first, followed by the
/// strictly-lower entries column by column: `(log l11, …, log lqq, l21, …,
/// lq1, l32, …, lq2, …, lq,q-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta<T: Real> {
    beta: DVector<T>,
    psi: DVector<T>,
    q: usize,
}

impl<T: Real> Theta<T> {
    pub fn new(beta: DVector<T>, psi: DVector<T>) -> Result<Self> {
        let q = q_from_psi_len(psi.len()).ok_or_else(|| {
            Error::Dimension(format!("psi length {} is not q(q+1)/2", psi.len()))
        })?;
        if beta.iter().chain(psi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("theta entries must be finite".into()));
        }
        Ok(Self { beta, psi, q })
    }

    /// Splits a flat `(β, ψ)` vector.
    pub fn from_slice(values: &[T], p: usize) -> Result<Self> {
        if values.len() < p + 1 {
            return Err(Error::Dimension(format!(
                "theta of length {} cannot hold p = {p} fixed effects and a covariance",
                values.len()
            )));
        }
        Self::new(
            DVector::from_column_slice(&values[..p]),
            DVector::from_column_slice(&values[p..]),
        )
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Self { beta: DVector::zeros(p), psi: DVector::zeros(psi_len(q)), q }
    }

    pub fn beta(&self) -> &DVector<T> {
        &self.beta
    }

    pub fn psi(&self) -> &DVector<T> {
        &self.psi
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// `d = p + q(q+1)/2`.
    pub fn dim(&self) -> usize {
        self.beta.len() + self.psi.len()
    }

    pub fn to_vector(&self) -> DVector<T> {
        DVector::from_iterator(self.dim(), self.beta.iter().chain(self.psi.iter()).copied())
    }

    pub fn lower_cholesky(&self) -> DMatrix<T> {
        lower_from_psi(self.psi.as_slice(), self.q)
    }

    pub fn sigma(&self) -> CovarianceMatrix<T> {
        let l = self.lower_cholesky();
        CovarianceMatrix { sigma: &l * l.transpose(), lower: l }
    }

    /// Names of the θ coordinates, `β` names first.
    pub fn parameter_names(&self, fixed_names: &[String]) -> Vec<String> {
        let mut names: Vec<String> = fixed_names.to_vec();
        names.extend(psi_names(self.q));
        names
    }
}

/// Reporting names for the ψ coordinates, e.g. `log l11`, `l21`.
pub fn psi_names(q: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=q).map(|i| format!("log l{i}{i}")).collect();
    for col in 1..=q {
        for row in col + 1..=q {
            names.push(format!("l{row}{col}"));
        }
    }
    names
}

pub(crate) fn lower_from_psi<T: Real>(psi: &[T], q: usize) -> DMatrix<T> {
    let mut l = DMatrix::zeros(q, q);
    for i in 0..q {
        l[(i, i)] = psi[i].exp();
    }
    let mut idx = q;
    for col in 0..q {
        for row in col + 1..q {
            l[(row, col)] = psi[idx];
            idx += 1;
        }
    }
    l
}

/// Symmetric positive-definite random-effects covariance `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix<T: Real> {
    sigma: DMatrix<T>,
    lower: DMatrix<T>,
}

impl<T: Real> CovarianceMatrix<T> {
    /// Validates symmetry, finiteness and positive definiteness.
    pub fn new(sigma: DMatrix<T>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::Dimension("covariance must be square".into()));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("covariance entries must be finite".into()));
        }
        let q = sigma.nrows();
        let scale = sigma.iter().fold(T::one(), |a, &b| a.max(b.abs()));
        for i in 0..q {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > lit::<T>(1e-12) * scale {
                    return Err(Error::Argument("covariance is not symmetric".into()));
                }
            }
        }
        let lower = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        Ok(Self { sigma, lower })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Lower Cholesky factor with positive diagonal.
    pub fn lower(&self) -> &DMatrix<T> {
        &self.lower
    }

    /// Implied correlation matrix, from the rows of `L` so that extreme
    /// scales do not push entries to ±1 through cancellation.
    pub fn correlations(&self) -> DMatrix<T> {
        let q = self.dim();
        let norms: Vec<T> = (0..q).map(|i| self.lower.row(i).norm()).collect();
        DMatrix::from_fn(q, q, |i, j| {
            if i == j {
                T::one()
            } else {
                self.lower.row(i).dot(&self.lower.row(j)) / (norms[i] * norms[j])
            }
        })
    }

    /// `1 / σ_max(L⁻¹)²`; stays positive where an eigen-solve on `Σ` would
    /// round the smallest eigenvalue to zero.
    pub fn min_eigenvalue(&self) -> T {
        let q = self.dim();
        let inv = self
            .lower
            .solve_lower_triangular(&DMatrix::identity(q, q))
            .expect("Cholesky factor has a positive diagonal");
        let top = inv.singular_values().iter().fold(T::zero(), |a, &b| a.max(b));
        T::one() / (top * top)
    }
}

/// `Σ = LLᵀ` with `L` rebuilt from the log-Cholesky vector.
pub fn psi_to_sigma<T: Real>(psi: &[T], q: usize) -> Result<CovarianceMatrix<T>> {
    if psi.len() != psi_len(q) {
        return Err(Error::Dimension(format!(
            "psi has length {} but q = {q} needs {}",
            psi.len(),
            psi_len(q)
        )));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("psi entries must be finite".into()));
    }
    let l = lower_from_psi(psi, q);
    Ok(CovarianceMatrix { sigma: &l * l.transpose(), lower: l })
}

/// Log-Cholesky vector of `Σ` (positive Cholesky diagonal).
pub fn sigma_to_psi<T: Real>(sigma: &CovarianceMatrix<T>) -> Result<DVector<T>> {
    let q = sigma.dim();
    let l = sigma
        .matrix()
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?
        .unpack();
    let mut psi = DVector::zeros(psi_len(q));
    for i in 0..q {
        psi[i] = l[(i, i)].ln();
    }
    let mut idx = q;
    for col in 0..q {
        for row in col + 1..q {
            psi[idx] = l[(row, col)];
            idx += 1;
        }
    }
    Ok(psi)
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic function `1 / (1 + e⁻ˣ)`, stable in both tails.
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Bernoulli log-likelihood of one response at linear predictor `eta`.
#[inline]
pub fn bernoulli_loglik<T: Real>(y: u8, eta: T) -> T {
    if y == 1 {
        eta - softplus(eta)
    } else {
        -softplus(eta)
    }
}

/// `Σ_j [y_j η_j − log(1 + exp η_j)]` with `η = Xβ + Zu`.
pub fn conditional_loglik<T: Real>(cluster: &Cluster<T>, beta: &DVector<T>, u: &DVector<T>) -> Result<T> {
    if beta.len() != cluster.x.ncols() || u.len() != cluster.z.ncols() {
        return Err(Error::Dimension(format!(
            "beta has length {} (p = {}), u has length {} (q = {})",
            beta.len(),
            cluster.x.ncols(),
            u.len(),
            cluster.z.ncols()
        )));
    }
    let eta = &cluster.x * beta + &cluster.z * u;
    Ok(cluster
        .y
        .iter()
        .zip(eta.iter())
        .fold(T::zero(), |acc, (&y, &e)| acc + bernoulli_loglik(y, e)))
}
