//! Matrix-valued form of the game for small `N`: arbitrary precoders `F_q`,
//! circulant channels, mutual information, MMSE receivers and gap rates.
//! Used to check empirically that diagonal precoding through the IFFT basis
//! is a best response.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{frequency_response, ChannelSet, NormalizedGame};
use crate::equilibrium::{best_response, PowerProfile};
use crate::error::{GameError, Result};
use crate::pareto::RateUnit;
use crate::rng::{derive_seed, rng_from_seed};

pub type CMatrix = DMatrix<Complex64>;

/// Largest block length accepted by the oracle.
pub const MAX_CARRIERS: usize = 8;

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Normalized IFFT matrix, `W[i][j] = exp(j 2 pi i j / N) / sqrt(N)`.
pub fn ifft_matrix(n: usize) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |i, j| {
        Complex64::from_polar(scale, 2.0 * PI * ((i * j) % n) as f64 / n as f64)
    })
}

/// Circulant matrix with first column `taps` (zero padded to `n`).
pub fn circulant(taps: &[Complex64], n: usize) -> Result<CMatrix> {
    if taps.len() > n {
        return Err(GameError::InvalidInput(format!("{} taps exceed block length {n}", taps.len())));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| taps.get((i + n - j) % n).copied().unwrap_or(C0)))
}

/// Channel matrices of a scenario together with the per-link constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMatrices {
    pub carriers: usize,
    /// `h[r][q]`: transmitter `r` to receiver `q`, path loss included.
    pub h: Vec<Vec<CMatrix>>,
    /// Eigenvalues of `h[r][q]` in the IFFT basis, `h = W diag(response) W^H`.
    pub response: Vec<Vec<Vec<Complex64>>>,
    pub sigma2: Vec<f64>,
    pub power: Vec<f64>,
    /// Absolute per-carrier mask, `f64::INFINITY` when unbounded.
    pub mask: Vec<Vec<f64>>,
}

impl LinkMatrices {
    pub fn from_channels(ch: &ChannelSet) -> Result<Self> {
        ch.validate()?;
        let n = ch.carriers;
        if n > MAX_CARRIERS {
            return Err(GameError::SizeGuard(format!("matrix oracle supports N <= {MAX_CARRIERS}")));
        }
        let users = ch.users();
        let mut h = Vec::with_capacity(users);
        let mut response = Vec::with_capacity(users);
        for r in 0..users {
            let mut hr = Vec::with_capacity(users);
            let mut dr = Vec::with_capacity(users);
            for q in 0..users {
                let amp = ch.distance[r][q].powf(-ch.path_loss_exponent / 2.0);
                let taps: Vec<Complex64> = ch.taps[r][q].iter().map(|t| t * amp).collect();
                hr.push(circulant(&taps, n)?);
                dr.push(frequency_response(&taps, n)?);
            }
            h.push(hr);
            response.push(dr);
        }
        let mask = ch.mask.clone().unwrap_or_else(|| vec![vec![f64::INFINITY; n]; users]);
        Ok(Self { carriers: n, h, response, sigma2: ch.noise.clone(), power: ch.power.clone(), mask })
    }

    pub fn users(&self) -> usize {
        self.sigma2.len()
    }

    /// Per-carrier game with the given gaps, matching [`crate::build_game`].
    pub fn normalized_game(&self, gap: Vec<f64>) -> Result<NormalizedGame> {
        let users = self.users();
        let gain2 = (0..users)
            .map(|r| {
                (0..users)
                    .map(|q| {
                        self.response[r][q]
                            .iter()
                            .map(|d| d.norm_sqr() * self.power[r] / self.sigma2[q])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mask = self
            .mask
            .iter()
            .zip(&self.power)
            .map(|(row, p)| row.iter().map(|m| m / p).collect())
            .collect();
        NormalizedGame::from_gains(gain2, gap)?.with_mask(mask)
    }

    fn check(&self, f: &[CMatrix]) -> Result<()> {
        let n = self.carriers;
        if f.len() != self.users() || f.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(GameError::InvalidInput(format!("need {} precoders of size {n}x{n}", self.users())));
        }
        if f.iter().any(|m| m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(GameError::InvalidInput("non-finite precoder entry".into()));
        }
        Ok(())
    }
}

/// `F_q = W sqrt(diag(P_q p_q))` for every user of a normalized profile.
pub fn diagonal_precoders(links: &LinkMatrices, p: &PowerProfile) -> Vec<CMatrix> {
    let w = ifft_matrix(links.carriers);
    p.power
        .iter()
        .zip(&links.power)
        .map(|(row, &pw)| {
            let d = DVector::from_iterator(row.len(), row.iter().map(|x| Complex64::from((pw * x).sqrt())));
            &w * CMatrix::from_diagonal(&d)
        })
        .collect()
}

/// `W^H F F^H W`, the carrier-domain transmit covariance.
pub fn carrier_covariance(f: &CMatrix) -> CMatrix {
    let w = ifft_matrix(f.nrows());
    let p = w.adjoint() * f;
    &p * p.adjoint()
}

/// Budget `(1/N) tr(F F^H) <= P_q` and mask on the carrier-domain diagonal.
pub fn is_feasible(links: &LinkMatrices, q: usize, f: &CMatrix, tol: f64) -> bool {
    let n = links.carriers as f64;
    let cov = carrier_covariance(f);
    let trace: f64 = cov.diagonal().iter().map(|z| z.re).sum();
    trace / n <= links.power[q] * (1.0 + tol)
        && cov
            .diagonal()
            .iter()
            .zip(&links.mask[q])
            .all(|(d, &m)| d.re <= m * (1.0 + tol) + tol)
}

/// `R_-q = sigma_q^2 I + sum_{r != q} H_rq F_r F_r^H H_rq^H`.
pub fn interference_covariance(q: usize, f: &[CMatrix], links: &LinkMatrices) -> Result<CMatrix> {
    links.check(f)?;
    let n = links.carriers;
    let mut r = CMatrix::identity(n, n) * Complex64::from(links.sigma2[q]);
    for (s, fs) in f.iter().enumerate().filter(|&(s, _)| s != q) {
        let m = &links.h[s][q] * fs;
        r += &m * m.adjoint();
    }
    Ok(r)
}

fn hermitian(m: CMatrix) -> CMatrix {
    (&m + m.adjoint()) * Complex64::from(0.5)
}

fn cholesky(m: CMatrix, what: &str) -> Result<Cholesky<Complex64, nalgebra::Dyn>> {
    Cholesky::new(hermitian(m)).ok_or_else(|| GameError::Numeric(format!("{what} is not positive definite")))
}

/// Pieces shared by every payoff: `M = H_qq F_q`, `R_-q^{-1} M` and
/// `A = I + M^H R_-q^{-1} M`.
struct Whitened {
    m: CMatrix,
    rinv_m: CMatrix,
    a: CMatrix,
    r: CMatrix,
}

fn whiten(q: usize, f: &[CMatrix], links: &LinkMatrices) -> Result<Whitened> {
    let r = interference_covariance(q, f, links)?;
    let m = &links.h[q][q] * &f[q];
    let rinv_m = cholesky(r.clone(), "interference covariance")?.solve(&m);
    let n = links.carriers;
    let a = hermitian(CMatrix::identity(n, n) + m.adjoint() * &rinv_m);
    Ok(Whitened { m, rinv_m, a, r })
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(GameError::Numeric(format!("non-finite {what}")))
    }
}

/// `(1/N) log det(I + F_q^H H_qq^H R_-q^{-1} H_qq F_q)`.
pub fn mutual_information(q: usize, f: &[CMatrix], links: &LinkMatrices, unit: RateUnit) -> Result<f64> {
    let w = whiten(q, f, links)?;
    let nats = cholesky(w.a, "information matrix")?.ln_determinant() / links.carriers as f64;
    Ok(unit.from_nats(finite(nats, "mutual information")?))
}

/// Linear MMSE receiver `G_q = R^{-1} H F (I + F^H H^H R^{-1} H F)^{-1}`.
pub fn mmse_receiver(q: usize, f: &[CMatrix], links: &LinkMatrices) -> Result<CMatrix> {
    let w = whiten(q, f, links)?;
    let ainv = w.a.try_inverse().ok_or_else(|| GameError::Numeric("singular information matrix".into()))?;
    let g = w.rinv_m * ainv;
    if g.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(GameError::Numeric("non-finite receiver".into()));
    }
    Ok(g)
}

/// Mutual information measured after the receiver `g`,
/// `(1/N) log det(I + F^H H^H G (G^H R G)^{-1} G^H H F)`.
pub fn mutual_information_after(
    q: usize,
    f: &[CMatrix],
    links: &LinkMatrices,
    g: &CMatrix,
    unit: RateUnit,
) -> Result<f64> {
    let r = interference_covariance(q, f, links)?;
    let m = &links.h[q][q] * &f[q];
    let inner = cholesky(g.adjoint() * &r * g, "filtered covariance")?;
    let gm = g.adjoint() * &m;
    let n = links.carriers;
    let a = CMatrix::identity(n, n) + gm.adjoint() * inner.solve(&gm);
    let nats = cholesky(a, "filtered information matrix")?.ln_determinant() / n as f64;
    Ok(unit.from_nats(finite(nats, "mutual information")?))
}

/// MSE matrix `E_q = (I + F^H H^H R_-q^{-1} H F)^{-1}`.
pub fn mse_matrix(q: usize, f: &[CMatrix], links: &LinkMatrices) -> Result<CMatrix> {
    let w = whiten(q, f, links)?;
    w.a.try_inverse()
        .map(hermitian)
        .ok_or_else(|| GameError::Numeric("singular information matrix".into()))
}

fn sinr_from_mse(e: &CMatrix) -> Result<Vec<f64>> {
    e.diagonal()
        .iter()
        .map(|d| finite((1.0 / d.re - 1.0).max(0.0), "sinr"))
        .collect()
}

/// Per-substream MMSE SINR, `1 / [E_q]_kk - 1`.
pub fn mse_sinr(q: usize, f: &[CMatrix], links: &LinkMatrices) -> Result<Vec<f64>> {
    sinr_from_mse(&mse_matrix(q, f, links)?)
}

/// Same SINRs through `E_q = (I + P^H Lambda P)^{-1}` with `P = W^H F_q`.
/// Needs every opponent to transmit diagonally in the IFFT basis.
pub fn mse_sinr_lambda(q: usize, f: &[CMatrix], links: &LinkMatrices) -> Result<Vec<f64>> {
    links.check(f)?;
    let lambda = lambda_diagonal(q, f, links)?;
    let w = ifft_matrix(links.carriers);
    let p = w.adjoint() * &f[q];
    let n = links.carriers;
    let lam = CMatrix::from_diagonal(&DVector::from_iterator(n, lambda.into_iter().map(Complex64::from)));
    let a = CMatrix::identity(n, n) + p.adjoint() * lam * &p;
    let e = a.try_inverse().ok_or_else(|| GameError::Numeric("singular information matrix".into()))?;
    sinr_from_mse(&e)
}

/// `Lambda_q(k) = |H_qq(k)|^2 / (sigma_q^2 + sum_r |H_rq(k)|^2 [W^H F_r F_r^H W]_kk)`.
pub fn lambda_diagonal(q: usize, f: &[CMatrix], links: &LinkMatrices) -> Result<Vec<f64>> {
    links.check(f)?;
    let n = links.carriers;
    let mut floor = vec![links.sigma2[q]; n];
    for (r, fr) in f.iter().enumerate().filter(|&(r, _)| r != q) {
        let cov = carrier_covariance(fr);
        let scale = cov.diagonal().iter().map(|z| z.re.abs()).fold(0.0, f64::max).max(1e-300);
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| cov[(i, j)].norm())
            .fold(0.0, f64::max);
        if off > 1e-9 * scale {
            return Err(GameError::Precondition(format!("opponent {r} is not diagonal in the IFFT basis")));
        }
        for k in 0..n {
            floor[k] += links.response[r][q][k].norm_sqr() * cov[(k, k)].re;
        }
    }
    Ok((0..n).map(|k| links.response[q][q][k].norm_sqr() / floor[k]).collect())
}

/// Per-substream SINR of an arbitrary receiver `g`:
/// `|[G^H H F]_kk|^2 / [G^H R_k G]_kk` with `R_k` the covariance of
/// everything except substream `k`.
pub fn receiver_sinr(q: usize, f: &[CMatrix], links: &LinkMatrices, g: &CMatrix) -> Result<Vec<f64>> {
    let w = whiten(q, f, links)?;
    let r_all = &w.m * w.m.adjoint() + &w.r;
    let signal = g.adjoint() * &w.m;
    (0..links.carriers)
        .map(|k| {
            let mk = w.m.column(k);
            let rk = &r_all - &mk * mk.adjoint();
            let gk = g.column(k);
            let den = (gk.adjoint() * rk * gk)[(0, 0)].re;
            let num = signal[(k, k)].norm_sqr();
            if num == 0.0 {
                return Ok(0.0);
            }
            finite(num / den, "sinr")
        })
        .collect()
}

/// Gap-approximation rate `(1/N) sum_k log2(1 + SINR_k / gap)` in bits.
pub fn gap_rate(q: usize, f: &[CMatrix], links: &LinkMatrices, gap: f64) -> Result<f64> {
    if !(gap >= 1.0) {
        return Err(GameError::InvalidInput(format!("gap must be >= 1, got {gap}")));
    }
    let sinr = mse_sinr(q, f, links)?;
    Ok(sinr.iter().map(|s| (1.0 + s / gap).log2()).sum::<f64>() / links.carriers as f64)
}

/// SNR gap of uncoded M-QAM at symbol error rate `pe`,
/// `(Qinv(pe / 4))^2 / 3` with `Qinv(x) = sqrt(2) erfcinv(2x)`.
pub fn qam_gap(pe: f64) -> Result<f64> {
    if !(pe > 0.0 && pe < 2.0) {
        return Err(GameError::InvalidInput(format!("error rate {pe} outside (0, 2)")));
    }
    let qinv = std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(pe / 2.0);
    Ok(qinv * qinv / 3.0)
}

/// Payoff being checked for diagonal optimality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Payoff {
    /// Mutual information in bits.
    MutualInformation,
    GapRate { gap: f64 },
}

impl Payoff {
    pub fn evaluate(self, q: usize, f: &[CMatrix], links: &LinkMatrices) -> Result<f64> {
        match self {
            Payoff::MutualInformation => mutual_information(q, f, links, RateUnit::Bits),
            Payoff::GapRate { gap } => gap_rate(q, f, links, gap),
        }
    }

    fn gap(self) -> f64 {
        match self {
            Payoff::MutualInformation => 1.0,
            Payoff::GapRate { gap } => gap,
        }
    }
}

fn complex_gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Haar-distributed unitary matrix.
pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    let qr = complex_gaussian(rng, n, n).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::from(1.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let eig = SymmetricEigen::new(hermitian(m.clone()));
    let d = DVector::from_iterator(
        m.nrows(),
        eig.eigenvalues.iter().map(|&l| Complex64::from(l.max(0.0).sqrt())),
    );
    &eig.eigenvectors * CMatrix::from_diagonal(&d) * eig.eigenvectors.adjoint()
}

/// Random precoder for user `q` inside the budget and mask: a Gaussian
/// covariance of random rank scaled to the budget, pulled toward its
/// mask-clipped diagonal until the mask holds, then rotated by a random
/// unitary on the right.
pub fn random_feasible_precoder<R: Rng>(links: &LinkMatrices, q: usize, rng: &mut R) -> Result<CMatrix> {
    let n = links.carriers;
    let w = ifft_matrix(n);
    let mask = &links.mask[q];
    for _ in 0..16 {
        let rank = rng.random_range(1..=n);
        let a = complex_gaussian(rng, n, rank);
        let mut cov = &a * a.adjoint();
        let trace: f64 = cov.diagonal().iter().map(|z| z.re).sum();
        let level = if rng.random::<f64>() < 0.75 { 1.0 } else { rng.random::<f64>() };
        cov *= Complex64::from(level * n as f64 * links.power[q] / trace);
        let clipped = CMatrix::from_diagonal(&DVector::from_iterator(
            n,
            (0..n).map(|k| Complex64::from(cov[(k, k)].re.min(mask[k]))),
        ));
        let within = |c: &CMatrix| (0..n).all(|k| c[(k, k)].re <= mask[k] * (1.0 + 1e-12));
        let mut t: f64 = 0.0;
        let mut shrunk = cov.clone();
        while !within(&shrunk) && t < 1.0 {
            t = (t + 1.0 / 16.0).min(1.0);
            shrunk = &cov * Complex64::from(1.0 - t) + &clipped * Complex64::from(t);
        }
        let f = &w * psd_sqrt(&shrunk) * random_unitary(rng, n);
        if is_feasible(links, q, &f, 1e-9) {
            return Ok(f);
        }
    }
    Err(GameError::Sampling(format!("no feasible precoder for user {q} after 16 draws")))
}

/// Random diagonal precoder: a Dirichlet power split clipped to the mask.
pub fn random_diagonal_precoder<R: Rng>(links: &LinkMatrices, q: usize, rng: &mut R) -> CMatrix {
    let n = links.carriers;
    let gamma = Gamma::new(1.0, 1.0).expect("unit gamma");
    let w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = w.iter().sum::<f64>().max(1e-300);
    let p: Vec<f64> = w
        .iter()
        .zip(&links.mask[q])
        .map(|(x, m)| (x / s * n as f64 * links.power[q]).min(*m))
        .collect();
    let d = DVector::from_iterator(n, p.iter().map(|x| Complex64::from(x.sqrt())));
    ifft_matrix(n) * CMatrix::from_diagonal(&d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalOptimalityReport {
    pub user: usize,
    pub payoff: Payoff,
    pub samples: usize,
    pub diagonal_samples: usize,
    /// Payoff of the diagonal waterfilling best response.
    pub best_response_value: f64,
    pub sample_max: f64,
    pub sample_mean: f64,
    /// Largest `sample - best_response_value` seen.
    pub max_gap: f64,
    /// Samples beating the best response by more than `1e-9`.
    pub violations: usize,
}

/// Fixes every opponent to the diagonal precoder of `others` and compares
/// user `q`'s diagonal best response against `samples` random feasible
/// precoders (one in four of them diagonal).
pub fn verify_diagonal_optimality(
    links: &LinkMatrices,
    others: &PowerProfile,
    q: usize,
    payoff: Payoff,
    samples: usize,
    seed: u64,
) -> Result<DiagonalOptimalityReport> {
    if links.carriers > MAX_CARRIERS {
        return Err(GameError::SizeGuard(format!("matrix oracle supports N <= {MAX_CARRIERS}")));
    }
    if samples < 50 {
        return Err(GameError::InvalidInput("at least 50 samples are required".into()));
    }
    if q >= links.users() || others.users() != links.users() || others.carriers() != links.carriers {
        return Err(GameError::InvalidInput("profile does not match the links".into()));
    }
    let game = links.normalized_game(vec![payoff.gap(); links.users()])?;
    let mut profile = others.clone();
    profile.power[q] = best_response(q, others, &game)?;
    let mut f = diagonal_precoders(links, &profile);
    let best = payoff.evaluate(q, &f, links)?;
    let mut rng = rng_from_seed(derive_seed(seed, &[q as u64]));
    let (mut max, mut sum, mut violations, mut diagonal) = (f64::NEG_INFINITY, 0.0, 0, 0);
    for i in 0..samples {
        f[q] = if i % 4 == 3 {
            diagonal += 1;
            random_diagonal_precoder(links, q, &mut rng)
        } else {
            random_feasible_precoder(links, q, &mut rng)?
        };
        let v = payoff.evaluate(q, &f, links)?;
        max = max.max(v);
        sum += v;
        if v > best + 1e-9 {
            violations += 1;
        }
    }
    Ok(DiagonalOptimalityReport {
        user: q,
        payoff,
        samples,
        diagonal_samples: diagonal,
        best_response_value: best,
        sample_max: max,
        sample_mean: sum / samples as f64,
        max_gap: max - best,
        violations,
    })
}

/// `x` is majorized by `y`: equal totals and every prefix sum of `x` sorted
/// decreasingly is at most that of `y`.
pub fn majorized_by(x: &[f64], y: &[f64]) -> Result<bool> {
    if x.len() != y.len() {
        return Err(GameError::InvalidInput("majorization needs equal lengths".into()));
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    };
    let (xs, ys) = (sorted(x), sorted(y));
    let scale = 1.0f64.max(x.iter().map(|v| v.abs()).sum()).max(y.iter().map(|v| v.abs()).sum());
    let tol = 1e-12 * scale;
    let (mut px, mut py) = (0.0, 0.0);
    for (a, b) in xs.iter().zip(&ys) {
        px += a;
        py += b;
        if px > py + tol {
            return Ok(false);
        }
    }
    Ok((px - py).abs() <= tol)
}

/// Diagonal entries (real parts) and eigenvalues of a Hermitian matrix.
pub fn diagonal_and_spectrum(a: &CMatrix) -> (Vec<f64>, Vec<f64>) {
    let h = hermitian(a.clone());
    let d = h.diagonal().iter().map(|z| z.re).collect();
    let l = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    (d, l)
}

/// Negated gap rate as a function of MSE values,
/// `-(1/N) sum_k log2(1 + (1/e_k - 1) / gap)`.
pub fn mse_objective(e: &[f64], gap: f64) -> f64 {
    -e.iter().map(|&x| (1.0 + (1.0 / x - 1.0) / gap).log2()).sum::<f64>() / e.len() as f64
}
