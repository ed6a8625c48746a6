//! Multi-link frequency-selective channel scenarios and their normalization
//! into the per-carrier gains consumed by every solver.
//!
//! Frequency responses use the zero-padded DFT convention
//! `H(k) = sum_l h[l] exp(-j 2 pi k l / N)` without a `1/sqrt(N)` factor; the
//! unitary scaling of the IFFT basis cancels in every gain ratio.
//!
//! Carrier indices are 0-based in this crate and 1-based in emitted reports.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Raw physical scenario: `Q` links sharing `N` carriers.
///
/// `taps[r][q]` is the normalized fading FIR from transmitter `r` to receiver
/// `q`, `distance[r][q]` the matching link distance. Masks are absolute
/// (energy/symbol per carrier); `f64::INFINITY` means unbounded and is
/// written as `null` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub carriers: usize,
    pub taps: Vec<Vec<Vec<Complex64>>>,
    pub distance: Vec<Vec<f64>>,
    pub path_loss_exponent: f64,
    pub power: Vec<f64>,
    pub noise: Vec<f64>,
    #[serde(default, with = "unbounded_opt")]
    pub mask: Option<Vec<Vec<f64>>>,
    pub gap: Vec<f64>,
}

impl ChannelSet {
    pub fn users(&self) -> usize {
        self.power.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.users();
        let n = self.carriers;
        let bad = |msg: String| Err(GameError::InvalidInput(msg));
        if q == 0 {
            return bad("at least one link is required".into());
        }
        if n == 0 {
            return bad("at least one carrier is required".into());
        }
        if self.noise.len() != q || self.gap.len() != q {
            return bad(format!("noise/gap vectors must have {q} entries"));
        }
        if self.taps.len() != q || self.taps.iter().any(|row| row.len() != q) {
            return bad(format!("taps must be a {q}x{q} array of FIR vectors"));
        }
        if self.distance.len() != q || self.distance.iter().any(|row| row.len() != q) {
            return bad(format!("distance must be a {q}x{q} array"));
        }
        for (r, row) in self.taps.iter().enumerate() {
            for (s, fir) in row.iter().enumerate() {
                if fir.is_empty() || fir.len() > n {
                    return bad(format!("taps[{r}][{s}] has {} taps, need 1..={n}", fir.len()));
                }
                if fir.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
                    return bad(format!("taps[{r}][{s}] is not finite"));
                }
            }
        }
        if self.distance.iter().flatten().any(|&d| !(d > 0.0 && d.is_finite())) {
            return bad("distances must be positive and finite".into());
        }
        if !(self.path_loss_exponent.is_finite() && self.path_loss_exponent >= 0.0) {
            return bad("path-loss exponent must be finite and nonnegative".into());
        }
        if self.power.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return bad("power budgets must be positive".into());
        }
        if self.noise.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("noise powers must be positive".into());
        }
        if self.gap.iter().any(|&g| !(g >= 1.0 && g.is_finite())) {
            return bad("SNR gaps must be >= 1".into());
        }
        if let Some(mask) = &self.mask {
            if mask.len() != q || mask.iter().any(|m| m.len() != n) {
                return bad(format!("mask must be a {q}x{n} array"));
            }
            if mask.iter().flatten().any(|&m| m.is_nan() || m < 0.0) {
                return bad("mask entries must be >= 0".into());
            }
        }
        Ok(())
    }
}

/// The reduced vector game: squared normalized gains `|H_rq(k)|^2`, masks
/// relative to each budget, and gap factors. Every solver consumes this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedGame {
    pub users: usize,
    pub carriers: usize,
    /// `gain2[r][q][k]`: transmitter `r` to receiver `q` on carrier `k`.
    pub gain2: Vec<Vec<Vec<f64>>>,
    /// `mask[q][k]` relative to the budget of user `q`; infinite when unbounded.
    #[serde(with = "unbounded")]
    pub mask: Vec<Vec<f64>>,
    pub gap: Vec<f64>,
}

impl NormalizedGame {
    /// Builds a game directly from squared gains with unbounded masks.
    pub fn from_gains(gain2: Vec<Vec<Vec<f64>>>, gap: Vec<f64>) -> Result<Self> {
        let users = gain2.len();
        if users == 0 || gap.len() != users || gain2.iter().any(|row| row.len() != users) {
            return Err(GameError::InvalidInput("gain2 must be QxQxN with Q gaps".into()));
        }
        let carriers = gain2[0][0].len();
        if carriers == 0 || gain2.iter().flatten().any(|v| v.len() != carriers) {
            return Err(GameError::InvalidInput("ragged gain2 array".into()));
        }
        if gain2.iter().flatten().flatten().any(|&g| !(g >= 0.0 && g.is_finite())) {
            return Err(GameError::InvalidInput("gains must be finite and nonnegative".into()));
        }
        if gap.iter().any(|&g| !(g >= 1.0)) {
            return Err(GameError::InvalidInput("gaps must be >= 1".into()));
        }
        Ok(Self {
            users,
            carriers,
            gain2,
            mask: vec![vec![f64::INFINITY; carriers]; users],
            gap,
        })
    }

    pub fn with_mask(mut self, mask: Vec<Vec<f64>>) -> Result<Self> {
        if mask.len() != self.users || mask.iter().any(|m| m.len() != self.carriers) {
            return Err(GameError::InvalidInput("mask must be QxN".into()));
        }
        if mask.iter().flatten().any(|&m| m.is_nan() || m < 0.0) {
            return Err(GameError::InvalidInput("mask entries must be >= 0".into()));
        }
        self.mask = mask;
        Ok(self)
    }

    #[inline]
    pub fn direct(&self, q: usize, k: usize) -> f64 {
        self.gain2[q][q][k]
    }

    /// Interference-plus-noise factor `1 + sum_{r != q} gain2[r][q][k] p_r(k)`.
    #[inline]
    pub fn interference(&self, q: usize, k: usize, p: &[Vec<f64>]) -> f64 {
        1.0 + (0..self.users)
            .filter(|&r| r != q)
            .map(|r| self.gain2[r][q][k] * p[r][k])
            .sum::<f64>()
    }

    #[inline]
    pub fn sinr(&self, q: usize, k: usize, p: &[Vec<f64>]) -> f64 {
        self.gain2[q][q][k] * p[q][k] / self.interference(q, k, p)
    }

    /// Game obtained when the budget of user `r` is multiplied by `scale[r]`.
    ///
    /// Gains emitted by `r` scale linearly and its relative mask scales
    /// inversely, so absolute masks are preserved.
    pub fn with_power_scaling(&self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.users || scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(GameError::InvalidInput("one positive scale per user".into()));
        }
        let mut out = self.clone();
        for (r, &s) in scale.iter().enumerate() {
            for row in out.gain2[r].iter_mut() {
                row.iter_mut().for_each(|g| *g *= s);
            }
            out.mask[r].iter_mut().for_each(|m| *m /= s);
        }
        Ok(out)
    }
}

/// `L_h + 1` i.i.d. circularly-symmetric complex Gaussian taps with the given
/// per-tap variance.
pub fn generate_fir_channel(seed: u64, order: usize, variance: f64) -> Vec<Complex64> {
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, (variance / 2.0).sqrt()).expect("variance validated by caller");
    (0..=order)
        .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect()
}

/// Zero-padded `N`-point DFT of an FIR.
pub fn frequency_response(taps: &[Complex64], carriers: usize) -> Result<Vec<Complex64>> {
    if carriers == 0 || taps.len() > carriers {
        return Err(GameError::InvalidInput(format!(
            "{} taps do not fit in {carriers} carriers",
            taps.len()
        )));
    }
    let n = carriers as u64;
    Ok((0..n)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(l, &h)| {
                    // reduce k*l mod N before scaling to keep the phase exact
                    let phase = -2.0 * PI * (((k * l as u64) % n) as f64) / n as f64;
                    h * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect())
}

/// `gain2[r][q][k] = |DFT(taps[r][q])[k]|^2 P_r / (sigma_q^2 d_rq^gamma)`.
pub fn build_game(ch: &ChannelSet) -> Result<NormalizedGame> {
    ch.validate()?;
    let q_count = ch.users();
    let n = ch.carriers;
    let mut gain2 = vec![vec![Vec::new(); q_count]; q_count];
    for r in 0..q_count {
        for q in 0..q_count {
            let scale =
                ch.power[r] / (ch.noise[q] * ch.distance[r][q].powf(ch.path_loss_exponent));
            gain2[r][q] = frequency_response(&ch.taps[r][q], n)?
                .into_iter()
                .map(|h| h.norm_sqr() * scale)
                .collect();
        }
    }
    let mask = match &ch.mask {
        Some(abs) => abs
            .iter()
            .zip(&ch.power)
            .map(|(row, &p)| row.iter().map(|&m| m / p).collect())
            .collect(),
        None => vec![vec![f64::INFINITY; n]; q_count],
    };
    Ok(NormalizedGame {
        users: q_count,
        carriers: n,
        gain2,
        mask,
        gap: ch.gap.clone(),
    })
}

/// Cross-link geometry of a generated scenario (direct links sit at `d = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossDistance {
    /// `d_rq / d_qq` equal for every `r != q`.
    Ratio(f64),
    /// Full `QxQ` distance matrix `[r][q]`; the diagonal is overwritten with 1.
    Matrix(Vec<Vec<f64>>),
}

/// Ratio-parameterized scenario: `snr_q = P_q / (sigma_q^2 d_qq^gamma)` with
/// unit budgets and unit direct distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub users: usize,
    pub carriers: usize,
    pub channel_order: usize,
    /// Per-tap variance; defaults to `1 / (L_h + 1)`.
    #[serde(default)]
    pub tap_variance: Option<f64>,
    pub path_loss_exponent: f64,
    pub cross: CrossDistance,
    pub snr_db: f64,
    #[serde(default = "unit_gap")]
    pub gap: f64,
}

fn unit_gap() -> f64 {
    1.0
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GameError::InvalidInput(msg.to_string()));
        if self.users == 0 || self.carriers == 0 {
            return bad("users and carriers must be >= 1");
        }
        if self.channel_order + 1 > self.carriers {
            return bad("channel order must satisfy L_h + 1 <= N");
        }
        if let Some(v) = self.tap_variance {
            if !(v > 0.0 && v.is_finite()) {
                return bad("tap variance must be positive");
            }
        }
        if !self.snr_db.is_finite() || !(self.gap >= 1.0) {
            return bad("snr must be finite and gap >= 1");
        }
        match &self.cross {
            CrossDistance::Ratio(x) if !(*x > 0.0 && x.is_finite()) => {
                bad("distance ratio must be positive")
            }
            CrossDistance::Matrix(m)
                if m.len() != self.users || m.iter().any(|row| row.len() != self.users) =>
            {
                bad("distance matrix must be QxQ")
            }
            _ => Ok(()),
        }
    }

    /// Draws one channel realization; taps of link `(r, q)` are seeded from
    /// `(root_seed, trial, r, q)` only.
    pub fn realize(&self, root_seed: u64, trial: u64) -> Result<ChannelSet> {
        self.validate()?;
        let q_count = self.users;
        let variance = self
            .tap_variance
            .unwrap_or(1.0 / (self.channel_order as f64 + 1.0));
        let taps = (0..q_count)
            .map(|r| {
                (0..q_count)
                    .map(|q| {
                        let seed = derive_seed(root_seed, &[trial, r as u64, q as u64]);
                        generate_fir_channel(seed, self.channel_order, variance)
                    })
                    .collect()
            })
            .collect();
        let distance = (0..q_count)
            .map(|r| {
                (0..q_count)
                    .map(|q| match &self.cross {
                        _ if r == q => 1.0,
                        CrossDistance::Ratio(x) => *x,
                        CrossDistance::Matrix(m) => m[r][q],
                    })
                    .collect()
            })
            .collect();
        let noise = 10f64.powf(-self.snr_db / 10.0);
        let ch = ChannelSet {
            carriers: self.carriers,
            taps,
            distance,
            path_loss_exponent: self.path_loss_exponent,
            power: vec![1.0; q_count],
            noise: vec![noise; q_count],
            mask: None,
            gap: vec![self.gap; q_count],
        };
        ch.validate()?;
        Ok(ch)
    }
}

/// serde adapter writing infinite mask entries as `null`.
pub(crate) mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = v
            .iter()
            .map(|row| row.iter().map(|&x| x.is_finite().then_some(x)).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let rows = Vec::<Vec<Option<f64>>>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|row| row.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
            .collect())
    }
}

pub(crate) mod unbounded_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(rows) => super::unbounded::serialize(rows, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
        let rows = Option::<Vec<Vec<Option<f64>>>>::deserialize(d)?;
        Ok(rows.map(|rows| {
            rows.into_iter()
                .map(|row| row.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
                .collect()
        }))
    }
}
