//! Domain types shared by every solver: user and provider profiles, the
//! trading configuration, channel realizations, allocations and prices.

use std::fmt;
use std::ops::{Deref, Index, IndexMut};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// Relative slack applied to every strict capacity inequality (capacity, basic-service latency).
pub const STRICT_MARGIN: f64 = 1e-9;

/// Dense row-major matrix of reals.
///
/// Serialized as a list of rows so it reads naturally in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        assert!(r < self.rows && c < self.cols, "matrix index out of range");
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        assert!(r < self.rows && c < self.cols, "matrix index out of range");
        &mut self.data[r * self.cols + c]
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged matrix rows".to_string());
        }
        let n = rows.len();
        Ok(Self {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        (0..m.rows).map(|r| m.row(r).to_vec()).collect()
    }
}

/// One metaverse user (follower).
///
/// Units: `f_max` in cycles/s, `bandwidth_max` in Hz, `data_rate` in
/// cycles-equivalent workload collected per second (so that
/// `ln(1/theta) * data_rate * tau / f` is a time in seconds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuProfile {
    #[serde(default)]
    pub id: usize,
    pub f_max: f64,
    pub bandwidth_max: f64,
    pub cost_compute: f64,
    pub cost_bandwidth: f64,
    pub data_rate: f64,
    pub theta: f64,
    pub basic_compute: f64,
    pub latency_req: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power: f64,
}

fn default_tx_power() -> f64 {
    0.2
}

impl MuProfile {
    /// `ln(1/theta)`, the local iteration factor.
    pub fn iteration_factor(&self) -> f64 {
        (1.0 / self.theta).ln()
    }

    /// Largest total compute that keeps the capacity and basic-service limits strict.
    pub fn compute_cap(&self) -> f64 {
        (self.f_max - self.basic_compute / self.latency_req) * (1.0 - STRICT_MARGIN)
    }

    /// Largest total bandwidth that keeps the capacity limit strict.
    pub fn bandwidth_cap(&self) -> f64 {
        self.bandwidth_max * (1.0 - STRICT_MARGIN)
    }
}

/// One metaverse service provider (leader).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MspProfile {
    #[serde(default)]
    pub id: usize,
    /// Virtual round deadline (s).
    pub tau: f64,
    /// Model payload uploaded per round (bits).
    pub payload_bits: f64,
    /// Profit conversion coefficient.
    pub profit_coef: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub price_min: f64,
    pub price_max: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    #[default]
    Static,
    Dynamic,
}

/// Linear SINR per (MU, MSP) link.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    pub sinr: Matrix,
    pub mode: ChannelMode,
}

impl ChannelState {
    pub fn sinr(&self, m: usize, n: usize) -> f64 {
        self.sinr[(m, n)]
    }

    /// `log2(1 + sinr)`, the spectral efficiency of the link.
    pub fn spectral_efficiency(&self, m: usize, n: usize) -> f64 {
        (1.0 + self.sinr[(m, n)]).log2()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradingConfig {
    /// Guidance period T (s).
    pub period: f64,
    pub mus: Vec<MuProfile>,
    pub msps: Vec<MspProfile>,
    pub sinr_db_range: [f64; 2],
    #[serde(default)]
    pub channel_mode: ChannelMode,
    pub seed: u64,
    /// Potential value of each MU's initial data for each MSP task (M x N).
    pub omega: Matrix,
    /// Optional per-pair payload override (M x N, bits).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_override: Option<Matrix>,
}

impl TradingConfig {
    pub fn num_mus(&self) -> usize {
        self.mus.len()
    }

    pub fn num_msps(&self) -> usize {
        self.msps.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvalidConfig {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ConfigErrors(pub Vec<InvalidConfig>);

impl ConfigErrors {
    pub fn mentions(&self, reason: &str) -> bool {
        self.0.iter().any(|e| e.reason.contains(reason))
    }
}

/// A configuration that passed [`validate_config`]. Immutable.
#[derive(Clone, Debug, PartialEq)]
pub struct Market(TradingConfig);

impl Deref for Market {
    type Target = TradingConfig;

    fn deref(&self) -> &TradingConfig {
        &self.0
    }
}

impl Market {
    pub fn config(&self) -> &TradingConfig {
        &self.0
    }

    pub fn into_config(self) -> TradingConfig {
        self.0
    }

    pub fn payload(&self, m: usize, n: usize) -> f64 {
        match &self.0.payload_override {
            Some(p) => p[(m, n)],
            None => self.0.msps[n].payload_bits,
        }
    }

    pub fn omega(&self, m: usize, n: usize) -> f64 {
        self.0.omega[(m, n)]
    }

    /// Number of synchronous rounds of MSP `n` that fit in the period.
    pub fn rounds(&self, n: usize) -> u64 {
        (self.0.period / self.0.msps[n].tau).floor() as u64
    }
}

pub fn validate_config(cfg: TradingConfig) -> Result<Market, ConfigErrors> {
    let mut errs = Vec::new();
    let mut fail = |field: String, reason: &str| {
        errs.push(InvalidConfig {
            field,
            reason: reason.to_string(),
        })
    };
    let pos = |v: f64| v.is_finite() && v > 0.0;

    if cfg.mus.is_empty() {
        fail("mus".into(), "at least one MU required");
    }
    if cfg.msps.is_empty() {
        fail("msps".into(), "at least one MSP required");
    }
    if !pos(cfg.period) {
        fail("period".into(), "must be positive");
    }

    for (m, mu) in cfg.mus.iter().enumerate() {
        let name = |f: &str| format!("mus[{m}].{f}");
        if mu.id != m {
            fail(name("id"), "must equal list position");
        }
        for (f, v) in [
            ("f_max", mu.f_max),
            ("bandwidth_max", mu.bandwidth_max),
            ("cost_compute", mu.cost_compute),
            ("cost_bandwidth", mu.cost_bandwidth),
            ("data_rate", mu.data_rate),
            ("basic_compute", mu.basic_compute),
            ("latency_req", mu.latency_req),
            ("tx_power", mu.tx_power),
        ] {
            if !pos(v) {
                fail(name(f), "must be positive");
            }
        }
        if !(mu.theta > 0.0 && mu.theta < 1.0) {
            fail(name("theta"), "theta out of (0,1)");
        }
        if !(mu.basic_compute < mu.latency_req * mu.f_max) {
            fail(name("basic_compute"), "basic-service latency infeasible");
        }
    }

    for (n, msp) in cfg.msps.iter().enumerate() {
        let name = |f: &str| format!("msps[{n}].{f}");
        if msp.id != n {
            fail(name("id"), "must equal list position");
        }
        for (f, v) in [
            ("tau", msp.tau),
            ("payload_bits", msp.payload_bits),
            ("profit_coef", msp.profit_coef),
            ("epsilon", msp.epsilon),
            ("eta", msp.eta),
            ("price_min", msp.price_min),
        ] {
            if !pos(v) {
                fail(name(f), "must be positive");
            }
        }
        if !(msp.price_max.is_finite() && msp.price_min < msp.price_max) {
            fail(name("price_max"), "price bounds must satisfy p_min < p_max");
        }
        if pos(cfg.period) && pos(msp.tau) && cfg.period < msp.tau {
            fail(name("tau"), "no round fits in the period (T < tau)");
        }
    }

    let (m_count, n_count) = (cfg.mus.len(), cfg.msps.len());
    if cfg.omega.rows() != m_count || cfg.omega.cols() != n_count {
        fail("omega".into(), "shape must be M x N");
    } else if cfg.omega.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
        fail("omega".into(), "entries must be finite and non-negative");
    }
    if let Some(p) = &cfg.payload_override {
        if p.rows() != m_count || p.cols() != n_count {
            fail("payload_override".into(), "shape must be M x N");
        } else if p.iter().any(|&v| !pos(v)) {
            fail("payload_override".into(), "entries must be positive");
        }
    }
    let [lo, hi] = cfg.sinr_db_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        fail("sinr_db_range".into(), "must be finite with lo <= hi");
    }

    if errs.is_empty() {
        Ok(Market(cfg))
    } else {
        Err(ConfigErrors(errs))
    }
}

/// Converts a decibel value to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Draws one SINR per link, uniform in the configured dB range.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &TradingConfig, rng: &mut R) -> ChannelState {
    let [lo, hi] = cfg.sinr_db_range;
    let sinr = Matrix::from_fn(cfg.num_mus(), cfg.num_msps(), |_, _| {
        let d = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        db_to_linear(d)
    });
    ChannelState {
        sinr,
        mode: cfg.channel_mode,
    }
}

/// The channel a static run uses: one draw from the stream seeded by the
/// config's own seed.
pub fn initial_channel(cfg: &TradingConfig) -> ChannelState {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_channel(cfg, &mut rng)
}

/// Per-(MU, MSP) follower decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    /// Compute (cycles/s), M x N.
    pub f: Matrix,
    /// Bandwidth (Hz), M x N.
    pub bandwidth: Matrix,
    pub participating: Vec<Vec<bool>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// Total compute and bandwidth stay below the MU's maxima.
    Capacity,
    /// A participating pair trains and uploads within the task deadline.
    Deadline,
    /// Compute left over keeps the MU's own service within its latency bound.
    BasicService,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::Capacity => "capacity",
            Constraint::Deadline => "deadline",
            Constraint::BasicService => "basic-service latency",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("allocation violates {constraint} for MU {mu}: {detail}")]
pub struct AllocationViolation {
    pub constraint: Constraint,
    pub mu: usize,
    pub detail: String,
}

impl Allocation {
    pub fn empty(m: usize, n: usize) -> Self {
        Self {
            f: Matrix::zeros(m, n),
            bandwidth: Matrix::zeros(m, n),
            participating: vec![vec![false; n]; m],
        }
    }

    /// Checks capacity and basic-service latency on every row, the deadline on
    /// every participating pair, and that non-participating pairs hold no
    /// resources.
    pub fn check(
        &self,
        market: &Market,
        channel: &ChannelState,
    ) -> Result<(), AllocationViolation> {
        for m in 0..market.num_mus() {
            check_row(
                market,
                channel,
                m,
                self.f.row(m),
                self.bandwidth.row(m),
                Some(&self.participating[m]),
            )
            .map_err(|(constraint, detail)| AllocationViolation {
                constraint,
                mu: m,
                detail,
            })?;
        }
        Ok(())
    }
}

/// Row-level constraint check. A pair participates when it holds any
/// resource; `flags`, when given, must agree with that.
pub(crate) fn check_row(
    market: &Market,
    channel: &ChannelState,
    m: usize,
    f_row: &[f64],
    b_row: &[f64],
    flags: Option<&[bool]>,
) -> Result<(), (Constraint, String)> {
    let mu = &market.mus[m];
    let sum_f: f64 = f_row.iter().sum();
    let sum_b: f64 = b_row.iter().sum();
    if f_row
        .iter()
        .chain(b_row)
        .any(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err((
            Constraint::Capacity,
            "negative or non-finite resource".into(),
        ));
    }
    if !(sum_f < mu.f_max) || !(sum_b < mu.bandwidth_max) {
        return Err((
            Constraint::Capacity,
            format!("sum f = {sum_f}, sum B = {sum_b}"),
        ));
    }
    if !(mu.basic_compute / (mu.f_max - sum_f) < mu.latency_req) {
        return Err((Constraint::BasicService, format!("sum f = {sum_f}")));
    }
    for n in 0..market.num_msps() {
        let (f, b) = (f_row[n], b_row[n]);
        let active = f > 0.0 || b > 0.0;
        if let Some(flags) = flags {
            if flags[n] != active {
                return Err((
                    Constraint::Deadline,
                    format!("pair {n}: participation flag disagrees with resources"),
                ));
            }
        }
        if active {
            let tau = market.msps[n].tau;
            let t_c = mu.iteration_factor() * mu.data_rate * tau / f;
            let t_t = market.payload(m, n) / (b * channel.spectral_efficiency(m, n));
            if !(t_c + t_t <= tau) {
                return Err((
                    Constraint::Deadline,
                    format!("pair {n}: T_c + T_t = {} > tau = {tau}", t_c + t_t),
                ));
            }
        }
    }
    Ok(())
}

/// Reward per unit IoM posted by each MSP to each MU (N x M).
#[derive(Clone, Debug, PartialEq)]
pub struct PriceMatrix {
    pub p: Matrix,
}

impl PriceMatrix {
    pub fn new(p: Matrix) -> Self {
        Self { p }
    }

    /// Every MSP posts the midpoint of its bounds to every MU.
    pub fn midpoint(market: &Market) -> Self {
        Self::new(Matrix::from_fn(
            market.num_msps(),
            market.num_mus(),
            |n, _| 0.5 * (market.msps[n].price_min + market.msps[n].price_max),
        ))
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.p[(n, m)]
    }

    pub fn msp_row(&self, n: usize) -> &[f64] {
        self.p.row(n)
    }

    /// Prices seen by MU `m`, one per MSP.
    pub fn mu_prices(&self, m: usize) -> Vec<f64> {
        self.p.column(m)
    }

    pub fn within_bounds(&self, market: &Market) -> bool {
        (0..market.num_msps()).all(|n| {
            let msp = &market.msps[n];
            self.msp_row(n)
                .iter()
                .all(|&p| p > 0.0 && p >= msp.price_min && p <= msp.price_max)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_config() -> TradingConfig {
        TradingConfig {
            period: 30.0,
            mus: vec![MuProfile {
                id: 0,
                f_max: 4e9,
                bandwidth_max: 2e6,
                cost_compute: 1e-9,
                cost_bandwidth: 1e-6,
                data_rate: 1e8,
                theta: 0.3,
                basic_compute: 1e9,
                latency_req: 1.0,
                tx_power: 0.2,
            }],
            msps: vec![MspProfile {
                id: 0,
                tau: 2.0,
                payload_bits: 3e5,
                profit_coef: 100.0,
                epsilon: 1.0,
                eta: 1e-6,
                price_min: 0.1,
                price_max: 10.0,
            }],
            sinr_db_range: [0.0, 10.0],
            channel_mode: ChannelMode::Static,
            seed: 7,
            omega: Matrix::filled(1, 1, 0.2),
            payload_override: None,
        }
    }

    #[test]
    fn valid_toy_config_passes() {
        assert!(validate_config(toy_config()).is_ok());
    }

    #[test]
    fn theta_outside_unit_interval_is_rejected() {
        let mut cfg = toy_config();
        cfg.mus[0].theta = 1.2;
        let err = validate_config(cfg).unwrap_err();
        assert!(err.mentions("theta out of (0,1)"));
    }

    #[test]
    fn basic_service_demand_at_capacity_is_c3_infeasible() {
        let mut cfg = toy_config();
        cfg.mus[0].basic_compute = cfg.mus[0].latency_req * cfg.mus[0].f_max;
        let err = validate_config(cfg).unwrap_err();
        assert!(err.mentions("basic-service latency infeasible"));
    }

    #[test]
    fn every_violation_is_reported() {
        let mut cfg = toy_config();
        cfg.mus[0].theta = 0.0;
        cfg.msps[0].price_min = 20.0;
        cfg.period = 1.0;
        let err = validate_config(cfg).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }

    #[test]
    fn db_identities() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn channel_sampling_is_deterministic_and_in_range() {
        let cfg = toy_config();
        let a = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_channel(&cfg, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        let v = a.sinr(0, 0);
        assert!((1.0..=10.0).contains(&v));
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        assert!(Matrix::try_from(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
