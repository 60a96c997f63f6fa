//! Immersion of the learning model (IoM): potential value, contribution
//! prediction, training and upload times, age of information, and the IoM
//! value itself. Everything here is a pure function.

use crate::market::{ChannelState, Market};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum IomError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("negative age: t = {t} precedes generation time {generated}")]
    NegativeAge { t: f64, generated: f64 },
}

/// Mean squared difference between predictions and labels.
pub fn potential_value(predictions: &[f64], labels: &[f64]) -> Result<f64, IomError> {
    if predictions.len() != labels.len() {
        return Err(IomError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(IomError::EmptyDataset);
    }
    let sse: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, z)| (p - z) * (p - z))
        .sum();
    Ok(sse / predictions.len() as f64)
}

/// Contribution prediction `I = omega * eps * ln(1 + eta * floor(T/tau) * x * tau) / theta`.
pub fn contribution_prediction(
    omega: f64,
    theta: f64,
    x: f64,
    tau: f64,
    period: f64,
    epsilon: f64,
    eta: f64,
) -> Result<f64, IomError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(IomError::Domain(format!("theta = {theta} outside (0,1)")));
    }
    if !(tau > 0.0 && tau <= period) {
        return Err(IomError::Domain(format!(
            "tau = {tau} must lie in (0, T = {period}]"
        )));
    }
    let rounds = (period / tau).floor();
    let samples = rounds * x * tau;
    Ok(omega * epsilon * (1.0 + eta * samples).ln() / theta)
}

/// Cumulative local training time `ln(1/theta) * x * tau / f`.
pub fn local_training_time(theta: f64, x: f64, tau: f64, f: f64) -> Result<f64, IomError> {
    if !(f > 0.0) {
        return Err(IomError::Domain(format!(
            "compute f = {f} must be positive"
        )));
    }
    Ok((1.0 / theta).ln() * x * tau / f)
}

/// Upload time `b / (B * log2(1 + sinr))`.
pub fn upload_time(payload_bits: f64, bandwidth: f64, sinr: f64) -> Result<f64, IomError> {
    if !(bandwidth > 0.0) {
        return Err(IomError::Domain(format!(
            "bandwidth {bandwidth} must be positive"
        )));
    }
    if !(sinr > 0.0) {
        return Err(IomError::Domain(format!("sinr {sinr} must be positive")));
    }
    Ok(payload_bits / (bandwidth * (1.0 + sinr).log2()))
}

/// Long-run average AoI of a synchronous task with deadline `tau`.
pub fn average_aoi(tau: f64, t_c: f64, t_t: f64) -> f64 {
    0.5 * tau + t_c + t_t
}

pub fn instantaneous_aoi(t: f64, last_generation_time: f64) -> Result<f64, IomError> {
    if t < last_generation_time {
        return Err(IomError::NegativeAge {
            t,
            generated: last_generation_time,
        });
    }
    Ok(t - last_generation_time)
}

/// `V = I * (tau - avg_aoi)`. Non-positive values mean the pair cannot
/// participate.
pub fn iom_value(contribution: f64, tau: f64, avg_aoi: f64) -> f64 {
    contribution * (tau - avg_aoi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IomBreakdown {
    pub omega: f64,
    pub contribution: f64,
    pub t_c: f64,
    pub t_t: f64,
    pub avg_aoi: f64,
    pub value: f64,
}

impl IomBreakdown {
    pub fn participating(&self) -> bool {
        self.value > 0.0
    }
}

/// Full IoM breakdown of pair (m, n) under the given resources.
pub fn breakdown(
    market: &Market,
    channel: &ChannelState,
    m: usize,
    n: usize,
    f: f64,
    bandwidth: f64,
) -> Result<IomBreakdown, IomError> {
    let mu = &market.mus[m];
    let msp = &market.msps[n];
    let omega = market.omega(m, n);
    let contribution = contribution_prediction(
        omega,
        mu.theta,
        mu.data_rate,
        msp.tau,
        market.period,
        msp.epsilon,
        msp.eta,
    )?;
    let t_c = local_training_time(mu.theta, mu.data_rate, msp.tau, f)?;
    let t_t = upload_time(market.payload(m, n), bandwidth, channel.sinr(m, n))?;
    let avg_aoi = average_aoi(msp.tau, t_c, t_t);
    Ok(IomBreakdown {
        omega,
        contribution,
        t_c,
        t_t,
        avg_aoi,
        value: iom_value(contribution, msp.tau, avg_aoi),
    })
}

/// Constants of one (MU, MSP) pair, arranged so that
/// `T_c = work / f`, `T_t = upload_load / B`, and the MU's cost is
/// `compute_price * f + bandwidth_price * B`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTerms {
    pub tau: f64,
    pub contribution: f64,
    /// `ln(1/theta) * x * tau` (cycles).
    pub work: f64,
    /// `b / log2(1 + sinr)` (Hz * s).
    pub upload_load: f64,
    /// `c_f * ln(1/theta)`.
    pub compute_price: f64,
    /// `c_B`.
    pub bandwidth_price: f64,
}

impl PairTerms {
    pub fn new(market: &Market, channel: &ChannelState, m: usize, n: usize) -> Self {
        let mu = &market.mus[m];
        let msp = &market.msps[n];
        let contribution = contribution_prediction(
            market.omega(m, n),
            mu.theta,
            mu.data_rate,
            msp.tau,
            market.period,
            msp.epsilon,
            msp.eta,
        )
        .expect("validated market");
        let ln_inv_theta = mu.iteration_factor();
        Self {
            tau: msp.tau,
            contribution,
            work: ln_inv_theta * mu.data_rate * msp.tau,
            upload_load: market.payload(m, n) / channel.spectral_efficiency(m, n),
            compute_price: mu.cost_compute * ln_inv_theta,
            bandwidth_price: mu.cost_bandwidth,
        }
    }

    pub fn training_time(&self, f: f64) -> f64 {
        self.work / f
    }

    pub fn upload_time(&self, bandwidth: f64) -> f64 {
        self.upload_load / bandwidth
    }

    /// IoM value at strictly positive resources.
    pub fn value(&self, f: f64, bandwidth: f64) -> f64 {
        let avg = average_aoi(self.tau, self.training_time(f), self.upload_time(bandwidth));
        iom_value(self.contribution, self.tau, avg)
    }

    pub fn cost(&self, f: f64, bandwidth: f64) -> f64 {
        self.compute_price * f + self.bandwidth_price * bandwidth
    }

    /// `p * V - C`, zero for an idle pair.
    pub fn net_utility(&self, price: f64, f: f64, bandwidth: f64) -> f64 {
        if f == 0.0 && bandwidth == 0.0 {
            return 0.0;
        }
        price * self.value(f, bandwidth) - self.cost(f, bandwidth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn potential_value_examples() {
        assert_eq!(potential_value(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let pred = [1.0, -1.0, 2.0];
        let zero = [0.0; 3];
        assert_relative_eq!(potential_value(&pred, &zero).unwrap(), 2.0);
        assert_eq!(potential_value(&[], &[]), Err(IomError::EmptyDataset));
        assert_eq!(
            potential_value(&[1.0], &[1.0, 2.0]),
            Err(IomError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn potential_value_matches_two_pass_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let mut diffs = Vec::new();
        for i in 0..a.len() {
            diffs.push(a[i] - b[i]);
        }
        let mut acc = 0.0;
        for d in &diffs {
            acc += d * d;
        }
        assert_relative_eq!(
            potential_value(&a, &b).unwrap(),
            acc / 100.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn contribution_prediction_examples() {
        assert_eq!(
            contribution_prediction(0.0, 0.5, 4.0, 2.0, 4.0, 0.5, 1.0).unwrap(),
            0.0
        );
        assert_eq!(
            contribution_prediction(2.0, 0.5, 4.0, 2.0, 4.0, 0.5, 0.0).unwrap(),
            0.0
        );
        let i = contribution_prediction(2.0, 0.5, 4.0, 2.0, 4.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(i, 2.0 * 17f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(i, 5.6664, epsilon = 1e-4);
    }

    #[test]
    fn contribution_prediction_domain_errors() {
        assert!(contribution_prediction(1.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0).is_err());
        assert!(contribution_prediction(1.0, 0.5, 1.0, 3.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn training_time_examples() {
        let e = std::f64::consts::E;
        assert_relative_eq!(
            local_training_time(1.0 / e, 2.0, 4.0, 8.0).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert!(local_training_time(0.999_999, 2.0, 4.0, 8.0).unwrap() < 1e-5);
        assert_relative_eq!(
            local_training_time(0.5, 3.0, 2.0, 6.0).unwrap(),
            2f64.ln(),
            max_relative = 1e-14
        );
        assert!(local_training_time(0.5, 3.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn upload_time_examples() {
        assert_relative_eq!(upload_time(3.0, 1.0, 3.0).unwrap(), 1.5);
        assert_relative_eq!(upload_time(5.0, 5.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(upload_time(1e6, 2e5, 5.0).unwrap(), 1.9342, epsilon = 1e-4);
        assert!(upload_time(1.0, 0.0, 1.0).is_err());
        assert!(upload_time(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn aoi_examples() {
        assert_eq!(average_aoi(4.0, 0.0, 0.0), 2.0);
        assert_eq!(average_aoi(4.0, 1.0, 1.5), 4.5);
        assert_eq!(instantaneous_aoi(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(instantaneous_aoi(7.0, 3.0).unwrap(), 4.0);
        assert!(matches!(
            instantaneous_aoi(2.0, 3.0),
            Err(IomError::NegativeAge { .. })
        ));
    }

    #[test]
    fn iom_value_examples() {
        assert_eq!(iom_value(2.0, 4.0, 4.5), -1.0);
        assert_eq!(iom_value(2.0, 4.0, 4.0), 0.0);
        let i = 2.0 * 17f64.ln();
        assert_relative_eq!(iom_value(i, 4.0, 3.0), 5.6664, epsilon = 1e-4);
    }

    #[test]
    fn iom_strictly_increasing_in_resources() {
        let t = PairTerms {
            tau: 2.0,
            contribution: 3.0,
            work: 1e9,
            upload_load: 2e5,
            compute_price: 1e-9,
            bandwidth_price: 1e-6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let f = rng.random_range(1e8..4e9);
            let b = rng.random_range(1e4..4e6);
            assert!(t.value(f * 1.01, b) > t.value(f, b));
            assert!(t.value(f, b * 1.01) > t.value(f, b));
        }
    }

    mod properties {
        use proptest::prelude::*;

        use super::super::*;

        proptest! {
            #[test]
            fn contribution_grows_with_data_rate(
                omega in 0.01f64..1.0,
                theta in 0.05f64..0.95,
                x in 1e3f64..1e8,
                tau in 0.5f64..5.0,
            ) {
                let i = |x: f64| contribution_prediction(omega, theta, x, tau, 30.0, 1.0, 1e-6).unwrap();
                prop_assert!(i(x * 1.5) > i(x));
                prop_assert!(i(x) > 0.0);
            }

            #[test]
            fn faster_resources_mean_younger_updates(
                theta in 0.05f64..0.95,
                tau in 0.5f64..5.0,
                f in 1e8f64..5e9,
                b in 1e5f64..4e6,
                sinr in 0.5f64..10.0,
            ) {
                let slow = average_aoi(tau, local_training_time(theta, 1e6, tau, f).unwrap(), upload_time(1e5, b, sinr).unwrap());
                let fast = average_aoi(tau, local_training_time(theta, 1e6, tau, 2.0 * f).unwrap(), upload_time(1e5, 2.0 * b, sinr).unwrap());
                prop_assert!(fast < slow);
                prop_assert!(fast > 0.5 * tau);
            }
        }
    }
}
