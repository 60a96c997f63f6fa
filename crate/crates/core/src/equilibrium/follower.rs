//! Lower level: each MU's best response to the posted rewards.

use crate::iom::PairTerms;
use crate::market::{ChannelState, Market};

use super::EquilibriumError;

/// Which case of the KKT solution a pair sits in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Deadline slack, `delta = 0`.
    Interior,
    /// Deadline active, `delta = F^2 - p I > 0`.
    DeadlineBound,
    /// No participation; `f = B = 0`.
    Withheld,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FollowerResponse {
    pub f: f64,
    pub bandwidth: f64,
    pub branch: Branch,
    /// Multiplier of the pair's deadline constraint.
    pub delta: f64,
    /// Threshold aggregate `F`; the branches meet at `p = F^2 / I`.
    pub threshold: f64,
}

impl FollowerResponse {
    fn withheld(threshold: f64) -> Self {
        Self {
            f: 0.0,
            bandwidth: 0.0,
            branch: Branch::Withheld,
            delta: 0.0,
            threshold,
        }
    }

    pub fn participating(&self) -> bool {
        self.branch != Branch::Withheld
    }

    /// IoM delivered by this response (zero when withheld).
    pub fn value(&self, terms: &PairTerms) -> f64 {
        if self.participating() {
            terms.value(self.f, self.bandwidth)
        } else {
            0.0
        }
    }
}

/// One MU's responses to all MSPs.
#[derive(Clone, Debug, PartialEq)]
pub struct FollowerOutcome {
    pub responses: Vec<FollowerResponse>,
    /// True when the per-pair closed forms overran a budget and the coupled
    /// program was solved instead.
    pub coupled: bool,
    /// Shared multiplier on the compute budget (the basic-service limit, tighter than capacity).
    pub compute_multiplier: f64,
    /// Multiplier on the bandwidth budget.
    pub bandwidth_multiplier: f64,
}

impl FollowerOutcome {
    pub fn f_row(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.f).collect()
    }

    pub fn bandwidth_row(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.bandwidth).collect()
    }
}

/// `F = (sqrt(work * c_f ln(1/theta)) + sqrt(b c_B / log2(1+sinr))) / tau`.
pub fn threshold_aggregate(t: &PairTerms) -> f64 {
    ((t.work * t.compute_price).sqrt() + (t.upload_load * t.bandwidth_price).sqrt()) / t.tau
}

fn interior_point(t: &PairTerms, price: f64) -> (f64, f64) {
    let pi = price * t.contribution;
    (
        (pi * t.work / t.compute_price).sqrt(),
        (pi * t.upload_load / t.bandwidth_price).sqrt(),
    )
}

/// Stationary point of the pair's Lagrangian by the branch rule, before the
/// participation filter is applied.
pub fn kkt_point(t: &PairTerms, price: f64) -> FollowerResponse {
    let threshold = threshold_aggregate(t);
    let pi = price * t.contribution;
    if !(pi > 0.0) {
        return FollowerResponse::withheld(threshold);
    }
    if pi >= threshold * threshold {
        let (f, bandwidth) = interior_point(t, price);
        FollowerResponse {
            f,
            bandwidth,
            branch: Branch::Interior,
            delta: 0.0,
            threshold,
        }
    } else {
        FollowerResponse {
            f: threshold * (t.work / t.compute_price).sqrt(),
            bandwidth: threshold * (t.upload_load / t.bandwidth_price).sqrt(),
            branch: Branch::DeadlineBound,
            delta: threshold * threshold - pi,
            threshold,
        }
    }
}

/// Withholds the pair unless it yields positive IoM and positive net utility.
pub fn participation_filter(t: &PairTerms, price: f64, r: FollowerResponse) -> FollowerResponse {
    if r.branch == Branch::Withheld || !(price > 0.0) {
        return FollowerResponse::withheld(r.threshold);
    }
    let v = t.value(r.f, r.bandwidth);
    let net = price * v - t.cost(r.f, r.bandwidth);
    if v > 0.0 && net > 0.0 {
        r
    } else {
        FollowerResponse::withheld(r.threshold)
    }
}

/// Pair constants of MU `m` towards every MSP.
pub fn mu_terms(market: &Market, channel: &ChannelState, m: usize) -> Vec<PairTerms> {
    (0..market.num_msps())
        .map(|n| PairTerms::new(market, channel, m, n))
        .collect()
}

/// Closed-form best response of MU `m`; falls back to the coupled program
/// when the decoupled answers break the aggregate budgets.
pub fn follower_best_response(
    market: &Market,
    channel: &ChannelState,
    m: usize,
    prices_row: &[f64],
) -> FollowerOutcome {
    let terms = mu_terms(market, channel, m);
    best_response_from_terms(market, m, &terms, prices_row)
}

pub(crate) fn best_response_from_terms(
    market: &Market,
    m: usize,
    terms: &[PairTerms],
    prices_row: &[f64],
) -> FollowerOutcome {
    let responses: Vec<FollowerResponse> = terms
        .iter()
        .zip(prices_row)
        .map(|(t, &p)| participation_filter(t, p, kkt_point(t, p)))
        .collect();
    let mu = &market.mus[m];
    let sum_f: f64 = responses.iter().map(|r| r.f).sum();
    let sum_b: f64 = responses.iter().map(|r| r.bandwidth).sum();
    if sum_f <= mu.compute_cap() && sum_b <= mu.bandwidth_cap() {
        return FollowerOutcome {
            responses,
            coupled: false,
            compute_multiplier: 0.0,
            bandwidth_multiplier: 0.0,
        };
    }
    coupled_from_terms(market, m, terms, prices_row)
}

/// Exact solution of the coupled program (compute or bandwidth budget binding).
///
/// For a fixed participation set the stationarity conditions with a shared
/// budget multiplier give `f_n = sqrt(p_n I_n work_n / (c_f ln(1/theta) + lambda))`;
/// since the price denominator is common to every MSP, the optimum is the
/// decoupled closed form shrunk by one factor per resource. The participation
/// set is chosen by enumeration.
pub fn coupled_best_response(
    market: &Market,
    channel: &ChannelState,
    m: usize,
    prices_row: &[f64],
) -> FollowerOutcome {
    let terms = mu_terms(market, channel, m);
    coupled_from_terms(market, m, &terms, prices_row)
}

struct SubsetSolution {
    f: Vec<f64>,
    bandwidth: Vec<f64>,
    utility: f64,
    compute_multiplier: f64,
    bandwidth_multiplier: f64,
}

fn solve_subset_exact(
    terms: &[PairTerms],
    prices: &[f64],
    members: &[usize],
    cap_f: f64,
    cap_b: f64,
) -> Option<SubsetSolution> {
    let n = terms.len();
    let mut f = vec![0.0; n];
    let mut bw = vec![0.0; n];
    for &i in members {
        let (fi, bi) = interior_point(&terms[i], prices[i]);
        f[i] = fi;
        bw[i] = bi;
    }
    let sum_f: f64 = f.iter().sum();
    let sum_b: f64 = bw.iter().sum();
    let shrink_f = if sum_f > cap_f { cap_f / sum_f } else { 1.0 };
    let shrink_b = if sum_b > cap_b { cap_b / sum_b } else { 1.0 };
    let mut utility = 0.0;
    for &i in members {
        f[i] *= shrink_f;
        bw[i] *= shrink_b;
        if !(terms[i].value(f[i], bw[i]) > 0.0) {
            return None;
        }
        utility += terms[i].net_utility(prices[i], f[i], bw[i]);
    }
    let cp = terms.first().map_or(0.0, |t| t.compute_price);
    let cb = terms.first().map_or(0.0, |t| t.bandwidth_price);
    Some(SubsetSolution {
        f,
        bandwidth: bw,
        utility,
        compute_multiplier: cp * (1.0 / (shrink_f * shrink_f) - 1.0),
        bandwidth_multiplier: cb * (1.0 / (shrink_b * shrink_b) - 1.0),
    })
}

/// Largest MSP count for which participation sets are enumerated exhaustively.
const MAX_ENUMERATED: usize = 12;

fn best_subset(
    terms: &[PairTerms],
    prices: &[f64],
    mut solve: impl FnMut(&[usize]) -> Option<SubsetSolution>,
) -> Option<SubsetSolution> {
    let candidates: Vec<usize> = (0..terms.len())
        .filter(|&i| prices[i] > 0.0 && terms[i].contribution > 0.0)
        .collect();
    let mut best: Option<SubsetSolution> = None;
    let consider = |s: Option<SubsetSolution>, best: &mut Option<SubsetSolution>| {
        if let Some(s) = s {
            if s.utility > 0.0 && best.as_ref().is_none_or(|b| s.utility > b.utility) {
                *best = Some(s);
            }
        }
    };
    if candidates.len() <= MAX_ENUMERATED {
        for mask in 1u32..(1u32 << candidates.len()) {
            let members: Vec<usize> = candidates
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &i)| i)
                .collect();
            let s = solve(&members);
            consider(s, &mut best);
        }
    } else {
        // Greedy elimination: drop the weakest pair until every member is
        // individually worthwhile.
        let mut members = candidates;
        while !members.is_empty() {
            match solve(&members) {
                Some(s) => {
                    let worst = members
                        .iter()
                        .map(|&i| (i, terms[i].net_utility(prices[i], s.f[i], s.bandwidth[i])))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .expect("non-empty");
                    if worst.1 > 0.0 {
                        consider(Some(s), &mut best);
                        break;
                    }
                    members.retain(|&i| i != worst.0);
                }
                None => {
                    let worst = members
                        .iter()
                        .copied()
                        .min_by(|&a, &b| {
                            (prices[a] * terms[a].contribution)
                                .total_cmp(&(prices[b] * terms[b].contribution))
                        })
                        .expect("non-empty");
                    members.retain(|&i| i != worst);
                }
            }
        }
    }
    best
}

fn outcome_from_subset(terms: &[PairTerms], best: Option<SubsetSolution>) -> FollowerOutcome {
    let n = terms.len();
    match best {
        Some(s) => FollowerOutcome {
            responses: (0..n)
                .map(|i| {
                    let threshold = threshold_aggregate(&terms[i]);
                    if s.f[i] > 0.0 {
                        FollowerResponse {
                            f: s.f[i],
                            bandwidth: s.bandwidth[i],
                            branch: Branch::Interior,
                            delta: 0.0,
                            threshold,
                        }
                    } else {
                        FollowerResponse::withheld(threshold)
                    }
                })
                .collect(),
            coupled: true,
            compute_multiplier: s.compute_multiplier,
            bandwidth_multiplier: s.bandwidth_multiplier,
        },
        None => FollowerOutcome {
            responses: terms
                .iter()
                .map(|t| FollowerResponse::withheld(threshold_aggregate(t)))
                .collect(),
            coupled: true,
            compute_multiplier: 0.0,
            bandwidth_multiplier: 0.0,
        },
    }
}

fn coupled_from_terms(
    market: &Market,
    m: usize,
    terms: &[PairTerms],
    prices: &[f64],
) -> FollowerOutcome {
    let mu = &market.mus[m];
    let (cap_f, cap_b) = (mu.compute_cap(), mu.bandwidth_cap());
    let best = best_subset(terms, prices, |members| {
        solve_subset_exact(terms, prices, members, cap_f, cap_b)
    });
    outcome_from_subset(terms, best)
}

/// Projected-gradient ascent on MU `m`'s utility over the coupled feasible
/// set, one participation set at a time.
///
/// Iterates live in budget-normalized coordinates `(f / cap_f, B / cap_B)`.
/// A pair can only participate with `T_c + T_t < tau / 2`, so each member is
/// confined to `T_c <= tau/2`, `T_t <= tau/2`, a subset of the deadline constraint that still
/// contains every admissible optimum. The stopping rule is on the projected
/// gradient of the utility divided by `max(1, |utility|)`.
pub fn projected_gradient_follower(
    market: &Market,
    channel: &ChannelState,
    m: usize,
    prices_row: &[f64],
    step: f64,
    max_iters: usize,
) -> Result<FollowerOutcome, EquilibriumError> {
    let mu = &market.mus[m];
    if !(mu.basic_compute < mu.latency_req * mu.f_max) {
        return Err(EquilibriumError::NoFeasiblePoint(m));
    }
    let terms = mu_terms(market, channel, m);
    let (cap_f, cap_b) = (mu.compute_cap(), mu.bandwidth_cap());
    let best = best_subset(&terms, prices_row, |members| {
        pg_subset(&terms, prices_row, members, cap_f, cap_b, step, max_iters)
    });
    let mut out = outcome_from_subset(&terms, best);
    let sum_f: f64 = out.responses.iter().map(|r| r.f).sum();
    let sum_b: f64 = out.responses.iter().map(|r| r.bandwidth).sum();
    out.coupled = sum_f >= cap_f * (1.0 - 1e-6) || sum_b >= cap_b * (1.0 - 1e-6);
    Ok(out)
}

/// Euclidean projection onto `{sum u <= total, u_i >= lower_i}`.
fn project_capped(v: &mut [f64], lower: &[f64], total: f64) {
    let clipped: f64 = v.iter().zip(lower).map(|(x, l)| x.max(*l)).sum();
    if clipped <= total {
        for (x, l) in v.iter_mut().zip(lower) {
            *x = x.max(*l);
        }
        return;
    }
    let (mut lo, mut hi) = (
        0.0,
        v.iter().zip(lower).map(|(x, l)| x - l).fold(0.0, f64::max),
    );
    for _ in 0..200 {
        let nu = 0.5 * (lo + hi);
        let s: f64 = v.iter().zip(lower).map(|(x, l)| (x - nu).max(*l)).sum();
        if s > total {
            lo = nu;
        } else {
            hi = nu;
        }
    }
    for (x, l) in v.iter_mut().zip(lower) {
        *x = (*x - hi).max(*l);
    }
}

fn pg_subset(
    terms: &[PairTerms],
    prices: &[f64],
    members: &[usize],
    cap_f: f64,
    cap_b: f64,
    step: f64,
    max_iters: usize,
) -> Option<SubsetSolution> {
    let k = members.len();
    let lower_f: Vec<f64> = members
        .iter()
        .map(|&i| 2.0 * terms[i].work / terms[i].tau / cap_f)
        .collect();
    let lower_b: Vec<f64> = members
        .iter()
        .map(|&i| 2.0 * terms[i].upload_load / terms[i].tau / cap_b)
        .collect();
    if lower_f.iter().sum::<f64>() >= 1.0 || lower_b.iter().sum::<f64>() >= 1.0 {
        return None;
    }

    let objective = |x: &[f64]| -> f64 {
        members
            .iter()
            .enumerate()
            .map(|(j, &i)| terms[i].net_utility(prices[i], x[j] * cap_f, x[k + j] * cap_b))
            .sum()
    };
    let gradient = |x: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; 2 * k];
        for (j, &i) in members.iter().enumerate() {
            let t = &terms[i];
            let pi = prices[i] * t.contribution;
            let (f, b) = (x[j] * cap_f, x[k + j] * cap_b);
            g[j] = (pi * t.work / (f * f) - t.compute_price) * cap_f;
            g[k + j] = (pi * t.upload_load / (b * b) - t.bandwidth_price) * cap_b;
        }
        g
    };
    let project = |x: &mut [f64]| {
        let (xf, xb) = x.split_at_mut(k);
        project_capped(xf, &lower_f, 1.0);
        project_capped(xb, &lower_b, 1.0);
    };

    // Start at the centre of the slack left over the lower bounds.
    let mut x = vec![0.0; 2 * k];
    let slack_f = 1.0 - lower_f.iter().sum::<f64>();
    let slack_b = 1.0 - lower_b.iter().sum::<f64>();
    for j in 0..k {
        x[j] = lower_f[j] + 0.5 * slack_f / k as f64;
        x[k + j] = lower_b[j] + 0.5 * slack_b / k as f64;
    }
    let mut fx = objective(&x);
    let mut g = gradient(&x);
    let mut alpha = step;
    for _ in 0..max_iters {
        let scale = fx.abs().max(1.0);
        let mut probe: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + gi / scale).collect();
        project(&mut probe);
        let pg_norm = probe
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if pg_norm < 1e-8 {
            break;
        }
        // Backtracking along the projected direction.
        let mut s = alpha;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + s * gi).collect();
            project(&mut cand);
            let fc = objective(&cand);
            let ascent: f64 = cand
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((c, xi), gi)| gi * (c - xi))
                .sum();
            if fc.is_finite() && fc >= fx + 1e-4 * ascent {
                accepted = Some((cand, fc));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let g_new = gradient(&cand);
        // Barzilai-Borwein step for the next iteration.
        let sy: f64 = cand
            .iter()
            .zip(&x)
            .zip(g_new.iter().zip(&g))
            .map(|((c, xi), (gn, go))| (c - xi) * (go - gn))
            .sum();
        let ss: f64 = cand.iter().zip(&x).map(|(c, xi)| (c - xi) * (c - xi)).sum();
        alpha = if sy > 0.0 {
            (ss / sy).clamp(1e-16, 1e6)
        } else {
            step
        };
        x = cand;
        fx = fc;
        g = g_new;
    }

    let n = terms.len();
    let mut f = vec![0.0; n];
    let mut bw = vec![0.0; n];
    for (j, &i) in members.iter().enumerate() {
        f[i] = x[j] * cap_f;
        bw[i] = x[k + j] * cap_b;
        if !(terms[i].value(f[i], bw[i]) > 0.0) {
            return None;
        }
    }
    Some(SubsetSolution {
        f,
        bandwidth: bw,
        utility: fx,
        compute_multiplier: 0.0,
        bandwidth_multiplier: 0.0,
    })
}
