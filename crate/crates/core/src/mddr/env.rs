//! Stage-game environment: MSPs post prices, MUs respond, MSPs observe IoM.

use rand_chacha::ChaCha8Rng;

use crate::equilibrium::{evaluate_prices, AnalyticFollower, MarketOutcome};
use crate::market::{sample_channel, ChannelMode, ChannelState, Market, PriceMatrix};

/// Result of one stage game.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    /// One IoM vector (length M) per MSP.
    pub observations: Vec<Vec<f64>>,
    /// `Psi_n` per MSP.
    pub utilities: Vec<f64>,
    pub outcome: MarketOutcome,
}

pub struct Env<'a> {
    market: &'a Market,
    channel: ChannelState,
    mode: ChannelMode,
    rng: ChaCha8Rng,
}

fn observations(outcome: &MarketOutcome, num_msps: usize) -> Vec<Vec<f64>> {
    (0..num_msps).map(|n| outcome.values.column(n)).collect()
}

impl<'a> Env<'a> {
    /// `channel` is used as-is in static mode and as the first draw in
    /// dynamic mode; `rng` drives later redraws.
    pub fn new(
        market: &'a Market,
        channel: ChannelState,
        mode: ChannelMode,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            market,
            channel,
            mode,
            rng,
        }
    }

    pub fn market(&self) -> &Market {
        self.market
    }

    pub fn channel(&self) -> &ChannelState {
        &self.channel
    }

    fn redraw(&mut self) {
        if self.mode == ChannelMode::Dynamic {
            self.channel = sample_channel(self.market.config(), &mut self.rng);
            self.channel.mode = ChannelMode::Dynamic;
        }
    }

    /// Starts an episode: every MSP posts the midpoint of its price range.
    pub fn reset(&mut self) -> Vec<Vec<f64>> {
        self.redraw();
        let oracle = AnalyticFollower::new(self.market, &self.channel);
        let outcome = evaluate_prices(&oracle, &PriceMatrix::midpoint(self.market));
        observations(&outcome, self.market.num_msps())
    }

    /// Plays one stage at the current channel, then redraws the channel in
    /// dynamic mode.
    pub fn step(&mut self, prices: &PriceMatrix) -> Step {
        let oracle = AnalyticFollower::new(self.market, &self.channel);
        let outcome = evaluate_prices(&oracle, prices);
        let step = Step {
            observations: observations(&outcome, self.market.num_msps()),
            utilities: outcome.msp_utilities.clone(),
            outcome,
        };
        self.redraw();
        step
    }
}
