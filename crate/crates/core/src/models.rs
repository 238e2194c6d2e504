//! Benchmark model families: the bus-engine replacement model and a
//! storable-goods demand model with three purchase quantities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EVStack, ModelSpec, STOCHASTIC_TOL};

/// Transition used when the engine is replaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusVariant {
    /// Replacement restarts the odometer process: every row is
    /// `(p_1, ..., p_m, 0, ..., 0)`.
    Corrected,
    /// Replacement parks the bus at state 0 for a period: every row is
    /// `(1, 0, ..., 0)`.
    RustOriginalFaulty,
}

impl std::str::FromStr for BusVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(BusVariant::Corrected),
            "rust_original_faulty" => Ok(BusVariant::RustOriginalFaulty),
            other => Err(Error::domain(format!("unknown bus variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusModelConfig {
    pub n_states: usize,
    /// Distribution of the odometer-bin advance `0, 1, ..., m-1` per period.
    pub jump_probs: Vec<f64>,
    pub rc: f64,
    pub theta_cost: f64,
    pub beta: f64,
    pub variant: BusVariant,
}

impl Default for BusModelConfig {
    fn default() -> Self {
        Self {
            n_states: 90,
            jump_probs: vec![0.36, 0.48, 0.16],
            rc: 10.0,
            theta_cost: 2.5,
            beta: 0.9999,
            variant: BusVariant::Corrected,
        }
    }
}

impl BusModelConfig {
    pub fn with_states(n_states: usize) -> Self {
        Self {
            n_states,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.jump_probs.len();
        if m == 0 || m >= self.n_states {
            return Err(Error::domain(format!(
                "need 0 < len(jump_probs) = {m} < n_states = {}",
                self.n_states
            )));
        }
        if self.jump_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::domain("jump_probs must be non-negative"));
        }
        let total: f64 = self.jump_probs.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::domain(format!("jump_probs sum to {total}, not 1")));
        }
        if !(self.rc > 0.0 && self.rc.is_finite()) || !(self.theta_cost > 0.0 && self.theta_cost.is_finite()) {
            return Err(Error::domain("rc and theta_cost must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::domain(format!("beta {} not in [0,1)", self.beta)));
        }
        Ok(())
    }
}

/// Keep transition: from bin `x` the bus advances `i` bins with probability
/// `p_{i+1}`; mass that would run past the last bin piles up there.
fn keep_transition(n: usize, p: &[f64]) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(n, n);
    for x in 0..n {
        for (i, &pi) in p.iter().enumerate() {
            f[(x, (x + i).min(n - 1))] += pi;
        }
    }
    f
}

/// Binary keep/replace model. Choice index 0 keeps the engine, 1 replaces it.
pub fn build_bus_model(cfg: &BusModelConfig) -> Result<ModelSpec> {
    cfg.validate()?;
    let n = cfg.n_states;
    let keep = keep_transition(n, &cfg.jump_probs);
    let replace = match cfg.variant {
        BusVariant::Corrected => DMatrix::from_fn(n, n, |_, y| keep[(0, y)]),
        BusVariant::RustOriginalFaulty => DMatrix::from_fn(n, n, |_, y| if y == 0 { 1.0 } else { 0.0 }),
    };
    let cost = |x: usize| x as f64 / n as f64;
    let utility = DMatrix::from_fn(2, n, |j, x| {
        if j == 0 {
            -cfg.theta_cost * cost(x)
        } else {
            -cfg.rc - cfg.theta_cost * cost(0)
        }
    });
    ModelSpec::new(cfg.beta, utility, vec![keep, replace])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorableGoodsConfig {
    pub inventory_levels: usize,
    pub price_levels: usize,
    /// `price_levels x price_levels`, row-stochastic.
    pub price_transition: Vec<Vec<f64>>,
    pub consumption_utility: f64,
    pub holding_cost: f64,
    pub prices: Vec<f64>,
    pub beta: f64,
}

impl Default for StorableGoodsConfig {
    fn default() -> Self {
        Self {
            inventory_levels: 6,
            price_levels: 2,
            price_transition: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            consumption_utility: 3.0,
            holding_cost: 0.05,
            prices: vec![2.0, 1.0],
            beta: 0.95,
        }
    }
}

impl StorableGoodsConfig {
    /// Default two-price model with `n_states / 2` inventory levels.
    pub fn with_states(n_states: usize) -> Result<Self> {
        let base = Self::default();
        if n_states == 0 || n_states % base.price_levels != 0 {
            return Err(Error::domain(format!(
                "storable-goods state count {n_states} is not a positive multiple of {}",
                base.price_levels
            )));
        }
        Ok(Self {
            inventory_levels: n_states / base.price_levels,
            ..base
        })
    }

    pub fn n_states(&self) -> usize {
        self.inventory_levels * self.price_levels
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.price_levels;
        if self.inventory_levels == 0 || r == 0 {
            return Err(Error::domain("inventory_levels and price_levels must be positive"));
        }
        Error::check_len("prices", r, self.prices.len())?;
        Error::check_len("price_transition rows", r, self.price_transition.len())?;
        for row in &self.price_transition {
            Error::check_len("price_transition columns", r, row.len())?;
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::domain("price_transition entries must lie in [0,1]"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::domain(format!("price_transition row sums to {total}")));
            }
        }
        let finite = [self.consumption_utility, self.holding_cost]
            .iter()
            .chain(self.prices.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("utility parameters must be finite"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::domain(format!("beta {} not in [0,1)", self.beta)));
        }
        Ok(())
    }
}

/// Number of purchase quantities (0, 1 or 2 units).
pub const STORABLE_CHOICES: usize = 3;

/// State index of inventory `i` at price index `r` (inventory-major).
pub fn storable_state(cfg: &StorableGoodsConfig, inventory: usize, price: usize) -> usize {
    inventory * cfg.price_levels + price
}

/// Storable-goods demand model. Choice `b` buys `b` units; one unit is
/// consumed per period when available and the price follows an exogenous
/// Markov chain.
pub fn build_storable_goods_model(cfg: &StorableGoodsConfig) -> Result<ModelSpec> {
    cfg.validate()?;
    let n = cfg.n_states();
    let top = cfg.inventory_levels - 1;
    let mut utility = DMatrix::zeros(STORABLE_CHOICES, n);
    let mut transitions = vec![DMatrix::zeros(n, n); STORABLE_CHOICES];
    for (buy, f) in transitions.iter_mut().enumerate() {
        for i in 0..cfg.inventory_levels {
            let stock = i + buy;
            let consumed = stock >= 1;
            let next = stock.saturating_sub(1).min(top);
            for r in 0..cfg.price_levels {
                let x = storable_state(cfg, i, r);
                utility[(buy, x)] = if consumed { cfg.consumption_utility } else { 0.0 }
                    - cfg.prices[r] * buy as f64
                    - cfg.holding_cost * next as f64;
                for (r2, &q) in cfg.price_transition[r].iter().enumerate() {
                    f[(x, storable_state(cfg, next, r2))] += q;
                }
            }
        }
    }
    ModelSpec::new(cfg.beta, utility, transitions)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusDiagnostics {
    /// `EV_2` is constant across states (within 1e-10).
    pub ev2_constant: bool,
    /// `max_x |EV_2(x) - EV_1(0)| <= 1e-9`, the identity behind the reduced
    /// Newton step.
    pub identity_holds: bool,
    /// `EV_2(0) - EV_1(0)`.
    pub gap: f64,
}

/// Compares the replacement block of a solved bus model with the keep block
/// at state 0.
pub fn bus_ev2_diagnostics(spec: &ModelSpec, solved: &EVStack) -> Result<BusDiagnostics> {
    if spec.n_choices() != 2 {
        return Err(Error::domain("bus diagnostics need a two-choice model"));
    }
    let replace = spec.transition(1);
    let n = spec.n_states();
    let regenerative = (1..n).all(|x| (0..n).all(|y| (replace[(x, y)] - replace[(0, y)]).abs() <= STOCHASTIC_TOL));
    if !regenerative {
        return Err(Error::domain("replacement transition rows differ; not a bus model"));
    }
    Error::check_len("EV blocks", 2, solved.n_choices())?;
    Error::check_len("EV block length", n, solved.n_states())?;

    let ev1_0 = solved.block(0)[0];
    let ev2 = solved.block(1);
    let (lo, hi) = (ev2.min(), ev2.max());
    let identity_gap = ev2.iter().fold(0.0f64, |m, v| m.max((v - ev1_0).abs()));
    Ok(BusDiagnostics {
        ev2_constant: hi - lo <= 1e-10,
        identity_holds: identity_gap <= 1e-9,
        gap: ev2[0] - ev1_0,
    })
}
