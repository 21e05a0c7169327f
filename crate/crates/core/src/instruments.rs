//! Forward-starting payer swaps and the European payer swaption.
//!
//! All dates are integer months. A swap with start `t_alpha` and end
//! `t_beta` pays on months `t_alpha+1 ..= t_beta`, one period apart.

use serde::{Deserialize, Serialize};

use crate::dtafns::{bond_price_at, factor_loadings, FactorState, ModelParams};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapSpec {
    pub t_alpha: u32,
    pub t_beta: u32,
    /// Annualised fixed rate.
    pub strike: f64,
    pub notional: f64,
}

impl SwapSpec {
    pub fn new(t_alpha: u32, t_beta: u32, strike: f64, notional: f64) -> Result<Self> {
        let spec = Self {
            t_alpha,
            t_beta,
            strike,
            notional,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_alpha >= self.t_beta {
            return Err(Error::InvalidDate(format!(
                "swap start {} must precede end {}",
                self.t_alpha, self.t_beta
            )));
        }
        if !self.strike.is_finite() || !self.notional.is_finite() {
            return Err(Error::param("swap", "strike and notional must be finite"));
        }
        Ok(())
    }

    pub fn tenor(&self) -> u32 {
        self.t_beta - self.t_alpha
    }

    fn check_forward_region(&self, t: u32) -> Result<()> {
        self.validate()?;
        if t > self.t_alpha {
            return Err(Error::InvalidDate(format!(
                "valuation month {t} is inside the accrual period starting at {}",
                self.t_alpha
            )));
        }
        Ok(())
    }
}

/// How a hedging swap is dated through the life of the hedge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HedgeInstrumentSpec {
    /// A swap with fixed calendar dates and strike (the swaption's underlying).
    UnderlyingFixedDates { underlying: SwapSpec },
    /// Re-entered at every rebalance as a fresh par swap starting
    /// `start_offset` months later and running `tenor` months.
    RollingParForward {
        start_offset: u32,
        tenor: u32,
        #[serde(default = "unit_notional")]
        notional: f64,
    },
}

fn unit_notional() -> f64 {
    1.0
}

impl HedgeInstrumentSpec {
    pub fn rolling(start_offset: u32, tenor: u32) -> Self {
        HedgeInstrumentSpec::RollingParForward {
            start_offset,
            tenor,
            notional: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HedgeInstrumentSpec::UnderlyingFixedDates { underlying } => underlying.validate(),
            HedgeInstrumentSpec::RollingParForward { start_offset, tenor, .. } => {
                if *start_offset < 1 {
                    return Err(Error::param("start_offset", "rolling swaps must start at least one month ahead"));
                }
                if *tenor < 1 {
                    return Err(Error::param("tenor", "must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Concrete swap held after entering the instrument at `entry`.
    pub fn contract(&self, params: &ModelParams, entry: &FactorState) -> Result<SwapSpec> {
        match *self {
            HedgeInstrumentSpec::UnderlyingFixedDates { underlying } => Ok(underlying),
            HedgeInstrumentSpec::RollingParForward {
                start_offset,
                tenor,
                notional,
            } => {
                let t_alpha = entry.t + start_offset;
                let t_beta = t_alpha + tenor;
                let strike = forward_swap_rate(params, entry, t_alpha, t_beta)?;
                SwapSpec::new(t_alpha, t_beta, strike, notional)
            }
        }
    }
}

/// Value and factor gradient of a swap in its forward region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapQuote {
    pub value: f64,
    pub gradient: Vec3,
}

/// Closed-form swap value and its gradient with respect to the factors.
pub fn pfs_quote(params: &ModelParams, state: &FactorState, spec: &SwapSpec) -> Result<SwapQuote> {
    spec.check_forward_region(state.t)?;
    Ok(pfs_quote_unchecked(params, &state.x, state.t, spec))
}

#[inline]
pub(crate) fn pfs_quote_unchecked(params: &ModelParams, x: &Vec3, t: u32, spec: &SwapSpec) -> SwapQuote {
    let delta = params.delta();
    let a = spec.t_alpha - t;
    let b = spec.t_beta - t;
    let bond = |tau: u32| {
        let l = factor_loadings(params, tau);
        let p = if tau == 0 {
            1.0
        } else {
            let bt = &l.b_tau;
            l.a_tau * (-delta * (bt[0] * x[0] + bt[1] * x[1] + bt[2] * x[2])).exp()
        };
        (p, l.b_tau)
    };
    let (pa, ba) = bond(a);
    let (pb, bb) = bond(b);
    let mut annuity = 0.0;
    let mut weighted = [0.0; 3];
    for tau in a + 1..=b {
        let (p, bl) = bond(tau);
        annuity += p;
        for k in 0..3 {
            weighted[k] += bl[k] * p;
        }
    }
    let n = spec.notional;
    let kd = spec.strike * delta;
    let value = n * (pa - pb) - n * kd * annuity;
    let mut gradient = [0.0; 3];
    for k in 0..3 {
        gradient[k] = -n * delta * (ba[k] * pa - bb[k] * pb - kd * weighted[k]);
    }
    SwapQuote { value, gradient }
}

/// `N(P(t,T_α) − P(t,T_β)) − N K Δ Σ P(t,T_i)`.
pub fn pfs_value(params: &ModelParams, state: &FactorState, spec: &SwapSpec) -> Result<f64> {
    spec.check_forward_region(state.t)?;
    let delta = params.delta();
    let (pa, pb, annuity) = legs(params, &state.x, state.t, spec.t_alpha, spec.t_beta);
    Ok(spec.notional * (pa - pb) - spec.notional * spec.strike * delta * annuity)
}

/// ∂ value / ∂ factor.
pub fn pfs_gradient(params: &ModelParams, state: &FactorState, spec: &SwapSpec) -> Result<Vec3> {
    Ok(pfs_quote(params, state, spec)?.gradient)
}

fn legs(params: &ModelParams, x: &Vec3, t: u32, t_alpha: u32, t_beta: u32) -> (f64, f64, f64) {
    let pa = bond_price_at(params, x, t_alpha - t);
    let pb = bond_price_at(params, x, t_beta - t);
    let annuity: f64 = (t_alpha + 1..=t_beta).map(|ti| bond_price_at(params, x, ti - t)).sum();
    (pa, pb, annuity)
}

/// Par rate of the swap `[t_alpha, t_beta]` seen from `state`.
pub fn forward_swap_rate(params: &ModelParams, state: &FactorState, t_alpha: u32, t_beta: u32) -> Result<f64> {
    if t_alpha >= t_beta {
        return Err(Error::InvalidDate(format!("swap start {t_alpha} must precede end {t_beta}")));
    }
    if state.t > t_alpha {
        return Err(Error::InvalidDate(format!(
            "valuation month {} is after swap start {t_alpha}",
            state.t
        )));
    }
    let (pa, pb, annuity) = legs(params, &state.x, state.t, t_alpha, t_beta);
    Ok((pa - pb) / (params.delta() * annuity))
}

/// At-the-money strike: the forward swap rate at the model origin.
pub fn atm_strike(params: &ModelParams, t_alpha: u32, t_beta: u32) -> Result<f64> {
    forward_swap_rate(params, &FactorState::origin(params), t_alpha, t_beta)
}

/// `N (1 − P(T_α,T_β) − K Δ Σ P(T_α,T_i))⁺`, evaluated at the exercise month.
pub fn swaption_payoff(params: &ModelParams, state_at_t_alpha: &FactorState, spec: &SwapSpec) -> Result<f64> {
    spec.validate()?;
    if state_at_t_alpha.t != spec.t_alpha {
        return Err(Error::InvalidDate(format!(
            "payoff evaluated at month {} instead of exercise month {}",
            state_at_t_alpha.t, spec.t_alpha
        )));
    }
    Ok(payoff_at(params, &state_at_t_alpha.x, spec))
}

#[inline]
pub(crate) fn payoff_at(params: &ModelParams, x: &Vec3, spec: &SwapSpec) -> f64 {
    let tenor = spec.t_beta - spec.t_alpha;
    let (_, pb, annuity) = legs(params, x, 0, 0, tenor);
    let par = spec.notional * (1.0 - pb - spec.strike * params.delta() * annuity);
    par.max(0.0)
}

/// Precomputed payoff evaluator for one tenor, reused across many terminal states.
#[derive(Debug, Clone)]
pub(crate) struct PayoffKernel {
    a: Vec<f64>,
    b: Vec<Vec3>,
    delta: f64,
    strike_delta: f64,
    notional: f64,
}

impl PayoffKernel {
    pub(crate) fn new(params: &ModelParams, spec: &SwapSpec) -> Self {
        let tenor = spec.tenor();
        let (a, b) = (1..=tenor)
            .map(|tau| {
                let l = factor_loadings(params, tau);
                (l.a_tau, l.b_tau)
            })
            .unzip();
        Self {
            a,
            b,
            delta: params.delta(),
            strike_delta: spec.strike * params.delta(),
            notional: spec.notional,
        }
    }

    #[inline]
    pub(crate) fn payoff(&self, x: &Vec3) -> f64 {
        let mut annuity = 0.0;
        let mut last = 0.0;
        for (a, b) in self.a.iter().zip(&self.b) {
            last = a * (-self.delta * (b[0] * x[0] + b[1] * x[1] + b[2] * x[2])).exp();
            annuity += last;
        }
        (self.notional * (1.0 - last - self.strike_delta * annuity)).max(0.0)
    }
}

/// Values and gradients of a list of hedging instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentQuotes {
    pub values: Vec<f64>,
    /// `gradients[j]` is column j of the 3×M sensitivity matrix.
    pub gradients: Vec<Vec3>,
    /// Set for fixed-date instruments whose start date has passed.
    pub expired: Vec<bool>,
}

impl InstrumentQuotes {
    /// Row `k` of the sensitivity matrix (sensitivity of every instrument to factor k).
    pub fn factor_row(&self, k: usize) -> Vec<f64> {
        self.gradients.iter().map(|g| g[k]).collect()
    }
}

/// Quotes each instrument at `state`; rolling swaps are struck at par at `entry_state`.
pub fn instrument_prices_and_grads(
    params: &ModelParams,
    state: &FactorState,
    instruments: &[HedgeInstrumentSpec],
    entry_state: &FactorState,
) -> Result<InstrumentQuotes> {
    if entry_state.t > state.t {
        return Err(Error::InvalidDate(format!(
            "entry month {} after valuation month {}",
            entry_state.t, state.t
        )));
    }
    let m = instruments.len();
    let mut quotes = InstrumentQuotes {
        values: Vec::with_capacity(m),
        gradients: Vec::with_capacity(m),
        expired: Vec::with_capacity(m),
    };
    for inst in instruments {
        inst.validate()?;
        let contract = inst.contract(params, entry_state)?;
        if state.t > contract.t_alpha {
            quotes.values.push(0.0);
            quotes.gradients.push([0.0; 3]);
            quotes.expired.push(true);
            continue;
        }
        let q = pfs_quote_unchecked(params, &state.x, state.t, &contract);
        quotes.values.push(q.value);
        quotes.gradients.push(q.gradient);
        quotes.expired.push(false);
    }
    Ok(quotes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtafns::{bond_price, ParamValues};
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::published()
    }

    fn underlying(k: f64) -> SwapSpec {
        SwapSpec::new(60, 180, k, 1.0).unwrap()
    }

    #[test]
    fn atm_strike_near_published_value() {
        let k = atm_strike(&params(), 60, 180).unwrap();
        assert!((k - 0.025083).abs() < 5e-5, "K_ATM = {k}");
    }

    #[test]
    fn swap_is_worth_zero_at_par() {
        let p = params();
        let s = FactorState::origin(&p);
        let k = forward_swap_rate(&p, &s, 60, 180).unwrap();
        assert!(pfs_value(&p, &s, &underlying(k)).unwrap().abs() < 1e-12);
        let published = pfs_value(&p, &s, &underlying(0.025083)).unwrap();
        assert!(published.abs() < 1e-3);
    }

    #[test]
    fn zero_strike_collapses_to_bond_difference() {
        let p = params();
        let s = FactorState::new([0.01, 0.0, 0.02], 12);
        let v = pfs_value(&p, &s, &underlying(0.0)).unwrap();
        let expected = bond_price(&p, &s, 48) - bond_price(&p, &s, 168);
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn flat_curve_has_zero_rate() {
        // With all factors and long-run means at zero and no volatility, every bond is worth one.
        let mut v = ParamValues::published();
        v.sigma = [1e-300; 3];
        v.theta_q = [0.0; 3];
        let p = ModelParams::new(v).unwrap();
        let s = FactorState::new([0.0; 3], 0);
        assert_eq!(forward_swap_rate(&p, &s, 5, 20).unwrap(), 0.0);
    }

    #[test]
    fn accrual_period_valuation_rejected() {
        let p = params();
        let s = FactorState::new(*p.x0(), 61);
        assert!(pfs_value(&p, &s, &underlying(0.02)).is_err());
        assert!(pfs_gradient(&p, &s, &underlying(0.02)).is_err());
        assert!(SwapSpec::new(10, 10, 0.01, 1.0).is_err());
    }

    #[test]
    fn payoff_cases() {
        let p = params();
        let s = FactorState::new(*p.x0(), 60);
        assert_eq!(swaption_payoff(&p, &s, &underlying(10.0)).unwrap(), 0.0);
        let zero_k = swaption_payoff(&p, &s, &underlying(0.0)).unwrap();
        assert!((zero_k - (1.0 - bond_price(&p, &s, 120))).abs() < 1e-15);
        assert!(zero_k > 0.0);
        assert!(swaption_payoff(&p, &FactorState::new(*p.x0(), 59), &underlying(0.0)).is_err());
        let kernel = PayoffKernel::new(&p, &underlying(0.02));
        let direct = swaption_payoff(&p, &s, &underlying(0.02)).unwrap();
        assert!((kernel.payoff(&s.x) - direct).abs() < 1e-15);
    }

    #[test]
    fn zero_notional_has_zero_gradient() {
        let p = params();
        let spec = SwapSpec::new(60, 180, 0.03, 0.0).unwrap();
        assert_eq!(pfs_gradient(&p, &FactorState::origin(&p), &spec).unwrap(), [0.0; 3]);
    }

    fn central_difference(p: &ModelParams, s: &FactorState, spec: &SwapSpec) -> Vec3 {
        let h = 1e-6;
        let mut out = [0.0; 3];
        for k in 0..3 {
            let mut up = *s;
            let mut dn = *s;
            up.x[k] += h;
            dn.x[k] -= h;
            out[k] = (pfs_value(p, &up, spec).unwrap() - pfs_value(p, &dn, spec).unwrap()) / (2.0 * h);
        }
        out
    }

    #[test]
    fn one_period_swap_gradient() {
        let p = params();
        let s = FactorState::new([0.01, 0.01, 0.03], 3);
        let spec = SwapSpec::new(20, 21, 0.0, 1.0).unwrap();
        let g = pfs_gradient(&p, &s, &spec).unwrap();
        let fd = central_difference(&p, &s, &spec);
        let (pa, pb) = (bond_price(&p, &s, 17), bond_price(&p, &s, 18));
        let ba = factor_loadings(&p, 17).b_tau;
        let bb = factor_loadings(&p, 18).b_tau;
        for k in 0..3 {
            let boundary = -p.delta() * (ba[k] * pa - bb[k] * pb);
            assert!((g[k] - boundary).abs() < 1e-15);
            assert!((g[k] - fd[k]).abs() <= 1e-6 * fd[k].abs().max(1e-3));
        }
    }

    #[test]
    fn quotes_wrap_single_swap() {
        let p = params();
        let s = FactorState::new([-0.02, 0.03, 0.05], 6);
        let spec = underlying(0.025);
        let q = instrument_prices_and_grads(&p, &s, &[HedgeInstrumentSpec::UnderlyingFixedDates { underlying: spec }], &s).unwrap();
        assert_eq!(q.values[0], pfs_value(&p, &s, &spec).unwrap());
        let g = pfs_gradient(&p, &s, &spec).unwrap();
        for k in 0..3 {
            assert!((q.gradients[0][k] - g[k]).abs() < 1e-14);
        }
        assert!(!q.expired[0]);
    }

    #[test]
    fn rolling_instrument_is_par_at_entry_and_moves_after() {
        let p = params();
        let entry = FactorState::new(*p.x0(), 10);
        let later = FactorState::new([-0.025, 0.036, 0.07], 11);
        let inst = [HedgeInstrumentSpec::rolling(120, 24)];
        let at_entry = instrument_prices_and_grads(&p, &entry, &inst, &entry).unwrap();
        assert!(at_entry.values[0].abs() < 1e-14);
        let moved = instrument_prices_and_grads(&p, &later, &inst, &entry).unwrap();
        assert!(moved.values[0].abs() > 1e-6);
        assert!(instrument_prices_and_grads(&p, &entry, &inst, &later).is_err());
    }

    #[test]
    fn expired_fixed_instrument_is_flagged() {
        let p = params();
        let spec = SwapSpec::new(24, 48, 0.02, 1.0).unwrap();
        let s = FactorState::new(*p.x0(), 30);
        let q = instrument_prices_and_grads(&p, &s, &[HedgeInstrumentSpec::UnderlyingFixedDates { underlying: spec }], &s).unwrap();
        assert_eq!(q.values, vec![0.0]);
        assert_eq!(q.gradients, vec![[0.0; 3]]);
        assert!(q.expired[0]);
    }

    #[test]
    fn companion_swap_level_sensitivity_sign_agrees() {
        let p = params();
        let s = FactorState::origin(&p);
        let k = atm_strike(&p, 60, 180).unwrap();
        let inst = [
            HedgeInstrumentSpec::UnderlyingFixedDates { underlying: underlying(k) },
            HedgeInstrumentSpec::rolling(120, 24),
        ];
        let q = instrument_prices_and_grads(&p, &s, &inst, &s).unwrap();
        assert!(q.gradients[0][0] > 0.0 && q.gradients[1][0] > 0.0);
        assert_eq!(q.factor_row(0), vec![q.gradients[0][0], q.gradients[1][0]]);
    }

    #[test]
    fn rolling_instrument_validation() {
        assert!(HedgeInstrumentSpec::rolling(0, 24).validate().is_err());
        assert!(HedgeInstrumentSpec::rolling(1, 0).validate().is_err());
        let json = r#"{"kind":"rolling_par_forward","start_offset":120,"tenor":24}"#;
        let inst: HedgeInstrumentSpec = serde_json::from_str(json).unwrap();
        assert_eq!(inst, HedgeInstrumentSpec::rolling(120, 24));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gradient_matches_central_differences(
            x1 in -0.06f64..0.04, x2 in -0.02f64..0.08, x3 in -0.05f64..0.15,
            t in 0u32..60, start in 1u32..80, tenor in 1u32..150, k in -0.01f64..0.08,
        ) {
            let p = params();
            let s = FactorState::new([x1, x2, x3], t);
            let spec = SwapSpec::new(t + start, t + start + tenor, k, 1.0).unwrap();
            let g = pfs_gradient(&p, &s, &spec).unwrap();
            let fd = central_difference(&p, &s, &spec);
            for i in 0..3 {
                prop_assert!((g[i] - fd[i]).abs() <= 1e-6 * fd[i].abs().max(1e-2), "k={} {} vs {}", i, g[i], fd[i]);
            }
        }

        #[test]
        fn value_linear_in_notional_and_decreasing_in_strike(
            n in 0.1f64..10.0, k1 in -0.02f64..0.1, dk in 1e-4f64..0.05, t in 0u32..60,
        ) {
            let p = params();
            let s = FactorState::new([-0.02, 0.035, 0.06], t);
            let unit = pfs_value(&p, &s, &SwapSpec::new(60, 180, k1, 1.0).unwrap()).unwrap();
            let scaled = pfs_value(&p, &s, &SwapSpec::new(60, 180, k1, n).unwrap()).unwrap();
            prop_assert!((scaled - n * unit).abs() < 1e-12 * n.max(1.0));
            let higher = pfs_value(&p, &s, &SwapSpec::new(60, 180, k1 + dk, 1.0).unwrap()).unwrap();
            prop_assert!(higher < unit);
            let pay1 = payoff_at(&p, &s.x, &SwapSpec::new(60, 180, k1, 1.0).unwrap());
            let pay2 = payoff_at(&p, &s.x, &SwapSpec::new(60, 180, k1 + dk, 1.0).unwrap());
            prop_assert!(pay1 >= pay2);
        }

        #[test]
        fn payoff_is_positive_part_of_swap_value(
            x1 in -0.08f64..0.06, x2 in -0.03f64..0.1, x3 in -0.1f64..0.2, k in -0.01f64..0.08,
        ) {
            let p = params();
            let spec = SwapSpec::new(60, 180, k, 1.0).unwrap();
            let s = FactorState::new([x1, x2, x3], 60);
            let payoff = swaption_payoff(&p, &s, &spec).unwrap();
            let swap = pfs_value(&p, &s, &spec).unwrap();
            prop_assert!(payoff >= 0.0);
            prop_assert!((payoff - swap.max(0.0)).abs() < 1e-12);
        }

        #[test]
        fn rate_invariant_to_notional(n in 0.01f64..100.0, t in 0u32..60) {
            let p = params();
            let s = FactorState::new(*p.x0(), t);
            let k = forward_swap_rate(&p, &s, 60, 180).unwrap();
            let spec = SwapSpec::new(60, 180, k, n).unwrap();
            prop_assert!(pfs_value(&p, &s, &spec).unwrap().abs() < 1e-12 * n.max(1.0));
        }
    }
}
