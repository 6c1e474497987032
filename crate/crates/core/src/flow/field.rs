use super::{ConditionSet, FlowState};
use crate::error::{Error, Result};
use crate::netcore::{ChannelStack, VectorFieldNet};

/// A velocity `v(x_t, t)` for a flow of `n` steps.
pub trait VelocityField<S>: Sync {
    fn velocity(&self, x_t: &S, t: usize, n: usize, cond: &ConditionSet) -> Result<S>;
}

/// A trained network. Its input is the state's channels followed by the
/// condition channels; the step is rescaled to the network's own step count
/// so a net trained at one `N` can be sampled at another.
pub struct NetField<'a> {
    pub net: &'a VectorFieldNet,
}

impl<'a> NetField<'a> {
    pub fn new(net: &'a VectorFieldNet) -> Self {
        NetField { net }
    }

    /// Assembles the network input for state `x_t`.
    pub fn input<S: FlowState>(x_t: &S, cond: &ConditionSet) -> Result<ChannelStack> {
        let state = x_t.to_stack();
        if cond.is_empty() {
            return Ok(state);
        }
        ChannelStack::concat(&[&state, &cond.channels()?])
    }

    /// The network's time argument for step `t` of `n`.
    pub fn net_time(&self, t: usize, n: usize) -> f64 {
        t as f64 * self.net.config().time_steps as f64 / n as f64
    }
}

impl<S: FlowState> VelocityField<S> for NetField<'_> {
    fn velocity(&self, x_t: &S, t: usize, n: usize, cond: &ConditionSet) -> Result<S> {
        let cfg = self.net.config();
        if cfg.out_channels != S::channels() {
            return Err(Error::Shape(format!(
                "net emits {} channels, state has {}",
                cfg.out_channels,
                S::channels()
            )));
        }
        let input = Self::input(x_t, cond)?;
        let meta = cond.meta();
        let meta = (cfg.meta_len > 0).then_some(meta.as_slice());
        let out = self.net.forward(&input, Some(self.net_time(t, n)), meta)?;
        S::from_stack(&out)
    }
}

/// Test oracle: the velocity whose clean-image estimate is exactly `x0`,
/// `v = (x_t - x0) N / t`.
pub struct OracleField<S> {
    pub x0: S,
}

impl<S: FlowState + Sync> VelocityField<S> for OracleField<S> {
    fn velocity(&self, x_t: &S, t: usize, n: usize, _cond: &ConditionSet) -> Result<S> {
        if t == 0 {
            return Err(Error::InvalidArgument("oracle queried at t = 0".into()));
        }
        let s = n as f64 / t as f64;
        S::lincomb(s, x_t, -s, &self.x0)
    }
}
