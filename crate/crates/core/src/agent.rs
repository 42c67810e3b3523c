//! The interface shared by every learner driven by the experiment harness.

use rand::RngCore;

use crate::error::{Error, Result};

pub trait Agent: Send {
    /// Chooses the action for the current state.
    fn act(&mut self, s: usize, rng: &mut dyn RngCore) -> Result<usize>;

    /// Feeds back the transition that followed the last [`Agent::act`].
    fn observe(&mut self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<()>;

    /// Current episode index; zero for agents without episodes.
    fn episode(&self) -> usize {
        0
    }
}

/// Enforces strict act/observe alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) enum Phase {
    #[default]
    Act,
    Observe {
        s: usize,
        a: usize,
    },
}

impl Phase {
    pub(crate) fn begin_act(&self) -> Result<()> {
        match self {
            Phase::Act => Ok(()),
            Phase::Observe { .. } => Err(Error::Protocol(
                "act called twice without an observation in between".into(),
            )),
        }
    }

    pub(crate) fn check_observe(&self, s: usize, a: usize) -> Result<()> {
        match *self {
            Phase::Observe { s: ps, a: pa } if ps == s && pa == a => Ok(()),
            Phase::Observe { s: ps, a: pa } => Err(Error::Protocol(format!(
                "observation for ({s}, {a}) but the last action was ({ps}, {pa})"
            ))),
            Phase::Act => Err(Error::Protocol("observe called before act".into())),
        }
    }
}
