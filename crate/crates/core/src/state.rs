use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

/// A point `x` at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn new(x: Vec<f64>, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
        }
        check_finite("state", &x)?;
        Ok(Self { x, t })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Recorded states of one integration, ordered by strictly increasing time.
///
/// `checkpoint_times` lists the times at which states were stored; the first
/// is the start time and the last is `1.0` once the trajectory is complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub checkpoint_times: Vec<f64>,
    pub group_id: u64,
    /// Address of the stream that drove this trajectory (root seed first).
    pub seed_path: Vec<u64>,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.states.first().map_or(0.0, |s| s.t)
    }

    pub fn terminal(&self) -> &State {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn is_complete(&self) -> bool {
        self.states.last().is_some_and(|s| s.t == 1.0)
    }

    /// Stored state whose time is within `1e-12` of `t`.
    pub fn state_at(&self, t: f64) -> Option<&State> {
        self.states.iter().find(|s| (s.t - t).abs() <= 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_rejects_bad_input() {
        assert!(State::new(vec![0.0], 1.5).is_err());
        assert!(State::new(vec![f64::NAN], 0.5).is_err());
        assert!(State::new(vec![1.0, 2.0], 0.5).is_ok());
    }

    #[test]
    fn trajectory_lookup() {
        let tr = Trajectory {
            states: vec![
                State::new(vec![0.0], 0.0).unwrap(),
                State::new(vec![1.0], 0.5).unwrap(),
                State::new(vec![2.0], 1.0).unwrap(),
            ],
            checkpoint_times: vec![0.0, 0.5, 1.0],
            group_id: 0,
            seed_path: vec![1, 2],
        };
        assert!(tr.is_complete());
        assert_eq!(tr.state_at(0.5).unwrap().x, vec![1.0]);
        assert!(tr.state_at(0.25).is_none());
        assert_eq!(tr.terminal().x, vec![2.0]);
    }
}
