//! Edge-node decision loop: relaxed per-sensor decisions, uniform
//! truncation to the per-slot budget, tracker bookkeeping and the greedy
//! baseline.

use rand::Rng;

use crate::belief::{BeliefAtlas, BeliefIndex};
use crate::error::{Error, Result};
use crate::exact::ExactPolicy;
use crate::model::step_aoi;
use crate::planner::RelaxedPolicyBundle;
use crate::solver::PerSensorPolicy;

/// What the edge node knows about one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tracker {
    pub belief: BeliefIndex,
    pub request: bool,
    pub aoi: usize,
    /// Last reported battery level.
    pub reported: usize,
}

/// Outcome of a commanded or idle sensor in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub commanded: bool,
    /// Battery level carried by the delivered update, if any.
    pub delivered: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub trackers: Vec<Tracker>,
    /// Sensor to class index.
    pub classes: Vec<usize>,
    /// Commands allowed per slot.
    pub budget: usize,
}

impl ControllerState {
    /// Every tracker starts at the initial belief with AoI 1.
    pub fn new(atlases: &[&BeliefAtlas], classes: Vec<usize>, budget: usize) -> Self {
        let trackers = classes
            .iter()
            .map(|&c| Tracker {
                belief: atlases[c].initial_index(),
                request: false,
                aoi: 1,
                reported: atlases[c].params().capacity(),
            })
            .collect();
        Self {
            trackers,
            classes,
            budget,
        }
    }

    pub fn len(&self) -> usize {
        self.trackers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trackers.is_empty()
    }

    /// Installs the requests drawn for the coming slot.
    pub fn set_requests<I: IntoIterator<Item = bool>>(&mut self, requests: I) {
        for (t, r) in self.trackers.iter_mut().zip(requests) {
            t.request = r;
        }
    }

    /// Applies the slot's outcomes to every tracker.
    pub fn observe(&mut self, atlases: &[&BeliefAtlas], outcomes: &[Outcome]) -> Result<()> {
        if outcomes.len() != self.trackers.len() {
            return Err(Error::Protocol("one outcome per sensor expected".into()));
        }
        for ((t, &c), o) in self.trackers.iter_mut().zip(&self.classes).zip(outcomes) {
            observe_one(atlases[c], t, *o)?;
        }
        Ok(())
    }
}

/// Tracker update for a single sensor.
#[inline]
pub fn observe_one(atlas: &BeliefAtlas, t: &mut Tracker, o: Outcome) -> Result<()> {
    t.belief = atlas.update(t.belief, o.commanded, o.delivered)?;
    if let Some(level) = o.delivered {
        t.reported = level;
    }
    t.aoi = step_aoi(t.aoi, o.delivered.is_some(), atlas.params().delta_max());
    Ok(())
}

/// Per-sensor policy lookup shared by the partial- and exact-knowledge
/// bundles. `battery` is only read by exact-knowledge policies.
pub trait ActionLookup {
    fn action(&self, tracker: &Tracker, battery: usize) -> bool;
}

impl ActionLookup for PerSensorPolicy {
    #[inline]
    fn action(&self, t: &Tracker, _battery: usize) -> bool {
        PerSensorPolicy::action(self, t.belief, t.request, t.aoi)
    }
}

impl ActionLookup for ExactPolicy {
    #[inline]
    fn action(&self, t: &Tracker, battery: usize) -> bool {
        ExactPolicy::action(self, battery, t.request, t.aoi)
    }
}

/// Candidate set of the relaxed policy. `mix_rngs` holds one stream per
/// sensor; a draw is consumed only when the two bracketing policies
/// disagree.
pub fn decide_relaxed<P: ActionLookup, R: Rng>(
    bundle: &RelaxedPolicyBundle<P>,
    state: &ControllerState,
    batteries: &[usize],
    mix_rngs: &mut [R],
    out: &mut Vec<usize>,
) {
    out.clear();
    let eta = bundle.eta;
    for (k, (t, &c)) in state.trackers.iter().zip(&state.classes).enumerate() {
        let entry = &bundle.classes[c];
        let minus = entry.minus.action(t, batteries[k]);
        let act = if eta >= 1.0 {
            minus
        } else {
            let plus = entry.plus.action(t, batteries[k]);
            if minus == plus || mix_rngs[k].random_bool(eta) {
                minus
            } else {
                plus
            }
        };
        if act {
            out.push(k);
        }
    }
}

/// Keeps `candidates` if it fits the budget, else a uniformly random
/// `budget`-subset.
pub fn truncate<R: Rng + ?Sized>(candidates: &mut Vec<usize>, budget: usize, rng: &mut R) {
    if candidates.len() <= budget {
        return;
    }
    // partial Fisher-Yates over the first `budget` positions
    for i in 0..budget {
        let j = rng.random_range(i..candidates.len());
        candidates.swap(i, j);
    }
    candidates.truncate(budget);
    candidates.sort_unstable();
}

/// Largest-AoI-first among requested sensors, ties to the lower index.
pub fn greedy_decide(state: &ControllerState, out: &mut Vec<usize>) {
    out.clear();
    out.extend(
        state
            .trackers
            .iter()
            .enumerate()
            .filter(|(_, t)| t.request)
            .map(|(k, _)| k),
    );
    if out.len() > state.budget {
        out.sort_by(|&a, &b| state.trackers[b].aoi.cmp(&state.trackers[a].aoi).then(a.cmp(&b)));
        out.truncate(state.budget);
    }
    out.sort_unstable();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SensorParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn atlas() -> BeliefAtlas {
        BeliefAtlas::build(SensorParams::new(0.2, 0.8, 3, 64).unwrap(), 1e-6, 4000).unwrap()
    }

    fn state(requests: &[bool], aois: &[usize], budget: usize) -> ControllerState {
        let a = atlas();
        let mut s = ControllerState::new(&[&a], vec![0; requests.len()], budget);
        for (t, (&r, &d)) in s.trackers.iter_mut().zip(requests.iter().zip(aois)) {
            t.request = r;
            t.aoi = d;
        }
        s
    }

    #[test]
    fn greedy_examples() {
        let mut out = Vec::new();
        greedy_decide(&state(&[true, true, false], &[5, 9, 2], 1), &mut out);
        assert_eq!(out, vec![1]);
        greedy_decide(&state(&[false, false], &[5, 9], 1), &mut out);
        assert!(out.is_empty());
        greedy_decide(&state(&[true, true], &[7, 7], 1), &mut out);
        assert_eq!(out, vec![0]);
    }

    #[test]
    fn truncation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![1, 4];
        truncate(&mut x, 3, &mut rng);
        assert_eq!(x, vec![1, 4]);
        let mut x = vec![0, 1, 2, 3, 4];
        truncate(&mut x, 0, &mut rng);
        assert!(x.is_empty());
        let mut x = vec![2, 3, 5, 7, 11];
        truncate(&mut x, 3, &mut rng);
        assert_eq!(x.len(), 3);
        assert!(x.iter().all(|k| [2, 3, 5, 7, 11].contains(k)));
    }

    #[test]
    fn truncation_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let trials = 100_000;
        let mut counts = [0u64; 5];
        for _ in 0..trials {
            let mut x = vec![0, 1, 2, 3, 4];
            truncate(&mut x, 3, &mut rng);
            for k in x {
                counts[k] += 1;
            }
        }
        let expected = trials as f64 * 3.0 / 5.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p_value = 1.0 - ChiSquared::new(4.0).unwrap().cdf(stat);
        assert!(p_value > 1e-3, "chi2 {stat} p {p_value}");
    }

    #[test]
    fn observe_examples() {
        let a = atlas();
        let mut s = ControllerState::new(&[&a], vec![0; 3], 3);
        s.trackers[0].aoi = 4;
        s.trackers[1].aoi = 4;
        s.trackers[2].aoi = 4;
        let outcomes = [
            Outcome {
                commanded: true,
                delivered: Some(2),
            },
            Outcome {
                commanded: true,
                delivered: None,
            },
            Outcome {
                commanded: false,
                delivered: None,
            },
        ];
        s.observe(&[&a], &outcomes).unwrap();
        assert_eq!(s.trackers[0].belief, BeliefIndex::new(2, 0));
        assert_eq!((s.trackers[0].reported, s.trackers[0].aoi), (2, 1));
        assert_eq!(s.trackers[1].belief, BeliefIndex::new(0, 0));
        assert_eq!((s.trackers[1].reported, s.trackers[1].aoi), (3, 5));
        assert_eq!(s.trackers[2].belief, BeliefIndex::new(3, 1));
        assert_eq!(s.trackers[2].aoi, 5);

        let bad = [Outcome {
            commanded: false,
            delivered: Some(1),
        }; 3];
        assert!(s.observe(&[&a], &bad).is_err());
    }
}
