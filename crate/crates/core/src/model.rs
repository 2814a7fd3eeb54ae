//! Per-sensor ground-truth dynamics: battery, age of information, and the
//! exogenous request/energy processes.
//!
//! Every other module (solvers, controller, simulator, test oracles) steps a
//! sensor through these functions, so the slot semantics live in one place:
//! a request is drawn, the edge node decides, the sensor transmits if it can,
//! and only then does the slot's energy arrival land in the battery.

use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment constants of one sensor. Sensors with equal parameters form a
/// parameter class and share a single solved policy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensorParams {
    lambda: f64,
    p: f64,
    capacity: usize,
    delta_max: usize,
}

impl SensorParams {
    /// `lambda` is the per-slot energy arrival probability, `p` the per-slot
    /// request probability, `capacity` the battery size `B` in energy units and
    /// `delta_max` the AoI cap.
    pub fn new(lambda: f64, p: f64, capacity: usize, delta_max: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
            return Err(Error::InvalidParams(format!("lambda = {lambda} not in [0, 1]")));
        }
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidParams(format!("p = {p} not in [0, 1]")));
        }
        if capacity < 1 {
            return Err(Error::InvalidParams("battery capacity must be >= 1".into()));
        }
        if delta_max < 2 {
            return Err(Error::InvalidParams("delta_max must be >= 2".into()));
        }
        Ok(Self {
            lambda,
            p,
            capacity,
            delta_max,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Battery capacity `B`.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn delta_max(&self) -> usize {
        self.delta_max
    }

    /// Stable textual key used for artifact names.
    pub fn key(&self) -> String {
        format!(
            "l{:016x}-p{:016x}-B{}-D{}",
            self.lambda.to_bits(),
            self.p.to_bits(),
            self.capacity,
            self.delta_max
        )
    }
}

impl PartialEq for SensorParams {
    fn eq(&self, other: &Self) -> bool {
        self.lambda.to_bits() == other.lambda.to_bits()
            && self.p.to_bits() == other.p.to_bits()
            && self.capacity == other.capacity
            && self.delta_max == other.delta_max
    }
}

impl Eq for SensorParams {}

impl Hash for SensorParams {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.lambda.to_bits().hash(state);
        self.p.to_bits().hash(state);
        self.capacity.hash(state);
        self.delta_max.hash(state);
    }
}

/// Hidden and observable per-sensor state as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorTruth {
    /// True battery level.
    pub battery: usize,
    /// Age of information at the edge node.
    pub aoi: usize,
    /// Battery level carried by the last delivered update.
    pub reported: usize,
}

/// Exogenous randomness of one sensor in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotDraw {
    pub request: bool,
    pub energy: bool,
}

/// A command results in a transmission only if the battery is non-empty.
#[inline]
pub fn effective_transmission(command: bool, battery: usize) -> bool {
    command && battery >= 1
}

/// Battery after one slot: `min(b + e - d, B)`.
#[inline]
pub fn step_battery(battery: usize, energy: bool, transmitted: bool, capacity: usize) -> Result<usize> {
    if transmitted && battery == 0 {
        return Err(Error::EnergyCausality);
    }
    let next = battery + usize::from(energy) - usize::from(transmitted);
    Ok(next.min(capacity))
}

/// AoI after one slot: 1 on delivery, otherwise one more slot up to the cap.
#[inline]
pub fn step_aoi(aoi: usize, transmitted: bool, delta_max: usize) -> usize {
    if transmitted {
        1
    } else {
        (aoi + 1).min(delta_max)
    }
}

/// On-demand AoI charged in a slot: the AoI served at the end of the slot if
/// the quantity was requested, zero otherwise.
#[inline]
pub fn on_demand_cost(request: bool, aoi: usize, transmitted: bool, delta_max: usize) -> usize {
    if request {
        step_aoi(aoi, transmitted, delta_max)
    } else {
        0
    }
}

/// Draws the request indicator first and the energy arrival second.
#[inline]
pub fn sample_exogenous<R: Rng + ?Sized>(params: &SensorParams, rng: &mut R) -> SlotDraw {
    let request = rng.random_bool(params.p);
    let energy = rng.random_bool(params.lambda);
    SlotDraw { request, energy }
}

/// Initial truth: AoI 1, reported level `B`, and a battery drawn from the
/// reset distribution of anchor `B` (mass `1 - lambda` at `B - 1`, `lambda`
/// at `B`), which is exactly the controller's initial belief.
pub fn initial_truth<R: Rng + ?Sized>(params: &SensorParams, rng: &mut R) -> SensorTruth {
    let full = rng.random_bool(params.lambda);
    let battery = if full {
        params.capacity
    } else {
        params.capacity - 1
    };
    SensorTruth {
        battery,
        aoi: 1,
        reported: params.capacity,
    }
}

/// Outcome of advancing one sensor through a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub transmitted: bool,
    pub cost: usize,
    /// Battery level reported in the update, when one was delivered.
    pub reported: Option<usize>,
}

impl SensorTruth {
    /// Advances the truth by one slot given the command and the slot's draw.
    #[inline]
    pub fn step(&mut self, params: &SensorParams, command: bool, draw: SlotDraw) -> Result<StepOutcome> {
        let transmitted = effective_transmission(command, self.battery);
        let cost = on_demand_cost(draw.request, self.aoi, transmitted, params.delta_max);
        let reported = transmitted.then_some(self.battery);
        if let Some(level) = reported {
            self.reported = level;
        }
        self.battery = step_battery(self.battery, draw.energy, transmitted, params.capacity)?;
        self.aoi = step_aoi(self.aoi, transmitted, params.delta_max);
        Ok(StepOutcome {
            transmitted,
            cost,
            reported,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transmission_needs_energy() {
        assert!(effective_transmission(true, 2));
        assert!(!effective_transmission(true, 0));
        assert!(!effective_transmission(false, 3));
    }

    #[test]
    fn battery_steps() {
        assert_eq!(step_battery(2, true, true, 3).unwrap(), 2);
        assert_eq!(step_battery(3, true, false, 3).unwrap(), 3);
        assert_eq!(step_battery(0, false, false, 3).unwrap(), 0);
        assert!(matches!(step_battery(0, true, true, 3), Err(Error::EnergyCausality)));
    }

    #[test]
    fn aoi_steps() {
        assert_eq!(step_aoi(17, true, 64), 1);
        assert_eq!(step_aoi(64, false, 64), 64);
        assert_eq!(step_aoi(5, false, 64), 6);
    }

    #[test]
    fn on_demand_cost_examples() {
        assert_eq!(on_demand_cost(true, 63, false, 64), 64);
        assert_eq!(on_demand_cost(false, 10, false, 64), 0);
        assert_eq!(on_demand_cost(true, 30, true, 64), 1);
    }

    #[test]
    fn degenerate_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let always = SensorParams::new(0.0, 1.0, 3, 64).unwrap();
        for _ in 0..1000 {
            let d = sample_exogenous(&always, &mut rng);
            assert!(d.request);
            assert!(!d.energy);
        }
    }

    #[test]
    fn request_frequency_matches_p() {
        let params = SensorParams::new(0.3, 0.8, 3, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| sample_exogenous(&params, &mut rng).request).count();
        let mean = hits as f64 / n as f64;
        assert!((mean - 0.8).abs() <= 0.002, "mean {mean}");
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SensorParams::new(1.5, 0.5, 3, 64).is_err());
        assert!(SensorParams::new(0.5, -0.1, 3, 64).is_err());
        assert!(SensorParams::new(0.5, 0.5, 0, 64).is_err());
        assert!(SensorParams::new(0.5, 0.5, 3, 1).is_err());
    }

    proptest! {
        #[test]
        fn trajectories_respect_dynamics(
            lambda in 0.0f64..=1.0,
            p in 0.0f64..=1.0,
            cap in 1usize..6,
            dmax in 2usize..20,
            seed in any::<u64>(),
            commands in proptest::collection::vec(any::<bool>(), 1..200),
        ) {
            let params = SensorParams::new(lambda, p, cap, dmax).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut truth = initial_truth(&params, &mut rng);
            for &a in &commands {
                let before = truth;
                let draw = sample_exogenous(&params, &mut rng);
                let out = truth.step(&params, a, draw).unwrap();
                prop_assert!(out.transmitted <= (before.battery >= 1));
                prop_assert!(truth.battery <= cap);
                prop_assert!((truth.battery as i64 - before.battery as i64).abs() <= 1);
                prop_assert_eq!(truth.aoi == 1, out.transmitted);
                if !out.transmitted {
                    prop_assert!(truth.aoi == dmax || truth.aoi == before.aoi + 1);
                }
                prop_assert!(out.cost <= dmax);
                if !draw.request { prop_assert_eq!(out.cost, 0); }
            }
        }
    }
}
