//! First-order Thevenin equivalent-circuit simulator with between-cycle
//! aging.
//!
//! Fast state: RC polarization voltage `V_rc` (τ = R1·C1, tens of seconds).
//! Slow states: SOC within a cycle, and capacity/resistance factors
//! `theta_q`/`theta_r` across cycles. Per step of length `dt`:
//!
//! ```text
//! SOC_{t+1}  = SOC_t - dt·I_t / (3600·Q_nom·theta_q)
//! V_rc,{t+1} = V_rc,t·(1 - dt/τ) + dt·I_t / C1
//! V_t        = OCV(SOC_t) - I_t·R0·theta_r - V_rc,t + noise
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CycleSeries, Dataset, GroundTruth, Provenance};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, rng_for};

/// Polynomial open-circuit voltage in SOC, lowest order first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcvCurve {
    pub coefficients: Vec<f64>,
}

impl Default for OcvCurve {
    /// `3.2 + 0.7 s + 0.3 s^3` volts.
    fn default() -> Self {
        Self {
            coefficients: vec![3.2, 0.7, 0.0, 0.3],
        }
    }
}

impl OcvCurve {
    pub fn eval(&self, soc: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * soc + c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub q_nom_ah: f64,
    pub r0_ohm: f64,
    pub r1_ohm: f64,
    pub c1_farad: f64,
    pub ocv: OcvCurve,
    pub dt_s: f64,
    pub noise_std_v: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            q_nom_ah: 4.85,
            r0_ohm: 0.030,
            r1_ohm: 0.020,
            c1_farad: 1000.0,
            ocv: OcvCurve::default(),
            dt_s: 0.1,
            noise_std_v: 0.002,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn tau_s(&self) -> f64 {
        self.r1_ohm * self.c1_farad
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("q_nom_ah", self.q_nom_ah),
            ("r0_ohm", self.r0_ohm),
            ("r1_ohm", self.r1_ohm),
            ("c1_farad", self.c1_farad),
            ("dt_s", self.dt_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "sim.{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.noise_std_v >= 0.0) {
            return Err(Error::Config(format!(
                "sim.noise_std_v must be non-negative, got {}",
                self.noise_std_v
            )));
        }
        let tau = self.tau_s();
        if !(1.0..=60.0).contains(&tau) {
            return Err(Error::Config(format!(
                "RC time constant R1*C1 = {tau} s is outside [1, 60] s"
            )));
        }
        if self.ocv.coefficients.is_empty() {
            return Err(Error::Config(
                "sim.ocv.coefficients must not be empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aging {
    pub theta_q: f64,
    pub theta_r: f64,
}

impl Aging {
    pub const FRESH: Aging = Aging {
        theta_q: 1.0,
        theta_r: 1.0,
    };
}

/// Simulates one cycle under `current_profile` (amperes per sample).
///
/// Stops early and sets `truncated` if SOC would leave `[0, 1]`.
pub fn simulate_cycle(
    cfg: &SimConfig,
    cell_id: &str,
    cycle_index: usize,
    aging: Aging,
    soc_start: f64,
    current_profile: &[f64],
) -> Result<CycleSeries> {
    cfg.validate()?;
    if !(soc_start > 0.0 && soc_start <= 1.0) {
        return Err(Error::Config(format!(
            "starting SOC must be in (0, 1], got {soc_start}"
        )));
    }
    if !(aging.theta_q > 0.0 && aging.theta_r > 0.0) {
        return Err(Error::Config(format!(
            "aging factors must be positive, got {aging:?}"
        )));
    }
    if current_profile.is_empty() {
        return Err(Error::Config("current profile is empty".into()));
    }
    if current_profile.iter().any(|i| !i.is_finite()) {
        return Err(Error::Config(
            "current profile contains a non-finite value".into(),
        ));
    }

    let n = current_profile.len();
    let decay = 1.0 - cfg.dt_s / cfg.tau_s();
    let capacity_as = 3600.0 * cfg.q_nom_ah * aging.theta_q;
    let r0 = cfg.r0_ohm * aging.theta_r;
    let noise = Normal::new(0.0, cfg.noise_std_v.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut rng = rng_for(cfg.seed, cycle_index as u64);

    let mut time_s = Vec::with_capacity(n);
    let mut current_a = Vec::with_capacity(n);
    let mut voltage_v = Vec::with_capacity(n);
    let mut soc_trace = Vec::with_capacity(n);
    let mut truncated = false;

    let mut soc = soc_start;
    let mut v_rc = 0.0;
    for (k, &i) in current_profile.iter().enumerate() {
        let eps = if cfg.noise_std_v > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        time_s.push(k as f64 * cfg.dt_s);
        current_a.push(i);
        voltage_v.push(cfg.ocv.eval(soc) - i * r0 - v_rc + eps);
        soc_trace.push(soc);

        let next_soc = soc - cfg.dt_s * i / capacity_as;
        if k + 1 < n && !(0.0..=1.0).contains(&next_soc) {
            truncated = true;
            break;
        }
        soc = next_soc;
        v_rc = v_rc * decay + cfg.dt_s * i / cfg.c1_farad;
    }

    Ok(CycleSeries {
        cell_id: cell_id.to_owned(),
        cycle_index,
        time_s,
        current_a,
        voltage_v,
        truth: Some(GroundTruth {
            soc: soc_trace,
            theta_q: aging.theta_q,
            theta_r: aging.theta_r,
        }),
        truncated,
    })
}

/// Pseudo-random pulsed drive schedule standing in for a UDDS segment.
///
/// One schedule of `schedule_s` seconds is drawn per dataset and repeated
/// back to back through every cycle (unless `vary_per_cycle`), so cycles see
/// the same load history at the same point of discharge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveProfile {
    pub schedule_s: f64,
    pub min_pulse_s: f64,
    pub max_pulse_s: f64,
    /// Discharge pulse amplitude upper bound, in C-rate.
    pub max_c_rate: f64,
    pub regen_probability: f64,
    /// Regen pulse magnitude upper bound, in C-rate.
    pub max_regen_c_rate: f64,
    pub rest_probability: f64,
    pub vary_per_cycle: bool,
}

impl Default for DriveProfile {
    fn default() -> Self {
        Self {
            schedule_s: 1370.0,
            min_pulse_s: 1.0,
            max_pulse_s: 30.0,
            max_c_rate: 2.0,
            regen_probability: 0.1,
            max_regen_c_rate: 0.5,
            rest_probability: 0.1,
            vary_per_cycle: false,
        }
    }
}

impl DriveProfile {
    fn validate(&self) -> Result<()> {
        if !(self.schedule_s > 0.0)
            || !(self.min_pulse_s > 0.0)
            || self.max_pulse_s < self.min_pulse_s
        {
            return Err(Error::Config(
                "drive profile durations are inconsistent".into(),
            ));
        }
        if !(self.max_c_rate > 0.0) || self.max_regen_c_rate < 0.0 {
            return Err(Error::Config(
                "drive profile C-rates must be positive".into(),
            ));
        }
        let p = self.regen_probability + self.rest_probability;
        if !(0.0..=1.0).contains(&self.regen_probability)
            || !(0.0..=1.0).contains(&self.rest_probability)
            || p > 1.0
        {
            return Err(Error::Config(
                "drive profile probabilities must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    /// One schedule of piecewise-constant current pulses, sampled every `dt_s`.
    pub fn schedule(&self, q_nom_ah: f64, dt_s: f64, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, 0);
        let n = (self.schedule_s / dt_s).round() as usize;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let duration = rng.gen_range(self.min_pulse_s..=self.max_pulse_s);
            let steps = ((duration / dt_s).round() as usize).max(1);
            let kind: f64 = rng.gen();
            let amp = if kind < self.rest_probability {
                0.0
            } else if kind < self.rest_probability + self.regen_probability {
                -rng.gen_range(0.0..=self.max_regen_c_rate) * q_nom_ah
            } else {
                rng.gen_range(0.0..=self.max_c_rate) * q_nom_ah
            };
            out.extend(std::iter::repeat_n(amp, steps.min(n - out.len())));
        }
        out
    }
}

/// Piecewise-linear aging factors over normalized life (0 = first cycle,
/// 1 = last cycle).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadeKnot {
    pub life: f64,
    pub theta_q: f64,
    pub theta_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FadeSchedule {
    pub knots: Vec<FadeKnot>,
}

impl Default for FadeSchedule {
    fn default() -> Self {
        Self {
            knots: vec![
                FadeKnot {
                    life: 0.0,
                    theta_q: 1.0,
                    theta_r: 1.0,
                },
                FadeKnot {
                    life: 1.0,
                    theta_q: 0.85,
                    theta_r: 1.3,
                },
            ],
        }
    }
}

impl FadeSchedule {
    pub fn none() -> Self {
        Self {
            knots: vec![FadeKnot {
                life: 0.0,
                theta_q: 1.0,
                theta_r: 1.0,
            }],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::Config("fade schedule is empty".into()));
        }
        for w in self.knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b.life <= a.life || b.theta_q > a.theta_q || b.theta_r < a.theta_r {
                return Err(Error::Config(
                    "fade schedule must have increasing life, non-increasing theta_q and non-decreasing theta_r"
                        .into(),
                ));
            }
        }
        if self
            .knots
            .iter()
            .any(|k| !(k.theta_q > 0.0 && k.theta_r > 0.0))
        {
            return Err(Error::Config(
                "fade schedule factors must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn at(&self, life: f64) -> Aging {
        let first = self.knots[0];
        if life <= first.life || self.knots.len() == 1 {
            return Aging {
                theta_q: first.theta_q,
                theta_r: first.theta_r,
            };
        }
        for w in self.knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if life <= b.life {
                let f = (life - a.life) / (b.life - a.life);
                return Aging {
                    theta_q: a.theta_q + f * (b.theta_q - a.theta_q),
                    theta_r: a.theta_r + f * (b.theta_r - a.theta_r),
                };
            }
        }
        let last = self.knots[self.knots.len() - 1];
        Aging {
            theta_q: last.theta_q,
            theta_r: last.theta_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub cycles: usize,
    pub cell_id: String,
    pub soc_start: f64,
    pub soc_end: f64,
    pub fade: FadeSchedule,
    pub profile: DriveProfile,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            cycles: 60,
            cell_id: "SYN1".into(),
            soc_start: 0.8,
            soc_end: 0.2,
            fade: FadeSchedule::default(),
            profile: DriveProfile::default(),
            seed: 7,
        }
    }
}

/// Generates `gen.cycles` discharge cycles from `soc_start` to `soc_end`
/// with aging interpolated along the fade schedule.
pub fn generate_dataset(sim: &SimConfig, gen: &GenerateConfig) -> Result<Dataset> {
    sim.validate()?;
    gen.fade.validate()?;
    gen.profile.validate()?;
    if gen.cycles == 0 {
        return Err(Error::Config("at least one cycle must be generated".into()));
    }
    if !(gen.soc_end >= 0.0 && gen.soc_end < gen.soc_start && gen.soc_start <= 1.0) {
        return Err(Error::Config(format!(
            "SOC window must satisfy 0 <= soc_end < soc_start <= 1, got {} -> {}",
            gen.soc_start, gen.soc_end
        )));
    }

    let base = gen
        .profile
        .schedule(sim.q_nom_ah, sim.dt_s, derive_seed(gen.seed, 1));
    let mut cycles = Vec::with_capacity(gen.cycles);
    for k in 0..gen.cycles {
        let life = if gen.cycles == 1 {
            0.0
        } else {
            k as f64 / (gen.cycles - 1) as f64
        };
        let aging = gen.fade.at(life);
        let schedule = if gen.profile.vary_per_cycle {
            gen.profile.schedule(
                sim.q_nom_ah,
                sim.dt_s,
                derive_seed(gen.seed, 1000 + k as u64),
            )
        } else {
            base.clone()
        };
        let profile = profile_until(&schedule, sim, aging, gen.soc_start, gen.soc_end)?;
        let cfg = SimConfig {
            seed: derive_seed(gen.seed, 2),
            ..sim.clone()
        };
        cycles.push(simulate_cycle(
            &cfg,
            &gen.cell_id,
            k,
            aging,
            gen.soc_start,
            &profile,
        )?);
    }
    Dataset::new(cycles, Provenance::Synthetic)
}

/// Repeats `schedule` until coulomb counting reaches `soc_end`, returning
/// the samples up to and including the one that reaches it.
fn profile_until(
    schedule: &[f64],
    sim: &SimConfig,
    aging: Aging,
    soc_start: f64,
    soc_end: f64,
) -> Result<Vec<f64>> {
    let charge_per_pass: f64 = schedule.iter().sum::<f64>() * sim.dt_s;
    if !(charge_per_pass > 0.0) {
        return Err(Error::Config(
            "drive schedule does not discharge the cell".into(),
        ));
    }
    let capacity_as = 3600.0 * sim.q_nom_ah * aging.theta_q;
    let mut out = Vec::new();
    let mut soc = soc_start;
    for &i in schedule.iter().cycle() {
        out.push(i);
        soc -= sim.dt_s * i / capacity_as;
        if soc <= soc_end {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SimConfig {
        SimConfig {
            noise_std_v: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn rest_is_equilibrium() {
        let cfg = quiet();
        let c = simulate_cycle(&cfg, "A", 0, Aging::FRESH, 0.6, &[0.0; 500]).unwrap();
        let ocv = cfg.ocv.eval(0.6);
        assert!(c.voltage_v.iter().all(|&v| v == ocv));
        assert!(c.truth.unwrap().soc.iter().all(|&s| s == 0.6));
    }

    #[test]
    fn constant_discharge_closed_form() {
        let cfg = SimConfig {
            q_nom_ah: 2.0,
            ..quiet()
        };
        let n = 36_000;
        let c = simulate_cycle(&cfg, "A", 0, Aging::FRESH, 0.9, &vec![1.0; n + 1]).unwrap();
        let soc = &c.truth.unwrap().soc;
        // sample n has integrated n steps of 0.1 s at 1 A = 1 Ah of 2 Ah
        assert!((soc[n] - 0.4).abs() < 1e-12, "{}", soc[n]);
        for (k, s) in soc.iter().enumerate().step_by(997) {
            let exact = 0.9 - (k as f64) * 0.1 / 7200.0;
            assert!((s - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn polarization_decays_geometrically() {
        let cfg = quiet();
        let mut profile = vec![3.0; 200];
        profile.extend(vec![0.0; 50]);
        let c = simulate_cycle(&cfg, "A", 0, Aging::FRESH, 0.8, &profile).unwrap();
        let soc = c.truth.as_ref().unwrap().soc.clone();
        let v_rc: Vec<f64> = (200..250)
            .map(|k| cfg.ocv.eval(soc[k]) - c.voltage_v[k])
            .collect();
        let ratio = 1.0 - cfg.dt_s / cfg.tau_s();
        for w in v_rc.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-9);
        }
    }

    #[test]
    fn leaving_soc_range_truncates() {
        let cfg = SimConfig {
            q_nom_ah: 0.01,
            ..quiet()
        };
        let c = simulate_cycle(&cfg, "A", 0, Aging::FRESH, 0.1, &vec![10.0; 1000]).unwrap();
        assert!(c.truncated);
        assert!(c.len() < 1000);
        assert!(c.truth.unwrap().soc.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn bad_configs() {
        let tau_too_long = SimConfig {
            c1_farad: 10_000.0,
            ..SimConfig::default()
        };
        assert!(tau_too_long.validate().is_err());
        assert!(simulate_cycle(&quiet(), "A", 0, Aging::FRESH, 0.0, &[1.0]).is_err());
        assert!(simulate_cycle(&quiet(), "A", 0, Aging::FRESH, 0.5, &[f64::NAN]).is_err());
        let gen = GenerateConfig {
            fade: FadeSchedule { knots: vec![] },
            ..GenerateConfig::default()
        };
        assert!(generate_dataset(&SimConfig::default(), &gen).is_err());
        let rising = FadeSchedule {
            knots: vec![
                FadeKnot {
                    life: 0.0,
                    theta_q: 0.9,
                    theta_r: 1.0,
                },
                FadeKnot {
                    life: 1.0,
                    theta_q: 1.0,
                    theta_r: 1.0,
                },
            ],
        };
        let gen = GenerateConfig {
            fade: rising,
            ..GenerateConfig::default()
        };
        assert!(generate_dataset(&SimConfig::default(), &gen).is_err());
    }

    #[test]
    fn fade_endpoints() {
        let f = FadeSchedule::default();
        assert_eq!(f.at(0.0), Aging::FRESH);
        let end = f.at(1.0);
        assert!((end.theta_q - 0.85).abs() < 1e-12 && (end.theta_r - 1.3).abs() < 1e-12);
        let mid = f.at(0.5);
        assert!((mid.theta_q - 0.925).abs() < 1e-12);
    }

    #[test]
    fn schedule_respects_amplitude_bounds() {
        let p = DriveProfile::default();
        let s = p.schedule(4.85, 0.1, 3);
        assert_eq!(s.len(), 13_700);
        assert!(s.iter().all(|&i| (-0.5 * 4.85..=2.0 * 4.85).contains(&i)));
        assert!(s.iter().any(|&i| i < 0.0));
        assert_eq!(s, p.schedule(4.85, 0.1, 3));
    }
}
