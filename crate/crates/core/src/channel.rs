//! Air-to-ground link budget: LoS probability, mean path loss, channel gain,
//! SINR, per-user rate and throughput.
//!
//! Interference at user `k` is the received power of every *other* served
//! user, `Σ_{i≠k} v_i·g_i·p_i`, plus thermal noise.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{distance_to_user, elevation_deg, UavPose, UserState};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FadingMode {
    /// `H_k = 1` on every step.
    #[default]
    Deterministic,
    /// Unit-mean exponential power gain (Rayleigh amplitude).
    Rayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_power_w: f64,
    pub eta_los_db: f64,
    pub eta_nlos_db: f64,
    pub los_a: f64,
    pub los_b: f64,
    pub fading: FadingMode,
    pub p_max_w: f64,
    pub qos_rate_bps: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            carrier_freq_hz: 2.0e9,
            bandwidth_hz: 1.0e6,
            noise_power_w: 1.0e-13,
            eta_los_db: 1.0,
            eta_nlos_db: 20.0,
            los_a: 9.61,
            los_b: 0.16,
            fading: FadingMode::Deterministic,
            p_max_w: 1.0,
            qos_rate_bps: 0.1e6,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_power_w", self.noise_power_w),
            ("los_a", self.los_a),
            ("los_b", self.los_b),
            ("p_max_w", self.p_max_w),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("channel.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("eta_los_db", self.eta_los_db),
            ("eta_nlos_db", self.eta_nlos_db),
            ("qos_rate_bps", self.qos_rate_bps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("channel.{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Draws one small-scale fading coefficient.
    pub fn draw_fading<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.fading {
            FadingMode::Deterministic => 1.0,
            FadingMode::Rayleigh => {
                let u: f64 = rng.gen();
                -(1.0 - u).ln()
            }
        }
    }
}

/// Elevation-angle sigmoid `1 / (1 + a·exp(-b(θ - a)))`.
pub fn los_probability(elevation_deg: f64, params: &ChannelParams) -> Result<f64> {
    if !(0.0..=90.0).contains(&elevation_deg) {
        return Err(Error::Domain(format!(
            "elevation {elevation_deg}° outside [0, 90]"
        )));
    }
    let a = params.los_a;
    Ok(1.0 / (1.0 + a * (-params.los_b * (elevation_deg - a)).exp()))
}

pub fn free_space_loss_db(distance_m: f64, params: &ChannelParams) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * params.carrier_freq_hz * distance_m / SPEED_OF_LIGHT)
        .log10()
}

/// LoS/NLoS probability-weighted mean path loss in dB.
pub fn mean_path_loss(distance_m: f64, elevation_deg: f64, params: &ChannelParams) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance_m}")));
    }
    let p_los = los_probability(elevation_deg, params)?;
    let fspl = free_space_loss_db(distance_m, params);
    let l_los = fspl + params.eta_los_db;
    let l_nlos = fspl + params.eta_nlos_db;
    Ok(p_los * l_los + (1.0 - p_los) * l_nlos)
}

pub fn channel_gain(path_loss_db: f64, fading: f64) -> f64 {
    fading * 10f64.powf(-path_loss_db / 10.0)
}

/// Per-user transmit power and service flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub power_w: Vec<f64>,
    pub served: Vec<bool>,
}

impl PowerAllocation {
    pub fn idle(users: usize) -> Self {
        PowerAllocation {
            power_w: vec![0.0; users],
            served: vec![false; users],
        }
    }

    pub fn len(&self) -> usize {
        self.power_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power_w.is_empty()
    }

    pub fn total_served_power(&self) -> f64 {
        self.power_w
            .iter()
            .zip(&self.served)
            .filter(|(_, &v)| v)
            .map(|(p, _)| p)
            .sum()
    }

    pub fn validate(&self, p_max: f64) -> Result<()> {
        if self.power_w.len() != self.served.len() {
            return Err(Error::Domain("power and service vectors differ in length".into()));
        }
        for (k, (&p, &v)) in self.power_w.iter().zip(&self.served).enumerate() {
            if !(p >= 0.0) || (!v && p != 0.0) {
                return Err(Error::Domain(format!("user {k}: power {p} with served={v}")));
            }
        }
        // small slack for the floating-point projection
        if self.total_served_power() > p_max * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "served power {} exceeds budget {p_max}",
                self.total_served_power()
            )));
        }
        Ok(())
    }
}

/// SINR and rate for every user given linear gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub rate_bps: Vec<f64>,
    pub system_rate_bps: f64,
}

pub fn sinr_and_rates(gains: &[f64], alloc: &PowerAllocation, params: &ChannelParams) -> RateReport {
    assert_eq!(gains.len(), alloc.len(), "gain/allocation length mismatch");
    let received: Vec<f64> = gains
        .iter()
        .zip(alloc.power_w.iter().zip(&alloc.served))
        .map(|(&g, (&p, &v))| if v { g * p } else { 0.0 })
        .collect();
    let mut sinr = Vec::with_capacity(gains.len());
    let mut rate = Vec::with_capacity(gains.len());
    for k in 0..gains.len() {
        if !alloc.served[k] {
            sinr.push(0.0);
            rate.push(0.0);
            continue;
        }
        let interference: f64 = received
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .map(|(_, r)| r)
            .sum();
        let g = received[k] / (interference + params.noise_power_w);
        sinr.push(g);
        rate.push(params.bandwidth_hz * (1.0 + g).log2());
    }
    let system_rate_bps = rate.iter().sum();
    RateReport {
        sinr,
        rate_bps: rate,
        system_rate_bps,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLink {
    pub user: usize,
    pub distance_m: f64,
    pub elevation_deg: f64,
    pub path_loss_db: f64,
    pub gain: f64,
    pub served: bool,
    pub power_w: f64,
    pub sinr: f64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub links: Vec<UserLink>,
    pub system_rate_bps: f64,
}

/// Channel gains from the UAV to every user. `fading` holds one coefficient
/// per user.
pub fn user_gains(
    pose: &UavPose,
    users: &[UserState],
    fading: &[f64],
    params: &ChannelParams,
) -> Result<Vec<GainEntry>> {
    users
        .iter()
        .zip(fading)
        .map(|(u, &h)| {
            let d = distance_to_user(pose, u);
            let elev = elevation_deg(pose, u);
            let loss = mean_path_loss(d, elev, params)?;
            Ok(GainEntry {
                distance_m: d,
                elevation_deg: elev,
                path_loss_db: loss,
                gain: channel_gain(loss, h),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainEntry {
    pub distance_m: f64,
    pub elevation_deg: f64,
    pub path_loss_db: f64,
    pub gain: f64,
}

pub fn link_report(entries: &[GainEntry], alloc: &PowerAllocation, params: &ChannelParams) -> LinkReport {
    let gains: Vec<f64> = entries.iter().map(|e| e.gain).collect();
    let rates = sinr_and_rates(&gains, alloc, params);
    let links = entries
        .iter()
        .enumerate()
        .map(|(k, e)| UserLink {
            user: k,
            distance_m: e.distance_m,
            elevation_deg: e.elevation_deg,
            path_loss_db: e.path_loss_db,
            gain: e.gain,
            served: alloc.served[k],
            power_w: alloc.power_w[k],
            sinr: rates.sinr[k],
            rate_bps: rates.rate_bps[k],
        })
        .collect();
    LinkReport {
        links,
        system_rate_bps: rates.system_rate_bps,
    }
}

/// Served users whose rate falls short of `qos_rate`.
pub fn qos_violations(rate_bps: &[f64], alloc: &PowerAllocation, qos_rate: f64) -> usize {
    rate_bps
        .iter()
        .zip(&alloc.served)
        .filter(|&(&r, &v)| v && r < qos_rate)
        .count()
}

/// Sum of per-step system rates (unit step duration).
pub fn episode_throughput<'a>(reports: impl IntoIterator<Item = &'a LinkReport>) -> f64 {
    reports.into_iter().map(|r| r.system_rate_bps).sum()
}

#[derive(Serialize)]
struct LinkRow {
    step: usize,
    user: usize,
    served: u8,
    power_w: f64,
    distance_m: f64,
    elevation_deg: f64,
    path_loss_db: f64,
    gain: f64,
    sinr: f64,
    rate_bps: f64,
}

/// Writes one CSV row per user per step.
pub fn write_link_csv(path: &Path, reports: &[LinkReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (step, rep) in reports.iter().enumerate() {
        for l in &rep.links {
            w.serialize(LinkRow {
                step,
                user: l.user,
                served: l.served as u8,
                power_w: l.power_w,
                distance_m: l.distance_m,
                elevation_deg: l.elevation_deg,
                path_loss_db: l.path_loss_db,
                gain: l.gain,
                sinr: l.sinr,
                rate_bps: l.rate_bps,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn params() -> ChannelParams {
        ChannelParams::default()
    }

    fn served(p: &[f64]) -> PowerAllocation {
        PowerAllocation {
            power_w: p.to_vec(),
            served: p.iter().map(|&x| x > 0.0).collect(),
        }
    }

    #[test]
    fn los_probability_examples() {
        let p = params();
        // 1 / (1 + 9.61·exp(-0.16·80.39)) evaluated independently
        assert!((los_probability(90.0, &p).unwrap() - 0.999_975_074_537_903).abs() < 1e-12);
        assert!(los_probability(-1.0, &p).is_err());
        assert!(los_probability(90.5, &p).is_err());
    }

    #[test]
    fn path_loss_examples() {
        let p = params();
        assert!((free_space_loss_db(100.0, &p) - 78.462_372_099_328_29).abs() < 1e-9);
        let doubled = free_space_loss_db(200.0, &p) - free_space_loss_db(100.0, &p);
        assert!((doubled - 20.0 * 2f64.log10()).abs() < 1e-12);

        let flat = ChannelParams { eta_los_db: 7.0, eta_nlos_db: 7.0, ..p };
        for elev in [0.0, 10.0, 45.0, 90.0] {
            let l = mean_path_loss(100.0, elev, &flat).unwrap();
            assert!((l - free_space_loss_db(100.0, &p) - 7.0).abs() < 1e-12);
        }
        assert!(mean_path_loss(0.0, 45.0, &p).is_err());
        assert!(mean_path_loss(-3.0, 45.0, &p).is_err());
    }

    #[test]
    fn gain_examples() {
        assert_eq!(channel_gain(0.0, 1.0), 1.0);
        assert!((channel_gain(30.0, 1.0) - 1e-3).abs() < 1e-18);
        assert!((channel_gain(10.0, 2.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_user_closed_form() {
        let p = params();
        let g = 3.7e-9;
        let rep = sinr_and_rates(&[g, 1e-9], &served(&[0.4, 0.0]), &p);
        let expect = p.bandwidth_hz * (1.0 + g * 0.4 / p.noise_power_w).log2();
        assert!((rep.rate_bps[0] - expect).abs() / expect < 1e-12);
        assert_eq!(rep.rate_bps[1], 0.0);
        assert_eq!(rep.sinr[1], 0.0);
    }

    #[test]
    fn symmetric_pair() {
        let p = params();
        // g·p = σ² for both users → γ = σ²/(σ²+σ²) = 0.5
        let g = p.noise_power_w / 0.5;
        let rep = sinr_and_rates(&[g, g], &served(&[0.5, 0.5]), &p);
        for k in 0..2 {
            assert!((rep.sinr[k] - 0.5).abs() < 1e-12);
            assert!((rep.rate_bps[k] - 584_962.500_721_156_1).abs() / 584_962.5 < 1e-12);
        }
    }

    #[test]
    fn nobody_served() {
        let rep = sinr_and_rates(&[1e-8, 2e-8], &PowerAllocation::idle(2), &params());
        assert_eq!(rep.system_rate_bps, 0.0);
    }

    #[test]
    fn qos_counting() {
        let alloc = served(&[0.2, 0.2, 0.2]);
        assert_eq!(qos_violations(&[2e5, 3e5, 4e5], &alloc, 1e5), 0);
        assert_eq!(qos_violations(&[2e5, 5e4, 4e5], &alloc, 1e5), 1);
        let partial = served(&[0.2, 0.0, 0.2]);
        assert_eq!(qos_violations(&[2e5, 0.0, 4e5], &partial, 1e5), 0);
        assert_eq!(qos_violations(&[2e5, 1e9, 4e5], &partial, 1e5), 0);
    }

    fn report(rate: f64) -> LinkReport {
        LinkReport { links: vec![], system_rate_bps: rate }
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(episode_throughput(&[]), 0.0);
        let reps: Vec<_> = (0..7).map(|_| report(2.5)).collect();
        assert_eq!(episode_throughput(&reps), 17.5);
        let a = [report(1.0), report(4.0), report(9.0)];
        let b = [report(9.0), report(1.0), report(4.0)];
        assert_eq!(episode_throughput(&a), episode_throughput(&b));
    }

    #[test]
    fn allocation_validation() {
        assert!(served(&[0.5, 0.5]).validate(1.0).is_ok());
        assert!(served(&[0.7, 0.5]).validate(1.0).is_err());
        let bad = PowerAllocation { power_w: vec![0.1], served: vec![false] };
        assert!(bad.validate(1.0).is_err());
    }

    #[test]
    fn rayleigh_fading_has_unit_mean() {
        let p = ChannelParams { fading: FadingMode::Rayleigh, ..params() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| p.draw_fading(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert_eq!(params().draw_fading(&mut rng), 1.0);
    }

    #[test]
    fn link_csv_has_row_per_user_per_step() {
        let p = params();
        let users = [UserState { id: 0, x: 0.0, y: 0.0 }, UserState { id: 1, x: 50.0, y: 0.0 }];
        let pose = UavPose { x: 10.0, y: 10.0, h: 100.0 };
        let e = user_gains(&pose, &users, &[1.0, 1.0], &p).unwrap();
        let rep = link_report(&e, &served(&[1.0, 0.0]), &p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("links.csv");
        write_link_csv(&path, &[rep.clone(), rep]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        assert!(text.starts_with("step,user,served,power_w"));
    }

    fn brute_rates(g: &[f64], p: &[f64], noise: f64, bw: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..g.len() {
            if p[k] == 0.0 {
                continue;
            }
            let mut interf = 0.0;
            for i in 0..g.len() {
                if i != k && p[i] > 0.0 {
                    interf += g[i] * p[i];
                }
            }
            total += bw * (1.0 + g[k] * p[k] / (interf + noise)).log2();
        }
        total
    }

    proptest! {
        #[test]
        fn los_complement_and_monotone(a in 0.0..90.0f64, b in 0.0..90.0f64) {
            let p = params();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let pl = los_probability(lo, &p).unwrap();
            let ph = los_probability(hi, &p).unwrap();
            prop_assert!(pl > 0.0 && pl < 1.0);
            prop_assert!(pl <= ph);
            prop_assert!((pl + (1.0 - pl) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn rate_additivity_matches_brute_force(
            g in prop::collection::vec(1e-11..1e-7f64, 1..8),
            seed in 0u64..1000,
        ) {
            use rand::Rng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pw: Vec<f64> = g.iter().map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.01..0.3) } else { 0.0 }).collect();
            let p = params();
            let rep = sinr_and_rates(&g, &served(&pw), &p);
            let want = brute_rates(&g, &pw, p.noise_power_w, p.bandwidth_hz);
            prop_assert!((rep.system_rate_bps - want).abs() <= 1e-9 * want.max(1.0));
            prop_assert!((rep.system_rate_bps - rep.rate_bps.iter().sum::<f64>()).abs() <= 1e-9 * want.max(1.0));
        }

        #[test]
        fn sinr_scale_behaviour(
            g in prop::collection::vec(1e-10..1e-7f64, 2..6),
            c in 1.5..10.0f64,
        ) {
            let pw = vec![0.1; g.len()];
            let scaled: Vec<f64> = g.iter().map(|x| x * c).collect();
            let noiseless = ChannelParams { noise_power_w: 0.0, ..params() };
            let a = sinr_and_rates(&g, &served(&pw), &noiseless);
            let b = sinr_and_rates(&scaled, &served(&pw), &noiseless);
            for k in 0..g.len() {
                prop_assert!((a.sinr[k] - b.sinr[k]).abs() <= 1e-9 * a.sinr[k]);
            }
            let noisy = params();
            let a = sinr_and_rates(&g, &served(&pw), &noisy);
            let b = sinr_and_rates(&scaled, &served(&pw), &noisy);
            for k in 0..g.len() {
                prop_assert!(b.sinr[k] > a.sinr[k]);
            }
        }

        #[test]
        fn rate_monotone_in_powers(
            g in prop::collection::vec(1e-10..1e-7f64, 2..5),
            own in 0.01..0.5f64, bump in 0.01..0.4f64,
        ) {
            let p = params();
            let mut pw = vec![0.1; g.len()];
            pw[0] = own;
            let base = sinr_and_rates(&g, &served(&pw), &p);
            let mut more_own = pw.clone();
            more_own[0] += bump;
            let up = sinr_and_rates(&g, &served(&more_own), &p);
            prop_assert!(up.rate_bps[0] >= base.rate_bps[0]);
            let mut more_interf = pw.clone();
            more_interf[1] += bump;
            let down = sinr_and_rates(&g, &served(&more_interf), &p);
            prop_assert!(down.rate_bps[0] <= base.rate_bps[0]);
        }
    }
}
