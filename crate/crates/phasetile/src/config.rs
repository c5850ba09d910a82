//! Flat key-value configuration files.
//!
//! A scenario is a single TOML file of scalar keys (no tables). Every key is
//! optional and defaults to the nominal concept system; unknown keys are
//! rejected. Units: frequencies in Hz, SNR in dB, PSD coefficients in linear
//! units (W/Hz, W, W·Hz, W·Hz²), separations in radians of spatial frequency.
//!
//! ```text
//! # nominal system, written out fully
//! n_antennas = 256        tile_size = 16          n_users = 64
//! bandwidth_hz = 5e9      snr_bf_db = 14.0        window = 10
//! n_f = 14                f_natural_hz = 1e6      damping = 0.707
//! vco_a0 = 2.25e-11       vco_a1 = 9e-4           vco_a2 = 9e2    vco_a3 = 9e8
//! ref_a0 = ...            (defaults to vco/n_f)
//! receiver = "naive"      tracker = "genie"       phase_model = "exact"
//! n_symbols = 100000      n_realizations = 8      f_min_hz = 1e4
//! alpha_corr = 0.1        seed = 1                target_ber = 1e-3
//! min_separation = ...    d_over_lambda = 0.5
//! ```

use num_complex::Complex64;
use serde::Deserialize;

use crate::engine::{PhaseModel, SimConfig, TrackerChoice};
use crate::noise::PsdParams;
use crate::pll::PllConfig;
use crate::rx::ReceiverVariant;
use crate::spatial::SpatialConfig;
use crate::{Error, Result};

/// A parsed scenario: the simulation config plus design-only knobs.
#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub sim: SimConfig,
    /// BER target used by mask design.
    pub target_ber: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n_antennas: Option<usize>,
    tile_size: Option<usize>,
    n_users: Option<usize>,
    d_over_lambda: Option<f64>,
    min_separation: Option<f64>,
    bandwidth_hz: Option<f64>,
    snr_bf_db: Option<f64>,
    window: Option<usize>,
    n_f: Option<u32>,
    f_natural_hz: Option<f64>,
    damping: Option<f64>,
    vco_a0: Option<f64>,
    vco_a1: Option<f64>,
    vco_a2: Option<f64>,
    vco_a3: Option<f64>,
    ref_a0: Option<f64>,
    ref_a1: Option<f64>,
    ref_a2: Option<f64>,
    ref_a3: Option<f64>,
    receiver: Option<String>,
    tracker: Option<String>,
    phase_model: Option<String>,
    n_symbols: Option<usize>,
    n_realizations: Option<usize>,
    f_min_hz: Option<f64>,
    alpha_corr: Option<f64>,
    seed: Option<u64>,
    target_ber: Option<f64>,
}

fn parse_receiver(s: &str) -> Result<ReceiverVariant> {
    match s {
        "naive" => Ok(ReceiverVariant::Naive),
        "phase_aware" => Ok(ReceiverVariant::PhaseAware),
        "matched_filter" => Ok(ReceiverVariant::MatchedFilter),
        other => Err(Error::config(
            "receiver",
            format!("unknown variant `{other}` (naive | phase_aware | matched_filter)"),
        )),
    }
}

fn parse_tracker(s: &str) -> Result<TrackerChoice> {
    match s {
        "genie" => Ok(TrackerChoice::Genie),
        "decision_directed" => Ok(TrackerChoice::DecisionDirected),
        "off" => Ok(TrackerChoice::Off),
        other => Err(Error::config(
            "tracker",
            format!("unknown mode `{other}` (genie | decision_directed | off)"),
        )),
    }
}

fn parse_phase_model(s: &str) -> Result<PhaseModel> {
    match s {
        "exact" => Ok(PhaseModel::Exact),
        "linearized" => Ok(PhaseModel::Linearized),
        other => Err(Error::config(
            "phase_model",
            format!("unknown model `{other}` (exact | linearized)"),
        )),
    }
}

/// Parse a scenario from TOML text. An empty string yields the full nominal
/// configuration.
pub fn parse_config_str(text: &str) -> Result<Scenario> {
    let raw: RawConfig = toml::from_str(text)
        .map_err(|e| Error::config("<config>", e.to_string()))?;
    let nominal = SimConfig::nominal();

    let spatial = SpatialConfig {
        n_antennas: raw.n_antennas.unwrap_or(nominal.spatial.n_antennas),
        tile_size: raw.tile_size.unwrap_or(nominal.spatial.tile_size),
        n_users: raw.n_users.unwrap_or(nominal.spatial.n_users),
        d_over_lambda: raw.d_over_lambda.unwrap_or(nominal.spatial.d_over_lambda),
        min_separation: raw.min_separation,
        gain: Complex64::new(1.0, 0.0),
    };
    let pll = PllConfig {
        multiplication_factor: raw.n_f.unwrap_or(nominal.pll.multiplication_factor),
        natural_freq_hz: raw.f_natural_hz.unwrap_or(nominal.pll.natural_freq_hz),
        damping: raw.damping.unwrap_or(nominal.pll.damping),
    };
    let vco_psd = PsdParams {
        a0: raw.vco_a0.unwrap_or(nominal.vco_psd.a0),
        a1: raw.vco_a1.unwrap_or(nominal.vco_psd.a1),
        a2: raw.vco_a2.unwrap_or(nominal.vco_psd.a2),
        a3: raw.vco_a3.unwrap_or(nominal.vco_psd.a3),
    };
    // the reference defaults to the (possibly overridden) VCO mask divided
    // by the multiplication factor
    let nf = pll.multiplication_factor as f64;
    let ref_default = vco_psd.scaled(1.0 / nf);
    let ref_psd = PsdParams {
        a0: raw.ref_a0.unwrap_or(ref_default.a0),
        a1: raw.ref_a1.unwrap_or(ref_default.a1),
        a2: raw.ref_a2.unwrap_or(ref_default.a2),
        a3: raw.ref_a3.unwrap_or(ref_default.a3),
    };

    let sim = SimConfig {
        spatial,
        pll,
        vco_psd,
        ref_psd,
        bandwidth_hz: raw.bandwidth_hz.unwrap_or(nominal.bandwidth_hz),
        snr_bf_db: raw.snr_bf_db.unwrap_or(nominal.snr_bf_db),
        window: raw.window.unwrap_or(nominal.window),
        receiver: raw
            .receiver
            .as_deref()
            .map(parse_receiver)
            .transpose()?
            .unwrap_or(nominal.receiver),
        tracker: raw
            .tracker
            .as_deref()
            .map(parse_tracker)
            .transpose()?
            .unwrap_or(nominal.tracker),
        phase_model: raw
            .phase_model
            .as_deref()
            .map(parse_phase_model)
            .transpose()?
            .unwrap_or(nominal.phase_model),
        n_symbols: raw.n_symbols.unwrap_or(nominal.n_symbols),
        n_realizations: raw.n_realizations.unwrap_or(nominal.n_realizations),
        f_min_hz: raw.f_min_hz.unwrap_or(nominal.f_min_hz),
        alpha_corr: raw.alpha_corr.unwrap_or(nominal.alpha_corr),
        seed: raw.seed.unwrap_or(nominal.seed),
    };
    sim.validate()?;

    let target_ber = raw.target_ber.unwrap_or(1e-3);
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::config("target_ber", "must be in (0, 0.5)"));
    }
    Ok(Scenario { sim, target_ber })
}

/// Read and validate a scenario file.
pub fn parse_config(path: &std::path::Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Canonical TOML rendering of a resolved scenario, suitable for manifests;
/// parsing it back reproduces the scenario exactly.
pub fn to_canonical_toml(sc: &Scenario) -> String {
    let s = &sc.sim;
    let receiver = match s.receiver {
        ReceiverVariant::Naive => "naive",
        ReceiverVariant::PhaseAware => "phase_aware",
        ReceiverVariant::MatchedFilter => "matched_filter",
    };
    let tracker = match s.tracker {
        TrackerChoice::Genie => "genie",
        TrackerChoice::DecisionDirected => "decision_directed",
        TrackerChoice::Off => "off",
    };
    let phase_model = match s.phase_model {
        PhaseModel::Exact => "exact",
        PhaseModel::Linearized => "linearized",
    };
    let mut out = String::new();
    out.push_str(&format!("n_antennas = {}\n", s.spatial.n_antennas));
    out.push_str(&format!("tile_size = {}\n", s.spatial.tile_size));
    out.push_str(&format!("n_users = {}\n", s.spatial.n_users));
    out.push_str(&format!("d_over_lambda = {:?}\n", s.spatial.d_over_lambda));
    out.push_str(&format!(
        "min_separation = {:?}\n",
        s.spatial.min_separation()
    ));
    out.push_str(&format!("bandwidth_hz = {:?}\n", s.bandwidth_hz));
    out.push_str(&format!("snr_bf_db = {:?}\n", s.snr_bf_db));
    out.push_str(&format!("window = {}\n", s.window));
    out.push_str(&format!("n_f = {}\n", s.pll.multiplication_factor));
    out.push_str(&format!("f_natural_hz = {:?}\n", s.pll.natural_freq_hz));
    out.push_str(&format!("damping = {:?}\n", s.pll.damping));
    for (k, v) in [
        ("vco_a0", s.vco_psd.a0),
        ("vco_a1", s.vco_psd.a1),
        ("vco_a2", s.vco_psd.a2),
        ("vco_a3", s.vco_psd.a3),
        ("ref_a0", s.ref_psd.a0),
        ("ref_a1", s.ref_psd.a1),
        ("ref_a2", s.ref_psd.a2),
        ("ref_a3", s.ref_psd.a3),
    ] {
        out.push_str(&format!("{k} = {v:?}\n"));
    }
    out.push_str(&format!("receiver = \"{receiver}\"\n"));
    out.push_str(&format!("tracker = \"{tracker}\"\n"));
    out.push_str(&format!("phase_model = \"{phase_model}\"\n"));
    out.push_str(&format!("n_symbols = {}\n", s.n_symbols));
    out.push_str(&format!("n_realizations = {}\n", s.n_realizations));
    out.push_str(&format!("f_min_hz = {:?}\n", s.f_min_hz));
    out.push_str(&format!("alpha_corr = {:?}\n", s.alpha_corr));
    out.push_str(&format!("seed = {}\n", s.seed));
    out.push_str(&format!("target_ber = {:?}\n", sc.target_ber));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_nominal_system() {
        let sc = parse_config_str("").unwrap();
        assert_eq!(sc.sim.spatial.n_antennas, 256);
        assert_eq!(sc.sim.spatial.tile_size, 16);
        assert_eq!(sc.sim.spatial.n_users, 64);
        assert_eq!(sc.sim.bandwidth_hz, 5e9);
        assert_eq!(sc.sim.pll.multiplication_factor, 14);
        assert_eq!(sc.sim.window, 10);
        assert_eq!(sc.sim.snr_bf_db, 14.0);
        assert_eq!(sc.sim.receiver, ReceiverVariant::Naive);
        // reference mask defaults to vco/N_f
        assert!((sc.sim.ref_psd.a2 - 9e2 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn indivisible_tile_size_names_the_constraint() {
        let err = parse_config_str("tile_size = 15\n").unwrap_err().to_string();
        assert!(err.contains("divisible"), "{err}");
    }

    #[test]
    fn overloaded_user_count_is_rejected() {
        let err = parse_config_str("n_users = 300\n").unwrap_err().to_string();
        assert!(err.contains("K <= N"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config_str("no_such_key = 3\n").is_err());
    }

    #[test]
    fn enums_parse_and_reject() {
        let sc = parse_config_str("receiver = \"phase_aware\"\ntracker = \"off\"\n").unwrap();
        assert_eq!(sc.sim.receiver, ReceiverVariant::PhaseAware);
        assert_eq!(sc.sim.tracker, TrackerChoice::Off);
        assert!(parse_config_str("receiver = \"zf\"\n").is_err());
        assert!(parse_config_str("phase_model = \"quadratic\"\n").is_err());
    }

    #[test]
    fn vco_override_moves_the_default_reference() {
        let sc = parse_config_str("vco_a2 = 1.4e3\n").unwrap();
        assert!((sc.sim.ref_psd.a2 - 1.4e3 / 14.0).abs() < 1e-12);
        let sc2 = parse_config_str("vco_a2 = 1.4e3\nref_a2 = 1.0\n").unwrap();
        assert_eq!(sc2.sim.ref_psd.a2, 1.0);
    }

    #[test]
    fn canonical_toml_round_trips() {
        let sc = parse_config_str("n_users = 32\nsnr_bf_db = 17.5\nseed = 99\n").unwrap();
        let text = to_canonical_toml(&sc);
        let back = parse_config_str(&text).unwrap();
        assert_eq!(to_canonical_toml(&back), text);
        assert_eq!(back.sim.seed, 99);
        assert_eq!(back.sim.spatial.n_users, 32);
    }

    #[test]
    fn target_ber_bounds() {
        assert!(parse_config_str("target_ber = 0.7\n").is_err());
        assert!(parse_config_str("target_ber = 1e-4\n").unwrap().target_ber == 1e-4);
    }
}
