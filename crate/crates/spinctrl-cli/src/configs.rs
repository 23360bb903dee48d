//! On-disk configuration for the subcommands that do not already have a
//! library-level file format. Values are in laboratory units — times in
//! milliseconds, frequencies in Hz — and are converted to normalized
//! quantities at the boundary.

use std::path::PathBuf;

use serde::Deserialize;
use spinctrl::bloch::{Isochromat, MagState, SpinParams};
use spinctrl::io::OffsetsSpec;
use spinctrl::Result;

fn default_td_ms() -> f64 {
    1000.0
}

/// `simulate` input: spin parameters, a pulse file, and the offsets to run.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(rename = "T1_ms")]
    pub t1_ms: f64,
    #[serde(rename = "T2_ms")]
    pub t2_ms: f64,
    /// Normalization period; defaults to one second.
    #[serde(rename = "Td_ms", default = "default_td_ms")]
    pub td_ms: f64,
    /// Path to a pulse JSON file, resolved relative to this config file.
    pub pulse: PathBuf,
    /// Offset list or comb; defaults to on-resonance only.
    #[serde(default)]
    pub offsets_hz: Option<OffsetsSpec>,
    /// Initial state `(x, y, z)`; defaults to equilibrium.
    #[serde(default)]
    pub initial: Option<[f64; 3]>,
}

impl SimulateConfig {
    pub fn params(&self) -> Result<SpinParams> {
        SpinParams::from_times(self.t1_ms * 1e-3, self.t2_ms * 1e-3, self.td_ms * 1e-3)
    }

    pub fn ensemble(&self, params: &SpinParams) -> Result<Vec<Isochromat>> {
        match &self.offsets_hz {
            Some(offsets) => offsets.to_ensemble(params),
            None => Ok(vec![Isochromat::new(0.0, 1.0)?]),
        }
    }

    pub fn initial_state(&self) -> MagState {
        let [x, y, z] = self.initial.unwrap_or([0.0, 0.0, 1.0]);
        MagState::new(x, y, z)
    }
}

/// `saturate` input: relaxation times only. The normalization period is a
/// bookkeeping choice here (both normalized and physical times are
/// reported), so it defaults to one second.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturateConfig {
    #[serde(rename = "T1_ms")]
    pub t1_ms: f64,
    #[serde(rename = "T2_ms")]
    pub t2_ms: f64,
    #[serde(rename = "Td_ms", default = "default_td_ms")]
    pub td_ms: f64,
}

impl SaturateConfig {
    pub fn params(&self) -> Result<SpinParams> {
        SpinParams::from_times(self.t1_ms * 1e-3, self.t2_ms * 1e-3, self.td_ms * 1e-3)
    }
}

/// `snr` input, normalized-rate form: transverse and longitudinal relaxation
/// rates per detection period.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrRates {
    pub gamma_t: f64,
    pub gamma_l: f64,
}

/// `snr` input, laboratory form. The detection period is physical here (it
/// sets the normalized rates), so it is required.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrTimes {
    #[serde(rename = "T1_ms")]
    pub t1_ms: f64,
    #[serde(rename = "T2_ms")]
    pub t2_ms: f64,
    #[serde(rename = "Td_ms")]
    pub td_ms: f64,
}

/// Either rate form is accepted; unknown or mixed keys are rejected.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SnrConfig {
    Rates(SnrRates),
    Times(SnrTimes),
}

impl SnrConfig {
    pub fn params(&self) -> Result<SpinParams> {
        match self {
            SnrConfig::Rates(r) => SpinParams::from_rates(r.gamma_l, r.gamma_t),
            SnrConfig::Times(t) => {
                SpinParams::from_times(t.t1_ms * 1e-3, t.t2_ms * 1e-3, t.td_ms * 1e-3)
            }
        }
    }
}
