//! System dimensions and power levels.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dimensions and power parameters of the FDD multiuser MIMO-OFDM link.
///
/// Powers are configured in the log domain. The synthetic channel has unit
/// average element energy, so the operating point is fully described by the
/// effective downlink SNR `P/σ²_dl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Downlink subcarriers `N_d`.
    pub subcarriers: usize,
    /// BS antennas `N_t`.
    pub bs_antennas: usize,
    /// UE antennas `N_r`.
    pub ue_antennas: usize,
    /// Data streams per user `N_s`.
    pub streams: usize,
    /// Users `K`.
    pub users: usize,
    /// Subcarriers per resource block (`a`).
    pub subcarriers_per_rb: usize,
    /// Resource blocks per subband (`b`).
    pub rbs_per_subband: usize,
    /// Uplink subcarriers carrying the feedback, `N_u`.
    pub uplink_subcarriers: usize,
    /// Complex latent symbols per feedback vector, `n`.
    pub latent_symbols: usize,
    /// Total downlink transmit power in dBm.
    pub tx_power_dbm: f64,
    /// Effective downlink SNR `P/σ²_dl` in dB.
    pub downlink_snr_db: f64,
    pub dl_carrier_hz: f64,
    pub ul_carrier_hz: f64,
    pub bandwidth_hz: f64,
}

impl SystemConfig {
    /// Desk-scale configuration that keeps multi-RB subbands and two
    /// interfering users while training in minutes on a CPU.
    pub fn desk() -> Self {
        SystemConfig {
            subcarriers: 48,
            bs_antennas: 8,
            ue_antennas: 2,
            streams: 1,
            users: 2,
            subcarriers_per_rb: 4,
            rbs_per_subband: 4,
            uplink_subcarriers: 16,
            latent_symbols: 16,
            tx_power_dbm: 46.0,
            downlink_snr_db: 10.0,
            dl_carrier_hz: 1.9e9,
            ul_carrier_hz: 2.1e9,
            // 60 kHz subcarrier spacing
            bandwidth_hz: 2.88e6,
        }
    }

    /// Full-band dimensions of the Uma reference scenario: 624 subcarriers,
    /// 52 RBs, 13 subbands, two users, 10 MHz.
    pub fn reference() -> Self {
        SystemConfig {
            subcarriers: 624,
            bs_antennas: 32,
            ue_antennas: 4,
            streams: 1,
            users: 2,
            subcarriers_per_rb: 12,
            rbs_per_subband: 4,
            uplink_subcarriers: 32,
            latent_symbols: 32,
            tx_power_dbm: 46.0,
            downlink_snr_db: 10.0,
            dl_carrier_hz: 1.9e9,
            ul_carrier_hz: 2.1e9,
            bandwidth_hz: 10e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("subcarriers", self.subcarriers),
            ("bs_antennas", self.bs_antennas),
            ("ue_antennas", self.ue_antennas),
            ("streams", self.streams),
            ("users", self.users),
            ("subcarriers_per_rb", self.subcarriers_per_rb),
            ("rbs_per_subband", self.rbs_per_subband),
            ("uplink_subcarriers", self.uplink_subcarriers),
            ("latent_symbols", self.latent_symbols),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if self.subcarriers % self.subcarriers_per_rb != 0 {
            return fail(format!(
                "subcarriers ({}) not divisible by subcarriers_per_rb ({})",
                self.subcarriers, self.subcarriers_per_rb
            ));
        }
        if self.num_rbs() % self.rbs_per_subband != 0 {
            return fail(format!(
                "resource blocks ({}) not divisible by rbs_per_subband ({})",
                self.num_rbs(),
                self.rbs_per_subband
            ));
        }
        if self.streams > self.ue_antennas {
            return fail(format!("streams ({}) exceed ue_antennas ({})", self.streams, self.ue_antennas));
        }
        if self.streams != 1 {
            return fail("only single-stream operation (streams = 1) is implemented".into());
        }
        if self.users > self.bs_antennas {
            return fail(format!("users ({}) exceed bs_antennas ({})", self.users, self.bs_antennas));
        }
        for (name, v) in [
            ("tx_power_dbm", self.tx_power_dbm),
            ("downlink_snr_db", self.downlink_snr_db),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        for (name, v) in [
            ("dl_carrier_hz", self.dl_carrier_hz),
            ("ul_carrier_hz", self.ul_carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// `N_RB = N_d / a`
    pub fn num_rbs(&self) -> usize {
        self.subcarriers / self.subcarriers_per_rb
    }

    /// `N_b = N_RB / b`
    pub fn num_subbands(&self) -> usize {
        self.num_rbs() / self.rbs_per_subband
    }

    pub fn subcarriers_per_subband(&self) -> usize {
        self.subcarriers_per_rb * self.rbs_per_subband
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.subcarriers as f64
    }

    /// Total transmit power `P` in mW.
    pub fn tx_power(&self) -> f64 {
        10f64.powf(self.tx_power_dbm / 10.0)
    }

    /// Downlink noise power `σ²_dl` in mW.
    pub fn noise_power_dl(&self) -> f64 {
        self.tx_power() / 10f64.powf(self.downlink_snr_db / 10.0)
    }
}

/// Uplink AWGN power for unit-power symbols over a unit-mean-gain channel.
pub fn uplink_noise_power(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_band_partition() {
        let cfg = SystemConfig::reference();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_rbs(), 52);
        assert_eq!(cfg.num_subbands(), 13);
    }

    #[test]
    fn desk_band_partition() {
        let cfg = SystemConfig::desk();
        cfg.validate().unwrap();
        assert_eq!((cfg.num_rbs(), cfg.num_subbands()), (12, 3));
    }

    #[test]
    fn rejects_indivisible_subcarriers() {
        let cfg = SystemConfig {
            subcarriers: 50,
            ..SystemConfig::desk()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = SystemConfig {
            rbs_per_subband: 5,
            ..SystemConfig::desk()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_streams_above_ue_antennas() {
        let cfg = SystemConfig {
            ue_antennas: 1,
            streams: 2,
            ..SystemConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn power_mapping() {
        let cfg = SystemConfig::desk();
        assert!((cfg.tx_power() - 39810.717).abs() < 1e-3);
        assert!((cfg.tx_power() / cfg.noise_power_dl() - 10.0).abs() < 1e-9);
        assert!((uplink_noise_power(0.0) - 1.0).abs() < 1e-15);
        assert!((uplink_noise_power(10.0) - 0.1).abs() < 1e-15);
    }
}
