//! Binary channel dataset files.
//!
//! Layout, all little-endian:
//!
//! | field | encoding |
//! |---|---|
//! | magic | `b"JFPC"` |
//! | version | `u32` (currently 1) |
//! | dims | 9 × `u32`: N_d, N_t, N_r, N_s, K, a, b, N_u, n |
//! | powers and frequencies | 5 × `f64`: P (dBm), downlink SNR (dB), f_dl, f_ul, bandwidth |
//! | sample count | `u64` |
//! | samples | per sample: `u64` seed, then per user the downlink block `[N_d][N_r][N_t]` followed by the uplink block `[N_u][N_t][N_r]`, each entry an `f32` (re, im) pair |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex32;

use crate::channel::ChannelSample;
use crate::{Error, Result, SystemConfig};

pub const MAGIC: &[u8; 4] = b"JFPC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 9 * 4 + 5 * 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SystemConfig,
    pub samples: Vec<ChannelSample>,
}

fn sample_len(cfg: &SystemConfig) -> usize {
    let per_user = (cfg.subcarriers + cfg.uplink_subcarriers) * cfg.ue_antennas * cfg.bs_antennas;
    8 + cfg.users * per_user * 8
}

pub fn write_dataset(path: impl AsRef<Path>, cfg: &SystemConfig, samples: &[ChannelSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, cfg, samples)?;
    w.flush()?;
    Ok(())
}

pub fn write_to(w: &mut impl Write, cfg: &SystemConfig, samples: &[ChannelSample]) -> Result<()> {
    let dims = (cfg.subcarriers, cfg.uplink_subcarriers, cfg.ue_antennas, cfg.bs_antennas);
    if let Some(s) = samples.iter().find(|s| s.dims() != dims || s.users() != cfg.users) {
        return Err(Error::Dimension(format!(
            "sample {} has dims {:?} for {} users, configuration expects {dims:?} for {}",
            s.seed,
            s.dims(),
            s.users(),
            cfg.users
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in [
        cfg.subcarriers,
        cfg.bs_antennas,
        cfg.ue_antennas,
        cfg.streams,
        cfg.users,
        cfg.subcarriers_per_rb,
        cfg.rbs_per_subband,
        cfg.uplink_subcarriers,
        cfg.latent_symbols,
    ] {
        let d = u32::try_from(d).map_err(|_| Error::Config(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in [
        cfg.tx_power_dbm,
        cfg.downlink_snr_db,
        cfg.dl_carrier_hz,
        cfg.ul_carrier_hz,
        cfg.bandwidth_hz,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(samples.len() as u64).to_le_bytes())?;

    let dl_block = cfg.subcarriers * cfg.ue_antennas * cfg.bs_antennas;
    let ul_block = cfg.uplink_subcarriers * cfg.ue_antennas * cfg.bs_antennas;
    let mut buf = Vec::with_capacity(sample_len(cfg));
    for s in samples {
        buf.clear();
        buf.extend_from_slice(&s.seed.to_le_bytes());
        for k in 0..cfg.users {
            let dl = &s.raw_downlink()[k * dl_block..(k + 1) * dl_block];
            let ul = &s.raw_uplink()[k * ul_block..(k + 1) * ul_block];
            for z in dl.iter().chain(ul) {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

pub fn parse(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing JFPC magic".into()));
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32();
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length(format!(
            "header needs {HEADER_LEN} bytes, file holds {}",
            bytes.len()
        )));
    }
    let mut dims = [0usize; 9];
    for d in &mut dims {
        *d = c.u32() as usize;
    }
    let mut reals = [0f64; 5];
    for r in &mut reals {
        *r = c.f64();
    }
    let config = SystemConfig {
        subcarriers: dims[0],
        bs_antennas: dims[1],
        ue_antennas: dims[2],
        streams: dims[3],
        users: dims[4],
        subcarriers_per_rb: dims[5],
        rbs_per_subband: dims[6],
        uplink_subcarriers: dims[7],
        latent_symbols: dims[8],
        tx_power_dbm: reals[0],
        downlink_snr_db: reals[1],
        dl_carrier_hz: reals[2],
        ul_carrier_hz: reals[3],
        bandwidth_hz: reals[4],
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("header configuration is invalid: {e}")))?;
    let count = c.u64();
    let per_sample = sample_len(&config);
    let expected = usize::try_from(count)
        .ok()
        .and_then(|n| n.checked_mul(per_sample))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Length(format!("sample count {count} overflows")))?;
    if bytes.len() != expected {
        let held = (bytes.len() - HEADER_LEN) / per_sample;
        return Err(Error::Length(format!(
            "header declares {count} samples ({expected} bytes) but the file holds {} bytes ({held} complete samples)",
            bytes.len()
        )));
    }

    let dl_block = config.subcarriers * config.ue_antennas * config.bs_antennas;
    let ul_block = config.uplink_subcarriers * config.ue_antennas * config.bs_antennas;
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let seed = c.u64();
        let mut downlink = Vec::with_capacity(config.users * dl_block);
        let mut uplink = Vec::with_capacity(config.users * ul_block);
        for _ in 0..config.users {
            for _ in 0..dl_block {
                downlink.push(Complex32::new(c.f32(), c.f32()));
            }
            for _ in 0..ul_block {
                uplink.push(Complex32::new(c.f32(), c.f32()));
            }
        }
        if downlink.iter().chain(&uplink).any(|z| !z.is_finite()) {
            return Err(Error::Format(format!("sample with seed {seed} has non-finite entries")));
        }
        samples.push(ChannelSample::from_raw(&config, seed, downlink, uplink));
    }
    Ok(Dataset { config, samples })
}
