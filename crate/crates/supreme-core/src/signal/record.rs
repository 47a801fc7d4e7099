//! Multi-lead ECG records and their binary file format.
//!
//! Layout, all little-endian:
//!   magic "SPEG" | version u8 = 1 | leads u16 | samples u32 |
//!   sampling_rate u32 | leads * samples f32, lead-major
//!
//! Save then load is byte-exact: f32 payloads round-trip untouched.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Result, SignalError};

pub const RECORD_MAGIC: &[u8; 4] = b"SPEG";
pub const RECORD_VERSION: u8 = 1;

/// One ECG: `leads x samples` lead-major f32 samples at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub sampling_rate: u32,
    leads: usize,
    samples: usize,
    data: Vec<f32>,
}

impl EcgRecord {
    pub fn new(record_id: impl Into<String>, leads: usize, samples: usize, sampling_rate: u32, data: Vec<f32>) -> Result<Self> {
        if leads == 0 || samples == 0 {
            return Err(SignalError::Format(format!("record needs leads > 0 and samples > 0, got {leads}x{samples}")));
        }
        if sampling_rate == 0 {
            return Err(SignalError::Format("sampling_rate must be positive".into()));
        }
        if data.len() != leads * samples {
            return Err(SignalError::Format(format!(
                "lead-major payload of {} samples does not match {leads}x{samples}",
                data.len()
            )));
        }
        Ok(EcgRecord { record_id: record_id.into(), sampling_rate, leads, samples, data })
    }

    pub fn leads(&self) -> usize {
        self.leads
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn lead(&self, i: usize) -> &[f32] {
        &self.data[i * self.samples..(i + 1) * self.samples]
    }

    pub fn lead_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.samples..(i + 1) * self.samples]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(RECORD_MAGIC)?;
        w.write_all(&[RECORD_VERSION])?;
        let leads = u16::try_from(self.leads)
            .map_err(|_| SignalError::Format(format!("{} leads does not fit the header", self.leads)))?;
        w.write_all(&leads.to_le_bytes())?;
        let samples = u32::try_from(self.samples)
            .map_err(|_| SignalError::Format(format!("{} samples does not fit the header", self.samples)))?;
        w.write_all(&samples.to_le_bytes())?;
        w.write_all(&self.sampling_rate.to_le_bytes())?;
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a record; the record id is not stored in the file and is supplied
    /// by the caller (usually from the dataset manifest).
    pub fn load(path: &Path, record_id: impl Into<String>) -> Result<Self> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != RECORD_MAGIC {
            return Err(SignalError::Format(format!("bad magic {magic:?}, expected {RECORD_MAGIC:?}")));
        }
        let mut version = [0u8; 1];
        read_exact(&mut r, &mut version, "version")?;
        if version[0] != RECORD_VERSION {
            return Err(SignalError::Format(format!("unsupported version {}", version[0])));
        }
        let mut b2 = [0u8; 2];
        read_exact(&mut r, &mut b2, "lead count")?;
        let leads = u16::from_le_bytes(b2) as usize;
        let mut b4 = [0u8; 4];
        read_exact(&mut r, &mut b4, "sample count")?;
        let samples = u32::from_le_bytes(b4) as usize;
        read_exact(&mut r, &mut b4, "sampling rate")?;
        let sampling_rate = u32::from_le_bytes(b4);
        if leads == 0 || samples == 0 || sampling_rate == 0 {
            return Err(SignalError::Format(format!(
                "degenerate header: {leads} leads, {samples} samples, {sampling_rate} Hz"
            )));
        }

        let n = leads * samples;
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)
            .map_err(|_| SignalError::Truncated(format!("payload shorter than {n} samples")))?;
        // Trailing bytes mean the header lies about the payload size.
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(SignalError::Format("trailing bytes after payload".into()));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        EcgRecord::new(record_id, leads, samples, sampling_rate, data)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| SignalError::Truncated(format!("file ends inside {what}")))
}
