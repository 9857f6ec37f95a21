//! Row types of the output tables and the binary layouts.

use serde::{Deserialize, Serialize};
use serde_json::json;
use stochframe_core::boundary::BoundaryRecord;
use stochframe_core::evolution::StateRecord;
use stochframe_core::frame::FrameOperators;
use stochframe_core::linalg::{CMatrix, C64};
use stochframe_core::measure::{ManifoldRecord, MeasureField, MeasureRecord, MetricField};
use stochframe_core::reference::WellRung;
use stochframe_core::sde::NoiseSource;

use crate::bundle::Bundle;
use crate::config::Payload;
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub step: u64,
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub l: f64,
    pub sign: f64,
    #[serde(rename = "dW_a")]
    pub dw_a: f64,
    #[serde(rename = "dW_b")]
    pub dw_b: f64,
}

impl From<&BoundaryRecord> for BoundaryRow {
    fn from(r: &BoundaryRecord) -> Self {
        Self {
            step: r.step,
            t: r.t,
            a: r.a,
            b: r.b,
            m: r.m,
            l: r.l,
            sign: r.sign,
            dw_a: r.dw_a,
            dw_b: r.dw_b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementRow {
    pub step: u64,
    pub time: f64,
    pub channel: usize,
    #[serde(rename = "dW")]
    pub dw: f64,
}

/// Every increment a run of `steps` steps draws, channel-major within a step.
/// `time` is the start of the step.
pub fn increment_rows(noise: &NoiseSource, steps: u64) -> Vec<IncrementRow> {
    let mut streams = noise.streams();
    let mut out = Vec::with_capacity((steps as usize) * noise.channels());
    for step in 0..steps {
        for (channel, dw) in streams.next_vec().into_iter().enumerate() {
            out.push(IncrementRow {
                step,
                time: step as f64 * noise.dt(),
                channel,
                dw,
            });
        }
    }
    out
}

/// Columns: step, t, norm, and the expectations of position, momentum and
/// the effective Hamiltonian, then the frame length and midpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub step: u64,
    pub t: f64,
    pub norm: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub mean_h: f64,
    pub l: f64,
    pub m: f64,
}

impl From<&StateRecord> for StateRow {
    fn from(r: &StateRecord) -> Self {
        Self {
            step: r.step,
            t: r.t,
            norm: r.norm,
            mean_x: r.position,
            mean_p: r.momentum,
            mean_h: r.energy,
            l: r.l,
            m: r.m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub step: u64,
    pub t: f64,
    pub norm_flat: f64,
    pub norm_hk: f64,
    pub observable_flat: f64,
    pub observable_hk: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub cancellation: f64,
}

impl From<&MeasureRecord> for MeasureRow {
    fn from(r: &MeasureRecord) -> Self {
        Self {
            step: r.step,
            t: r.t,
            norm_flat: r.norm_flat,
            norm_hk: r.norm_hk,
            observable_flat: r.observable_flat,
            observable_hk: r.observable_hk,
            m_min: r.m_min,
            m_max: r.m_max,
            cancellation: r.cancellation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldRow {
    pub step: u64,
    pub t: f64,
    pub norm: f64,
    pub sqrt_g_min: f64,
    pub sqrt_g_max: f64,
}

impl From<&ManifoldRecord> for ManifoldRow {
    fn from(r: &ManifoldRecord) -> Self {
        Self {
            step: r.step,
            t: r.t,
            norm: r.norm,
            sqrt_g_min: r.sqrt_det_min,
            sqrt_g_max: r.sqrt_det_max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureFieldRow {
    pub index: usize,
    pub x: f64,
    pub m: f64,
}

pub fn measure_field_rows(field: &MeasureField) -> Vec<MeasureFieldRow> {
    field
        .points
        .iter()
        .zip(&field.m)
        .enumerate()
        .map(|(index, (&x, &m))| MeasureFieldRow { index, x, m })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricFieldRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub g_xx: f64,
    pub g_yy: f64,
    pub g_zz: f64,
    pub g_yx: f64,
    pub g_zx: f64,
    pub g_zy: f64,
    pub sqrt_g: f64,
}

pub fn metric_field_rows(field: &MetricField) -> Vec<MetricFieldRow> {
    field
        .points()
        .into_iter()
        .zip(field.g.iter().zip(&field.sqrt_det))
        .enumerate()
        .map(|(index, (p, (g, &s)))| MetricFieldRow {
            index,
            x: p[0],
            y: p[1],
            z: p[2],
            g_xx: g[0],
            g_yy: g[1],
            g_zz: g[2],
            g_yx: g[3],
            g_zx: g[4],
            g_zy: g[5],
            sqrt_g: s,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RungRow {
    pub v0: f64,
    pub distance: f64,
    pub outside_mass: f64,
    pub max_step_drift: f64,
}

impl From<&WellRung> for RungRow {
    fn from(r: &WellRung) -> Self {
        Self {
            v0: r.v0,
            distance: r.distance,
            outside_mass: r.outside_mass,
            max_step_drift: r.max_step_drift,
        }
    }
}

/// Magic bytes opening a snapshot file.
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"SFSNAP01";

/// Full-state snapshots, little endian:
/// magic, 32-byte config hash, `u64` dimension, then per snapshot a `u64`
/// step followed by `dim` pairs of `f64` (real, imaginary).
pub fn encode_snapshots(config_hash: &str, dim: usize, snapshots: &[(u64, Vec<C64>)]) -> Result<Vec<u8>> {
    let digest = hex::decode(config_hash).map_err(|e| HarnessError::Config(format!("bad config hash: {e}")))?;
    let mut out = Vec::with_capacity(48 + snapshots.len() * (8 + 16 * dim));
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&digest);
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for (step, coeffs) in snapshots {
        if coeffs.len() != dim {
            return Err(HarnessError::Malformed(format!("snapshot at step {step} has {} entries, expected {dim}", coeffs.len())));
        }
        out.extend_from_slice(&step.to_le_bytes());
        for c in coeffs {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshots {
    pub config_hash: String,
    pub dim: usize,
    pub states: Vec<(u64, Vec<C64>)>,
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(HarnessError::Malformed("truncated payload".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u64(bytes: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8)?.try_into().expect("slice of eight bytes")))
}

fn take_f64(bytes: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take(bytes, 8)?.try_into().expect("slice of eight bytes")))
}

pub fn decode_snapshots(mut bytes: &[u8]) -> Result<Snapshots> {
    if take(&mut bytes, 8)? != SNAPSHOT_MAGIC {
        return Err(HarnessError::Malformed("not a snapshot file".into()));
    }
    let config_hash = hex::encode(take(&mut bytes, 32)?);
    let dim = take_u64(&mut bytes)? as usize;
    let mut states = Vec::new();
    while !bytes.is_empty() {
        let step = take_u64(&mut bytes)?;
        let coeffs = (0..dim)
            .map(|_| Ok(C64::new(take_f64(&mut bytes)?, take_f64(&mut bytes)?)))
            .collect::<Result<Vec<_>>>()?;
        states.push((step, coeffs));
    }
    Ok(Snapshots {
        config_hash,
        dim,
        states,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub row: usize,
    pub col: usize,
    pub re: f64,
    pub im: f64,
}

pub fn matrix_rows(m: &CMatrix) -> Vec<MatrixEntry> {
    let n = m.dim();
    (0..n)
        .flat_map(|row| (0..n).map(move |col| (row, col)))
        .map(|(row, col)| {
            let v = m[(row, col)];
            MatrixEntry { row, col, re: v.re, im: v.im }
        })
        .collect()
}

/// Row-major `(re, im)` pairs of `f64`, little endian.
pub fn matrix_bytes(m: &CMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 * m.as_slice().len());
    for v in m.as_slice() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn matrix_from_bytes(n: usize, mut bytes: &[u8]) -> Result<CMatrix> {
    if bytes.len() != 16 * n * n {
        return Err(HarnessError::Malformed(format!("matrix payload has {} bytes, expected {}", bytes.len(), 16 * n * n)));
    }
    let data = (0..n * n)
        .map(|_| Ok(C64::new(take_f64(&mut bytes)?, take_f64(&mut bytes)?)))
        .collect::<Result<Vec<_>>>()?;
    CMatrix::from_row_major(n, data).map_err(HarnessError::Numerical)
}

/// Writes `operators.json` plus one payload file per operator: the frame
/// operators, the transformed Hamiltonian, the effective generator and the
/// two noise operators.
pub fn dump_operators(bundle: &mut Bundle, ops: &FrameOperators<'_>, basis: &str, theta: Option<f64>, mass: f64, payload: Payload) -> Result<()> {
    let named: [(&str, CMatrix); 7] = [
        ("X", ops.x().clone()),
        ("P", ops.p().clone()),
        ("G", ops.g().clone()),
        ("K", ops.k.clone()),
        ("H_eff", ops.h_eff()),
        ("F_a", ops.f(0)),
        ("F_b", ops.f(1)),
    ];
    let mut files = Vec::new();
    for (name, m) in &named {
        let file = match payload {
            Payload::Csv => {
                let f = format!("operator_{name}.csv");
                bundle.write_csv(&f, &matrix_rows(m))?;
                f
            }
            Payload::Binary => {
                let f = format!("operator_{name}.bin");
                bundle.write_bytes(&f, &matrix_bytes(m))?;
                f
            }
        };
        files.push(json!({ "name": name, "file": file }));
    }
    let d = &ops.drive;
    let header = json!({
        "config_hash": bundle.config_hash(),
        "basis": basis,
        "n": ops.k.dim(),
        "theta": theta,
        "frame": { "m": ops.frame.m, "len": ops.frame.len, "sign": ops.frame.sign },
        "params": {
            "hbar": ops.hbar,
            "mass": mass,
            "sigma_a": d.sigma_a,
            "sigma_b": d.sigma_b,
            "mu1": d.mu1,
            "mu2": d.mu2,
        },
        "payload": match payload { Payload::Csv => "csv", Payload::Binary => "binary" },
        "operators": files,
    });
    bundle.write_json("operators.json", &header)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HASH: &str = "00ff00ff00ff00ff00ff00ff00ff00ff00ff00ff00ff00ff00ff00ff00ff00ff";

    #[test]
    fn snapshots_round_trip() {
        let snaps = vec![
            (0, vec![C64::new(1.0, -0.0), C64::new(f64::MIN_POSITIVE, 2.5)]),
            (7, vec![C64::new(-3.0, 1e300), C64::new(0.1, 0.2)]),
        ];
        let bytes = encode_snapshots(HASH, 2, &snaps).unwrap();
        assert_eq!(bytes.len(), 48 + 2 * (8 + 32));
        let back = decode_snapshots(&bytes).unwrap();
        assert_eq!(back.config_hash, HASH);
        assert_eq!(back.dim, 2);
        assert_eq!(back.states, snaps);
    }

    #[test]
    fn damaged_snapshots_are_malformed() {
        let bytes = encode_snapshots(HASH, 1, &[(3, vec![C64::new(1.0, 0.0)])]).unwrap();
        assert!(matches!(decode_snapshots(&bytes[..bytes.len() - 1]), Err(HarnessError::Malformed(_))));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_snapshots(&wrong), Err(HarnessError::Malformed(_))));
        assert!(encode_snapshots(HASH, 2, &[(0, vec![C64::new(1.0, 0.0)])]).is_err());
    }

    #[test]
    fn matrices_round_trip() {
        let m = CMatrix::from_fn(3, |i, j| C64::new(i as f64 - 0.5 * j as f64, (i * j) as f64 / 7.0));
        assert_eq!(matrix_from_bytes(3, &matrix_bytes(&m)).unwrap(), m);
        assert!(matrix_from_bytes(2, &matrix_bytes(&m)).is_err());
        let rows = matrix_rows(&m);
        assert_eq!(rows.len(), 9);
        assert_eq!((rows[5].row, rows[5].col, rows[5].re), (1, 2, 0.0));
    }
}
