//! `RFLN` model files.
//!
//! Body layout: config (five u32 counts and a u8 GCL flag), normalization
//! statistics (u32 length, then means and standard deviations as f64), then
//! six f32 parameter blocks in the order conv1.w, conv1.b, conv2.w, conv2.b,
//! head.w, head.b.

use super::{ReflectNet, ReflectNetConfig};
use crate::container::{self, BodyReader, BodyWriter, FormatError};
use crate::nn::{LinearParams, Matrix};
use crate::preprocess::{NormStats, N_FEATURES};

pub const MODEL_MAGIC: &[u8; 4] = b"RFLN";
pub const MODEL_VERSION: u32 = 1;

fn write_linear(w: &mut BodyWriter, p: &LinearParams<f32>) {
    w.block(p.weights.rows(), p.weights.cols(), p.weights.data());
    w.block(1, p.bias.len(), &p.bias);
}

fn read_linear(r: &mut BodyReader<'_>, name: &str, rows: usize, cols: usize) -> Result<LinearParams<f32>, FormatError> {
    let weights = r.block(&format!("{name}.weights"), rows, cols)?;
    let bias = r.block(&format!("{name}.bias"), 1, cols)?;
    Ok(LinearParams {
        weights: Matrix::from_vec(rows, cols, weights).expect("shape checked"),
        bias,
    })
}

impl ReflectNet<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = BodyWriter::new();
        for v in [c.n_features, c.width1, c.width2, c.n_classes, c.pad_length] {
            w.u32(v as u32);
        }
        w.u8(c.use_gcl as u8);
        w.u32(N_FEATURES as u32);
        self.norm_stats.mean.iter().for_each(|&v| w.f64(v));
        self.norm_stats.std.iter().for_each(|&v| w.f64(v));
        write_linear(&mut w, &self.conv1);
        write_linear(&mut w, &self.conv2);
        write_linear(&mut w, &self.head);
        container::encode(MODEL_MAGIC, MODEL_VERSION, &w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let body = container::decode(bytes, MODEL_MAGIC, MODEL_VERSION)?;
        let mut r = BodyReader::new(body);
        let mut counts = [0usize; 5];
        for c in &mut counts {
            *c = r.u32()? as usize;
        }
        let use_gcl = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(FormatError::Malformed(format!("GCL flag {other}"))),
        };
        let config = ReflectNetConfig {
            n_features: counts[0],
            width1: counts[1],
            width2: counts[2],
            n_classes: counts[3],
            pad_length: counts[4],
            use_gcl,
        };
        config.validate().map_err(FormatError::Malformed)?;
        if config.n_features != N_FEATURES {
            return Err(FormatError::Malformed(format!(
                "model expects {} features, this build produces {N_FEATURES}",
                config.n_features
            )));
        }
        let stats_len = r.u32()? as usize;
        if stats_len != N_FEATURES {
            return Err(FormatError::Malformed(format!(
                "normalization block of length {stats_len}"
            )));
        }
        let mut norm_stats = NormStats::identity();
        for v in &mut norm_stats.mean {
            *v = r.f64()?;
        }
        for v in &mut norm_stats.std {
            *v = r.f64()?;
        }
        if norm_stats.std.iter().any(|s| !(*s > 0.0)) {
            return Err(FormatError::Malformed("non-positive normalization std".into()));
        }
        let conv1 = read_linear(&mut r, "conv1", config.n_features, config.width1)?;
        let conv2 = read_linear(&mut r, "conv2", config.conv2_in(), config.width2)?;
        let head = read_linear(&mut r, "head", config.width2, config.n_classes)?;
        r.finish()?;
        Ok(Self {
            config,
            conv1,
            conv2,
            head,
            norm_stats,
        })
    }
}
