use super::model::{Conv2dParams, GridCnn, GridCnnConfig};
use super::{GridNorm, GRID_CHANNELS};
use crate::container::{self, BodyReader, BodyWriter, FormatError};
use crate::nn::{LinearParams, Matrix};

pub const GRIDCNN_MAGIC: &[u8; 4] = b"GCNN";
pub const GRIDCNN_VERSION: u32 = 1;

impl GridCnn<f32> {
    /// Body: dropout f64, grid scale (2 f64), then per conv layer a weight
    /// block `(out, in * 9)` and bias block `(1, out)`, then per dense layer
    /// `(in, out)` and `(1, out)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BodyWriter::new();
        w.f64(self.config.dropout);
        self.grid_norm.std.iter().for_each(|&s| w.f64(s));
        for c in &self.conv {
            w.block(c.out_channels, c.in_channels * 9, &c.weights);
            w.block(1, c.out_channels, &c.bias);
        }
        for f in &self.fc {
            w.block(f.in_features(), f.out_features(), f.weights.data());
            w.block(1, f.out_features(), &f.bias);
        }
        container::encode(GRIDCNN_MAGIC, GRIDCNN_VERSION, &w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = BodyReader::new(container::decode(bytes, GRIDCNN_MAGIC, GRIDCNN_VERSION)?);
        let config = GridCnnConfig { dropout: r.f64()? };
        let mut std = [0.0; GRID_CHANNELS];
        for s in std.iter_mut() {
            *s = r.f64()?;
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(FormatError::Malformed("grid scale must be positive".into()));
        }
        let mut model = GridCnn::zeros(config);
        model.grid_norm = GridNorm { std };
        for (l, c) in model.conv.iter_mut().enumerate() {
            let (i, o) = (c.in_channels, c.out_channels);
            *c = Conv2dParams {
                in_channels: i,
                out_channels: o,
                weights: r.block(&format!("conv{}.weights", l + 1), o, i * 9)?,
                bias: r.block(&format!("conv{}.bias", l + 1), 1, o)?,
            };
        }
        for (l, f) in model.fc.iter_mut().enumerate() {
            let (i, o) = (f.in_features(), f.out_features());
            let weights = r.block(&format!("fc{}.weights", l + 1), i, o)?;
            let bias = r.block(&format!("fc{}.bias", l + 1), 1, o)?;
            *f = LinearParams {
                weights: Matrix::from_vec(i, o, weights).expect("shape checked by block"),
                bias,
            };
        }
        r.finish()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitwise_round_trip() {
        let mut model = GridCnn::<f32>::new(GridCnnConfig::default(), 7);
        model.grid_norm = GridNorm { std: [3.5, 0.25] };
        let bytes = model.to_bytes();
        let back = GridCnn::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        let bits = |m: &GridCnn<f32>| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
    }

    #[test]
    fn reflectnet_file_is_rejected() {
        let bytes = crate::container::encode(b"RFLN", 1, &[]);
        assert!(matches!(GridCnn::from_bytes(&bytes), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn flipped_weight_bit_fails_checksum() {
        let mut bytes = GridCnn::<f32>::new(GridCnnConfig::default(), 7).to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(
            GridCnn::from_bytes(&bytes),
            Err(FormatError::ChecksumMismatch { .. })
        ));
    }
}
