//! `HSICUBE1` container: an 8-byte magic, a little-endian `u32` header
//! length, a UTF-8 JSON header, the band-sequential `f32` payload, then the
//! `HSILBL01` label section of row-major `u16` class ids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

pub const CUBE_MAGIC: &[u8; 8] = b"HSICUBE1";
pub const LABEL_MAGIC: &[u8; 8] = b"HSILBL01";

/// A `width × height × bands` radiance raster with per-pixel labels.
///
/// The raster is stored band-sequential: index `(band·height + row)·width + col`.
/// Labels are row-major, `0` meaning unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    width: usize,
    height: usize,
    bands: usize,
    raster: Vec<f64>,
    labels: Vec<u16>,
    class_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeHeader {
    width: usize,
    height: usize,
    bands: usize,
    dtype: String,
    interleave: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
}

impl HsiCube {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        raster: Vec<f64>,
        labels: Vec<u16>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self, DataError> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(DataError::Config(format!(
                "cube extents must be positive, got {width}x{height}x{bands}"
            )));
        }
        if raster.len() != width * height * bands {
            return Err(DataError::HeaderMismatch {
                declared: width * height * bands,
                found: raster.len(),
            });
        }
        if labels.len() != width * height {
            return Err(DataError::Config(format!(
                "{} labels for a {width}x{height} cube",
                labels.len()
            )));
        }
        if let Some(names) = &class_names {
            if let Some(&bad) = labels.iter().find(|&&l| l as usize > names.len()) {
                return Err(DataError::LabelOutOfRange {
                    label: bad,
                    classes: names.len(),
                });
            }
        }
        Ok(Self {
            width,
            height,
            bands,
            raster,
            labels,
            class_names,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn raster(&self) -> &[f64] {
        &self.raster
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn value(&self, band: usize, row: usize, col: usize) -> f64 {
        self.raster[(band * self.height + row) * self.width + col]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.value(b, row, col)).collect()
    }

    /// Number of classes: the length of `class_names` when present,
    /// otherwise the largest label.
    pub fn n_classes(&self) -> usize {
        match &self.class_names {
            Some(names) => names.len(),
            None => self.labels.iter().copied().max().unwrap_or(0) as usize,
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }

    /// Replaces the raster with one of a different band count.
    pub fn with_raster(&self, bands: usize, raster: Vec<f64>) -> Result<Self, DataError> {
        Self::new(
            self.width,
            self.height,
            bands,
            raster,
            self.labels.clone(),
            self.class_names.clone(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CubeHeader {
            width: self.width,
            height: self.height,
            bands: self.bands,
            dtype: "f32".into(),
            interleave: "bsq".into(),
            class_names: self.class_names.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + self.raster.len() * 4 + self.labels.len() * 2);
        out.extend_from_slice(CUBE_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for &v in &self.raster {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(LABEL_MAGIC);
        for &l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < 12 {
            return Err(DataError::Truncated {
                expected: 12,
                found: bytes.len(),
            });
        }
        if &bytes[..8] != CUBE_MAGIC {
            return Err(DataError::BadMagic {
                expected: String::from_utf8_lossy(CUBE_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
            });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12 + header_len;
        if bytes.len() < body_start {
            return Err(DataError::Truncated {
                expected: body_start,
                found: bytes.len(),
            });
        }
        let header: CubeHeader =
            serde_json::from_slice(&bytes[12..body_start]).map_err(|e| DataError::BadHeader(e.to_string()))?;
        if header.dtype != "f32" || header.interleave != "bsq" {
            return Err(DataError::BadHeader(format!(
                "unsupported dtype/interleave {}/{}",
                header.dtype, header.interleave
            )));
        }
        let pixels = header.width * header.height;
        let floats = pixels * header.bands;
        let body = &bytes[body_start..];
        let expected = floats * 4 + LABEL_MAGIC.len() + pixels * 2;
        if body.len() != expected {
            // A label section found at another float boundary means the header
            // lies about the payload; anything else is a cut-off file.
            let tail = LABEL_MAGIC.len() + pixels * 2;
            if body.len() > tail && (body.len() - tail).is_multiple_of(4) {
                let at = body.len() - tail;
                if &body[at..at + LABEL_MAGIC.len()] == LABEL_MAGIC {
                    return Err(DataError::HeaderMismatch {
                        declared: floats,
                        found: at / 4,
                    });
                }
            }
            return Err(DataError::Truncated {
                expected: body_start + expected,
                found: bytes.len(),
            });
        }
        let raster = body[..floats * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let label_start = floats * 4;
        if &body[label_start..label_start + 8] != LABEL_MAGIC {
            return Err(DataError::BadMagic {
                expected: String::from_utf8_lossy(LABEL_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&body[label_start..label_start + 8]).into_owned(),
            });
        }
        let labels = body[label_start + 8..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Self::new(
            header.width,
            header.height,
            header.bands,
            raster,
            labels,
            header.class_names,
        )
    }
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<(), DataError> {
    fs::write(path, cube.to_bytes())?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube, DataError> {
    HsiCube::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HsiCube {
        HsiCube::new(
            2,
            2,
            3,
            (0..12).map(|v| v as f64 * 0.5).collect(),
            vec![0, 1, 2, 1],
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_cell_round_trip_is_byte_exact() {
        let cube = HsiCube::new(1, 1, 1, vec![7.0], vec![1], None).unwrap();
        let bytes = cube.to_bytes();
        let back = HsiCube::from_bytes(&bytes).unwrap();
        assert_eq!(back, cube);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = tiny().to_bytes();
        assert_eq!(&bytes[..8], b"HSICUBE1");
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
        assert_eq!(
            json,
            r#"{"width":2,"height":2,"bands":3,"dtype":"f32","interleave":"bsq"}"#
        );
        assert_eq!(bytes.len(), 12 + len + 12 * 4 + 8 + 4 * 2);
    }

    #[test]
    fn payload_shorter_than_header_is_a_mismatch() {
        let cube = tiny();
        let mut bytes = cube.to_bytes();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        // drop the last float of the payload, keeping the label section intact
        let payload_end = 12 + len + 12 * 4;
        bytes.drain(payload_end - 4..payload_end);
        match HsiCube::from_bytes(&bytes) {
            Err(DataError::HeaderMismatch { declared, found }) => {
                assert_eq!((declared, found), (12, 11));
            }
            other => panic!("expected header mismatch, got {other:?}"),
        }
    }

    #[test]
    fn cut_file_is_truncated() {
        let bytes = tiny().to_bytes();
        for cut in [5, 11, 20, bytes.len() - 1] {
            let err = HsiCube::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, DataError::Truncated { .. }), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = tiny().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(HsiCube::from_bytes(&bytes), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn class_names_bound_labels() {
        let err = HsiCube::new(1, 2, 1, vec![0.0, 0.0], vec![1, 3], Some(vec!["a".into(), "b".into()]));
        assert!(matches!(err, Err(DataError::LabelOutOfRange { label: 3, classes: 2 })));
    }

    #[test]
    fn band_sequential_indexing() {
        let c = tiny();
        // band 1, row 1, col 0 -> (1*2 + 1)*2 + 0 = 6
        assert_eq!(c.value(1, 1, 0), 3.0);
        assert_eq!(c.spectrum(0, 1), vec![0.5, 2.5, 4.5]);
        assert_eq!(c.label(1, 0), 2);
        assert_eq!(c.n_classes(), 2);
    }
}
