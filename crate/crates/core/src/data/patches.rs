//! Spatial windows around labeled pixels.

use super::HsiCube;

/// Border policy for windows that extend past the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    /// Reflect about the edge pixel without repeating it (`-1 → 1`).
    #[default]
    Mirror,
    Zero,
}

/// One `P × P × C` window, flattened in (row, col, band) order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub patch: Vec<f64>,
    pub label: u16,
    /// `(row, col)` of the centre pixel.
    pub pixel: (usize, usize),
}

/// Offset of the centre pixel from the window's top-left corner. For even
/// sizes this is the top-left cell of the central 2×2 block.
pub fn center_offset(size: usize) -> usize {
    (size - 1) / 2
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// The window centred at `(row, col)`.
pub fn patch_at(cube: &HsiCube, row: usize, col: usize, size: usize, padding: Padding) -> Vec<f64> {
    let bands = cube.bands();
    let (w, h) = (cube.width(), cube.height());
    let off = center_offset(size) as isize;
    let mut out = vec![0.0; size * size * bands];
    for r in 0..size {
        let rr = row as isize + r as isize - off;
        for c in 0..size {
            let cc = col as isize + c as isize - off;
            let src = match padding {
                Padding::Mirror => Some((reflect(rr, h), reflect(cc, w))),
                Padding::Zero => {
                    let inside = (0..h as isize).contains(&rr) && (0..w as isize).contains(&cc);
                    inside.then_some((rr as usize, cc as usize))
                }
            };
            if let Some((sr, sc)) = src {
                let base = (r * size + c) * bands;
                for b in 0..bands {
                    out[base + b] = cube.value(b, sr, sc);
                }
            }
        }
    }
    out
}

/// One sample per labeled pixel, ordered by `(row, col)`.
pub fn extract_patches(cube: &HsiCube, size: usize, padding: Padding) -> Vec<PatchSample> {
    assert!(size >= 1, "patch size must be at least 1");
    let mut out = Vec::with_capacity(cube.labeled_count());
    for row in 0..cube.height() {
        for col in 0..cube.width() {
            let label = cube.label(row, col);
            if label == 0 {
                continue;
            }
            out.push(PatchSample {
                patch: patch_at(cube, row, col, size, padding),
                label,
                pixel: (row, col),
            });
        }
    }
    out
}
