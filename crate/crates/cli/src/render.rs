//! Classification maps as binary PPM.

/// Fully saturated, full-value colour for class `class` (1-based) at hue
/// `(class − 1) / n_classes`. Class 0 is black.
pub fn class_color(class: u16, n_classes: usize) -> [u8; 3] {
    if class == 0 || n_classes == 0 {
        return [0, 0, 0];
    }
    let h = (class as f64 - 1.0) / n_classes as f64 * 6.0;
    let sector = h.floor();
    let f = h - sector;
    let (r, g, b) = match sector as u32 % 6 {
        0 => (1.0, f, 0.0),
        1 => (1.0 - f, 1.0, 0.0),
        2 => (0.0, 1.0, f),
        3 => (0.0, 1.0 - f, 1.0),
        4 => (f, 0.0, 1.0),
        _ => (1.0, 0.0, 1.0 - f),
    };
    let to_byte = |v: f64| (v * 255.0).round() as u8;
    [to_byte(r), to_byte(g), to_byte(b)]
}

/// `P6` image of a row-major class raster.
pub fn ppm(width: usize, height: usize, classes: &[u16], n_classes: usize) -> Vec<u8> {
    assert_eq!(classes.len(), width * height, "class raster size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(classes.len() * 3);
    for &c in classes {
        out.extend_from_slice(&class_color(c, n_classes));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_hues() {
        assert_eq!(class_color(1, 3), [255, 0, 0]);
        assert_eq!(class_color(2, 3), [0, 255, 0]);
        assert_eq!(class_color(3, 3), [0, 0, 255]);
        assert_eq!(class_color(2, 4), [128, 255, 0]);
        assert_eq!(class_color(0, 4), [0, 0, 0]);
    }

    #[test]
    fn single_pixel_image() {
        let img = ppm(1, 1, &[2], 2);
        assert_eq!(img, b"P6\n1 1\n255\n\x00\xff\xff".to_vec());
    }
}
