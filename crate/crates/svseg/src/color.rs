//! sRGB to CIE Lab conversion and luminance, shared by the feature extractors.

/// Rec. 601 luma from 8-bit sRGB, on the 0..255 scale.
pub(crate) fn luminance(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

fn srgb_linearize(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Convert 8-bit sRGB to CIE Lab under the D65 reference white.
///
/// L is in [0, 100]; a and b stay within roughly [-110, 110] for the
/// sRGB gamut.
pub(crate) fn rgb_to_lab(r: u8, g: u8, b: u8) -> [f64; 3] {
    let rl = srgb_linearize(r as f64 / 255.0);
    let gl = srgb_linearize(g as f64 / 255.0);
    let bl = srgb_linearize(b as f64 / 255.0);

    const M: [[f64; 3]; 3] = [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ];
    let x = rl * M[0][0] + gl * M[0][1] + bl * M[0][2];
    let y = rl * M[1][0] + gl * M[1][1] + bl * M[1][2];
    let z = rl * M[2][0] + gl * M[2][1] + bl * M[2][2];

    // The D65 reference white, taken as the matrix row sums so that
    // neutral grays map to exactly zero chroma.
    let xr = x / (M[0][0] + M[0][1] + M[0][2]);
    let yr = y / (M[1][0] + M[1][1] + M[1][2]);
    let zr = z / (M[2][0] + M[2][1] + M[2][2]);

    const EPSILON: f64 = 0.008856;
    const KAPPA: f64 = 903.3;
    let f = |t: f64| -> f64 {
        if t > EPSILON {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    };

    let fx = f(xr);
    let fy = f(yr);
    let fz = f(zr);

    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_white_and_black() {
        let white = rgb_to_lab(255, 255, 255);
        assert!((white[0] - 100.0).abs() < 0.01);
        assert!(white[1].abs() < 0.01);
        assert!(white[2].abs() < 0.01);

        let black = rgb_to_lab(0, 0, 0);
        assert!(black[0].abs() < 1e-9);
    }

    #[test]
    fn lab_grays_have_zero_chroma() {
        for v in [32u8, 128, 200] {
            let lab = rgb_to_lab(v, v, v);
            assert!(lab[1].abs() < 1e-6);
            assert!(lab[2].abs() < 1e-6);
        }
    }
}
