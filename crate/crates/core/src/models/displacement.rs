//! Refraction displacement field for the raindrop model.
//!
//! Two rasters U, V give per-texel pixel offsets; a drop pixel samples the
//! scene at drop position plus the offset scaled by the drop's water
//! thickness. Fields are stored as 16-bit PGM pairs (`udisp.pgm`,
//! `vdisp.pgm`) with signed-offset encoding `off = (word - 32768) / 2048`
//! pixels, covering [-16, 16).

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{read_pgm16, write_pgm16, Plane};

pub const DISP_ENCODE_SCALE: f64 = 2048.0;
pub const DISP_ENCODE_BIAS: f64 = 32768.0;

/// Fixed U/V offset rasters, in pixels.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    u: Plane,
    v: Plane,
}

fn decode(word: u16) -> f64 {
    (word as f64 - DISP_ENCODE_BIAS) / DISP_ENCODE_SCALE
}

fn encode(off: f64) -> u16 {
    (off * DISP_ENCODE_SCALE + DISP_ENCODE_BIAS)
        .round()
        .clamp(0.0, 65535.0) as u16
}

impl DisplacementField {
    pub fn new(u: Plane, v: Plane) -> Result<Self> {
        if !u.same_dims(&v) {
            return Err(Error::dims(u.width(), u.height(), v.width(), v.height()));
        }
        Ok(DisplacementField { u, v })
    }

    pub fn width(&self) -> usize {
        self.u.width()
    }

    pub fn height(&self) -> usize {
        self.u.height()
    }

    /// Offsets at a texel, in pixels.
    #[inline]
    pub fn at(&self, tx: usize, ty: usize) -> (f64, f64) {
        (self.u.get(tx, ty), self.v.get(tx, ty))
    }

    /// Nearest-texel lookup for normalized coordinates in [0, 1].
    #[inline]
    pub fn sample(&self, nx: f64, ny: f64) -> (f64, f64) {
        let tx = (nx.clamp(0.0, 1.0) * (self.width() - 1) as f64).round() as usize;
        let ty = (ny.clamp(0.0, 1.0) * (self.height() - 1) as f64).round() as usize;
        self.at(tx, ty)
    }

    /// Smooth radially symmetric refraction-like field: offsets point through
    /// the center with magnitude growing toward the rim, peaking at 14 px.
    /// Values are quantized exactly as the PGM encoding stores them, so an
    /// in-memory field and its saved/reloaded copy are identical.
    pub fn synthetic(width: usize, height: usize) -> Self {
        let mut u = Plane::new(width, height, 0.0);
        let mut v = Plane::new(width, height, 0.0);
        for y in 0..height {
            for x in 0..width {
                // Normalized coordinates in [-1, 1].
                let nx = 2.0 * (x as f64 + 0.5) / width as f64 - 1.0;
                let ny = 2.0 * (y as f64 + 0.5) / height as f64 - 1.0;
                let r2 = (nx * nx + ny * ny).min(1.0);
                let gain = 14.0 * (0.25 + 0.75 * r2);
                u.set(x, y, decode(encode(-gain * nx)));
                v.set(x, y, decode(encode(-gain * ny)));
            }
        }
        DisplacementField { u, v }
    }

    pub fn load(u_path: &Path, v_path: &Path) -> Result<Self> {
        let (uw, uh, uwords) = read_pgm16(u_path)?;
        let (vw, vh, vwords) = read_pgm16(v_path)?;
        if (uw, uh) != (vw, vh) {
            return Err(Error::dims(uw, uh, vw, vh));
        }
        let u = Plane::from_vec(uw, uh, uwords.iter().map(|&w| decode(w)).collect());
        let v = Plane::from_vec(vw, vh, vwords.iter().map(|&w| decode(w)).collect());
        Ok(DisplacementField { u, v })
    }

    pub fn save(&self, u_path: &Path, v_path: &Path) -> Result<()> {
        let uwords: Vec<u16> = self.u.data().iter().map(|&o| encode(o)).collect();
        let vwords: Vec<u16> = self.v.data().iter().map(|&o| encode(o)).collect();
        write_pgm16(u_path, self.width(), self.height(), &uwords)?;
        write_pgm16(v_path, self.width(), self.height(), &vwords)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_round_trips() {
        for &off in &[-16.0, -3.25, 0.0, 0.00048828125, 7.5, 15.99] {
            let back = decode(encode(off));
            assert!((back - off.clamp(-16.0, 15.999_511_718_75)).abs() <= 0.5 / DISP_ENCODE_SCALE);
        }
    }

    #[test]
    fn synthetic_field_save_load_identical() {
        let dir = tempfile::tempdir().unwrap();
        let up = dir.path().join("udisp.pgm");
        let vp = dir.path().join("vdisp.pgm");
        let field = DisplacementField::synthetic(64, 64);
        field.save(&up, &vp).unwrap();
        let back = DisplacementField::load(&up, &vp).unwrap();
        assert_eq!(back.u.data(), field.u.data());
        assert_eq!(back.v.data(), field.v.data());
    }

    #[test]
    fn synthetic_field_points_inward() {
        let field = DisplacementField::synthetic(64, 64);
        // Right of center: U should be negative (pointing back through center).
        let (u, _) = field.at(60, 32);
        assert!(u < 0.0);
        let (u, v) = field.at(3, 3);
        assert!(u > 0.0 && v > 0.0);
    }

    #[test]
    fn offsets_within_encoding_range() {
        let field = DisplacementField::synthetic(48, 48);
        for d in [field.u.data(), field.v.data()] {
            assert!(d.iter().all(|&o| (-16.0..16.0).contains(&o)));
        }
    }
}
