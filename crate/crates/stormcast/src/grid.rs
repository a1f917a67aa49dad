//! Single-channel 2D grids and per-pixel displacement fields.

use crate::error::{Error, Result};

/// A single-channel grid of scalar intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Raster {
    /// Zero-filled grid. Grids smaller than 2x2 are not representable.
    pub fn new(h: usize, w: usize) -> Raster {
        assert!(h >= 2 && w >= 2, "raster must be at least 2x2, got {h}x{w}");
        Raster {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    /// Validating constructor for externally sourced data: checks length,
    /// minimum size, and that every value is finite.
    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Raster> {
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!(
                "raster must be at least 2x2, got {h}x{w}"
            )));
        }
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "raster {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("raster value {v}")));
        }
        Ok(Raster { h, w, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Bilinear sample at fractional coordinates, clamped to the border.
    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let yc = y.clamp(0.0, (self.h - 1) as f64);
        let xc = x.clamp(0.0, (self.w - 1) as f64);
        let y0 = yc.floor() as usize;
        let x0 = xc.floor() as usize;
        let y1 = (y0 + 1).min(self.h - 1);
        let x1 = (x0 + 1).min(self.w - 1);
        let fy = yc - y0 as f64;
        let fx = xc - x0 as f64;
        let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
        let bot = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Per-pixel displacement field: `u` is the column (x) component, `v` the
/// row (y) component, both in pixels per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    h: usize,
    w: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> FlowField {
        FlowField {
            h,
            w,
            u: vec![0.0; h * w],
            v: vec![0.0; h * w],
        }
    }

    pub fn from_components(h: usize, w: usize, u: Vec<f64>, v: Vec<f64>) -> Result<FlowField> {
        if u.len() != h * w || v.len() != h * w {
            return Err(Error::Shape(format!(
                "flow field {h}x{w} needs {} values per component, got {} and {}",
                h * w,
                u.len(),
                v.len()
            )));
        }
        for comp in [&u, &v] {
            if let Some(x) = comp.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("flow value {x}")));
            }
        }
        Ok(FlowField { h, w, u, v })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    /// Mean Euclidean magnitude over all pixels.
    pub fn mean_magnitude(&self) -> f64 {
        let s: f64 = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u * u + v * v).sqrt())
            .sum();
        s / (self.h * self.w) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates() {
        assert!(Raster::from_vec(1, 5, vec![0.0; 5]).is_err());
        assert!(Raster::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(Raster::from_vec(2, 2, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        assert!(Raster::from_vec(2, 2, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn sample_interpolates_and_clamps() {
        let r = Raster::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.sample(0.0, 0.0), 0.0);
        assert_eq!(r.sample(0.0, 0.5), 0.5);
        assert_eq!(r.sample(0.5, 0.5), 1.5);
        // outside the grid clamps to the border value
        assert_eq!(r.sample(-5.0, -5.0), 0.0);
        assert_eq!(r.sample(9.0, 9.0), 3.0);
    }

    #[test]
    fn flow_component_lengths_checked() {
        assert!(FlowField::from_components(2, 2, vec![0.0; 4], vec![0.0; 3]).is_err());
        let f = FlowField::from_components(2, 2, vec![1.0; 4], vec![0.0; 4]).unwrap();
        assert!((f.mean_magnitude() - 1.0).abs() < 1e-12);
    }
}
