use super::ModelError;

/// Axis-aligned box in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Region {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, ModelError> {
        let r = Region {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.x_min < self.x_max && self.y_min < self.y_max {
            Ok(())
        } else {
            Err(ModelError::DegenerateBox)
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union.
pub fn iou(a: &Region, b: &Region) -> f64 {
    let w = libm::fmin(a.x_max, b.x_max) - libm::fmax(a.x_min, b.x_min);
    let h = libm::fmin(a.y_max, b.y_max) - libm::fmax(a.y_min, b.y_min);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}
