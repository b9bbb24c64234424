use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate space a box is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordSpace {
    /// Full-resolution annotation pixels.
    Native,
    /// The 416x416 network input.
    Net416,
    /// Probability-map cells.
    Map,
}

impl CoordSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            CoordSpace::Native => "native",
            CoordSpace::Net416 => "net416",
            CoordSpace::Map => "map",
        }
    }
}

impl std::fmt::Display for CoordSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CoordSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(CoordSpace::Native),
            "net416" => Ok(CoordSpace::Net416),
            "map" => Ok(CoordSpace::Map),
            other => Err(Error::invalid(format!("unknown coordinate space {other:?}"))),
        }
    }
}

/// Side length of the network input.
pub const NET_SIZE: f64 = 416.0;

/// Axis-aligned box `[x, y, w, h]` with its left/top corner at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub space: CoordSpace,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, space: CoordSpace) -> Result<Self> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("box [{x}, {y}, {w}, {h}]")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid(format!("box dimensions must be positive, got w={w} h={h}")));
        }
        Ok(BoundingBox { x, y, w, h, space })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Checks the box against the `width` x `height` extent of its space.
    pub fn check_within(&self, width: f64, height: f64) -> Result<()> {
        const SLACK: f64 = 1e-6;
        if self.x < -SLACK || self.y < -SLACK || self.right() > width + SLACK || self.bottom() > height + SLACK {
            return Err(Error::invalid(format!(
                "box {:?} exceeds {width}x{height} {} bounds",
                self.to_array(),
                self.space
            )));
        }
        Ok(())
    }
}

/// Pixel extent of a coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub width: f64,
    pub height: f64,
    pub space: CoordSpace,
}

impl Frame {
    pub fn new(width: f64, height: f64, space: CoordSpace) -> Self {
        Frame { width, height, space }
    }

    pub fn net416() -> Self {
        Frame::new(NET_SIZE, NET_SIZE, CoordSpace::Net416)
    }
}

/// Scales each axis independently from `from` to `to`.
pub fn rescale_box(b: &BoundingBox, from: Frame, to: Frame) -> Result<BoundingBox> {
    if b.space != from.space {
        return Err(Error::SpaceMismatch {
            left: b.space,
            right: from.space,
        });
    }
    for (what, v) in [("source width", from.width), ("source height", from.height), ("target width", to.width), ("target height", to.height)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("{what} must be positive, got {v}")));
        }
    }
    let sx = to.width / from.width;
    let sy = to.height / from.height;
    BoundingBox::new(b.x * sx, b.y * sy, b.w * sx, b.h * sy, to.space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const NATIVE: Frame = Frame { width: 2544.0, height: 3056.0, space: CoordSpace::Native };

    #[test]
    fn full_frame_to_net() {
        let b = BoundingBox::new(0.0, 0.0, 2544.0, 3056.0, CoordSpace::Native).unwrap();
        let r = rescale_box(&b, NATIVE, Frame::net416()).unwrap();
        assert_eq!(r.to_array(), [0.0, 0.0, 416.0, 416.0]);
        assert_eq!(r.space, CoordSpace::Net416);
    }

    #[test]
    fn center_box_to_net() {
        let b = BoundingBox::new(1272.0, 1528.0, 100.0, 100.0, CoordSpace::Native).unwrap();
        let r = rescale_box(&b, NATIVE, Frame::net416()).unwrap();
        assert_relative_eq!(r.x, 208.0, epsilon = 1e-12);
        assert_relative_eq!(r.y, 208.0, epsilon = 1e-12);
        assert_relative_eq!(r.w, 100.0 * 416.0 / 2544.0, epsilon = 1e-12);
        assert_relative_eq!(r.h, 100.0 * 416.0 / 3056.0, epsilon = 1e-12);
        assert!((r.w - 16.35).abs() < 0.01 && (r.h - 13.61).abs() < 0.01);
    }

    #[test]
    fn identity_and_errors() {
        let b = BoundingBox::new(3.0, 4.0, 5.0, 6.0, CoordSpace::Native).unwrap();
        assert_eq!(rescale_box(&b, NATIVE, NATIVE).unwrap(), b);
        let zero = Frame::new(0.0, 416.0, CoordSpace::Net416);
        assert!(rescale_box(&b, NATIVE, zero).is_err());
        assert!(matches!(
            rescale_box(&b, Frame::net416(), NATIVE),
            Err(Error::SpaceMismatch { .. })
        ));
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0, CoordSpace::Map).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0, CoordSpace::Map).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0, CoordSpace::Map).is_err());
    }

    #[test]
    fn bounds_check() {
        let b = BoundingBox::new(400.0, 0.0, 20.0, 10.0, CoordSpace::Net416).unwrap();
        assert!(b.check_within(416.0, 416.0).is_err());
        assert!(b.check_within(420.0, 416.0).is_ok());
    }
}
