use serde::{Deserialize, Serialize};

use super::types::BoundingBox;
use super::FunctionError;

/// Binary mask stored as alternating run lengths, row-major, starting with a
/// run of zeros (which may have length 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    pub rle: Vec<u64>,
}

impl SegmentationMask {
    pub fn validate(&self) -> Result<(), FunctionError> {
        let total: u64 = self.rle.iter().sum();
        let expected = (self.width * self.height) as u64;
        if total != expected {
            return Err(FunctionError::validation(format!(
                "mask runs sum to {total}, expected width x height = {expected}"
            )));
        }
        Ok(())
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.rle.iter().skip(1).step_by(2).sum()
    }

    pub fn area_fraction(&self) -> f64 {
        let total = (self.width * self.height) as f64;
        if total == 0.0 {
            0.0
        } else {
            self.area() as f64 / total
        }
    }
}

/// Uncompressed row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self, FunctionError> {
        if pixels.len() != width * height {
            return Err(FunctionError::validation(format!(
                "bitmap has {} pixels, expected {width} x {height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width * height],
        }
    }

    /// Axis-aligned filled rectangle covering columns `x0..x1` and rows `y0..y1`.
    pub fn rectangle(width: usize, height: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let mut b = Self::empty(width, height);
        for y in y0..y1.min(height) {
            for x in x0..x1.min(width) {
                b.pixels[y * width + x] = true;
            }
        }
        b
    }

    pub fn from_mask(mask: &SegmentationMask) -> Result<Self, FunctionError> {
        rle_decode(mask)
    }

    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Tight normalized box around the foreground, or `None` if empty.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, _) in self.pixels.iter().enumerate().filter(|(_, &p)| p) {
            let (x, y) = (i % self.width, i / self.width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        if x0 == usize::MAX {
            return None;
        }
        let (w, h) = (self.width as f64, self.height as f64);
        BoundingBox::new(x0 as f64 / w, y0 as f64 / h, x1 as f64 / w, y1 as f64 / h).ok()
    }
}

/// Canonical run-length encoding: the first run counts zeros (possibly 0),
/// runs then alternate, and no other run is empty.
pub fn rle_encode(bitmap: &Bitmap) -> SegmentationMask {
    let mut rle = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &p in &bitmap.pixels {
        if p == current {
            run += 1;
        } else {
            rle.push(run);
            current = p;
            run = 1;
        }
    }
    if run > 0 || rle.is_empty() {
        rle.push(run);
    }
    SegmentationMask {
        width: bitmap.width,
        height: bitmap.height,
        rle,
    }
}

pub fn rle_decode(mask: &SegmentationMask) -> Result<Bitmap, FunctionError> {
    mask.validate()?;
    let mut pixels = Vec::with_capacity(mask.width * mask.height);
    for (i, &run) in mask.rle.iter().enumerate() {
        pixels.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
    }
    Bitmap::new(mask.width, mask.height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_and_all_one() {
        let zeros = rle_encode(&Bitmap::empty(4, 3));
        assert_eq!(zeros.rle, vec![12]);
        let ones = rle_encode(&Bitmap::new(4, 3, vec![true; 12]).unwrap());
        assert_eq!(ones.rle, vec![0, 12]);
        assert_eq!(ones.area_fraction(), 1.0);
    }

    #[test]
    fn rectangle_area_and_box() {
        let b = Bitmap::rectangle(10, 8, 2, 1, 6, 5);
        let m = rle_encode(&b);
        assert_eq!(m.area(), 16);
        assert_eq!(
            b.bounding_box().unwrap().coords(),
            [0.2, 0.125, 0.6, 0.625]
        );
    }

    #[test]
    fn run_sum_mismatch_rejected() {
        let bad = SegmentationMask {
            width: 2,
            height: 2,
            rle: vec![1, 2],
        };
        assert!(rle_decode(&bad).is_err());
    }

    fn bitmaps() -> impl Strategy<Value = Bitmap> {
        (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<bool>(), w * h)
                .prop_map(move |p| Bitmap::new(w, h, p).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(b in bitmaps()) {
            let m = rle_encode(&b);
            prop_assert!(m.rle.iter().skip(1).all(|&r| r > 0));
            prop_assert_eq!(m.area() as usize, b.area());
            prop_assert_eq!(rle_decode(&m).unwrap(), b);
        }
    }
}
