//! Region label grids and pixel sets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Per-pixel region labels; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    index: BTreeMap<u32, Vec<usize>>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Validation(format!(
                "mask has {} labels, expected {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        let mut index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 {
                index.entry(l).or_default().push(i);
            }
        }
        Ok(Self {
            width,
            height,
            labels,
            index,
        })
    }

    /// A mask with a single region (id 1) covering every pixel.
    pub fn full(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![1; width * height]).expect("dimensions match")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Region ids in ascending order.
    pub fn region_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.index.keys().copied()
    }

    pub fn n_regions(&self) -> usize {
        self.index.len()
    }

    /// Flat pixel indices (`y * width + x`) of a region.
    pub fn pixels(&self, id: u32) -> Option<&[usize]> {
        self.index.get(&id).map(|v| v.as_slice())
    }

    pub fn region_size(&self, id: u32) -> usize {
        self.index.get(&id).map_or(0, |v| v.len())
    }

    pub fn pixel_set(&self, id: u32) -> Option<PixelSet> {
        self.pixels(id)
            .map(|p| PixelSet::from_indices(self.width, self.height, p.iter().copied()))
    }

    /// Mean pixel position of a region.
    pub fn centroid(&self, id: u32) -> Option<(f64, f64)> {
        let px = self.pixels(id)?;
        let (mut sx, mut sy) = (0.0, 0.0);
        for &i in px {
            sx += (i % self.width) as f64;
            sy += (i / self.width) as f64;
        }
        let n = px.len() as f64;
        Some((sx / n, sy / n))
    }

    /// Axis-aligned bounding box `(x_min, y_min, x_max, y_max)`, inclusive.
    pub fn bounding_box(&self, id: u32) -> Option<(usize, usize, usize, usize)> {
        let px = self.pixels(id)?;
        let mut bb = (usize::MAX, usize::MAX, 0, 0);
        for &i in px {
            let (x, y) = (i % self.width, i / self.width);
            bb.0 = bb.0.min(x);
            bb.1 = bb.1.min(y);
            bb.2 = bb.2.max(x);
            bb.3 = bb.3.max(y);
        }
        Some(bb)
    }
}

/// A set of pixels of a `width` x `height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSet {
    width: usize,
    height: usize,
    member: Vec<bool>,
    count: usize,
}

impl PixelSet {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            member: vec![true; width * height],
            count: width * height,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            member: vec![false; width * height],
            count: 0,
        }
    }

    pub fn from_indices(width: usize, height: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(width, height);
        for i in idx {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, i: usize) {
        if !self.member[i] {
            self.member[i] = true;
            self.count += 1;
        }
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.member[i]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_full(&self) -> bool {
        self.count == self.member.len()
    }

    /// Grows the set by `radius` pixels (square structuring element).
    pub fn dilate(&self, radius: usize) -> Self {
        if radius == 0 || self.is_full() {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        // Separable max filter: rows then columns.
        let mut rows = vec![false; w * h];
        for y in 0..h {
            let row = &self.member[y * w..(y + 1) * w];
            let mut last: Option<usize> = None;
            let mut next = vec![usize::MAX; w];
            let mut upcoming = usize::MAX;
            for x in (0..w).rev() {
                if row[x] {
                    upcoming = x;
                }
                next[x] = upcoming;
            }
            for x in 0..w {
                if row[x] {
                    last = Some(x);
                }
                let near_left = last.is_some_and(|l| x - l <= radius);
                let near_right = next[x] != usize::MAX && next[x] - x <= radius;
                rows[y * w + x] = near_left || near_right;
            }
        }
        let mut out = Self::empty(w, h);
        for x in 0..w {
            for y in 0..h {
                let y0 = y.saturating_sub(radius);
                let y1 = (y + radius).min(h - 1);
                if (y0..=y1).any(|yy| rows[yy * w + x]) {
                    out.insert(y * w + x);
                }
            }
        }
        out
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.member
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }
}
