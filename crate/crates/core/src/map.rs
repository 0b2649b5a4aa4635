use crate::error::{Error, Result};

/// Rank-3 real grid `(height, width, channels)` stored row-major with the
/// channel index varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl DenseMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        DenseMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        DenseMap {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimMismatch(format!(
                "payload of {} values for dims ({height}, {width}, {channels})",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(DenseMap {
            height,
            width,
            channels,
            data,
        })
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    /// All channels at one cell.
    pub fn cell(&self, x: usize, y: usize) -> &[f32] {
        let start = self.index(x, y, 0);
        &self.data[start..start + self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn same_dims(&self, other: &DenseMap) -> bool {
        self.dims() == other.dims()
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// Heatmaps must additionally lie in `[0, 1]`.
    pub fn check_heatmap(&self) -> Result<()> {
        self.check_finite()?;
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(index) => Err(Error::HeatmapRange {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }

    /// Copy shifted by `(dx, dy)` cells, zero-filling exposed cells.
    pub fn shifted(&self, dx: isize, dy: isize) -> DenseMap {
        let mut out = DenseMap::zeros(self.height, self.width, self.channels);
        for y in 0..self.height {
            let ty = y as isize + dy;
            if ty < 0 || ty >= self.height as isize {
                continue;
            }
            for x in 0..self.width {
                let tx = x as isize + dx;
                if tx < 0 || tx >= self.width as isize {
                    continue;
                }
                let src = self.index(x, y, 0);
                let dst = out.index(tx as usize, ty as usize, 0);
                out.data[dst..dst + self.channels]
                    .copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }
}
