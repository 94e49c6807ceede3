use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// One detector readout: non-negative photon counts on a (possibly binned) grid.
///
/// `counts` is indexed `[[row, column]]`, i.e. `[[y, x]]`. `bin` is the
/// number of fine pixels per side that were summed into each element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub counts: Array2<u32>,
    pub bin: usize,
    pub shot_id: u64,
}

impl Frame {
    pub fn new(counts: Array2<u32>, bin: usize, shot_id: u64) -> Self {
        Frame { counts, bin, shot_id }
    }

    pub fn width(&self) -> usize {
        self.counts.ncols()
    }

    pub fn height(&self) -> usize {
        self.counts.nrows()
    }

    /// Width in fine pixels.
    pub fn fine_width(&self) -> usize {
        self.width() * self.bin
    }

    pub fn fine_height(&self) -> usize {
        self.height() * self.bin
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}
