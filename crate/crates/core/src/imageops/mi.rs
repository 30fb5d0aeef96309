use crate::error::{Error, Result};
use crate::raster::RasterImage;

pub const DEFAULT_MI_BINS: usize = 64;

/// Min-max normalization of one image into `bins` equal-width bins.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Binning {
    min: f64,
    scale: f64,
    bins: usize,
}

impl Binning {
    pub(crate) fn fit(values: impl Iterator<Item = f64>, bins: usize) -> Self {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        // A constant image collapses into bin 0.
        let scale = if max > min { bins as f64 / (max - min) } else { 0.0 };
        Binning { min, scale, bins }
    }

    #[inline]
    pub(crate) fn bin(&self, v: f64) -> usize {
        let b = ((v - self.min) * self.scale).floor();
        if b <= 0.0 {
            0
        } else {
            (b as usize).min(self.bins - 1)
        }
    }
}

/// Joint intensity histogram of two images.
#[derive(Clone, Debug)]
pub struct JointHistogram {
    bins: usize,
    counts: Vec<u32>,
    total: u64,
}

impl JointHistogram {
    pub fn new(bins: usize) -> Self {
        JointHistogram {
            bins,
            counts: vec![0; bins * bins],
            total: 0,
        }
    }

    pub fn clear(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.total = 0;
    }

    #[inline]
    pub fn add(&mut self, a_bin: usize, b_bin: usize) {
        self.counts[a_bin * self.bins + b_bin] += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `sum p(a,b) ln(p(a,b) / (p(a) p(b)))` in nats over non-empty cells.
    pub fn mutual_information(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let n = self.total as f64;
        let mut row = vec![0u64; self.bins];
        let mut col = vec![0u64; self.bins];
        for i in 0..self.bins {
            for j in 0..self.bins {
                let c = self.counts[i * self.bins + j] as u64;
                row[i] += c;
                col[j] += c;
            }
        }
        let nlogn = |c: u64| if c == 0 { 0.0 } else { c as f64 * (c as f64).ln() };
        let joint: f64 = self.counts.iter().map(|&c| nlogn(c as u64)).sum();
        let marg: f64 = row.iter().chain(col.iter()).map(|&c| nlogn(c)).sum();
        ((joint - marg) / n + n.ln()).max(0.0)
    }

    /// Entropy of the first (row) marginal in nats.
    pub fn row_entropy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let n = self.total as f64;
        (0..self.bins)
            .map(|i| self.counts[i * self.bins..(i + 1) * self.bins].iter().map(|&c| c as u64).sum::<u64>())
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
}

fn single_channel(img: &RasterImage, which: &str) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::Channels(format!(
            "{which} image must have 1 channel, found {}",
            img.channels()
        )));
    }
    Ok(())
}

fn histogram(a: &RasterImage, b: &RasterImage, bins: usize) -> Result<JointHistogram> {
    single_channel(a, "first")?;
    single_channel(b, "second")?;
    a.require_same_grid(b)?;
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    let ba = Binning::fit(a.data.iter().map(|&v| v as f64), bins);
    let bb = Binning::fit(b.data.iter().map(|&v| v as f64), bins);
    let mut hist = JointHistogram::new(bins);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        hist.add(ba.bin(x as f64), bb.bin(y as f64));
    }
    Ok(hist)
}

/// Histogram mutual information (nats) between two single-channel images of
/// equal geometry. Each image is min-max normalized into `bins` bins.
pub fn mutual_information(a: &RasterImage, b: &RasterImage, bins: usize) -> Result<f64> {
    Ok(histogram(a, b, bins)?.mutual_information())
}

/// Marginal entropy (nats) of one image under the same binning as MI.
pub fn entropy(a: &RasterImage, bins: usize) -> Result<f64> {
    Ok(histogram(a, a, bins)?.row_entropy())
}
