//! Window sums over single-channel planes via summed-area tables.

/// Summed-area table with a zero row/column prepended, accumulated in `f64`.
#[derive(Debug, Clone)]
pub struct Integral {
    height: usize,
    width: usize,
    table: Vec<f64>,
}

impl Integral {
    pub fn new<T: Copy + Into<f64>>(plane: &[T], height: usize, width: usize) -> Self {
        assert_eq!(plane.len(), height * width);
        let stride = width + 1;
        let mut table = vec![0.0; (height + 1) * stride];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += plane[y * width + x].into();
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Integral { height, width, table }
    }

    /// Sum over rows `y0..y1` and columns `x0..x1` (half-open).
    pub fn rect(&self, y0: usize, x0: usize, y1: usize, x1: usize) -> f64 {
        let s = self.width + 1;
        self.table[y1 * s + x1] - self.table[y0 * s + x1] - self.table[y1 * s + x0] + self.table[y0 * s + x0]
    }

    /// Bounds of the `(2r+1)`-wide window centred on `(y, x)`, clipped to the plane.
    pub fn clipped_window(&self, y: usize, x: usize, r: usize) -> (usize, usize, usize, usize) {
        (
            y.saturating_sub(r),
            x.saturating_sub(r),
            (y + r + 1).min(self.height),
            (x + r + 1).min(self.width),
        )
    }

    /// Sum and pixel count of the clipped window centred on `(y, x)`.
    pub fn window_sum(&self, y: usize, x: usize, r: usize) -> (f64, usize) {
        let (y0, x0, y1, x1) = self.clipped_window(y, x, r);
        (self.rect(y0, x0, y1, x1), (y1 - y0) * (x1 - x0))
    }
}

/// Mean over the clipped `(2r+1)^2` window at every pixel.
pub fn box_mean(plane: &[f64], height: usize, width: usize, r: usize) -> Vec<f64> {
    let integral = Integral::new(plane, height, width);
    let mut out = Vec::with_capacity(plane.len());
    for y in 0..height {
        for x in 0..width {
            let (sum, count) = integral.window_sum(y, x, r);
            out.push(sum / count as f64);
        }
    }
    out
}

/// Self-guided filter: edge-preserving smoothing of `plane` with
/// regularizer `reg` (in squared intensity units).
pub fn guided_self(plane: &[f64], height: usize, width: usize, r: usize, reg: f64) -> Vec<f64> {
    let mean = box_mean(plane, height, width, r);
    let sq: Vec<f64> = plane.iter().map(|v| v * v).collect();
    let mean_sq = box_mean(&sq, height, width, r);
    let mut a = Vec::with_capacity(plane.len());
    let mut b = Vec::with_capacity(plane.len());
    for (m, m2) in mean.iter().zip(&mean_sq) {
        let var = (m2 - m * m).max(0.0);
        let ak = var / (var + reg);
        a.push(ak);
        b.push(m - ak * m);
    }
    let a = box_mean(&a, height, width, r);
    let b = box_mean(&b, height, width, r);
    plane
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(v, (a, b))| a * v + b)
        .collect()
}
