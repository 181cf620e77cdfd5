use crate::error::{Error, Result};
use crate::grid::{BinaryGrid, Grid};

/// Exact Euclidean distance (cell-centre metric) from every cell to the
/// nearest set cell. Set cells map to 0.
///
/// Separable lower-envelope-of-parabolas transform: squared distances are
/// integers and stay exact in `f64`, so the result equals a brute-force scan
/// bit for bit.
pub fn distance_transform(mask: &BinaryGrid) -> Result<Grid<f64>> {
    let (w, h) = (mask.width(), mask.height());
    if mask.count_set() == 0 {
        return Err(Error::EmptyMask("distance-transform input"));
    }

    // Squared distance along columns; `None` where the column has no set cell.
    let mut cols: Vec<Option<f64>> = vec![None; w * h];
    let mut line_in: Vec<Option<f64>> = vec![None; h.max(w)];
    let mut line_out = vec![0.0; h.max(w)];
    let mut env = Envelope::with_capacity(h.max(w));
    for x in 0..w {
        for y in 0..h {
            line_in[y] = mask.get(x, y).then_some(0.0);
        }
        if env.transform(&line_in[..h], &mut line_out[..h]) {
            for y in 0..h {
                cols[y * w + x] = Some(line_out[y]);
            }
        }
    }

    let mut out = Grid::filled(w, h, 0.0);
    for y in 0..h {
        line_in[..w].copy_from_slice(&cols[y * w..(y + 1) * w]);
        let any = env.transform(&line_in[..w], &mut line_out[..w]);
        debug_assert!(any);
        for x in 0..w {
            *out.get_mut(x, y) = line_out[x].sqrt();
        }
    }
    Ok(out)
}

struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    /// 1-D squared distance transform of sampled function `f` (missing
    /// samples are +inf). Returns false when every sample is missing.
    fn transform(&mut self, f: &[Option<f64>], out: &mut [f64]) -> bool {
        self.sites.clear();
        self.bounds.clear();
        let value = |q: usize| f[q].expect("site has a finite sample");
        for (q, fq) in f.iter().enumerate() {
            let Some(fq) = *fq else { continue };
            let qf = q as f64;
            loop {
                let Some(&v) = self.sites.last() else {
                    self.sites.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let vf = v as f64;
                let s = ((fq + qf * qf) - (value(v) + vf * vf)) / (2.0 * qf - 2.0 * vf);
                if s <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.sites.is_empty() {
            return false;
        }
        let mut k = 0;
        for (q, slot) in out.iter_mut().enumerate() {
            let qf = q as f64;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < qf {
                k += 1;
            }
            let v = self.sites[k];
            let d = qf - v as f64;
            *slot = d * d + value(v);
        }
        true
    }
}
