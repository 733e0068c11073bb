//! Circular 2-D correlation with a sparse tap list, and its adjoint.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

use super::footprint::Footprint;

pub fn check_shape(footprint: Footprint, shape: (usize, usize)) -> Result<()> {
    let e = footprint.extent();
    if shape.0 < e || shape.1 < e {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than the {e}x{e} {footprint} footprint",
            shape.0, shape.1
        )));
    }
    Ok(())
}

#[inline]
fn wrap(i: usize, d: isize, n: usize) -> usize {
    (i as isize + d).rem_euclid(n as isize) as usize
}

/// out[i, j] += Σ_k taps[k] · x[(i + dy_k) mod h, (j + dx_k) mod w]
pub fn correlate_add(
    taps: &[f64],
    offsets: &[(isize, isize)],
    x: ArrayView2<'_, f64>,
    mut out: ArrayViewMut2<'_, f64>,
) {
    let (h, w) = x.dim();
    for (&t, &(dy, dx)) in taps.iter().zip(offsets) {
        if t == 0.0 {
            continue;
        }
        let cols: Vec<usize> = (0..w).map(|j| wrap(j, dx, w)).collect();
        for i in 0..h {
            let src = x.row(wrap(i, dy, h));
            let mut dst = out.row_mut(i);
            for (d, &c) in dst.iter_mut().zip(&cols) {
                *d += t * src[c];
            }
        }
    }
}

pub fn correlate(taps: &[f64], offsets: &[(isize, isize)], x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    correlate_add(taps, offsets, x, out.view_mut());
    out
}

/// Adjoint of [`correlate_add`]: out[q] += Σ_k taps[k] · u[q − offset_k].
pub fn correlate_adjoint_add(
    taps: &[f64],
    offsets: &[(isize, isize)],
    u: ArrayView2<'_, f64>,
    mut out: ArrayViewMut2<'_, f64>,
) {
    let (h, w) = u.dim();
    for (&t, &(dy, dx)) in taps.iter().zip(offsets) {
        if t == 0.0 {
            continue;
        }
        let cols: Vec<usize> = (0..w).map(|j| wrap(j, -dx, w)).collect();
        for i in 0..h {
            let src = u.row(wrap(i, -dy, h));
            let mut dst = out.row_mut(i);
            for (d, &c) in dst.iter_mut().zip(&cols) {
                *d += t * src[c];
            }
        }
    }
}

/// Flat (row-major) indices touched by the taps for output position `(i, j)`.
pub fn support_indices(
    offsets: &[(isize, isize)],
    shape: (usize, usize),
    i: usize,
    j: usize,
    out: &mut Vec<usize>,
) {
    let (h, w) = shape;
    out.clear();
    out.extend(
        offsets
            .iter()
            .map(|&(dy, dx)| wrap(i, dy, h) * w + wrap(j, dx, w)),
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn adjoint_identity() {
        let offsets = Footprint::Square3.offsets();
        let taps: Vec<f64> = (0..9).map(|k| (k as f64 * 0.37).sin()).collect();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| ((i * 5 + j) as f64).cos());
        let u = Array2::from_shape_fn((4, 5), |(i, j)| ((i * 7 + j * 3) as f64 * 0.1).sin());
        let fx = correlate(&taps, &offsets, x.view());
        let mut ftu = Array2::zeros((4, 5));
        correlate_adjoint_add(&taps, &offsets, u.view(), ftu.view_mut());
        let lhs: f64 = (&fx * &u).sum();
        let rhs: f64 = (&x * &ftu).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
