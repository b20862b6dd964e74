//! Low-level numeric kernels: GEMM dispatch and 3D im2col/col2im.

/// Largest im2col tile, in elements.
pub const TILE_ELEMS: usize = 1 << 21;

/// Strided matrix view for [`gemm`]: element (i, j) lives at
/// `offset + i * row_stride + j * col_stride`.
#[derive(Clone, Copy, Debug)]
pub struct MatLayout {
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatLayout {
    pub const fn row_major(cols: usize) -> Self {
        Self {
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub const fn transposed(cols: usize) -> Self {
        Self {
            row_stride: 1,
            col_stride: cols,
        }
    }
}

/// `C = alpha * A(m×k) * B(k×n) + beta * C(m×n)`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    la: MatLayout,
    b: &[f64],
    lb: MatLayout,
    beta: f64,
    c: &mut [f64],
    lc: MatLayout,
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, l: MatLayout| {
        (rows - 1) * l.row_stride + (cols - 1) * l.col_stride + 1
    };
    if k > 0 {
        assert!(a.len() >= span(m, k, la), "gemm: A too short");
        assert!(b.len() >= span(k, n, lb), "gemm: B too short");
    }
    assert!(c.len() >= span(m, n, lc), "gemm: C too short");
    // SAFETY: the asserts above guarantee every strided access is in bounds
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr(),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            lc.row_stride as isize,
            lc.col_stride as isize,
        );
    }
}

/// Kernel, stride and zero-padding of a 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub const fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    pub const fn cubic(kernel: usize, stride: usize, padding: usize) -> Self {
        Self::new([kernel; 3], [stride; 3], [padding; 3])
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Spatial output size of a convolution, or `None` if the kernel does not
    /// fit the padded input.
    pub fn conv_output(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] || self.stride[a] == 0 {
                return None;
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }

    /// Spatial output size of the transposed convolution.
    pub fn transposed_output(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (input[a].checked_sub(1)?) * self.stride[a] + self.kernel[a];
            out[a] = full.checked_sub(2 * self.padding[a]).filter(|&v| v > 0)?;
        }
        Some(out)
    }
}

/// Output columns `lo..hi` whose input column `ow·stride + offset − pad`
/// falls inside `0..width`.
fn valid_columns(out_w: usize, width: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
    let hi = if width + pad <= offset {
        0
    } else {
        (width + pad - offset).div_ceil(stride).min(out_w)
    };
    (lo.min(hi), hi)
}

/// Number of output depth rows per tile, for `rows_cols` columns per row.
pub fn tile_rows(col_rows: usize, cols_per_row: usize, total_rows: usize) -> usize {
    let per_row = (col_rows * cols_per_row).max(1);
    (TILE_ELEMS / per_row).clamp(1, total_rows.max(1))
}

/// Fills `col` ((channels·k³) × (rows·out_h·out_w)) with patches of the
/// `channels`-channel image for output depth rows `od0..od1`.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    image: &[f64],
    channels: usize,
    dims: [usize; 3],
    geom: &ConvGeometry,
    out: [usize; 3],
    od0: usize,
    od1: usize,
    col: &mut [f64],
) {
    let [d, h, w] = dims;
    let [kd, kh, kw] = geom.kernel;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.padding;
    let [_, oh_n, ow_n] = out;
    let cols = (od1 - od0) * oh_n * ow_n;
    let plane = h * w;
    let vol = d * plane;
    let mut row = 0;
    for c in 0..channels {
        let img = &image[c * vol..(c + 1) * vol];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let mut p = 0;
                    for od in od0..od1 {
                        let id = (od * sd + a) as isize - pd as isize;
                        let depth_ok = id >= 0 && (id as usize) < d;
                        for oh in 0..oh_n {
                            let ih = (oh * sh + b) as isize - ph as isize;
                            let seg = &mut dst[p..p + ow_n];
                            p += ow_n;
                            if !depth_ok || ih < 0 || ih as usize >= h {
                                seg.fill(0.0);
                                continue;
                            }
                            let base = id as usize * plane + ih as usize * w;
                            let (lo, hi) = valid_columns(ow_n, w, sw, e, pw);
                            seg[..lo].fill(0.0);
                            seg[hi..].fill(0.0);
                            if lo < hi {
                                let first = base + lo * sw + e - pw;
                                if sw == 1 {
                                    seg[lo..hi].copy_from_slice(&img[first..first + (hi - lo)]);
                                } else {
                                    for (v, x) in seg[lo..hi].iter_mut().zip(img[first..].iter().step_by(sw)) {
                                        *v = *x;
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `col` back into `image`.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    col: &[f64],
    channels: usize,
    dims: [usize; 3],
    geom: &ConvGeometry,
    out: [usize; 3],
    od0: usize,
    od1: usize,
    image: &mut [f64],
) {
    let [d, h, w] = dims;
    let [kd, kh, kw] = geom.kernel;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.padding;
    let [_, oh_n, ow_n] = out;
    let cols = (od1 - od0) * oh_n * ow_n;
    let plane = h * w;
    let vol = d * plane;
    let mut row = 0;
    for c in 0..channels {
        let img = &mut image[c * vol..(c + 1) * vol];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * cols..(row + 1) * cols];
                    let mut p = 0;
                    for od in od0..od1 {
                        let id = (od * sd + a) as isize - pd as isize;
                        let depth_ok = id >= 0 && (id as usize) < d;
                        for oh in 0..oh_n {
                            let ih = (oh * sh + b) as isize - ph as isize;
                            let seg = &src[p..p + ow_n];
                            p += ow_n;
                            if !depth_ok || ih < 0 || ih as usize >= h {
                                continue;
                            }
                            let base = id as usize * plane + ih as usize * w;
                            let (lo, hi) = valid_columns(ow_n, w, sw, e, pw);
                            if lo < hi {
                                let first = base + lo * sw + e - pw;
                                if sw == 1 {
                                    for (x, v) in img[first..first + (hi - lo)].iter_mut().zip(&seg[lo..hi]) {
                                        *x += v;
                                    }
                                } else {
                                    for (x, v) in img[first..].iter_mut().step_by(sw).zip(&seg[lo..hi]) {
                                        *x += v;
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims_follow_stride_arithmetic() {
        let g = ConvGeometry::new([2, 4, 4], [2, 2, 2], [0, 1, 1]);
        assert_eq!(g.conv_output([32, 64, 64]), Some([16, 32, 32]));
        let t = ConvGeometry::new([2, 4, 4], [2, 2, 2], [2, 1, 1]);
        assert_eq!(t.transposed_output([4, 4, 4]), Some([4, 8, 8]));
        assert_eq!(ConvGeometry::cubic(4, 1, 0).transposed_output([1, 1, 1]), Some([4, 4, 4]));
    }

    #[test]
    fn gemm_with_transposed_operand() {
        // A = [[1,2],[3,4]], B^T where B = [[1,0],[1,1]] stored row-major.
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 0.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(
            2,
            2,
            2,
            1.0,
            &a,
            MatLayout::row_major(2),
            &b,
            MatLayout::transposed(2),
            0.0,
            &mut c,
            MatLayout::row_major(2),
        );
        assert_eq!(c, [1.0, 3.0, 3.0, 7.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry::new([2, 3, 3], [2, 1, 2], [1, 1, 0]);
        let dims = [5, 4, 6];
        let ch = 2;
        let out = g.conv_output(dims).unwrap();
        let rows = ch * g.kernel_volume();
        let cols = out.iter().product::<usize>();
        let x: Vec<f64> = (0..ch * dims.iter().product::<usize>())
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let y: Vec<f64> = (0..rows * cols).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut col = vec![0.0; rows * cols];
        im2col(&x, ch, dims, &g, out, 0, out[0], &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, ch, dims, &g, out, 0, out[0], &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
