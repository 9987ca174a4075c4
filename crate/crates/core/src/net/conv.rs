//! 3D convolution on `(C, Z, X, Y)` tensors via im2col + GEMM.
//!
//! The axial stride is always 1; the lateral stride is shared by x and y.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kz: usize,
    pub kx: usize,
    pub ky: usize,
    pub stride: usize,
    pub pad_z_lo: usize,
    pub pad_z_hi: usize,
    pub pad_x: usize,
    pub pad_y: usize,
}

impl ConvSpec {
    /// "Same" padding: symmetric laterally (odd kernels), extra axial pad on
    /// the high side for even `kz`.
    pub fn same(kz: usize, kx: usize, ky: usize, stride: usize) -> Self {
        let lo = (kz - 1) / 2;
        ConvSpec {
            kz,
            kx,
            ky,
            stride,
            pad_z_lo: lo,
            pad_z_hi: kz - 1 - lo,
            pad_x: (kx - 1) / 2,
            pad_y: (ky - 1) / 2,
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kz * self.kx * self.ky
    }

    /// Output `(Z, X, Y)` for an input `(Z, X, Y)`.
    pub fn output_dims(&self, z: usize, x: usize, y: usize) -> Result<(usize, usize, usize)> {
        let zp = z + self.pad_z_lo + self.pad_z_hi;
        let xp = x + 2 * self.pad_x;
        let yp = y + 2 * self.pad_y;
        if zp < self.kz || xp < self.kx || yp < self.ky || self.stride == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel {}x{}x{} does not fit input {z}x{x}x{y}",
                self.kz, self.kx, self.ky
            )));
        }
        Ok((
            zp - self.kz + 1,
            (xp - self.kx) / self.stride + 1,
            (yp - self.ky) / self.stride + 1,
        ))
    }
}

struct Geometry {
    cin: usize,
    z: usize,
    x: usize,
    y: usize,
    oz: usize,
    ox: usize,
    oy: usize,
}

fn geometry(input: &[usize], spec: &ConvSpec) -> Result<Geometry> {
    if input.len() != 4 {
        return Err(Error::InvalidParameter(format!(
            "conv input must be (C, Z, X, Y), got {input:?}"
        )));
    }
    let (oz, ox, oy) = spec.output_dims(input[1], input[2], input[3])?;
    Ok(Geometry {
        cin: input[0],
        z: input[1],
        x: input[2],
        y: input[3],
        oz,
        ox,
        oy,
    })
}

/// Lowers the input to a `(C_in·kz·kx·ky) × (Z_o·X_o·Y_o)` matrix.
fn im2col<T: Scalar>(input: &[T], g: &Geometry, s: &ConvSpec) -> Vec<T> {
    let p = g.oz * g.ox * g.oy;
    let mut col = vec![T::zero(); g.cin * s.kernel_volume() * p];
    let mut row = 0;
    for c in 0..g.cin {
        for dz in 0..s.kz {
            for dx in 0..s.kx {
                for dy in 0..s.ky {
                    let dst = &mut col[row * p..(row + 1) * p];
                    row += 1;
                    for oz in 0..g.oz {
                        let iz = oz as isize + dz as isize - s.pad_z_lo as isize;
                        if iz < 0 || iz >= g.z as isize {
                            continue;
                        }
                        let src_z = (c * g.z + iz as usize) * g.x;
                        for ox in 0..g.ox {
                            let ix = (ox * s.stride + dx) as isize - s.pad_x as isize;
                            if ix < 0 || ix >= g.x as isize {
                                continue;
                            }
                            let src = (src_z + ix as usize) * g.y;
                            let out = (oz * g.ox + ox) * g.oy;
                            for oy in 0..g.oy {
                                let iy = (oy * s.stride + dy) as isize - s.pad_y as isize;
                                if iy >= 0 && iy < g.y as isize {
                                    dst[out + oy] = input[src + iy as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a column matrix back onto the input layout.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, s: &ConvSpec, grad_in: &mut [T]) {
    let p = g.oz * g.ox * g.oy;
    let mut row = 0;
    for c in 0..g.cin {
        for dz in 0..s.kz {
            for dx in 0..s.kx {
                for dy in 0..s.ky {
                    let src = &col[row * p..(row + 1) * p];
                    row += 1;
                    for oz in 0..g.oz {
                        let iz = oz as isize + dz as isize - s.pad_z_lo as isize;
                        if iz < 0 || iz >= g.z as isize {
                            continue;
                        }
                        let dst_z = (c * g.z + iz as usize) * g.x;
                        for ox in 0..g.ox {
                            let ix = (ox * s.stride + dx) as isize - s.pad_x as isize;
                            if ix < 0 || ix >= g.x as isize {
                                continue;
                            }
                            let dst = (dst_z + ix as usize) * g.y;
                            let at = (oz * g.ox + ox) * g.oy;
                            for oy in 0..g.oy {
                                let iy = (oy * s.stride + dy) as isize - s.pad_y as isize;
                                if iy >= 0 && iy < g.y as isize {
                                    grad_in[dst + iy as usize] += src[at + oy];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_weight<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, s: &ConvSpec) -> Result<usize> {
    let w = weight.shape();
    if w.len() != 5 || w[1] != input.shape()[0] || w[2] != s.kz || w[3] != s.kx || w[4] != s.ky {
        return Err(Error::shape(&[w.first().copied().unwrap_or(0), input.shape()[0], s.kz, s.kx, s.ky], w));
    }
    Ok(w[0])
}

pub fn conv3d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let g = geometry(input.shape(), spec)?;
    let cout = check_weight(input, weight, spec)?;
    let p = g.oz * g.ox * g.oy;
    let r = g.cin * spec.kernel_volume();
    let mut out = Tensor::zeros(&[cout, g.oz, g.ox, g.oy]);
    if spec.kernel_volume() == 1 && spec.stride == 1 {
        T::gemm(cout, r, p, T::one(), weight.data(), false, input.data(), false, T::zero(), out.data_mut());
    } else {
        let col = im2col(input.data(), &g, spec);
        T::gemm(cout, r, p, T::one(), weight.data(), false, &col, false, T::zero(), out.data_mut());
    }
    Ok(out)
}

/// Gradients of `conv3d` with respect to its input and weight.
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let g = geometry(input.shape(), spec)?;
    let cout = check_weight(input, weight, spec)?;
    let p = g.oz * g.ox * g.oy;
    let r = g.cin * spec.kernel_volume();
    grad_out.check_shape(&[cout, g.oz, g.ox, g.oy])?;

    let direct = spec.kernel_volume() == 1 && spec.stride == 1;
    let col_owned;
    let col: &[T] = if direct {
        input.data()
    } else {
        col_owned = im2col(input.data(), &g, spec);
        &col_owned
    };
    let mut grad_w = Tensor::zeros(weight.shape());
    // dW = dOut · colᵀ
    T::gemm(cout, p, r, T::one(), grad_out.data(), false, col, true, T::zero(), grad_w.data_mut());

    let grad_in = if need_input_grad {
        let mut gi = Tensor::zeros(input.shape());
        if direct {
            T::gemm(r, cout, p, T::one(), weight.data(), true, grad_out.data(), false, T::zero(), gi.data_mut());
        } else {
            let mut dcol = vec![T::zero(); r * p];
            T::gemm(r, cout, p, T::one(), weight.data(), true, grad_out.data(), false, T::zero(), &mut dcol);
            col2im(&dcol, &g, spec, gi.data_mut());
        }
        Some(gi)
    } else {
        None
    };
    Ok((grad_in, grad_w))
}

/// Nearest-neighbour ×2 lateral upsampling of a `(C, Z, X, Y)` tensor.
pub fn upsample2<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let (c, z, x, y) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[c, z, 2 * x, 2 * y]);
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..c * z {
        for ix in 0..2 * x {
            for iy in 0..2 * y {
                dst[(plane * 2 * x + ix) * 2 * y + iy] = src[(plane * x + ix / 2) * y + iy / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let s = grad_out.shape();
    let (c, z, x, y) = (s[0], s[1], s[2] / 2, s[3] / 2);
    let mut out = Tensor::zeros(&[c, z, x, y]);
    let src = grad_out.data();
    let dst = out.data_mut();
    for plane in 0..c * z {
        for ix in 0..2 * x {
            for iy in 0..2 * y {
                dst[(plane * x + ix / 2) * y + iy / 2] += src[(plane * 2 * x + ix) * 2 * y + iy];
            }
        }
    }
    out
}
