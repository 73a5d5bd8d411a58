//! Complex arithmetic on paired real tape variables.
//!
//! A [`CVar`] is two [`Var`]s of identical shape holding the real and
//! imaginary parts. Everything here is composed from real tape ops, so the
//! reverse pass needs no complex-specific rules.

use jfp_autograd::{Graph, Tensor, Var};

use super::{CMatrix, C64};
use crate::{Error, Result};

#[derive(Clone, Copy)]
pub struct CVar<'g> {
    pub re: Var<'g>,
    pub im: Var<'g>,
}

impl<'g> CVar<'g> {
    pub fn new(re: Var<'g>, im: Var<'g>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::Dimension(format!(
                "real part {:?} vs imaginary part {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(CVar { re, im })
    }

    /// Constant tensor of the given shape from row-major complex data.
    pub fn constant(graph: &'g Graph, shape: &[usize], data: &[C64]) -> Result<Self> {
        let re = Tensor::new(shape, data.iter().map(|z| z.re).collect())?;
        let im = Tensor::new(shape, data.iter().map(|z| z.im).collect())?;
        Ok(CVar {
            re: graph.constant(re),
            im: graph.constant(im),
        })
    }

    pub fn from_matrix(graph: &'g Graph, m: &CMatrix) -> Result<Self> {
        CVar::constant(graph, &[m.rows(), m.cols()], m.data())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    /// Current forward value as row-major complex numbers.
    pub fn values(&self) -> Vec<C64> {
        let re = self.re.value();
        let im = self.im.value();
        re.data().iter().zip(im.data()).map(|(&a, &b)| C64::new(a, b)).collect()
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!("expected a matrix, got shape {shape:?}")));
        }
        CMatrix::from_vec(shape[0], shape[1], self.values())
    }

    pub fn add(self, rhs: CVar<'g>) -> Result<Self> {
        Ok(CVar {
            re: self.re.add(rhs.re)?,
            im: self.im.add(rhs.im)?,
        })
    }

    pub fn sub(self, rhs: CVar<'g>) -> Result<Self> {
        Ok(CVar {
            re: self.re.sub(rhs.re)?,
            im: self.im.sub(rhs.im)?,
        })
    }

    /// Broadcasting elementwise product.
    pub fn mul(self, rhs: CVar<'g>) -> Result<Self> {
        Ok(CVar {
            re: self.re.mul(rhs.re)?.sub(self.im.mul(rhs.im)?)?,
            im: self.re.mul(rhs.im)?.add(self.im.mul(rhs.re)?)?,
        })
    }

    /// Broadcasting product with a real variable.
    pub fn mul_real(self, r: Var<'g>) -> Result<Self> {
        Ok(CVar {
            re: self.re.mul(r)?,
            im: self.im.mul(r)?,
        })
    }

    /// Broadcasting division by a real variable.
    pub fn div_real(self, r: Var<'g>) -> Result<Self> {
        Ok(CVar {
            re: self.re.div(r)?,
            im: self.im.div(r)?,
        })
    }

    pub fn conj(self) -> Self {
        CVar {
            re: self.re,
            im: self.im.neg(),
        }
    }

    pub fn neg(self) -> Self {
        CVar {
            re: self.re.neg(),
            im: self.im.neg(),
        }
    }

    /// `|z|²`, elementwise.
    pub fn abs2(self) -> Var<'g> {
        self.re
            .square()
            .add(self.im.square())
            .expect("real and imaginary parts share a shape")
    }

    /// Complex matrix product with the same batching rules as [`Var::matmul`].
    pub fn matmul(self, rhs: CVar<'g>) -> Result<Self> {
        let rr = self.re.matmul(rhs.re)?;
        let ii = self.im.matmul(rhs.im)?;
        let ri = self.re.matmul(rhs.im)?;
        let ir = self.im.matmul(rhs.re)?;
        Ok(CVar {
            re: rr.sub(ii)?,
            im: ri.add(ir)?,
        })
    }

    /// Conjugate transpose of the last two axes.
    pub fn adjoint(self) -> Result<Self> {
        Ok(CVar {
            re: self.re.transpose()?,
            im: self.im.transpose()?.neg(),
        })
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Result<Self> {
        Ok(CVar {
            re: self.re.sum_axis(axis, keepdim)?,
            im: self.im.sum_axis(axis, keepdim)?,
        })
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        Ok(CVar {
            re: self.re.slice(axis, start, len)?,
            im: self.im.slice(axis, start, len)?,
        })
    }

    pub fn index_select(self, axis: usize, idx: &[usize]) -> Result<Self> {
        Ok(CVar {
            re: self.re.index_select(axis, idx)?,
            im: self.im.index_select(axis, idx)?,
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Ok(CVar {
            re: self.re.reshape(shape)?,
            im: self.im.reshape(shape)?,
        })
    }

    pub fn permute(self, axes: &[usize]) -> Result<Self> {
        Ok(CVar {
            re: self.re.permute(axes)?,
            im: self.im.permute(axes)?,
        })
    }

    pub fn concat(parts: &[CVar<'g>], axis: usize) -> Result<Self> {
        let re: Vec<Var<'g>> = parts.iter().map(|p| p.re).collect();
        let im: Vec<Var<'g>> = parts.iter().map(|p| p.im).collect();
        Ok(CVar {
            re: Var::concat(&re, axis)?,
            im: Var::concat(&im, axis)?,
        })
    }

    /// `Σ conj(a)·b` along `axis`, keeping the axis.
    pub fn inner(a: CVar<'g>, b: CVar<'g>, axis: usize) -> Result<Self> {
        a.conj().mul(b)?.sum_axis(axis, true)
    }
}

/// Splits `[.., 2, 2]` into its four `[.., 1, 1]` entries (row-major).
fn entries2<'g>(a: CVar<'g>) -> Result<[CVar<'g>; 4]> {
    let shape = a.shape();
    let r = shape.len();
    if r < 2 || shape[r - 2] != 2 || shape[r - 1] != 2 {
        return Err(Error::Dimension(format!("expected trailing 2x2 blocks, got {shape:?}")));
    }
    let at = |i, j| -> Result<CVar<'g>> { a.slice(r - 2, i, 1)?.slice(r - 1, j, 1) };
    Ok([at(0, 0)?, at(0, 1)?, at(1, 0)?, at(1, 1)?])
}

/// Determinant of each trailing 2×2 block, shape `[.., 1, 1]`.
pub fn det2x2<'g>(a: CVar<'g>) -> Result<CVar<'g>> {
    let [p, q, r, s] = entries2(a)?;
    p.mul(s)?.sub(q.mul(r)?)
}

/// Inverse of each trailing 2×2 block via the adjugate.
pub fn inv2x2<'g>(a: CVar<'g>) -> Result<CVar<'g>> {
    let [p, q, r, s] = entries2(a)?;
    let det = p.mul(s)?.sub(q.mul(r)?)?;
    // 1/det = conj(det)/|det|²
    let inv_det = det.conj().div_real(det.abs2())?;
    let r_axis = a.shape().len() - 1;
    let top = CVar::concat(&[s, q.neg()], r_axis)?;
    let bottom = CVar::concat(&[r.neg(), p], r_axis)?;
    CVar::concat(&[top, bottom], r_axis - 1)?.mul(inv_det)
}

/// `ln|det A|` of each trailing 2×2 block, shape `[.., 1, 1]`.
pub fn log_abs_det2x2<'g>(a: CVar<'g>) -> Result<Var<'g>> {
    Ok(det2x2(a)?.abs2().ln().scale(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{det_small, inv_small};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn scalar_conjugate_product() {
        let g = Graph::new();
        let a = CVar::constant(&g, &[1, 1], &[c(1.0, 1.0)]).unwrap();
        let b = CVar::constant(&g, &[1, 1], &[c(1.0, -1.0)]).unwrap();
        assert_eq!(a.matmul(b).unwrap().values(), vec![c(2.0, 0.0)]);
    }

    #[test]
    fn two_by_two_kernels_match_plain_versions() {
        let m = CMatrix::from_vec(2, 2, vec![c(1.5, 0.2), c(-0.3, 0.7), c(0.4, -1.1), c(0.9, 0.5)]).unwrap();
        let g = Graph::new();
        let a = CVar::from_matrix(&g, &m).unwrap();
        let inv = inv2x2(a).unwrap().to_matrix().unwrap();
        let want = inv_small(&m).unwrap();
        assert!(inv.sub(&want).unwrap().frobenius_norm() < 1e-12);
        let det = det2x2(a).unwrap().values()[0];
        assert!((det - det_small(&m).unwrap()).norm() < 1e-12);
        let adj = a.adjoint().unwrap().to_matrix().unwrap();
        assert_eq!(adj, m.adjoint());
    }
}
