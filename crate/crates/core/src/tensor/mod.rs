//! Dense and sparse numeric kernels with reverse-mode differentiation.

mod array;
pub mod gradcheck;
pub(crate) mod kernels;
mod rng;
mod sparse;
pub mod special;
mod tape;

pub use array::Tensor;
pub use rng::{RngPosition, RngState};
pub use sparse::SparseMatrix;
pub use tape::{Binary, CustomOp, Elementwise, Gradients, Tape, Var, ARG_FLOOR};

/// Plain (untracked) dense product `a * b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    if ac != br {
        return Err(crate::Error::Shape { op: "matmul", detail: format!("{ar}x{ac} * {br}x{bc}") });
    }
    let data = kernels::matmul(kernels::MatRef::new(a.data(), ar, ac), kernels::MatRef::new(b.data(), br, bc));
    Tensor::from_rows(ar, bc, data)
}

/// Plain dense product `a * bᵀ`.
pub fn matmul_t(a: &Tensor, b: &Tensor) -> crate::Result<Tensor> {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    if ac != bc {
        return Err(crate::Error::Shape { op: "matmul_t", detail: format!("{ar}x{ac} * ({br}x{bc})ᵀ") });
    }
    let data =
        kernels::matmul(kernels::MatRef::new(a.data(), ar, ac), kernels::MatRef::new(b.data(), br, bc).t());
    Tensor::from_rows(ar, br, data)
}
