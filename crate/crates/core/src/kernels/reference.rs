use super::matrix::{Element, Matrix};
use super::shape::ProblemShape;
use crate::error::{Error, Result};

/// Checks stored operand dimensions against the shape and transpose flags.
pub(crate) fn check_operands<T: Element>(
    shape: &ProblemShape,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
) -> Result<()> {
    shape.validate()?;
    let expect = [
        ("A", shape.a_dims(), (a.rows(), a.cols())),
        ("B", shape.b_dims(), (b.rows(), b.cols())),
        ("C", shape.c_dims(), (c.rows(), c.cols())),
    ];
    for (name, want, got) in expect {
        if want != got {
            return Err(Error::Shape(format!(
                "{name} is {}x{}, shape {shape} needs {}x{}",
                got.0, got.1, want.0, want.1
            )));
        }
    }
    Ok(())
}

/// Textbook triple loop in `(i, j, k)` order: the correctness oracle for
/// every tuned kernel.
pub fn gemm_reference<T: Element>(
    shape: &ProblemShape,
    a: &Matrix<T>,
    b: &Matrix<T>,
    c: &Matrix<T>,
) -> Result<Matrix<T>> {
    check_operands(shape, a, b, c)?;
    let alpha = T::from(shape.alpha).unwrap();
    let beta = T::from(shape.beta).unwrap();
    let op_a = |i: usize, p: usize| if shape.trans_a { a.get(p, i) } else { a.get(i, p) };
    let op_b = |p: usize, j: usize| if shape.trans_b { b.get(j, p) } else { b.get(p, j) };

    let mut out = Matrix::zeros(shape.m, shape.n);
    for i in 0..shape.m {
        for j in 0..shape.n {
            let mut acc = T::zero();
            for p in 0..shape.k {
                acc = acc + op_a(i, p) * op_b(p, j);
            }
            out.set(i, j, alpha * acc + beta * c.get(i, j));
        }
    }
    Ok(out)
}
