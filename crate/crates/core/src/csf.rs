//! Class score fusion of student and teacher logits.

use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct Fusion {
    prefix: String,
    pub n_class: usize,
    /// When false the fusion is the fixed elementwise mean.
    pub learned: bool,
}

impl Fusion {
    pub fn new(prefix: impl Into<String>, n_class: usize, learned: bool) -> Self {
        Fusion {
            prefix: prefix.into(),
            n_class,
            learned,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// `W = [I/2; I/2]`, `b = 0`, so the initial output is the mean of both inputs.
    pub fn init<T: Scalar>(&self) -> ParamStore<T> {
        let n = self.n_class;
        let half = T::of(0.5);
        let mut p = ParamStore::new();
        p.insert(
            self.name("w"),
            Tensor::from_fn([2 * n, n], |i| if i[0] % n == i[1] { half } else { T::zero() }),
        );
        p.insert(self.name("b"), Tensor::zeros([n]));
        p
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>, student: Var, teacher: Var) -> Result<Var> {
        let (s, t) = (tape.value(student), tape.value(teacher));
        if s.shape() != [self.n_class] || t.shape() != [self.n_class] {
            return Err(TensorError::shape(
                "fuse_scores",
                format!("{:?} and {:?} for {} classes", s.shape(), t.shape(), self.n_class),
            ));
        }
        if !self.learned {
            let half = T::of(0.5);
            return tape.weighted_sum(&[(student, half), (teacher, half)]);
        }
        let x = tape.concat_rows(&[student, teacher])?;
        let w = tape.param(&self.name("w"), params.get(&self.name("w")));
        let b = tape.param(&self.name("b"), params.get(&self.name("b")));
        tape.linear(x, w, b)
    }

    /// Fused logits for plain vectors.
    pub fn fuse_scores<T: Scalar>(&self, params: &ParamStore<T>, student: &[T], teacher: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::from_vec(student.to_vec()));
        let t = tape.constant(Tensor::from_vec(teacher.to_vec()));
        let out = self.forward(&mut tape, params, s, t)?;
        Ok(tape.value(out).data().to_vec())
    }
}
