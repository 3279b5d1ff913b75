use crate::Real;

/// Uniform access to the trainable tensors of a component, in a fixed order.
///
/// The same type doubles as its own gradient accumulator: a zeroed clone has
/// exactly the layout optimizers and checkpoints need.
pub trait Params<F: Real> {
    fn params(&self) -> Vec<&[F]>;
    fn params_mut(&mut self) -> Vec<&mut [F]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn fill_zero(&mut self) {
        for p in self.params_mut() {
            p.fill(F::zero());
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    fn flatten(&self) -> Vec<F> {
        self.params().concat()
    }

    /// Overwrites all parameters from a flat slice; returns how many values were consumed.
    fn load_flat(&mut self, values: &[F]) -> usize {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        offset
    }

    fn scale(&mut self, factor: F) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl<F: Real, T: Params<F>> Params<F> for Vec<T> {
    fn params(&self) -> Vec<&[F]> {
        self.iter().flat_map(|t| t.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        self.iter_mut().flat_map(|t| t.params_mut()).collect()
    }
}

impl<F: Real, T: Params<F>> Params<F> for Option<T> {
    fn params(&self) -> Vec<&[F]> {
        self.as_ref().map(|t| t.params()).unwrap_or_default()
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        self.as_mut().map(|t| t.params_mut()).unwrap_or_default()
    }
}
