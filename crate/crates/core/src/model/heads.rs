use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::layers::Linear;
use super::params::Params;
use crate::Real;

/// Raw head outputs for a batch of rows.
#[derive(Debug, Clone)]
pub struct HeadOutputs<F> {
    pub phase_logits: Array2<F>,
    pub experience_logits: Array2<F>,
    /// Scaled to time units.
    pub rsd: Array1<F>,
}

/// Upstream gradients for [`Heads::backward`]. Absent terms contribute nothing.
pub struct HeadGrads<F> {
    pub phase_logits: Option<Array2<F>>,
    pub experience_logits: Option<Array2<F>>,
    pub rsd: Option<Array1<F>>,
}

/// The three prediction heads on the video descriptor.
///
/// The RSD head is linear; its output is multiplied by a fixed `rsd_scale`
/// so that a unit-scale layer covers the expected duration range.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads<F> {
    pub phase: Linear<F>,
    pub experience: Linear<F>,
    pub rsd: Linear<F>,
    pub rsd_scale: F,
}

impl<F: Real> Heads<F> {
    pub fn init(input: usize, n_phases: usize, n_experience: usize, rsd_scale: F, rng: &mut impl Rng) -> Self {
        Heads {
            phase: Linear::init_uniform(input, n_phases, rng),
            experience: Linear::init_uniform(input, n_experience, rng),
            rsd: Linear::init_uniform(input, 1, rng),
            rsd_scale,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.phase.input_dim()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> HeadOutputs<F> {
        HeadOutputs {
            phase_logits: self.phase.forward(x),
            experience_logits: self.experience.forward(x),
            rsd: self.rsd.forward(x).column(0).to_owned() * self.rsd_scale,
        }
    }

    pub fn backward(&self, x: ArrayView2<F>, d: &HeadGrads<F>, grad: &mut Heads<F>) -> Array2<F> {
        let mut dx = Array2::zeros(x.raw_dim());
        if let Some(g) = &d.phase_logits {
            dx += &self.phase.backward(x, g.view(), &mut grad.phase);
        }
        if let Some(g) = &d.experience_logits {
            dx += &self.experience.backward(x, g.view(), &mut grad.experience);
        }
        if let Some(g) = &d.rsd {
            let g = (g * self.rsd_scale).insert_axis(Axis(1));
            dx += &self.rsd.backward(x, g.view(), &mut grad.rsd);
        }
        dx
    }
}

impl<F: Real> Params<F> for Heads<F> {
    fn params(&self) -> Vec<&[F]> {
        let mut p = self.phase.params();
        p.extend(self.experience.params());
        p.extend(self.rsd.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut p = self.phase.params_mut();
        p.extend(self.experience.params_mut());
        p.extend(self.rsd.params_mut());
        p
    }
}

/// Temporary frame-level heads trained on encoder descriptors before the
/// recurrent network exists. `progress` is a unitless regression in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxHeads<F> {
    pub phase: Linear<F>,
    pub experience: Linear<F>,
    pub rsd: Linear<F>,
    pub progress: Linear<F>,
    pub rsd_scale: F,
}

#[derive(Debug, Clone)]
pub struct AuxOutputs<F> {
    pub phase_logits: Array2<F>,
    pub experience_logits: Array2<F>,
    pub rsd: Array1<F>,
    pub progress: Array1<F>,
}

pub struct AuxGrads<F> {
    pub phase_logits: Option<Array2<F>>,
    pub experience_logits: Option<Array2<F>>,
    pub rsd: Option<Array1<F>>,
    pub progress: Option<Array1<F>>,
}

impl<F: Real> AuxHeads<F> {
    pub fn init(input: usize, n_phases: usize, n_experience: usize, rsd_scale: F, rng: &mut impl Rng) -> Self {
        AuxHeads {
            phase: Linear::init_uniform(input, n_phases, rng),
            experience: Linear::init_uniform(input, n_experience, rng),
            rsd: Linear::init_uniform(input, 1, rng),
            progress: Linear::init_uniform(input, 1, rng),
            rsd_scale,
        }
    }

    pub fn forward(&self, x: ArrayView2<F>) -> AuxOutputs<F> {
        AuxOutputs {
            phase_logits: self.phase.forward(x),
            experience_logits: self.experience.forward(x),
            rsd: self.rsd.forward(x).column(0).to_owned() * self.rsd_scale,
            progress: self.progress.forward(x).column(0).to_owned(),
        }
    }

    pub fn backward(&self, x: ArrayView2<F>, d: &AuxGrads<F>, grad: &mut AuxHeads<F>) -> Array2<F> {
        let mut dx = Array2::zeros(x.raw_dim());
        if let Some(g) = &d.phase_logits {
            dx += &self.phase.backward(x, g.view(), &mut grad.phase);
        }
        if let Some(g) = &d.experience_logits {
            dx += &self.experience.backward(x, g.view(), &mut grad.experience);
        }
        if let Some(g) = &d.rsd {
            let g = (g * self.rsd_scale).insert_axis(Axis(1));
            dx += &self.rsd.backward(x, g.view(), &mut grad.rsd);
        }
        if let Some(g) = &d.progress {
            let g = g.clone().insert_axis(Axis(1));
            dx += &self.progress.backward(x, g.view(), &mut grad.progress);
        }
        dx
    }
}

impl<F: Real> Params<F> for AuxHeads<F> {
    fn params(&self) -> Vec<&[F]> {
        let mut p = self.phase.params();
        p.extend(self.experience.params());
        p.extend(self.rsd.params());
        p.extend(self.progress.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut p = self.phase.params_mut();
        p.extend(self.experience.params_mut());
        p.extend(self.rsd.params_mut());
        p.extend(self.progress.params_mut());
        p
    }
}

pub fn row_to_vec<F: Real>(v: ArrayView1<F>) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}
