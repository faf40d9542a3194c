//! The permissible perturbation set: an l-inf ball around a clean input,
//! intersected with the valid pixel range.

use crate::attack::AttackError;
use crate::tensor::{Scalar, Tensor};

/// Radius and pixel range, independent of any particular input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreatModel {
    pub epsilon: f64,
    pub pixel_min: f64,
    pub pixel_max: f64,
}

impl ThreatModel {
    /// l-inf radius `epsilon` over unit-range pixels.
    pub fn linf(epsilon: f64) -> Self {
        Self {
            epsilon,
            pixel_min: 0.0,
            pixel_max: 1.0,
        }
    }

    pub fn budget<T: Scalar>(&self, anchor: &Tensor<T>) -> Result<PerturbationBudget<T>, AttackError> {
        PerturbationBudget::new(
            anchor.clone(),
            T::of(self.epsilon),
            T::of(self.pixel_min),
            T::of(self.pixel_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBudget<T> {
    anchor: Tensor<T>,
    epsilon: T,
    pixel_min: T,
    pixel_max: T,
}

impl<T: Scalar> PerturbationBudget<T> {
    /// `epsilon` may be zero (the set is then `{0}`); the anchor must lie in
    /// the pixel range.
    pub fn new(anchor: Tensor<T>, epsilon: T, pixel_min: T, pixel_max: T) -> Result<Self, AttackError> {
        if !(epsilon >= T::zero()) || !epsilon.is_finite() {
            return Err(AttackError::Budget(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if !(pixel_min < pixel_max) {
            return Err(AttackError::Budget(format!(
                "pixel range [{pixel_min}, {pixel_max}] is empty"
            )));
        }
        if let Some(v) = anchor.data().iter().find(|&&v| !(v >= pixel_min && v <= pixel_max)) {
            return Err(AttackError::Budget(format!(
                "anchor value {v} outside pixel range [{pixel_min}, {pixel_max}]"
            )));
        }
        Ok(Self {
            anchor,
            epsilon,
            pixel_min,
            pixel_max,
        })
    }

    pub fn anchor(&self) -> &Tensor<T> {
        &self.anchor
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn pixel_min(&self) -> T {
        self.pixel_min
    }

    pub fn pixel_max(&self) -> T {
        self.pixel_max
    }

    /// Feasible interval `[lo, hi]` for coordinate `i` of the perturbation.
    pub fn interval(&self, i: usize) -> (T, T) {
        let x = self.anchor.data()[i];
        (
            (-self.epsilon).max(self.pixel_min - x),
            self.epsilon.min(self.pixel_max - x),
        )
    }

    /// `max|d_i| <= epsilon` and every `x_i + d_i` within the pixel range.
    pub fn contains(&self, delta: &Tensor<T>) -> bool {
        delta.shape() == self.anchor.shape() && self.violations(delta) == 0
    }

    /// Number of coordinates that break either constraint.
    pub fn violations(&self, delta: &Tensor<T>) -> usize {
        delta
            .data()
            .iter()
            .zip(self.anchor.data())
            .filter(|&(&d, &x)| {
                let v = x + d;
                !(d.abs() <= self.epsilon && v >= self.pixel_min && v <= self.pixel_max)
            })
            .count()
    }

    /// Clamp to the ball, then clamp `x + delta` into the pixel range.
    pub fn project(&self, delta: &Tensor<T>) -> Result<Tensor<T>, AttackError> {
        self.anchor.check_same_shape(delta)?;
        let mut out = delta.clone();
        self.project_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn project_in_place(&self, delta: &mut Tensor<T>) {
        let (eps, lo, hi) = (self.epsilon, self.pixel_min, self.pixel_max);
        for (d, &x) in delta.data_mut().iter_mut().zip(self.anchor.data()) {
            let mut v = d.max(-eps).min(eps);
            // Coordinates already inside the range are left untouched so the
            // projection is exactly idempotent.
            let p = x + v;
            if p > hi {
                v = hi - x;
            } else if p < lo {
                v = lo - x;
            }
            *d = v;
        }
    }

    /// `x + delta` for a perturbation of the anchor's shape.
    pub fn perturbed(&self, delta: &Tensor<T>) -> Tensor<T> {
        let data = self
            .anchor
            .data()
            .iter()
            .zip(delta.data())
            .map(|(&x, &d)| x + d)
            .collect();
        Tensor::from_parts(self.anchor.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn budget(x: Vec<f64>, eps: f64) -> PerturbationBudget<f64> {
        PerturbationBudget::new(Tensor::from_vec(x), eps, 0.0, 1.0).unwrap()
    }

    #[test]
    fn clamps_to_radius() {
        let b = budget(vec![0.5], 0.3);
        assert_eq!(b.project(&Tensor::from_vec(vec![0.5])).unwrap().data(), &[0.3]);
        assert_eq!(b.project(&Tensor::from_vec(vec![-0.5])).unwrap().data(), &[-0.3]);
    }

    #[test]
    fn members_are_fixed_points() {
        let b = budget(vec![0.5, 0.2, 0.9], 0.3);
        let d = Tensor::from_vec(vec![0.1, -0.2, 0.05]);
        assert!(b.contains(&d));
        assert_eq!(b.project(&d).unwrap(), d);
    }

    #[test]
    fn pixel_range_dominates_radius() {
        let b = budget(vec![0.9], 0.3);
        let p = b.project(&Tensor::from_vec(vec![0.25])).unwrap();
        assert!((p.data()[0] - 0.1).abs() < 1e-15);
        assert!(b.contains(&p));
    }

    #[test]
    fn invalid_budgets_are_rejected() {
        let x = Tensor::from_vec(vec![0.5f64]);
        assert!(PerturbationBudget::new(x.clone(), -0.1, 0.0, 1.0).is_err());
        assert!(PerturbationBudget::new(x.clone(), 0.1, 1.0, 1.0).is_err());
        assert!(PerturbationBudget::new(Tensor::from_vec(vec![1.5]), 0.1, 0.0, 1.0).is_err());
        assert!(budget(vec![0.5], 0.1)
            .project(&Tensor::from_vec(vec![0.0, 0.0]))
            .is_err());
    }

    proptest! {
        #[test]
        fn projection_is_feasible_idempotent_and_non_expansive(
            pts in prop::collection::vec((0.0f32..=1.0, -2.0f32..2.0), 1..48),
            eps in 0.0f32..0.6,
        ) {
            let (x, d): (Vec<f32>, Vec<f32>) = pts.into_iter().unzip();
            let b = PerturbationBudget::new(Tensor::from_vec(x.clone()), eps, 0.0, 1.0).unwrap();
            let p = b.project(&Tensor::from_vec(d.clone())).unwrap();
            prop_assert!(b.contains(&p));
            prop_assert_eq!(b.project(&p).unwrap(), p.clone());
            for i in 0..d.len() {
                prop_assert!(p.data()[i].abs() <= d[i].abs());
            }
        }
    }
}
