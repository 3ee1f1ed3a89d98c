//! Flat, unconstrained parameter vectors and the schema mapping each entry
//! back to a model hyperparameter.
//!
//! Positive quantities are stored as logs inside the hyperparameter structs
//! themselves, so packing and unpacking are plain copies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpHyperparameters;
use crate::mtgp::{MtgpGradient, MtgpHyperparameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ParamRole {
    LogLengthscale { term: usize, dim: usize },
    LogSignalVariance { term: usize },
    Loading { term: usize, task: usize, rank: usize },
    LogTaskVariance { term: usize, task: usize },
    LogNoiseVariance { task: usize },
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// The stored value is `ln` of a positive quantity.
    Log,
    Identity,
}

impl ParamRole {
    pub fn transform(&self) -> Transform {
        match self {
            ParamRole::Loading { .. } | ParamRole::Mean => Transform::Identity,
            _ => Transform::Log,
        }
    }

    pub fn is_noise(&self) -> bool {
        matches!(self, ParamRole::LogNoiseVariance { .. })
    }
}

/// Anything whose hyperparameters can be addressed by [`ParamRole`].
pub trait Parameterized {
    /// Every addressable role, in canonical order.
    fn roles(&self) -> Vec<ParamRole>;
    fn get(&self, role: &ParamRole) -> Option<f64>;
    fn set(&mut self, role: &ParamRole, value: f64) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSchema {
    pub entries: Vec<ParamRole>,
}

impl ParameterSchema {
    /// All roles of `model` except those rejected by `keep`.
    pub fn from_model<M: Parameterized>(model: &M, keep: impl Fn(&ParamRole) -> bool) -> Self {
        ParameterSchema {
            entries: model.roles().into_iter().filter(|r| keep(r)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, role: &ParamRole) -> Option<usize> {
        self.entries.iter().position(|r| r == role)
    }

    pub fn validate_unique(&self) -> Result<()> {
        for (i, r) in self.entries.iter().enumerate() {
            if self.entries[..i].contains(r) {
                return Err(Error::InvalidParameter(format!("role {r:?} appears twice in schema")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub schema: ParameterSchema,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn pack<M: Parameterized>(schema: &ParameterSchema, model: &M) -> Result<Self> {
        let values = schema
            .entries
            .iter()
            .map(|r| {
                model
                    .get(r)
                    .ok_or_else(|| Error::InvalidParameter(format!("model has no parameter {r:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParameterVector {
            schema: schema.clone(),
            values,
        })
    }

    /// Copies the vector's entries into a clone of `base`.
    pub fn unpack<M: Parameterized + Clone>(&self, base: &M) -> Result<M> {
        let mut m = base.clone();
        for (r, v) in self.schema.entries.iter().zip(&self.values) {
            m.set(r, *v)?;
        }
        Ok(m)
    }
}

fn missing(role: &ParamRole) -> Error {
    Error::InvalidParameter(format!("no parameter {role:?} in this model"))
}

impl Parameterized for GpHyperparameters {
    fn roles(&self) -> Vec<ParamRole> {
        let mut out: Vec<ParamRole> = (0..self.kernel.input_dim())
            .map(|dim| ParamRole::LogLengthscale { term: 0, dim })
            .collect();
        out.push(ParamRole::LogSignalVariance { term: 0 });
        out.push(ParamRole::LogNoiseVariance { task: 0 });
        out.push(ParamRole::Mean);
        out
    }

    fn get(&self, role: &ParamRole) -> Option<f64> {
        match *role {
            ParamRole::LogLengthscale { term: 0, dim } => self.kernel.log_lengthscales.get(dim).copied(),
            ParamRole::LogSignalVariance { term: 0 } => Some(self.kernel.log_signal_variance),
            ParamRole::LogNoiseVariance { task: 0 } => Some(self.log_noise_variance),
            ParamRole::Mean => Some(self.mean),
            _ => None,
        }
    }

    fn set(&mut self, role: &ParamRole, value: f64) -> Result<()> {
        match *role {
            ParamRole::LogLengthscale { term: 0, dim } => {
                *self.kernel.log_lengthscales.get_mut(dim).ok_or_else(|| missing(role))? = value
            }
            ParamRole::LogSignalVariance { term: 0 } => self.kernel.log_signal_variance = value,
            ParamRole::LogNoiseVariance { task: 0 } => self.log_noise_variance = value,
            ParamRole::Mean => self.mean = value,
            _ => return Err(missing(role)),
        }
        Ok(())
    }
}

impl Parameterized for MtgpHyperparameters {
    fn roles(&self) -> Vec<ParamRole> {
        let mut out = Vec::new();
        for (q, t) in self.kernel.terms.iter().enumerate() {
            for dim in 0..t.kernel.input_dim() {
                out.push(ParamRole::LogLengthscale { term: q, dim });
            }
            out.push(ParamRole::LogSignalVariance { term: q });
            for task in 0..t.num_tasks() {
                for rank in 0..t.rank() {
                    out.push(ParamRole::Loading { term: q, task, rank });
                }
            }
            if t.log_task_variances.is_some() {
                for task in 0..t.num_tasks() {
                    out.push(ParamRole::LogTaskVariance { term: q, task });
                }
            }
        }
        for task in 0..self.num_tasks() {
            out.push(ParamRole::LogNoiseVariance { task });
        }
        out
    }

    fn get(&self, role: &ParamRole) -> Option<f64> {
        let term = |q: usize| self.kernel.terms.get(q);
        match *role {
            ParamRole::LogLengthscale { term: q, dim } => term(q)?.kernel.log_lengthscales.get(dim).copied(),
            ParamRole::LogSignalVariance { term: q } => Some(term(q)?.kernel.log_signal_variance),
            ParamRole::Loading { term: q, task, rank } => term(q)?.loadings.get((task, rank)).copied(),
            ParamRole::LogTaskVariance { term: q, task } => term(q)?.log_task_variances.as_ref()?.get(task).copied(),
            ParamRole::LogNoiseVariance { task } => self.log_noise_variances.get(task).copied(),
            ParamRole::Mean => None,
        }
    }

    fn set(&mut self, role: &ParamRole, value: f64) -> Result<()> {
        let slot: Option<&mut f64> = match *role {
            ParamRole::LogLengthscale { term: q, dim } => self
                .kernel
                .terms
                .get_mut(q)
                .and_then(|t| t.kernel.log_lengthscales.get_mut(dim)),
            ParamRole::LogSignalVariance { term: q } => {
                self.kernel.terms.get_mut(q).map(|t| &mut t.kernel.log_signal_variance)
            }
            ParamRole::Loading { term: q, task, rank } => self
                .kernel
                .terms
                .get_mut(q)
                .and_then(|t| t.loadings.get_mut((task, rank))),
            ParamRole::LogTaskVariance { term: q, task } => self
                .kernel
                .terms
                .get_mut(q)
                .and_then(|t| t.log_task_variances.as_mut())
                .and_then(|g| g.get_mut(task)),
            ParamRole::LogNoiseVariance { task } => self.log_noise_variances.get_mut(task),
            ParamRole::Mean => None,
        };
        *slot.ok_or_else(|| missing(role))? = value;
        Ok(())
    }
}

/// Looks up `∂/∂role` in a structured multi-task gradient.
pub fn mtgp_gradient_entry(grad: &MtgpGradient, role: &ParamRole) -> Option<f64> {
    match *role {
        ParamRole::LogLengthscale { term, dim } => grad.terms.get(term)?.kernel.get(dim).copied(),
        ParamRole::LogSignalVariance { term } => grad.terms.get(term)?.kernel.last().copied(),
        ParamRole::Loading { term, task, rank } => grad.terms.get(term)?.loadings.get((task, rank)).copied(),
        ParamRole::LogTaskVariance { term, task } => {
            grad.terms.get(term)?.log_task_variances.as_ref()?.get(task).copied()
        }
        ParamRole::LogNoiseVariance { task } => grad.log_noise_variances.get(task).copied(),
        ParamRole::Mean => None,
    }
}

/// Looks up `∂/∂role` in the gradient layout of
/// [`crate::gp::gp_lml_with_grad`] (`with_mean = true`).
pub fn gp_gradient_entry(grad: &[f64], input_dim: usize, role: &ParamRole) -> Option<f64> {
    let idx = match *role {
        ParamRole::LogLengthscale { term: 0, dim } if dim < input_dim => dim,
        ParamRole::LogSignalVariance { term: 0 } => input_dim,
        ParamRole::LogNoiseVariance { task: 0 } => input_dim + 1,
        ParamRole::Mean => input_dim + 2,
        _ => return None,
    };
    grad.get(idx).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coregion::{CoregionalizationTerm, MultiTaskKernelSpec};
    use crate::kernel::ScalarKernelSpec;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn lmc() -> MtgpHyperparameters {
        let k = ScalarKernelSpec::squared_exponential(&[0.3, 0.6], 1.2).unwrap();
        let t0 = CoregionalizationTerm::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.5, 0.7]),
            Some(&[0.1, 0.3]),
            k.clone(),
        )
        .unwrap();
        let t1 = CoregionalizationTerm::rank_one(&[0.4, 0.9], k).unwrap();
        MtgpHyperparameters::new(MultiTaskKernelSpec::new(2, vec![t0, t1]).unwrap(), &[0.01, 0.02]).unwrap()
    }

    #[test]
    fn mtgp_roles_are_unique_and_complete() {
        let h = lmc();
        let s = ParameterSchema::from_model(&h, |_| true);
        s.validate_unique().unwrap();
        // term 0: 2 ls + sf2 + 4 W + 2 γ; term 1: 2 ls + sf2 + 2 W; noise 2
        assert_eq!(s.len(), 9 + 5 + 2);
        for r in &s.entries {
            assert!(h.get(r).is_some(), "{r:?}");
        }
    }

    #[test]
    fn frozen_roles_are_left_at_base() {
        let h = lmc();
        let s = ParameterSchema::from_model(&h, |r| !matches!(r, ParamRole::LogSignalVariance { .. }));
        let mut v = ParameterVector::pack(&s, &h).unwrap();
        v.values.iter_mut().for_each(|x| *x += 1.0);
        let h2 = v.unpack(&h).unwrap();
        assert_eq!(
            h2.kernel.terms[0].kernel.log_signal_variance,
            h.kernel.terms[0].kernel.log_signal_variance
        );
        assert_eq!(h2.log_noise_variances[1], h.log_noise_variances[1] + 1.0);
    }

    #[test]
    fn gp_missing_role_errors() {
        let mut g = GpHyperparameters::new(ScalarKernelSpec::squared_exponential(&[1.0], 1.0).unwrap(), 0.1).unwrap();
        assert!(g
            .set(
                &ParamRole::Loading {
                    term: 0,
                    task: 0,
                    rank: 0
                },
                1.0
            )
            .is_err());
        assert!(g.get(&ParamRole::LogLengthscale { term: 0, dim: 1 }).is_none());
    }

    #[test]
    fn transforms() {
        assert_eq!(ParamRole::Mean.transform(), Transform::Identity);
        assert_eq!(
            ParamRole::Loading {
                term: 0,
                task: 0,
                rank: 0
            }
            .transform(),
            Transform::Identity
        );
        assert_eq!(ParamRole::LogNoiseVariance { task: 1 }.transform(), Transform::Log);
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(vals in prop::collection::vec(-10.0f64..10.0, 16)) {
            let h = lmc();
            let s = ParameterSchema::from_model(&h, |_| true);
            let v = ParameterVector { schema: s.clone(), values: vals };
            let back = ParameterVector::pack(&s, &v.unpack(&h).unwrap()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
