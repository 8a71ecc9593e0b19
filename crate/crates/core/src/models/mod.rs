//! Trainable differentiable reachability maps.
//!
//! All models share one sign convention: a point is predicted reachable iff
//! its value (offset included) is `≥ 0`. The offset `ρ` is stored with the
//! model and shifts the value without changing the gradient.

mod mlp;
mod svm;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TaskSpace;

pub use mlp::{train_mlp, DenseLayer, MlpConfig, MlpModel, MlpTrainReport};
pub use svm::{train_ocsvm, train_svm, SvmConfig, SvmKind, SvmModel, SvmTrainReport};

/// A scalar field over encoded task-space inputs with an analytic gradient.
pub trait ReachabilityMap: Send + Sync {
    fn space(&self) -> TaskSpace;

    fn offset(&self) -> f64;

    /// Value without the dimension check. `x.len()` must equal `input_dim`.
    fn value_unchecked(&self, x: &[f64]) -> f64;

    /// Gradient without the dimension check.
    fn grad_unchecked(&self, x: &[f64]) -> Vec<f64>;

    fn input_dim(&self) -> usize {
        self.space().input_dim()
    }

    fn eval_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim(), x)?;
        Ok(self.value_unchecked(x))
    }

    fn eval_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x)?;
        Ok(self.grad_unchecked(x))
    }

    fn predict_reachable(&self, x: &[f64]) -> Result<bool> {
        Ok(self.eval_value(x)? >= 0.0)
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Dimension {
            what: "model input",
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Reflection `y → −y` of an encoded input (and of a gradient, which
/// transforms the same way). SE2 also negates `sin θ`.
pub fn reflect_input(space: TaskSpace, x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    match space {
        TaskSpace::R2 | TaskSpace::R3 => out[1] = -out[1],
        TaskSpace::SE2 => {
            out[1] = -out[1];
            out[3] = -out[3];
        }
        TaskSpace::SE3 => {
            // S R S with S = diag(1, −1, 1) flips entries whose row xor column is y.
            out[1] = -out[1];
            for (r, c) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
                out[3 + 3 * r + c] = -out[3 + 3 * r + c];
            }
        }
    }
    out
}

/// The mirror image of a map: `value(x) = inner.value(reflect(x))`.
///
/// Used for the right-from-left footstep map, which is the left-from-right map
/// evaluated on reflected inputs.
pub struct Mirrored<M> {
    pub inner: M,
}

impl<M: ReachabilityMap> ReachabilityMap for Mirrored<M> {
    fn space(&self) -> TaskSpace {
        self.inner.space()
    }

    fn offset(&self) -> f64 {
        self.inner.offset()
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        self.inner.value_unchecked(&reflect_input(self.space(), x))
    }

    fn grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let g = self.inner.grad_unchecked(&reflect_input(self.space(), x));
        reflect_input(self.space(), &g)
    }
}

impl<M: ReachabilityMap + ?Sized> ReachabilityMap for std::sync::Arc<M> {
    fn space(&self) -> TaskSpace {
        (**self).space()
    }

    fn offset(&self) -> f64 {
        (**self).offset()
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        (**self).value_unchecked(x)
    }

    fn grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (**self).grad_unchecked(x)
    }
}

/// Any trained model, as stored in a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum ReachabilityModel {
    Mlp(MlpModel),
    Svm(SvmModel),
}

impl ReachabilityModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ReachabilityModel::Mlp(_) => "mlp",
            ReachabilityModel::Svm(m) => match m.kind {
                SvmKind::Regular => "svm",
                SvmKind::OneClass => "ocsvm",
            },
        }
    }

    /// Same model with its stored offset replaced.
    pub fn with_offset(&self, offset: f64) -> ReachabilityModel {
        let mut m = self.clone();
        match &mut m {
            ReachabilityModel::Mlp(inner) => inner.offset = offset,
            ReachabilityModel::Svm(inner) => inner.offset = offset,
        }
        m
    }

    pub fn to_json(&self) -> Result<String> {
        let file = match self.clone() {
            ReachabilityModel::Mlp(m) => ModelFile::Mlp {
                space: m.space,
                hyperparameters: MlpHyper {
                    layer_sizes: m.layer_sizes(),
                },
                offset: m.offset,
                parameters: MlpParams {
                    input_shift: m.input_shift,
                    input_scale: m.input_scale,
                    layers: m.layers,
                },
            },
            ReachabilityModel::Svm(m) => {
                let hyper = SvmHyper { gamma: m.gamma };
                let params = SvmParams {
                    bias: m.bias,
                    coeffs: m.coeffs,
                    support_inputs: m.support_inputs,
                };
                match m.kind {
                    SvmKind::Regular => ModelFile::Svm {
                        space: m.space,
                        hyperparameters: hyper,
                        offset: m.offset,
                        parameters: params,
                    },
                    SvmKind::OneClass => ModelFile::Ocsvm {
                        space: m.space,
                        hyperparameters: hyper,
                        offset: m.offset,
                        parameters: params,
                    },
                }
            }
        };
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
        file.serialize(&mut ser)?;
        buf.push(b'\n');
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let model = match file {
            ModelFile::Mlp {
                space,
                hyperparameters: _,
                offset,
                parameters,
            } => ReachabilityModel::Mlp(MlpModel::from_parts(
                space,
                parameters.input_shift,
                parameters.input_scale,
                parameters.layers,
                offset,
            )?),
            ModelFile::Svm {
                space,
                hyperparameters,
                offset,
                parameters,
            } => ReachabilityModel::Svm(SvmModel::from_parts(
                SvmKind::Regular,
                space,
                hyperparameters.gamma,
                parameters.coeffs,
                parameters.support_inputs,
                parameters.bias,
                offset,
            )?),
            ModelFile::Ocsvm {
                space,
                hyperparameters,
                offset,
                parameters,
            } => ReachabilityModel::Svm(SvmModel::from_parts(
                SvmKind::OneClass,
                space,
                hyperparameters.gamma,
                parameters.coeffs,
                parameters.support_inputs,
                parameters.bias,
                offset,
            )?),
        };
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl ReachabilityMap for ReachabilityModel {
    fn space(&self) -> TaskSpace {
        match self {
            ReachabilityModel::Mlp(m) => m.space(),
            ReachabilityModel::Svm(m) => m.space(),
        }
    }

    fn offset(&self) -> f64 {
        match self {
            ReachabilityModel::Mlp(m) => m.offset,
            ReachabilityModel::Svm(m) => m.offset,
        }
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            ReachabilityModel::Mlp(m) => m.value_unchecked(x),
            ReachabilityModel::Svm(m) => m.value_unchecked(x),
        }
    }

    fn grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ReachabilityModel::Mlp(m) => m.grad_unchecked(x),
            ReachabilityModel::Svm(m) => m.grad_unchecked(x),
        }
    }
}

impl From<MlpModel> for ReachabilityModel {
    fn from(m: MlpModel) -> Self {
        ReachabilityModel::Mlp(m)
    }
}

impl From<SvmModel> for ReachabilityModel {
    fn from(m: SvmModel) -> Self {
        ReachabilityModel::Svm(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelFile {
    Mlp {
        space: TaskSpace,
        hyperparameters: MlpHyper,
        offset: f64,
        parameters: MlpParams,
    },
    Svm {
        space: TaskSpace,
        hyperparameters: SvmHyper,
        offset: f64,
        parameters: SvmParams,
    },
    Ocsvm {
        space: TaskSpace,
        hyperparameters: SvmHyper,
        offset: f64,
        parameters: SvmParams,
    },
}

#[derive(Serialize, Deserialize)]
struct MlpHyper {
    layer_sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct MlpParams {
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    layers: Vec<DenseLayer>,
}

#[derive(Serialize, Deserialize)]
struct SvmHyper {
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct SvmParams {
    bias: f64,
    coeffs: Vec<f64>,
    support_inputs: Vec<Vec<f64>>,
}

/// Writes every float with 17 significant digits.
struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_svm(space: TaskSpace) -> SvmModel {
        let d = space.input_dim();
        SvmModel::from_parts(
            SvmKind::Regular,
            space,
            2.0,
            vec![1.0, -0.5],
            vec![vec![0.1; d], (0..d).map(|i| i as f64 * 0.3).collect()],
            0.05,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn json_uses_17_significant_digits() {
        let m = ReachabilityModel::Svm(toy_svm(TaskSpace::R2));
        let text = m.to_json().unwrap();
        assert!(text.contains("\"kind\":\"svm\""));
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert_eq!(ReachabilityModel::from_json(&text).unwrap(), m);
    }

    #[test]
    fn schema_errors_are_reported() {
        assert!(matches!(
            ReachabilityModel::from_json("{\"kind\":\"tree\"}"),
            Err(Error::Json(_))
        ));
        let text = ReachabilityModel::Svm(toy_svm(TaskSpace::R2))
            .to_json()
            .unwrap()
            .replace("\"R2\"", "\"SE2\"");
        assert!(ReachabilityModel::from_json(&text).is_err());
    }

    #[test]
    fn mirrored_map_reflects_input_and_gradient() {
        let m = toy_svm(TaskSpace::SE2);
        let mirror = Mirrored { inner: m.clone() };
        let x = [0.3, 0.2, 0.8, 0.6];
        let xr = [0.3, -0.2, 0.8, -0.6];
        assert_eq!(mirror.eval_value(&x).unwrap(), m.eval_value(&xr).unwrap());
        let g = mirror.eval_grad(&x).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut p = x;
            let mut q = x;
            p[k] += h;
            q[k] -= h;
            let fd = (mirror.eval_value(&p).unwrap() - mirror.eval_value(&q).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn se3_reflection_is_an_involution() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 + 1.0).collect();
        assert_eq!(
            reflect_input(TaskSpace::SE3, &reflect_input(TaskSpace::SE3, &x)),
            x
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = toy_svm(TaskSpace::R2);
        assert!(matches!(
            m.eval_value(&[0.0; 3]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(m.eval_grad(&[0.0]), Err(Error::Dimension { .. })));
    }
}
