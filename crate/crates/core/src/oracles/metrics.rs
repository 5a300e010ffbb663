//! Per-layer distance and change-rate series for a backend pair.

use serde::{Deserialize, Serialize};

use super::OracleConfig;
use crate::backends::ExecutionTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistance {
    pub node: String,
    /// `None` when either output holds NaN or an infinity.
    pub d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSeries {
    pub pair: (String, String),
    pub values: Vec<LayerDistance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    pub node: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub pair: (String, String),
    pub values: Vec<LayerRate>,
}

impl DistanceSeries {
    pub fn flagged(&self) -> impl Iterator<Item = &str> {
        self.values
            .iter()
            .filter(|v| v.d.is_none())
            .map(|v| v.node.as_str())
    }
}

impl RateSeries {
    /// The largest rate and its layer; ties keep the earliest layer.
    pub fn max(&self) -> Option<&LayerRate> {
        self.values
            .iter()
            .fold(None, |best: Option<&LayerRate>, v| match best {
                Some(b) if b.r >= v.r => Some(b),
                _ => Some(v),
            })
    }
}

/// Mean absolute elementwise difference per layer, over the layers both
/// traces executed, in `m`'s capture order.
pub fn layer_distance(m: &ExecutionTrace, n: &ExecutionTrace) -> Result<DistanceSeries> {
    let mut values = Vec::new();
    for lm in &m.layer_outputs {
        let Some(tn) = n.layer(&lm.node) else { continue };
        let tm = &lm.tensor;
        if tm.shape != tn.shape {
            return Err(Error::Precondition(format!(
                "layer `{}` has shape {:?} on {} and {:?} on {}",
                lm.node, tm.shape, m.backend_id, tn.shape, n.backend_id
            )));
        }
        let d = if tm.has_non_finite() || tn.has_non_finite() || tm.is_empty() {
            None
        } else {
            let total: f64 = tm
                .data
                .iter()
                .zip(&tn.data)
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .sum();
            Some(total / tm.len() as f64)
        };
        values.push(LayerDistance {
            node: lm.node.clone(),
            d,
        });
    }
    if values.is_empty() {
        return Err(Error::Alignment);
    }
    Ok(DistanceSeries {
        pair: (m.backend_id.clone(), n.backend_id.clone()),
        values,
    })
}

/// `R_i = |(D_i - D_pre) / (D_pre + epsilon)|` for each layer after the
/// first, where `D_pre` belongs to the preceding layer of the series. Pairs
/// with a flagged layer on either side are skipped.
pub fn rate_series(d: &DistanceSeries, cfg: &OracleConfig) -> RateSeries {
    let values = d
        .values
        .windows(2)
        .filter_map(|w| {
            let (pre, cur) = (w[0].d?, w[1].d?);
            Some(LayerRate {
                node: w[1].node.clone(),
                r: ((cur - pre) / (pre + cfg.epsilon)).abs(),
            })
        })
        .collect();
    RateSeries {
        pair: d.pair.clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{LayerOutput, Stage};
    use crate::tensor::Tensor;

    fn trace(id: &str, layers: &[(&str, Vec<f32>)]) -> ExecutionTrace {
        let mut t = ExecutionTrace::new(id);
        for s in Stage::ALL {
            t.mark_ok(s);
        }
        t.layer_outputs = layers
            .iter()
            .map(|(n, v)| LayerOutput {
                node: n.to_string(),
                tensor: Tensor::new(vec![v.len()], v.clone()).unwrap(),
            })
            .collect();
        t
    }

    fn series(ds: &[f64]) -> DistanceSeries {
        DistanceSeries {
            pair: ("a".into(), "b".into()),
            values: ds
                .iter()
                .enumerate()
                .map(|(i, &d)| LayerDistance {
                    node: format!("n{i}"),
                    d: Some(d),
                })
                .collect(),
        }
    }

    #[test]
    fn identical_traces_have_zero_distance() {
        let a = trace("a", &[("x", vec![1.0, -2.0]), ("y", vec![3.0])]);
        let d = layer_distance(&a, &a).unwrap();
        assert!(d.values.iter().all(|v| v.d == Some(0.0)));
    }

    #[test]
    fn hand_computed_distance() {
        let a = trace("a", &[("x", vec![1.0, 2.0])]);
        let b = trace("b", &[("x", vec![2.0, 4.0])]);
        assert_eq!(layer_distance(&a, &b).unwrap().values[0].d, Some(1.5));
    }

    #[test]
    fn crashed_trace_limits_the_series() {
        let layers: Vec<(&str, Vec<f32>)> =
            ["l1", "l2", "l3", "l4", "l5"].iter().map(|n| (*n, vec![1.0])).collect();
        let a = trace("a", &layers);
        let b = trace("b", &layers[..2]);
        assert_eq!(layer_distance(&a, &b).unwrap().values.len(), 2);
    }

    #[test]
    fn non_finite_layers_are_flagged() {
        let a = trace("a", &[("x", vec![1.0]), ("y", vec![f32::NAN]), ("z", vec![2.0])]);
        let b = trace("b", &[("x", vec![1.0]), ("y", vec![0.0]), ("z", vec![2.5])]);
        let d = layer_distance(&a, &b).unwrap();
        assert_eq!(d.flagged().collect::<Vec<_>>(), ["y"]);
        // both neighbours of the flagged layer lose their rate
        assert!(rate_series(&d, &OracleConfig::default()).values.is_empty());
    }

    #[test]
    fn disjoint_traces_fail_alignment() {
        let a = trace("a", &[("x", vec![1.0])]);
        let b = trace("b", &[("y", vec![1.0])]);
        assert!(matches!(layer_distance(&a, &b), Err(Error::Alignment)));
    }

    #[test]
    fn rate_examples() {
        let cfg = OracleConfig::default();
        assert_eq!(rate_series(&series(&[0.5, 0.5]), &cfg).values[0].r, 0.0);
        // the decimal literals land one ulp above 1000 in binary
        let r = rate_series(&series(&[0.0, 1e-4]), &cfg).values[0].r;
        assert!((r - 1000.0).abs() <= 1000.0 * f64::EPSILON, "{r}");
        let r = rate_series(&series(&[1.0, 3.0]), &cfg).values[0].r;
        assert!((r - 2.0 / (1.0 + 1e-7)).abs() < 1e-15);
        assert!(rate_series(&series(&[1.0]), &cfg).values.is_empty());
    }
}
