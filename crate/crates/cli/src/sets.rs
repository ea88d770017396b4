//! Named set builders.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::Value;
use stochinv::expr::Expression;
use stochinv::geometry::{
    Ball, ClosedSet, DistanceExprSet, HalfSpace, Orthant, PolyhedralCone, PowerGraph, Sphere, WholeSpace,
};
use stochinv::{Error, Result};

use crate::config::parse_params;

pub trait SetBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>>;
}

pub struct SetRegistry {
    builders: BTreeMap<&'static str, Box<dyn SetBuilder>>,
}

impl Default for SetRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl SetRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
        };
        r.register(Box::new(WholeSpaceBuilder));
        r.register(Box::new(OrthantBuilder));
        r.register(Box::new(HalfSpaceBuilder));
        r.register(Box::new(BallBuilder));
        r.register(Box::new(SphereBuilder));
        r.register(Box::new(PolyhedralConeBuilder));
        r.register(Box::new(PowerGraphBuilder));
        r.register(Box::new(DistanceExprBuilder));
        r
    }

    pub fn register(&mut self, builder: Box<dyn SetBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    /// `field` prefixes error locations, e.g. `set` or `checks[2].params.set`.
    pub fn build(&self, kind: &str, params: &Value, field: &str) -> Result<Arc<dyn ClosedSet>> {
        let b = self.builders.get(kind).ok_or_else(|| {
            Error::config(
                format!("{field}.kind"),
                format!("unknown set `{kind}` (known: {})", self.names().join(", ")),
            )
        })?;
        b.build(params).map_err(|e| match e {
            Error::Config { field: f, message } => Error::config(format!("{field}.{f}"), message),
            other => Error::config(format!("{field}.params"), other.to_string()),
        })
    }
}

fn dvec(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DimParams {
    dim: usize,
}

struct WholeSpaceBuilder;
impl SetBuilder for WholeSpaceBuilder {
    fn name(&self) -> &'static str {
        "whole_space"
    }
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>> {
        let p: DimParams = parse_params(params, "params")?;
        Ok(Arc::new(WholeSpace { dim: p.dim }))
    }
}

struct OrthantBuilder;
impl SetBuilder for OrthantBuilder {
    fn name(&self) -> &'static str {
        "orthant"
    }
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>> {
        let p: DimParams = parse_params(params, "params")?;
        if p.dim == 0 {
            return Err(Error::config("params.dim", "dimension must be positive"));
        }
        Ok(Arc::new(Orthant { dim: p.dim }))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HalfSpaceParams {
    a: Vec<f64>,
    #[serde(default)]
    c: f64,
}

struct HalfSpaceBuilder;
impl SetBuilder for HalfSpaceBuilder {
    fn name(&self) -> &'static str {
        "half_space"
    }
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>> {
        let p: HalfSpaceParams = parse_params(params, "params")?;
        Ok(Arc::new(HalfSpace::new(dvec(p.a), p.c)?))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BallParams {
    center: Vec<f64>,
    radius: f64,
}

struct BallBuilder;
impl SetBuilder for BallBuilder {
    fn name(&self) -> &'static str {
        "ball"
    }
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>> {
        let p: BallParams = parse_params(params, "params")?;
        Ok(Arc::new(Ball::new(dvec(p.center), p.radius)?))
    }
}

struct SphereBuilder;
impl SetBuilder for SphereBuilder {
    fn name(&self) -> &'static str {
        "sphere"
    }
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>> {
        let p: BallParams = parse_params(params, "params")?;
        Ok(Arc::new(Sphere::new(dvec(p.center), p.radius)?))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConeParams {
    /// Rows `a_i` of `{x : <a_i, x> >= 0}`.
    facets: Vec<Vec<f64>>,
}

struct PolyhedralConeBuilder;
impl SetBuilder for PolyhedralConeBuilder {
    fn name(&self) -> &'static str {
        "polyhedral_cone"
    }
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>> {
        let p: ConeParams = parse_params(params, "params")?;
        let n = p.facets.first().map_or(0, Vec::len);
        if n == 0 || p.facets.iter().any(|r| r.len() != n) {
            return Err(Error::config("params.facets", "facets must be non-empty rows of equal length"));
        }
        let m = DMatrix::from_fn(p.facets.len(), n, |i, j| p.facets[i][j]);
        Ok(Arc::new(PolyhedralCone::new(m)?))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerParams {
    p: f64,
}

struct PowerGraphBuilder;
impl SetBuilder for PowerGraphBuilder {
    fn name(&self) -> &'static str {
        "power_graph"
    }
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>> {
        let p: PowerParams = parse_params(params, "params")?;
        Ok(Arc::new(PowerGraph::new(p.p)?))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DistanceExprParams {
    dim: usize,
    distance: String,
    #[serde(default)]
    convex: bool,
}

struct DistanceExprBuilder;
impl SetBuilder for DistanceExprBuilder {
    fn name(&self) -> &'static str {
        "distance_expr"
    }
    fn build(&self, params: &Value) -> Result<Arc<dyn ClosedSet>> {
        let p: DistanceExprParams = parse_params(params, "params")?;
        let e = Expression::parse(&p.distance, p.dim).map_err(|e| Error::config("params.distance", e.to_string()))?;
        Ok(Arc::new(DistanceExprSet::new(e, p.convex)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn builds_every_builtin() {
        let r = SetRegistry::with_builtins();
        let cases = [
            ("whole_space", json!({"dim": 2})),
            ("orthant", json!({"dim": 3})),
            ("half_space", json!({"a": [1.0, 0.0], "c": 0.5})),
            ("ball", json!({"center": [0.0, 0.0], "radius": 1.0})),
            ("sphere", json!({"center": [0.0, 0.0], "radius": 1.0})),
            ("polyhedral_cone", json!({"facets": [[1.0, 0.0], [1.0, 1.0]]})),
            ("power_graph", json!({"p": 1.5})),
            ("distance_expr", json!({"dim": 1, "distance": "max(0, -x1)", "convex": true})),
        ];
        for (kind, params) in cases {
            let s = r.build(kind, &params, "set").unwrap();
            assert_eq!(s.project(&DVector::zeros(s.dim())).unwrap().len(), s.dim());
        }
        assert_eq!(r.names().len(), 8);
    }

    #[test]
    fn errors_name_the_field() {
        let r = SetRegistry::with_builtins();
        let e = r.build("torus", &Value::Null, "set").err().unwrap();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "set.kind"));
        let e = r.build("ball", &json!({"center": [0.0]}), "set").err().unwrap();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "set.params"));
    }
}
