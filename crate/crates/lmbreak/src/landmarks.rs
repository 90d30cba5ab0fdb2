//! Landmark schemas and point sets.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Names of the two points whose ground-truth distance normalizes NME.
pub const LEFT_EYE_OUTER: &str = "left eye outer corner";
pub const RIGHT_EYE_OUTER: &str = "right eye outer corner";

/// Ordered, named landmark index map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    names: Vec<String>,
}

impl Schema {
    /// A schema is usable only if it names the NME normalization pair.
    pub fn new(names: Vec<String>) -> Result<Self> {
        let s = Schema { names };
        if s.index_of(LEFT_EYE_OUTER).is_none() || s.index_of(RIGHT_EYE_OUTER).is_none() {
            return Err(Error::Dataset(format!(
                "schema must name \"{LEFT_EYE_OUTER}\" and \"{RIGHT_EYE_OUTER}\""
            )));
        }
        Ok(s)
    }

    /// The 13-point default schema used by the synthetic renderer.
    pub fn standard13() -> Arc<Schema> {
        let names = [
            "left brow center",
            "right brow center",
            LEFT_EYE_OUTER,
            "left eye inner corner",
            "right eye inner corner",
            RIGHT_EYE_OUTER,
            "nose tip",
            "mouth left corner",
            "mouth right corner",
            "mouth top center",
            "mouth bottom center",
            "chin",
            "forehead center",
        ];
        Arc::new(Schema {
            names: names.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn normalization_pair(&self) -> (usize, usize) {
        (
            self.index_of(LEFT_EYE_OUTER).expect("validated schema"),
            self.index_of(RIGHT_EYE_OUTER).expect("validated schema"),
        )
    }
}

/// k ordered (x, y) points in image pixels, tied to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    schema: Arc<Schema>,
    coords: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(schema: Arc<Schema>, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != schema.len() {
            return Err(Error::shape(
                format!("{} landmarks", schema.len()),
                format!("{} landmarks", coords.len()),
            ));
        }
        Ok(LandmarkSet { schema, coords })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.coords
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.coords[i][0], self.coords[i][1])
    }

    pub fn named(&self, name: &str) -> Option<(f64, f64)> {
        self.schema.index_of(name).map(|i| self.point(i))
    }

    /// All points strictly inside `[0, w) × [0, h)`.
    pub fn in_bounds(&self, h: usize, w: usize) -> bool {
        self.coords
            .iter()
            .all(|p| p[0] >= 0.0 && p[0] < w as f64 && p[1] >= 0.0 && p[1] < h as f64)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> LandmarkSet {
        let coords = self.coords.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        LandmarkSet {
            schema: self.schema.clone(),
            coords,
        }
    }

    /// Axis-aligned bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut x0 = f64::INFINITY;
        let mut y0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for p in &self.coords {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        (x0, y0, x1, y1)
    }
}

/// k heat-maps at an image resolution reduced by `stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSet {
    maps: Tensor,
    stride: usize,
}

impl HeatmapSet {
    pub fn new(maps: Tensor, stride: usize) -> Self {
        HeatmapSet { maps, stride }
    }

    pub fn k(&self) -> usize {
        self.maps.channels()
    }

    pub fn map_height(&self) -> usize {
        self.maps.height()
    }

    pub fn map_width(&self) -> usize {
        self.maps.width()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn maps(&self) -> &Tensor {
        &self.maps
    }

    pub fn maps_mut(&mut self) -> &mut Tensor {
        &mut self.maps
    }

    pub fn map(&self, i: usize) -> &[f64] {
        self.maps.plane(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard13_has_normalization_pair() {
        let s = Schema::standard13();
        assert_eq!(s.len(), 13);
        let (l, r) = s.normalization_pair();
        assert_eq!(s.names()[l], LEFT_EYE_OUTER);
        assert_eq!(s.names()[r], RIGHT_EYE_OUTER);
    }

    #[test]
    fn schema_without_pair_is_rejected() {
        let err = Schema::new(vec!["a".into(), "b".into()]);
        assert!(err.is_err());
    }

    #[test]
    fn landmark_count_must_match_schema() {
        let s = Schema::standard13();
        assert!(LandmarkSet::new(s.clone(), vec![[0.0, 0.0]; 12]).is_err());
        assert!(LandmarkSet::new(s, vec![[1.0, 1.0]; 13]).is_ok());
    }
}
