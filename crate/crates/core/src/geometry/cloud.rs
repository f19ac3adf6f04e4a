//! Point cloud container.

use nalgebra::Vector3;

use crate::autodiff::Array;
use crate::error::{Error, Result};

/// An ordered set of 3D points (meters) with an optional per-point feature
/// matrix. The point order is significant: indices into a cloud are used for
/// neighbor lists, correspondences, and pyramid selections.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    features: Option<Array>,
}

impl PointCloud {
    /// Builds a cloud from points, checking that every coordinate is finite.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "point {i} has a non-finite coordinate: {p:?}"
                )));
            }
        }
        Ok(Self {
            points,
            features: None,
        })
    }

    /// Attaches a feature matrix with exactly one row per point.
    pub fn with_features(mut self, features: Array) -> Result<Self> {
        if features.rows() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "feature matrix has {} rows for {} points",
                features.rows(),
                self.points.len()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn features(&self) -> Option<&Array> {
        self.features.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinates as an N x 3 row-major array (the initial encoder feature).
    pub fn coords_array(&self) -> Array {
        let mut data = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            data.extend_from_slice(&[p.x, p.y, p.z]);
        }
        Array::from_vec(self.points.len(), 3, data).expect("3 columns per point")
    }

    /// Cloud restricted to the given point indices, in the given order.
    /// Features rows are carried along.
    pub fn select(&self, indices: &[u32]) -> Result<Self> {
        let mut points = Vec::with_capacity(indices.len());
        for &i in indices {
            let i = i as usize;
            if i >= self.points.len() {
                return Err(Error::InvalidInput(format!(
                    "selection index {i} out of range for {} points",
                    self.points.len()
                )));
            }
            points.push(self.points[i]);
        }
        let features = match &self.features {
            Some(f) => Some(f.select_rows(indices)?),
            None => None,
        };
        Ok(Self { points, features })
    }

    /// Centroid of the cloud. Zero vector for an empty cloud.
    pub fn centroid(&self) -> Vector3<f64> {
        if self.points.is_empty() {
            return Vector3::zeros();
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        sum / self.points.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_coordinates() {
        let r = PointCloud::new(vec![Vector3::new(0.0, f64::NAN, 0.0)]);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_feature_row_mismatch() {
        let cloud = PointCloud::new(vec![Vector3::zeros(), Vector3::x()]).unwrap();
        let features = Array::zeros(3, 4);
        assert!(cloud.with_features(features).is_err());
    }

    #[test]
    fn select_carries_features() {
        let cloud = PointCloud::new(vec![Vector3::zeros(), Vector3::x(), Vector3::y()])
            .unwrap()
            .with_features(Array::from_vec(3, 1, vec![10.0, 20.0, 30.0]).unwrap())
            .unwrap();
        let sub = cloud.select(&[2, 0]).unwrap();
        assert_eq!(sub.points(), &[Vector3::y(), Vector3::zeros()]);
        assert_eq!(sub.features().unwrap().as_slice(), &[30.0, 10.0]);
    }
}
