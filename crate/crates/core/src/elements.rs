//! Standardized semantic elements: pole lines and traffic-sign midpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_to_bearing, Bearing, CameraIntrinsics, Pose, Vec3};

/// Index into a [`Taxonomy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticClass(pub usize);

/// The set of semantic classes shared by a dataset. Ids are contiguous from
/// zero and exactly one class (the pole) is line-like.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    names: Vec<String>,
    line_class: usize,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self {
            names: ["pole", "triangular-sign", "rectangular-sign", "rounded-sign"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            line_class: 0,
        }
    }
}

impl Taxonomy {
    pub fn new(names: Vec<String>, line_class: usize) -> Result<Self> {
        if line_class >= names.len() {
            return Err(Error::Config(format!(
                "line-like class {line_class} out of range for {} classes",
                names.len()
            )));
        }
        Ok(Self { names, line_class })
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

    pub fn name(&self, class: SemanticClass) -> Option<&str> {
        self.names.get(class.0).map(String::as_str)
    }

    pub fn class_by_name(&self, name: &str) -> Option<SemanticClass> {
        self.names.iter().position(|n| n == name).map(SemanticClass)
    }

    pub fn pole(&self) -> SemanticClass {
        SemanticClass(self.line_class)
    }

    pub fn is_line_like(&self, class: SemanticClass) -> bool {
        class.0 == self.line_class
    }

    pub fn sign_classes(&self) -> impl Iterator<Item = SemanticClass> + '_ {
        (0..self.names.len()).filter(move |&c| c != self.line_class).map(SemanticClass)
    }

    pub fn classes(&self) -> impl Iterator<Item = SemanticClass> {
        (0..self.names.len()).map(SemanticClass)
    }

    pub fn one_hot(&self, class: SemanticClass) -> Vec<f64> {
        let mut v = vec![0.0; self.names.len()];
        v[class.0] = 1.0;
        v
    }

    fn check(&self, class: SemanticClass, direction: &Vec3) -> Result<()> {
        if class.0 >= self.names.len() {
            return Err(Error::Domain(format!("class id {} out of range", class.0)));
        }
        if self.is_line_like(class) {
            if (direction.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Domain("pole direction must be a unit vector".into()));
            }
        } else if *direction != Vec3::zeros() {
            return Err(Error::Domain("sign elements carry a zero direction".into()));
        }
        Ok(())
    }
}

/// Image-side observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element2D {
    pub bearing: Bearing,
    /// Unit direction toward the pole bottom on the normalized image plane;
    /// zero for signs.
    pub direction: Vec3,
    pub class: SemanticClass,
}

impl Element2D {
    pub fn new(bearing: Bearing, direction: Vec3, class: SemanticClass, tax: &Taxonomy) -> Result<Self> {
        tax.check(class, &direction)?;
        Ok(Self { bearing, direction, class })
    }
}

/// Map-side landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element3D {
    pub point: Vec3,
    /// Unit direction from the pole peak toward its bottom; zero for signs.
    pub direction: Vec3,
    pub class: SemanticClass,
}

impl Element3D {
    pub fn new(point: Vec3, direction: Vec3, class: SemanticClass, tax: &Taxonomy) -> Result<Self> {
        if !point.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite element position".into()));
        }
        tax.check(class, &direction)?;
        Ok(Self { point, direction, class })
    }

    /// Applies a rigid transform to the position and rotates the direction.
    pub fn transformed(&self, pose: &Pose) -> Self {
        let r = pose.rotation_matrix();
        let direction = if self.direction == Vec3::zeros() {
            self.direction
        } else {
            (r * self.direction).normalize()
        };
        Self { point: r * self.point + pose.translation, direction, class: self.class }
    }

    pub fn horizontal_distance(&self, origin: &Vec3) -> f64 {
        (self.point.x - origin.x).hypot(self.point.y - origin.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubMap {
    pub elements: Vec<Element3D>,
    pub origin: Vec3,
    pub radius: f64,
}

impl SubMap {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Pole observation from its peak and bottom pixels.
pub fn make_pole_2d(
    peak: (f64, f64),
    bottom: (f64, f64),
    k: &CameraIntrinsics,
    tax: &Taxonomy,
) -> Result<Element2D> {
    if peak == bottom {
        return Err(Error::Domain("pole peak and bottom coincide".into()));
    }
    let bearing = pixel_to_bearing(peak.0, peak.1, k)?;
    pixel_to_bearing(bottom.0, bottom.1, k)?;
    let delta = k.lift(bottom.0, bottom.1) - k.lift(peak.0, peak.1);
    Element2D::new(bearing, delta.normalize(), tax.pole(), tax)
}

pub fn make_sign_2d(
    midpoint: (f64, f64),
    class: SemanticClass,
    k: &CameraIntrinsics,
    tax: &Taxonomy,
) -> Result<Element2D> {
    if tax.is_line_like(class) {
        return Err(Error::Domain("sign constructor called with a line-like class".into()));
    }
    let bearing = pixel_to_bearing(midpoint.0, midpoint.1, k)?;
    Element2D::new(bearing, Vec3::zeros(), class, tax)
}

/// Keeps the elements within `radius` (closed) of `origin` in the x-y plane.
pub fn crop_submap(map: &[Element3D], origin: Vec3, radius: f64) -> Result<SubMap> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("crop radius must be positive, got {radius}")));
    }
    let elements = map
        .iter()
        .filter(|e| e.horizontal_distance(&origin) <= radius)
        .copied()
        .collect();
    Ok(SubMap { elements, origin, radius })
}
