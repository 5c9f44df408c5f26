//! Element-structured field data, the unit that flows through staging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("elements_per_axis must be >= 1 (got {0})")]
    BadElementCount(u32),
    #[error("points_per_element_axis must be >= 2 (got {0})")]
    BadPointCount(u32),
    #[error("components must be 1 or 3 (got {0})")]
    BadComponents(u32),
    #[error("values length {actual} does not match shape (expected {expected})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
}

/// Grid geometry of a field: `elements³` elements of `points³` samples,
/// each sample carrying `components` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldShape {
    pub elements: u32,
    pub points: u32,
    pub components: u32,
}

impl FieldShape {
    pub fn new(elements: u32, points: u32, components: u32) -> Result<Self, FieldError> {
        if elements < 1 {
            return Err(FieldError::BadElementCount(elements));
        }
        if points < 2 {
            return Err(FieldError::BadPointCount(points));
        }
        if components != 1 && components != 3 {
            return Err(FieldError::BadComponents(components));
        }
        Ok(Self {
            elements,
            points,
            components,
        })
    }

    pub fn element_count(&self) -> usize {
        (self.elements as usize).pow(3)
    }

    pub fn points_per_element(&self) -> usize {
        (self.points as usize).pow(3)
    }

    /// Values held by one element (points × components).
    pub fn values_per_element(&self) -> usize {
        self.points_per_element() * self.components as usize
    }

    pub fn value_count(&self) -> usize {
        self.element_count() * self.values_per_element()
    }

    /// Sample points along one axis of the whole grid.
    pub fn grid_points_per_axis(&self) -> usize {
        (self.elements * self.points) as usize
    }

    /// Flat index of `(element, point, component)`.
    #[inline]
    pub fn index(&self, element: usize, point: usize, component: usize) -> usize {
        (element * self.points_per_element() + point) * self.components as usize + component
    }

    /// Flat index of a global grid coordinate `(gx, gy, gz)`.
    #[inline]
    pub fn global_index(&self, gx: usize, gy: usize, gz: usize, component: usize) -> usize {
        let p = self.points as usize;
        let e = self.elements as usize;
        let element = gx / p + e * (gy / p + e * (gz / p));
        let point = gx % p + p * (gy % p + p * (gz % p));
        self.index(element, point, component)
    }

    /// Global grid coordinate of `(element, point)`.
    #[inline]
    pub fn global_coords(&self, element: usize, point: usize) -> [usize; 3] {
        let p = self.points as usize;
        let e = self.elements as usize;
        [
            (element % e) * p + point % p,
            ((element / e) % e) * p + (point / p) % p,
            (element / (e * e)) * p + point / (p * p),
        ]
    }
}

/// Dense field on a periodic grid of `E³` elements with `P³` points each.
///
/// Layout is element-major, then point-major, then component-major.
/// Within an element, point `(px, py, pz)` has index `px + P·(py + P·pz)`;
/// element `(ex, ey, ez)` has index `ex + E·(ey + E·ez)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    shape: FieldShape,
    values: Vec<f64>,
}

impl Field {
    pub fn new(shape: FieldShape, values: Vec<f64>) -> Result<Self, FieldError> {
        let shape = FieldShape::new(shape.elements, shape.points, shape.components)?;
        if values.len() != shape.value_count() {
            return Err(FieldError::LengthMismatch {
                expected: shape.value_count(),
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FieldError::NonFinite { index, value });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: FieldShape) -> Self {
        Self {
            values: vec![0.0; shape.value_count()],
            shape,
        }
    }

    pub fn shape(&self) -> FieldShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Values of one element, `P³·components` long.
    pub fn element(&self, element: usize) -> &[f64] {
        let n = self.shape.values_per_element();
        &self.values[element * n..(element + 1) * n]
    }

    /// Size of the raw value data in bytes.
    pub fn byte_len(&self) -> usize {
        self.values.len() * std::mem::size_of::<f64>()
    }

    pub fn at(&self, gx: usize, gy: usize, gz: usize, component: usize) -> f64 {
        self.values[self.shape.global_index(gx, gy, gz, component)]
    }
}
