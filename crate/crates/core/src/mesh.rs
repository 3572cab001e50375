use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Triangle mesh used as a body prior. Only vertices and faces are required;
/// colors and visibility are filled in by projection against an image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SmplMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_colors: Option<Vec<[f64; 3]>>,
    pub visible: Option<Vec<bool>>,
}

impl SmplMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, CoreError> {
        let mesh = Self {
            vertices,
            faces,
            vertex_colors: None,
            visible: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let n = self.vertices.len();
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("mesh vertices"));
        }
        if let Some((fi, f)) = self.faces.iter().enumerate().find(|(_, f)| f.iter().any(|&i| i >= n)) {
            return Err(CoreError::Invalid(format!(
                "face {fi} references vertex {:?} but mesh has {n} vertices",
                f
            )));
        }
        if let Some(c) = &self.vertex_colors {
            if c.len() != n {
                return Err(CoreError::Shape(format!("{} colors for {n} vertices", c.len())));
            }
        }
        if let Some(v) = &self.visible {
            if v.len() != n {
                return Err(CoreError::Shape(format!(
                    "{} visibility flags for {n} vertices",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, f: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}
