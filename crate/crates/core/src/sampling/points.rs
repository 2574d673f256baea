use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where a point sits in the problem geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Inlet,
    Outlet,
    Wall,
    Cylinder,
    /// `t = 0` line of a space-time rectangle.
    Initial,
    /// Lower spatial edge of a space-time rectangle (`x = 0`).
    Left,
    /// Upper spatial edge of a space-time rectangle (`x = 4`).
    Right,
    Interior,
}

impl Segment {
    pub const ALL: [Segment; 8] = [
        Segment::Inlet,
        Segment::Outlet,
        Segment::Wall,
        Segment::Cylinder,
        Segment::Initial,
        Segment::Left,
        Segment::Right,
        Segment::Interior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Inlet => "inlet",
            Segment::Outlet => "outlet",
            Segment::Wall => "wall",
            Segment::Cylinder => "cylinder",
            Segment::Initial => "initial",
            Segment::Left => "left",
            Segment::Right => "right",
            Segment::Interior => "interior",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|seg| seg.name() == s)
    }
}

/// Target value for one network output at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub output: usize,
    pub value: f64,
}

/// Points with optional per-point labels and segment tags.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    labels: Option<Vec<Vec<Label>>>,
    segments: Option<Vec<Segment>>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        PointSet {
            dim,
            coords: Vec::new(),
            labels: None,
            segments: None,
        }
    }

    /// Unlabeled interior points from a flat coordinate buffer.
    pub fn from_coords(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: coords.len(),
            });
        }
        let n = coords.len() / dim;
        Ok(PointSet {
            dim,
            coords,
            labels: None,
            segments: Some(vec![Segment::Interior; n]),
        })
    }

    /// Append a point. Mixing labeled and unlabeled points is not allowed.
    pub fn push(&mut self, point: &[f64], segment: Segment, labels: Option<Vec<Label>>) {
        assert_eq!(point.len(), self.dim);
        let was_empty = self.is_empty();
        self.coords.extend_from_slice(point);
        match (&mut self.labels, labels) {
            (Some(all), Some(l)) => all.push(l),
            (None, Some(l)) if was_empty => self.labels = Some(vec![l]),
            (None, None) => {}
            _ => panic!("labeled and unlabeled points cannot be mixed"),
        }
        self.segments.get_or_insert_with(Vec::new).push(segment);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[Vec<Label>]> {
        self.labels.as_deref()
    }

    pub fn segments(&self) -> Option<&[Segment]> {
        self.segments.as_deref()
    }

    pub fn segment(&self, i: usize) -> Option<Segment> {
        self.segments.as_ref().map(|s| s[i])
    }

    /// Subset with the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointSet {
            dim: self.dim,
            coords,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i].clone()).collect()),
            segments: self
                .segments
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    /// Points tagged `segment`.
    pub fn filter_segment(&self, segment: Segment) -> PointSet {
        let idx: Vec<usize> = match &self.segments {
            Some(s) => (0..self.len()).filter(|&i| s[i] == segment).collect(),
            None => Vec::new(),
        };
        self.select(&idx)
    }

    /// Distinct segments present, in [`Segment`] order.
    pub fn segment_set(&self) -> Vec<Segment> {
        let mut s: Vec<Segment> = self.segments.clone().unwrap_or_default();
        s.sort();
        s.dedup();
        s
    }

    /// Concatenate two sets of the same dimension.
    pub fn concat(&self, other: &PointSet) -> Result<PointSet> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            (None, None) => None,
            _ => return Err(Error::MissingLabels),
        };
        let seg = |p: &PointSet| {
            p.segments
                .clone()
                .unwrap_or_else(|| vec![Segment::Interior; p.len()])
        };
        let mut segments = seg(self);
        segments.extend(seg(other));
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(PointSet {
            dim: self.dim,
            coords,
            labels,
            segments: Some(segments),
        })
    }

    /// Write as CSV: coordinate columns, `segment`, then one column per output
    /// (empty where a point has no label for that output).
    pub fn write_csv<W: Write>(
        &self,
        writer: W,
        coord_names: &[&str],
        output_names: &[&str],
    ) -> Result<()> {
        assert_eq!(coord_names.len(), self.dim);
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = coord_names.to_vec();
        header.push("segment");
        header.extend_from_slice(output_names);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.point(i).iter().map(|v| v.to_string()).collect();
            row.push(self.segment(i).unwrap_or(Segment::Interior).name().to_string());
            let mut cols = vec![String::new(); output_names.len()];
            if let Some(labels) = &self.labels {
                for l in &labels[i] {
                    if l.output < cols.len() {
                        cols[l.output] = l.value.to_string();
                    }
                }
            }
            row.extend(cols);
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}
