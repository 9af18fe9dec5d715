//! Versioned JSON file formats.
//!
//! Every document carries `format` and `version` fields. A file whose major
//! version is newer than [`MAJOR_VERSION`] is rejected; older or equal
//! majors are read. Positions are meters, angles radians.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::elements::{Element2D, Element3D, SemanticClass, SubMap, Taxonomy};
use crate::encoder::{Block, Dense, EncoderConfig, EncoderWeights, StreamWeights};
use crate::error::{Error, Result};
use crate::eval::EvalSummary;
use crate::geometry::{Bearing, Pose, Vec3};
use crate::mapping::StereoObservation;
use crate::pipeline::Diagnostics;
use crate::synthetic::{Correspondences, GpsPrior, ScenePair, MIN_ELEMENTS};

pub const MAJOR_VERSION: u32 = 1;
pub const VERSION: &str = "1.0";

pub const MAP_FORMAT: &str = "semloc-map";
pub const PAIR_FORMAT: &str = "semloc-pair";
pub const STEREO_FORMAT: &str = "semloc-stereo";
pub const POSES_FORMAT: &str = "semloc-poses";
pub const WEIGHTS_FORMAT: &str = "semloc-weights";
pub const SUMMARY_FORMAT: &str = "semloc-eval";

/// Checks the `format` and `version` fields of a parsed document.
pub fn check_header(doc: &Value, format: &str) -> Result<()> {
    let found = doc.get("format").and_then(Value::as_str);
    if found != Some(format) {
        return Err(Error::Schema(format!("expected format {format:?}, found {found:?}")));
    }
    let version = doc
        .get("version")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Schema("missing version".into()))?;
    let major: u32 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| Error::Schema(format!("malformed version {version:?}")))?;
    if major > MAJOR_VERSION {
        return Err(Error::Schema(format!(
            "{format} version {version} is newer than the supported major version {MAJOR_VERSION}"
        )));
    }
    Ok(())
}

fn parse_checked<T: DeserializeOwned>(text: &str, format: &str) -> Result<T> {
    let doc: Value = serde_json::from_str(text)?;
    check_header(&doc, format)?;
    Ok(serde_json::from_value(doc)?)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(path, text)?)
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Element2DRecord {
    pub class: usize,
    /// Unit bearing in the camera frame.
    pub bearing: [f64; 3],
    /// Normalized image-plane direction toward the pole bottom, zero for signs.
    pub direction: [f64; 3],
}

impl Element2DRecord {
    pub fn from_element(e: &Element2D) -> Self {
        Self { class: e.class.0, bearing: (*e.bearing.as_vector()).into(), direction: e.direction.into() }
    }

    pub fn to_element(&self, tax: &Taxonomy) -> Result<Element2D> {
        let bearing = Bearing::from_unit(Vec3::from(self.bearing))?;
        Element2D::new(bearing, Vec3::from(self.direction), SemanticClass(self.class), tax)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Element3DRecord {
    pub class: usize,
    pub point: [f64; 3],
    /// Unit peak-to-bottom direction for poles, zero for signs.
    pub direction: [f64; 3],
}

impl Element3DRecord {
    pub fn from_element(e: &Element3D) -> Self {
        Self { class: e.class.0, point: e.point.into(), direction: e.direction.into() }
    }

    pub fn to_element(&self, tax: &Taxonomy) -> Result<Element3D> {
        Element3D::new(Vec3::from(self.point), Vec3::from(self.direction), SemanticClass(self.class), tax)
    }
}

fn elements3d(records: &[Element3DRecord], tax: &Taxonomy) -> Result<Vec<Element3D>> {
    records.iter().map(|r| r.to_element(tax)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub format: String,
    pub version: String,
    pub frame: String,
    pub units: String,
    pub taxonomy: Taxonomy,
    pub elements: Vec<Element3DRecord>,
}

impl MapFile {
    pub fn new(elements: &[Element3D], tax: &Taxonomy) -> Self {
        Self {
            format: MAP_FORMAT.into(),
            version: VERSION.into(),
            frame: "world".into(),
            units: "m".into(),
            taxonomy: tax.clone(),
            elements: elements.iter().map(Element3DRecord::from_element).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_checked(text, MAP_FORMAT)
    }

    pub fn elements(&self) -> Result<Vec<Element3D>> {
        elements3d(&self.elements, &self.taxonomy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubMapRecord {
    pub origin: [f64; 3],
    pub radius: f64,
    pub elements: Vec<Element3DRecord>,
}

/// One line of a pairs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub format: String,
    pub version: String,
    /// Frame of the submap and of `gt_pose`.
    pub frame: String,
    pub elements2d: Vec<Element2DRecord>,
    pub submap: SubMapRecord,
    pub gt_pose: Pose,
    /// Map index matched by each observation, null for spurious detections.
    pub gt_correspondence: Vec<Option<usize>>,
    /// World-frame prior, for localizing against a separate map file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<GpsPrior>,
}

impl PairRecord {
    pub fn from_pair(pair: &ScenePair) -> Self {
        Self {
            format: PAIR_FORMAT.into(),
            version: VERSION.into(),
            frame: "local".into(),
            elements2d: pair.elements2d.iter().map(Element2DRecord::from_element).collect(),
            submap: SubMapRecord {
                origin: pair.submap.origin.into(),
                radius: pair.submap.radius,
                elements: pair.submap.elements.iter().map(Element3DRecord::from_element).collect(),
            },
            gt_pose: pair.gt_pose,
            gt_correspondence: (0..pair.elements2d.len()).map(|i| pair.gt_correspondence.get(i)).collect(),
            prior: None,
        }
    }

    pub fn to_pair(&self, tax: &Taxonomy) -> Result<ScenePair> {
        let elements2d: Vec<Element2D> =
            self.elements2d.iter().map(|r| r.to_element(tax)).collect::<Result<_>>()?;
        let submap = SubMap {
            elements: elements3d(&self.submap.elements, tax)?,
            origin: Vec3::from(self.submap.origin),
            radius: self.submap.radius,
        };
        if self.gt_correspondence.len() != elements2d.len() {
            return Err(Error::ShapeMismatch("correspondence list length differs from observations".into()));
        }
        let gt_correspondence = Correspondences::new(submap.elements.len(), self.gt_correspondence.clone())?;
        let valid = elements2d.len() >= MIN_ELEMENTS;
        Ok(ScenePair { elements2d, submap, gt_pose: self.gt_pose, gt_correspondence, valid })
    }
}

/// One JSON document per line.
pub fn pairs_to_jsonl(pairs: &[ScenePair]) -> Result<String> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(&PairRecord::from_pair(p))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_pair_records(text: &str) -> Result<Vec<PairRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| parse_checked(l, PAIR_FORMAT)).collect()
}

pub fn parse_pairs(text: &str, tax: &Taxonomy) -> Result<Vec<ScenePair>> {
    parse_pair_records(text)?.iter().map(|r| r.to_pair(tax)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoRecord {
    pub left: Element2DRecord,
    pub right: Element2DRecord,
    /// World-to-camera poses.
    pub left_pose: Pose,
    pub right_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoFile {
    pub format: String,
    pub version: String,
    pub frame: String,
    pub taxonomy: Taxonomy,
    pub observations: Vec<StereoRecord>,
}

impl StereoFile {
    pub fn new(observations: &[StereoObservation], tax: &Taxonomy) -> Self {
        Self {
            format: STEREO_FORMAT.into(),
            version: VERSION.into(),
            frame: "world".into(),
            taxonomy: tax.clone(),
            observations: observations
                .iter()
                .map(|o| StereoRecord {
                    left: Element2DRecord::from_element(&o.left),
                    right: Element2DRecord::from_element(&o.right),
                    left_pose: o.left_pose,
                    right_pose: o.right_pose,
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_checked(text, STEREO_FORMAT)
    }

    pub fn observations(&self) -> Result<Vec<StereoObservation>> {
        let tax = &self.taxonomy;
        self.observations
            .iter()
            .map(|r| {
                Ok(StereoObservation {
                    left: r.left.to_element(tax)?,
                    right: r.right.to_element(tax)?,
                    left_pose: r.left_pose,
                    right_pose: r.right_pose,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEntry {
    pub index: usize,
    /// Estimated world-to-camera pose, null when localization failed.
    pub pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosesFile {
    pub format: String,
    pub version: String,
    pub frame: String,
    pub entries: Vec<PoseEntry>,
}

impl PosesFile {
    pub fn new(frame: &str, entries: Vec<PoseEntry>) -> Self {
        Self { format: POSES_FORMAT.into(), version: VERSION.into(), frame: frame.into(), entries }
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_checked(text, POSES_FORMAT)
    }
}

/// Poses from either a poses file or a pairs file. Each entry contributes
/// its `pose` field when present (null meaning a failed frame), otherwise
/// its `gt_pose`.
pub fn load_pose_list(text: &str) -> Result<Vec<Option<Pose>>> {
    let pick = |v: &Value| -> Result<Option<Pose>> {
        let field = if v.get("pose").is_some() { "pose" } else { "gt_pose" };
        match v.get(field) {
            None => Err(Error::Schema("entry has neither pose nor gt_pose".into())),
            Some(Value::Null) => Ok(None),
            Some(p) => Ok(Some(serde_json::from_value(p.clone())?)),
        }
    };
    if let Ok(doc) = serde_json::from_str::<Value>(text) {
        if doc.get("format").and_then(Value::as_str) == Some(POSES_FORMAT) {
            check_header(&doc, POSES_FORMAT)?;
            let entries = doc
                .get("entries")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Schema("poses file without entries".into()))?;
            return entries.iter().map(pick).collect();
        }
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Value = serde_json::from_str(l)?;
            check_header(&v, PAIR_FORMAT)?;
            pick(&v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRecord {
    /// `[outputs, inputs]`.
    pub shape: [usize; 2],
    /// Row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseRecord {
    fn from_dense(d: &Dense) -> Self {
        let (r, c) = d.weight.shape();
        let weight = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| d.weight[(i, j)]).collect();
        Self { shape: [r, c], weight, bias: d.bias.iter().copied().collect() }
    }

    fn to_dense(&self) -> Result<Dense> {
        let [r, c] = self.shape;
        if self.weight.len() != r * c || self.bias.len() != r {
            return Err(Error::ShapeMismatch(format!("dense layer data does not match shape {:?}", self.shape)));
        }
        Ok(Dense {
            weight: DMatrix::from_row_slice(r, c, &self.weight),
            bias: DVector::from_column_slice(&self.bias),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub layers: Vec<DenseRecord>,
    pub shortcut: Option<DenseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub blocks: Vec<BlockRecord>,
    pub projection: DenseRecord,
}

impl StreamRecord {
    fn from_stream(s: &StreamWeights) -> Self {
        Self {
            blocks: s
                .blocks
                .iter()
                .map(|b| BlockRecord {
                    layers: b.layers.iter().map(DenseRecord::from_dense).collect(),
                    shortcut: b.shortcut.as_ref().map(DenseRecord::from_dense),
                })
                .collect(),
            projection: DenseRecord::from_dense(&s.projection),
        }
    }

    fn to_stream(&self) -> Result<StreamWeights> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                Ok(Block {
                    layers: b.layers.iter().map(DenseRecord::to_dense).collect::<Result<_>>()?,
                    shortcut: b.shortcut.as_ref().map(DenseRecord::to_dense).transpose()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(StreamWeights { blocks, projection: self.projection.to_dense()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub version: String,
    pub config: EncoderConfig,
    pub parameter_count: usize,
    pub image: StreamRecord,
    pub map: StreamRecord,
}

impl WeightsFile {
    pub fn new(w: &EncoderWeights) -> Self {
        Self {
            format: WEIGHTS_FORMAT.into(),
            version: VERSION.into(),
            config: w.config,
            parameter_count: w.parameter_count(),
            image: StreamRecord::from_stream(&w.image),
            map: StreamRecord::from_stream(&w.map),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_checked(text, WEIGHTS_FORMAT)
    }

    pub fn weights(&self) -> Result<EncoderWeights> {
        let w = EncoderWeights { config: self.config, image: self.image.to_stream()?, map: self.map.to_stream()? };
        w.validate()?;
        if w.parameter_count() != self.parameter_count {
            return Err(Error::ShapeMismatch("parameter count header disagrees with the tensors".into()));
        }
        Ok(w)
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<EncoderWeights> {
    WeightsFile::parse(&read_text(path)?)?.weights()
}

pub fn save_weights(path: impl AsRef<Path>, w: &EncoderWeights) -> Result<()> {
    write_text(path, &to_json(&WeightsFile::new(w))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub format: String,
    pub version: String,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

impl SummaryFile {
    pub fn new(summary: EvalSummary) -> Self {
        Self { format: SUMMARY_FORMAT.into(), version: VERSION.into(), summary }
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_checked(text, SUMMARY_FORMAT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{synthesize_pair, FrameConfig};

    #[test]
    fn newer_major_is_rejected() {
        let doc = serde_json::json!({"format": MAP_FORMAT, "version": "2.0"});
        assert!(matches!(check_header(&doc, MAP_FORMAT), Err(Error::Schema(_))));
        let doc = serde_json::json!({"format": MAP_FORMAT, "version": "1.7"});
        assert!(check_header(&doc, MAP_FORMAT).is_ok());
        let doc = serde_json::json!({"format": POSES_FORMAT, "version": "1.0"});
        assert!(check_header(&doc, MAP_FORMAT).is_err());
    }

    #[test]
    fn pair_round_trip() {
        let tax = Taxonomy::default();
        let pair = synthesize_pair(&FrameConfig::default(), 5, &tax).unwrap();
        let text = pairs_to_jsonl(std::slice::from_ref(&pair)).unwrap();
        let back = parse_pairs(&text, &tax).unwrap();
        assert_eq!(back, vec![pair]);
    }

    #[test]
    fn weights_round_trip() {
        let cfg = EncoderConfig { blocks: 2, dim: 8, ..Default::default() };
        let w = EncoderWeights::init(cfg, 3).unwrap();
        let text = to_json(&WeightsFile::new(&w)).unwrap();
        assert_eq!(WeightsFile::parse(&text).unwrap().weights().unwrap(), w);
    }

    #[test]
    fn pose_list_prefers_estimate() {
        let est = PosesFile::new(
            "local",
            vec![
                PoseEntry { index: 0, pose: None, gt_pose: Some(Pose::identity()), error: None, diagnostics: None },
                PoseEntry {
                    index: 1,
                    pose: Some(Pose::identity()),
                    gt_pose: None,
                    error: None,
                    diagnostics: None,
                },
            ],
        );
        let list = load_pose_list(&to_json(&est).unwrap()).unwrap();
        assert_eq!(list, vec![None, Some(Pose::identity())]);
    }
}
