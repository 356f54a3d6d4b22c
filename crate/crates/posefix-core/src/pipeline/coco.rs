//! COCO keypoint file IO: ground-truth datasets
//! (`images`/`annotations`/`categories`) and detection results
//! (`[{image_id, category_id, keypoints, score}]`), bit-compatible with the
//! public formats.
//!
//! Ground-truth visibility flags must be exactly 0/1/2. Results may carry
//! arbitrary per-keypoint confidences in the `v` slot; anything positive is
//! treated as labeled. Result entries may also carry an optional `id`
//! giving the ground-truth annotation they refine, which `diagnose` uses
//! for exact matching; standard readers ignore the extra key.

use super::{BBox, PipelineError};
use crate::model::{InstanceContext, Keypoint, Pose, SkeletonSpec, Visibility};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    file_name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    keypoints: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_keypoints: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    keypoints: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skeleton: Option<Vec<[u32; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoGtFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CocoResult {
    image_id: u64,
    category_id: u64,
    keypoints: Vec<f64>,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
}

/// Image metadata from a ground-truth file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
}

/// One ground-truth person instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub id: u64,
    pub image_id: u64,
    pub pose: Pose,
    /// Annotated instance area in px^2 (bbox area when absent; keypoint
    /// extent as a last resort).
    pub area: f64,
    pub bbox: Option<BBox>,
    /// Crowd regions are kept but excluded from synthesis, diagnosis, and
    /// evaluation by default.
    pub iscrowd: bool,
    /// No labeled keypoints.
    pub degenerate: bool,
}

impl GtInstance {
    /// Instance scale `s = sqrt(area)`.
    pub fn scale(&self) -> f64 {
        self.area.max(f64::MIN_POSITIVE).sqrt()
    }

    /// Usable for synthesis/diagnosis/evaluation.
    pub fn usable(&self) -> bool {
        !self.iscrowd && !self.degenerate
    }
}

/// A parsed ground-truth keypoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct GtDataset {
    pub images: Vec<ImageInfo>,
    pub instances: Vec<GtInstance>,
}

fn pose_from_triplets(
    ann_id: u64,
    triplets: &[f64],
    k: usize,
    ground_truth: bool,
) -> Result<Pose, PipelineError> {
    if triplets.len() != 3 * k {
        return Err(PipelineError::Schema {
            annotation_id: ann_id,
            message: format!(
                "keypoints array has {} entries, expected {} (3 per joint)",
                triplets.len(),
                3 * k
            ),
        });
    }
    let mut keypoints = Vec::with_capacity(k);
    for j in 0..k {
        let (x, y, v) = (triplets[3 * j], triplets[3 * j + 1], triplets[3 * j + 2]);
        let visibility = if ground_truth {
            if v != 0.0 && v != 1.0 && v != 2.0 {
                return Err(PipelineError::Schema {
                    annotation_id: ann_id,
                    message: format!("joint {j} visibility {v} is not one of 0/1/2"),
                });
            }
            Visibility::from_coco(v as u8).unwrap()
        } else if v > 0.0 {
            Visibility::Visible
        } else {
            Visibility::NotLabeled
        };
        if visibility.is_labeled() && (!x.is_finite() || !y.is_finite()) {
            return Err(PipelineError::Schema {
                annotation_id: ann_id,
                message: format!("joint {j} has non-finite coordinates ({x}, {y})"),
            });
        }
        keypoints.push(Keypoint { x, y, visibility });
    }
    Ok(Pose::new(keypoints))
}

fn triplets_from_pose(pose: &Pose) -> Vec<f64> {
    let mut out = Vec::with_capacity(pose.keypoints.len() * 3);
    for kp in &pose.keypoints {
        if kp.is_labeled() {
            out.extend([kp.x, kp.y, kp.visibility.to_coco() as f64]);
        } else {
            out.extend([0.0, 0.0, 0.0]);
        }
    }
    out
}

fn keypoint_extent_area(pose: &Pose) -> f64 {
    let mut it = pose.keypoints.iter().filter_map(|k| k.position());
    let Some((x0, y0)) = it.next() else {
        return 0.0;
    };
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (x0, y0, x0, y0);
    for (x, y) in it {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    (max_x - min_x) * (max_y - min_y)
}

impl GtDataset {
    pub fn from_json_str(text: &str, spec: &SkeletonSpec) -> Result<Self, PipelineError> {
        let file: CocoGtFile = serde_json::from_str(text).map_err(|source| PipelineError::Json {
            path: "<string>".into(),
            source,
        })?;
        Self::from_file_struct(file, spec)
    }

    pub fn load(path: impl AsRef<Path>, spec: &SkeletonSpec) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: CocoGtFile = serde_json::from_str(&text).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_file_struct(file, spec)
    }

    fn from_file_struct(file: CocoGtFile, spec: &SkeletonSpec) -> Result<Self, PipelineError> {
        let k = spec.num_joints();
        if let Some(cat) = file.categories.first() {
            if let Some(names) = &cat.keypoints {
                if names.len() != k {
                    return Err(PipelineError::BadResults(format!(
                        "category {:?} declares {} keypoints but the skeleton has {}",
                        cat.name,
                        names.len(),
                        k
                    )));
                }
            }
        }
        let images = file
            .images
            .iter()
            .map(|im| ImageInfo {
                id: im.id,
                width: im.width,
                height: im.height,
            })
            .collect();
        let mut instances = Vec::with_capacity(file.annotations.len());
        for ann in &file.annotations {
            let pose = pose_from_triplets(ann.id, &ann.keypoints, k, true)?;
            let degenerate = pose.num_labeled() == 0
                || ann.num_keypoints == Some(0);
            let bbox = match ann.bbox {
                Some([x, y, w, h]) if w > 0.0 && h > 0.0 => Some(BBox { x, y, width: w, height: h }),
                _ => None,
            };
            let area = ann
                .area
                .filter(|a| *a > 0.0)
                .or_else(|| bbox.map(|b| b.area()))
                .unwrap_or_else(|| keypoint_extent_area(&pose));
            instances.push(GtInstance {
                id: ann.id,
                image_id: ann.image_id,
                pose,
                area,
                bbox,
                iscrowd: ann.iscrowd != 0,
                degenerate,
            });
        }
        Ok(GtDataset { images, instances })
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn instance(&self, id: u64) -> Option<&GtInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Instance context for one annotation: its pose as target, every other
    /// usable annotation in the same image as a neighbor, scale from the
    /// annotated area.
    pub fn context_for(&self, instance: &GtInstance) -> Result<InstanceContext, PipelineError> {
        let neighbors = self
            .instances
            .iter()
            .filter(|o| o.image_id == instance.image_id && o.id != instance.id && o.usable())
            .map(|o| o.pose.clone())
            .collect();
        let image = self
            .image(instance.image_id)
            .map(|im| (im.width, im.height))
            .unwrap_or((0, 0));
        InstanceContext::new(instance.pose.clone(), neighbors, instance.scale(), image).map_err(
            |e| PipelineError::Schema {
                annotation_id: instance.id,
                message: e.to_string(),
            },
        )
    }

    /// Serialize back to the COCO ground-truth JSON layout (single person
    /// category with the skeleton's joint names).
    pub fn to_json_string(&self, spec: &SkeletonSpec) -> String {
        let file = CocoGtFile {
            images: self
                .images
                .iter()
                .map(|im| CocoImage {
                    id: im.id,
                    width: im.width,
                    height: im.height,
                    file_name: None,
                })
                .collect(),
            annotations: self
                .instances
                .iter()
                .map(|inst| CocoAnnotation {
                    id: inst.id,
                    image_id: inst.image_id,
                    category_id: 1,
                    keypoints: triplets_from_pose(&inst.pose),
                    num_keypoints: Some(inst.pose.num_labeled() as u32),
                    area: Some(inst.area),
                    bbox: inst.bbox.map(|b| [b.x, b.y, b.width, b.height]),
                    iscrowd: inst.iscrowd as u8,
                })
                .collect(),
            categories: vec![CocoCategory {
                id: 1,
                name: "person".into(),
                keypoints: Some(spec.joint_names().to_vec()),
                skeleton: None,
            }],
        };
        serde_json::to_string(&file).expect("gt serialization cannot fail")
    }

    pub fn save(&self, path: impl AsRef<Path>, spec: &SkeletonSpec) -> Result<(), PipelineError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string(spec)).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// One detection from a results file. The pose carries the instance score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtInstance {
    pub image_id: u64,
    pub category_id: u64,
    pub pose: Pose,
    /// Ground-truth annotation this result refines, when the producer
    /// recorded it (our `synthesize`/`refine` outputs do).
    pub source_annotation_id: Option<u64>,
}

pub fn results_from_json_str(
    text: &str,
    spec: &SkeletonSpec,
) -> Result<Vec<DtInstance>, PipelineError> {
    let raw: Vec<CocoResult> = serde_json::from_str(text).map_err(|source| PipelineError::Json {
        path: "<string>".into(),
        source,
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut pose =
                pose_from_triplets(r.id.unwrap_or(i as u64), &r.keypoints, spec.num_joints(), false)?;
            pose.score = Some(r.score);
            Ok(DtInstance {
                image_id: r.image_id,
                category_id: r.category_id,
                pose,
                source_annotation_id: r.id,
            })
        })
        .collect()
}

pub fn load_coco_results(
    path: impl AsRef<Path>,
    spec: &SkeletonSpec,
) -> Result<Vec<DtInstance>, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    results_from_json_str(&text, spec).map_err(|e| match e {
        PipelineError::Json { source, .. } => PipelineError::Json {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn results_to_json_string(dts: &[DtInstance]) -> String {
    let raw: Vec<CocoResult> = dts
        .iter()
        .map(|d| CocoResult {
            image_id: d.image_id,
            category_id: d.category_id,
            keypoints: triplets_from_pose(&d.pose),
            score: d.pose.score.unwrap_or(1.0),
            id: d.source_annotation_id,
        })
        .collect();
    serde_json::to_string(&raw).expect("results serialization cannot fail")
}

pub fn save_coco_results(dts: &[DtInstance], path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let path = path.as_ref();
    std::fs::write(path, results_to_json_string(dts)).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}
