//! On-disk formats: scene and estimate JSON documents, and line-oriented
//! cloud, segmentation and fields files.
//!
//! Text files start with a `# articukit-<kind> v1` header; numbers are
//! written in shortest round-trip form so reading back is exact.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::clustering::PartSegmentation;
use crate::error::{Error, Result};
use crate::kinematics::{JointParams, JointType, Vec3};
use crate::scene::{ArticulatedObject, LabeledCloud, ObjectSpec, PerPointFields, Semantic};
use crate::voting::JointEstimate;

pub const FORMAT_VERSION: u32 = 1;

/// Scene document: the object spec plus the joint state of each part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub spec: ObjectSpec,
    /// Joint state per part id; parts left out stay at their lower limit.
    #[serde(default)]
    pub joint_states: BTreeMap<u32, f64>,
}

impl SceneFile {
    pub fn from_object(obj: &ArticulatedObject) -> Result<Self> {
        let joint_states =
            obj.parts().iter().map(|p| Ok((p.part_id, obj.joint_state(p.part_id)?))).collect::<Result<_>>()?;
        Ok(Self { format_version: FORMAT_VERSION, spec: obj.spec().clone(), joint_states })
    }

    pub fn build(&self) -> Result<ArticulatedObject> {
        check_version("scene", self.format_version)?;
        let mut obj = ArticulatedObject::build(self.spec.clone())?;
        for (&id, &state) in &self.joint_states {
            obj.set_joint_state(id, state)?;
        }
        Ok(obj)
    }
}

fn check_version(kind: &str, v: u32) -> Result<()> {
    if v == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::Validation(format!("unsupported {kind} format_version {v}, expected {FORMAT_VERSION}")))
    }
}

pub fn write_scene(obj: &ArticulatedObject) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SceneFile::from_object(obj)?)?)
}

pub fn read_scene(text: &str) -> Result<ArticulatedObject> {
    serde_json::from_str::<SceneFile>(text)?.build()
}

/// Estimate document of one predicted part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub part_id: i32,
    pub joint_type: JointType,
    pub axis_dir: Vec3,
    pub origin: Vec3,
    pub support: usize,
    pub dispersion: f64,
    pub origin_rms: f64,
}

impl EstimateRecord {
    pub fn new(part_id: i32, e: &JointEstimate) -> Self {
        Self {
            part_id,
            joint_type: e.params.joint_type,
            axis_dir: e.params.axis_dir,
            origin: e.params.origin,
            support: e.support,
            dispersion: e.direction_dispersion,
            origin_rms: e.origin_rms,
        }
    }

    pub fn estimate(&self) -> Result<JointEstimate> {
        Ok(JointEstimate {
            params: JointParams::new(self.axis_dir, self.origin, self.joint_type)?,
            support: self.support,
            direction_dispersion: self.dispersion,
            origin_rms: self.origin_rms,
        })
    }
}

/// `(1-based line number, line)`.
type NumberedLine = (usize, String);

/// Reads data lines after checking the header. Blank lines are skipped.
fn data_lines<R: BufRead>(reader: R, magic: &str) -> Result<(Option<usize>, Vec<NumberedLine>)> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    };
    let mut words = header.split_whitespace();
    if words.next() != Some("#") || words.next() != Some(magic) || words.next() != Some("v1") {
        return Err(Error::Parse { line: 1, message: format!("expected header '# {magic} v1', got '{header}'") });
    }
    let mut count = None;
    for w in words {
        match w.strip_prefix("N=") {
            Some(n) => {
                count = Some(n.parse().map_err(|_| Error::Parse { line: 1, message: format!("bad count '{w}'") })?);
            }
            None => return Err(Error::Parse { line: 1, message: format!("unexpected header field '{w}'") }),
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 2, line));
        }
    }
    if let Some(n) = count {
        if n != out.len() {
            return Err(Error::Parse { line: 1, message: format!("header declares N={n} but {} records follow", out.len()) });
        }
    }
    Ok((count, out))
}

fn fields<const K: usize>(line_no: usize, line: &str) -> Result<[&str; K]> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    parts
        .try_into()
        .map_err(|p: Vec<&str>| Error::Parse { line: line_no, message: format!("expected {K} fields, got {}", p.len()) })
}

fn num<T: std::str::FromStr>(line_no: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { line: line_no, message: format!("bad {what} '{s}'") })
}

fn real(line_no: usize, s: &str) -> Result<f64> {
    let v: f64 = num(line_no, s, "number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse { line: line_no, message: format!("non-finite number '{s}'") })
    }
}

fn semantic(line_no: usize, s: &str) -> Result<Semantic> {
    Semantic::from_index(num(line_no, s, "semantic")?)
        .ok_or_else(|| Error::Parse { line: line_no, message: format!("semantic must be 0, 1 or 2, got '{s}'") })
}

fn vec3(line_no: usize, xyz: &[&str]) -> Result<Vec3> {
    Ok(Vec3::new(real(line_no, xyz[0])?, real(line_no, xyz[1])?, real(line_no, xyz[2])?))
}

/// `x y z part_id semantic` per point.
pub fn write_cloud<W: Write>(cloud: &LabeledCloud, mut w: W) -> Result<()> {
    cloud.validate()?;
    writeln!(w, "# articukit-cloud v1 N={}", cloud.len())?;
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        writeln!(w, "{} {} {} {} {}", p.x, p.y, p.z, cloud.part_id[i], cloud.semantic[i].index())?;
    }
    Ok(())
}

pub fn read_cloud<R: BufRead>(r: R) -> Result<LabeledCloud> {
    let (_, lines) = data_lines(r, "articukit-cloud")?;
    let mut cloud = LabeledCloud::default();
    for (n, line) in &lines {
        let f: [&str; 5] = fields(*n, line)?;
        cloud.points.push(vec3(*n, &f[..3])?);
        cloud.part_id.push(num(*n, f[3], "part_id")?);
        cloud.semantic.push(semantic(*n, f[4])?);
    }
    Ok(cloud)
}

/// `index cluster_id semantic` per point.
pub fn write_seg<W: Write>(seg: &PartSegmentation, mut w: W) -> Result<()> {
    if seg.cluster_id.len() != seg.semantic.len() {
        return Err(Error::Validation("segmentation arrays have mismatched lengths".into()));
    }
    writeln!(w, "# articukit-seg v1")?;
    for (i, (c, s)) in seg.cluster_id.iter().zip(&seg.semantic).enumerate() {
        writeln!(w, "{i} {c} {}", s.index())?;
    }
    Ok(())
}

pub fn read_seg<R: BufRead>(r: R) -> Result<PartSegmentation> {
    let (_, lines) = data_lines(r, "articukit-seg")?;
    let mut seg = PartSegmentation::default();
    for (expected, (n, line)) in lines.iter().enumerate() {
        let f: [&str; 3] = fields(*n, line)?;
        let index: usize = num(*n, f[0], "index")?;
        if index != expected {
            return Err(Error::Parse { line: *n, message: format!("expected index {expected}, got {index}") });
        }
        let c: i32 = num(*n, f[1], "cluster_id")?;
        if c < -1 {
            return Err(Error::Parse { line: *n, message: format!("cluster_id must be >= -1, got {c}") });
        }
        seg.cluster_id.push(c);
        seg.semantic.push(semantic(*n, f[2])?);
    }
    Ok(seg)
}

/// `p_static p_revolute p_prismatic ox oy oz vx vy vz dx dy dz` per point.
pub fn write_fields<W: Write>(fields: &PerPointFields, mut w: W) -> Result<()> {
    fields.validate()?;
    writeln!(w, "# articukit-fields v1 N={}", fields.len())?;
    for i in 0..fields.len() {
        let [a, b, c] = fields.class_probs[i];
        let (o, v, d) = (fields.offset[i], fields.projection[i], fields.axis_dir[i]);
        writeln!(w, "{a} {b} {c} {} {} {} {} {} {} {} {} {}", o.x, o.y, o.z, v.x, v.y, v.z, d.x, d.y, d.z)?;
    }
    Ok(())
}

pub fn read_fields<R: BufRead>(r: R) -> Result<PerPointFields> {
    let (_, lines) = data_lines(r, "articukit-fields")?;
    let mut out = PerPointFields::default();
    for (n, line) in &lines {
        let f: [&str; 12] = fields(*n, line)?;
        out.class_probs.push([real(*n, f[0])?, real(*n, f[1])?, real(*n, f[2])?]);
        out.offset.push(vec3(*n, &f[3..6])?);
        out.projection.push(vec3(*n, &f[6..9])?);
        out.axis_dir.push(vec3(*n, &f[9..12])?);
    }
    out.validate().map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::SceneRecipe;
    use crate::scene::{corrupt_fields, ground_truth_fields, sample_cloud, NoiseModel};

    fn object() -> ArticulatedObject {
        SceneRecipe::default().random_object(11, 3).unwrap()
    }

    #[test]
    fn scene_round_trip_keeps_states() {
        let obj = object();
        let text = write_scene(&obj).unwrap();
        assert!(text.contains("\"format_version\": 1"));
        assert!(text.contains("\"static_shape\""));
        assert_eq!(read_scene(&text).unwrap(), obj);

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["format_version"] = 2.into();
        assert!(read_scene(&doc.to_string()).is_err());
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc.as_object_mut().unwrap().remove("joint_states");
        let closed = read_scene(&doc.to_string()).unwrap();
        assert!(closed.parts().iter().all(|p| closed.joint_state(p.part_id).unwrap() == p.state_range[0]));
    }

    #[test]
    fn cloud_round_trip_is_exact() {
        let cloud = sample_cloud(&object(), 300, 2).unwrap();
        let mut buf = Vec::new();
        write_cloud(&cloud, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# articukit-cloud v1 N=300\n"));
        let back = read_cloud(buf.as_slice()).unwrap();
        assert_eq!(back.points, cloud.points);
        assert_eq!(back.part_id, cloud.part_id);
        assert_eq!(back.semantic, cloud.semantic);
        assert!(back.normals.is_none());
    }

    #[test]
    fn cloud_parse_errors_carry_line_numbers() {
        let err = |text: &str| match read_cloud(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        };
        assert_eq!(err(""), 1);
        assert_eq!(err("# articukit-seg v1\n"), 1);
        assert_eq!(err("# articukit-cloud v1 N=2\n0 0 0 1 1\n"), 1);
        assert_eq!(err("# articukit-cloud v1 N=2\n0 0 0 1 1\n0 0 x 1 1\n"), 3);
        assert_eq!(err("# articukit-cloud v1\n0 0 0 1 1\n\n0 0 0 1 7\n"), 4);
        assert_eq!(err("# articukit-cloud v1\n0 0 0 1\n"), 2);
        assert_eq!(err("# articukit-cloud v1\n0 0 NaN 1 1\n"), 2);
        assert_eq!(err("# articukit-cloud v1\n0 0 0 -1 1\n"), 2);
    }

    #[test]
    fn seg_round_trip() {
        let seg = PartSegmentation {
            cluster_id: vec![-1, 0, 0, 1, -1],
            semantic: vec![Semantic::Static, Semantic::Revolute, Semantic::Revolute, Semantic::Prismatic, Semantic::Revolute],
        };
        let mut buf = Vec::new();
        write_seg(&seg, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("# articukit-seg v1\n0 -1 0\n1 0 1\n"));
        assert_eq!(read_seg(buf.as_slice()).unwrap(), seg);
        assert!(matches!(read_seg("# articukit-seg v1\n0 0 1\n2 0 1\n".as_bytes()), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(read_seg("# articukit-seg v1\n0 -2 1\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn fields_round_trip_is_exact() {
        let obj = object();
        let cloud = sample_cloud(&obj, 200, 3).unwrap();
        let gt = ground_truth_fields(&cloud, &obj).unwrap();
        let noisy = corrupt_fields(&gt, &NoiseModel { offset_sigma: 0.01, axis_dir_sigma: 0.05, ..Default::default() })
            .unwrap()
            .fields;
        let mut buf = Vec::new();
        write_fields(&noisy, &mut buf).unwrap();
        assert_eq!(read_fields(buf.as_slice()).unwrap(), noisy);
        assert!(read_fields("# articukit-fields v1\n1 0 0 0 0 0 0 0 0 0 0 1 5\n".as_bytes()).is_err());
    }

    #[test]
    fn estimate_record_shape() {
        let e = JointEstimate {
            params: JointParams::revolute(Vec3::z(), Vec3::new(0.1, 0.2, 0.0)).unwrap(),
            support: 42,
            direction_dispersion: 0.01,
            origin_rms: 0.002,
        };
        let rec = EstimateRecord::new(3, &e);
        let v = serde_json::to_value(rec).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["axis_dir", "dispersion", "joint_type", "origin", "origin_rms", "part_id", "support"]);
        assert_eq!(v["joint_type"], "revolute");
        assert_eq!(rec.estimate().unwrap(), e);
        let back: EstimateRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }
}
