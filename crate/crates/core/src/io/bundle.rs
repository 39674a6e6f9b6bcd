use std::fmt::Write as _;
use std::path::Path;

use super::trajectory::{parse_f64, parse_pose, write_pose};
use super::{read_text, write_atomic, IoError};
use crate::reloc::Bundle;

/// A bundle together with the frame id of each of its poses.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleFile {
    pub frame_ids: Vec<String>,
    pub bundle: Bundle,
}

/// Lines of `frame_id tx ty tz qx qy qz qw e1 .. eD`; poses are local
/// odometry, the values form the localization query. `#` starts a comment.
pub fn parse_bundle(text: &str) -> Result<BundleFile, IoError> {
    let mut ids = Vec::new();
    let mut poses = Vec::new();
    let mut queries: Vec<Vec<f32>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.len() < 9 {
            return Err(IoError::Line {
                line,
                msg: format!("expected frame_id, 7 pose values and at least one embedding value, found {} fields", toks.len()),
            });
        }
        let pose = parse_pose(&toks[1..8], line)?;
        let q = toks[8..]
            .iter()
            .map(|t| parse_f64(t, "embedding", line).map(|v| v as f32))
            .collect::<Result<Vec<f32>, _>>()?;
        if let Some(first) = queries.first() {
            if first.len() != q.len() {
                return Err(IoError::Line {
                    line,
                    msg: format!("embedding has {} values, earlier rows have {}", q.len(), first.len()),
                });
            }
        }
        ids.push(toks[0].to_string());
        poses.push(pose);
        queries.push(q);
    }
    if poses.is_empty() {
        return Err(IoError::format("bundle file holds no poses"));
    }
    let bundle = Bundle::new(poses, queries).map_err(|e| IoError::format(e.to_string()))?;
    Ok(BundleFile { frame_ids: ids, bundle })
}

pub fn load_bundle(path: &Path) -> Result<BundleFile, IoError> {
    parse_bundle(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn write_bundle(file: &BundleFile) -> String {
    let mut out = String::from("# frame_id tx ty tz qx qy qz qw embedding...\n");
    for ((id, pose), q) in file.frame_ids.iter().zip(file.bundle.poses()).zip(file.bundle.queries()) {
        let _ = write!(out, "{id} ");
        write_pose(&mut out, pose);
        for v in q {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_bundle(path: &Path, file: &BundleFile) -> Result<(), IoError> {
    write_atomic(path, write_bundle(file).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Pose;
    use nalgebra::Vector3;

    #[test]
    fn round_trip() {
        let poses = vec![Pose::identity(), Pose::looking(Vector3::new(0.5, 0.0, 0.1), 0.2, 0.0, 0.0)];
        let file = BundleFile {
            frame_ids: vec!["a".into(), "b".into()],
            bundle: Bundle::new(poses, vec![vec![0.5, -0.25], vec![1.0, 0.0]]).unwrap(),
        };
        let back = parse_bundle(&write_bundle(&file)).unwrap();
        assert_eq!(back.frame_ids, file.frame_ids);
        assert_eq!(back.bundle.queries(), file.bundle.queries());
        assert!((back.bundle.poses()[1].translation - file.bundle.poses()[1].translation).norm() < 1e-12);
    }

    #[test]
    fn malformed_lines_are_reported() {
        assert!(matches!(parse_bundle("a 0 0 0 0 0 0 1\n"), Err(IoError::Line { line: 1, .. })));
        let text = "a 0 0 0 0 0 0 1 1 2\n# c\nb 0 0 0 0 0 0 1 1\n";
        assert!(matches!(parse_bundle(text), Err(IoError::Line { line: 3, .. })));
        assert!(matches!(parse_bundle("a 0 0 0 0 0 0 1 zz\n"), Err(IoError::Line { line: 1, .. })));
        assert!(parse_bundle("# nothing\n").is_err());
    }
}
