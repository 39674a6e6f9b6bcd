use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use super::{read_text, write_atomic, IoError};
use crate::builder::Frame;
use crate::grid::{unit_quaternion, Pose};

/// Largest accepted deviation of a quaternion's norm from 1.
const QUAT_NORM_TOL: f64 = 1e-3;

fn line_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Line { line, msg: msg.into() }
}

pub(crate) fn parse_f64(tok: &str, what: &str, line: usize) -> Result<f64, IoError> {
    let v: f64 = tok.parse().map_err(|_| line_err(line, format!("{what}: cannot parse '{tok}' as a number")))?;
    if !v.is_finite() {
        return Err(line_err(line, format!("{what}: value '{tok}' is not finite")));
    }
    Ok(v)
}

/// Pose from `tx ty tz qx qy qz qw` tokens.
pub(crate) fn parse_pose(toks: &[&str], line: usize) -> Result<Pose, IoError> {
    const NAMES: [&str; 7] = ["tx", "ty", "tz", "qx", "qy", "qz", "qw"];
    let mut v = [0.0; 7];
    for (i, tok) in toks.iter().take(7).enumerate() {
        v[i] = parse_f64(tok, NAMES[i], line)?;
    }
    let q = Quaternion::new(v[6], v[3], v[4], v[5]);
    let n = q.norm();
    if (n - 1.0).abs() > QUAT_NORM_TOL {
        return Err(line_err(line, format!("quaternion norm {n:.6} deviates from 1 by more than {QUAT_NORM_TOL}")));
    }
    Ok(Pose::from_quaternion(&unit_quaternion(q), Vector3::new(v[0], v[1], v[2])))
}

pub(crate) fn write_pose(out: &mut String, pose: &Pose) {
    let q = pose.to_quaternion();
    let t = pose.translation;
    let _ = write!(out, "{} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w);
}

/// Lines of `timestamp tx ty tz qx qy qz qw frame_id`; `#` starts a comment.
pub fn parse_trajectory(text: &str) -> Result<Vec<Frame>, IoError> {
    let mut frames: Vec<Frame> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.len() != 9 {
            return Err(line_err(
                line,
                format!("expected 9 fields (timestamp tx ty tz qx qy qz qw frame_id), found {}", toks.len()),
            ));
        }
        let timestamp = parse_f64(toks[0], "timestamp", line)?;
        if let Some(prev) = frames.last() {
            if timestamp < prev.timestamp {
                return Err(line_err(
                    line,
                    format!("timestamp {timestamp} is earlier than the previous frame's {}", prev.timestamp),
                ));
            }
        }
        let pose = parse_pose(&toks[1..8], line)?;
        frames.push(Frame::new(timestamp, pose, toks[8]));
    }
    Ok(frames)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<Frame>, IoError> {
    parse_trajectory(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn write_trajectory(frames: &[Frame]) -> Result<String, IoError> {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw frame_id\n");
    for f in frames {
        if f.frame_id.is_empty() || f.frame_id.contains(char::is_whitespace) || f.frame_id.contains('#') {
            return Err(IoError::format(format!("frame id '{}' cannot be written to a trajectory", f.frame_id)));
        }
        let _ = write!(out, "{} ", f.timestamp);
        write_pose(&mut out, &f.pose);
        let _ = writeln!(out, " {}", f.frame_id);
    }
    Ok(out)
}

pub fn save_trajectory(path: &Path, frames: &[Frame]) -> Result<(), IoError> {
    write_atomic(path, write_trajectory(frames)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_line() {
        let f = parse_trajectory("0.0 0 0 0 0 0 0 1 img0\n").unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].pose, Pose::identity());
        assert_eq!(f[0].frame_id, "img0");
    }

    #[test]
    fn comments_only() {
        assert!(parse_trajectory("# header\n\n   # more\n").unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "# c\n0 0 0 0 0 0 0 1 a\n1 0 0 0 0 0 0 1\n";
        assert!(matches!(parse_trajectory(text), Err(IoError::Line { line: 3, .. })));
        let text = "1 0 0 0 0 0 0 1 a\n0.5 0 0 0 0 0 0 1 b\n";
        assert!(matches!(parse_trajectory(text), Err(IoError::Line { line: 2, .. })));
        let text = "0 0 0 0 0 0 0 1.01 a\n";
        assert!(matches!(parse_trajectory(text), Err(IoError::Line { line: 1, .. })));
        let text = "0 0 0 x 0 0 0 1 a\n";
        assert!(matches!(parse_trajectory(text), Err(IoError::Line { line: 1, .. })));
        assert!(parse_trajectory("0 0 0 0 0 0 0 1.0005 a # fine\n").is_ok());
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames: Vec<Frame> = (0..100)
            .map(|i| {
                let pose = Pose::looking(
                    Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)),
                    rng.random_range(-3.1..3.1),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-3.0..3.0),
                );
                Frame::new(i as f64 * 0.033 + rng.random_range(0.0..0.01), pose, format!("img{i}"))
            })
            .collect();
        let back = parse_trajectory(&write_trajectory(&frames).unwrap()).unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in back.iter().zip(&frames) {
            assert_eq!(a, b);
        }
    }
}
