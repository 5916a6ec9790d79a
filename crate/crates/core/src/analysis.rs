//! Trajectory diagnostics: when each goal coordinate is reached and held,
//! how axis-by-axis a path is, and its taxicab versus Euclidean length.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Everything that happened in one episode, positions included for the
/// initial state (so position lists are one longer than the step lists).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub goal: Vec3,
    pub gripper_positions: Vec<Vec3>,
    pub object_positions: Vec<Vec3>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub success_flags: Vec<bool>,
}

impl EpisodeTrace {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        let check = |context: &'static str, actual: usize, expected: usize| {
            if actual == expected {
                Ok(())
            } else {
                Err(Error::Shape {
                    context,
                    expected,
                    actual,
                })
            }
        };
        check("trace gripper positions", self.gripper_positions.len(), t + 1)?;
        check("trace object positions", self.object_positions.len(), t + 1)?;
        check("trace rewards", self.rewards.len(), t)?;
        check("trace success flags", self.success_flags.len(), t)?;
        Ok(())
    }

    pub fn positions(&self, subject: Subject) -> &[Vec3] {
        match subject {
            Subject::Gripper => &self.gripper_positions,
            Subject::Object => &self.object_positions,
        }
    }

    /// Whether the last step ended in success; false for an empty trace.
    pub fn final_success(&self) -> bool {
        self.success_flags.last().copied().unwrap_or(false)
    }
}

/// Which body a diagnostic follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    #[default]
    Gripper,
    Object,
}

/// For each axis, the first step from which the coordinate stays within `tol`
/// of the goal until the end of the trace. `None` if it is not within `tol` at
/// the final position.
pub fn axis_attainment(trace: &EpisodeTrace, tol: f64, subject: Subject) -> [Option<usize>; 3] {
    let positions = trace.positions(subject);
    let mut out = [None; 3];
    for (axis, slot) in out.iter_mut().enumerate() {
        let goal = trace.goal[axis];
        let held = positions
            .iter()
            .rev()
            .take_while(|p| (p[axis] - goal).abs() <= tol)
            .count();
        if held > 0 {
            *slot = Some(positions.len() - held);
        }
    }
    out
}

fn deltas(positions: &[Vec3]) -> impl Iterator<Item = Vec3> + '_ {
    positions.windows(2).map(|w| (w[1] - w[0]).abs())
}

/// Ratio of the per-step largest axis motion to the per-step total axis
/// motion, summed over the trace. 1 for axis-aligned staircases, 1/3 for pure
/// body diagonals; `None` when nothing moved.
pub fn sequentiality_index(trace: &EpisodeTrace, subject: Subject) -> Option<f64> {
    let (num, den) = deltas(trace.positions(subject))
        .fold((0.0, 0.0), |(n, d), v| (n + v.linf(), d + v.l1()));
    (den > 0.0).then(|| num / den)
}

/// `(taxicab, euclidean)` path length.
pub fn path_lengths(trace: &EpisodeTrace, subject: Subject) -> (f64, f64) {
    trace
        .positions(subject)
        .windows(2)
        .fold((0.0, 0.0), |(l1, l2), w| {
            let d = w[1] - w[0];
            (l1 + d.l1(), l2 + d.norm())
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub subject: Subject,
    pub attainment_tolerance: f64,
    pub attainment_steps: [Option<usize>; 3],
    pub sequentiality_index: Option<f64>,
    pub l1_path_length: f64,
    pub l2_path_length: f64,
    pub final_object_goal_distance: f64,
    pub success: bool,
}

pub fn report(trace: &EpisodeTrace, tol: f64, subject: Subject) -> TrajectoryReport {
    let (l1, l2) = path_lengths(trace, subject);
    let final_object = trace.object_positions.last().copied().unwrap_or_default();
    TrajectoryReport {
        subject,
        attainment_tolerance: tol,
        attainment_steps: axis_attainment(trace, tol, subject),
        sequentiality_index: sequentiality_index(trace, subject),
        l1_path_length: l1,
        l2_path_length: l2,
        final_object_goal_distance: final_object.distance(trace.goal),
        success: trace.final_success(),
    }
}

pub const TRACE_HEADER: &str = "step,gx,gy,gz,ox,oy,oz,ax,ay,az,agrip,reward,success";

/// Renders the trace CSV: a `# goal,x,y,z` comment, the header, then one row
/// per position. Row 0 is the initial state with empty action fields; row `t`
/// carries the action, reward and success flag of the step that produced it.
pub fn trace_to_csv(trace: &EpisodeTrace) -> Result<String> {
    trace.validate()?;
    let mut out = String::new();
    let g = trace.goal;
    let _ = writeln!(out, "# goal,{},{},{}", g.x, g.y, g.z);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for t in 0..trace.gripper_positions.len() {
        let p = trace.gripper_positions[t];
        let o = trace.object_positions[t];
        let _ = write!(out, "{t},{},{},{},{},{},{}", p.x, p.y, p.z, o.x, o.y, o.z);
        if t == 0 {
            out.push_str(",,,,,,\n");
        } else {
            let a = trace.actions[t - 1];
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{}",
                a.dx,
                a.dy,
                a.dz,
                a.grip,
                trace.rewards[t - 1],
                u8::from(trace.success_flags[t - 1])
            );
        }
    }
    Ok(out)
}

pub fn trace_from_csv(text: &str, origin: &Path) -> Result<EpisodeTrace> {
    let fail = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let num = |line: usize, s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| fail(line, format!("bad number `{s}`: {e}")))
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, goal_line) = lines.next().ok_or_else(|| fail(1, "empty file".into()))?;
    let goal_fields: Vec<&str> = goal_line
        .strip_prefix("# goal,")
        .ok_or_else(|| fail(n, "expected `# goal,<x>,<y>,<z>`".into()))?
        .split(',')
        .collect();
    if goal_fields.len() != 3 {
        return Err(fail(n, "goal needs three coordinates".into()));
    }
    let goal = Vec3::new(num(n, goal_fields[0])?, num(n, goal_fields[1])?, num(n, goal_fields[2])?);
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        Some((n, _)) => return Err(fail(n, format!("expected header `{TRACE_HEADER}`"))),
        None => return Err(fail(2, "missing header".into())),
    }
    let mut trace = EpisodeTrace {
        goal,
        gripper_positions: Vec::new(),
        object_positions: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        success_flags: Vec::new(),
    };
    for (n, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(fail(n, format!("expected 13 fields, got {}", f.len())));
        }
        let row = trace.gripper_positions.len();
        if f[0].trim() != row.to_string() {
            return Err(fail(n, format!("expected step {row}, got `{}`", f[0])));
        }
        let v = |i: usize| num(n, f[i]);
        trace.gripper_positions.push(Vec3::new(v(1)?, v(2)?, v(3)?));
        trace.object_positions.push(Vec3::new(v(4)?, v(5)?, v(6)?));
        if row == 0 {
            if f[7..].iter().any(|s| !s.trim().is_empty()) {
                return Err(fail(n, "initial row must have empty action fields".into()));
            }
            continue;
        }
        trace.actions.push(Action::new(v(7)?, v(8)?, v(9)?, v(10)?));
        trace.rewards.push(v(11)?);
        trace.success_flags.push(match f[12].trim() {
            "1" => true,
            "0" => false,
            other => return Err(fail(n, format!("success must be 0 or 1, got `{other}`"))),
        });
    }
    if trace.gripper_positions.is_empty() {
        return Err(fail(3, "no data rows".into()));
    }
    Ok(trace)
}

pub fn export_trace(trace: &EpisodeTrace, path: &Path) -> Result<()> {
    fs::write(path, trace_to_csv(trace)?).map_err(|e| Error::io(path, e))
}

pub fn import_trace(path: &Path) -> Result<EpisodeTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trace_from_csv(&text, path)
}
