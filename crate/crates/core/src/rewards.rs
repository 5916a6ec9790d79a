//! The four reward functions compared in the study.
//!
//! Every reward is a sparse base term (living cost, or the success reward once
//! the achieved goal is within `success_threshold` of the desired goal) minus
//! an optional shaping penalty on the *gripper's* offset from the desired
//! goal. All of them are pure functions of the post-step outcome, so hindsight
//! relabeling can recompute them under any substituted goal.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardKind {
    Vanilla,
    PrioritizedZ,
    PrioritizedXyz,
    Manhattan,
}

impl RewardKind {
    pub const ALL: [RewardKind; 4] = [
        RewardKind::Vanilla,
        RewardKind::PrioritizedZ,
        RewardKind::PrioritizedXyz,
        RewardKind::Manhattan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Vanilla => "vanilla",
            RewardKind::PrioritizedZ => "prioritized_z",
            RewardKind::PrioritizedXyz => "prioritized_xyz",
            RewardKind::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RewardKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "reward.kind `{s}` is not one of vanilla, prioritized_z, prioritized_xyz, manhattan"
                ))
            })
    }
}

/// Kind-specific shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shaping {
    Vanilla,
    /// Linear penalty on the vertical offset only.
    PrioritizedZ { w_z: f64 },
    /// Per-axis linear penalty, weights in x, y, z order.
    PrioritizedXyz { weights: Vec3 },
    /// Constant per-axis penalty while that axis is misaligned by more than
    /// `tolerance`.
    Manhattan { penalties: Vec3, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRewardSpec", into = "RawRewardSpec")]
pub struct RewardSpec {
    pub living_cost: f64,
    pub success_reward: f64,
    pub success_threshold: f64,
    pub shaping: Shaping,
}

impl RewardSpec {
    /// Defaults for `kind`: living cost -1, success +1, threshold 0.05, and
    /// shaping weights 10 (z only), 10/5/1, or penalties 5/2.5/1 with
    /// tolerance 0.01.
    pub fn new(kind: RewardKind) -> Self {
        let shaping = match kind {
            RewardKind::Vanilla => Shaping::Vanilla,
            RewardKind::PrioritizedZ => Shaping::PrioritizedZ { w_z: 10.0 },
            RewardKind::PrioritizedXyz => Shaping::PrioritizedXyz {
                weights: Vec3::new(10.0, 5.0, 1.0),
            },
            RewardKind::Manhattan => Shaping::Manhattan {
                penalties: Vec3::new(5.0, 2.5, 1.0),
                tolerance: 0.01,
            },
        };
        RewardSpec {
            living_cost: -1.0,
            success_reward: 1.0,
            success_threshold: 0.05,
            shaping,
        }
    }

    pub fn kind(&self) -> RewardKind {
        match self.shaping {
            Shaping::Vanilla => RewardKind::Vanilla,
            Shaping::PrioritizedZ { .. } => RewardKind::PrioritizedZ,
            Shaping::PrioritizedXyz { .. } => RewardKind::PrioritizedXyz,
            Shaping::Manhattan { .. } => RewardKind::Manhattan,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.success_threshold.is_finite() && self.success_threshold > 0.0) {
            return bad(format!(
                "reward.success_threshold must be positive, got {}",
                self.success_threshold
            ));
        }
        if !(self.living_cost.is_finite() && self.success_reward.is_finite()) {
            return bad("reward.living_cost and reward.success_reward must be finite".into());
        }
        let nonneg = |name: &str, v: Vec3| {
            if v.is_finite() && v.x >= 0.0 && v.y >= 0.0 && v.z >= 0.0 {
                Ok(())
            } else {
                bad(format!("reward.{name} must be non-negative, got {v:?}"))
            }
        };
        match self.shaping {
            Shaping::Vanilla => Ok(()),
            Shaping::PrioritizedZ { w_z } => nonneg("w_z", Vec3::new(0.0, 0.0, w_z)),
            Shaping::PrioritizedXyz { weights } => nonneg("weights", weights),
            Shaping::Manhattan {
                penalties,
                tolerance,
            } => {
                nonneg("penalties", penalties)?;
                if tolerance.is_finite() && tolerance > 0.0 {
                    Ok(())
                } else {
                    bad(format!(
                        "reward.alignment_tolerance must be positive, got {tolerance}"
                    ))
                }
            }
        }
    }

    /// Lowest and highest single-step reward, used to clip critic targets.
    pub fn sparse_bounds(&self) -> (f64, f64) {
        (self.living_cost, self.success_reward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInput {
    pub gripper_pos: Vec3,
    pub achieved_goal: Vec3,
    pub desired_goal: Vec3,
}

/// Inclusive L2 success test.
pub fn is_success(achieved: Vec3, desired: Vec3, threshold: f64) -> bool {
    achieved.distance(desired) <= threshold
}

/// Non-negative shaping penalty for a gripper offset `delta = gripper - goal`.
pub fn shaping_penalty(shaping: &Shaping, delta: Vec3) -> f64 {
    let d = delta.abs();
    match *shaping {
        Shaping::Vanilla => 0.0,
        Shaping::PrioritizedZ { w_z } => w_z * d.z,
        Shaping::PrioritizedXyz { weights: w } => w.x * d.x + w.y * d.y + w.z * d.z,
        Shaping::Manhattan {
            penalties: p,
            tolerance,
        } => {
            let on = |off: f64, penalty: f64| if off > tolerance { penalty } else { 0.0 };
            on(d.x, p.x) + on(d.y, p.y) + on(d.z, p.z)
        }
    }
}

pub fn compute(spec: &RewardSpec, input: &RewardInput) -> f64 {
    let base = if is_success(input.achieved_goal, input.desired_goal, spec.success_threshold) {
        spec.success_reward
    } else {
        spec.living_cost
    };
    base - shaping_penalty(&spec.shaping, input.gripper_pos - input.desired_goal)
}

/// Wire form of [`RewardSpec`]: every field optional so that kind-specific
/// fields can be checked against the selected kind.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRewardSpec {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    living_cost: Option<f64>,
    #[serde(default)]
    success_reward: Option<f64>,
    #[serde(default)]
    success_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    penalties: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alignment_tolerance: Option<f64>,
}

impl TryFrom<RawRewardSpec> for RewardSpec {
    type Error = Error;

    fn try_from(raw: RawRewardSpec) -> Result<Self> {
        let kind: RewardKind = raw
            .kind
            .as_deref()
            .ok_or_else(|| Error::Config("reward.kind is required".into()))?
            .parse()?;
        let mut spec = RewardSpec::new(kind);
        let stray = |field: &str| {
            Error::Config(format!(
                "reward.{field} does not apply to reward.kind `{kind}`"
            ))
        };
        if raw.w_z.is_some() && kind != RewardKind::PrioritizedZ {
            return Err(stray("w_z"));
        }
        if raw.weights.is_some() && kind != RewardKind::PrioritizedXyz {
            return Err(stray("weights"));
        }
        if raw.penalties.is_some() && kind != RewardKind::Manhattan {
            return Err(stray("penalties"));
        }
        if raw.alignment_tolerance.is_some() && kind != RewardKind::Manhattan {
            return Err(stray("alignment_tolerance"));
        }
        spec.living_cost = raw.living_cost.unwrap_or(spec.living_cost);
        spec.success_reward = raw.success_reward.unwrap_or(spec.success_reward);
        spec.success_threshold = raw.success_threshold.unwrap_or(spec.success_threshold);
        match &mut spec.shaping {
            Shaping::Vanilla => {}
            Shaping::PrioritizedZ { w_z } => *w_z = raw.w_z.unwrap_or(*w_z),
            Shaping::PrioritizedXyz { weights } => {
                if let Some(w) = raw.weights {
                    *weights = Vec3::from_slice(&w);
                }
            }
            Shaping::Manhattan {
                penalties,
                tolerance,
            } => {
                if let Some(p) = raw.penalties {
                    *penalties = Vec3::from_slice(&p);
                }
                *tolerance = raw.alignment_tolerance.unwrap_or(*tolerance);
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl From<RewardSpec> for RawRewardSpec {
    fn from(spec: RewardSpec) -> Self {
        let mut raw = RawRewardSpec {
            kind: Some(spec.kind().name().to_string()),
            living_cost: Some(spec.living_cost),
            success_reward: Some(spec.success_reward),
            success_threshold: Some(spec.success_threshold),
            ..RawRewardSpec::default()
        };
        match spec.shaping {
            Shaping::Vanilla => {}
            Shaping::PrioritizedZ { w_z } => raw.w_z = Some(w_z),
            Shaping::PrioritizedXyz { weights } => raw.weights = Some(weights.to_array()),
            Shaping::Manhattan {
                penalties,
                tolerance,
            } => {
                raw.penalties = Some(penalties.to_array());
                raw.alignment_tolerance = Some(tolerance);
            }
        }
        raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ORIGIN: Vec3 = Vec3::ZERO;

    /// Gripper at `delta` from a goal at the origin, object far from the goal.
    fn offset(delta: Vec3) -> RewardInput {
        RewardInput {
            gripper_pos: delta,
            achieved_goal: Vec3::new(0.5, 0.5, 0.5),
            desired_goal: ORIGIN,
        }
    }

    #[test]
    fn success_is_inclusive_l2() {
        assert!(is_success(ORIGIN, ORIGIN, 0.05));
        assert!(is_success(ORIGIN, Vec3::new(0.03, 0.04, 0.0), 0.05));
        assert!(is_success(ORIGIN, Vec3::new(0.5, 0.0, 0.0), 0.5));
        assert!(!is_success(ORIGIN, Vec3::new(0.0, 0.0, 0.0501), 0.05));
    }

    #[test]
    fn vanilla_is_sparse() {
        let spec = RewardSpec::new(RewardKind::Vanilla);
        assert_eq!(compute(&spec, &offset(Vec3::new(0.3, 0.3, 0.3))), -1.0);
        let hit = RewardInput {
            achieved_goal: ORIGIN,
            ..offset(Vec3::new(0.3, 0.3, 0.3))
        };
        assert_eq!(compute(&spec, &hit), 1.0);
    }

    #[test]
    fn prioritized_xyz_hand_value() {
        let spec = RewardSpec::new(RewardKind::PrioritizedXyz);
        let r = compute(&spec, &offset(Vec3::new(0.1, 0.1, 0.1)));
        assert!((r + 2.6).abs() < 1e-12, "{r}");
    }

    #[test]
    fn manhattan_hand_value() {
        let spec = RewardSpec::new(RewardKind::Manhattan);
        let r = compute(&spec, &offset(Vec3::new(0.1, 0.005, 0.2)));
        assert_eq!(r, -7.0);
    }

    #[test]
    fn prioritized_z_ignores_horizontal_offset() {
        let spec = RewardSpec::new(RewardKind::PrioritizedZ);
        assert_eq!(compute(&spec, &offset(Vec3::new(0.3, 0.3, 0.0))), -1.0);
    }

    #[test]
    fn parse_requires_kind() {
        let err = serde_json::from_str::<RewardSpec>(r#"{"living_cost": -1}"#).unwrap_err();
        assert!(err.to_string().contains("reward.kind"), "{err}");
    }

    #[test]
    fn parse_rejects_stray_and_unknown_fields() {
        let err = serde_json::from_str::<RewardSpec>(r#"{"kind":"vanilla","w_z":3}"#)
            .unwrap_err();
        assert!(err.to_string().contains("reward.w_z"), "{err}");
        assert!(serde_json::from_str::<RewardSpec>(r#"{"kind":"manhattan","penalty":[1,1,1]}"#)
            .is_err());
        assert!(serde_json::from_str::<RewardSpec>(r#"{"kind":"manhattan","alignment_tolerance":0}"#)
            .is_err());
    }

    #[test]
    fn parse_fills_defaults_and_overrides() {
        let spec: RewardSpec =
            serde_json::from_str(r#"{"kind":"prioritized_xyz","weights":[100,50,10]}"#).unwrap();
        assert_eq!(
            spec.shaping,
            Shaping::PrioritizedXyz {
                weights: Vec3::new(100.0, 50.0, 10.0)
            }
        );
        assert_eq!(spec.living_cost, -1.0);
        for kind in RewardKind::ALL {
            let spec = RewardSpec::new(kind);
            let text = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<RewardSpec>(&text).unwrap(), spec);
        }
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn kind() -> impl Strategy<Value = RewardKind> {
        prop::sample::select(RewardKind::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn bounded_by_success_reward(k in kind(), g in vec3(), a in vec3(), d in vec3()) {
            let spec = RewardSpec::new(k);
            let input = RewardInput { gripper_pos: g, achieved_goal: a, desired_goal: d };
            let r = compute(&spec, &input);
            prop_assert!(r <= spec.success_reward);
            if r == spec.success_reward {
                prop_assert!(is_success(a, d, spec.success_threshold));
                prop_assert_eq!(shaping_penalty(&spec.shaping, g - d), 0.0);
            }
        }

        #[test]
        fn shaping_is_translation_invariant(k in kind(), g in vec3(), d in vec3(), t in vec3()) {
            let spec = RewardSpec::new(k);
            let a = shaping_penalty(&spec.shaping, g - d);
            let b = shaping_penalty(&spec.shaping, (g + t) - (d + t));
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn manhattan_takes_few_values(g in vec3(), d in vec3()) {
            let spec = RewardSpec::new(RewardKind::Manhattan);
            let p = shaping_penalty(&spec.shaping, g - d);
            let allowed = [0.0, 5.0, 2.5, 1.0, 7.5, 6.0, 3.5, 8.5];
            prop_assert!(allowed.contains(&p), "{}", p);
        }

        #[test]
        fn prioritized_xyz_is_lipschitz_per_axis(g in vec3(), d in vec3(), delta in -0.5..0.5f64) {
            let spec = RewardSpec::new(RewardKind::PrioritizedXyz);
            let base = offset(g - d);
            let moved = offset(g - d + Vec3::new(delta, 0.0, 0.0));
            let change = (compute(&spec, &base) - compute(&spec, &moved)).abs();
            prop_assert!(change <= 10.0 * delta.abs() + 1e-12);
        }
    }
}
