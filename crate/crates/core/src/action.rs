//! Structured decisions and motor commands parsed from free-text model
//! output, redundancy suppression, and the reflex obstacle override.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::LidarScan;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no leading [0]/[1] tag in {0:?}")]
    MissingTag(String),
    #[error("no motor command found in {0:?}")]
    NoCommand(String),
    #[error("bad magnitude {0:?}: must be a positive number")]
    BadMagnitude(String),
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("stop takes no magnitude")]
    StopWithMagnitude,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    #[serde(rename = "move")]
    pub moving: bool,
    pub reason: String,
}

impl Decision {
    pub fn new(moving: bool, reason: impl Into<String>) -> Self {
        Self {
            moving,
            reason: reason.into(),
        }
    }

    pub fn stop() -> Self {
        Self::new(false, "")
    }

    pub fn flag(&self) -> u8 {
        u8::from(self.moving)
    }

    pub fn render(&self) -> String {
        if self.reason.is_empty() {
            format!("[{}]", self.flag())
        } else {
            format!("[{}] {}", self.flag(), self.reason)
        }
    }
}

/// Reads a leading `[0]` / `[1]` tag (after whitespace).
pub fn parse_decision(text: &str) -> Result<Decision, ParseError> {
    let t = text.trim_start();
    let moving = if t.starts_with("[1]") {
        true
    } else if t.starts_with("[0]") {
        false
    } else {
        return Err(ParseError::MissingTag(text.to_owned()));
    };
    Ok(Decision::new(moving, t[3..].trim()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Forward => "forward",
            Verb::Backward => "backward",
            Verb::TurnLeft => "turn_left",
            Verb::TurnRight => "turn_right",
            Verb::Stop => "stop",
        }
    }

    fn from_word(w: &str) -> Option<Self> {
        Some(match w.to_ascii_lowercase().as_str() {
            "forward" => Verb::Forward,
            "backward" => Verb::Backward,
            "turn_left" => Verb::TurnLeft,
            "turn_right" => Verb::TurnRight,
            "stop" => Verb::Stop,
            _ => return None,
        })
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Verb::TurnLeft | Verb::TurnRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerbCommand {
    pub verb: Verb,
    /// Meters for translation, degrees for rotation.
    pub magnitude: Option<f64>,
}

impl VerbCommand {
    pub fn stop() -> Self {
        Self {
            verb: Verb::Stop,
            magnitude: None,
        }
    }
}

impl fmt::Display for VerbCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.magnitude {
            Some(m) => write!(f, "CMD: {} {}", self.verb.as_str(), m),
            None => write!(f, "CMD: {}", self.verb.as_str()),
        }
    }
}

/// Default magnitudes used when the keyword fallback fires.
pub const DEFAULT_TRANSLATION_M: f64 = 0.3;
pub const DEFAULT_ROTATION_DEG: f64 = 45.0;

// Keyword table for the fallback scan, in priority order.
const KEYWORDS: &[(Verb, &[&str])] = &[
    (Verb::Stop, &["stop", "halt", "stay", "remain", "wait"]),
    (Verb::Backward, &["backward", "back up", "reverse", "retreat"]),
    (Verb::TurnLeft, &["turn left", "turn_left", "rotate left", "left"]),
    (Verb::TurnRight, &["turn right", "turn_right", "rotate right", "right"]),
    (Verb::Forward, &["forward", "ahead", "advance", "go", "move", "approach"]),
];

fn contains_word(haystack: &str, needle: &str) -> bool {
    haystack.match_indices(needle).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

fn parse_cmd_line(rest: &str) -> Result<VerbCommand, ParseError> {
    let mut words = rest.split_whitespace();
    let verb_word = words.next().ok_or_else(|| ParseError::NoCommand(rest.to_owned()))?;
    let verb = Verb::from_word(verb_word.trim_end_matches(['.', ',', ';']))
        .ok_or_else(|| ParseError::UnknownVerb(verb_word.to_owned()))?;
    let magnitude = match words.next() {
        None => None,
        Some(m) => {
            let m = m.trim_end_matches(['.', ',', ';']);
            let m = m
                .trim_end_matches("deg")
                .trim_end_matches('m')
                .trim_end_matches('°');
            let value: f64 = m.parse().map_err(|_| ParseError::BadMagnitude(m.to_owned()))?;
            if !(value > 0.0) || !value.is_finite() {
                return Err(ParseError::BadMagnitude(m.to_owned()));
            }
            Some(value)
        }
    };
    if verb == Verb::Stop && magnitude.is_some() {
        return Err(ParseError::StopWithMagnitude);
    }
    Ok(VerbCommand { verb, magnitude })
}

/// Parses `CMD: <verb> [<magnitude>]`, falling back to a keyword scan.
pub fn parse_motor_command(text: &str) -> Result<VerbCommand, ParseError> {
    if let Some(idx) = text.find("CMD:") {
        let rest = text[idx + 4..].lines().next().unwrap_or("");
        return parse_cmd_line(rest);
    }
    let lower = text.to_lowercase();
    for (verb, words) in KEYWORDS {
        if words.iter().any(|w| contains_word(&lower, w)) {
            let magnitude = match verb {
                Verb::Stop => None,
                v if v.is_rotation() => Some(DEFAULT_ROTATION_DEG),
                _ => Some(DEFAULT_TRANSLATION_M),
            };
            return Ok(VerbCommand {
                verb: *verb,
                magnitude,
            });
        }
    }
    Err(ParseError::NoCommand(text.to_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub left: f64,
    pub right: f64,
    pub duration: f64,
}

impl MotorCommand {
    pub const MIN_DURATION: f64 = 0.1;

    pub fn stop() -> Self {
        Self {
            left: 0.0,
            right: 0.0,
            duration: Self::MIN_DURATION,
        }
    }

    pub fn is_stop(&self) -> bool {
        self.left == 0.0 && self.right == 0.0
    }

    /// Positive mean track speed.
    pub fn has_forward_motion(&self) -> bool {
        self.left + self.right > 0.0
    }

    pub fn clamped(self, params: &DriveParams) -> Self {
        let v = params.v_max;
        let clamp = |x: f64| if x.is_finite() { x.clamp(-v, v) } else { 0.0 };
        let duration = if self.duration.is_finite() {
            self.duration.clamp(Self::MIN_DURATION, params.max_duration)
        } else {
            Self::MIN_DURATION
        };
        Self {
            left: clamp(self.left),
            right: clamp(self.right),
            duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveParams {
    /// Commanded track speed (m/s).
    pub speed: f64,
    pub v_max: f64,
    pub track_width: f64,
    pub max_duration: f64,
}

impl Default for DriveParams {
    fn default() -> Self {
        Self {
            speed: 0.3,
            v_max: 0.3,
            track_width: 0.4,
            max_duration: 5.0,
        }
    }
}

/// Converts a verb command into track speeds and a duration. The result
/// is always clamped to the drive limits.
pub fn to_motor(vc: &VerbCommand, params: &DriveParams) -> MotorCommand {
    let v = params.speed.abs().min(params.v_max);
    let cmd = match vc.verb {
        Verb::Stop => return MotorCommand::stop(),
        Verb::Forward | Verb::Backward => {
            let sign = if vc.verb == Verb::Forward { 1.0 } else { -1.0 };
            let dist = vc.magnitude.unwrap_or(DEFAULT_TRANSLATION_M);
            MotorCommand {
                left: sign * v,
                right: sign * v,
                duration: if v > 0.0 { dist / v } else { MotorCommand::MIN_DURATION },
            }
        }
        Verb::TurnLeft | Verb::TurnRight => {
            let sign = if vc.verb == Verb::TurnLeft { 1.0 } else { -1.0 };
            let angle = vc.magnitude.unwrap_or(DEFAULT_ROTATION_DEG).to_radians();
            let omega = 2.0 * v / params.track_width;
            MotorCommand {
                left: -sign * v,
                right: sign * v,
                duration: if omega > 0.0 { angle / omega } else { MotorCommand::MIN_DURATION },
            }
        }
    };
    cmd.clamped(params)
}

/// Edge-triggered emission with a periodic refresh.
#[derive(Debug, Clone)]
pub struct Suppressor {
    refresh_s: f64,
    last: Option<(Decision, f64)>,
}

impl Suppressor {
    pub const DEFAULT_REFRESH_S: f64 = 30.0;

    pub fn new(refresh_s: f64) -> Self {
        Self {
            refresh_s,
            last: None,
        }
    }

    /// Returns whether `new` should be emitted at time `now_s`, recording it
    /// as the last emission when it is.
    pub fn offer(&mut self, new: &Decision, now_s: f64) -> bool {
        let emit = suppress_redundant(new, self.last.as_ref().map(|(d, _)| d))
            || self
                .last
                .as_ref()
                .is_some_and(|(_, t)| now_s - t >= self.refresh_s);
        if emit {
            self.last = Some((new.clone(), now_s));
        }
        emit
    }

    pub fn last_emitted(&self) -> Option<&Decision> {
        self.last.as_ref().map(|(d, _)| d)
    }
}

impl Default for Suppressor {
    fn default() -> Self {
        Self::new(Self::DEFAULT_REFRESH_S)
    }
}

/// Emit iff there was no prior emission or the move flag changed.
/// Time-based refresh lives in [`Suppressor`].
pub fn suppress_redundant(new: &Decision, last: Option<&Decision>) -> bool {
    last.is_none_or(|l| l.moving != new.moving)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflexParams {
    pub enabled: bool,
    pub d_safe: f64,
    /// Half-width of the guarded sector, degrees either side of heading.
    pub sector_deg: f64,
    pub turn_speed: f64,
    /// Forward speed is projected this far ahead (seconds) before the
    /// range check, so one more step cannot carry the robot inside `d_safe`.
    pub lookahead_s: f64,
}

impl Default for ReflexParams {
    fn default() -> Self {
        Self {
            enabled: true,
            d_safe: 0.5,
            sector_deg: 90.0,
            turn_speed: 0.15,
            lookahead_s: 0.1,
        }
    }
}

/// Signed bearing of ray `i` in (-π, π].
fn ray_bearing(i: usize, n: usize) -> f64 {
    let a = i as f64 * 2.0 * PI / n as f64;
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Minimum range inside ±`sector_deg` of the heading.
pub fn front_min_range(scan: &LidarScan, sector_deg: f64) -> f64 {
    let n = scan.ranges.len();
    let limit = sector_deg.to_radians() + 1e-9;
    scan.ranges
        .iter()
        .enumerate()
        .filter(|(i, _)| ray_bearing(*i, n).abs() <= limit)
        .map(|(_, r)| *r)
        .fold(f64::INFINITY, f64::min)
}

/// Mean clearance on the left (bearing in (0, π)) and right (bearing in (-π, 0)).
pub fn side_clearance(scan: &LidarScan) -> (f64, f64) {
    let n = scan.ranges.len();
    let (mut l, mut nl, mut r, mut nr) = (0.0, 0usize, 0.0, 0usize);
    for (i, range) in scan.ranges.iter().enumerate() {
        let b = ray_bearing(i, n);
        if b > 1e-9 && b < PI - 1e-9 {
            l += range;
            nl += 1;
        } else if b < -1e-9 {
            r += range;
            nr += 1;
        }
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    (mean(l, nl), mean(r, nr))
}

/// Replaces forward motion with an in-place turn toward the clearer side
/// when the next `lookahead_s` of travel would bring something inside the
/// guarded sector closer than `d_safe`.
pub fn reflex_avoid(cmd: &MotorCommand, scan: &LidarScan, params: &ReflexParams) -> MotorCommand {
    if !params.enabled || !cmd.has_forward_motion() || scan.ranges.is_empty() {
        return *cmd;
    }
    let travel = ((cmd.left + cmd.right) / 2.0).max(0.0) * params.lookahead_s.max(0.0);
    if front_min_range(scan, params.sector_deg) - travel >= params.d_safe {
        return *cmd;
    }
    let (left, right) = side_clearance(scan);
    let s = params.turn_speed.abs();
    let turn_left = left >= right;
    MotorCommand {
        left: if turn_left { -s } else { s },
        right: if turn_left { s } else { -s },
        duration: cmd.duration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn decisions_from_logged_examples() {
        let d = parse_decision("[1] I should move to absorb more moisture in this humidity.").unwrap();
        assert!(d.moving);
        assert_eq!(d.reason, "I should move to absorb more moisture in this humidity.");
        let d = parse_decision(
            "[0] Reason: The conversation is still ongoing, and I do not feel the need to move yet.",
        )
        .unwrap();
        assert!(!d.moving);
        assert!(d.reason.starts_with("Reason: The conversation"));
        assert!(parse_decision("  [1]").unwrap().moving);
        assert!(matches!(parse_decision("let's go"), Err(ParseError::MissingTag(_))));
        assert!(parse_decision("I think [1]").is_err());
    }

    #[test]
    fn motor_grammar() {
        assert_eq!(
            parse_motor_command("CMD: forward 0.5").unwrap(),
            VerbCommand {
                verb: Verb::Forward,
                magnitude: Some(0.5)
            }
        );
        assert_eq!(
            parse_motor_command("I will stop here. CMD: stop").unwrap(),
            VerbCommand::stop()
        );
        assert_eq!(
            parse_motor_command("CMD: turn_left 90").unwrap().magnitude,
            Some(90.0)
        );
        assert!(matches!(
            parse_motor_command("CMD: forward fast"),
            Err(ParseError::BadMagnitude(_))
        ));
        assert!(matches!(
            parse_motor_command("CMD: forward -1"),
            Err(ParseError::BadMagnitude(_))
        ));
        assert!(matches!(
            parse_motor_command("CMD: forward 0"),
            Err(ParseError::BadMagnitude(_))
        ));
        assert!(matches!(
            parse_motor_command("CMD: stop 3"),
            Err(ParseError::StopWithMagnitude)
        ));
    }

    #[test]
    fn keyword_fallback_priority() {
        assert_eq!(
            parse_motor_command("moving ahead slowly").unwrap(),
            VerbCommand {
                verb: Verb::Forward,
                magnitude: Some(DEFAULT_TRANSLATION_M)
            }
        );
        // stop outranks forward
        assert_eq!(
            parse_motor_command("Go forward, then stop.").unwrap().verb,
            Verb::Stop
        );
        assert_eq!(parse_motor_command("please back up").unwrap().verb, Verb::Backward);
        assert_eq!(parse_motor_command("turn left a bit").unwrap().verb, Verb::TurnLeft);
        // "stopping" is not the word "stop"; "ahead" still matches
        assert_eq!(parse_motor_command("nonstopping ahead").unwrap().verb, Verb::Forward);
        assert!(matches!(
            parse_motor_command("hmm"),
            Err(ParseError::NoCommand(_))
        ));
    }

    #[test]
    fn to_motor_examples() {
        let p = DriveParams::default();
        let m = to_motor(
            &VerbCommand {
                verb: Verb::Forward,
                magnitude: Some(0.3),
            },
            &p,
        );
        assert_eq!((m.left, m.right), (0.3, 0.3));
        assert_relative_eq!(m.duration, 1.0, epsilon = 1e-12);

        let p = DriveParams {
            speed: 0.1,
            track_width: 0.4,
            ..DriveParams::default()
        };
        let m = to_motor(
            &VerbCommand {
                verb: Verb::TurnLeft,
                magnitude: Some(90.0),
            },
            &p,
        );
        assert_eq!((m.left, m.right), (-0.1, 0.1));
        assert_relative_eq!((m.right - m.left) / 0.4, 0.5, epsilon = 1e-12);
        assert_relative_eq!(m.duration, (PI / 2.0) / 0.5, epsilon = 1e-12);

        let m = to_motor(&VerbCommand::stop(), &p);
        assert_eq!(m, MotorCommand::stop());
    }

    #[test]
    fn suppression_rules() {
        let stop = Decision::new(false, "");
        let go = Decision::new(true, "");
        assert!(suppress_redundant(&stop, None));
        assert!(!suppress_redundant(&stop, Some(&stop)));
        assert!(suppress_redundant(&go, Some(&stop)));

        let mut s = Suppressor::default();
        assert!(s.offer(&stop, 0.0));
        assert!(!s.offer(&stop, 10.0));
        assert!(s.offer(&stop, 30.0));
        assert!(s.offer(&go, 31.0));
        assert!(!s.offer(&go, 32.0));
    }

    fn scan_with(f: impl Fn(f64) -> f64) -> LidarScan {
        let n = 72;
        LidarScan {
            ranges: (0..n).map(|i| f(ray_bearing(i, n))).collect(),
            max_range: 10.0,
        }
    }

    #[test]
    fn reflex_turns_toward_clearer_side() {
        // wall close in front, open on the left, cramped on the right
        let scan = scan_with(|b| {
            if b.abs() < 0.3 {
                0.2
            } else if b > 0.0 {
                5.0
            } else {
                1.0
            }
        });
        let fwd = MotorCommand {
            left: 0.3,
            right: 0.3,
            duration: 1.0,
        };
        let out = reflex_avoid(&fwd, &scan, &ReflexParams::default());
        assert!(out.left < 0.0 && out.right > 0.0, "{out:?}");
        assert_eq!(out.left, -out.right);
    }

    #[test]
    fn reflex_passes_through_when_clear_or_stopped() {
        let far = scan_with(|_| 3.0);
        let fwd = MotorCommand {
            left: 0.3,
            right: 0.3,
            duration: 1.0,
        };
        assert_eq!(reflex_avoid(&fwd, &far, &ReflexParams::default()), fwd);
        let near = scan_with(|_| 0.1);
        let stop = MotorCommand::stop();
        assert_eq!(reflex_avoid(&stop, &near, &ReflexParams::default()), stop);
        let back = MotorCommand {
            left: -0.3,
            right: -0.3,
            duration: 1.0,
        };
        assert_eq!(reflex_avoid(&back, &near, &ReflexParams::default()), back);
    }

    proptest! {
        #[test]
        fn render_parse_identity(moving in any::<bool>(), reason in "[A-Za-z0-9 ,.']{0,40}") {
            let d = Decision::new(moving, reason.trim());
            prop_assert_eq!(parse_decision(&d.render()).unwrap(), d);
        }

        #[test]
        fn motor_output_is_always_clamped(text in ".{0,60}", speed in -5.0f64..5.0, width in 0.05f64..2.0) {
            let p = DriveParams { speed, track_width: width, ..DriveParams::default() };
            let vc = parse_motor_command(&text).unwrap_or_else(|_| VerbCommand::stop());
            let m = to_motor(&vc, &p);
            prop_assert!(m.left.abs() <= p.v_max && m.right.abs() <= p.v_max);
            prop_assert!(m.duration > 0.0 && m.duration <= p.max_duration);
        }

        #[test]
        fn large_magnitudes_still_clamp(mag in 0.001f64..1e6, rot in any::<bool>()) {
            let verb = if rot { Verb::TurnRight } else { Verb::Backward };
            let m = to_motor(&VerbCommand { verb, magnitude: Some(mag) }, &DriveParams::default());
            prop_assert!(m.duration <= 5.0);
        }
    }
}
