use super::{EnvError, Pose, Position, Result, Viewpoint};

pub fn euclidean_distance(a: &Position, b: &Position) -> f64 {
    let (dx, dy, dz) = (b.x - a.x, b.y - a.y, b.z - a.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Absolute heading, in `[0, 360)`, of the horizontal direction from `from` to `to`.
pub fn heading_towards(from: &Position, to: &Position) -> f64 {
    let h = (to.x - from.x).atan2(to.y - from.y).to_degrees();
    let h = h.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Wraps an angle difference into `(-180, 180]`.
pub fn wrap_heading(delta: f64) -> f64 {
    let d = delta.rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Heading and elevation change needed to face a target from the current pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    /// Signed heading change in `(-180, 180]`; positive is clockwise (to the right).
    pub heading: f64,
    /// Elevation change; positive is up.
    pub elevation: f64,
}

pub fn relative_pose(from: &Viewpoint, pose: &Pose, to: &Viewpoint) -> Result<RelativePose> {
    let (a, b) = (&from.position, &to.position);
    if a == b {
        return Err(EnvError::DegeneratePositions(
            from.id.clone(),
            to.id.clone(),
        ));
    }
    let horizontal = (b.x - a.x).hypot(b.y - a.y);
    let vertical = b.z - a.z;
    let heading = if horizontal == 0.0 {
        // Straight up or down: no heading change is needed.
        0.0
    } else {
        wrap_heading(heading_towards(a, b) - pose.heading)
    };
    let elevation = vertical.atan2(horizontal).to_degrees() - pose.elevation;
    Ok(RelativePose { heading, elevation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vp(id: &str, x: f64, y: f64, z: f64) -> Viewpoint {
        Viewpoint {
            id: id.into(),
            position: Position::new(x, y, z),
        }
    }

    #[test]
    fn three_four_five() {
        let d = euclidean_distance(&Position::new(0.0, 0.0, 0.0), &Position::new(3.0, 4.0, 0.0));
        assert_eq!(d, 5.0);
        let p = Position::new(1.5, -2.0, 7.0);
        assert_eq!(euclidean_distance(&p, &p), 0.0);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_heading(180.0), 180.0);
        assert_eq!(wrap_heading(-180.0), 180.0);
        assert_eq!(wrap_heading(190.0), -170.0);
        assert_eq!(wrap_heading(-190.0), 170.0);
        assert_eq!(wrap_heading(720.0), 0.0);
    }

    #[test]
    fn dead_ahead_and_level() {
        let a = vp("a", 0.0, 0.0, 0.0);
        let b = vp("b", 0.0, 5.0, 0.0);
        let rel = relative_pose(&a, &Pose::default(), &b).unwrap();
        assert_eq!(rel.heading, 0.0);
        assert_eq!(rel.elevation, 0.0);
    }

    #[test]
    fn clockwise_is_positive() {
        let a = vp("a", 0.0, 0.0, 0.0);
        let east = vp("e", 2.0, 0.0, 0.0);
        let west = vp("w", -2.0, 0.0, 0.0);
        let pose = Pose::default();
        assert!((relative_pose(&a, &pose, &east).unwrap().heading - 90.0).abs() < 1e-12);
        assert!((relative_pose(&a, &pose, &west).unwrap().heading + 90.0).abs() < 1e-12);
        let facing_east = Pose::new(90.0, 0.0);
        let behind = relative_pose(&a, &facing_east, &west).unwrap();
        assert_eq!(behind.heading, 180.0);
    }

    #[test]
    fn identical_positions_rejected() {
        let a = vp("a", 1.0, 1.0, 1.0);
        let b = vp("b", 1.0, 1.0, 1.0);
        assert!(matches!(
            relative_pose(&a, &Pose::default(), &b),
            Err(EnvError::DegeneratePositions(..))
        ));
    }
}
