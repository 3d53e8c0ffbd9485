use serde::{Deserialize, Serialize};

use super::SceneError;

/// Rigid-translation trajectories. Every kind has zero displacement at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum Trajectory {
    Linear {
        velocity: [f64; 3],
    },
    /// Circle of `radius` in the plane spanned by the orthonormal `axis_u`,
    /// `axis_v`, starting at angle `phase` and turning at `angular_velocity` rad/s.
    Arc {
        radius: f64,
        angular_velocity: f64,
        phase: f64,
        axis_u: [f64; 3],
        axis_v: [f64; 3],
    },
    /// Piecewise-linear offsets; `times[0] = 0`, `offsets[0] = 0`. Held constant
    /// after the last keyframe.
    Keyframes {
        times: Vec<f64>,
        offsets: Vec<[f64; 3]>,
    },
}

impl Trajectory {
    pub fn displacement(&self, t: f64) -> [f64; 3] {
        match self {
            Trajectory::Linear { velocity } => velocity.map(|v| v * t),
            Trajectory::Arc {
                radius,
                angular_velocity,
                phase,
                axis_u,
                axis_v,
            } => {
                let a = phase + angular_velocity * t;
                let cu = radius * (a.cos() - phase.cos());
                let cv = radius * (a.sin() - phase.sin());
                std::array::from_fn(|k| cu * axis_u[k] + cv * axis_v[k])
            }
            Trajectory::Keyframes { times, offsets } => {
                let seg = keyframe_segment(times, t);
                match seg {
                    None => *offsets.last().unwrap(),
                    Some(j) => {
                        let s = (t - times[j]) / (times[j + 1] - times[j]);
                        std::array::from_fn(|k| {
                            offsets[j][k] + s * (offsets[j + 1][k] - offsets[j][k])
                        })
                    }
                }
            }
        }
    }

    /// Analytic time derivative of [`Trajectory::displacement`]. At a keyframe
    /// the outgoing segment's slope is used.
    pub fn velocity(&self, t: f64) -> [f64; 3] {
        match self {
            Trajectory::Linear { velocity } => *velocity,
            Trajectory::Arc {
                radius,
                angular_velocity,
                phase,
                axis_u,
                axis_v,
            } => {
                let a = phase + angular_velocity * t;
                let du = -radius * angular_velocity * a.sin();
                let dv = radius * angular_velocity * a.cos();
                std::array::from_fn(|k| du * axis_u[k] + dv * axis_v[k])
            }
            Trajectory::Keyframes { times, offsets } => match keyframe_segment(times, t) {
                None => [0.0; 3],
                Some(j) => {
                    let dt = times[j + 1] - times[j];
                    std::array::from_fn(|k| (offsets[j + 1][k] - offsets[j][k]) / dt)
                }
            },
        }
    }

    fn validate(&self, path: &str) -> Result<(), SceneError> {
        match self {
            Trajectory::Linear { velocity } => {
                if !velocity.iter().all(|v| v.is_finite()) {
                    return Err(SceneError::schema(
                        format!("{path}.params.velocity"),
                        "non-finite",
                    ));
                }
            }
            Trajectory::Arc {
                radius,
                angular_velocity,
                axis_u,
                axis_v,
                ..
            } => {
                if !(radius.is_finite() && *radius >= 0.0 && angular_velocity.is_finite()) {
                    return Err(SceneError::schema(
                        format!("{path}.params"),
                        "bad radius or angular velocity",
                    ));
                }
                let dot: f64 = (0..3).map(|k| axis_u[k] * axis_v[k]).sum();
                let nu: f64 = axis_u.iter().map(|v| v * v).sum();
                let nv: f64 = axis_v.iter().map(|v| v * v).sum();
                if dot.abs() > 1e-9 || (nu - 1.0).abs() > 1e-9 || (nv - 1.0).abs() > 1e-9 {
                    return Err(SceneError::schema(
                        format!("{path}.params"),
                        "arc axes must be orthonormal",
                    ));
                }
            }
            Trajectory::Keyframes { times, offsets } => {
                if times.len() < 2 || times.len() != offsets.len() {
                    return Err(SceneError::schema(
                        format!("{path}.params"),
                        "need at least two keyframes with matching offsets",
                    ));
                }
                if times[0] != 0.0 || offsets[0] != [0.0; 3] {
                    return Err(SceneError::schema(
                        format!("{path}.params"),
                        "first keyframe must be t=0 with zero offset",
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(SceneError::schema(
                        format!("{path}.params.times"),
                        "must be strictly increasing",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn keyframe_segment(times: &[f64], t: f64) -> Option<usize> {
    if t >= *times.last().unwrap() {
        return None;
    }
    // Index of the last keyframe with time <= t.
    let j = times.partition_point(|&k| k <= t);
    Some(j.saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionObject {
    pub indices: Vec<usize>,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub objects: Vec<MotionObject>,
    pub t_max: f64,
}

impl MotionScript {
    pub fn validate(&self, gaussian_count: usize) -> Result<(), SceneError> {
        if !(self.t_max > 0.0) {
            return Err(SceneError::schema("motion.t_max", "must be positive"));
        }
        let mut seen = vec![false; gaussian_count];
        for (o, object) in self.objects.iter().enumerate() {
            for &i in &object.indices {
                if i >= gaussian_count {
                    return Err(SceneError::schema(
                        format!("motion.objects[{o}].indices"),
                        format!("index {i} out of range"),
                    ));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(SceneError::schema(
                        format!("motion.objects[{o}].indices"),
                        format!("index {i} assigned to more than one object"),
                    ));
                }
            }
            object
                .trajectory
                .validate(&format!("motion.objects[{o}]"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc() -> Trajectory {
        Trajectory::Arc {
            radius: 0.3,
            angular_velocity: 2.5,
            phase: 0.4,
            axis_u: [1.0, 0.0, 0.0],
            axis_v: [0.0, 0.6, 0.8],
        }
    }

    #[test]
    fn arc_velocity_matches_central_difference() {
        let traj = arc();
        let h = 1e-5;
        for &t in &[0.0, 0.13, 0.5, 0.97] {
            let v = traj.velocity(t);
            let p = traj.displacement(t + h);
            let m = traj.displacement(t - h);
            let fd: [f64; 3] = std::array::from_fn(|k| (p[k] - m[k]) / (2.0 * h));
            let err = (0..3).map(|k| (fd[k] - v[k]).powi(2)).sum::<f64>().sqrt();
            let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!(err / norm < 1e-6, "t={t}: relative error {}", err / norm);
        }
    }

    #[test]
    fn every_kind_starts_at_zero() {
        let kf = Trajectory::Keyframes {
            times: vec![0.0, 0.5, 1.0],
            offsets: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
        };
        for traj in [
            arc(),
            kf,
            Trajectory::Linear {
                velocity: [1.0, 2.0, 3.0],
            },
        ] {
            assert_eq!(traj.displacement(0.0), [0.0; 3]);
        }
    }

    #[test]
    fn keyframes_interpolate_and_hold() {
        let kf = Trajectory::Keyframes {
            times: vec![0.0, 0.5, 1.0],
            offsets: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
        };
        assert_eq!(kf.displacement(0.25), [0.5, 0.0, 0.0]);
        assert_eq!(kf.velocity(0.25), [2.0, 0.0, 0.0]);
        assert_eq!(kf.velocity(0.5), [-2.0, 4.0, 0.0]);
        assert_eq!(kf.displacement(2.0), [0.0, 2.0, 0.0]);
        assert_eq!(kf.velocity(2.0), [0.0; 3]);
    }

    #[test]
    fn overlapping_objects_are_rejected() {
        let script = MotionScript {
            objects: vec![
                MotionObject {
                    indices: vec![0, 1],
                    trajectory: Trajectory::Linear { velocity: [0.0; 3] },
                },
                MotionObject {
                    indices: vec![1],
                    trajectory: Trajectory::Linear { velocity: [0.0; 3] },
                },
            ],
            t_max: 1.0,
        };
        assert!(script.validate(3).is_err());
    }

    #[test]
    fn json_shape_uses_kind_and_params() {
        let obj = MotionObject {
            indices: vec![2],
            trajectory: Trajectory::Linear {
                velocity: [1.0, 0.0, 0.0],
            },
        };
        let v = serde_json::to_value(&obj).unwrap();
        assert_eq!(v["kind"], "linear");
        assert_eq!(v["params"]["velocity"][0], 1.0);
        assert_eq!(v["indices"][0], 2);
        let back: MotionObject = serde_json::from_value(v).unwrap();
        assert_eq!(back, obj);
    }
}
